#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>

#include "emotrans/config.hpp"
#include "emotrans/llm_gateway.hpp"
#include "emotrans/util.hpp"

namespace emotrans {

enum class Stage {
  kRetrieve,
  kSynth,
  kAnalyze,
  kTrainprep,
  kRoundtrip,
  kRatePack,
  kRateAgg,
  kRwiBuild,
  kRwiEval,
  kReport,
};

std::string to_string(Stage stage);
Stage stage_from_string(std::string_view s);

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitInput = 3,
  kExitPartial = 4,
  kExitFatal = 5,
};

struct RunOptions {
  std::optional<std::uint64_t> seed;  // overrides the stage's configured seed
  bool mock = false;
  bool resume = false;
  bool force = false;   // ignore an up-to-date manifest
  bool repair = false;  // synth: re-attempt recorded failures
  /// rwi-build: subset of {"fs", "psm", "psa"}; empty = all.
  std::set<std::string> rwi_datasets;
  /// rwi-eval: run the neutralize and/or evaluate steps.
  bool rwi_neutralize = true;
  bool rwi_evaluate = true;
  /// Injected transport (tests); takes precedence over --mock and HTTP.
  std::shared_ptr<Transport> transport;
};

struct StageResult {
  int exit_code = kExitOk;
  bool skipped = false;  // already complete
  ordered_json manifest;
  std::size_t network_calls = 0;
  std::string summary;   // human-readable text output, when the stage has one
};

/// Path of a stage's manifest inside the work directory.
std::filesystem::path stage_manifest_path(const PipelineConfig& config, Stage stage);

/// Runs one stage. Throws ConfigError / InputError before side effects for
/// bad configuration or missing inputs; transport failures inside a stage
/// become recorded failures and exit code 4.
StageResult run_stage(Stage stage, PipelineConfig config, const RunOptions& options);

/// Maps an exception escaping run_stage onto an exit code.
int exit_code_for(const std::exception& e);

}  // namespace emotrans
