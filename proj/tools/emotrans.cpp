#include <iostream>

#include "CLI11.hpp"
#include "emotrans/config.hpp"
#include "emotrans/error.hpp"
#include "emotrans/pipeline.hpp"

using namespace emotrans;

namespace {

struct Flags {
  std::string config = "emotrans.ini";
  std::optional<std::uint64_t> seed;
  bool mock = false;
  bool resume = false;
  bool force = false;
  bool repair = false;
  std::optional<double> alpha;
  std::optional<std::size_t> workers;
  std::string workdir;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config,--endpoint-config", f.config, "pipeline config file (INI)");
  cmd->add_option("--seed", f.seed, "override the stage seed");
  cmd->add_flag("--mock", f.mock, "in-process mock backend; no network traffic");
  cmd->add_flag("--resume", f.resume, "continue an interrupted run");
  cmd->add_flag("--force", f.force, "rerun even if the stage is up to date");
  cmd->add_option("--workers", f.workers, "worker threads");
  cmd->add_option("--workdir", f.workdir, "override [paths] workdir");
  cmd->add_flag("-q,--quiet", f.quiet, "only log warnings and errors");
}

int run(Stage stage, const Flags& f, RunOptions options) {
  if (f.quiet) Log::set_min_level(LogLevel::kWarn);
  auto config = load_config(f.config);
  if (f.alpha) config.alpha = *f.alpha;
  if (f.workers) config.workers = *f.workers;
  if (!f.workdir.empty()) config.paths.workdir = f.workdir;
  options.seed = f.seed;
  options.mock = f.mock;
  options.resume = f.resume;
  options.force = f.force;
  options.repair = f.repair;
  auto result = run_stage(stage, std::move(config), options);
  std::cout << result.summary;
  if (result.exit_code == kExitPartial) {
    std::cerr << to_string(stage) << ": finished with failures; see the manifest and log\n";
  }
  return result.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emotion-parallel corpus and Reading-with-Intent pipeline"};
  app.require_subcommand(1);
  Flags f;
  std::optional<Stage> stage;
  RunOptions options;

  auto stage_cmd = [&](const std::string& name, Stage s, const std::string& help) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, f);
    cmd->callback([&, s] { stage = s; });
    return cmd;
  };
  stage_cmd("retrieve", Stage::kRetrieve, "embed queries and passages, store top-k hits");
  auto* synth = stage_cmd("synth", Stage::kSynth, "rewrite passages into every emotion");
  synth->add_flag("--repair", f.repair, "re-attempt failed cells of the last run");
  auto* repair = stage_cmd("repair", Stage::kSynth, "re-attempt failed synthesis cells");
  repair->callback([&] {
    stage = Stage::kSynth;
    f.repair = true;
  });
  auto* analyze = stage_cmd("analyze", Stage::kAnalyze, "n-gram KL divergence and length statistics");
  analyze->add_option("--alpha", f.alpha, "additive smoothing constant");
  stage_cmd("trainprep", Stage::kTrainprep, "export the translator fine-tuning mixture");
  stage_cmd("roundtrip", Stage::kRoundtrip, "round-trip translation and BLEU");
  stage_cmd("rate-pack", Stage::kRatePack, "export human rating tasks");
  stage_cmd("rate-agg", Stage::kRateAgg, "aggregate returned ratings by majority vote");
  stage_cmd("rwi-build", Stage::kRwiBuild, "build NQ-FS, NQ-PSM and NQ-PSA contexts");
  stage_cmd("rwi-eval", Stage::kRwiEval, "neutralize contexts and score readers");
  stage_cmd("report", Stage::kReport, "collect tables from finished stages");

  auto* rwi = app.add_subcommand("rwi", "Reading-with-Intent steps");
  rwi->require_subcommand(1);
  auto rwi_cmd = [&](const std::string& name, const std::string& help, auto&& setup) {
    auto* cmd = rwi->add_subcommand(name, help);
    add_common(cmd, f);
    cmd->callback(setup);
  };
  rwi_cmd("build-fs", "fully sarcastic contexts", [&] {
    stage = Stage::kRwiBuild;
    options.rwi_datasets = {"fs"};
  });
  rwi_cmd("build-psm", "partially sarcastic, rule-placed contexts", [&] {
    stage = Stage::kRwiBuild;
    options.rwi_datasets = {"psm"};
  });
  rwi_cmd("build-psa", "partially sarcastic, retrieval-placed contexts", [&] {
    stage = Stage::kRwiBuild;
    options.rwi_datasets = {"psa"};
  });
  rwi_cmd("neutralize", "tag and neutralize contexts", [&] {
    stage = Stage::kRwiEval;
    options.rwi_evaluate = false;
  });
  rwi_cmd("evaluate", "score readers on built or neutralized contexts", [&] {
    stage = Stage::kRwiEval;
    options.rwi_neutralize = false;
  });
  rwi_cmd("report", "render the results table", [&] { stage = Stage::kReport; });

  auto* check = app.add_subcommand("check-config", "load and validate a config, print its hash");
  add_common(check, f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (check->parsed()) {
      auto config = load_config(f.config);
      std::cout << config_hash(config) << "\n";
      return kExitOk;
    }
    return run(*stage, f, options);
  } catch (const std::exception& e) {
    int code = exit_code_for(e);
    Log::error("stage_failed", {{"error", e.what()}, {"exit_code", code}});
    std::cerr << "error: " << e.what() << "\n";
    return code;
  }
}
