#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "emotrans/corpus.hpp"

namespace emotrans {

/// One supervised translation example. When source == target the output is
/// the input verbatim.
struct FineTuneRecord {
  std::string prompt;
  std::string input_text;
  std::string target_text;
  Emotion source_emotion;
  Emotion target_emotion;
  std::string passage_id;

  bool operator==(const FineTuneRecord&) const = default;
};

struct MixtureSpec {
  std::size_t n_groups = 10000;
  std::size_t versions_per_group = 10;
  double self_map_rate = 0.1;
  std::uint64_t seed = 13;

  bool operator==(const MixtureSpec&) const = default;
};

/// Throws ConfigError on non-positive counts, a rate outside [0,1], or more
/// versions per group than the twelve available renderings.
void validate(const MixtureSpec& spec);

/// Samples spec.n_groups complete groups; for each, draws
/// versions_per_group of its twelve renderings (original as neutral plus the
/// eleven tones) without replacement. Each drawn rendering becomes one
/// record's input. A Bernoulli(self_map_rate) draw decides self-mapping;
/// otherwise the target is uniform over the other eleven labels.
/// Randomness per group is derived from (seed, passage_id), so the result
/// does not depend on group order. Throws InputError when too few complete
/// groups exist.
std::vector<FineTuneRecord> build_training_mixture(const std::vector<ParallelGroup>& groups,
                                                   const MixtureSpec& spec);

struct TrainingManifest {
  std::string base_model = "Llama-3.1-8B-Instruct";
  int lora_rank = 8;
  double learning_rate = 2e-5;
  std::string optimizer = "AdamW";
  int epochs = 5;
  MixtureSpec mixture;
  std::size_t record_count = 0;
};

ordered_json to_json(const TrainingManifest& manifest);

/// Writes one {"prompt","input","output"} line per record plus manifest.json.
/// Throws InputError on empty input and Error on I/O failure.
void export_finetune(const std::vector<FineTuneRecord>& records,
                     const std::filesystem::path& data_path,
                     const std::filesystem::path& manifest_path, TrainingManifest manifest);

struct ExportedExample {
  std::string prompt;
  std::string input;
  std::string output;

  bool operator==(const ExportedExample&) const = default;
};

std::vector<ExportedExample> load_finetune(const std::filesystem::path& data_path);
ExportedExample to_exported(const FineTuneRecord& record);

}  // namespace emotrans
