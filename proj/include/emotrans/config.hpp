#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "emotrans/llm_gateway.hpp"
#include "emotrans/retrieval.hpp"
#include "emotrans/trainprep.hpp"

namespace emotrans {

struct PathsConfig {
  std::filesystem::path workdir = "run";
  std::filesystem::path queries;            // queries.jsonl (answers needed for rwi)
  std::filesystem::path passages;           // retrieval corpus
  std::filesystem::path synth_passages;     // optional; default is the retrieved contexts
  std::filesystem::path templates;          // one .tmpl per emotion
  std::filesystem::path reader_prompt;      // optional; built-in prompt when empty
  std::filesystem::path emotional_texts;    // CSV text,emotion_label[,id]
  std::filesystem::path variant_sets;       // prepared sarcastic rewrites
  std::filesystem::path ratings_dir;        // returned rating CSVs
  std::filesystem::path query_embeddings;   // optional precomputed
  std::filesystem::path passage_embeddings; // optional precomputed

  bool operator==(const PathsConfig&) const = default;
};

struct RolesConfig {
  std::vector<std::string> generators;  // synthesis pool, in assignment order
  std::string translator_zeroshot;
  std::string translator_finetuned;
  std::string tagger;
  std::vector<std::string> readers;

  bool operator==(const RolesConfig&) const = default;
};

struct SeedsConfig {
  std::uint64_t synth = 1;
  std::uint64_t trainprep = 13;
  std::uint64_t roundtrip = 7;
  std::uint64_t rating = 11;
  std::uint64_t rwi = 5;

  bool operator==(const SeedsConfig&) const = default;
};

struct PipelineConfig {
  std::vector<ModelConfig> models;
  RolesConfig roles;
  EmbeddingEndpoint embedding;
  PathsConfig paths;
  SeedsConfig seeds;
  double alpha = 0.5;
  MixtureSpec mixture;
  std::size_t retrieve_k = 200;
  std::size_t context_k = 10;
  std::size_t checkpoint_every = 1000;
  std::size_t sample_size = 100;
  std::size_t roundtrip_per_emotion = 150;
  std::size_t rating_per_emotion = 150;
  bool tag_conditioned = false;
  bool lenient = false;
  std::size_t workers = 0;  // 0 = hardware concurrency / gateway capacity

  /// Directory relative paths are resolved against; not serialized.
  std::filesystem::path base_dir = ".";

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  std::filesystem::path work(const std::filesystem::path& rel) const;

  bool operator==(const PipelineConfig& o) const;
};

/// INI with sections [model.<id>], [roles], [embedding], [paths], [seeds],
/// [analysis], [mixture], [retrieval], [synth], [evaluation], [run].
/// Throws ConfigError on unreadable files, bad values or failed validation.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");
std::string format_config(const PipelineConfig& config);
void save_config(const std::filesystem::path& path, const PipelineConfig& config);

/// Field and cross-reference checks; paths are checked per stage.
void validate(const PipelineConfig& config);

/// SHA-256 of format_config().
std::string config_hash(const PipelineConfig& config);

}  // namespace emotrans
