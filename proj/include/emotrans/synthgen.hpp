#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "emotrans/corpus.hpp"
#include "emotrans/llm_gateway.hpp"

namespace emotrans {

inline constexpr std::string_view kPassageSlot = "{passage}";

/// Per-emotion rewrite prompt. The user pattern holds exactly one
/// `{passage}` slot; `version` is bumped on every edit of the file.
struct PromptTemplate {
  Emotion emotion;
  std::string system_text;
  std::string user_pattern;
  int version = 1;

  bool operator==(const PromptTemplate&) const = default;
};

/// Throws ConfigError unless the slot occurs exactly once and version >= 1.
void validate(const PromptTemplate& tmpl);

/// Template file format:
///
///     ---
///     emotion: sarcasm
///     version: 3
///     ---
///     SYSTEM:
///     <system text>
///     USER:
///     <user pattern with {passage}>
PromptTemplate parse_template(std::string_view text, const std::string& source = "<template>");
std::string format_template(const PromptTemplate& tmpl);
/// Loads every *.tmpl file in a directory, keyed by emotion.
std::map<Emotion, PromptTemplate> load_templates(const std::filesystem::path& dir);

struct RenderedPrompt {
  std::string system_prompt;
  std::string user_prompt;
  bool empty_passage = false;
};

/// Substitutes the passage verbatim at the template's slot. Braces inside
/// the passage are never treated as slots. An empty passage sets
/// `empty_passage` and logs a warning.
RenderedPrompt render_prompt(const PromptTemplate& tmpl, std::string_view passage);

/// Mechanical cleanup of generator output: preamble lines matched by any
/// pattern (case-insensitive, anchored at the start) are removed, then one
/// enclosing pair of matching quotes is stripped.
struct CleanupRules {
  std::vector<std::string> preamble_patterns = {
      R"((here\s+is|here's|sure[,!.]?\s*here\s+is)\b[^\n]*?:\s*)",
      R"((rewritten|transformed)\s+(passage|text|version)\s*:\s*)",
  };
  bool strip_quotes = true;
};

std::string clean_generation(std::string_view text, const CleanupRules& rules);

struct CellCounts {
  std::size_t requested = 0;
  std::size_t completed = 0;
  std::size_t failed = 0;

  bool operator==(const CellCounts&) const = default;
};

struct FailedCell {
  std::string passage_id;
  std::string emotion;
  std::string model_id;
  std::string error;

  bool operator==(const FailedCell&) const = default;
};

/// Checkpointed record of a synthesis run.
struct SynthRunManifest {
  std::uint64_t seed = 0;
  std::vector<std::string> pool;                      // model ids, pool order
  std::map<std::string, int> template_versions;       // emotion -> version
  std::map<std::string, std::map<std::string, CellCounts>> counts;  // emotion -> model -> counts
  std::vector<FailedCell> failures;
  std::size_t raw_variants = 0;    // records in the output file
  std::size_t unique_texts = 0;    // distinct trimmed texts among them
  std::size_t gateway_calls = 0;   // calls made by the most recent session
  std::string config_hash;
  bool complete = false;

  ordered_json to_json() const;
  static SynthRunManifest from_json(const json& j);
  bool operator==(const SynthRunManifest&) const = default;
};

SynthRunManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const SynthRunManifest& manifest);

struct SynthOptions {
  std::uint64_t seed = 0;
  std::filesystem::path output_path;    // variants.jsonl, appended
  std::filesystem::path manifest_path;  // manifest.json, atomically replaced
  std::size_t checkpoint_every = 1000;
  std::size_t workers = 0;              // 0 = gateway capacity
  CleanupRules cleanup;
  std::string config_hash;
};

/// Rewrites every (passage, emotion) cell with the model assign_models picks.
/// Cells already present in the output file are skipped when `resume` is set;
/// otherwise the output is truncated first. Generation failures are recorded
/// in the manifest and the run continues. Throws ConfigError before any call
/// when an emotion lacks a template, is not a synthesis tone, or the pool is empty.
SynthRunManifest transform_corpus(const std::vector<Passage>& passages,
                                  const std::vector<Emotion>& emotions, Gateway& gateway,
                                  const std::map<Emotion, PromptTemplate>& templates,
                                  const SynthOptions& options, bool resume);

/// Re-attempts the failed cells listed in `manifest`, appending successes to
/// the output file, and returns the updated manifest.
SynthRunManifest repair_failed(const SynthRunManifest& manifest,
                               const std::vector<Passage>& passages, Gateway& gateway,
                               const std::map<Emotion, PromptTemplate>& templates,
                               const SynthOptions& options);

/// Seeded uniform sample of variants for manual spot checks.
std::vector<EmotionVariant> sample_variants(const std::vector<EmotionVariant>& variants,
                                            std::size_t k, std::uint64_t seed);

}  // namespace emotrans
