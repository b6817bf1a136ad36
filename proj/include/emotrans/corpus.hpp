#pragma once

#include <array>
#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "emotrans/util.hpp"

namespace emotrans {

/// The eleven tones every passage is rewritten into.
inline constexpr std::array<std::string_view, 11> kTransformEmotionNames = {
    "anger",     "condescension", "disgust", "envy",    "excitement", "fear",
    "happiness", "humor",         "sadness", "sarcasm", "surprise"};

inline constexpr std::string_view kNeutral = "neutral";

/// An emotion label. Labels are stored lowercase and trimmed. Synthesis code
/// accepts only the closed set (the eleven tones plus `neutral`); evaluation
/// code accepts any label, e.g. "relief" from a human-labelled dataset.
class Emotion {
 public:
  Emotion() = default;
  explicit Emotion(std::string_view name);

  const std::string& name() const noexcept { return name_; }
  bool is_neutral() const noexcept { return name_ == kNeutral; }
  bool in_closed_set() const noexcept;

  auto operator<=>(const Emotion&) const = default;

 private:
  std::string name_;
};

/// Parses a closed-set label; throws InputError for anything else.
Emotion closed_set_emotion(std::string_view name);
/// The eleven non-neutral synthesis tones, in canonical order.
const std::vector<Emotion>& transform_emotions();
/// The eleven tones plus neutral (twelve labels).
const std::vector<Emotion>& closed_set_labels();

struct Query {
  std::string id;
  std::string text;
  std::vector<std::string> answers;

  bool operator==(const Query&) const = default;
};

struct Passage {
  std::string id;
  std::string text;
  std::optional<std::string> source_query_id;
  std::optional<int> rank;
  std::optional<double> score;

  bool operator==(const Passage&) const = default;
};

struct EmotionVariant {
  std::string passage_id;
  Emotion emotion;
  std::string model_id;
  std::string text;
  std::string created_at;  // RFC 3339

  bool operator==(const EmotionVariant&) const = default;
};

/// One passage rendered in every tone. `complete` means all eleven
/// non-neutral tones are present.
struct ParallelGroup {
  std::string passage_id;
  Passage original;
  std::map<Emotion, EmotionVariant> variants;
  bool complete = false;

  /// Text for a closed-set label; neutral maps to the original passage.
  const std::string& text_for(const Emotion& emotion) const;

  bool operator==(const ParallelGroup&) const = default;
};

struct MissingEmotions {
  std::string passage_id;
  std::vector<Emotion> missing;

  bool operator==(const MissingEmotions&) const = default;
};

struct GroupAssembly {
  std::vector<ParallelGroup> groups;       // one per passage, input order
  std::vector<MissingEmotions> report;     // incomplete groups only
  std::size_t complete_count = 0;

  bool operator==(const GroupAssembly&) const = default;
};

// JSON record conversion (the on-disk schema).
ordered_json to_record(const Query& q);
ordered_json to_record(const Passage& p);
ordered_json to_record(const EmotionVariant& v);
Query query_from_record(const json& j);
Passage passage_from_record(const json& j);
EmotionVariant variant_from_record(const json& j);

enum class CorpusKind { kQueries, kPassages, kVariants };

using Corpus = std::variant<std::vector<Query>, std::vector<Passage>, std::vector<EmotionVariant>>;

std::vector<Query> load_queries(const std::filesystem::path& path, bool require_answers = false);
std::vector<Passage> load_passages(const std::filesystem::path& path);
std::vector<EmotionVariant> load_variants(const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path, CorpusKind kind);

void save_queries(const std::filesystem::path& path, const std::vector<Query>& queries);
void save_passages(const std::filesystem::path& path, const std::vector<Passage>& passages);
void save_variants(const std::filesystem::path& path, const std::vector<EmotionVariant>& variants);

/// Groups variants under their passages. Throws InputError when a variant
/// names an unknown passage, carries the neutral label, or repeats a
/// (passage, emotion) cell.
GroupAssembly assemble_groups(const std::vector<Passage>& passages,
                              const std::vector<EmotionVariant>& variants);

/// Drops passages whose trimmed text equals an earlier passage's. Keeps first.
std::vector<Passage> dedup_passages(const std::vector<Passage>& passages);

/// Number of distinct texts after trimming leading/trailing whitespace.
std::size_t count_unique_texts(const std::vector<std::string>& texts);

}  // namespace emotrans
