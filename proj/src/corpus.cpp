#include "emotrans/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_set>

#include "emotrans/error.hpp"

namespace emotrans {

Emotion::Emotion(std::string_view name) : name_(to_lower_ascii(trim(name))) {}

bool Emotion::in_closed_set() const noexcept {
  if (is_neutral()) return true;
  return std::find(kTransformEmotionNames.begin(), kTransformEmotionNames.end(), name_) !=
         kTransformEmotionNames.end();
}

Emotion closed_set_emotion(std::string_view name) {
  Emotion e(name);
  if (!e.in_closed_set()) {
    throw InputError("'" + std::string(name) + "' is not a synthesis emotion");
  }
  return e;
}

const std::vector<Emotion>& transform_emotions() {
  static const std::vector<Emotion> all = [] {
    std::vector<Emotion> v;
    for (auto name : kTransformEmotionNames) v.emplace_back(name);
    return v;
  }();
  return all;
}

const std::vector<Emotion>& closed_set_labels() {
  static const std::vector<Emotion> all = [] {
    std::vector<Emotion> v{Emotion(kNeutral)};
    for (auto name : kTransformEmotionNames) v.emplace_back(name);
    return v;
  }();
  return all;
}

const std::string& ParallelGroup::text_for(const Emotion& emotion) const {
  if (emotion.is_neutral()) return original.text;
  auto it = variants.find(emotion);
  if (it == variants.end()) {
    throw InputError("group " + passage_id + " has no '" + emotion.name() + "' variant");
  }
  return it->second.text;
}

namespace {

std::string require_string(const json& j, const char* key, bool allow_empty = true) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    throw InputError(std::string("field '") + key + "' must be a string");
  }
  std::string value = it->get<std::string>();
  if (!allow_empty && value.empty()) throw InputError(std::string("field '") + key + "' is empty");
  return value;
}

template <typename T>
std::optional<T> optional_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw InputError(std::string("field '") + key + "' has the wrong type");
  }
}

// Rewraps record-level validation errors with file position.
template <typename Fn>
void with_line(const std::filesystem::path& path, std::size_t line, Fn&& fn) {
  try {
    fn();
  } catch (const InputError& e) {
    throw InputError(path.filename().string() + ": " + e.what() + " @ line " + std::to_string(line));
  }
}

template <typename T>
void save_records(const std::filesystem::path& path, const std::vector<T>& items) {
  std::string out;
  for (const auto& item : items) {
    out += to_record(item).dump(-1, ' ', false, json::error_handler_t::strict);
    out += '\n';
  }
  atomic_write(path, out);
}

}  // namespace

ordered_json to_record(const Query& q) {
  ordered_json j;
  j["id"] = q.id;
  j["text"] = q.text;
  j["answers"] = q.answers;
  return j;
}

ordered_json to_record(const Passage& p) {
  ordered_json j;
  j["id"] = p.id;
  j["text"] = p.text;
  j["source_query_id"] = p.source_query_id ? ordered_json(*p.source_query_id) : ordered_json();
  j["rank"] = p.rank ? ordered_json(*p.rank) : ordered_json();
  j["score"] = p.score ? ordered_json(*p.score) : ordered_json();
  return j;
}

ordered_json to_record(const EmotionVariant& v) {
  ordered_json j;
  j["passage_id"] = v.passage_id;
  j["emotion"] = v.emotion.name();
  j["model_id"] = v.model_id;
  j["text"] = v.text;
  j["created_at"] = v.created_at;
  return j;
}

Query query_from_record(const json& j) {
  if (!j.is_object()) throw InputError("record is not an object");
  Query q;
  q.id = require_string(j, "id", false);
  q.text = require_string(j, "text");
  auto it = j.find("answers");
  if (it == j.end() || !it->is_array()) throw InputError("field 'answers' must be an array");
  for (const auto& a : *it) {
    if (!a.is_string()) throw InputError("answers must be strings");
    q.answers.push_back(a.get<std::string>());
  }
  return q;
}

Passage passage_from_record(const json& j) {
  if (!j.is_object()) throw InputError("record is not an object");
  Passage p;
  p.id = require_string(j, "id", false);
  p.text = require_string(j, "text");
  p.source_query_id = optional_field<std::string>(j, "source_query_id");
  p.rank = optional_field<int>(j, "rank");
  p.score = optional_field<double>(j, "score");
  if (p.rank && *p.rank < 1) throw InputError("rank must be >= 1");
  return p;
}

EmotionVariant variant_from_record(const json& j) {
  if (!j.is_object()) throw InputError("record is not an object");
  EmotionVariant v;
  v.passage_id = require_string(j, "passage_id", false);
  v.emotion = closed_set_emotion(require_string(j, "emotion"));
  v.model_id = require_string(j, "model_id", false);
  v.text = require_string(j, "text");
  v.created_at = require_string(j, "created_at");
  if (!is_rfc3339(v.created_at)) {
    throw InputError("created_at '" + v.created_at + "' is not RFC 3339");
  }
  return v;
}

std::vector<Query> load_queries(const std::filesystem::path& path, bool require_answers) {
  std::vector<Query> out;
  std::unordered_set<std::string> seen;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    with_line(path, line, [&] {
      Query q = query_from_record(j);
      if (require_answers && q.answers.empty()) {
        throw InputError("query '" + q.id + "' has no answers");
      }
      if (!seen.insert(q.id).second) throw InputError("duplicate id '" + q.id + "'");
      out.push_back(std::move(q));
    });
  });
  return out;
}

std::vector<Passage> load_passages(const std::filesystem::path& path) {
  std::vector<Passage> out;
  std::unordered_set<std::string> seen;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    with_line(path, line, [&] {
      Passage p = passage_from_record(j);
      if (!seen.insert(p.id).second) throw InputError("duplicate id '" + p.id + "'");
      out.push_back(std::move(p));
    });
  });
  return out;
}

std::vector<EmotionVariant> load_variants(const std::filesystem::path& path) {
  std::vector<EmotionVariant> out;
  std::set<std::pair<std::string, std::string>> seen;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    with_line(path, line, [&] {
      EmotionVariant v = variant_from_record(j);
      if (!seen.emplace(v.passage_id, v.emotion.name()).second) {
        throw InputError("duplicate id '" + v.passage_id + "/" + v.emotion.name() + "'");
      }
      out.push_back(std::move(v));
    });
  });
  return out;
}

Corpus load_corpus(const std::filesystem::path& path, CorpusKind kind) {
  switch (kind) {
    case CorpusKind::kQueries: return load_queries(path);
    case CorpusKind::kPassages: return load_passages(path);
    case CorpusKind::kVariants: return load_variants(path);
  }
  throw InputError("unknown corpus kind");
}

void save_queries(const std::filesystem::path& path, const std::vector<Query>& queries) {
  save_records(path, queries);
}

void save_passages(const std::filesystem::path& path, const std::vector<Passage>& passages) {
  save_records(path, passages);
}

void save_variants(const std::filesystem::path& path, const std::vector<EmotionVariant>& variants) {
  save_records(path, variants);
}

GroupAssembly assemble_groups(const std::vector<Passage>& passages,
                              const std::vector<EmotionVariant>& variants) {
  GroupAssembly out;
  std::map<std::string, std::size_t> index;
  for (const auto& p : passages) {
    if (!index.emplace(p.id, out.groups.size()).second) {
      throw InputError("duplicate passage id '" + p.id + "'");
    }
    ParallelGroup g;
    g.passage_id = p.id;
    g.original = p;
    out.groups.push_back(std::move(g));
  }
  for (const auto& v : variants) {
    auto it = index.find(v.passage_id);
    if (it == index.end()) {
      throw InputError("variant references unknown passage id '" + v.passage_id + "'");
    }
    if (v.emotion.is_neutral()) {
      throw InputError("variant for '" + v.passage_id + "' carries the neutral label");
    }
    auto& group = out.groups[it->second];
    if (!group.variants.emplace(v.emotion, v).second) {
      throw InputError("duplicate variant '" + v.passage_id + "/" + v.emotion.name() + "'");
    }
  }
  for (auto& g : out.groups) {
    MissingEmotions missing{g.passage_id, {}};
    for (const auto& e : transform_emotions()) {
      if (!g.variants.contains(e)) missing.missing.push_back(e);
    }
    g.complete = missing.missing.empty() && g.variants.size() == kTransformEmotionNames.size();
    if (g.complete) {
      ++out.complete_count;
    } else {
      out.report.push_back(std::move(missing));
    }
  }
  return out;
}

std::vector<Passage> dedup_passages(const std::vector<Passage>& passages) {
  std::vector<Passage> out;
  std::unordered_set<std::string_view> seen;
  for (const auto& p : passages) {
    if (seen.insert(trim(p.text)).second) out.push_back(p);
  }
  return out;
}

std::size_t count_unique_texts(const std::vector<std::string>& texts) {
  std::unordered_set<std::string_view> seen;
  for (const auto& t : texts) seen.insert(trim(t));
  return seen.size();
}

}  // namespace emotrans
