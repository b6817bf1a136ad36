#include "emotrans/synthgen.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>

#include "emotrans/error.hpp"

namespace emotrans {

void validate(const PromptTemplate& tmpl) {
  const auto& p = tmpl.user_pattern;
  auto first = p.find(kPassageSlot);
  if (first == std::string::npos) {
    throw ConfigError("template for '" + tmpl.emotion.name() + "' has no {passage} slot");
  }
  if (p.find(kPassageSlot, first + kPassageSlot.size()) != std::string::npos) {
    throw ConfigError("template for '" + tmpl.emotion.name() + "' has more than one {passage} slot");
  }
  if (tmpl.version < 1) throw ConfigError("template version must be >= 1");
  if (tmpl.emotion.name().empty()) throw ConfigError("template has no emotion");
}

namespace {

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::string current;
  for (char c : text) {
    if (c == '\n') {
      if (!current.empty() && current.back() == '\r') current.pop_back();
      lines.push_back(std::move(current));
      current.clear();
    } else {
      current += c;
    }
  }
  if (!current.empty()) lines.push_back(std::move(current));
  return lines;
}

std::string join_section(const std::vector<std::string>& lines, std::size_t begin, std::size_t end) {
  while (begin < end && trim(lines[begin]).empty()) ++begin;
  while (end > begin && trim(lines[end - 1]).empty()) --end;
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out += '\n';
    out += lines[i];
  }
  return out;
}

}  // namespace

PromptTemplate parse_template(std::string_view text, const std::string& source) {
  auto lines = split_lines(text);
  std::size_t i = 0;
  while (i < lines.size() && trim(lines[i]).empty()) ++i;
  if (i >= lines.size() || trim(lines[i]) != "---") {
    throw ConfigError(source + ": missing front matter");
  }
  PromptTemplate tmpl;
  bool have_emotion = false;
  for (++i; i < lines.size() && trim(lines[i]) != "---"; ++i) {
    auto line = trim(lines[i]);
    if (line.empty() || line.front() == '#') continue;
    auto colon = line.find(':');
    if (colon == std::string_view::npos) throw ConfigError(source + ": bad front matter line");
    auto key = trim(line.substr(0, colon));
    auto value = trim(line.substr(colon + 1));
    if (key == "emotion") {
      tmpl.emotion = Emotion(value);
      have_emotion = true;
    } else if (key == "version") {
      try {
        tmpl.version = std::stoi(std::string(value));
      } catch (const std::exception&) {
        throw ConfigError(source + ": version is not an integer");
      }
    }
  }
  if (i >= lines.size()) throw ConfigError(source + ": unterminated front matter");
  if (!have_emotion) throw ConfigError(source + ": front matter lacks 'emotion'");
  ++i;

  std::size_t system_at = lines.size(), user_at = lines.size();
  for (std::size_t j = i; j < lines.size(); ++j) {
    auto line = trim(lines[j]);
    if (line == "SYSTEM:" && system_at == lines.size() && user_at == lines.size()) system_at = j;
    else if (line == "USER:" && user_at == lines.size()) user_at = j;
  }
  if (user_at == lines.size()) throw ConfigError(source + ": missing USER: section");
  if (system_at != lines.size()) tmpl.system_text = join_section(lines, system_at + 1, user_at);
  tmpl.user_pattern = join_section(lines, user_at + 1, lines.size());
  try {
    validate(tmpl);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return tmpl;
}

std::string format_template(const PromptTemplate& tmpl) {
  std::ostringstream out;
  out << "---\nemotion: " << tmpl.emotion.name() << "\nversion: " << tmpl.version << "\n---\n";
  out << "SYSTEM:\n" << tmpl.system_text << "\nUSER:\n" << tmpl.user_pattern << "\n";
  return out.str();
}

std::map<Emotion, PromptTemplate> load_templates(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw ConfigError("template directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".tmpl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::map<Emotion, PromptTemplate> out;
  for (const auto& f : files) {
    auto tmpl = parse_template(read_file(f), f.filename().string());
    if (!out.emplace(tmpl.emotion, tmpl).second) {
      throw ConfigError("two templates for emotion '" + tmpl.emotion.name() + "'");
    }
  }
  return out;
}

RenderedPrompt render_prompt(const PromptTemplate& tmpl, std::string_view passage) {
  auto slot = tmpl.user_pattern.find(kPassageSlot);
  RenderedPrompt out;
  out.system_prompt = tmpl.system_text;
  out.user_prompt.reserve(tmpl.user_pattern.size() + passage.size());
  out.user_prompt.append(tmpl.user_pattern, 0, slot);
  out.user_prompt.append(passage);
  out.user_prompt.append(tmpl.user_pattern, slot + kPassageSlot.size());
  if (passage.empty()) {
    out.empty_passage = true;
    Log::warn("empty_passage", {{"emotion", tmpl.emotion.name()}});
  }
  return out;
}

std::string clean_generation(std::string_view text, const CleanupRules& rules) {
  std::string out(trim(text));
  for (const auto& pattern : rules.preamble_patterns) {
    std::regex re(pattern, std::regex::ECMAScript | std::regex::icase);
    std::smatch m;
    if (std::regex_search(out, m, re, std::regex_constants::match_continuous)) {
      out = std::string(trim(out.substr(static_cast<std::size_t>(m.length(0)))));
    }
  }
  if (rules.strip_quotes && out.size() >= 2) {
    static const std::pair<std::string_view, std::string_view> pairs[] = {
        {"\"", "\""}, {"'", "'"}, {"\xE2\x80\x9C", "\xE2\x80\x9D"}};
    for (const auto& [open, close] : pairs) {
      if (out.size() >= open.size() + close.size() && out.starts_with(open) && out.ends_with(close)) {
        auto inner = std::string_view(out).substr(open.size(), out.size() - open.size() - close.size());
        // Only strip a single enclosing pair, not quotes belonging to inner text.
        if (inner.find(close) == std::string_view::npos) {
          out = std::string(trim(inner));
          break;
        }
      }
    }
  }
  return out;
}

ordered_json SynthRunManifest::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["pool"] = pool;
  j["template_versions"] = template_versions;
  ordered_json counts_json = ordered_json::object();
  for (const auto& [emotion, by_model] : counts) {
    for (const auto& [model, c] : by_model) {
      counts_json[emotion][model] = {
          {"requested", c.requested}, {"completed", c.completed}, {"failed", c.failed}};
    }
  }
  j["counts"] = counts_json;
  j["failures"] = ordered_json::array();
  for (const auto& f : failures) {
    j["failures"].push_back({{"passage_id", f.passage_id},
                             {"emotion", f.emotion},
                             {"model_id", f.model_id},
                             {"error", f.error}});
  }
  j["raw_variants"] = raw_variants;
  j["unique_texts"] = unique_texts;
  j["gateway_calls"] = gateway_calls;
  j["config_hash"] = config_hash;
  j["complete"] = complete;
  return j;
}

SynthRunManifest SynthRunManifest::from_json(const json& j) {
  SynthRunManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.pool = j.at("pool").get<std::vector<std::string>>();
    m.template_versions = j.at("template_versions").get<std::map<std::string, int>>();
    for (const auto& [emotion, by_model] : j.at("counts").items()) {
      for (const auto& [model, c] : by_model.items()) {
        m.counts[emotion][model] = {c.at("requested").get<std::size_t>(),
                                    c.at("completed").get<std::size_t>(),
                                    c.at("failed").get<std::size_t>()};
      }
    }
    for (const auto& f : j.at("failures")) {
      m.failures.push_back({f.at("passage_id"), f.at("emotion"), f.at("model_id"), f.at("error")});
    }
    m.raw_variants = j.value("raw_variants", std::size_t{0});
    m.unique_texts = j.value("unique_texts", std::size_t{0});
    m.gateway_calls = j.value("gateway_calls", std::size_t{0});
    m.config_hash = j.value("config_hash", "");
    m.complete = j.value("complete", false);
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed synthesis manifest: ") + e.what());
  }
  return m;
}

SynthRunManifest load_manifest(const std::filesystem::path& path) {
  try {
    return SynthRunManifest::from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void save_manifest(const std::filesystem::path& path, const SynthRunManifest& manifest) {
  atomic_write(path, manifest.to_json().dump(2) + "\n");
}

namespace {

// Drops a trailing record cut off by a crash so the file parses again.
void drop_partial_tail(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return;
  std::string content = read_file(path);
  if (content.empty() || content.back() == '\n') return;
  auto last_newline = content.rfind('\n');
  content.resize(last_newline == std::string::npos ? 0 : last_newline + 1);
  atomic_write(path, content);
  Log::warn("synth_truncated_partial_record", {{"path", path.string()}});
}

struct PlannedCell {
  const Passage* passage;
  Emotion emotion;
  std::string model_id;
};

class VariantWriter {
 public:
  VariantWriter(const std::filesystem::path& path, bool append) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw Error("cannot open " + path.string());
  }
  void write(const EmotionVariant& v) {
    out_ << to_record(v).dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
    out_.flush();
    if (!out_) throw Error("variant write failed");
  }

 private:
  std::ofstream out_;
};

// Generates the given cells, updating `manifest` counts in place.
void run_cells(const std::vector<PlannedCell>& cells, Gateway& gateway,
               const std::map<Emotion, PromptTemplate>& templates, const SynthOptions& options,
               bool append, SynthRunManifest& manifest) {
  VariantWriter writer(options.output_path, append);
  std::mutex mu;
  std::size_t since_checkpoint = 0;
  const std::size_t workers = options.workers ? options.workers : gateway.total_capacity();

  parallel_for(cells.size(), workers, [&](std::size_t i) {
    const auto& cell = cells[i];
    auto prompt = render_prompt(templates.at(cell.emotion), cell.passage->text);
    std::optional<EmotionVariant> variant;
    std::string error;
    int attempts = 0;
    try {
      auto response = gateway.generate({cell.model_id, prompt.system_prompt, prompt.user_prompt, {}, {}});
      attempts = response.attempt_count;
      variant = EmotionVariant{cell.passage->id, cell.emotion, cell.model_id,
                               clean_generation(response.text, options.cleanup), rfc3339_now()};
    } catch (const TransportError& e) {
      error = e.what();
    }
    std::lock_guard lock(mu);
    ++manifest.gateway_calls;
    auto& counts = manifest.counts[cell.emotion.name()][cell.model_id];
    if (variant) {
      writer.write(*variant);
      ++counts.completed;
      Log::emit(LogLevel::kDebug, "synth_cell",
                {{"stage", "synth"}, {"passage_id", cell.passage->id},
                 {"emotion", cell.emotion.name()}, {"model_id", cell.model_id},
                 {"attempts", attempts}});
    } else {
      ++counts.failed;
      manifest.failures.push_back({cell.passage->id, cell.emotion.name(), cell.model_id, error});
      Log::warn("synth_cell_failed", {{"stage", "synth"}, {"passage_id", cell.passage->id},
                                      {"emotion", cell.emotion.name()},
                                      {"model_id", cell.model_id}, {"error", error}});
    }
    if (options.checkpoint_every > 0 && ++since_checkpoint >= options.checkpoint_every &&
        !options.manifest_path.empty()) {
      since_checkpoint = 0;
      save_manifest(options.manifest_path, manifest);
    }
  });
}

void finalize(const SynthOptions& options, SynthRunManifest& manifest) {
  auto variants = load_variants(options.output_path);
  std::vector<std::string> texts;
  texts.reserve(variants.size());
  for (const auto& v : variants) texts.push_back(v.text);
  manifest.raw_variants = variants.size();
  manifest.unique_texts = count_unique_texts(texts);
  manifest.complete = manifest.failures.empty();
  if (!options.manifest_path.empty()) save_manifest(options.manifest_path, manifest);
}

void check_inputs(const std::vector<Emotion>& emotions, const Gateway& gateway,
                  const std::map<Emotion, PromptTemplate>& templates) {
  if (gateway.pool().empty()) throw ConfigError("model pool is empty");
  for (const auto& e : emotions) {
    if (!e.in_closed_set() || e.is_neutral()) {
      throw ConfigError("'" + e.name() + "' is not a synthesis tone");
    }
    auto it = templates.find(e);
    if (it == templates.end()) throw ConfigError("no prompt template for emotion '" + e.name() + "'");
    validate(it->second);
  }
}

}  // namespace

SynthRunManifest transform_corpus(const std::vector<Passage>& passages,
                                  const std::vector<Emotion>& emotions, Gateway& gateway,
                                  const std::map<Emotion, PromptTemplate>& templates,
                                  const SynthOptions& options, bool resume) {
  check_inputs(emotions, gateway, templates);

  SynthRunManifest manifest;
  manifest.seed = options.seed;
  manifest.pool = gateway.pool().ids();
  manifest.config_hash = options.config_hash;
  for (const auto& e : emotions) manifest.template_versions[e.name()] = templates.at(e).version;

  std::set<std::pair<std::string, std::string>> done;
  if (resume && std::filesystem::exists(options.output_path)) {
    drop_partial_tail(options.output_path);
    for (const auto& v : load_variants(options.output_path)) done.emplace(v.passage_id, v.emotion.name());
  }

  std::vector<PlannedCell> pending;
  const auto& models = gateway.pool().models();
  for (const auto& p : passages) {
    for (const auto& e : emotions) {
      const auto& model_id = models[assigned_index(options.seed, {p.id, e}, models.size())].model_id;
      auto& counts = manifest.counts[e.name()][model_id];
      ++counts.requested;
      if (done.contains({p.id, e.name()})) {
        ++counts.completed;
      } else {
        pending.push_back({&p, e, model_id});
      }
    }
  }
  Log::info("synth_start", {{"stage", "synth"}, {"cells", passages.size() * emotions.size()},
                            {"pending", pending.size()}, {"resume", resume}});
  run_cells(pending, gateway, templates, options, resume, manifest);
  finalize(options, manifest);
  return manifest;
}

SynthRunManifest repair_failed(const SynthRunManifest& manifest,
                               const std::vector<Passage>& passages, Gateway& gateway,
                               const std::map<Emotion, PromptTemplate>& templates,
                               const SynthOptions& options) {
  std::map<std::string, const Passage*> by_id;
  for (const auto& p : passages) by_id.emplace(p.id, &p);

  SynthRunManifest out = manifest;
  out.failures.clear();
  out.gateway_calls = 0;
  drop_partial_tail(options.output_path);
  std::vector<PlannedCell> cells;
  std::vector<Emotion> emotions;
  for (const auto& f : manifest.failures) {
    auto it = by_id.find(f.passage_id);
    if (it == by_id.end()) throw InputError("failed cell names unknown passage '" + f.passage_id + "'");
    Emotion e = closed_set_emotion(f.emotion);
    emotions.push_back(e);
    auto& counts = out.counts[f.emotion][f.model_id];
    if (counts.failed > 0) --counts.failed;
    cells.push_back({it->second, e, f.model_id});
  }
  check_inputs(emotions, gateway, templates);
  run_cells(cells, gateway, templates, options, true, out);
  finalize(options, out);
  return out;
}

std::vector<EmotionVariant> sample_variants(const std::vector<EmotionVariant>& variants,
                                            std::size_t k, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<EmotionVariant> out;
  for (auto i : rng.sample_indices(variants.size(), k)) out.push_back(variants[i]);
  return out;
}

}  // namespace emotrans
