#include "emotrans/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <set>
#include <sstream>

#include "emotrans/error.hpp"
#include "emotrans/util.hpp"

namespace emotrans {

namespace pt = boost::property_tree;

namespace {

constexpr std::string_view kModelPrefix = "model.";

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    auto t = std::string(trim(item));
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& i : items) {
    if (!out.empty()) out += ",";
    out += i;
  }
  return out;
}

// Typed lookup inside one section; keys never contain '.', so plain paths work.
class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  template <typename T>
  T get(const std::string& key, T fallback) const {
    if (!tree_) return fallback;
    auto node = tree_->get_child_optional(pt::ptree::path_type(key, '\0'));
    if (!node) return fallback;
    try {
      return node->get_value<T>();
    } catch (const pt::ptree_bad_data&) {
      throw ConfigError("[" + name_ + "] " + key + ": cannot parse '" + node->data() + "'");
    }
  }

  std::string str(const std::string& key, const std::string& fallback = "") const {
    return get<std::string>(key, fallback);
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) const {
    auto s = str(key, "");
    if (s.empty()) return fallback;
    try {
      std::size_t used = 0;
      auto v = std::stoull(s, &used);
      if (used != s.size() || s.front() == '-') throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("[" + name_ + "] " + key + ": not an unsigned integer '" + s + "'");
    }
  }

 private:
  const pt::ptree* tree_;
  std::string name_;
};

Section section(const pt::ptree& root, const std::string& name) {
  auto child = root.get_child_optional(pt::ptree::path_type(name, '\0'));
  return Section(child ? &*child : nullptr, name);
}

void put(pt::ptree& sec, const std::string& key, const std::string& value) {
  sec.put(pt::ptree::path_type(key, '\0'), value);
}

template <typename T>
std::string num(T v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

std::filesystem::path PipelineConfig::resolve(const std::filesystem::path& p) const {
  if (p.empty() || p.is_absolute()) return p;
  return base_dir / p;
}

std::filesystem::path PipelineConfig::work(const std::filesystem::path& rel) const {
  return resolve(paths.workdir) / rel;
}

bool PipelineConfig::operator==(const PipelineConfig& o) const {
  return format_config(*this) == format_config(o);
}

PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  pt::ptree root;
  std::istringstream in(text);
  try {
    pt::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  static const std::set<std::string> known = {"roles",     "embedding", "paths",
                                              "seeds",     "analysis",  "mixture",
                                              "retrieval", "synth",     "evaluation",
                                              "run"};
  PipelineConfig c;
  c.base_dir = base_dir;
  for (const auto& [name, sec] : root) {
    if (name.rfind(kModelPrefix, 0) == 0) {
      Section s(&sec, name);
      ModelConfig m;
      m.model_id = name.substr(kModelPrefix.size());
      m.base_url = s.str("base_url");
      m.api_key_env = s.str("api_key_env");
      m.max_in_flight = s.get<int>("max_in_flight", m.max_in_flight);
      m.timeout = std::chrono::milliseconds(s.get<long>("timeout_ms", m.timeout.count()));
      m.max_retries = s.get<int>("max_retries", m.max_retries);
      m.temperature = s.get<double>("temperature", m.temperature);
      m.max_tokens = s.get<int>("max_tokens", m.max_tokens);
      m.requests_per_minute = s.get<int>("requests_per_minute", m.requests_per_minute);
      if (!s.str("api_key").empty()) {
        throw ConfigError("[" + name + "] api_key: secrets go in the environment, use api_key_env");
      }
      c.models.push_back(std::move(m));
    } else if (!known.contains(name)) {
      throw ConfigError("config: unknown section [" + name + "]");
    }
  }

  auto roles = section(root, "roles");
  c.roles.generators = split_list(roles.str("generators"));
  c.roles.translator_zeroshot = roles.str("translator_zeroshot");
  c.roles.translator_finetuned = roles.str("translator_finetuned");
  c.roles.tagger = roles.str("tagger");
  c.roles.readers = split_list(roles.str("readers"));

  auto emb = section(root, "embedding");
  c.embedding.base_url = emb.str("base_url");
  c.embedding.model = emb.str("model");
  c.embedding.api_key_env = emb.str("api_key_env");
  c.embedding.batch_size = emb.u64("batch_size", c.embedding.batch_size);
  c.embedding.dim = emb.u64("dim", c.embedding.dim);
  c.embedding.timeout = std::chrono::milliseconds(emb.u64("timeout_ms", c.embedding.timeout.count()));
  c.embedding.max_retries = emb.get<int>("max_retries", c.embedding.max_retries);

  auto paths = section(root, "paths");
  c.paths.workdir = paths.str("workdir", c.paths.workdir.string());
  c.paths.queries = paths.str("queries");
  c.paths.passages = paths.str("passages");
  c.paths.synth_passages = paths.str("synth_passages");
  c.paths.templates = paths.str("templates");
  c.paths.reader_prompt = paths.str("reader_prompt");
  c.paths.emotional_texts = paths.str("emotional_texts");
  c.paths.variant_sets = paths.str("variant_sets");
  c.paths.ratings_dir = paths.str("ratings_dir");
  c.paths.query_embeddings = paths.str("query_embeddings");
  c.paths.passage_embeddings = paths.str("passage_embeddings");

  auto seeds = section(root, "seeds");
  c.seeds.synth = seeds.u64("synth", c.seeds.synth);
  c.seeds.trainprep = seeds.u64("trainprep", c.seeds.trainprep);
  c.seeds.roundtrip = seeds.u64("roundtrip", c.seeds.roundtrip);
  c.seeds.rating = seeds.u64("rating", c.seeds.rating);
  c.seeds.rwi = seeds.u64("rwi", c.seeds.rwi);

  c.alpha = section(root, "analysis").get<double>("alpha", c.alpha);

  auto mix = section(root, "mixture");
  c.mixture.n_groups = mix.u64("n_groups", c.mixture.n_groups);
  c.mixture.versions_per_group = mix.u64("versions_per_group", c.mixture.versions_per_group);
  c.mixture.self_map_rate = mix.get<double>("self_map_rate", c.mixture.self_map_rate);
  c.mixture.seed = c.seeds.trainprep;

  auto ret = section(root, "retrieval");
  c.retrieve_k = ret.u64("retrieve_k", c.retrieve_k);
  c.context_k = ret.u64("context_k", c.context_k);

  auto syn = section(root, "synth");
  c.checkpoint_every = syn.u64("checkpoint_every", c.checkpoint_every);
  c.sample_size = syn.u64("sample_size", c.sample_size);

  auto ev = section(root, "evaluation");
  c.roundtrip_per_emotion = ev.u64("roundtrip_per_emotion", c.roundtrip_per_emotion);
  c.rating_per_emotion = ev.u64("rating_per_emotion", c.rating_per_emotion);
  c.tag_conditioned = ev.get<bool>("tag_conditioned", c.tag_conditioned);
  c.lenient = ev.get<bool>("lenient", c.lenient);

  c.workers = section(root, "run").u64("workers", c.workers);

  validate(c);
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, path.parent_path().empty() ? "." : path.parent_path());
}

std::string format_config(const PipelineConfig& c) {
  pt::ptree root;
  for (const auto& m : c.models) {
    pt::ptree s;
    put(s, "base_url", m.base_url);
    put(s, "api_key_env", m.api_key_env);
    put(s, "max_in_flight", num(m.max_in_flight));
    put(s, "timeout_ms", num(m.timeout.count()));
    put(s, "max_retries", num(m.max_retries));
    put(s, "temperature", num(m.temperature));
    put(s, "max_tokens", num(m.max_tokens));
    put(s, "requests_per_minute", num(m.requests_per_minute));
    root.push_back({std::string(kModelPrefix) + m.model_id, s});
  }
  auto add = [&](const std::string& name, std::vector<std::pair<std::string, std::string>> kv) {
    pt::ptree s;
    for (auto& [k, v] : kv) put(s, k, v);
    root.push_back({name, s});
  };
  add("roles", {{"generators", join_list(c.roles.generators)},
                {"translator_zeroshot", c.roles.translator_zeroshot},
                {"translator_finetuned", c.roles.translator_finetuned},
                {"tagger", c.roles.tagger},
                {"readers", join_list(c.roles.readers)}});
  add("embedding", {{"base_url", c.embedding.base_url},
                    {"model", c.embedding.model},
                    {"api_key_env", c.embedding.api_key_env},
                    {"batch_size", num(c.embedding.batch_size)},
                    {"dim", num(c.embedding.dim)},
                    {"timeout_ms", num(c.embedding.timeout.count())},
                    {"max_retries", num(c.embedding.max_retries)}});
  add("paths", {{"workdir", c.paths.workdir.string()},
                {"queries", c.paths.queries.string()},
                {"passages", c.paths.passages.string()},
                {"synth_passages", c.paths.synth_passages.string()},
                {"templates", c.paths.templates.string()},
                {"reader_prompt", c.paths.reader_prompt.string()},
                {"emotional_texts", c.paths.emotional_texts.string()},
                {"variant_sets", c.paths.variant_sets.string()},
                {"ratings_dir", c.paths.ratings_dir.string()},
                {"query_embeddings", c.paths.query_embeddings.string()},
                {"passage_embeddings", c.paths.passage_embeddings.string()}});
  add("seeds", {{"synth", num(c.seeds.synth)},
                {"trainprep", num(c.seeds.trainprep)},
                {"roundtrip", num(c.seeds.roundtrip)},
                {"rating", num(c.seeds.rating)},
                {"rwi", num(c.seeds.rwi)}});
  add("analysis", {{"alpha", num(c.alpha)}});
  add("mixture", {{"n_groups", num(c.mixture.n_groups)},
                  {"versions_per_group", num(c.mixture.versions_per_group)},
                  {"self_map_rate", num(c.mixture.self_map_rate)}});
  add("retrieval", {{"retrieve_k", num(c.retrieve_k)}, {"context_k", num(c.context_k)}});
  add("synth", {{"checkpoint_every", num(c.checkpoint_every)}, {"sample_size", num(c.sample_size)}});
  add("evaluation", {{"roundtrip_per_emotion", num(c.roundtrip_per_emotion)},
                     {"rating_per_emotion", num(c.rating_per_emotion)},
                     {"tag_conditioned", c.tag_conditioned ? "true" : "false"},
                     {"lenient", c.lenient ? "true" : "false"}});
  add("run", {{"workers", num(c.workers)}});

  std::ostringstream out;
  pt::write_ini(out, root);
  return out.str();
}

void save_config(const std::filesystem::path& path, const PipelineConfig& config) {
  atomic_write(path, format_config(config));
}

void validate(const PipelineConfig& c) {
  ModelPool pool(c.models);  // checks each model and duplicate ids
  auto need = [&](const std::string& role, const std::string& id) {
    if (!id.empty() && !pool.contains(id)) {
      throw ConfigError("[roles] " + role + ": unknown model id '" + id + "'");
    }
  };
  for (const auto& g : c.roles.generators) need("generators", g);
  for (const auto& r : c.roles.readers) need("readers", r);
  need("translator_zeroshot", c.roles.translator_zeroshot);
  need("translator_finetuned", c.roles.translator_finetuned);
  need("tagger", c.roles.tagger);
  if (!(c.alpha > 0)) throw ConfigError("[analysis] alpha must be > 0");
  validate(c.mixture);
  if (c.retrieve_k == 0) throw ConfigError("[retrieval] retrieve_k must be >= 1");
  if (c.context_k == 0 || c.context_k > c.retrieve_k) {
    throw ConfigError("[retrieval] context_k must be in [1, retrieve_k]");
  }
  if (c.checkpoint_every == 0) throw ConfigError("[synth] checkpoint_every must be >= 1");
  if (c.embedding.batch_size == 0) throw ConfigError("[embedding] batch_size must be >= 1");
  if (c.paths.workdir.empty()) throw ConfigError("[paths] workdir must be set");
}

std::string config_hash(const PipelineConfig& config) {
  return sha256_hex(format_config(config));
}

}  // namespace emotrans
