#include "emotrans/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "emotrans/analysis.hpp"
#include "emotrans/corpus.hpp"
#include "emotrans/error.hpp"
#include "emotrans/evalsuite.hpp"
#include "emotrans/mock_backend.hpp"
#include "emotrans/retrieval.hpp"
#include "emotrans/rwi_bench.hpp"
#include "emotrans/synthgen.hpp"
#include "emotrans/trainprep.hpp"

namespace emotrans {

namespace fs = std::filesystem;

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::kRetrieve: return "retrieve";
    case Stage::kSynth: return "synth";
    case Stage::kAnalyze: return "analyze";
    case Stage::kTrainprep: return "trainprep";
    case Stage::kRoundtrip: return "roundtrip";
    case Stage::kRatePack: return "rate-pack";
    case Stage::kRateAgg: return "rate-agg";
    case Stage::kRwiBuild: return "rwi-build";
    case Stage::kRwiEval: return "rwi-eval";
    case Stage::kReport: return "report";
  }
  return "";
}

Stage stage_from_string(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(Stage::kReport); ++i) {
    auto stage = static_cast<Stage>(i);
    if (to_string(stage) == s) return stage;
  }
  throw ConfigError("unknown stage '" + std::string(s) + "'");
}

fs::path stage_manifest_path(const PipelineConfig& config, Stage stage) {
  return config.work("manifests") / (to_string(stage) + ".json");
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const InputError*>(&e)) return kExitInput;
  return kExitFatal;
}

namespace {

std::string path_key(const fs::path& p) { return fs::weakly_canonical(p).generic_string(); }

void require_inputs(const std::vector<fs::path>& paths) {
  std::string missing;
  for (const auto& p : paths) {
    if (p.empty() || !fs::exists(p)) {
      if (!missing.empty()) missing += ", ";
      missing += p.empty() ? std::string("<unset path>") : p.string();
    }
  }
  if (!missing.empty()) throw InputError("missing input artifacts: " + missing);
}

// Records input/output digests and writes the stage manifest.
class Tracker {
 public:
  Tracker(const PipelineConfig& config, Stage stage, std::optional<std::uint64_t> seed, bool mock)
      : config_(config), stage_(stage), seed_(seed), mock_(mock), started_(rfc3339_now()) {
    load_upstream();
    auto own = stage_manifest_path(config, stage);
    if (fs::exists(own)) {
      try {
        previous_ = json::parse(read_file(own));
      } catch (const json::exception& e) {
        throw InputError(own.string() + ": unreadable manifest: " + e.what());
      }
    }
  }

  void input(const fs::path& p) {
    auto key = path_key(p);
    auto digest = file_sha256(p);
    auto up = upstream_.find(key);
    if (up != upstream_.end() && up->second.first != digest) {
      throw InputError("digest mismatch for " + p.string() + ": it no longer matches the output of stage '" +
                       up->second.second + "'");
    }
    inputs_[key] = digest;
    if (fs::exists(ids_path_for(p))) input_sidecar(ids_path_for(p));
  }

  void input_dir(const fs::path& dir, std::string_view extension) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == extension) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) inputs_[path_key(f)] = file_sha256(f);
  }

  void output(const fs::path& p) {
    outputs_[path_key(p)] = file_sha256(p);
    if (fs::exists(ids_path_for(p))) outputs_[path_key(ids_path_for(p))] = file_sha256(ids_path_for(p));
  }

  ordered_json& counts() { return counts_; }

  bool has_previous() const { return !previous_.is_null(); }

  /// Prior manifest finished with the same config, seed and inputs, and its
  /// outputs are untouched.
  bool up_to_date() const {
    if (!has_previous()) return false;
    if (previous_.value("status", "") != "complete") return false;
    if (previous_.value("config_hash", "") != config_hash(config_)) return false;
    if (previous_.value("seed", json()) != seed_json()) return false;
    if (previous_.value("inputs", json::object()) != json(inputs_)) return false;
    const json outputs = previous_.value("outputs", json::object());
    for (const auto& [path, digest] : outputs.items()) {
      if (!fs::exists(path) || file_sha256(path) != digest.get<std::string>()) return false;
    }
    return true;
  }

  /// A resumed run must see the inputs the interrupted run saw.
  void check_resume() const {
    if (!has_previous()) return;
    auto before = previous_.value("inputs", json::object());
    if (before != json(inputs_)) {
      throw InputError("cannot resume " + to_string(stage_) + ": inputs changed since the previous run");
    }
    if (previous_.value("config_hash", "") != config_hash(config_)) {
      throw InputError("cannot resume " + to_string(stage_) + ": configuration changed since the previous run");
    }
  }

  const json& previous() const { return previous_; }

  ordered_json finish(const std::string& status, std::size_t network_calls) {
    ordered_json m;
    m["stage"] = to_string(stage_);
    m["status"] = status;
    m["config_hash"] = config_hash(config_);
    m["seed"] = seed_json();
    m["mock"] = mock_;
    m["started_at"] = started_;
    m["finished_at"] = rfc3339_now();
    m["network_calls"] = network_calls;
    m["inputs"] = ordered_json(inputs_);
    m["outputs"] = ordered_json(outputs_);
    m["counts"] = counts_;
    atomic_write(stage_manifest_path(config_, stage_), m.dump(2) + "\n");
    return m;
  }

 private:
  json seed_json() const { return seed_ ? json(*seed_) : json(); }

  void input_sidecar(const fs::path& p) { inputs_[path_key(p)] = file_sha256(p); }

  void load_upstream() {
    auto dir = config_.work("manifests");
    if (!fs::exists(dir)) return;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() != ".json" || e.path().stem() == to_string(stage_)) continue;
      json m;
      try {
        m = json::parse(read_file(e.path()));
      } catch (const json::exception&) {
        continue;
      }
      const json outputs = m.value("outputs", json::object());
      for (const auto& [path, digest] : outputs.items()) {
        upstream_[path] = {digest.get<std::string>(), m.value("stage", "")};
      }
    }
  }

  const PipelineConfig& config_;
  Stage stage_;
  std::optional<std::uint64_t> seed_;
  bool mock_;
  std::string started_;
  json previous_;
  std::map<std::string, std::pair<std::string, std::string>> upstream_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
  ordered_json counts_ = ordered_json::object();
};

struct Context {
  PipelineConfig config;
  RunOptions options;
  std::shared_ptr<Transport> transport;
  std::optional<std::uint64_t> seed;

  std::size_t workers() const {
    if (config.workers > 0) return config.workers;
    return std::max(1u, std::thread::hardware_concurrency());
  }

  std::shared_ptr<Transport> transport_or_make() {
    if (transport) return transport;
    if (options.transport) {
      transport = options.transport;
    } else if (options.mock) {
      auto m = std::make_shared<MockBackend>();
      if (!config.roles.tagger.empty()) m->set_behavior(config.roles.tagger, mock::lexicon_tagger());
      transport = m;
    } else {
      transport = make_http_transport();
    }
    return transport;
  }

  /// Gateway over the named models, or the whole pool when `ids` is empty.
  std::unique_ptr<Gateway> gateway(const std::vector<std::string>& ids = {}) {
    ModelPool all(config.models);
    std::vector<ModelConfig> chosen;
    if (ids.empty()) {
      chosen = config.models;
    } else {
      for (const auto& id : ids) chosen.push_back(all.at(id));
    }
    // The mock never authenticates, so an unset key variable must not fail the run.
    if (options.mock) {
      for (auto& m : chosen) m.api_key_env.clear();
    }
    return std::make_unique<Gateway>(ModelPool(std::move(chosen)), transport_or_make());
  }

  EmbeddingMatrix embed(const std::vector<std::string>& ids, const std::vector<std::string>& texts) {
    if (config.embedding.model.empty() && !options.mock && !options.transport) {
      throw ConfigError("[embedding] model must be set to compute embeddings");
    }
    auto endpoint = config.embedding;
    if (options.mock) endpoint.api_key_env.clear();
    return embed_texts(ids, texts, endpoint, *transport_or_make());
  }

  std::size_t network_calls() const { return transport ? transport->network_calls() : 0; }
};

StageResult finish(Context& ctx, Tracker& t, std::string status, std::string summary = {}) {
  StageResult r;
  r.network_calls = ctx.network_calls();
  if (ctx.options.mock && r.network_calls != 0) {
    throw Error("mock run made " + std::to_string(r.network_calls) + " network calls");
  }
  r.manifest = t.finish(status, r.network_calls);
  r.exit_code = status == "complete" ? kExitOk : kExitPartial;
  r.summary = std::move(summary);
  return r;
}

StageResult skipped(Stage stage, const Tracker& t) {
  Log::info("stage_skipped", {{"stage", to_string(stage)}, {"reason", "already complete"}});
  StageResult r;
  r.skipped = true;
  r.manifest = t.previous();
  r.summary = to_string(stage) + ": already complete\n";
  return r;
}

std::string slurp_jsonl(const std::vector<ordered_json>& records) {
  std::string out;
  for (const auto& r : records) out += r.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
  return out;
}

// ---------------------------------------------------------------------------

fs::path hits_path(const PipelineConfig& c) { return c.work("retrieval/hits.jsonl"); }
fs::path context_passages_path(const PipelineConfig& c) {
  return c.work("retrieval/context_passages.jsonl");
}
fs::path query_emb_path(const PipelineConfig& c) { return c.work("retrieval/queries.emb"); }
fs::path passage_emb_path(const PipelineConfig& c) { return c.work("retrieval/passages.emb"); }
fs::path variants_path(const PipelineConfig& c) { return c.work("synth/variants.jsonl"); }

// Synthesis runs over the retrieved context passages unless an explicit
// passage file is configured.
fs::path synth_input(const PipelineConfig& c) {
  auto path = c.paths.synth_passages.empty() ? context_passages_path(c) : c.resolve(c.paths.synth_passages);
  require_inputs({path});
  return path;
}

StageResult run_retrieve(Context& ctx) {
  const auto& c = ctx.config;
  auto qpath = c.resolve(c.paths.queries);
  auto ppath = c.resolve(c.paths.passages);
  std::vector<fs::path> needed{qpath, ppath};
  if (!c.paths.query_embeddings.empty()) needed.push_back(c.resolve(c.paths.query_embeddings));
  if (!c.paths.passage_embeddings.empty()) needed.push_back(c.resolve(c.paths.passage_embeddings));
  require_inputs(needed);

  Tracker t(c, Stage::kRetrieve, std::nullopt, ctx.options.mock);
  for (const auto& p : needed) t.input(p);
  if (!ctx.options.force && t.up_to_date()) return skipped(Stage::kRetrieve, t);

  auto queries = load_queries(qpath);
  auto passages = load_passages(ppath);

  auto matrix_for = [&](const fs::path& configured, const auto& items) {
    if (!configured.empty()) return load_embeddings(c.resolve(configured));
    std::vector<std::string> ids, texts;
    for (const auto& item : items) {
      ids.push_back(item.id);
      texts.push_back(item.text);
    }
    return ctx.embed(ids, texts);
  };
  auto qemb = matrix_for(c.paths.query_embeddings, queries);
  auto pemb = matrix_for(c.paths.passage_embeddings, passages);

  std::map<std::string, const Passage*> by_id;
  for (const auto& p : passages) by_id.emplace(p.id, &p);
  for (const auto& id : pemb.ids()) {
    if (!by_id.contains(id)) throw InputError("passage embeddings name unknown passage '" + id + "'");
  }

  save_embeddings(query_emb_path(c), qemb);
  save_embeddings(passage_emb_path(c), pemb);

  auto results = search_all(qemb, pemb, c.retrieve_k, ctx.workers());
  std::vector<ordered_json> hit_records;
  std::vector<Passage> context;
  std::set<std::string> seen;
  std::size_t slots = 0;
  for (const auto& r : results) {
    ordered_json j;
    j["query_id"] = r.query_id;
    j["hits"] = ordered_json::array();
    for (std::size_t i = 0; i < r.hits.size(); ++i) {
      j["hits"].push_back({{"passage_id", r.hits[i].passage_id}, {"score", r.hits[i].score}, {"rank", i + 1}});
      if (i < c.context_k) {
        ++slots;
        if (seen.insert(r.hits[i].passage_id).second) {
          Passage p = *by_id.at(r.hits[i].passage_id);
          p.source_query_id = r.query_id;
          p.rank = static_cast<int>(i + 1);
          p.score = r.hits[i].score;
          context.push_back(std::move(p));
        }
      }
    }
    hit_records.push_back(std::move(j));
  }
  auto unique = dedup_passages(context);

  atomic_write(hits_path(c), slurp_jsonl(hit_records));
  save_passages(context_passages_path(c), unique);
  for (const auto& p : {query_emb_path(c), passage_emb_path(c), hits_path(c), context_passages_path(c)}) {
    t.output(p);
  }
  t.counts() = {{"queries", queries.size()},
                {"passages_indexed", pemb.rows()},
                {"retrieve_k", c.retrieve_k},
                {"context_slots", slots},
                {"unique_passage_ids", context.size()},
                {"unique_passages", unique.size()}};
  Log::info("stage_done", {{"stage", "retrieve"}, {"counts", t.counts()}});
  return finish(ctx, t, "complete");
}

StageResult run_synth(Context& ctx) {
  const auto& c = ctx.config;
  auto input = synth_input(c);
  auto templates_dir = c.resolve(c.paths.templates);
  require_inputs({templates_dir});

  Tracker t(c, Stage::kSynth, ctx.seed, ctx.options.mock);
  t.input(input);
  t.input_dir(templates_dir, ".tmpl");
  if (!ctx.options.force && !ctx.options.repair && t.up_to_date()) return skipped(Stage::kSynth, t);
  if (ctx.options.resume || ctx.options.repair) t.check_resume();

  auto passages = load_passages(input);
  auto templates = load_templates(templates_dir);
  auto gateway = ctx.gateway(c.roles.generators);

  SynthOptions opts;
  opts.seed = *ctx.seed;
  opts.output_path = variants_path(c);
  opts.manifest_path = c.work("synth/manifest.json");
  opts.checkpoint_every = c.checkpoint_every;
  opts.workers = c.workers;
  opts.config_hash = config_hash(c);

  SynthRunManifest manifest;
  if (ctx.options.repair) {
    require_inputs({opts.manifest_path, opts.output_path});
    manifest = repair_failed(load_manifest(opts.manifest_path), passages, *gateway, templates, opts);
  } else {
    manifest = transform_corpus(passages, transform_emotions(), *gateway, templates, opts,
                                ctx.options.resume);
  }

  auto variants = load_variants(opts.output_path);
  save_variants(c.work("synth/sample.jsonl"), sample_variants(variants, c.sample_size, *ctx.seed));
  t.output(opts.output_path);
  t.output(opts.manifest_path);
  t.output(c.work("synth/sample.jsonl"));
  t.counts() = {{"passages", passages.size()},
                {"cells", passages.size() * transform_emotions().size()},
                {"raw_variants", manifest.raw_variants},
                {"unique_texts", manifest.unique_texts},
                {"failures", manifest.failures.size()},
                {"gateway_calls", manifest.gateway_calls}};
  Log::info("stage_done", {{"stage", "synth"}, {"counts", t.counts()}});
  std::ostringstream summary;
  summary << "synth: " << manifest.raw_variants << " variants (" << manifest.unique_texts
          << " unique texts), " << manifest.failures.size() << " failed cells\n";
  return finish(ctx, t, manifest.complete ? "complete" : "partial", summary.str());
}

StageResult run_analyze(Context& ctx) {
  const auto& c = ctx.config;
  auto input = synth_input(c);
  require_inputs({variants_path(c)});
  Tracker t(c, Stage::kAnalyze, std::nullopt, ctx.options.mock);
  t.input(input);
  t.input(variants_path(c));
  if (!ctx.options.force && t.up_to_date()) return skipped(Stage::kAnalyze, t);

  std::vector<std::string> original;
  for (const auto& p : load_passages(input)) original.push_back(p.text);
  std::map<std::string, std::vector<std::string>> synthetic;
  for (auto& v : load_variants(variants_path(c))) synthetic[v.model_id].push_back(std::move(v.text));
  if (synthetic.empty()) throw InputError(variants_path(c).string() + ": no variants to analyze");

  auto report = analyze_corpora(original, synthetic, c.alpha, ctx.workers());
  auto table = report_table(report);
  atomic_write(c.work("analysis/report.json"), report_json(report));
  atomic_write(c.work("analysis/report.txt"), table);
  atomic_write(c.work("analysis/report.csv"), report_csv(report));
  for (auto name : {"report.json", "report.txt", "report.csv"}) t.output(c.work("analysis") / name);
  t.counts() = {{"original_passages", original.size()}, {"models", synthetic.size()}, {"alpha", c.alpha}};
  return finish(ctx, t, "complete", table);
}

StageResult run_trainprep(Context& ctx) {
  const auto& c = ctx.config;
  auto input = synth_input(c);
  require_inputs({variants_path(c)});
  Tracker t(c, Stage::kTrainprep, ctx.seed, ctx.options.mock);
  t.input(input);
  t.input(variants_path(c));
  if (!ctx.options.force && t.up_to_date()) return skipped(Stage::kTrainprep, t);

  auto passages = load_passages(input);
  auto assembly = assemble_groups(passages, load_variants(variants_path(c)));
  MixtureSpec spec = c.mixture;
  spec.seed = *ctx.seed;
  auto records = build_training_mixture(assembly.groups, spec);
  TrainingManifest manifest;
  manifest.mixture = spec;
  auto data = c.work("trainprep/finetune.jsonl");
  auto man = c.work("trainprep/manifest.json");
  export_finetune(records, data, man, manifest);
  t.output(data);
  t.output(man);
  std::size_t self_maps = std::count_if(records.begin(), records.end(), [](const FineTuneRecord& r) {
    return r.source_emotion == r.target_emotion;
  });
  t.counts() = {{"groups", assembly.groups.size()},
                {"complete_groups", assembly.complete_count},
                {"records", records.size()},
                {"self_maps", self_maps}};
  std::ostringstream summary;
  summary << "trainprep: " << records.size() << " records from " << spec.n_groups << " groups, "
          << self_maps << " self-mapped\n";
  return finish(ctx, t, "complete", summary.str());
}

std::vector<std::pair<std::string, std::string>> translators(const PipelineConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  if (!c.roles.translator_zeroshot.empty()) out.emplace_back("zeroshot", c.roles.translator_zeroshot);
  if (!c.roles.translator_finetuned.empty()) out.emplace_back("finetuned", c.roles.translator_finetuned);
  return out;
}

StageResult run_roundtrip(Context& ctx) {
  const auto& c = ctx.config;
  auto input = c.resolve(c.paths.emotional_texts);
  require_inputs({input});
  auto roles = translators(c);
  if (roles.empty()) throw ConfigError("[roles] no translator configured for round trips");
  Tracker t(c, Stage::kRoundtrip, ctx.seed, ctx.options.mock);
  t.input(input);
  if (!ctx.options.force && t.up_to_date()) return skipped(Stage::kRoundtrip, t);

  auto sample = sample_per_emotion(load_emotional_texts(input), c.roundtrip_per_emotion, *ctx.seed);
  auto gateway = ctx.gateway();
  std::map<std::string, BleuReport> reports;
  std::size_t failures = 0;
  ordered_json counts = ordered_json::object();
  counts["samples"] = sample.size();
  for (const auto& [label, model] : roles) {
    std::vector<RoundTripOutcome> outcomes(sample.size());
    parallel_for(sample.size(), std::max<std::size_t>(1, gateway->total_capacity()), [&](std::size_t i) {
      const auto& s = sample[i];
      auto pivot = draw_pivot(s.emotion, *ctx.seed, s.id);
      outcomes[i] = round_trip(s.id, s.text, s.emotion, pivot, *gateway, model);
    });
    std::vector<RoundTrip> trips;
    std::vector<ordered_json> ok, failed;
    for (auto& o : outcomes) {
      if (o.trip) {
        ok.push_back(to_record(*o.trip));
        trips.push_back(std::move(*o.trip));
      } else if (o.failure) {
        failed.push_back({{"sample_id", o.failure->sample_id}, {"stage", o.failure->stage},
                          {"error", o.failure->error}});
      }
    }
    failures += failed.size();
    auto trips_path = c.work("roundtrip") / (label + ".jsonl");
    auto fail_path = c.work("roundtrip") / (label + "_failures.jsonl");
    atomic_write(trips_path, slurp_jsonl(ok));
    atomic_write(fail_path, slurp_jsonl(failed));
    t.output(trips_path);
    t.output(fail_path);
    counts[label] = {{"model", model}, {"trips", trips.size()}, {"failures", failed.size()}};
    if (!trips.empty()) reports.emplace(label, bleu_report(trips, label));
  }

  ordered_json bleu = ordered_json::object();
  std::string text;
  for (const auto& [label, report] : reports) bleu[label] = to_json(report);
  if (reports.contains("zeroshot") && reports.contains("finetuned")) {
    const auto& base = reports.at("zeroshot");
    const auto& tuned = reports.at("finetuned");
    text = bleu_table(base, tuned);
    if (base.mean > 0) bleu["multiplier"] = bleu_multiplier(tuned, base);
  } else {
    std::ostringstream s;
    for (const auto& [label, report] : reports) s << label << " average BLEU: " << 100 * report.mean << "\n";
    text = s.str();
  }
  atomic_write(c.work("roundtrip/bleu.json"), bleu.dump(2) + "\n");
  atomic_write(c.work("roundtrip/bleu.txt"), text);
  t.output(c.work("roundtrip/bleu.json"));
  t.output(c.work("roundtrip/bleu.txt"));
  t.counts() = counts;
  return finish(ctx, t, failures ? "partial" : "complete", text);
}

constexpr RatingKind kRatingKinds[] = {RatingKind::kEmotionVsOriginal, RatingKind::kEmotionVsBaseline,
                                       RatingKind::kFactVsBaseline};

fs::path rating_file(const PipelineConfig& c, RatingKind kind, std::string_view suffix) {
  return c.work("rating") / (to_string(kind) + std::string(suffix));
}

StageResult run_rate_pack(Context& ctx) {
  const auto& c = ctx.config;
  auto tuned_path = c.work("roundtrip/finetuned.jsonl");
  auto base_path = c.work("roundtrip/zeroshot.jsonl");
  require_inputs({tuned_path, base_path});
  Tracker t(c, Stage::kRatePack, ctx.seed, ctx.options.mock);
  t.input(tuned_path);
  t.input(base_path);
  if (!ctx.options.force && t.up_to_date()) return skipped(Stage::kRatePack, t);

  auto load = [](const fs::path& p) {
    std::vector<RoundTrip> out;
    for_each_jsonl(p, [&](const json& j, std::size_t) { out.push_back(round_trip_from_record(j)); });
    return out;
  };
  std::map<std::string, RoundTrip> baseline;
  for (auto& trip : load(base_path)) baseline.emplace(trip.sample_id, std::move(trip));

  std::vector<ComparisonPair> vs_original, vs_baseline;
  for (const auto& trip : load(tuned_path)) {
    vs_original.push_back({trip.sample_id, trip.pivot_emotion, trip.translated, "translator", trip.original,
                           "original"});
    auto it = baseline.find(trip.sample_id);
    if (it == baseline.end() || it->second.pivot_emotion != trip.pivot_emotion) continue;
    vs_baseline.push_back({trip.sample_id, trip.pivot_emotion, trip.translated, "translator",
                           it->second.translated, "baseline"});
  }

  ordered_json counts = ordered_json::object();
  for (auto kind : kRatingKinds) {
    const auto& pairs = kind == RatingKind::kEmotionVsOriginal ? vs_original : vs_baseline;
    auto set = build_rating_tasks(pairs, kind, *ctx.seed, c.rating_per_emotion);
    write_task_csv(rating_file(c, kind, "_tasks.csv"), set.tasks);
    write_key_csv(rating_file(c, kind, "_key.csv"), set.tasks);
    t.output(rating_file(c, kind, "_tasks.csv"));
    t.output(rating_file(c, kind, "_key.csv"));
    counts[to_string(kind)] = {{"tasks", set.tasks.size()}, {"warnings", set.warnings}};
  }
  t.counts() = counts;
  return finish(ctx, t, "complete");
}

StageResult run_rate_agg(Context& ctx) {
  const auto& c = ctx.config;
  std::vector<RatingKind> kinds;
  std::vector<fs::path> needed;
  for (auto kind : kRatingKinds) {
    if (!fs::exists(rating_file(c, kind, "_tasks.csv"))) continue;
    kinds.push_back(kind);
    needed.push_back(rating_file(c, kind, "_key.csv"));
    needed.push_back(c.resolve(c.paths.ratings_dir) / (to_string(kind) + "_results.csv"));
  }
  if (kinds.empty()) require_inputs({rating_file(c, RatingKind::kEmotionVsOriginal, "_tasks.csv")});
  require_inputs(needed);

  Tracker t(c, Stage::kRateAgg, std::nullopt, ctx.options.mock);
  for (auto kind : kinds) t.input(rating_file(c, kind, "_tasks.csv"));
  for (const auto& p : needed) t.input(p);
  if (!ctx.options.force && t.up_to_date()) return skipped(Stage::kRateAgg, t);

  std::string text;
  for (auto kind : kinds) {
    auto tasks = load_rating_tasks(rating_file(c, kind, "_tasks.csv"), rating_file(c, kind, "_key.csv"));
    auto results = load_rating_results(c.resolve(c.paths.ratings_dir) / (to_string(kind) + "_results.csv"));
    auto agg = aggregate_ratings(results, tasks);
    auto table = rating_table(agg);
    atomic_write(rating_file(c, kind, "_aggregate.json"), to_json(agg).dump(2) + "\n");
    atomic_write(rating_file(c, kind, "_aggregate.txt"), table);
    t.output(rating_file(c, kind, "_aggregate.json"));
    t.output(rating_file(c, kind, "_aggregate.txt"));
    t.counts()[to_string(kind)] = {{"tasks", tasks.size()}, {"results", results.size()}};
    text += "== " + to_string(kind) + " ==\n" + table + "\n";
  }
  return finish(ctx, t, "complete", text);
}

// ---------------------------------------------------------------------------
// Reading with Intent

struct DatasetFile {
  Dataset dataset;
  const char* key;
  const char* file;
};

constexpr DatasetFile kDatasetFiles[] = {
    {Dataset::kNQ, "nq", "nq.jsonl"},
    {Dataset::kNQFS, "fs", "nq_fs.jsonl"},
    {Dataset::kNQPSM, "psm", "nq_psm.jsonl"},
    {Dataset::kNQPSA, "psa", "nq_psa.jsonl"},
};

StageResult run_rwi_build(Context& ctx) {
  const auto& c = ctx.config;
  auto want = ctx.options.rwi_datasets;
  if (want.empty()) want = {"fs", "psm", "psa"};
  for (const auto& w : want) {
    if (w != "fs" && w != "psm" && w != "psa") throw ConfigError("unknown RwI dataset '" + w + "'");
  }
  auto qpath = c.resolve(c.paths.queries);
  auto ppath = c.resolve(c.paths.passages);
  auto vpath = c.resolve(c.paths.variant_sets);
  std::vector<fs::path> needed{qpath, ppath, vpath, hits_path(c)};
  if (want.contains("psa")) {
    needed.push_back(query_emb_path(c));
    needed.push_back(passage_emb_path(c));
  }
  require_inputs(needed);
  Tracker t(c, Stage::kRwiBuild, ctx.seed, ctx.options.mock);
  for (const auto& p : needed) t.input(p);
  t.counts()["datasets"] = std::vector<std::string>(want.begin(), want.end());
  if (!ctx.options.force && ctx.options.rwi_datasets.empty() && t.up_to_date()) {
    return skipped(Stage::kRwiBuild, t);
  }

  auto queries = load_queries(qpath, true);
  auto passages = load_passages(ppath);
  auto sets = load_variant_sets(vpath);
  std::map<std::string, const Passage*> by_id;
  for (const auto& p : passages) by_id.emplace(p.id, &p);
  std::map<std::string, std::vector<Hit>> hits;
  for_each_jsonl(hits_path(c), [&](const json& j, std::size_t) {
    auto& list = hits[j.at("query_id").get<std::string>()];
    for (const auto& h : j.at("hits")) list.push_back({h.at("passage_id"), h.at("score")});
  });

  std::vector<RwiContext> base;
  for (const auto& q : queries) {
    auto it = hits.find(q.id);
    if (it == hits.end()) throw InputError("no retrieval hits for query '" + q.id + "'");
    base.push_back(make_base_context(q, it->second, by_id, sets, c.context_k));
  }

  auto save = [&](const char* file, const std::vector<RwiContext>& contexts) {
    auto path = c.work("rwi") / file;
    save_rwi_dataset(path, contexts);
    t.output(path);
    t.counts()[file] = contexts.size();
  };
  save("nq.jsonl", base);
  if (want.contains("fs")) save("nq_fs.jsonl", build_nq_fs(base, sets));
  if (want.contains("psm")) save("nq_psm.jsonl", build_nq_psm(base, sets, *ctx.seed));
  if (want.contains("psa")) {
    std::vector<std::string> ids, texts;
    for (const auto& [id, s] : sets) {
      if (!by_id.contains(id)) continue;
      ids.push_back(id);
      texts.push_back(s.sarcastic_distorted);
    }
    auto distorted = ctx.embed(ids, texts);
    auto demb = c.work("rwi/distorted.emb");
    save_embeddings(demb, distorted);
    t.output(demb);
    auto corpus = make_expanded_corpus(passages, load_embeddings(passage_emb_path(c)), sets, distorted);
    auto qemb = load_embeddings(query_emb_path(c));
    std::set<std::string> wanted_ids;
    for (const auto& q : queries) wanted_ids.insert(q.id);
    std::vector<std::string> keep_ids;
    std::vector<float> keep_values;
    for (std::size_t i = 0; i < qemb.rows(); ++i) {
      if (!wanted_ids.contains(qemb.ids()[i])) continue;
      keep_ids.push_back(qemb.ids()[i]);
      auto row = qemb.row(i);
      keep_values.insert(keep_values.end(), row.begin(), row.end());
    }
    EmbeddingMatrix qsub(std::move(keep_ids), qemb.dim(), std::move(keep_values));
    save("nq_psa.jsonl", build_nq_psa(queries, qsub, corpus, c.context_k, ctx.workers()));
  }
  return finish(ctx, t, "complete");
}

std::vector<RwiContext> map_contexts(const std::vector<RwiContext>& in, std::size_t workers,
                                     const std::function<RwiContext(const RwiContext&)>& fn) {
  std::vector<RwiContext> out(in.size());
  parallel_for(in.size(), workers, [&](std::size_t i) { out[i] = fn(in[i]); });
  return out;
}

StageResult run_rwi_eval(Context& ctx) {
  const auto& c = ctx.config;
  std::vector<DatasetFile> present;
  for (const auto& d : kDatasetFiles) {
    if (fs::exists(c.work("rwi") / d.file)) present.push_back(d);
  }
  if (present.empty()) require_inputs({c.work("rwi/nq.jsonl")});
  if (c.roles.readers.empty() && ctx.options.rwi_evaluate) throw ConfigError("[roles] readers is empty");
  auto reader_path = c.resolve(c.paths.reader_prompt);
  if (!reader_path.empty()) require_inputs({reader_path});

  Tracker t(c, Stage::kRwiEval, std::nullopt, ctx.options.mock);
  for (const auto& d : present) t.input(c.work("rwi") / d.file);
  if (!reader_path.empty()) t.input(reader_path);
  const bool full = ctx.options.rwi_neutralize && ctx.options.rwi_evaluate;
  if (full && !ctx.options.force && t.up_to_date()) return skipped(Stage::kRwiEval, t);

  auto gateway = ctx.gateway();
  const std::size_t workers = std::max<std::size_t>(1, gateway->total_capacity());
  const bool tags = !c.roles.tagger.empty();
  std::size_t failures = 0;
  std::mutex mu;

  auto tagged_path = [&](const DatasetFile& d) { return c.work("rwi/tagged") / d.file; };
  auto neutral_path = [&](const std::string& label, const DatasetFile& d) {
    return c.work("rwi/neutralized") / label / d.file;
  };

  if (ctx.options.rwi_neutralize) {
    for (const auto& d : present) {
      auto contexts = load_rwi_dataset(c.work("rwi") / d.file);
      if (tags) {
        contexts = map_contexts(contexts, workers, [&](const RwiContext& x) {
          return tag_context(x, *gateway, c.roles.tagger);
        });
      }
      save_rwi_dataset(tagged_path(d), contexts);
      t.output(tagged_path(d));
      for (const auto& [label, model] : translators(c)) {
        NeutralizeOptions opts{model, c.tag_conditioned, 0.0};
        auto neutral = map_contexts(contexts, workers, [&](const RwiContext& x) {
          auto outcome = neutralize_context(x, *gateway, opts);
          std::lock_guard lock(mu);
          failures += outcome.failures;
          return outcome.context;
        });
        save_rwi_dataset(neutral_path(label, d), neutral);
        t.output(neutral_path(label, d));
      }
    }
    t.counts()["neutralize_failures"] = failures;
  }

  std::string summary;
  if (ctx.options.rwi_evaluate) {
    auto reader = reader_path.empty() ? default_reader_template() : load_reader_template(reader_path);
    struct Job {
      Condition condition;
      Dataset dataset;
      fs::path path;
    };
    std::vector<Job> jobs;
    for (const auto& d : present) {
      auto base = fs::exists(tagged_path(d)) ? tagged_path(d) : c.work("rwi") / d.file;
      jobs.push_back({Condition::kBaseline, d.dataset, base});
      if (fs::exists(neutral_path("zeroshot", d))) {
        jobs.push_back({Condition::kZeroshotNeutralized, d.dataset, neutral_path("zeroshot", d)});
      }
      if (fs::exists(neutral_path("finetuned", d))) {
        jobs.push_back({Condition::kTranslatorNeutralized, d.dataset, neutral_path("finetuned", d)});
      }
    }
    std::vector<EvalResult> results;
    std::size_t reader_failures = 0;
    for (const auto& job : jobs) {
      if (!ctx.options.rwi_neutralize) t.input(job.path);
      auto contexts = load_rwi_dataset(job.path);
      for (const auto& model : c.roles.readers) {
        std::vector<EvalResult> batch(contexts.size());
        parallel_for(contexts.size(), workers, [&](std::size_t i) {
          batch[i] = read_and_answer(contexts[i], *gateway, model, reader, job.condition, job.dataset, tags);
        });
        for (auto& r : batch) {
          reader_failures += r.failed;
          results.push_back(std::move(r));
        }
      }
    }
    failures += reader_failures;
    save_results(c.work("rwi/results.jsonl"), results);
    auto table = results_table(results, c.lenient);
    auto deltas = compute_deltas(table);
    summary = render_results_table(table, deltas);
    atomic_write(c.work("rwi/table.txt"), summary);
    atomic_write(c.work("rwi/table.csv"), results_csv(table));
    atomic_write(c.work("rwi/table.json"), to_json(table, deltas).dump(2) + "\n");
    for (auto name : {"results.jsonl", "table.txt", "table.csv", "table.json"}) t.output(c.work("rwi") / name);
    t.counts()["results"] = results.size();
    t.counts()["reader_failures"] = reader_failures;
  }
  return finish(ctx, t, failures ? "partial" : "complete", summary);
}

StageResult run_report(Context& ctx) {
  const auto& c = ctx.config;
  struct Source {
    const char* title;
    fs::path path;
  };
  std::vector<Source> sources{{"Reading with Intent", c.work("rwi/results.jsonl")},
                              {"Dataset analysis", c.work("analysis/report.txt")},
                              {"Round-trip BLEU", c.work("roundtrip/bleu.txt")}};
  for (auto kind : kRatingKinds) {
    sources.push_back({"Human evaluation", rating_file(c, kind, "_aggregate.txt")});
  }
  std::vector<Source> present;
  for (const auto& s : sources) {
    if (fs::exists(s.path)) present.push_back(s);
  }
  if (present.empty()) {
    std::vector<fs::path> all;
    for (const auto& s : sources) all.push_back(s.path);
    require_inputs(all);
  }
  Tracker t(c, Stage::kReport, std::nullopt, ctx.options.mock);
  for (const auto& s : present) t.input(s.path);

  std::ostringstream out;
  for (const auto& s : present) {
    out << "== " << s.title;
    if (s.path.filename().string().find("_aggregate") != std::string::npos) {
      out << " (" << s.path.stem().string() << ")";
    }
    out << " ==\n";
    if (s.path.extension() == ".jsonl") {
      auto table = results_table(load_results(s.path), c.lenient);
      auto deltas = compute_deltas(table);
      out << render_results_table(table, deltas);
      atomic_write(c.work("report/rwi_table.csv"), results_csv(table));
      atomic_write(c.work("report/rwi_table.json"), to_json(table, deltas).dump(2) + "\n");
      t.output(c.work("report/rwi_table.csv"));
      t.output(c.work("report/rwi_table.json"));
    } else {
      out << read_file(s.path);
    }
    out << "\n";
  }
  atomic_write(c.work("report/report.txt"), out.str());
  t.output(c.work("report/report.txt"));
  t.counts()["sections"] = present.size();
  return finish(ctx, t, "complete", out.str());
}

std::optional<std::uint64_t> apply_seed(PipelineConfig& c, Stage stage, std::optional<std::uint64_t> seed) {
  std::uint64_t* slot = nullptr;
  switch (stage) {
    case Stage::kSynth: slot = &c.seeds.synth; break;
    case Stage::kTrainprep: slot = &c.seeds.trainprep; break;
    case Stage::kRoundtrip: slot = &c.seeds.roundtrip; break;
    case Stage::kRatePack: slot = &c.seeds.rating; break;
    case Stage::kRwiBuild: slot = &c.seeds.rwi; break;
    default: return std::nullopt;
  }
  if (seed) *slot = *seed;
  if (stage == Stage::kTrainprep) c.mixture.seed = *slot;
  return *slot;
}

}  // namespace

StageResult run_stage(Stage stage, PipelineConfig config, const RunOptions& options) {
  validate(config);
  Context ctx{std::move(config), options, nullptr, std::nullopt};
  ctx.seed = apply_seed(ctx.config, stage, options.seed);
  Log::info("stage_start", {{"stage", to_string(stage)},
                            {"config_hash", config_hash(ctx.config)},
                            {"mock", options.mock},
                            {"resume", options.resume}});
  switch (stage) {
    case Stage::kRetrieve: return run_retrieve(ctx);
    case Stage::kSynth: return run_synth(ctx);
    case Stage::kAnalyze: return run_analyze(ctx);
    case Stage::kTrainprep: return run_trainprep(ctx);
    case Stage::kRoundtrip: return run_roundtrip(ctx);
    case Stage::kRatePack: return run_rate_pack(ctx);
    case Stage::kRateAgg: return run_rate_agg(ctx);
    case Stage::kRwiBuild: return run_rwi_build(ctx);
    case Stage::kRwiEval: return run_rwi_eval(ctx);
    case Stage::kReport: return run_report(ctx);
  }
  throw ConfigError("unknown stage");
}

}  // namespace emotrans
