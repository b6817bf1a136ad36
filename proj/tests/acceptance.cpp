// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "emotrans/analysis.hpp"
#include "emotrans/error.hpp"
#include "emotrans/evalsuite.hpp"
#include "emotrans/pipeline.hpp"
#include "emotrans/retrieval.hpp"
#include "emotrans/rwi_bench.hpp"
#include "emotrans/trainprep.hpp"
#include "oracle_data.hpp"
#include "support.hpp"

using namespace emotrans;

namespace {

struct Check {
  std::ostringstream problems;
  void require(bool ok, const std::string& what) {
    if (!ok) problems << (problems.tellp() > 0 ? "; " : "") << what;
  }
};

struct Criterion {
  int number;
  std::string title;
  double time_limit_s;  // 0 = none
  std::function<void(Check&)> body;
};

NGramDistribution unigram(const std::vector<std::pair<std::string, long>>& counts) {
  NGramDistribution d;
  for (const auto& [k, c] : counts) {
    d.counts[k] = static_cast<std::uint64_t>(c);
    d.total += static_cast<std::uint64_t>(c);
  }
  return d;
}

void kl_oracles(Check& c) {
  c.require(oracle::kKlCases.size() >= 20, "fewer than 20 oracle cases");
  for (std::size_t i = 0; i < oracle::kKlCases.size(); ++i) {
    const auto& k = oracle::kKlCases[i];
    double got = kl_divergence(unigram(k.p), unigram(k.q), k.alpha);
    c.require(std::abs(got - k.expected) <= 1e-9, "case " + std::to_string(i) + " off by " +
                                                      std::to_string(got - k.expected));
  }
  double limit = kl_divergence(unigram({{"a", 1}, {"b", 1}}), unigram({{"a", 3}, {"b", 1}}), 1e-12);
  c.require(std::abs(limit - 0.1438) <= 1e-3, "alpha->0 case gave " + std::to_string(limit));
}

void kl_convexity(Check& c) {
  SeededRng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    auto random_dist = [&] {
      NGramDistribution d;
      auto symbols = 2 + rng.uniform_index(30);
      for (std::uint64_t s = 0; s < symbols; ++s) {
        if (rng.bernoulli(0.3)) continue;
        auto n = 1 + rng.uniform_index(40);
        d.counts["w" + std::to_string(s)] = n;
        d.total += n;
      }
      if (d.total == 0) {
        d.counts["w0"] = 1;
        d.total = 1;
      }
      return d;
    };
    auto p = random_dist();
    std::vector<NGramDistribution> qs(3 + rng.uniform_index(3));
    for (auto& q : qs) q = random_dist();
    std::vector<const NGramDistribution*> all{&p};
    for (const auto& q : qs) all.push_back(&q);
    auto support = union_support(all);
    auto pp = smoothed_probabilities(p, support, 0.5);
    std::vector<std::vector<double>> qp;
    std::vector<double> w;
    for (const auto& q : qs) {
      qp.push_back(smoothed_probabilities(q, support, 0.5));
      w.push_back(0.05 + rng.uniform01());
    }
    double wsum = 0;
    for (double x : w) wsum += x;
    double bound = 0;
    for (std::size_t i = 0; i < qs.size(); ++i) bound += w[i] / wsum * kl_divergence(pp, qp[i]);
    double lhs = kl_divergence(pp, mixture(qp, w));
    c.require(lhs <= bound + 1e-9, "trial " + std::to_string(trial) + " violates convexity");
  }
}

void bleu_checks(Check& c) {
  std::vector<std::string> s = {"the", "quick", "brown", "fox", "jumps"};
  c.require(sentence_bleu_tokens(s, {s}) == 1.0, "identity is not exactly 1.0");
  auto [m, t] = clipped_precision({"the", "the", "the", "the"}, {{"the", "cat"}}, 1);
  c.require(m == 1 && t == 4, "clipped unigram precision is not 1/4");
  for (std::size_t i = 0; i < oracle::kBleuCases.size(); ++i) {
    const auto& b = oracle::kBleuCases[i];
    double got = sentence_bleu_tokens(b.hypothesis, b.references);
    c.require(std::abs(got - b.expected) <= 1e-6, "oracle case " + std::to_string(i));
  }
  c.require(oracle::kBleuCases.size() == 50, "expected 50 oracle cases");
}

void mips_oracle(Check& c) {
  SeededRng rng(77);
  for (int inst = 0; inst < 200; ++inst) {
    std::size_t n = 1 + rng.uniform_index(1000);
    std::size_t dim = 1 + rng.uniform_index(64);
    bool ties = inst % 3 == 0;
    std::vector<std::string> ids;
    std::vector<float> values;
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back("d" + std::to_string(rng.uniform_index(1u << 30)) + "_" + std::to_string(i));
      for (std::size_t j = 0; j < dim; ++j) {
        // Small integers make exact score ties common.
        values.push_back(ties ? static_cast<float>(rng.uniform_index(3)) : static_cast<float>(rng.uniform01() * 2 - 1));
      }
    }
    if (ties && n > 1) {
      for (std::size_t j = 0; j < dim; ++j) values[dim + j] = values[j];  // duplicate row
    }
    EmbeddingMatrix index(ids, dim, values);
    std::vector<float> q(dim);
    for (auto& x : q) x = ties ? static_cast<float>(rng.uniform_index(3)) : static_cast<float>(rng.uniform01() * 2 - 1);
    std::size_t k = 1 + rng.uniform_index(std::min<std::size_t>(n + 5, 250));

    std::vector<std::pair<double, std::string>> naive;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0;
      for (std::size_t j = 0; j < dim; ++j) dot += static_cast<double>(q[j]) * values[i * dim + j];
      naive.emplace_back(dot, ids[i]);
    }
    std::sort(naive.begin(), naive.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    naive.resize(std::min(k, n));
    auto hits = top_k_mips(q, index, k);
    bool same = hits.size() == naive.size();
    for (std::size_t i = 0; same && i < hits.size(); ++i) {
      same = hits[i].passage_id == naive[i].second && hits[i].score == naive[i].first;
    }
    c.require(same, "instance " + std::to_string(inst) + " disagrees");
  }
}

std::vector<ParallelGroup> synthetic_groups(std::size_t n) {
  std::vector<ParallelGroup> groups;
  groups.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ParallelGroup g;
    g.passage_id = "g" + std::to_string(i);
    g.original = {g.passage_id, "text " + std::to_string(i), {}, {}, {}};
    for (const auto& e : transform_emotions()) {
      g.variants[e] = {g.passage_id, e, "m", e.name() + " " + std::to_string(i), ""};
    }
    g.complete = true;
    groups.push_back(std::move(g));
  }
  return groups;
}

void mixture_stats(Check& c) {
  auto groups = synthetic_groups(10000);
  MixtureSpec spec{10000, 10, 0.1, 13};
  auto records = build_training_mixture(groups, spec);
  c.require(records.size() == 100000, "expected 100000 records, got " + std::to_string(records.size()));
  std::size_t self = 0;
  for (const auto& r : records) self += r.source_emotion == r.target_emotion ? 1 : 0;
  double frac = static_cast<double>(self) / static_cast<double>(records.size());
  std::cout << "  self-map fraction at rate 0.1: " << frac * 100 << "%\n";
  c.require(frac >= 0.094 && frac <= 0.106, "self-map fraction out of band");

  auto small = std::vector<ParallelGroup>(groups.begin(), groups.begin() + 1000);
  for (double rate : {0.0, 1.0}) {
    MixtureSpec s{1000, 10, rate, 13};
    for (const auto& r : build_training_mixture(small, s)) {
      bool is_self = r.source_emotion == r.target_emotion;
      c.require(is_self == (rate == 1.0), "rate " + std::to_string(rate) + " not exact");
      if (is_self != (rate == 1.0)) break;
    }
  }

  testing::TempDir dir;
  TrainingManifest manifest;
  manifest.mixture = spec;
  export_finetune(records, dir / "a.jsonl", dir / "a.json", manifest);
  export_finetune(build_training_mixture(groups, spec), dir / "b.jsonl", dir / "b.json", manifest);
  c.require(file_sha256(dir / "a.jsonl") == file_sha256(dir / "b.jsonl"), "re-export differs");
  c.require(file_sha256(dir / "a.json") == file_sha256(dir / "b.json"), "manifest differs");
}

void psm_audit(Check& c) {
  VariantSetIndex sets;
  for (int i = 0; i < 10; ++i) {
    auto id = "p" + std::to_string(i);
    sets[id] = {id, "o" + id, "c" + id, "d" + id, false};
  }
  SeededRng rng(99);
  std::vector<RwiContext> contexts;
  for (int n = 0; n < 1000; ++n) {
    RwiContext ctx{"q" + std::to_string(n), "?", {"x"}, {}};
    for (int i = 0; i < 10; ++i) {
      ContextPassage p;
      p.passage_id = "p" + std::to_string(i);
      p.text = "op" + std::to_string(i);
      p.gold = rng.bernoulli(0.2);
      ctx.passages.push_back(p);
    }
    contexts.push_back(std::move(ctx));
  }
  auto psm = build_nq_psm(contexts, sets, 5);
  c.require(psm.size() == 1000, "context count");
  for (std::size_t n = 0; n < psm.size(); ++n) {
    const auto& ctx = psm[n];
    bool had_gold = contexts[n].first_gold().has_value();
    std::size_t distorted = 0, consistent = 0;
    std::optional<std::size_t> first_gold, last_distorted;
    for (std::size_t i = 0; i < ctx.passages.size(); ++i) {
      const auto& p = ctx.passages[i];
      if (p.kind == VariantKind::kSarcasticDistorted) {
        ++distorted;
        last_distorted = i;
      }
      if (p.kind == VariantKind::kSarcasticConsistent) ++consistent;
      if (p.gold && !first_gold) first_gold = i;
    }
    bool ok = ctx.passages.size() == 10 && distorted == 2 && consistent == 2 &&
              first_gold.has_value() == had_gold &&
              (!first_gold || (last_distorted && *last_distorted < *first_gold));
    c.require(ok, "context " + ctx.query_id + " breaks the placement rules");
    if (!ok) break;
  }
}

void mock_pipeline(Check& c) {
  testing::TempDir dir;
  auto config = load_config(testing::copy_demo(dir.path()));
  RunOptions opts;
  opts.mock = true;
  std::size_t network = 0;
  for (Stage s : {Stage::kSynth, Stage::kRoundtrip, Stage::kRetrieve, Stage::kRwiBuild, Stage::kRwiEval}) {
    auto r = run_stage(s, config, opts);
    network += r.network_calls;
    c.require(r.exit_code == kExitOk, to_string(s) + " exited " + std::to_string(r.exit_code));
  }
  auto passages = load_passages(config.resolve(config.paths.synth_passages));
  auto variants = load_variants(config.work("synth/variants.jsonl"));
  c.require(passages.size() == 30, "demo should have 30 passages");
  c.require(variants.size() == 330, "expected 330 variants, got " + std::to_string(variants.size()));

  auto bleu = json::parse(read_file(config.work("roundtrip/bleu.json")));
  for (const char* label : {"zeroshot", "finetuned"}) {
    c.require(bleu.contains(label) && bleu[label].at("mean").get<double>() == 1.0,
              std::string(label) + " round-trip BLEU is not 1.0");
  }

  auto table = json::parse(read_file(config.work("rwi/table.json")));
  std::set<std::string> conditions, readers;
  bool all_cells = true;
  for (const auto& row : table.at("rows")) {
    conditions.insert(row.at("condition").get<std::string>());
    readers.insert(row.at("reader").get<std::string>());
    for (const char* d : {"NQ", "NQ-FS", "NQ-PSM", "NQ-PSA"}) all_cells = all_cells && row.contains(d);
  }
  c.require(table.at("rows").size() == 3 * config.roles.readers.size(), "row count");
  c.require(conditions.size() == 3 && readers.size() == config.roles.readers.size(), "table shape");
  c.require(all_cells, "missing dataset columns");
  c.require(table.contains("deltas") && table.contains("translator_vs_zeroshot_overall"), "no delta block");
  c.require(network == 0, "network calls: " + std::to_string(network));
}

void report_math(Check& c) {
  const std::vector<std::string> readers = {"r1", "r2", "r3", "r4"};
  const double baseline[] = {46.9, 46.4, 42.3, 48.7};
  const double translator[] = {50.7, 52.3, 43.5, 48.9};
  ResultsTable t;
  for (std::size_t i = 0; i < readers.size(); ++i) {
    t.set_accuracy(Condition::kBaseline, readers[i], Dataset::kNQFS, baseline[i]);
    t.set_accuracy(Condition::kTranslatorNeutralized, readers[i], Dataset::kNQFS, translator[i]);
  }
  auto d = compute_deltas(t);
  auto fs = d.by_dataset[Dataset::kNQFS].translator_vs_baseline;
  c.require(fs.has_value(), "no FS delta");
  if (fs) {
    std::cout << "  NQ-FS translator vs baseline: " << *fs << "\n";
    c.require(std::abs(*fs - 2.775) < 1e-9, "FS delta is not 2.775");
    c.require(std::round(*fs * 10) / 10 == 2.8, "FS delta does not round to 2.8");
  }
  c.require(render_results_table(t, d).find("+2.775") != std::string::npos, "rendered delta missing");
}

// Independent truth table: tally by role, then decide.
Verdict expected_verdict(RatingKind kind, bool subject_left, const std::array<Choice, 3>& cs) {
  int subject = 0, other = 0, equal = 0;
  for (auto ch : cs) {
    if (ch == Choice::kBothEqual) {
      ++equal;
    } else if ((ch == Choice::kLeft) == subject_left) {
      ++subject;
    } else {
      ++other;
    }
  }
  (void)kind;
  if (subject >= 2) return Verdict::kSubject;
  if (other >= 2) return Verdict::kOther;
  if (equal >= 2) return Verdict::kBothEqual;
  return Verdict::kNoMajority;
}

void majority(Check& c) {
  const Choice all[] = {Choice::kLeft, Choice::kRight, Choice::kBothEqual};
  for (auto kind : {RatingKind::kEmotionVsOriginal, RatingKind::kEmotionVsBaseline, RatingKind::kFactVsBaseline}) {
    bool allows_equal = kind == RatingKind::kFactVsBaseline;
    for (bool left : {true, false}) {
      for (auto a : all) {
        for (auto b : all) {
          for (auto d : all) {
            std::array<Choice, 3> cs{a, b, d};
            bool has_equal = a == Choice::kBothEqual || b == Choice::kBothEqual || d == Choice::kBothEqual;
            if (has_equal && !allows_equal) {
              bool threw = false;
              try {
                majority_verdict(kind, left, cs);
              } catch (const InputError&) {
                threw = true;
              }
              c.require(threw, "both_equal accepted for " + to_string(kind));
              continue;
            }
            c.require(majority_verdict(kind, left, cs) == expected_verdict(kind, left, cs),
                      "truth table mismatch for " + to_string(kind));
          }
        }
      }
    }
  }

  // Raters with fixed role preferences must give the same verdicts however
  // the pairs were laid out.
  std::vector<ComparisonPair> pairs;
  for (int i = 0; i < 60; ++i) {
    pairs.push_back({"p" + std::to_string(i), Emotion("humor"), "s", "translator", "o", "baseline"});
  }
  std::map<std::string, Verdict> reference;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto set = build_rating_tasks(pairs, RatingKind::kFactVsBaseline, seed, 60);
    std::vector<RatingResult> results;
    for (const auto& t : set.tasks) {
      auto pair_id = t.task_id.substr(t.task_id.rfind(':') + 1);
      auto idx = std::stoi(pair_id.substr(1));
      // Pattern by pair index: subject, other, equal; expressed in screen terms.
      for (int w = 0; w < 3; ++w) {
        int pref = (idx + w * (idx % 4 == 0 ? 0 : 1)) % 3;
        Choice ch = pref == 2 ? Choice::kBothEqual
                              : ((pref == 0) == t.subject_left ? Choice::kLeft : Choice::kRight);
        results.push_back({t.task_id, "w" + std::to_string(w), ch});
      }
    }
    auto agg = aggregate_ratings(results, set.tasks);
    std::map<std::string, Verdict> by_pair;
    for (const auto& t : set.tasks) {
      by_pair[t.task_id.substr(t.task_id.rfind(':') + 1)] = agg.verdicts.at(t.task_id);
    }
    if (reference.empty()) {
      reference = by_pair;
    } else {
      c.require(by_pair == reference, "verdicts depend on orientation (seed " + std::to_string(seed) + ")");
    }
  }
}

}  // namespace

int main() {
  Log::set_sink(nullptr);
  std::vector<Criterion> criteria = {
      {1, "KL divergence matches the direct-summation oracle", 1.0, kl_oracles},
      {2, "KL of the mixture is bounded by the weighted KLs", 10.0, kl_convexity},
      {3, "BLEU identity, clipping and reference-implementation agreement", 0, bleu_checks},
      {4, "MIPS top-k agrees with a naive full sort", 5.0, mips_oracle},
      {5, "training mixture self-map statistics and reproducible export", 0, mixture_stats},
      {6, "partially sarcastic context structure over 1000 contexts", 0, psm_audit},
      {7, "end-to-end mock pipeline", 30.0, mock_pipeline},
      {8, "results-table delta arithmetic on published FS columns", 0, report_math},
      {9, "majority-vote truth table and orientation invariance", 0, majority},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Check check;
    auto start = std::chrono::steady_clock::now();
    try {
      cr.body(check);
    } catch (const std::exception& e) {
      check.require(false, std::string("exception: ") + e.what());
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (cr.time_limit_s > 0 && secs > cr.time_limit_s) {
      check.require(false, "took " + std::to_string(secs) + " s, limit " + std::to_string(cr.time_limit_s));
    }
    bool ok = check.problems.tellp() == 0;
    failed += ok ? 0 : 1;
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << cr.number << ": " << cr.title << " ("
              << secs << " s)";
    if (!ok) std::cout << " -- " << check.problems.str();
    std::cout << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
