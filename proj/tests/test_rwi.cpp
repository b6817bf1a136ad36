#include <mutex>
#include <set>

#include "doctest.h"
#include "emotrans/error.hpp"
#include "emotrans/mock_backend.hpp"
#include "emotrans/rwi_bench.hpp"
#include "support.hpp"

using namespace emotrans;

namespace {

// Ten slots p0..p9 with gold at the given indices.
RwiContext context(const std::string& qid, std::set<std::size_t> gold) {
  RwiContext ctx{qid, "who?", {"ada"}, {}};
  for (std::size_t i = 0; i < 10; ++i) {
    ContextPassage p;
    p.passage_id = "p" + std::to_string(i);
    p.text = "original " + std::to_string(i);
    p.gold = gold.contains(i);
    ctx.passages.push_back(p);
  }
  return ctx;
}

VariantSetIndex sets(std::size_t n = 10) {
  VariantSetIndex out;
  for (std::size_t i = 0; i < n; ++i) {
    auto id = "p" + std::to_string(i);
    out[id] = {id, "original " + std::to_string(i), "consistent " + std::to_string(i),
               "distorted " + std::to_string(i), false};
  }
  return out;
}

std::size_t count_kind(const RwiContext& ctx, VariantKind kind) {
  std::size_t n = 0;
  for (const auto& p : ctx.passages) n += p.kind == kind ? 1 : 0;
  return n;
}

ModelPool pool(std::initializer_list<const char*> ids) {
  std::vector<ModelConfig> models;
  for (auto id : ids) {
    ModelConfig m;
    m.model_id = id;
    m.base_url = "http://mock";
    m.max_retries = 0;
    models.push_back(m);
  }
  return ModelPool(models);
}

}  // namespace

TEST_SUITE("rwi") {
  TEST_CASE("fully sarcastic contexts") {
    auto fs = build_nq_fs({context("q", {2})}, sets());
    REQUIRE(fs.size() == 1);
    CHECK(count_kind(fs[0], VariantKind::kSarcasticConsistent) == 10);
    for (std::size_t i = 0; i < 10; ++i) CHECK(fs[0].passages[i].text == "consistent " + std::to_string(i));
    CHECK(fs[0].passages[2].gold);

    auto degenerate = sets();
    degenerate["p0"].sarcastic_consistent = degenerate["p0"].original;
    auto d = build_nq_fs({context("q", {})}, degenerate);
    CHECK(d[0].passages[0].kind == VariantKind::kSarcasticConsistent);

    auto missing = sets();
    missing.erase("p3");
    CHECK_THROWS_AS(build_nq_fs({context("q", {})}, missing), InputError);
  }

  TEST_CASE("partially sarcastic: gold at slot 4") {
    auto psm = build_nq_psm({context("q", {4})}, sets(), 5)[0];
    REQUIRE(psm.passages.size() == 10);
    CHECK(psm.passages[4].kind == VariantKind::kSarcasticDistorted);
    CHECK(psm.passages[4].text == "distorted 4");
    CHECK(psm.passages[5].kind == VariantKind::kSarcasticDistorted);
    CHECK(psm.passages[6].passage_id == "p4");
    CHECK(psm.passages[6].kind == VariantKind::kOriginal);
    CHECK(psm.passages[6].gold);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(psm.passages[i].passage_id != "p8");
      CHECK(psm.passages[i].passage_id != "p9");
    }
    CHECK(count_kind(psm, VariantKind::kSarcasticConsistent) == 2);
  }

  TEST_CASE("property: partially sarcastic composition and placement") {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      for (std::size_t g = 0; g < 10; ++g) {
        auto ctx = context("q" + std::to_string(seed), {g});
        auto psm = build_nq_psm({ctx}, sets(), seed)[0];
        REQUIRE(psm.passages.size() == 10);
        CHECK(count_kind(psm, VariantKind::kSarcasticDistorted) == 2);
        CHECK(count_kind(psm, VariantKind::kSarcasticConsistent) == 2);
        CHECK(count_kind(psm, VariantKind::kOriginal) == 6);
        // The gold passage survives unchanged, right after the distorted pair.
        std::size_t at = 0;
        while (at < 10 && !(psm.passages[at].gold && psm.passages[at].kind == VariantKind::kOriginal)) ++at;
        REQUIRE(at < 10);
        REQUIRE(at >= 2);
        CHECK(psm.passages[at - 1].kind == VariantKind::kSarcasticDistorted);
        CHECK(psm.passages[at - 2].kind == VariantKind::kSarcasticDistorted);
        CHECK(at == std::min<std::size_t>(g + 2, 9));
      }
      auto none = build_nq_psm({context("n" + std::to_string(seed), {})}, sets(), seed)[0];
      CHECK(count_kind(none, VariantKind::kSarcasticDistorted) == 2);
      CHECK(count_kind(none, VariantKind::kSarcasticConsistent) == 2);
    }
  }

  TEST_CASE("partially sarcastic contexts are seeded") {
    std::vector<RwiContext> ctxs;
    for (int i = 0; i < 20; ++i) ctxs.push_back(context("q" + std::to_string(i), {}));
    CHECK(build_nq_psm(ctxs, sets(), 9) == build_nq_psm(ctxs, sets(), 9));
    CHECK(build_nq_psm(ctxs, sets(), 9) != build_nq_psm(ctxs, sets(), 10));
    auto short_ctx = context("q", {});
    short_ctx.passages.pop_back();
    CHECK_THROWS_AS(build_nq_psm({short_ctx}, sets(), 1), InputError);
  }

  TEST_CASE("retrieval over the expanded corpus") {
    std::vector<Passage> passages = {{"p0", "original 0", {}, {}, {}}, {"p1", "original 1", {}, {}, {}}};
    EmbeddingMatrix pe({"p0", "p1"}, 2, {0.5f, 0.0f, 0.0f, 1.0f});
    EmbeddingMatrix de({"p1"}, 2, {1.0f, 0.0f});
    std::vector<Query> queries = {{"q", "who?", {"ada"}}};
    EmbeddingMatrix qe({"q"}, 2, {1.0f, 0.0f});

    auto corpus = make_expanded_corpus(passages, pe, sets(2), de);
    CHECK(corpus.index.rows() == 3);
    CHECK(corpus.entries.contains("p1#distorted"));
    auto psa = build_nq_psa(queries, qe, corpus, 2)[0];
    REQUIRE(psa.passages.size() == 2);
    CHECK(psa.passages[0].kind == VariantKind::kSarcasticDistorted);
    CHECK(psa.passages[0].text == "distorted 1");
    CHECK(psa.passages[1].passage_id == "p0");

    auto plain = make_expanded_corpus(passages, pe, sets(2), EmbeddingMatrix{});
    auto base_psa = build_nq_psa(queries, qe, plain, 2)[0];
    std::map<std::string, const Passage*> by_id = {{"p0", &passages[0]}, {"p1", &passages[1]}};
    auto base = make_base_context(queries[0], top_k_mips(qe.row(0), pe, 2), by_id, sets(2), 2);
    CHECK(base_psa == base);
  }

  TEST_CASE("neutralization makes one call per passage") {
    auto mock = std::make_shared<MockBackend>();
    Gateway gw(pool({"tr"}), mock);
    auto out = neutralize_context(context("q", {1}), gw, {"tr", false, 0.0});
    CHECK(mock->total_calls() == 10);
    CHECK(out.failures == 0);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(out.context.passages[i].text == "original " + std::to_string(i));
      CHECK(out.context.passages[i].prior_text == "original " + std::to_string(i));
      CHECK(out.context.passages[i].kind == VariantKind::kNeutralized);
    }
  }

  TEST_CASE("neutralization prompt names the tag only when asked") {
    auto mock = std::make_shared<MockBackend>();
    std::vector<std::string> prompts;
    std::mutex mu;
    mock->set_behavior("*", [&](const ChatCall& c) {
      std::lock_guard lock(mu);
      prompts.push_back(c.user_prompt);
      return std::string("calm");
    });
    Gateway gw(pool({"tr"}), mock);
    auto ctx = context("q", {});
    ctx.passages.resize(1);
    ctx.passages[0].intent_tag = "sarcasm";
    neutralize_context(ctx, gw, {"tr", false, 0.0});
    neutralize_context(ctx, gw, {"tr", true, 0.0});
    REQUIRE(prompts.size() == 2);
    CHECK(prompts[0].find("from its current tone to neutral") != std::string::npos);
    CHECK(prompts[1].find("from sarcasm to neutral") != std::string::npos);
  }

  TEST_CASE("failed neutralization keeps the passage") {
    auto mock = std::make_shared<MockBackend>();
    mock->fail_next("tr", 3, 500);
    Gateway gw(pool({"tr"}), mock);
    auto out = neutralize_context(context("q", {}), gw, {"tr", false, 0.0});
    CHECK(out.failures == 3);
    CHECK(count_kind(out.context, VariantKind::kNeutralized) == 7);
    CHECK(count_kind(out.context, VariantKind::kOriginal) == 3);
  }

  TEST_CASE("intent tags") {
    CHECK(parse_intent_tag("Sarcasm.") == Emotion("sarcasm"));
    CHECK(parse_intent_tag("  anger\n") == Emotion("anger"));
    CHECK_FALSE(parse_intent_tag("purple"));
    auto mock = std::make_shared<MockBackend>();
    mock->set_behavior("tag", mock::fixed("purple"));
    Gateway gw(pool({"tag"}), mock);
    CHECK(tag_intent("text", gw, "tag") == "neutral");
    mock->set_behavior("tag", mock::fixed("sarcasm"));
    CHECK(tag_intent("text", gw, "tag") == "sarcasm");
    mock->fail_next("tag", 1, 500);
    CHECK(tag_intent("text", gw, "tag") == "neutral");
  }

  TEST_CASE("exact match") {
    CHECK(normalize_answer("The  Eiffel Tower!") == "eiffel tower");
    CHECK(normalize_answer("an apple, a pear") == "apple pear");
    CHECK(score_em("It is the Eiffel Tower.", {"eiffel tower"}));
    CHECK_FALSE(score_em("Paris", {"eiffel tower"}));
    CHECK_FALSE(score_em("anything", {""}));
    CHECK(score_em("Ada Lovelace wrote it", {"nobody", "ada lovelace"}));
    for (std::string s : {"The  Eiffel Tower!", "A-B c", "  x  ", "Ünï Cödé"}) {
      CHECK(normalize_answer(normalize_answer(s)) == normalize_answer(s));
    }
  }

  TEST_CASE("reader prompt lists passages with tags") {
    auto ctx = context("q", {});
    ctx.passages.resize(2);
    ctx.passages[0].intent_tag = "humor";
    auto with = build_reader_prompt(ctx, true);
    CHECK(with.find("Passage 1 [intent: humor]:\noriginal 0") != std::string::npos);
    CHECK(with.find("Question: who?") != std::string::npos);
    CHECK(build_reader_prompt(ctx, false).find("[intent:") == std::string::npos);
  }

  TEST_CASE("results table and deltas") {
    ResultsTable t;
    t.set_accuracy(Condition::kBaseline, "r", Dataset::kNQFS, 46.9);
    t.set_accuracy(Condition::kTranslatorNeutralized, "r", Dataset::kNQFS, 50.7);
    auto d = compute_deltas(t);
    REQUIRE(d.by_dataset[Dataset::kNQFS].translator_vs_baseline);
    CHECK(*d.by_dataset[Dataset::kNQFS].translator_vs_baseline == doctest::Approx(3.8));
    CHECK_FALSE(d.by_dataset[Dataset::kNQFS].zeroshot_vs_baseline);
    CHECK(render_results_table(t, d).find("+3.8") != std::string::npos);

    ResultsTable empty = results_table({});
    CHECK(empty.empty());
    CHECK_FALSE(compute_deltas(empty).translator_vs_zeroshot_overall);
  }

  TEST_CASE("failed reader calls count as wrong unless lenient") {
    std::vector<EvalResult> rs = {
        {"q1", "r", "ada", true, false, Condition::kBaseline, Dataset::kNQ},
        {"q2", "r", "", false, true, Condition::kBaseline, Dataset::kNQ},
    };
    CHECK(results_table(rs).get(Condition::kBaseline, "r", Dataset::kNQ)->accuracy == doctest::Approx(50.0));
    CHECK(results_table(rs, true).get(Condition::kBaseline, "r", Dataset::kNQ)->accuracy == doctest::Approx(100.0));
    testing::TempDir dir;
    save_results(dir / "r.jsonl", rs);
    CHECK(load_results(dir / "r.jsonl") == rs);
  }

  TEST_CASE("dataset files round trip") {
    testing::TempDir dir;
    auto psm = build_nq_psm({context("a", {3}), context("b", {})}, sets(), 2);
    psm[0].passages[0].intent_tag = "fear";
    save_rwi_dataset(dir / "d.jsonl", psm);
    CHECK(load_rwi_dataset(dir / "d.jsonl") == psm);
  }
}
