#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "emotrans/error.hpp"
#include "emotrans/mock_backend.hpp"
#include "emotrans/retrieval.hpp"
#include "support.hpp"

using namespace emotrans;

namespace {

EmbeddingMatrix random_matrix(SeededRng& rng, std::size_t n, std::size_t dim, const std::string& prefix,
                              int levels = 0) {
  std::vector<std::string> ids;
  std::vector<float> values;
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back(prefix + std::to_string(i));
    for (std::size_t d = 0; d < dim; ++d) {
      // Few distinct levels produce many exact ties.
      float v = levels > 0 ? static_cast<float>(rng.uniform_index(levels)) / levels
                           : static_cast<float>(rng.uniform01() * 2 - 1);
      values.push_back(v);
    }
  }
  return EmbeddingMatrix(std::move(ids), dim, std::move(values));
}

}  // namespace

TEST_SUITE("retrieval") {
  TEST_CASE("worked example: k=2 returns a then c") {
    EmbeddingMatrix index({"a", "b", "c"}, 2, {1, 0, 0, 1, 0.5f, 0.5f});
    std::vector<float> q{1, 0};
    auto hits = top_k_mips(q, index, 2);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0] == Hit{"a", 1.0});
    CHECK(hits[1] == Hit{"c", 0.5});
  }

  TEST_CASE("single row index returns its exact dot product") {
    EmbeddingMatrix index({"only"}, 3, {0.25f, -2, 4});
    std::vector<float> q{2, 1, 0.5f};
    auto hits = top_k_mips(q, index, 1);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].score == doctest::Approx(0.5 - 2 + 2));
  }

  TEST_CASE("ties break by ascending id") {
    EmbeddingMatrix index({"b", "a"}, 2, {0, 1, 1, 0});
    std::vector<float> q{1, 1};
    auto hits = top_k_mips(q, index, 1);
    CHECK(hits[0].passage_id == "a");
  }

  TEST_CASE("k larger than the index, k zero and dim mismatch") {
    EmbeddingMatrix index({"a", "b"}, 2, {1, 0, 0, 1});
    std::vector<float> q{1, 2};
    CHECK(top_k_mips(q, index, 10).size() == 2);
    CHECK_THROWS_AS(top_k_mips(q, index, 0), std::invalid_argument);
    std::vector<float> bad{1, 2, 3};
    CHECK_THROWS_AS(top_k_mips(bad, index, 1), std::invalid_argument);
    CHECK(top_k_mips(q, EmbeddingMatrix({}, 2, {}), 3).empty());
  }

  TEST_CASE("matrix rejects non-finite values and wrong sizes") {
    CHECK_THROWS_AS(EmbeddingMatrix({"a"}, 2, {1}), InputError);
    CHECK_THROWS_AS(EmbeddingMatrix({"a"}, 1, {std::numeric_limits<float>::quiet_NaN()}), InputError);
  }

  TEST_CASE("property: scores are non-increasing and ids ordered within ties") {
    SeededRng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
      auto index = random_matrix(rng, 300, 8, "p", trial % 2 ? 3 : 0);
      auto q = random_matrix(rng, 1, 8, "q", trial % 2 ? 3 : 0);
      auto hits = top_k_mips(q.row(0), index, 50);
      for (std::size_t i = 1; i < hits.size(); ++i) {
        CHECK(hits[i - 1].score >= hits[i].score);
        if (hits[i - 1].score == hits[i].score) CHECK(hits[i - 1].passage_id < hits[i].passage_id);
      }
    }
  }

  TEST_CASE("property: result does not depend on index row order") {
    SeededRng rng(12);
    auto index = random_matrix(rng, 500, 6, "p", 4);
    auto q = random_matrix(rng, 1, 6, "q", 4);
    std::vector<std::size_t> order(index.rows());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::string> ids;
    std::vector<float> values;
    for (auto i : order) {
      ids.push_back(index.ids()[i]);
      auto r = index.row(i);
      values.insert(values.end(), r.begin(), r.end());
    }
    EmbeddingMatrix shuffled(ids, index.dim(), values);
    CHECK(top_k_mips(q.row(0), index, 25) == top_k_mips(q.row(0), shuffled, 25));
  }

  TEST_CASE("search_all matches per-query search with several workers") {
    SeededRng rng(13);
    auto index = random_matrix(rng, 200, 5, "p");
    auto queries = random_matrix(rng, 17, 5, "q");
    auto all = search_all(queries, index, 7, 4);
    REQUIRE(all.size() == 17);
    for (std::size_t i = 0; i < all.size(); ++i) {
      CHECK(all[i].query_id == queries.ids()[i]);
      CHECK(all[i].hits == top_k_mips(queries.row(i), index, 7));
    }
  }

  TEST_CASE("embedding files round trip bit-exactly") {
    testing::TempDir dir;
    SeededRng rng(14);
    auto m = random_matrix(rng, 9, 7, "id-");
    save_embeddings(dir / "m.emb", m);
    CHECK(load_embeddings(dir / "m.emb") == m);
    CHECK(std::filesystem::exists(ids_path_for(dir / "m.emb")));
    atomic_write(dir / "bad.emb", "NOPE");
    CHECK_THROWS_AS(load_embeddings(dir / "bad.emb"), InputError);
  }

  TEST_CASE("embedding endpoint: zero texts, order, and dimension mismatch") {
    auto mock = std::make_shared<MockBackend>();
    EmbeddingEndpoint ep;
    ep.base_url = "http://mock";
    ep.model = "e";
    ep.dim = 4;
    auto empty = embed_texts({}, {}, ep, *mock);
    CHECK(empty.rows() == 0);
    CHECK(empty.dim() == 4);
    CHECK(mock->embedding_calls() == 0);

    mock->set_embedding_dim(4);
    auto m = embed_texts({"x", "y"}, {"first text", "second text"}, ep, *mock);
    CHECK(m.rows() == 2);
    CHECK(m.dim() == 4);
    CHECK(m.ids() == std::vector<std::string>{"x", "y"});
    auto expect = hashed_embedding("second text", 4);
    CHECK(std::equal(expect.begin(), expect.end(), m.row(1).begin()));

    ep.dim = 0;
    ep.batch_size = 1;
    mock->set_embedding_dim_for_call(mock->embedding_calls() + 1, 5);
    CHECK_THROWS_AS(embed_texts({"x", "y"}, {"a", "b"}, ep, *mock), InputError);
    CHECK(mock->network_calls() == 0);
  }

  TEST_CASE("embedding endpoint failure surfaces the last status") {
    struct Failing : Transport {
      HttpReply post_json(const std::string&, const std::string&, const std::string&, const HttpHeaders&,
                          std::chrono::milliseconds) override {
        return {503, "", ""};
      }
      std::size_t network_calls() const override { return 0; }
    } failing;
    EmbeddingEndpoint ep;
    ep.base_url = "http://x";
    ep.max_retries = 1;
    RetryPolicy fast{std::chrono::milliseconds(1), 1.0, std::chrono::milliseconds(1)};
    try {
      embed_texts({"a"}, {"t"}, ep, failing, fast);
      FAIL("expected TransportError");
    } catch (const TransportError& e) {
      CHECK(e.status() == 503);
    }
  }
}
