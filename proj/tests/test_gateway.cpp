#include <thread>

#include "doctest.h"
#include "emotrans/error.hpp"
#include "emotrans/llm_gateway.hpp"
#include "emotrans/mock_backend.hpp"
#include "emotrans/retrieval.hpp"
#include "httplib.h"

using namespace emotrans;

namespace {

ModelConfig model(const std::string& id, int in_flight = 4) {
  ModelConfig m;
  m.model_id = id;
  m.base_url = "http://mock";
  m.max_in_flight = in_flight;
  return m;
}

RetryPolicy fast_retry() {
  return {std::chrono::milliseconds(1), 2.0, std::chrono::milliseconds(4)};
}

}  // namespace

TEST_SUITE("gateway") {
  TEST_CASE("echo mock returns the user prompt") {
    auto mock = std::make_shared<MockBackend>();
    mock->set_behavior("*", mock::echo_user());
    Gateway gw(ModelPool({model("m")}), mock);
    auto r = gw.generate({"m", "sys", "hello there", {}, {}});
    CHECK(r.text == "hello there");
    CHECK(r.model_id == "m");
    CHECK(r.attempt_count == 1);
    CHECK(mock->network_calls() == 0);
  }

  TEST_CASE("two failures then success gives attempt_count 3") {
    auto mock = std::make_shared<MockBackend>();
    mock->fail_next("m", 2, 503);
    ModelConfig m = model("m");
    m.max_retries = 3;
    Gateway gw(ModelPool({m}), mock, fast_retry());
    auto r = gw.generate({"m", "", "x\n\npayload", {}, {}});
    CHECK(r.attempt_count == 3);
    CHECK(r.text == "payload");
    CHECK(mock->calls("m") == 3);
  }

  TEST_CASE("exhausted retries raise a transport error with the last status") {
    auto mock = std::make_shared<MockBackend>();
    mock->fail_next("m", 10, 429);
    ModelConfig m = model("m");
    m.max_retries = 2;
    Gateway gw(ModelPool({m}), mock, fast_retry());
    try {
      gw.generate({"m", "", "x", {}, {}});
      FAIL("expected TransportError");
    } catch (const TransportError& e) {
      CHECK(e.status() == 429);
    }
    CHECK(mock->calls("m") == 3);
  }

  TEST_CASE("non-retryable status fails immediately") {
    auto mock = std::make_shared<MockBackend>();
    mock->fail_next("m", 1, 400);
    Gateway gw(ModelPool({model("m")}), mock, fast_retry());
    CHECK_THROWS_AS(gw.generate({"m", "", "x", {}, {}}), TransportError);
    CHECK(mock->calls("m") == 1);
  }

  TEST_CASE("unknown model id names the id") {
    Gateway gw(ModelPool({model("m")}), std::make_shared<MockBackend>());
    try {
      gw.generate({"nope", "", "x", {}, {}});
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("nope") != std::string::npos);
    }
  }

  TEST_CASE("model config validation") {
    CHECK_THROWS_AS(ModelPool({model("a"), model("a")}), ConfigError);
    auto bad = model("b");
    bad.max_in_flight = 0;
    CHECK_THROWS_AS(ModelPool({bad}), ConfigError);
    bad = model("b");
    bad.base_url.clear();
    CHECK_THROWS_AS(ModelPool({bad}), ConfigError);
  }

  TEST_CASE("unset api key variable is a configuration error") {
    CHECK_THROWS_AS(auth_headers("EMOTRANS_TEST_SURELY_UNSET_VAR"), ConfigError);
    CHECK(auth_headers("").empty());
  }

  TEST_CASE("retry backoff grows geometrically up to the cap") {
    RetryPolicy p;
    CHECK(p.delay_before(2).count() == 500);
    CHECK(p.delay_before(3).count() == 1000);
    CHECK(p.delay_before(20).count() == 30000);
    CHECK(is_retryable_status(0));
    CHECK(is_retryable_status(503));
    CHECK(is_retryable_status(429));
    CHECK_FALSE(is_retryable_status(401));
  }

  TEST_CASE("in-flight requests per model never exceed max_in_flight") {
    auto mock = std::make_shared<MockBackend>();
    mock->set_latency(std::chrono::milliseconds(5));
    Gateway gw(ModelPool({model("a", 2), model("b", 3)}), mock);
    std::vector<std::jthread> threads;
    for (int t = 0; t < 12; ++t) {
      threads.emplace_back([&, t] {
        for (int i = 0; i < 5; ++i) gw.generate({t % 2 ? "a" : "b", "", "x", {}, {}});
      });
    }
    threads.clear();
    CHECK(mock->max_concurrent("a") <= 2);
    CHECK(mock->max_concurrent("b") <= 3);
    CHECK(mock->max_concurrent("a") >= 1);
    CHECK(gw.total_capacity() == 5);
  }

  TEST_CASE("pool of one model takes every cell") {
    std::vector<Cell> cells;
    for (int i = 0; i < 50; ++i) cells.push_back({"p" + std::to_string(i), Emotion("anger")});
    auto m = assign_models(cells, ModelPool({model("solo")}), 3);
    for (const auto& [cell, id] : m) CHECK(id == "solo");
    CHECK_THROWS_AS(assign_models(cells, ModelPool(), 3), ConfigError);
  }

  TEST_CASE("assignment is deterministic") {
    std::vector<Cell> cells;
    for (int i = 0; i < 200; ++i) {
      cells.push_back({"p" + std::to_string(i), transform_emotions()[i % 11]});
    }
    ModelPool pool({model("a"), model("b"), model("c")});
    CHECK(assign_models(cells, pool, 9) == assign_models(cells, pool, 9));
    CHECK(assign_models(cells, pool, 9) != assign_models(cells, pool, 10));
  }

  TEST_CASE("five models over 100,000 cells share within one point of 20%") {
    ModelPool pool({model("m0"), model("m1"), model("m2"), model("m3"), model("m4")});
    std::vector<Cell> cells;
    for (int i = 0; i < 100000 / 11 + 1 && cells.size() < 100000; ++i) {
      for (const auto& e : transform_emotions()) {
        if (cells.size() == 100000) break;
        cells.push_back({"passage-" + std::to_string(i), e});
      }
    }
    REQUIRE(cells.size() == 100000);
    auto m = assign_models(cells, pool, 2024);
    std::map<std::string, std::size_t> share;
    for (const auto& [cell, id] : m) share[id]++;
    for (const auto& [id, n] : share) {
      INFO(id << " " << n);
      CHECK(std::abs(static_cast<double>(n) / 100000 - 0.2) < 0.01);
    }
  }

  TEST_CASE("http transport speaks the chat-completions wire format") {
    httplib::Server server;
    std::string seen_auth;
    json seen_body;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
      seen_auth = req.get_header_value("Authorization");
      seen_body = json::parse(req.body);
      json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "pong"}}}}}},
                    {"usage", {{"prompt_tokens", 7}, {"completion_tokens", 1}}}};
      res.set_content(reply.dump(), "application/json");
    });
    server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
      auto body = json::parse(req.body);
      json data = json::array();
      for (std::size_t i = 0; i < body["input"].size(); ++i) data.push_back({{"embedding", {1.0, double(i)}}});
      res.set_content(json{{"data", data}}.dump(), "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    ::setenv("EMOTRANS_TEST_KEY", "secret-token", 1);
    ModelConfig m = model("live");
    m.base_url = "http://127.0.0.1:" + std::to_string(port);
    m.api_key_env = "EMOTRANS_TEST_KEY";
    m.max_tokens = 16;
    auto transport = make_http_transport();
    Gateway gw(ModelPool({m}), transport);
    auto r = gw.generate({"live", "be brief", "ping", 0.25, {}});
    CHECK(r.text == "pong");
    CHECK(r.usage.prompt_tokens == 7);
    CHECK(seen_auth == "Bearer secret-token");
    CHECK(seen_body["model"] == "live");
    CHECK(seen_body["temperature"] == 0.25);
    CHECK(seen_body["max_tokens"] == 16);
    REQUIRE(seen_body["messages"].size() == 2);
    CHECK(seen_body["messages"][0]["role"] == "system");
    CHECK(seen_body["messages"][1]["content"] == "ping");
    CHECK(transport->network_calls() == 1);

    EmbeddingEndpoint ep;
    ep.base_url = m.base_url;
    ep.model = "emb";
    auto emb = embed_texts({"a", "b", "c"}, {"x", "y", "z"}, ep, *transport);
    CHECK(emb.rows() == 3);
    CHECK(emb.row(2)[1] == 2.0f);

    server.stop();
    worker.join();
  }
}
