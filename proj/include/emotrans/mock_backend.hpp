#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <string>

#include "emotrans/llm_gateway.hpp"

namespace emotrans {

/// A parsed chat-completions request as the mock sees it.
struct ChatCall {
  std::string model;
  std::string system_prompt;
  std::string user_prompt;
  double temperature = 0;
  int max_tokens = 0;
};

/// Makes the mock reply with an HTTP error instead of a completion.
struct MockFailure {
  int status = 503;
};

using MockBehavior = std::function<std::string(const ChatCall&)>;

namespace mock {

/// Returns the user prompt verbatim.
MockBehavior echo_user();

/// Returns the payload of the user prompt: everything after the first blank
/// line, or the whole prompt if it has none. Every prompt this toolkit builds
/// places the passage after the instruction and a blank line, so this mock
/// "rewrites" a passage into itself.
MockBehavior echo_payload();

/// Emotion classifier stand-in: the first closed-set label whose stem occurs
/// in the payload, else "neutral".
MockBehavior lexicon_tagger();

MockBehavior fixed(std::string text);

/// Payload extraction rule shared with echo_payload.
std::string payload_of(const std::string& user_prompt);

}  // namespace mock

/// In-process backend that speaks the same wire formats as a real server
/// (chat completions and embeddings) without touching the network.
class MockBackend final : public Transport {
 public:
  MockBackend();

  HttpReply post_json(const std::string& base_url, const std::string& path,
                      const std::string& body, const HttpHeaders& headers,
                      std::chrono::milliseconds timeout) override;
  std::size_t network_calls() const override { return 0; }

  /// Behavior for a model id; "*" is the fallback (default: echo_payload).
  void set_behavior(const std::string& model_id, MockBehavior behavior);
  /// The next `count` chat calls to `model_id` fail with `status`.
  void fail_next(const std::string& model_id, int count, int status = 503);
  /// Simulated service time per chat call, for concurrency probes.
  void set_latency(std::chrono::milliseconds latency) { latency_ = latency; }

  /// Dimension of the hashed bag-of-words embeddings served on /v1/embeddings.
  void set_embedding_dim(int dim) { embedding_dim_ = dim; }
  /// Overrides the dimension for the n-th embeddings call (0-based), for tests.
  void set_embedding_dim_for_call(std::size_t call, int dim);

  std::size_t calls(const std::string& model_id) const;
  std::size_t total_calls() const { return total_calls_.load(); }
  std::size_t embedding_calls() const { return embedding_calls_.load(); }
  /// Peak number of simultaneously outstanding chat calls for a model.
  int max_concurrent(const std::string& model_id) const;

 private:
  HttpReply handle_chat(const std::string& body);
  HttpReply handle_embeddings(const std::string& body);

  mutable std::mutex mu_;
  std::map<std::string, MockBehavior> behaviors_;
  std::map<std::string, int> pending_failures_;
  std::map<std::string, int> failure_status_;
  std::map<std::string, std::size_t> calls_;
  std::map<std::string, int> in_flight_;
  std::map<std::string, int> peak_;
  std::map<std::size_t, int> dim_overrides_;
  std::atomic<std::size_t> total_calls_{0};
  std::atomic<std::size_t> embedding_calls_{0};
  std::chrono::milliseconds latency_{0};
  int embedding_dim_ = 64;
};

/// Hashed bag-of-words embedding used by the mock: each token adds +-1 to a
/// hashed coordinate, then the vector is L2-normalized.
std::vector<float> hashed_embedding(const std::string& text, int dim);

}  // namespace emotrans
