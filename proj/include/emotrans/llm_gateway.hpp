#pragma once

#include <chrono>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "emotrans/corpus.hpp"

namespace emotrans {

// ---------------------------------------------------------------------------
// Transport: the only place bytes leave the process.

struct HttpReply {
  int status = 0;     // 0 when no response was received
  std::string body;
  std::string error;  // transport-level failure description
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpReply post_json(const std::string& base_url, const std::string& path,
                              const std::string& body, const HttpHeaders& headers,
                              std::chrono::milliseconds timeout) = 0;
  /// Requests that actually went out over a socket.
  virtual std::size_t network_calls() const = 0;
};

/// HTTP(S) transport backed by cpp-httplib.
std::shared_ptr<Transport> make_http_transport();

// ---------------------------------------------------------------------------
// Models and requests

struct ModelConfig {
  std::string model_id;
  std::string base_url;
  std::string api_key_env;  // name of the env var holding the key; empty = no auth
  int max_in_flight = 4;
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  double temperature = 0.7;
  int max_tokens = 1024;
  int requests_per_minute = 0;  // 0 = unlimited

  bool operator==(const ModelConfig&) const = default;
};

/// Throws ConfigError on invalid fields.
void validate(const ModelConfig& config);

class ModelPool {
 public:
  ModelPool() = default;
  /// Throws ConfigError on duplicate ids or invalid configs.
  explicit ModelPool(std::vector<ModelConfig> models);

  const std::vector<ModelConfig>& models() const noexcept { return models_; }
  std::vector<std::string> ids() const;
  bool contains(const std::string& model_id) const;
  /// Throws ConfigError naming the id when absent.
  const ModelConfig& at(const std::string& model_id) const;
  bool empty() const noexcept { return models_.empty(); }
  std::size_t size() const noexcept { return models_.size(); }

 private:
  std::vector<ModelConfig> models_;
};

struct GenRequest {
  std::string model_id;
  std::string system_prompt;
  std::string user_prompt;
  std::optional<double> temperature;  // overrides the model default
  std::optional<int> max_tokens;
};

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct GenResponse {
  std::string text;
  std::string model_id;
  std::chrono::milliseconds latency{0};
  TokenUsage usage;
  int attempt_count = 0;
};

struct RetryPolicy {
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{30000};

  std::chrono::milliseconds delay_before(int attempt) const;  // attempt >= 2
};

/// Request body for the chat-completions wire format.
std::string chat_request_body(const std::string& model, const std::string& system_prompt,
                              const std::string& user_prompt, double temperature,
                              int max_tokens);

/// True for statuses worth retrying: no response, 408, 429 and 5xx.
bool is_retryable_status(int status);

struct RetryOutcome {
  HttpReply reply;
  int attempts = 0;
};

/// POSTs until a 2xx reply whose body `accept` approves, or the budget of
/// 1 + max_retries attempts is spent. Never throws on HTTP failure.
RetryOutcome post_with_retries(Transport& transport, const std::string& base_url,
                               const std::string& path, const std::string& body,
                               const HttpHeaders& headers, std::chrono::milliseconds timeout,
                               int max_retries, const RetryPolicy& policy,
                               const std::function<bool(const HttpReply&)>& accept);

/// Builds an Authorization header from the named env var, if any.
HttpHeaders auth_headers(const std::string& api_key_env);

/// Gateway for all generative calls. Safe for concurrent callers; each model
/// has its own bound on outstanding requests.
class Gateway {
 public:
  Gateway(ModelPool pool, std::shared_ptr<Transport> transport, RetryPolicy retry = {});
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Throws ConfigError for an unknown model, TransportError once retries run out.
  GenResponse generate(const GenRequest& request);

  const ModelPool& pool() const noexcept { return pool_; }
  Transport& transport() noexcept { return *transport_; }
  /// Sum of max_in_flight over the pool; a sensible worker count.
  std::size_t total_capacity() const;

 private:
  struct ModelSlots;
  ModelPool pool_;
  std::shared_ptr<Transport> transport_;
  RetryPolicy retry_;
  std::map<std::string, std::unique_ptr<ModelSlots>> slots_;
};

// ---------------------------------------------------------------------------
// Random model assignment

struct Cell {
  std::string passage_id;
  Emotion emotion;

  auto operator<=>(const Cell&) const = default;
};

/// Index into `pool_size` chosen by a keyed hash of (seed, passage, emotion).
std::size_t assigned_index(std::uint64_t seed, const Cell& cell, std::size_t pool_size);

/// Maps each cell to a model id from the pool. A pure function of
/// (seed, passage_id, emotion, pool order). Throws ConfigError on an empty pool.
std::map<Cell, std::string> assign_models(const std::vector<Cell>& cells, const ModelPool& pool,
                                          std::uint64_t seed);

}  // namespace emotrans
