#include "emotrans/llm_gateway.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>

#include "emotrans/error.hpp"
#include "httplib.h"

namespace emotrans {

namespace {

class HttpTransport final : public Transport {
 public:
  HttpReply post_json(const std::string& base_url, const std::string& path,
                      const std::string& body, const HttpHeaders& headers,
                      std::chrono::milliseconds timeout) override {
    // Split "scheme://host:port/prefix" so a path prefix on the base URL survives.
    std::string origin = base_url;
    std::string prefix;
    auto scheme_end = base_url.find("://");
    auto path_start = base_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_start != std::string::npos) {
      origin = base_url.substr(0, path_start);
      prefix = base_url.substr(path_start);
      while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    }
    httplib::Client client(origin);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    calls_.fetch_add(1);
    auto result = client.Post(prefix + path, h, body, "application/json");
    HttpReply reply;
    if (!result) {
      reply.error = httplib::to_string(result.error());
      return reply;
    }
    reply.status = result->status;
    reply.body = result->body;
    return reply;
  }

  std::size_t network_calls() const override { return calls_.load(); }

 private:
  std::atomic<std::size_t> calls_{0};
};

}  // namespace

std::shared_ptr<Transport> make_http_transport() { return std::make_shared<HttpTransport>(); }

void validate(const ModelConfig& c) {
  if (c.model_id.empty()) throw ConfigError("model_id must be non-empty");
  if (c.base_url.empty()) throw ConfigError("model '" + c.model_id + "' has no base_url");
  if (c.max_in_flight < 1) throw ConfigError("model '" + c.model_id + "': max_in_flight must be >= 1");
  if (c.max_retries < 0) throw ConfigError("model '" + c.model_id + "': max_retries must be >= 0");
  if (c.temperature < 0) throw ConfigError("model '" + c.model_id + "': temperature must be >= 0");
  if (c.max_tokens < 1) throw ConfigError("model '" + c.model_id + "': max_tokens must be >= 1");
  if (c.timeout.count() <= 0) throw ConfigError("model '" + c.model_id + "': timeout must be > 0");
  if (c.requests_per_minute < 0) {
    throw ConfigError("model '" + c.model_id + "': requests_per_minute must be >= 0");
  }
}

ModelPool::ModelPool(std::vector<ModelConfig> models) : models_(std::move(models)) {
  for (std::size_t i = 0; i < models_.size(); ++i) {
    validate(models_[i]);
    for (std::size_t j = 0; j < i; ++j) {
      if (models_[j].model_id == models_[i].model_id) {
        throw ConfigError("duplicate model_id '" + models_[i].model_id + "' in pool");
      }
    }
  }
}

std::vector<std::string> ModelPool::ids() const {
  std::vector<std::string> out;
  for (const auto& m : models_) out.push_back(m.model_id);
  return out;
}

bool ModelPool::contains(const std::string& model_id) const {
  return std::any_of(models_.begin(), models_.end(),
                     [&](const ModelConfig& m) { return m.model_id == model_id; });
}

const ModelConfig& ModelPool::at(const std::string& model_id) const {
  for (const auto& m : models_) {
    if (m.model_id == model_id) return m;
  }
  throw ConfigError("unknown model id '" + model_id + "'");
}

std::chrono::milliseconds RetryPolicy::delay_before(int attempt) const {
  double ms = static_cast<double>(initial_backoff.count());
  for (int i = 2; i < attempt; ++i) ms *= multiplier;
  ms = std::min(ms, static_cast<double>(max_backoff.count()));
  return std::chrono::milliseconds(static_cast<long long>(ms));
}

std::string chat_request_body(const std::string& model, const std::string& system_prompt,
                              const std::string& user_prompt, double temperature,
                              int max_tokens) {
  ordered_json body;
  body["model"] = model;
  body["messages"] = ordered_json::array();
  if (!system_prompt.empty()) {
    body["messages"].push_back({{"role", "system"}, {"content", system_prompt}});
  }
  body["messages"].push_back({{"role", "user"}, {"content", user_prompt}});
  body["temperature"] = temperature;
  body["max_tokens"] = max_tokens;
  return body.dump(-1, ' ', false, json::error_handler_t::replace);
}

bool is_retryable_status(int status) {
  return status == 0 || status == 408 || status == 429 || status >= 500;
}

RetryOutcome post_with_retries(Transport& transport, const std::string& base_url,
                               const std::string& path, const std::string& body,
                               const HttpHeaders& headers, std::chrono::milliseconds timeout,
                               int max_retries, const RetryPolicy& policy,
                               const std::function<bool(const HttpReply&)>& accept) {
  RetryOutcome out;
  for (int attempt = 1; attempt <= 1 + max_retries; ++attempt) {
    if (attempt > 1) std::this_thread::sleep_for(policy.delay_before(attempt));
    out.attempts = attempt;
    out.reply = transport.post_json(base_url, path, body, headers, timeout);
    bool ok = out.reply.status >= 200 && out.reply.status < 300;
    if (ok && accept(out.reply)) return out;
    if (ok) {
      out.reply.error = "malformed response body";
      continue;  // a garbled 2xx body is treated as transient
    }
    if (!is_retryable_status(out.reply.status)) return out;
  }
  return out;
}

HttpHeaders auth_headers(const std::string& api_key_env) {
  HttpHeaders h;
  if (api_key_env.empty()) return h;
  const char* key = std::getenv(api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw ConfigError("environment variable " + api_key_env + " is not set");
  }
  h.emplace_back("Authorization", std::string("Bearer ") + key);
  return h;
}

// Counting semaphore sized at runtime plus a simple request-spacing limiter.
struct Gateway::ModelSlots {
  std::mutex mu;
  std::condition_variable cv;
  int available;
  std::chrono::steady_clock::time_point next_start{};
  std::chrono::nanoseconds spacing{0};

  explicit ModelSlots(const ModelConfig& c) : available(c.max_in_flight) {
    if (c.requests_per_minute > 0) {
      spacing = std::chrono::nanoseconds(60'000'000'000LL / c.requests_per_minute);
    }
  }

  void acquire() {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return available > 0; });
    --available;
    if (spacing.count() > 0) {
      auto now = std::chrono::steady_clock::now();
      auto start = std::max(now, next_start);
      next_start = start + spacing;
      lock.unlock();
      std::this_thread::sleep_until(start);
    }
  }

  void release() {
    {
      std::lock_guard lock(mu);
      ++available;
    }
    cv.notify_one();
  }
};

Gateway::Gateway(ModelPool pool, std::shared_ptr<Transport> transport, RetryPolicy retry)
    : pool_(std::move(pool)), transport_(std::move(transport)), retry_(retry) {
  if (!transport_) throw ConfigError("gateway needs a transport");
  for (const auto& m : pool_.models()) slots_.emplace(m.model_id, std::make_unique<ModelSlots>(m));
}

Gateway::~Gateway() = default;

std::size_t Gateway::total_capacity() const {
  std::size_t total = 0;
  for (const auto& m : pool_.models()) total += static_cast<std::size_t>(m.max_in_flight);
  return std::max<std::size_t>(total, 1);
}

GenResponse Gateway::generate(const GenRequest& request) {
  const ModelConfig& model = pool_.at(request.model_id);
  HttpHeaders headers = auth_headers(model.api_key_env);
  std::string body = chat_request_body(model.model_id, request.system_prompt, request.user_prompt,
                                       request.temperature.value_or(model.temperature),
                                       request.max_tokens.value_or(model.max_tokens));

  GenResponse response;
  response.model_id = model.model_id;
  auto parse = [&](const HttpReply& reply) {
    try {
      auto j = json::parse(reply.body);
      const auto& content = j.at("choices").at(0).at("message").at("content");
      if (!content.is_string()) return false;
      response.text = content.get<std::string>();
      if (auto usage = j.find("usage"); usage != j.end() && usage->is_object()) {
        response.usage.prompt_tokens = usage->value("prompt_tokens", 0);
        response.usage.completion_tokens = usage->value("completion_tokens", 0);
      }
      return true;
    } catch (const json::exception&) {
      return false;
    }
  };

  auto& slots = *slots_.at(model.model_id);
  auto started = std::chrono::steady_clock::now();
  slots.acquire();
  RetryOutcome outcome;
  try {
    outcome = post_with_retries(*transport_, model.base_url, "/v1/chat/completions", body, headers,
                                model.timeout, model.max_retries, retry_, parse);
  } catch (...) {
    slots.release();
    throw;
  }
  slots.release();
  response.attempt_count = outcome.attempts;
  response.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);
  bool ok = outcome.reply.status >= 200 && outcome.reply.status < 300 && outcome.reply.error.empty();
  if (!ok) {
    std::string detail = outcome.reply.error.empty() ? outcome.reply.body : outcome.reply.error;
    if (detail.size() > 200) detail.resize(200);
    throw TransportError("model '" + model.model_id + "' failed after " +
                             std::to_string(outcome.attempts) + " attempt(s), status " +
                             std::to_string(outcome.reply.status) + ": " + detail,
                         outcome.reply.status);
  }
  return response;
}

std::size_t assigned_index(std::uint64_t seed, const Cell& cell, std::size_t pool_size) {
  return static_cast<std::size_t>(keyed_hash(seed, {cell.passage_id, cell.emotion.name()}) %
                                  pool_size);
}

std::map<Cell, std::string> assign_models(const std::vector<Cell>& cells, const ModelPool& pool,
                                          std::uint64_t seed) {
  if (pool.empty()) throw ConfigError("model pool is empty");
  std::map<Cell, std::string> out;
  for (const auto& cell : cells) {
    out.emplace(cell, pool.models()[assigned_index(seed, cell, pool.size())].model_id);
  }
  return out;
}

}  // namespace emotrans
