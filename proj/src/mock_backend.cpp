#include "emotrans/mock_backend.hpp"

#include <cmath>
#include <thread>

#include "emotrans/analysis.hpp"
#include "emotrans/error.hpp"

namespace emotrans {

namespace mock {

std::string payload_of(const std::string& user_prompt) {
  auto pos = user_prompt.find("\n\n");
  if (pos == std::string::npos) return user_prompt;
  return user_prompt.substr(pos + 2);
}

MockBehavior echo_user() {
  return [](const ChatCall& call) { return call.user_prompt; };
}

MockBehavior echo_payload() {
  return [](const ChatCall& call) { return payload_of(call.user_prompt); };
}

MockBehavior lexicon_tagger() {
  static const std::pair<std::string_view, std::string_view> stems[] = {
      {"anger", "ang"},       {"condescension", "condescen"}, {"disgust", "disgust"},
      {"envy", "envi"},       {"envy", "envy"},               {"excitement", "excit"},
      {"fear", "fear"},       {"happiness", "happ"},          {"humor", "humor"},
      {"sadness", "sad"},     {"sarcasm", "sarcas"},          {"surprise", "surpris"},
  };
  return [](const ChatCall& call) {
    std::string text = to_lower_ascii(payload_of(call.user_prompt));
    std::string best = std::string(kNeutral);
    std::size_t best_pos = std::string::npos;
    for (const auto& [label, stem] : stems) {
      auto pos = text.find(stem);
      if (pos != std::string::npos && pos < best_pos) {
        best_pos = pos;
        best = label;
      }
    }
    return best;
  };
}

MockBehavior fixed(std::string text) {
  return [text = std::move(text)](const ChatCall&) { return text; };
}

}  // namespace mock

std::vector<float> hashed_embedding(const std::string& text, int dim) {
  std::vector<float> v(static_cast<std::size_t>(dim), 0.0f);
  for (const auto& token : tokenize(text)) {
    std::uint64_t h = mix64(fnv1a64(token));
    v[h % static_cast<std::uint64_t>(dim)] += (h >> 63) ? 1.0f : -1.0f;
  }
  double norm = 0;
  for (float x : v) norm += static_cast<double>(x) * x;
  if (norm > 0) {
    float inv = static_cast<float>(1.0 / std::sqrt(norm));
    for (float& x : v) x *= inv;
  }
  return v;
}

MockBackend::MockBackend() { behaviors_["*"] = mock::echo_payload(); }

void MockBackend::set_behavior(const std::string& model_id, MockBehavior behavior) {
  std::lock_guard lock(mu_);
  behaviors_[model_id] = std::move(behavior);
}

void MockBackend::fail_next(const std::string& model_id, int count, int status) {
  std::lock_guard lock(mu_);
  pending_failures_[model_id] = count;
  failure_status_[model_id] = status;
}

void MockBackend::set_embedding_dim_for_call(std::size_t call, int dim) {
  std::lock_guard lock(mu_);
  dim_overrides_[call] = dim;
}

std::size_t MockBackend::calls(const std::string& model_id) const {
  std::lock_guard lock(mu_);
  auto it = calls_.find(model_id);
  return it == calls_.end() ? 0 : it->second;
}

int MockBackend::max_concurrent(const std::string& model_id) const {
  std::lock_guard lock(mu_);
  auto it = peak_.find(model_id);
  return it == peak_.end() ? 0 : it->second;
}

HttpReply MockBackend::post_json(const std::string&, const std::string& path,
                                 const std::string& body, const HttpHeaders&,
                                 std::chrono::milliseconds) {
  if (path.ends_with("/chat/completions")) return handle_chat(body);
  if (path.ends_with("/embeddings")) return handle_embeddings(body);
  return HttpReply{404, R"({"error":"not found"})", ""};
}

HttpReply MockBackend::handle_chat(const std::string& body) {
  ChatCall call;
  try {
    auto j = json::parse(body);
    call.model = j.at("model").get<std::string>();
    for (const auto& m : j.at("messages")) {
      auto role = m.at("role").get<std::string>();
      auto content = m.at("content").get<std::string>();
      if (role == "system") call.system_prompt = content;
      if (role == "user") call.user_prompt = content;
    }
    call.temperature = j.value("temperature", 0.0);
    call.max_tokens = j.value("max_tokens", 0);
  } catch (const json::exception& e) {
    return HttpReply{400, json{{"error", e.what()}}.dump(), ""};
  }

  MockBehavior behavior;
  std::optional<int> fail_status;
  {
    std::lock_guard lock(mu_);
    ++calls_[call.model];
    int& inflight = ++in_flight_[call.model];
    peak_[call.model] = std::max(peak_[call.model], inflight);
    if (auto it = pending_failures_.find(call.model); it != pending_failures_.end() && it->second > 0) {
      --it->second;
      fail_status = failure_status_[call.model];
    }
    auto it = behaviors_.find(call.model);
    behavior = it != behaviors_.end() ? it->second : behaviors_.at("*");
  }
  total_calls_.fetch_add(1);
  if (latency_.count() > 0) std::this_thread::sleep_for(latency_);

  HttpReply reply;
  if (fail_status) {
    reply = HttpReply{*fail_status, R"({"error":"injected failure"})", ""};
  } else {
    try {
      std::string text = behavior(call);
      ordered_json out;
      out["id"] = "mock-" + std::to_string(total_calls_.load());
      out["object"] = "chat.completion";
      out["model"] = call.model;
      out["choices"] = ordered_json::array(
          {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}},
            {"finish_reason", "stop"}}});
      out["usage"] = {{"prompt_tokens", static_cast<int>(tokenize(call.user_prompt).size())},
                      {"completion_tokens", static_cast<int>(tokenize(text).size())}};
      reply = HttpReply{200, out.dump(-1, ' ', false, json::error_handler_t::replace), ""};
    } catch (const MockFailure& f) {
      reply = HttpReply{f.status, R"({"error":"mock failure"})", ""};
    }
  }
  {
    std::lock_guard lock(mu_);
    --in_flight_[call.model];
  }
  return reply;
}

HttpReply MockBackend::handle_embeddings(const std::string& body) {
  std::size_t call_index = embedding_calls_.fetch_add(1);
  int dim = embedding_dim_;
  {
    std::lock_guard lock(mu_);
    if (auto it = dim_overrides_.find(call_index); it != dim_overrides_.end()) dim = it->second;
  }
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    return HttpReply{400, json{{"error", e.what()}}.dump(), ""};
  }
  json data = json::array();
  for (const auto& text : j.value("input", json::array())) {
    data.push_back({{"embedding", hashed_embedding(text.get<std::string>(), dim)}});
  }
  json out{{"object", "list"}, {"data", data}, {"model", j.value("model", "mock")}};
  return HttpReply{200, out.dump(), ""};
}

}  // namespace emotrans
