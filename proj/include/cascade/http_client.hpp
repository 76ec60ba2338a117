#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <thread>

#include <httplib.h>

#include "cascade/error.hpp"
#include "cascade/io.hpp"
#include "cascade/llm.hpp"

namespace cascade {

inline constexpr const char* kDefaultAuthEnv = "CASCADE_LLM_API_KEY";

struct LlmEndpointConfig {
  std::string base_url;  // e.g. http://localhost:8000/v1
  std::string model_name;
  double temperature = 0.0;
  std::chrono::milliseconds timeout{60'000};
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::milliseconds max_backoff{8'000};
  std::optional<std::string> auth_token;       // from the environment only
  std::optional<std::string> transcript_path;  // JSONL of request/response pairs

  void validate() const {
    if (timeout.count() <= 0) throw ValidationError("endpoint timeout must be positive");
    if (max_retries < 0) throw ValidationError("max_retries must be >= 0");
    if (model_name.empty()) throw ValidationError("endpoint model name is empty");
  }

  /// Reads the bearer token from `env_var`, if set.
  void load_auth_from_env(const char* env_var = kDefaultAuthEnv) {
    if (const char* value = std::getenv(env_var); value && *value) {
      auth_token = value;
    }
  }
};

/// Delay before retry number `retry` (0-based): initial * 2^retry, capped.
inline std::chrono::milliseconds backoff_delay(const LlmEndpointConfig& config, int retry) {
  auto delay = config.initial_backoff.count();
  for (int i = 0; i < retry && delay < config.max_backoff.count(); ++i) delay *= 2;
  return std::chrono::milliseconds(std::min<long long>(delay, config.max_backoff.count()));
}

/// Chat-completions request body for a single-turn user prompt.
inline json chat_request_body(const LlmEndpointConfig& config, const std::string& prompt) {
  return json{{"model", config.model_name},
              {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
              {"temperature", config.temperature}};
}

/// Blocking client for an OpenAI-style POST {base_url}/chat/completions endpoint.
///
/// Transport failures, 429 and 5xx are retried with exponential backoff; other statuses fail
/// at once. Each call opens its own connection, so one client can serve many threads.
class HttpLlmClient final : public LlmBackend {
 public:
  explicit HttpLlmClient(LlmEndpointConfig config) : config_(std::move(config)) {
    config_.validate();
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch match;
    if (!std::regex_match(config_.base_url, match, url_re)) {
      throw ValidationError("bad endpoint base URL '" + config_.base_url + "'");
    }
    origin_ = match[1].str();
    std::string prefix = match[2].matched ? match[2].str() : "";
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    path_ = prefix + "/chat/completions";
  }

  TimedResponse complete(const std::string& prompt) override {
    const std::string body = chat_request_body(config_, prompt).dump();
    httplib::Headers headers;
    if (config_.auth_token) {
      headers.emplace("Authorization", "Bearer " + *config_.auth_token);
    }

    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(backoff_delay(config_, attempt - 1));
      }
      httplib::Client client(origin_);
      client.set_connection_timeout(config_.timeout);
      client.set_read_timeout(config_.timeout);
      client.set_write_timeout(config_.timeout);

      const auto start = std::chrono::steady_clock::now();
      auto result = client.Post(path_, headers, body, "application/json");
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;

      if (!result) {
        last_error = httplib::to_string(result.error());
        continue;
      }
      const int status = result->status;
      if (status >= 200 && status < 300) {
        TimedResponse response{extract_content(result->body), elapsed.count(),
                               static_cast<std::size_t>(attempt + 1)};
        record(body, status, result->body, response);
        return response;
      }
      const bool retryable = status == 429 || status >= 500;
      if (!retryable || attempt == config_.max_retries) {
        record(body, status, result->body, std::nullopt);
        throw HttpStatusError(status, result->body.substr(0, 200));
      }
    }
    throw TransportError("LLM endpoint " + origin_ + " unreachable after " +
                         std::to_string(config_.max_retries + 1) + " attempt(s): " + last_error);
  }

  std::string describe() const override { return config_.base_url + " model=" + config_.model_name; }

  const LlmEndpointConfig& config() const noexcept { return config_; }

 private:
  static std::string extract_content(const std::string& body) {
    auto reply = json::parse(body, nullptr, false);
    if (reply.is_discarded()) {
      throw TransportError("endpoint returned non-JSON body: " + body.substr(0, 200));
    }
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      throw TransportError("endpoint reply has no choices[0].message.content: " + body.substr(0, 200));
    }
  }

  void record(const std::string& request_body, int status, const std::string& response_body,
              const std::optional<TimedResponse>& response) {
    if (!config_.transcript_path) return;
    ordered_json line;
    line["request"] = json::parse(request_body);
    line["status"] = status;
    line["response"] = response_body;
    if (response) {
      line["latency_seconds"] = response->latency_seconds;
      line["attempts"] = response->attempt_count;
    }
    std::lock_guard lock(transcript_mutex_);
    std::ofstream out(*config_.transcript_path, std::ios::app | std::ios::binary);
    out << line.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
  }

  LlmEndpointConfig config_;
  std::string origin_;
  std::string path_;
  std::mutex transcript_mutex_;
};

}  // namespace cascade
