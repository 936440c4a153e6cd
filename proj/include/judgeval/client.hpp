#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "judgeval/confidence.hpp"
#include "judgeval/core.hpp"

namespace judgeval::client {

// Raised when logprobs were requested but the backend returned none, so the
// caller can degrade to a run without token probabilities.
class LogprobsUnsupportedError : public Error {
  public:
    using Error::Error;
};

// Network-level failure after all retries were spent.
class TransportError : public Error {
  public:
    using Error::Error;
};

// Non-retryable HTTP error from the backend.
class ApiError : public Error {
  public:
    ApiError(int status, const std::string& message) : Error(message), status_(status) {}
    int status() const { return status_; }

  private:
    int status_ = 0;
};

struct EndpointConfig {
    std::string base_url = "http://127.0.0.1:8080";
    // The key is only ever read from this environment variable, never from a
    // config file or flag.
    std::string api_key_env_var = "OPENAI_API_KEY";
    int timeout_ms = 30000;
    int max_retries = 3;
    int max_concurrent_requests = 4;
    // 0 disables the sliding-window rate limit.
    int requests_per_minute = 0;
    int retry_base_ms = 1000;
    // Empty disables the on-disk response cache.
    std::string cache_dir;
};

struct ChatRequest {
    std::vector<Message> messages;
    std::string model;
    double temperature = 0.0;
    int max_tokens = 1024;
    bool logprobs = false;
    int top_logprobs = 1;
    int n = 1;

    nlohmann::json to_wire() const;
    // Content-addressed identity of this request, shared with fixtures and
    // the response cache.
    std::string hash() const;
};

struct ChatChoice {
    std::string text;
    std::vector<confidence::TokenLogprob> tokens;
    bool has_logprobs = false;
    std::string finish_reason;
};

struct ChatResponse {
    std::vector<ChatChoice> choices;
    std::string model;
    std::string request_hash;
    std::int64_t latency_ms = 0;
    bool from_cache = false;
    nlohmann::json raw;
};

// Bounds both the number of in-flight requests and, optionally, the number
// of requests started per minute.
class RateLimiter {
  public:
    RateLimiter(int max_concurrent, int requests_per_minute);
    void acquire();
    void release();

  private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int in_flight_ = 0;
    int max_concurrent_ = 1;
    int requests_per_minute_ = 0;
    std::deque<std::chrono::steady_clock::time_point> window_;
};

// Splits a base URL into scheme://host[:port] and the chat completions path.
// A bare host gets the standard /v1/chat/completions; an explicit path is
// kept and /chat/completions is appended unless already present.
std::pair<std::string, std::string> split_endpoint(const std::string& base_url);

// Synchronous chat-completions client with retries, backoff, rate limiting,
// and an optional on-disk cache. Safe to share across threads.
class ChatClient {
  public:
    explicit ChatClient(EndpointConfig config);

    // Issues one request. Retries 429 and 5xx responses and transport
    // failures with exponential backoff. Throws LogprobsUnsupportedError when
    // logprobs were requested but missing from the reply.
    ChatResponse complete(const ChatRequest& request);

    const EndpointConfig& config() const { return config_; }

  private:
    ChatResponse parse_response(const ChatRequest& request, const nlohmann::json& body,
                                std::int64_t latency_ms, bool from_cache) const;
    std::optional<nlohmann::json> cache_load(const std::string& hash) const;
    void cache_store(const std::string& hash, const nlohmann::json& body) const;

    EndpointConfig config_;
    RateLimiter limiter_;
    std::string api_key_;
};

} // namespace judgeval::client
