#include "judgeval/client.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <httplib.h>

namespace judgeval::client {

nlohmann::json ChatRequest::to_wire() const {
    nlohmann::json body;
    body["model"] = model;
    auto msgs = nlohmann::json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.text}});
    body["messages"] = std::move(msgs);
    body["temperature"] = temperature;
    body["max_tokens"] = max_tokens;
    if (n > 1) body["n"] = n;
    if (logprobs) {
        body["logprobs"] = true;
        body["top_logprobs"] = top_logprobs;
    }
    return body;
}

std::string ChatRequest::hash() const {
    return canonical_hash(messages, model, temperature, logprobs);
}

RateLimiter::RateLimiter(int max_concurrent, int requests_per_minute)
    : max_concurrent_(std::max(1, max_concurrent)), requests_per_minute_(requests_per_minute) {}

void RateLimiter::acquire() {
    std::unique_lock lock(mutex_);
    for (;;) {
        const auto now = std::chrono::steady_clock::now();
        while (!window_.empty() && now - window_.front() >= std::chrono::minutes(1)) {
            window_.pop_front();
        }
        const bool slot_free = in_flight_ < max_concurrent_;
        const bool rate_ok = requests_per_minute_ <= 0 ||
                             window_.size() < static_cast<std::size_t>(requests_per_minute_);
        if (slot_free && rate_ok) break;
        if (slot_free && !rate_ok) {
            cv_.wait_until(lock, window_.front() + std::chrono::minutes(1));
        } else {
            cv_.wait(lock);
        }
    }
    ++in_flight_;
    if (requests_per_minute_ > 0) window_.push_back(std::chrono::steady_clock::now());
}

void RateLimiter::release() {
    {
        std::lock_guard lock(mutex_);
        --in_flight_;
    }
    cv_.notify_all();
}

std::pair<std::string, std::string> split_endpoint(const std::string& base_url) {
    if (base_url.empty()) throw ConfigError("endpoint URL is empty");

    std::string url = base_url;
    if (url.find("://") == std::string::npos) url = "http://" + url;

    const auto host_begin = url.find("://") + 3;
    const auto slash = url.find('/', host_begin);

    std::string host = slash == std::string::npos ? url : url.substr(0, slash);
    std::string path = slash == std::string::npos ? "" : url.substr(slash);
    while (!path.empty() && path.back() == '/') path.pop_back();

    static const std::string suffix = "/chat/completions";
    if (path.empty()) {
        path = "/v1" + suffix;
    } else if (path.size() < suffix.size() ||
               path.compare(path.size() - suffix.size(), suffix.size(), suffix) != 0) {
        path += suffix;
    }
    return {host, path};
}

namespace {

struct LimiterGuard {
    explicit LimiterGuard(RateLimiter& limiter) : limiter_(limiter) { limiter_.acquire(); }
    ~LimiterGuard() { limiter_.release(); }
    RateLimiter& limiter_;
};

int jitter_ms(int base_ms) {
    static thread_local std::mt19937 rng{std::random_device{}()};
    std::uniform_int_distribution<int> dist(0, std::max(1, base_ms / 2));
    return dist(rng);
}

} // namespace

ChatClient::ChatClient(EndpointConfig config)
    : config_(std::move(config)),
      limiter_(config_.max_concurrent_requests, config_.requests_per_minute) {
    if (const char* key = std::getenv(config_.api_key_env_var.c_str())) api_key_ = key;
}

std::optional<nlohmann::json> ChatClient::cache_load(const std::string& hash) const {
    if (config_.cache_dir.empty()) return std::nullopt;
    std::ifstream in(config_.cache_dir + "/" + hash + ".json");
    if (!in) return std::nullopt;
    try {
        return nlohmann::json::parse(in);
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

void ChatClient::cache_store(const std::string& hash, const nlohmann::json& body) const {
    if (config_.cache_dir.empty()) return;
    std::filesystem::create_directories(config_.cache_dir);
    std::ofstream out(config_.cache_dir + "/" + hash + ".json");
    out << body.dump();
}

ChatResponse ChatClient::complete(const ChatRequest& request) {
    const std::string hash = request.hash();
    if (auto cached = cache_load(hash)) {
        return parse_response(request, *cached, 0, true);
    }

    const auto [host, path] = split_endpoint(config_.base_url);
    const std::string body = request.to_wire().dump();

    LimiterGuard guard(limiter_);
    std::string last_error;

    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            const int delay = config_.retry_base_ms * (1 << (attempt - 1)) +
                              jitter_ms(config_.retry_base_ms);
            std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        }

        httplib::Client http(host);
        http.set_connection_timeout(0, config_.timeout_ms * 1000LL);
        http.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
        http.set_write_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
        if (!api_key_.empty()) {
            http.set_default_headers({{"Authorization", "Bearer " + api_key_}});
        }

        const auto started = std::chrono::steady_clock::now();
        auto res = http.Post(path, body, "application/json");
        const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - started)
                                 .count();

        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 200) {
            nlohmann::json parsed;
            try {
                parsed = nlohmann::json::parse(res->body);
            } catch (const std::exception& e) {
                throw ParseError(std::string("malformed response body: ") + e.what());
            }
            auto response = parse_response(request, parsed, latency, false);
            cache_store(hash, parsed);
            return response;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "status " + std::to_string(res->status);
            continue;
        }
        throw ApiError(res->status, "request rejected with status " + std::to_string(res->status) +
                                        ": " + res->body.substr(0, 512));
    }

    throw TransportError("request failed after " + std::to_string(config_.max_retries + 1) +
                         " attempts, last error: " + last_error);
}

ChatResponse ChatClient::parse_response(const ChatRequest& request, const nlohmann::json& body,
                                        std::int64_t latency_ms, bool from_cache) const {
    if (!body.contains("choices") || !body.at("choices").is_array() ||
        body.at("choices").empty()) {
        throw ParseError("no choices in response");
    }

    ChatResponse response;
    response.model = body.value("model", "");
    response.request_hash = request.hash();
    response.latency_ms = latency_ms;
    response.from_cache = from_cache;
    response.raw = body;

    for (const auto& c : body.at("choices")) {
        ChatChoice choice;
        const auto& message = c.at("message");
        if (message.contains("content") && !message.at("content").is_null()) {
            choice.text = message.at("content").get<std::string>();
        }
        choice.finish_reason = c.value("finish_reason", "");

        if (c.contains("logprobs") && c.at("logprobs").is_object() &&
            c.at("logprobs").contains("content") && c.at("logprobs").at("content").is_array()) {
            choice.has_logprobs = true;
            for (const auto& entry : c.at("logprobs").at("content")) {
                confidence::TokenLogprob t;
                t.token = entry.at("token").get<std::string>();
                t.logprob = entry.at("logprob").get<double>();
                // The sampled token's probability is reported among the top
                // alternatives; prefer that entry when it is present.
                if (entry.contains("top_logprobs") && entry.at("top_logprobs").is_array()) {
                    for (const auto& alt : entry.at("top_logprobs")) {
                        if (alt.value("token", "") == t.token) {
                            t.logprob = alt.at("logprob").get<double>();
                            break;
                        }
                    }
                }
                choice.tokens.push_back(std::move(t));
            }
        }
        response.choices.push_back(std::move(choice));
    }

    if (request.logprobs) {
        for (const auto& choice : response.choices) {
            if (!choice.has_logprobs) throw LogprobsUnsupportedError("logprobs unsupported");
        }
    }
    return response;
}

} // namespace judgeval::client
