#include "judgeval/mock_server.hpp"

#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "judgeval/core.hpp"

namespace judgeval::client {

std::map<std::string, nlohmann::json> load_fixtures(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open fixtures file: " + path);

    std::map<std::string, nlohmann::json> fixtures;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = nlohmann::json::parse(line);
            fixtures[j.at("hash").get<std::string>()] = j.at("response");
        } catch (const std::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return fixtures;
}

std::string MockServer::wire_hash(const nlohmann::json& request_body) {
    std::vector<Message> messages;
    for (const auto& m : request_body.at("messages")) {
        messages.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
    }
    return canonical_hash(messages, request_body.value("model", ""),
                          request_body.value("temperature", 0.0),
                          request_body.value("logprobs", false));
}

nlohmann::json MockServer::fallback_response(const nlohmann::json& request_body) {
    static const std::string content =
        "Result: Tie\nExplanation: no stored response matched this request, so the candidates "
        "are treated as equal.";

    // Pseudo-tokens: at most one leading whitespace character followed by a
    // run of visible characters, every one at probability one half.
    const double lp = std::log(0.5);
    auto token_entries = nlohmann::json::array();
    std::size_t i = 0;
    while (i < content.size()) {
        std::size_t j = i;
        if (std::isspace(static_cast<unsigned char>(content[j]))) ++j;
        while (j < content.size() && !std::isspace(static_cast<unsigned char>(content[j]))) ++j;
        const std::string token = content.substr(i, j - i);
        auto alternatives = nlohmann::json::array();
        alternatives.push_back({{"token", token}, {"logprob", lp}});
        token_entries.push_back(
            {{"token", token}, {"logprob", lp}, {"top_logprobs", std::move(alternatives)}});
        i = j;
    }

    const int n = request_body.value("n", 1);
    const bool with_logprobs = request_body.value("logprobs", false);

    auto choices = nlohmann::json::array();
    for (int k = 0; k < n; ++k) {
        nlohmann::json choice = {{"index", k},
                                 {"message", {{"role", "assistant"}, {"content", content}}},
                                 {"finish_reason", "stop"}};
        if (with_logprobs) choice["logprobs"] = {{"content", token_entries}};
        choices.push_back(std::move(choice));
    }

    return {{"id", "mock-fallback"},
            {"object", "chat.completion"},
            {"model", request_body.value("model", "mock")},
            {"choices", std::move(choices)}};
}

struct MockServer::Impl {
    httplib::Server server;
    std::thread worker;
    int port = 0;

    std::mutex mutex;
    std::map<std::string, nlohmann::json> fixtures;
    MockStats stats;
    int failures_remaining = 0;
    int failure_status = 500;
    std::atomic<int> in_flight{0};

    void handle(const httplib::Request& req, httplib::Response& res) {
        const int now_in_flight = ++in_flight;

        nlohmann::json body;
        try {
            body = nlohmann::json::parse(req.body);
        } catch (const std::exception&) {
            res.status = 400;
            res.set_content(R"({"error":{"message":"invalid JSON body"}})", "application/json");
            --in_flight;
            return;
        }

        bool fail = false;
        int fail_status = 500;
        std::string hash;
        nlohmann::json reply;
        {
            std::lock_guard lock(mutex);
            stats.request_count += 1;
            stats.max_concurrent_seen = std::max(stats.max_concurrent_seen, now_in_flight);
            stats.request_bodies.push_back(body);

            if (failures_remaining > 0) {
                --failures_remaining;
                fail = true;
                fail_status = failure_status;
            } else {
                hash = wire_hash(body);
                const auto it = fixtures.find(hash);
                if (it != fixtures.end()) {
                    reply = it->second;
                } else {
                    stats.unmatched_count += 1;
                    reply = fallback_response(body);
                }
            }
        }

        if (fail) {
            res.status = fail_status;
            res.set_content(R"({"error":{"message":"injected failure"}})", "application/json");
        } else {
            res.set_content(reply.dump(), "application/json");
        }
        --in_flight;
    }
};

MockServer::MockServer() : impl_(std::make_unique<Impl>()) {
    auto handler = [impl = impl_.get()](const httplib::Request& req, httplib::Response& res) {
        impl->handle(req, res);
    };
    impl_->server.Post("/v1/chat/completions", handler);
    impl_->server.Post("/chat/completions", handler);
}

MockServer::MockServer(const std::string& fixtures_path) : MockServer() {
    impl_->fixtures = load_fixtures(fixtures_path);
}

MockServer::~MockServer() {
    stop();
}

void MockServer::add_fixture(const std::string& hash, nlohmann::json response) {
    std::lock_guard lock(impl_->mutex);
    impl_->fixtures[hash] = std::move(response);
}

void MockServer::set_failures_before_success(int n, int status) {
    std::lock_guard lock(impl_->mutex);
    impl_->failures_remaining = n;
    impl_->failure_status = status;
}

int MockServer::start() {
    impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
    if (impl_->port <= 0) throw Error("mock server failed to bind a port");
    impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return impl_->port;
}

void MockServer::start_blocking(const std::string& host, int port) {
    impl_->port = port;
    if (!impl_->server.listen(host, port)) {
        throw Error("mock server failed to listen on " + host + ":" + std::to_string(port));
    }
}

void MockServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->worker.joinable()) impl_->worker.join();
}

std::string MockServer::base_url() const {
    return "http://127.0.0.1:" + std::to_string(impl_->port);
}

MockStats MockServer::stats() const {
    std::lock_guard lock(impl_->mutex);
    return impl_->stats;
}

} // namespace judgeval::client
