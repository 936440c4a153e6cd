#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

namespace judgeval::client {

struct MockStats {
    int request_count = 0;
    int unmatched_count = 0;
    int max_concurrent_seen = 0;
    std::vector<nlohmann::json> request_bodies;
};

// Loads fixture lines of the form {"hash": ..., "response": ...} keyed by
// the canonical request hash.
std::map<std::string, nlohmann::json> load_fixtures(const std::string& path);

// In-process chat-completions stand-in. Requests whose canonical hash
// matches a fixture get the stored response; everything else gets a
// deterministic fallback (a Tie with every token at probability 0.5) so
// offline runs always complete.
class MockServer {
  public:
    MockServer();
    explicit MockServer(const std::string& fixtures_path);
    ~MockServer();

    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    void add_fixture(const std::string& hash, nlohmann::json response);

    // Next `n` requests fail with `status` before normal serving resumes.
    void set_failures_before_success(int n, int status = 500);

    // Binds an ephemeral port and serves on a background thread; returns the
    // port. start_blocking serves on the calling thread instead.
    int start();
    void start_blocking(const std::string& host, int port);
    void stop();

    std::string base_url() const;
    MockStats stats() const;

    // The hash a request body is matched under: messages, model, temperature,
    // and the logprobs flag, exactly as a client computes it.
    static std::string wire_hash(const nlohmann::json& request_body);
    static nlohmann::json fallback_response(const nlohmann::json& request_body);

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace judgeval::client
