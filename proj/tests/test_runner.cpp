#include <doctest.h>

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "judgeval/client.hpp"
#include "judgeval/core.hpp"
#include "judgeval/mock_server.hpp"
#include "judgeval/runner.hpp"
#include "judgeval/strategy.hpp"

using namespace judgeval;
using namespace judgeval::runner;
using nlohmann::json;

namespace {

EvaluationRecord record_with(std::optional<Preference> preference) {
    EvaluationRecord rec;
    rec.instance_id = "x";
    if (preference) rec.verdict = Verdict::make_preference(*preference);
    return rec;
}

// What the half-count rule must produce, written out directly.
WeightedTally expected_tally(Preference f, Preference s) {
    WeightedTally t;
    auto slot = [&t](Preference p) -> double& {
        if (p == Preference::R1) return t.win;
        if (p == Preference::R2) return t.lose;
        return t.tie;
    };
    slot(f) += 0.5;
    slot(s) += 0.5;
    return t;
}

EvalInstance pairwise_instance(const std::string& id) {
    EvalInstance inst;
    inst.id = id;
    inst.instruction = "Which city is the capital of France? Answer briefly.";
    inst.responses = {{"model-a", "Paris.", std::nullopt, std::nullopt},
                      {"model-b", "London, I believe.", std::nullopt, std::nullopt}};
    return inst;
}

// The request evaluate_once would send for this bundle, for fixture keying.
client::ChatRequest judge_request(const strategy::PromptBundle& bundle,
                                  const JudgeConfig& judge) {
    client::ChatRequest request;
    request.messages = bundle.messages;
    request.model = judge.model;
    request.temperature = judge.temperature;
    request.max_tokens = judge.max_output_tokens;
    request.logprobs = judge.request_logprobs;
    return request;
}

// Splits like the mock does: optional leading whitespace plus a visible run.
json tokens_for(const std::string& content, double logprob) {
    auto entries = json::array();
    std::size_t i = 0;
    while (i < content.size()) {
        std::size_t j = i;
        if (std::isspace(static_cast<unsigned char>(content[j]))) ++j;
        while (j < content.size() && !std::isspace(static_cast<unsigned char>(content[j]))) ++j;
        entries.push_back({{"token", content.substr(i, j - i)}, {"logprob", logprob}});
        i = j;
    }
    return entries;
}

json reply_choice(const std::string& content, std::optional<double> logprob) {
    json choice = {{"index", 0},
                   {"message", {{"role", "assistant"}, {"content", content}}},
                   {"finish_reason", "stop"}};
    if (logprob) choice["logprobs"] = {{"content", tokens_for(content, *logprob)}};
    return choice;
}

json reply_body(const std::vector<json>& choices) {
    return {{"id", "mock"}, {"model", "judge-1"}, {"choices", choices}};
}

} // namespace

TEST_CASE("pair aggregation halves each parsed leg, checked against all nine outcomes") {
    const Preference prefs[] = {Preference::R1, Preference::R2, Preference::Tie};
    for (auto f : prefs) {
        for (auto s : prefs) {
            auto tally = aggregate_swapped_pair(record_with(f), record_with(s));
            CHECK(tally == expected_tally(f, s));
            // Weights always partition one whole instance.
            CHECK(tally.win + tally.lose + tally.tie == 1.0);
            CHECK(!tally.partial);
        }
    }
}

TEST_CASE("a lone parsed leg carries full weight and marks the pair partial") {
    auto only_forward = aggregate_swapped_pair(record_with(Preference::R1), record_with({}));
    CHECK(only_forward.win == 1.0);
    CHECK(only_forward.partial);

    auto only_swapped = aggregate_swapped_pair(record_with({}), record_with(Preference::Tie));
    CHECK(only_swapped.tie == 1.0);
    CHECK(only_swapped.partial);

    auto neither = aggregate_swapped_pair(record_with({}), record_with({}));
    CHECK(neither == WeightedTally{0.0, 0.0, 0.0, true});
}

TEST_CASE("the disagree-as-tie variant converts split pairs into whole ties") {
    const Preference prefs[] = {Preference::R1, Preference::R2, Preference::Tie};
    for (auto f : prefs) {
        for (auto s : prefs) {
            auto tally = aggregate_swapped_pair(record_with(f), record_with(s), true);
            if (f == s) {
                CHECK(tally == expected_tally(f, s));
            } else {
                CHECK(tally == WeightedTally{0.0, 0.0, 1.0, false});
            }
        }
    }
    // Partial pairs have no disagreement to convert.
    auto partial = aggregate_swapped_pair(record_with(Preference::R2), record_with({}), true);
    CHECK(partial.lose == 1.0);
    CHECK(partial.partial);
}

TEST_CASE("pair aggregation refuses score verdicts") {
    EvaluationRecord graded;
    graded.verdict = Verdict::make_score(5);
    CHECK_THROWS_WITH_AS(aggregate_swapped_pair(graded, graded),
                         "pair aggregation needs preference verdicts", ValidationError);
}

TEST_CASE("weighted tallies accumulate") {
    WeightedTally total;
    total += WeightedTally{0.5, 0.0, 0.5, false};
    total += WeightedTally{1.0, 0.0, 0.0, true};
    CHECK(total == WeightedTally{1.5, 0.0, 0.5, true});
}

TEST_CASE("flatten interleaves forward and swapped legs in instance order") {
    PairedRecord a;
    a.forward.instance_id = "a";
    a.forward.order = PresentationOrder::Forward;
    a.swapped.instance_id = "a";
    a.swapped.order = PresentationOrder::Swapped;
    PairedRecord b = a;
    b.forward.instance_id = "b";
    b.swapped.instance_id = "b";

    auto flat = flatten({a, b});
    REQUIRE(flat.size() == 4);
    CHECK(flat[0].instance_id == "a");
    CHECK(flat[0].order == PresentationOrder::Forward);
    CHECK(flat[1].order == PresentationOrder::Swapped);
    CHECK(flat[2].instance_id == "b");
}

TEST_CASE("run manifests round-trip through JSON, with and without a sample count") {
    RunManifest m;
    m.run_id = "abc123def456";
    m.started_at = "2026-01-01T00:00:00Z";
    m.finished_at = "2026-01-01T00:00:09Z";
    m.endpoint = "http://127.0.0.1:9";
    m.dataset_path = "data.jsonl";
    m.dataset_hash = "ff00";
    m.template_version = "deadbeef0123";
    m.swap_enabled = true;
    m.instance_count = 5;
    m.request_count = 10;
    m.failed_count = 1;

    json j = m;
    CHECK(j.at("consistency_n").is_null());
    auto back = j.get<RunManifest>();
    CHECK(back.run_id == m.run_id);
    CHECK(back.swap_enabled);
    CHECK(!back.consistency_n.has_value());

    m.consistency_n = 20;
    json k = m;
    CHECK(k.at("consistency_n") == 20);
    CHECK(k.get<RunManifest>().consistency_n == 20);
}

TEST_CASE("the run id is content-derived and ignores record order") {
    EvaluationRecord r1;
    r1.request_hash = "aaa";
    r1.verdict = Verdict::make_preference(Preference::R1);
    EvaluationRecord r2;
    r2.request_hash = "bbb";

    JudgeConfig judge;
    auto m1 = build_manifest({r1, r2}, judge, "ep", "tv", 1);
    auto m2 = build_manifest({r2, r1}, judge, "ep", "tv", 1);
    CHECK(m1.run_id == m2.run_id);
    CHECK(m1.run_id.size() == 12);
    CHECK(m1.request_count == 2);
    CHECK(m1.failed_count == 1);
    CHECK(m1.swap_enabled);

    judge.task = TaskKind::SingleGrading;
    auto m3 = build_manifest({r1, r2}, judge, "ep", "tv", 1);
    CHECK(!m3.swap_enabled);
    CHECK(m3.run_id != m1.run_id);

    CHECK(utc_timestamp().size() == 20);
}

TEST_CASE("write_run persists records and manifest side by side") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "judgeval_run_test";
    fs::remove_all(dir);

    EvaluationRecord rec;
    rec.instance_id = "i";
    rec.verdict = Verdict::make_preference(Preference::Tie);
    JudgeConfig judge;
    auto manifest = build_manifest({rec}, judge, "ep", "tv", 1);
    write_run(dir.string(), {rec}, manifest);

    auto records = load_records_jsonl((dir / "records.jsonl").string());
    REQUIRE(records.size() == 1);
    CHECK(records[0] == rec);

    std::ifstream in(dir / "manifest.json");
    auto loaded = json::parse(in).get<RunManifest>();
    CHECK(loaded.run_id == manifest.run_id);
    fs::remove_all(dir);
}

TEST_CASE("a swapped pairwise run sends two requests and stores frame-corrected verdicts") {
    auto templates = strategy::TemplateSet::builtin();
    JudgeConfig judge;
    judge.model = "judge-1";

    auto inst = pairwise_instance("cap-1");
    auto forward_req =
        judge_request(strategy::render_pairwise(inst, judge, templates,
                                                PresentationOrder::Forward),
                      judge);
    auto swapped_req =
        judge_request(strategy::render_pairwise(inst, judge, templates,
                                                PresentationOrder::Swapped),
                      judge);

    client::MockServer server;
    // Both orders prefer the Paris answer: first slot forward, second swapped.
    server.add_fixture(forward_req.hash(),
                       reply_body({reply_choice("Result: 1\nExplanation: accurate.", -0.2)}));
    server.add_fixture(swapped_req.hash(),
                       reply_body({reply_choice("Result: 2\nExplanation: accurate.", -0.4)}));
    server.start();

    client::EndpointConfig endpoint;
    endpoint.base_url = server.base_url();
    Runner runner(endpoint, judge, templates);
    auto pairs = runner.run_pairwise_swapped({inst});
    server.stop();

    REQUIRE(pairs.size() == 1);
    CHECK(server.stats().request_count == 2);
    CHECK(server.stats().unmatched_count == 0);

    const auto& fwd = pairs[0].forward;
    const auto& swp = pairs[0].swapped;
    CHECK(fwd.order == PresentationOrder::Forward);
    CHECK(*fwd.verdict->preference == Preference::R1);
    CHECK(fwd.request_hash == forward_req.hash());

    // The swapped leg answered "2", which is the first response in the
    // original frame.
    CHECK(swp.order == PresentationOrder::Swapped);
    CHECK(*swp.verdict->preference == Preference::R1);

    // Confidence comes from the verdict token the judge emitted, before the
    // frame correction.
    CHECK(fwd.evaluation_confidence->value == doctest::Approx(std::exp(-0.2)).epsilon(1e-12));
    CHECK(swp.evaluation_confidence->value == doctest::Approx(std::exp(-0.4)).epsilon(1e-12));
    CHECK(*swp.evaluation_confidence->support.token == " 2");

    CHECK(aggregate_swapped_pair(fwd, swp) == WeightedTally{1.0, 0.0, 0.0, false});
}

TEST_CASE("a grading run scores each instance once") {
    auto templates = strategy::TemplateSet::builtin();
    JudgeConfig judge;
    judge.model = "judge-1";
    judge.task = TaskKind::SingleGrading;

    EvalInstance inst;
    inst.id = "g1";
    inst.instruction = "What is 2 + 2?";
    inst.responses = {{"model-a", "4", std::nullopt, std::nullopt}};

    auto request = judge_request(strategy::render_single_grading(inst, judge, templates), judge);
    client::MockServer server;
    server.add_fixture(request.hash(),
                       reply_body({reply_choice("Rating: 8\nExplanation: correct sum.", -0.15)}));
    server.start();

    client::EndpointConfig endpoint;
    endpoint.base_url = server.base_url();
    Runner runner(endpoint, judge, templates);
    auto records = runner.run_single_grading({inst});
    server.stop();

    REQUIRE(records.size() == 1);
    CHECK(server.stats().request_count == 1);
    CHECK(*records[0].verdict->score == 8);
    CHECK(records[0].verdict->explanation == "correct sum.");
    CHECK(records[0].evaluation_confidence->value ==
          doctest::Approx(std::exp(-0.15)).epsilon(1e-12));
    CHECK(records[0].flags.empty());
}

TEST_CASE("the reference strategy asks for an answer first, unless one is bundled") {
    auto templates = strategy::TemplateSet::builtin();
    JudgeConfig judge;
    judge.model = "judge-1";
    judge.strategy = StrategyKind::Reference;

    auto inst = pairwise_instance("ref-1");

    // Stage one request: answer the instruction, capped short, no logprobs.
    client::ChatRequest gen_req;
    gen_req.messages = strategy::render_reference_request(inst, judge, templates).messages;
    gen_req.model = judge.model;
    gen_req.temperature = 0.0;
    gen_req.max_tokens = 256;
    gen_req.logprobs = false;

    const std::string reference = "The capital of France is Paris.";
    auto forward_req =
        judge_request(strategy::render_pairwise(inst, judge, templates,
                                                PresentationOrder::Forward, reference),
                      judge);
    auto swapped_req =
        judge_request(strategy::render_pairwise(inst, judge, templates,
                                                PresentationOrder::Swapped, reference),
                      judge);

    client::MockServer server;
    server.add_fixture(gen_req.hash(), reply_body({reply_choice(reference, std::nullopt)}));
    server.add_fixture(forward_req.hash(), reply_body({reply_choice("Result: 1", -0.1)}));
    server.add_fixture(swapped_req.hash(), reply_body({reply_choice("Result: 2", -0.1)}));
    server.start();

    client::EndpointConfig endpoint;
    endpoint.base_url = server.base_url();
    Runner runner(endpoint, judge, templates);
    auto pairs = runner.run_pairwise_swapped({inst});
    server.stop();

    CHECK(server.stats().request_count == 3);
    CHECK(server.stats().unmatched_count == 0);
    CHECK(*pairs[0].forward.verdict->preference == Preference::R1);
    CHECK(*pairs[0].swapped.verdict->preference == Preference::R1);

    // An instance that already carries a reference answer skips stage one.
    auto carried = pairwise_instance("ref-2");
    carried.reference_answer = reference;
    client::MockServer server2;
    auto fwd2 = judge_request(strategy::render_pairwise(carried, judge, templates,
                                                        PresentationOrder::Forward, reference),
                              judge);
    auto swp2 = judge_request(strategy::render_pairwise(carried, judge, templates,
                                                        PresentationOrder::Swapped, reference),
                              judge);
    server2.add_fixture(fwd2.hash(), reply_body({reply_choice("Result: 1", -0.1)}));
    server2.add_fixture(swp2.hash(), reply_body({reply_choice("Result: 2", -0.1)}));
    server2.start();

    client::EndpointConfig endpoint2;
    endpoint2.base_url = server2.base_url();
    Runner runner2(endpoint2, judge, templates);
    runner2.run_pairwise_swapped({carried});
    server2.stop();
    CHECK(server2.stats().request_count == 2);
    CHECK(server2.stats().unmatched_count == 0);
}

TEST_CASE("an unparseable reply becomes a verdictless record, not a crash") {
    auto templates = strategy::TemplateSet::builtin();
    JudgeConfig judge;
    judge.model = "judge-1";

    auto inst = pairwise_instance("bad-1");
    auto forward_req = judge_request(
        strategy::render_pairwise(inst, judge, templates, PresentationOrder::Forward), judge);

    client::MockServer server;
    server.add_fixture(forward_req.hash(),
                       reply_body({reply_choice("I cannot decide between these.", -0.1)}));
    server.start();

    client::EndpointConfig endpoint;
    endpoint.base_url = server.base_url();
    Runner runner(endpoint, judge, templates);
    auto pairs = runner.run_pairwise_swapped({inst});
    server.stop();

    const auto& fwd = pairs[0].forward;
    CHECK(!fwd.verdict.has_value());
    REQUIRE(fwd.flags.size() == 1);
    CHECK(fwd.flags[0] == "parse failed: unparseable judgment");
    CHECK(fwd.raw_output == "I cannot decide between these.");

    // The swapped leg hit the mock fallback and still parsed.
    CHECK(*pairs[0].swapped.verdict->preference == Preference::Tie);
    auto tally = aggregate_swapped_pair(fwd, pairs[0].swapped);
    CHECK(tally == WeightedTally{0.0, 0.0, 1.0, true});
}

TEST_CASE("a backend without logprob support degrades to a flagged bare run") {
    auto templates = strategy::TemplateSet::builtin();
    JudgeConfig judge;
    judge.model = "judge-1";

    auto inst = pairwise_instance("nolp-1");
    auto with_lp = judge_request(
        strategy::render_pairwise(inst, judge, templates, PresentationOrder::Forward), judge);
    auto without_lp = with_lp;
    without_lp.logprobs = false;

    client::MockServer server;
    // Same textual reply under both hashes, but never any token logprobs.
    server.add_fixture(with_lp.hash(),
                       reply_body({reply_choice("Result: 1\nExplanation: ok.", std::nullopt)}));
    server.add_fixture(without_lp.hash(),
                       reply_body({reply_choice("Result: 1\nExplanation: ok.", std::nullopt)}));
    server.start();

    client::EndpointConfig endpoint;
    endpoint.base_url = server.base_url();
    Runner runner(endpoint, judge, templates);
    auto records = runner.run_pairwise_forward({inst});
    server.stop();

    REQUIRE(records.size() == 1);
    CHECK(*records[0].verdict->preference == Preference::R1);
    REQUIRE(records[0].flags.size() == 1);
    CHECK(records[0].flags[0] == "logprobs unsupported, retried without");
    CHECK(!records[0].evaluation_confidence.has_value());
    CHECK(records[0].request_hash == without_lp.hash());
    CHECK(server.stats().request_count == 2);
}

TEST_CASE("consistency sampling takes the modal verdict and its share") {
    auto templates = strategy::TemplateSet::builtin();
    JudgeConfig judge;
    judge.model = "judge-1";

    auto inst = pairwise_instance("cons-1");
    // The sampling request goes out at temperature 0.7 without logprobs,
    // whatever the judge config says.
    client::ChatRequest request = judge_request(
        strategy::render_pairwise(inst, judge, templates, PresentationOrder::Forward), judge);
    request.temperature = 0.7;
    request.logprobs = false;

    client::MockServer server;
    server.add_fixture(request.hash(),
                       reply_body({reply_choice("Result: 1\nExplanation: a.", std::nullopt),
                                   reply_choice("Result: 2\nExplanation: b.", std::nullopt),
                                   reply_choice("Result: 1\nExplanation: c.", std::nullopt),
                                   reply_choice("no verdict in this sample", std::nullopt),
                                   reply_choice("Result: 1\nExplanation: e.", std::nullopt)}));
    server.start();

    client::EndpointConfig endpoint;
    endpoint.base_url = server.base_url();
    Runner runner(endpoint, judge, templates);
    auto rec = runner.run_consistency(inst, 5);
    server.stop();

    CHECK(server.stats().request_count == 1);
    CHECK(server.stats().unmatched_count == 0);
    CHECK(server.stats().request_bodies[0].at("n") == 5);
    CHECK(server.stats().request_bodies[0].at("temperature") == 0.7);

    CHECK(*rec.verdict->preference == Preference::R1);
    CHECK(rec.evaluation_confidence->value == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(rec.evaluation_confidence->method == ConfidenceMethod::Consistency);
    CHECK(*rec.evaluation_confidence->support.sample_count == 4);
    REQUIRE(rec.flags.size() == 1);
    CHECK(rec.flags[0] == "4 of 5 samples parsed");

    CHECK_THROWS_AS(runner.run_consistency(inst, 0), ConfigError);
}
