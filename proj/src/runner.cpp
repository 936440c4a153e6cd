#include "judgeval/runner.hpp"

#include <algorithm>
#include <atomic>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <thread>

#include "judgeval/confidence.hpp"

namespace judgeval::runner {

WeightedTally& WeightedTally::operator+=(const WeightedTally& other) {
    win += other.win;
    lose += other.lose;
    tie += other.tie;
    partial = partial || other.partial;
    return *this;
}

namespace {

void add_weighted(WeightedTally& tally, const Verdict& verdict, double weight) {
    if (verdict.kind != Verdict::Kind::Preference) {
        throw ValidationError("pair aggregation needs preference verdicts");
    }
    switch (*verdict.preference) {
        case Preference::R1: tally.win += weight; break;
        case Preference::R2: tally.lose += weight; break;
        case Preference::Tie: tally.tie += weight; break;
    }
}

} // namespace

WeightedTally aggregate_swapped_pair(const EvaluationRecord& forward,
                                     const EvaluationRecord& swapped, bool disagree_as_tie) {
    WeightedTally tally;
    if (forward.verdict && swapped.verdict) {
        if (disagree_as_tie && forward.verdict->preference != swapped.verdict->preference) {
            add_weighted(tally, Verdict::make_preference(Preference::Tie), 1.0);
            return tally;
        }
        add_weighted(tally, *forward.verdict, 0.5);
        add_weighted(tally, *swapped.verdict, 0.5);
    } else if (forward.verdict) {
        add_weighted(tally, *forward.verdict, 1.0);
        tally.partial = true;
    } else if (swapped.verdict) {
        add_weighted(tally, *swapped.verdict, 1.0);
        tally.partial = true;
    } else {
        tally.partial = true;
    }
    return tally;
}

std::vector<EvaluationRecord> flatten(const std::vector<PairedRecord>& pairs) {
    std::vector<EvaluationRecord> records;
    records.reserve(pairs.size() * 2);
    for (const auto& pair : pairs) {
        records.push_back(pair.forward);
        records.push_back(pair.swapped);
    }
    return records;
}

void to_json(nlohmann::json& j, const RunManifest& m) {
    j = nlohmann::json{{"run_id", m.run_id},
                       {"started_at", m.started_at},
                       {"finished_at", m.finished_at},
                       {"endpoint", m.endpoint},
                       {"dataset_path", m.dataset_path},
                       {"dataset_hash", m.dataset_hash},
                       {"template_version", m.template_version},
                       {"judge", m.judge},
                       {"swap_enabled", m.swap_enabled},
                       {"consistency_n", nullptr},
                       {"instance_count", m.instance_count},
                       {"request_count", m.request_count},
                       {"failed_count", m.failed_count}};
    if (m.consistency_n) j["consistency_n"] = *m.consistency_n;
}

void from_json(const nlohmann::json& j, RunManifest& m) {
    m.run_id = j.at("run_id").get<std::string>();
    m.started_at = j.value("started_at", "");
    m.finished_at = j.value("finished_at", "");
    m.endpoint = j.value("endpoint", "");
    m.dataset_path = j.value("dataset_path", "");
    m.dataset_hash = j.value("dataset_hash", "");
    m.template_version = j.value("template_version", "");
    m.judge = j.at("judge").get<JudgeConfig>();
    m.swap_enabled = j.value("swap_enabled", false);
    if (j.contains("consistency_n") && !j.at("consistency_n").is_null()) {
        m.consistency_n = j.at("consistency_n").get<int>();
    }
    m.instance_count = j.value("instance_count", 0);
    m.request_count = j.value("request_count", 0);
    m.failed_count = j.value("failed_count", 0);
}

std::string utc_timestamp() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

RunManifest build_manifest(const std::vector<EvaluationRecord>& records, const JudgeConfig& judge,
                           const std::string& endpoint, const std::string& template_version,
                           int instance_count) {
    RunManifest m;
    m.endpoint = endpoint;
    m.template_version = template_version;
    m.judge = judge;
    m.instance_count = instance_count;
    m.swap_enabled = judge.task == TaskKind::Pairwise;

    std::vector<std::string> hashes;
    for (const auto& r : records) {
        if (!r.request_hash.empty()) hashes.push_back(r.request_hash);
        if (!r.verdict) m.failed_count += 1;
    }
    m.request_count = static_cast<int>(hashes.size());
    std::sort(hashes.begin(), hashes.end());

    std::string acc = template_version + "\n" + nlohmann::json(judge).dump() + "\n";
    for (const auto& h : hashes) {
        acc += h;
        acc += '\n';
    }
    m.run_id = sha256_hex(acc).substr(0, 12);
    m.started_at = utc_timestamp();
    m.finished_at = m.started_at;
    return m;
}

void write_run(const std::string& dir, const std::vector<EvaluationRecord>& records,
               const RunManifest& manifest) {
    std::filesystem::create_directories(dir);
    save_records_jsonl(records, dir + "/records.jsonl");
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw ConfigError("cannot write manifest: " + dir + "/manifest.json");
    out << nlohmann::json(manifest).dump(2) << "\n";
}

namespace {

// Runs fn(0..count-1) on up to `workers` threads, reusing the calling thread.
// fn must not throw.
template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
    const int usable = std::max(1, std::min<int>(workers, static_cast<int>(count)));
    std::atomic<std::size_t> next{0};
    auto body = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) break;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < usable; ++w) pool.emplace_back(body);
    body();
    for (auto& t : pool) t.join();
}

} // namespace

Runner::Runner(client::EndpointConfig endpoint, JudgeConfig judge, strategy::TemplateSet templates)
    : client_(std::move(endpoint)), judge_(std::move(judge)), templates_(std::move(templates)) {}

client::ChatResponse Runner::complete_with_fallback(client::ChatRequest request,
                                                    std::vector<std::string>& flags) {
    try {
        return client_.complete(request);
    } catch (const client::LogprobsUnsupportedError&) {
        flags.push_back("logprobs unsupported, retried without");
        request.logprobs = false;
        return client_.complete(request);
    }
}

std::optional<std::string> Runner::maybe_generate_reference(const EvalInstance& inst) {
    if (judge_.strategy != StrategyKind::Reference) return std::nullopt;
    if (inst.reference_answer) return std::nullopt;

    const auto bundle = strategy::render_reference_request(inst, judge_, templates_);
    client::ChatRequest request;
    request.messages = bundle.messages;
    request.model = judge_.model;
    request.temperature = reference_temperature;
    // The reference should be a short answer, not an essay.
    request.max_tokens = std::min(judge_.max_output_tokens, 256);
    request.logprobs = false;

    const auto response = client_.complete(request);
    return response.choices.front().text;
}

EvaluationRecord Runner::evaluate_once(const EvalInstance& inst, PresentationOrder order,
                                       const std::optional<std::string>& reference) {
    EvaluationRecord rec;
    rec.instance_id = inst.id;
    rec.order = order;
    for (const auto& r : inst.responses) {
        if (r.response_confidence) rec.response_confidences.push_back(*r.response_confidence);
    }

    strategy::PromptBundle bundle;
    try {
        bundle = judge_.task == TaskKind::SingleGrading
                     ? strategy::render_single_grading(inst, judge_, templates_, reference)
                     : strategy::render_pairwise(inst, judge_, templates_, order, reference);
    } catch (const Error& e) {
        rec.flags.push_back(std::string("render failed: ") + e.what());
        return rec;
    }

    client::ChatRequest request;
    request.messages = bundle.messages;
    request.model = judge_.model;
    request.temperature = judge_.temperature;
    request.max_tokens = judge_.max_output_tokens;
    request.logprobs = judge_.request_logprobs;

    client::ChatResponse response;
    try {
        response = complete_with_fallback(request, rec.flags);
    } catch (const Error& e) {
        rec.flags.push_back(std::string("request failed: ") + e.what());
        return rec;
    }

    rec.request_hash = response.request_hash;
    rec.latency_ms = response.latency_ms;
    const auto& choice = response.choices.front();
    rec.raw_output = choice.text;

    std::optional<strategy::ParsedJudgment> parsed;
    try {
        parsed = strategy::parse_judgment(choice.text, bundle.task, bundle.strategy);
    } catch (const ParseError& e) {
        rec.flags.push_back(std::string("parse failed: ") + e.what());
        return rec;
    }

    rec.parse_warnings = parsed->warnings;
    // Confidence is located against the literal the judge actually emitted,
    // before any frame correction.
    if (choice.has_logprobs) {
        try {
            rec.evaluation_confidence = confidence::evaluation_confidence(
                choice.tokens, parsed->verdict, bundle.verdict_marker);
        } catch (const Error& e) {
            rec.flags.push_back(std::string("confidence failed: ") + e.what());
        }
    }
    if (!rec.evaluation_confidence && parsed->verbalized_confidence) {
        rec.evaluation_confidence = parsed->verbalized_confidence;
    }

    rec.verdict =
        order == PresentationOrder::Swapped ? relabel(parsed->verdict) : parsed->verdict;
    return rec;
}

std::vector<EvaluationRecord> Runner::run_single_grading(
    const std::vector<EvalInstance>& instances) {
    std::vector<EvaluationRecord> records(instances.size());
    parallel_for(instances.size(), client_.config().max_concurrent_requests, [&](std::size_t i) {
        std::optional<std::string> reference;
        try {
            reference = maybe_generate_reference(instances[i]);
        } catch (const std::exception& e) {
            records[i].instance_id = instances[i].id;
            records[i].order = PresentationOrder::Forward;
            records[i].flags.push_back(std::string("reference generation failed: ") + e.what());
            return;
        }
        records[i] = evaluate_once(instances[i], PresentationOrder::Forward, reference);
    });
    return records;
}

std::vector<PairedRecord> Runner::run_pairwise_swapped(const std::vector<EvalInstance>& instances) {
    std::vector<PairedRecord> pairs(instances.size());
    parallel_for(instances.size(), client_.config().max_concurrent_requests, [&](std::size_t i) {
        std::optional<std::string> reference;
        try {
            reference = maybe_generate_reference(instances[i]);
        } catch (const std::exception& e) {
            for (auto order : {PresentationOrder::Forward, PresentationOrder::Swapped}) {
                auto& rec =
                    order == PresentationOrder::Forward ? pairs[i].forward : pairs[i].swapped;
                rec.instance_id = instances[i].id;
                rec.order = order;
                rec.flags.push_back(std::string("reference generation failed: ") + e.what());
            }
            return;
        }
        pairs[i].forward = evaluate_once(instances[i], PresentationOrder::Forward, reference);
        pairs[i].swapped = evaluate_once(instances[i], PresentationOrder::Swapped, reference);
    });
    return pairs;
}

std::vector<EvaluationRecord> Runner::run_pairwise_forward(
    const std::vector<EvalInstance>& instances) {
    std::vector<EvaluationRecord> records(instances.size());
    parallel_for(instances.size(), client_.config().max_concurrent_requests, [&](std::size_t i) {
        std::optional<std::string> reference;
        try {
            reference = maybe_generate_reference(instances[i]);
        } catch (const std::exception& e) {
            records[i].instance_id = instances[i].id;
            records[i].order = PresentationOrder::Forward;
            records[i].flags.push_back(std::string("reference generation failed: ") + e.what());
            return;
        }
        records[i] = evaluate_once(instances[i], PresentationOrder::Forward, reference);
    });
    return records;
}

EvaluationRecord Runner::run_consistency(const EvalInstance& inst, int samples) {
    if (samples < 1) throw ConfigError("sample count must be positive");

    EvaluationRecord rec;
    rec.instance_id = inst.id;
    rec.order = PresentationOrder::Forward;

    strategy::PromptBundle bundle;
    std::optional<std::string> reference;
    try {
        reference = maybe_generate_reference(inst);
        bundle = judge_.task == TaskKind::SingleGrading
                     ? strategy::render_single_grading(inst, judge_, templates_, reference)
                     : strategy::render_pairwise(inst, judge_, templates_,
                                                 PresentationOrder::Forward, reference);
    } catch (const Error& e) {
        rec.flags.push_back(std::string("render failed: ") + e.what());
        return rec;
    }

    client::ChatRequest request;
    request.messages = bundle.messages;
    request.model = judge_.model;
    // Agreement across samples needs variation, so the sampling temperature
    // is fixed rather than taken from the judge config.
    request.temperature = 0.7;
    request.max_tokens = judge_.max_output_tokens;
    request.logprobs = false;
    request.n = samples;

    client::ChatResponse response;
    try {
        response = client_.complete(request);
    } catch (const Error& e) {
        rec.flags.push_back(std::string("request failed: ") + e.what());
        return rec;
    }

    rec.request_hash = response.request_hash;
    rec.latency_ms = response.latency_ms;
    rec.raw_output = response.choices.front().text;

    std::vector<Verdict> verdicts;
    for (const auto& choice : response.choices) {
        try {
            verdicts.push_back(
                strategy::parse_judgment(choice.text, bundle.task, bundle.strategy).verdict);
        } catch (const ParseError&) {
        }
    }

    if (verdicts.empty()) {
        rec.flags.push_back("parse failed: no sample parseable");
        return rec;
    }
    if (verdicts.size() < static_cast<std::size_t>(samples)) {
        rec.flags.push_back(std::to_string(verdicts.size()) + " of " + std::to_string(samples) +
                            " samples parsed");
    }

    auto result = confidence::consistency_confidence(verdicts);
    rec.verdict = std::move(result.mode);
    rec.evaluation_confidence = std::move(result.confidence);
    return rec;
}

std::vector<EvaluationRecord> Runner::run_consistency_all(const std::vector<EvalInstance>& instances,
                                                          int samples) {
    std::vector<EvaluationRecord> records(instances.size());
    parallel_for(instances.size(), client_.config().max_concurrent_requests, [&](std::size_t i) {
        try {
            records[i] = run_consistency(instances[i], samples);
        } catch (const std::exception& e) {
            records[i].instance_id = instances[i].id;
            records[i].flags.push_back(std::string("request failed: ") + e.what());
        }
    });
    return records;
}

} // namespace judgeval::runner
