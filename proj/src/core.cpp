#include "judgeval/core.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include <openssl/evp.h>

#include "judgeval/confidence.hpp"
#include "judgeval/dataset.hpp"

namespace judgeval {

std::string to_string(TaskKind t) {
    return t == TaskKind::SingleGrading ? "single_grading" : "pairwise";
}

std::string to_string(StrategyKind s) {
    switch (s) {
        case StrategyKind::Default: return "default";
        case StrategyKind::CoT: return "cot";
        case StrategyKind::Reference: return "reference";
        case StrategyKind::ConfiLM: return "confilm";
    }
    throw Error("unknown strategy kind");
}

std::string to_string(Category c) {
    switch (c) {
        case Category::Writing: return "writing";
        case Category::Roleplay: return "roleplay";
        case Category::Math: return "math";
        case Category::Reasoning: return "reasoning";
        case Category::Extraction: return "extraction";
        case Category::Other: return "other";
    }
    throw Error("unknown category");
}

std::string to_string(Preference p) {
    switch (p) {
        case Preference::R1: return "R1";
        case Preference::R2: return "R2";
        case Preference::Tie: return "Tie";
    }
    throw Error("unknown preference");
}

std::string to_string(PresentationOrder o) {
    return o == PresentationOrder::Forward ? "forward" : "swapped";
}

std::string to_string(ConfidenceMethod m) {
    switch (m) {
        case ConfidenceMethod::LogitVerdictToken: return "logit_verdict_token";
        case ConfidenceMethod::MeanTokenProb: return "mean_token_prob";
        case ConfidenceMethod::Verbalized: return "verbalized";
        case ConfidenceMethod::Consistency: return "consistency";
    }
    throw Error("unknown confidence method");
}

TaskKind task_from_string(const std::string& s) {
    if (s == "single_grading" || s == "grade") return TaskKind::SingleGrading;
    if (s == "pairwise" || s == "pair") return TaskKind::Pairwise;
    throw ConfigError("unknown task kind: " + s);
}

StrategyKind strategy_from_string(const std::string& s) {
    if (s == "default") return StrategyKind::Default;
    if (s == "cot") return StrategyKind::CoT;
    if (s == "reference") return StrategyKind::Reference;
    if (s == "confilm") return StrategyKind::ConfiLM;
    throw ConfigError("unknown strategy: " + s);
}

Category category_from_string(const std::string& s) {
    if (s == "writing") return Category::Writing;
    if (s == "roleplay") return Category::Roleplay;
    if (s == "math") return Category::Math;
    if (s == "reasoning") return Category::Reasoning;
    if (s == "extraction") return Category::Extraction;
    if (s == "other") return Category::Other;
    throw ConfigError("unknown category: " + s);
}

Preference preference_from_string(const std::string& s) {
    if (s == "R1" || s == "1") return Preference::R1;
    if (s == "R2" || s == "2") return Preference::R2;
    if (s == "Tie" || s == "tie") return Preference::Tie;
    throw ParseError("unknown preference: " + s);
}

PresentationOrder order_from_string(const std::string& s) {
    if (s == "forward") return PresentationOrder::Forward;
    if (s == "swapped") return PresentationOrder::Swapped;
    throw ConfigError("unknown presentation order: " + s);
}

ConfidenceMethod confidence_method_from_string(const std::string& s) {
    if (s == "logit_verdict_token") return ConfidenceMethod::LogitVerdictToken;
    if (s == "mean_token_prob") return ConfidenceMethod::MeanTokenProb;
    if (s == "verbalized") return ConfidenceMethod::Verbalized;
    if (s == "consistency") return ConfidenceMethod::Consistency;
    throw ConfigError("unknown confidence method: " + s);
}

// ---------------------------------------------------------------------------
// Verdict
// ---------------------------------------------------------------------------

Verdict Verdict::make_score(int s, std::string explanation) {
    if (s < 0 || s > 9) throw ValidationError("score out of range [0, 9]");
    Verdict v;
    v.kind = Kind::Score;
    v.score = s;
    v.explanation = std::move(explanation);
    return v;
}

Verdict Verdict::make_preference(Preference p, std::string explanation) {
    Verdict v;
    v.kind = Kind::Preference;
    v.preference = p;
    v.explanation = std::move(explanation);
    return v;
}

std::string Verdict::wire_literal() const {
    if (kind == Kind::Score) return std::to_string(*score);
    switch (*preference) {
        case Preference::R1: return "1";
        case Preference::R2: return "2";
        case Preference::Tie: return "Tie";
    }
    throw Error("malformed verdict");
}

Preference relabel(Preference p) {
    switch (p) {
        case Preference::R1: return Preference::R2;
        case Preference::R2: return Preference::R1;
        case Preference::Tie: return Preference::Tie;
    }
    throw Error("unknown preference");
}

Verdict relabel(const Verdict& v) {
    if (v.kind != Verdict::Kind::Preference) return v;
    Verdict out = v;
    out.preference = relabel(*v.preference);
    return out;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

ValidationReport validate_instance(const EvalInstance& inst, TaskKind task) {
    ValidationReport report;
    report.instance_id = inst.id;

    const std::size_t expected = task == TaskKind::SingleGrading ? 1 : 2;
    if (inst.responses.size() != expected) {
        report.violations.push_back(
            {"response_count", "expected " + std::to_string(expected) + " responses, got " +
                                   std::to_string(inst.responses.size())});
    }

    const auto tokens = dataset::default_special_tokens();
    for (std::size_t i = 0; i < inst.responses.size(); ++i) {
        const auto& r = inst.responses[i];
        const std::string where = "responses[" + std::to_string(i) + "]";

        for (const auto& tok : tokens) {
            if (r.text.find(tok) != std::string::npos) {
                report.violations.push_back(
                    {"special_token", where + ": special token present: " + tok});
            }
        }
        if (dataset::scrub_special_tokens(r.text, tokens).empty()) {
            report.violations.push_back({"empty_text", where + ": text empty after scrubbing"});
        }
        if (r.verbalized_confidence) {
            const bool matches =
                r.response_confidence &&
                confidence::verbalize_confidence(r.response_confidence->value) ==
                    *r.verbalized_confidence;
            if (!matches) {
                report.violations.push_back(
                    {"verbalization_mismatch",
                     where + ": verbalized confidence does not match response confidence"});
            }
        }
    }
    return report;
}

std::vector<ValidationReport> validate_dataset(const std::vector<EvalInstance>& dataset,
                                               TaskKind task) {
    std::vector<ValidationReport> reports;
    reports.reserve(dataset.size());
    std::unordered_set<std::string> seen;
    for (const auto& inst : dataset) {
        auto report = validate_instance(inst, task);
        if (!seen.insert(inst.id).second) {
            report.violations.push_back({"duplicate_id", "id not unique within dataset: " + inst.id});
        }
        reports.push_back(std::move(report));
    }
    return reports;
}

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string canonical_hash(const std::vector<Message>& messages, const std::string& model,
                           double temperature, bool logprobs, const std::string& strategy_tag) {
    if (messages.empty()) throw Error("empty prompt");
    // nlohmann objects are key-sorted, so dump() is canonical regardless of
    // the order fields were assigned in.
    nlohmann::json j;
    j["model"] = model;
    j["temperature"] = temperature;
    j["logprobs"] = logprobs;
    j["strategy"] = strategy_tag;
    auto msgs = nlohmann::json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"text", m.text}});
    j["messages"] = std::move(msgs);
    return sha256_hex(j.dump());
}

std::string canonical_hash(const std::vector<Message>& messages, const JudgeConfig& config) {
    return canonical_hash(messages, config.model, config.temperature, config.request_logprobs,
                          to_string(config.strategy));
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const Message& m) {
    j = nlohmann::json{{"role", m.role}, {"content", m.text}};
}

void from_json(const nlohmann::json& j, Message& m) {
    m.role = j.at("role").get<std::string>();
    m.text = j.at("content").get<std::string>();
}

void to_json(nlohmann::json& j, const ConfidenceEstimate& c) {
    j = nlohmann::json{{"value", c.value}, {"method", to_string(c.method)}};
    nlohmann::json support = nlohmann::json::object();
    if (c.support.token) support["token"] = *c.support.token;
    if (c.support.token_index) support["token_index"] = *c.support.token_index;
    if (c.support.logprob) support["logprob"] = *c.support.logprob;
    if (c.support.token_count) support["token_count"] = *c.support.token_count;
    if (c.support.parsed_literal) support["parsed_literal"] = *c.support.parsed_literal;
    if (c.support.sample_count) support["sample_count"] = *c.support.sample_count;
    if (c.support.mode_count) support["mode_count"] = *c.support.mode_count;
    if (c.support.multiple_candidates) support["multiple_candidates"] = true;
    if (c.support.tie_broken) support["tie_broken"] = true;
    j["support"] = std::move(support);
}

void from_json(const nlohmann::json& j, ConfidenceEstimate& c) {
    c.value = j.at("value").get<double>();
    c.method = confidence_method_from_string(j.at("method").get<std::string>());
    c.support = {};
    if (!j.contains("support")) return;
    const auto& s = j.at("support");
    if (s.contains("token")) c.support.token = s.at("token").get<std::string>();
    if (s.contains("token_index")) c.support.token_index = s.at("token_index").get<int>();
    if (s.contains("logprob")) c.support.logprob = s.at("logprob").get<double>();
    if (s.contains("token_count")) c.support.token_count = s.at("token_count").get<std::size_t>();
    if (s.contains("parsed_literal")) c.support.parsed_literal = s.at("parsed_literal").get<double>();
    if (s.contains("sample_count")) c.support.sample_count = s.at("sample_count").get<int>();
    if (s.contains("mode_count")) c.support.mode_count = s.at("mode_count").get<int>();
    c.support.multiple_candidates = s.value("multiple_candidates", false);
    c.support.tie_broken = s.value("tie_broken", false);
}

void to_json(nlohmann::json& j, const CandidateResponse& r) {
    j = nlohmann::json{{"model_name", r.model_name}, {"text", r.text}};
    if (r.response_confidence) j["response_confidence"] = *r.response_confidence;
    if (r.verbalized_confidence) j["verbalized_confidence"] = *r.verbalized_confidence;
}

void from_json(const nlohmann::json& j, CandidateResponse& r) {
    r.model_name = j.value("model_name", "");
    r.text = j.at("text").get<std::string>();
    r.response_confidence.reset();
    r.verbalized_confidence.reset();
    if (j.contains("response_confidence") && !j.at("response_confidence").is_null()) {
        r.response_confidence = j.at("response_confidence").get<ConfidenceEstimate>();
    }
    if (j.contains("verbalized_confidence") && !j.at("verbalized_confidence").is_null()) {
        r.verbalized_confidence = j.at("verbalized_confidence").get<std::string>();
    }
}

void to_json(nlohmann::json& j, const EvalInstance& inst) {
    j = inst.extra.is_object() ? inst.extra : nlohmann::json::object();
    j["id"] = inst.id;
    j["instruction"] = inst.instruction;
    if (inst.reference_answer) j["reference_answer"] = *inst.reference_answer;
    if (inst.category) j["category"] = to_string(*inst.category);
    j["responses"] = inst.responses;
}

void from_json(const nlohmann::json& j, EvalInstance& inst) {
    inst = {};
    inst.id = j.at("id").get<std::string>();
    inst.instruction = j.at("instruction").get<std::string>();
    if (j.contains("reference_answer") && !j.at("reference_answer").is_null()) {
        inst.reference_answer = j.at("reference_answer").get<std::string>();
    }
    if (j.contains("category") && !j.at("category").is_null()) {
        inst.category = category_from_string(j.at("category").get<std::string>());
    }
    if (j.contains("responses")) {
        inst.responses = j.at("responses").get<std::vector<CandidateResponse>>();
    }
    static const std::unordered_set<std::string> known = {"id", "instruction", "reference_answer",
                                                          "category", "responses"};
    inst.extra = nlohmann::json::object();
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) inst.extra[it.key()] = it.value();
    }
}

void to_json(nlohmann::json& j, const JudgeConfig& c) {
    j = nlohmann::json{{"endpoint", c.endpoint},
                       {"model", c.model},
                       {"temperature", c.temperature},
                       {"strategy", to_string(c.strategy)},
                       {"task", to_string(c.task)},
                       {"criteria", c.criteria},
                       {"max_output_tokens", c.max_output_tokens},
                       {"request_logprobs", c.request_logprobs}};
}

void from_json(const nlohmann::json& j, JudgeConfig& c) {
    c = {};
    c.endpoint = j.value("endpoint", "");
    c.model = j.at("model").get<std::string>();
    c.temperature = j.value("temperature", 0.0);
    if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    if (j.contains("task")) c.task = task_from_string(j.at("task").get<std::string>());
    if (j.contains("criteria")) c.criteria = j.at("criteria").get<std::vector<std::string>>();
    if (c.criteria.empty()) throw ConfigError("criteria must be non-empty");
    c.max_output_tokens = j.value("max_output_tokens", 1024);
    c.request_logprobs = j.value("request_logprobs", true);
}

void to_json(nlohmann::json& j, const Verdict& v) {
    j = nlohmann::json{{"explanation", v.explanation}};
    if (v.kind == Verdict::Kind::Score) {
        j["kind"] = "score";
        j["score"] = *v.score;
    } else {
        j["kind"] = "preference";
        j["preference"] = to_string(*v.preference);
    }
}

void from_json(const nlohmann::json& j, Verdict& v) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "score") {
        v = Verdict::make_score(j.at("score").get<int>(), j.value("explanation", ""));
    } else if (kind == "preference") {
        v = Verdict::make_preference(preference_from_string(j.at("preference").get<std::string>()),
                                     j.value("explanation", ""));
    } else {
        throw ParseError("unknown verdict kind: " + kind);
    }
}

void to_json(nlohmann::json& j, const EvaluationRecord& r) {
    j = nlohmann::json{{"instance_id", r.instance_id},
                       {"order", to_string(r.order)},
                       {"raw_output", r.raw_output},
                       {"verdict", nullptr},
                       {"evaluation_confidence", nullptr},
                       {"response_confidences", r.response_confidences},
                       {"request_hash", r.request_hash},
                       {"latency_ms", r.latency_ms},
                       {"flags", r.flags},
                       {"parse_warnings", r.parse_warnings}};
    if (r.verdict) j["verdict"] = *r.verdict;
    if (r.evaluation_confidence) j["evaluation_confidence"] = *r.evaluation_confidence;
}

void from_json(const nlohmann::json& j, EvaluationRecord& r) {
    r = {};
    r.instance_id = j.at("instance_id").get<std::string>();
    r.order = order_from_string(j.at("order").get<std::string>());
    r.raw_output = j.value("raw_output", "");
    if (j.contains("verdict") && !j.at("verdict").is_null()) {
        r.verdict = j.at("verdict").get<Verdict>();
    }
    if (j.contains("evaluation_confidence") && !j.at("evaluation_confidence").is_null()) {
        r.evaluation_confidence = j.at("evaluation_confidence").get<ConfidenceEstimate>();
    }
    if (j.contains("response_confidences")) {
        r.response_confidences = j.at("response_confidences").get<std::vector<ConfidenceEstimate>>();
    }
    r.request_hash = j.value("request_hash", "");
    r.latency_ms = j.value("latency_ms", std::int64_t{0});
    if (j.contains("flags")) r.flags = j.at("flags").get<std::vector<std::string>>();
    if (j.contains("parse_warnings")) {
        r.parse_warnings = j.at("parse_warnings").get<std::vector<std::string>>();
    }
}

// ---------------------------------------------------------------------------
// JSONL IO
// ---------------------------------------------------------------------------

namespace {

template <typename T>
std::vector<T> load_jsonl(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw ConfigError(std::string("cannot open ") + what + " file: " + path);
    std::vector<T> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(nlohmann::json::parse(line).get<T>());
        } catch (const std::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

template <typename T>
void save_jsonl(const std::vector<T>& items, const std::string& path, const char* what) {
    std::ofstream out(path);
    if (!out) throw ConfigError(std::string("cannot write ") + what + " file: " + path);
    for (const auto& item : items) out << nlohmann::json(item).dump() << "\n";
}

} // namespace

std::vector<EvalInstance> load_instances_jsonl(const std::string& path) {
    return load_jsonl<EvalInstance>(path, "dataset");
}

void save_instances_jsonl(const std::vector<EvalInstance>& instances, const std::string& path) {
    save_jsonl(instances, path, "dataset");
}

std::vector<EvaluationRecord> load_records_jsonl(const std::string& path) {
    return load_jsonl<EvaluationRecord>(path, "records");
}

void save_records_jsonl(const std::vector<EvaluationRecord>& records, const std::string& path) {
    save_jsonl(records, path, "records");
}

} // namespace judgeval
