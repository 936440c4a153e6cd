#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace judgeval {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

enum class TaskKind { SingleGrading, Pairwise };

enum class StrategyKind { Default, CoT, Reference, ConfiLM };

enum class Category { Writing, Roleplay, Math, Reasoning, Extraction, Other };

enum class Preference { R1, R2, Tie };

enum class PresentationOrder { Forward, Swapped };

std::string to_string(TaskKind t);
std::string to_string(StrategyKind s);
std::string to_string(Category c);
std::string to_string(Preference p);
std::string to_string(PresentationOrder o);

TaskKind task_from_string(const std::string& s);
StrategyKind strategy_from_string(const std::string& s);
Category category_from_string(const std::string& s);
Preference preference_from_string(const std::string& s);
PresentationOrder order_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Confidence
// ---------------------------------------------------------------------------

enum class ConfidenceMethod { LogitVerdictToken, MeanTokenProb, Verbalized, Consistency };

std::string to_string(ConfidenceMethod m);
ConfidenceMethod confidence_method_from_string(const std::string& s);

/// Method-specific detail recording where a confidence value came from.
struct ConfidenceSupport {
    std::optional<std::string> token;       // logit method: the located verdict token
    std::optional<int> token_index;         // logit method: its position in the output
    std::optional<double> logprob;          // logit method: its log-probability
    std::optional<std::size_t> token_count; // mean-token-prob method
    std::optional<double> parsed_literal;   // verbalized method: the literal as written
    std::optional<int> sample_count;        // consistency method: N
    std::optional<int> mode_count;          // consistency method: votes for the mode
    bool multiple_candidates = false;       // logit method: more than one token matched
    bool tie_broken = false;                // consistency method: mode tie resolved by fixed order

    bool operator==(const ConfidenceSupport&) const = default;
};

struct ConfidenceEstimate {
    double value = 0.0; // always in [0, 1]
    ConfidenceMethod method = ConfidenceMethod::MeanTokenProb;
    ConfidenceSupport support;

    bool operator==(const ConfidenceEstimate&) const = default;
};

// ---------------------------------------------------------------------------
// Instances and verdicts
// ---------------------------------------------------------------------------

struct CandidateResponse {
    std::string model_name;
    std::string text;
    std::optional<ConfidenceEstimate> response_confidence;
    std::optional<std::string> verbalized_confidence;

    bool operator==(const CandidateResponse&) const = default;
};

/// One evaluation unit: an instruction plus one (grading) or two (pairwise)
/// candidate responses. Unknown JSON fields are preserved on round-trip.
struct EvalInstance {
    std::string id;
    std::string instruction;
    std::optional<std::string> reference_answer;
    std::optional<Category> category;
    std::vector<CandidateResponse> responses;
    nlohmann::json extra = nlohmann::json::object();

    bool operator==(const EvalInstance&) const = default;
};

struct JudgeConfig {
    std::string endpoint;
    std::string model;
    double temperature = 0.0;
    StrategyKind strategy = StrategyKind::Default;
    TaskKind task = TaskKind::Pairwise;
    std::vector<std::string> criteria = default_criteria();
    int max_output_tokens = 1024;
    bool request_logprobs = true;

    static std::vector<std::string> default_criteria() {
        return {"helpfulness", "relevance", "accuracy", "depth"};
    }

    bool operator==(const JudgeConfig&) const = default;
};

struct Verdict {
    enum class Kind { Score, Preference };

    Kind kind = Kind::Preference;
    std::optional<int> score;            // 0..9 when kind == Score
    std::optional<Preference> preference; // when kind == Preference
    std::string explanation;

    static Verdict make_score(int s, std::string explanation = "");
    static Verdict make_preference(Preference p, std::string explanation = "");

    /// Wire literal as it appears in model output: "0".."9", "1", "2", "Tie".
    std::string wire_literal() const;

    bool operator==(const Verdict&) const = default;
};

/// Swaps R1 and R2; Tie is a fixed point. Used to map a verdict given under
/// swapped presentation back to original response identities.
Preference relabel(Preference p);
Verdict relabel(const Verdict& v);

struct EvaluationRecord {
    std::string instance_id;
    PresentationOrder order = PresentationOrder::Forward;
    std::string raw_output;
    std::optional<Verdict> verdict; // absent when the judgment was unparseable
    std::optional<ConfidenceEstimate> evaluation_confidence;
    std::vector<ConfidenceEstimate> response_confidences;
    std::string request_hash;
    std::int64_t latency_ms = 0;
    std::vector<std::string> flags;
    std::vector<std::string> parse_warnings;

    bool operator==(const EvaluationRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct Violation {
    std::string code;    // "response_count", "empty_text", "special_token", "verbalization_mismatch"
    std::string message;
};

struct ValidationReport {
    std::string instance_id;
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
};

/// Report-only check of EvalInstance invariants against a task kind.
ValidationReport validate_instance(const EvalInstance& inst, TaskKind task);

/// Dataset-level checks: per-instance reports plus id uniqueness.
std::vector<ValidationReport> validate_dataset(const std::vector<EvalInstance>& dataset,
                                               TaskKind task);

// ---------------------------------------------------------------------------
// Canonical hashing
// ---------------------------------------------------------------------------

struct Message {
    std::string role; // "system" | "user" | "assistant"
    std::string text;

    bool operator==(const Message&) const = default;
};

/// SHA-256 hex digest of a canonical (key-sorted) serialization of the prompt
/// plus the decoding-relevant config fields. The endpoint URL is excluded so
/// fixtures port across hosts; `strategy_tag` is empty for wire-level hashes
/// computed by the client and mock server.
std::string canonical_hash(const std::vector<Message>& messages, const std::string& model,
                           double temperature, bool logprobs,
                           const std::string& strategy_tag = "");

std::string canonical_hash(const std::vector<Message>& messages, const JudgeConfig& config);

/// SHA-256 hex digest of arbitrary bytes (dataset files, template sets).
std::string sha256_hex(const std::string& bytes);

// ---------------------------------------------------------------------------
// JSON (de)serialization; EvalInstance keeps unknown fields in `extra`.
// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const ConfidenceEstimate& c);
void from_json(const nlohmann::json& j, ConfidenceEstimate& c);
void to_json(nlohmann::json& j, const CandidateResponse& r);
void from_json(const nlohmann::json& j, CandidateResponse& r);
void to_json(nlohmann::json& j, const EvalInstance& inst);
void from_json(const nlohmann::json& j, EvalInstance& inst);
void to_json(nlohmann::json& j, const JudgeConfig& c);
void from_json(const nlohmann::json& j, JudgeConfig& c);
void to_json(nlohmann::json& j, const Verdict& v);
void from_json(const nlohmann::json& j, Verdict& v);
void to_json(nlohmann::json& j, const EvaluationRecord& r);
void from_json(const nlohmann::json& j, EvaluationRecord& r);
void to_json(nlohmann::json& j, const Message& m);
void from_json(const nlohmann::json& j, Message& m);

/// JSONL helpers: one JSON value per line, UTF-8.
std::vector<EvalInstance> load_instances_jsonl(const std::string& path);
void save_instances_jsonl(const std::vector<EvalInstance>& instances, const std::string& path);
std::vector<EvaluationRecord> load_records_jsonl(const std::string& path);
void save_records_jsonl(const std::vector<EvaluationRecord>& records, const std::string& path);

} // namespace judgeval
