#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "judgeval/core.hpp"

namespace judgeval::confidence {

// One generated token together with the log probability the judge model
// assigned to it.
struct TokenLogprob {
    std::string token;
    double logprob = 0.0;

    bool operator==(const TokenLogprob&) const = default;
};

// Where the verdict literal was found inside the generated token stream.
// The literal may span several tokens when the tokenizer splits it; the
// location then points at the first of them.
struct VerdictLocation {
    std::size_t token_index = 0;
    std::string token;
    double logprob = 0.0;
    bool multiple_candidates = false;
};

// Finds the token (or token run) whose stripped text equals the verdict
// literal, scanning after the first case-insensitive occurrence of `marker`
// when present and from the start of the output otherwise. Throws ParseError
// ("verdict token not found") when the literal does not occur.
VerdictLocation locate_verdict(const std::vector<TokenLogprob>& tokens,
                               const std::string& verdict_literal, const std::string& marker);

// Confidence in the judgment itself: exp(logprob) of the verdict token.
ConfidenceEstimate evaluation_confidence(const std::vector<TokenLogprob>& tokens,
                                         const Verdict& verdict, const std::string& marker);

// Confidence in a generated answer: arithmetic mean of per-token
// probabilities. Throws ValidationError ("no generated tokens") when the
// list is empty and ("confidence out of range") when a probability falls
// outside [0, 1].
ConfidenceEstimate response_confidence(const std::vector<double>& token_probs);

// Same, with probabilities taken as exp(logprob) of each token.
ConfidenceEstimate response_confidence(const std::vector<TokenLogprob>& tokens);

struct ConsistencyResult {
    Verdict mode;
    ConfidenceEstimate confidence;
};

// Confidence from repeated sampling: share of samples that agree with the
// modal verdict. Ties between equally frequent verdicts are broken toward
// R1 < R2 < Tie for preferences and toward the lower score for grades, and
// the estimate is flagged as tie_broken. All verdicts must share one kind.
ConsistencyResult consistency_confidence(const std::vector<Verdict>& verdicts);

// Same, asserting that exactly `sample_count` verdicts were collected.
ConsistencyResult consistency_confidence(const std::vector<Verdict>& verdicts,
                                         std::size_t sample_count);

// Extracts a self-reported confidence from free text: the first number after
// a case-insensitive "Confidence:" marker. Values above 1 are read as
// percentages and divided by 100. Throws ParseError ("no verbalized
// confidence") when no marker or number is present and ValidationError
// ("out of range") when the number falls outside [0, 100].
ConfidenceEstimate parse_verbalized_confidence(const std::string& text);

// Fixed ten-bin mapping from a numeric confidence to a natural-language
// statement. Bins are 0.1 wide and include their lower edge; the top bin
// also includes 1.0.
struct VerbalBin {
    double lower = 0.0;
    double upper = 0.0;
    bool upper_inclusive = false;
    std::string statement;
};

const std::vector<VerbalBin>& bin_table();

// Bin index (0..9) for a confidence value. Throws ValidationError
// ("confidence out of range") outside [0, 1].
std::size_t bin_index(double value);

std::string verbalize_confidence(double value);

// Inverse lookup by exact statement text. Throws ParseError
// ("unknown verbal bin") for anything not in the table.
const VerbalBin& bin_of(const std::string& statement);

nlohmann::json bin_table_json();

} // namespace judgeval::confidence
