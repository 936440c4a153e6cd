#include "judgeval/confidence.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>

namespace judgeval::confidence {

namespace {

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

// Drops whitespace and punctuation from both ends, keeping the interior.
std::string strip_edges(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && !is_word_char(s[b])) ++b;
    while (e > b && !is_word_char(s[e - 1])) --e;
    return s.substr(b, e - b);
}

} // namespace

VerdictLocation locate_verdict(const std::vector<TokenLogprob>& tokens,
                               const std::string& verdict_literal, const std::string& marker) {
    std::string text;
    std::vector<std::size_t> starts(tokens.size(), 0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        starts[i] = text.size();
        text += tokens[i].token;
    }

    std::size_t scan_from = 0;
    if (!marker.empty()) {
        const auto pos = lower(text).find(lower(marker));
        if (pos != std::string::npos) scan_from = pos + marker.size();
    }

    const std::string want = lower(verdict_literal);
    std::optional<VerdictLocation> found;
    bool multiple = false;

    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::size_t end_i = starts[i] + tokens[i].token.size();
        if (end_i <= scan_from) continue;

        // The first candidate token may straddle the marker; only the part
        // after it is eligible text.
        std::string acc = tokens[i].token;
        if (starts[i] < scan_from) acc = acc.substr(scan_from - starts[i]);

        for (std::size_t j = i;;) {
            const std::string got = lower(strip_edges(acc));
            // A run anchored on a content-free token would report that
            // token's logprob for the verdict; let the next token anchor it.
            if (j == i && got.empty()) break;
            if (got.size() > want.size() || want.compare(0, got.size(), got) != 0) break;
            if (got == want) {
                // Reject matches that are really a prefix of a longer word or
                // number continuing in the next token.
                const bool continues = j + 1 < tokens.size() && !acc.empty() &&
                                       is_word_char(acc.back()) &&
                                       !tokens[j + 1].token.empty() &&
                                       is_word_char(tokens[j + 1].token.front());
                if (!continues) {
                    if (!found) {
                        found = VerdictLocation{i, tokens[i].token, tokens[i].logprob, false};
                    } else if (found->token_index != i) {
                        multiple = true;
                    }
                }
                break;
            }
            if (++j >= tokens.size()) break;
            acc += tokens[j].token;
        }
    }

    if (!found) throw ParseError("verdict token not found");
    found->multiple_candidates = multiple;
    return *found;
}

ConfidenceEstimate evaluation_confidence(const std::vector<TokenLogprob>& tokens,
                                         const Verdict& verdict, const std::string& marker) {
    const auto loc = locate_verdict(tokens, verdict.wire_literal(), marker);
    const double value = std::exp(loc.logprob);
    if (value > 1.0 + 1e-12) throw ValidationError("confidence out of range");

    ConfidenceEstimate est;
    est.value = std::min(value, 1.0);
    est.method = ConfidenceMethod::LogitVerdictToken;
    est.support.token = loc.token;
    est.support.token_index = static_cast<int>(loc.token_index);
    est.support.logprob = loc.logprob;
    est.support.multiple_candidates = loc.multiple_candidates;
    return est;
}

ConfidenceEstimate response_confidence(const std::vector<double>& token_probs) {
    if (token_probs.empty()) throw ValidationError("no generated tokens");
    double sum = 0.0;
    for (const double p : token_probs) {
        if (!(p >= 0.0 && p <= 1.0 + 1e-12)) throw ValidationError("confidence out of range");
        sum += std::min(p, 1.0);
    }

    ConfidenceEstimate est;
    est.value = sum / static_cast<double>(token_probs.size());
    est.method = ConfidenceMethod::MeanTokenProb;
    est.support.token_count = token_probs.size();
    return est;
}

ConfidenceEstimate response_confidence(const std::vector<TokenLogprob>& tokens) {
    std::vector<double> probs;
    probs.reserve(tokens.size());
    for (const auto& t : tokens) probs.push_back(std::exp(t.logprob));
    return response_confidence(probs);
}

ConsistencyResult consistency_confidence(const std::vector<Verdict>& verdicts) {
    if (verdicts.empty()) throw ValidationError("no samples");
    const auto kind = verdicts.front().kind;
    for (const auto& v : verdicts) {
        if (v.kind != kind) throw ValidationError("heterogeneous verdicts");
    }

    // Keys sort so that the preferred tie-break winner comes first: R1 before
    // R2 before Tie, and lower scores before higher ones.
    auto key_of = [](const Verdict& v) {
        return v.kind == Verdict::Kind::Score ? *v.score : static_cast<int>(*v.preference);
    };
    std::map<int, int> counts;
    for (const auto& v : verdicts) counts[key_of(v)]++;

    int best_count = 0;
    for (const auto& [key, count] : counts) best_count = std::max(best_count, count);

    int best_key = 0;
    int modes_at_best = 0;
    for (const auto& [key, count] : counts) {
        if (count != best_count) continue;
        if (modes_at_best == 0) best_key = key;
        ++modes_at_best;
    }

    ConsistencyResult result;
    for (const auto& v : verdicts) {
        if (key_of(v) == best_key) {
            result.mode = v;
            break;
        }
    }
    result.confidence.value =
        static_cast<double>(best_count) / static_cast<double>(verdicts.size());
    result.confidence.method = ConfidenceMethod::Consistency;
    result.confidence.support.sample_count = static_cast<int>(verdicts.size());
    result.confidence.support.mode_count = best_count;
    result.confidence.support.tie_broken = modes_at_best > 1;
    return result;
}

ConsistencyResult consistency_confidence(const std::vector<Verdict>& verdicts,
                                         std::size_t sample_count) {
    if (verdicts.size() != sample_count) throw ValidationError("sample count mismatch");
    return consistency_confidence(verdicts);
}

ConfidenceEstimate parse_verbalized_confidence(const std::string& text) {
    static const std::string marker = "confidence:";
    const auto pos = lower(text).find(marker);
    if (pos == std::string::npos) throw ParseError("no verbalized confidence");

    std::size_t i = pos + marker.size();
    while (i < text.size() && !std::isdigit(static_cast<unsigned char>(text[i])) &&
           text[i] != '.') {
        ++i;
    }
    if (i >= text.size()) throw ParseError("no verbalized confidence");

    char* end = nullptr;
    const double raw = std::strtod(text.c_str() + i, &end);
    if (end == text.c_str() + i) throw ParseError("no verbalized confidence");

    double value = raw;
    if (value > 1.0) {
        if (value > 100.0) throw ValidationError("out of range");
        value /= 100.0;
    }

    ConfidenceEstimate est;
    est.value = value;
    est.method = ConfidenceMethod::Verbalized;
    est.support.parsed_literal = raw;
    return est;
}

const std::vector<VerbalBin>& bin_table() {
    static const std::vector<VerbalBin> table = {
        {0.0, 0.1, false, "Complete doubt"},
        {0.1, 0.2, false, "Highly uncertain"},
        {0.2, 0.3, false, "Clearly doubtful"},
        {0.3, 0.4, false, "Significantly doubtful"},
        {0.4, 0.5, false, "Slightly doubtful"},
        {0.5, 0.6, false, "Neutral"},
        {0.6, 0.7, false, "Slightly confident"},
        {0.7, 0.8, false, "Clearly confident"},
        {0.8, 0.9, false, "Highly confident"},
        {0.9, 1.0, true, "Absolute confidence"},
    };
    return table;
}

std::size_t bin_index(double value) {
    if (!(value >= 0.0 && value <= 1.0)) throw ValidationError("confidence out of range");
    const auto& table = bin_table();
    // Multiplying by 10 and flooring can land one bin off for values that sit
    // exactly on a decimal edge, so settle against the stored edges.
    auto b = static_cast<std::size_t>(std::min(9.0, value * 10.0));
    while (b < 9 && value >= table[b + 1].lower) ++b;
    while (b > 0 && value < table[b].lower) --b;
    return b;
}

std::string verbalize_confidence(double value) {
    return bin_table()[bin_index(value)].statement;
}

const VerbalBin& bin_of(const std::string& statement) {
    for (const auto& bin : bin_table()) {
        if (bin.statement == statement) return bin;
    }
    throw ParseError("unknown verbal bin: " + statement);
}

nlohmann::json bin_table_json() {
    auto arr = nlohmann::json::array();
    const auto& table = bin_table();
    for (std::size_t i = 0; i < table.size(); ++i) {
        arr.push_back({{"index", i},
                       {"lower", table[i].lower},
                       {"upper", table[i].upper},
                       {"upper_inclusive", table[i].upper_inclusive},
                       {"statement", table[i].statement}});
    }
    return arr;
}

} // namespace judgeval::confidence
