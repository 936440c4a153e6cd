#include "judgeval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace judgeval::metrics {

namespace {

struct Group {
    const EvaluationRecord* forward = nullptr;
    const EvaluationRecord* swapped = nullptr;
};

// Instance ids in order of first appearance, each with at most one leg per
// presentation order (the first record wins, duplicates are ignored).
std::vector<std::pair<std::string, Group>> group_records(
    const std::vector<EvaluationRecord>& records) {
    std::vector<std::pair<std::string, Group>> groups;
    std::map<std::string, std::size_t> index;
    for (const auto& r : records) {
        auto it = index.find(r.instance_id);
        if (it == index.end()) {
            index.emplace(r.instance_id, groups.size());
            groups.emplace_back(r.instance_id, Group{});
            it = index.find(r.instance_id);
        }
        auto& group = groups[it->second].second;
        if (r.order == PresentationOrder::Forward) {
            if (!group.forward) group.forward = &r;
        } else {
            if (!group.swapped) group.swapped = &r;
        }
    }
    return groups;
}

std::string fmt3(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

} // namespace

RunSummary summarize(const std::vector<EvaluationRecord>& records,
                     const std::map<std::string, Category>& categories, bool disagree_as_tie) {
    if (records.empty()) throw ValidationError("empty summary");

    bool has_score = false;
    bool has_pref = false;
    for (const auto& r : records) {
        if (!r.verdict) continue;
        (r.verdict->kind == Verdict::Kind::Score ? has_score : has_pref) = true;
    }
    if (has_score && has_pref) throw ValidationError("heterogeneous verdicts");

    RunSummary s;
    s.record_count = static_cast<int>(records.size());

    double eval_conf_sum = 0.0;
    int eval_conf_n = 0;
    double resp_conf_sum = 0.0;
    int resp_conf_n = 0;
    for (const auto& r : records) {
        if (!r.verdict) s.failed_count += 1;
        if (r.evaluation_confidence) {
            eval_conf_sum += r.evaluation_confidence->value;
            eval_conf_n += 1;
        }
        for (const auto& c : r.response_confidences) {
            resp_conf_sum += c.value;
            resp_conf_n += 1;
        }
    }
    if (eval_conf_n > 0) s.mean_evaluation_confidence = eval_conf_sum / eval_conf_n;
    if (resp_conf_n > 0) s.mean_response_confidence = resp_conf_sum / resp_conf_n;

    const auto groups = group_records(records);
    s.instance_count = static_cast<int>(groups.size());

    // A run that never produced a swapped leg is a single-pass run; a lone
    // leg there is complete, not a broken pair.
    const bool swap_protocol =
        std::any_of(records.begin(), records.end(),
                    [](const EvaluationRecord& r) { return r.order == PresentationOrder::Swapped; });

    auto category_key = [&](const std::string& id) -> std::optional<std::string> {
        if (categories.empty()) return std::nullopt;
        const auto it = categories.find(id);
        return it == categories.end() ? std::string("uncategorized") : to_string(it->second);
    };

    double rating_sum = 0.0;
    int rating_n = 0;
    std::map<std::string, std::pair<double, int>> category_ratings;

    static const EvaluationRecord no_leg{};
    for (const auto& [id, group] : groups) {
        const auto key = category_key(id);

        if (has_pref) {
            runner::WeightedTally t;
            if (swap_protocol) {
                t = runner::aggregate_swapped_pair(group.forward ? *group.forward : no_leg,
                                                   group.swapped ? *group.swapped : no_leg,
                                                   disagree_as_tie);
                if (t.partial) s.partial_pairs += 1;
            } else if (group.forward && group.forward->verdict) {
                switch (*group.forward->verdict->preference) {
                    case Preference::R1: t.win = 1.0; break;
                    case Preference::R2: t.lose = 1.0; break;
                    case Preference::Tie: t.tie = 1.0; break;
                }
            }
            s.tally += t;
            if (key) s.per_category_tally[*key] += t;
        } else {
            for (const auto* leg : {group.forward, group.swapped}) {
                if (!leg || !leg->verdict) continue;
                const int score = *leg->verdict->score;
                s.score_histogram[score] += 1;
                rating_sum += score;
                rating_n += 1;
                if (key) {
                    category_ratings[*key].first += score;
                    category_ratings[*key].second += 1;
                }
            }
        }
    }

    if (rating_n > 0) s.mean_rating = rating_sum / rating_n;
    for (const auto& [key, acc] : category_ratings) {
        s.per_category_mean_rating[key] = acc.first / acc.second;
    }
    return s;
}

WinTieRates win_tie_rates(const runner::WeightedTally& tally) {
    WinTieRates rates;
    const double total = tally.win + tally.lose + tally.tie;
    if (total > 0.0) rates.tie_rate = tally.tie / total;
    if (tally.win + tally.lose > 0.0) rates.win_rate = tally.win / (tally.win + tally.lose);
    return rates;
}

double distribution_delta(const std::vector<EvaluationRecord>& a,
                          const std::vector<EvaluationRecord>& b) {
    auto mean_confidence = [](const std::vector<EvaluationRecord>& records) {
        double sum = 0.0;
        int n = 0;
        for (const auto& r : records) {
            if (r.evaluation_confidence) {
                sum += r.evaluation_confidence->value;
                n += 1;
            }
        }
        if (n == 0) throw ValidationError("empty summary");
        return sum / n;
    };
    return std::fabs(mean_confidence(a) - mean_confidence(b));
}

namespace {

MacroF1 macro_f1_subset(const std::vector<Preference>& gold,
                        const std::vector<Preference>& predicted,
                        const std::vector<std::size_t>& indices) {
    MacroF1 result;
    double sum = 0.0;
    int counted = 0;
    for (const auto cls : {Preference::R1, Preference::R2}) {
        int tp = 0;
        int fp = 0;
        int fn = 0;
        bool in_gold = false;
        bool in_pred = false;
        for (const auto i : indices) {
            if (gold[i] == cls) in_gold = true;
            if (predicted[i] == cls) in_pred = true;
            if (gold[i] == cls && predicted[i] == cls) ++tp;
            if (gold[i] != cls && predicted[i] == cls) ++fp;
            if (gold[i] == cls && predicted[i] != cls) ++fn;
        }
        if (!in_gold && !in_pred) {
            result.flags.push_back("class " + to_string(cls) +
                                   " absent from gold and predictions, excluded from average");
            continue;
        }
        const double precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        const double f1 =
            precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        result.per_class[to_string(cls)] = f1;
        sum += f1;
        counted += 1;
    }
    result.value = counted > 0 ? sum / counted : 0.0;
    return result;
}

} // namespace

MacroF1 macro_f1(const std::vector<Preference>& gold, const std::vector<Preference>& predicted,
                 const std::vector<std::optional<Category>>& categories) {
    if (gold.size() != predicted.size()) {
        throw ValidationError("gold and prediction counts differ");
    }
    if (!categories.empty() && categories.size() != gold.size()) {
        throw ValidationError("gold and category counts differ");
    }
    if (gold.empty()) throw ValidationError("empty summary");
    for (const auto g : gold) {
        if (g == Preference::Tie) throw ValidationError("gold labels must be R1 or R2");
    }

    std::vector<std::size_t> all(gold.size());
    for (std::size_t i = 0; i < gold.size(); ++i) all[i] = i;
    MacroF1 result = macro_f1_subset(gold, predicted, all);

    if (!categories.empty()) {
        std::map<std::string, std::vector<std::size_t>> by_category;
        for (std::size_t i = 0; i < categories.size(); ++i) {
            by_category[categories[i] ? to_string(*categories[i]) : "uncategorized"].push_back(i);
        }
        for (const auto& [key, indices] : by_category) {
            result.per_category[key] = macro_f1_subset(gold, predicted, indices).value;
        }
    }
    return result;
}

std::vector<CalibrationBin> calibration_table(const std::vector<CalibrationSample>& samples,
                                              double bin_width) {
    if (!(bin_width > 0.0 && bin_width <= 1.0)) throw ConfigError("bin width must be in (0, 1]");
    const auto n = static_cast<std::size_t>(std::lround(1.0 / bin_width));
    if (n < 1 || std::fabs(1.0 / bin_width - static_cast<double>(n)) > 1e-9) {
        throw ConfigError("bin width must divide 1 into whole bins");
    }

    // Edges as i/n rather than i*width, so decimal widths land on the exact
    // doubles the comparisons below expect.
    std::vector<double> edges(n + 1);
    for (std::size_t i = 0; i <= n; ++i) edges[i] = static_cast<double>(i) / static_cast<double>(n);

    std::vector<CalibrationBin> bins(n);
    std::vector<double> conf_sums(n, 0.0);
    std::vector<int> correct_counts(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        bins[i].lower = edges[i];
        bins[i].upper = edges[i + 1];
    }

    for (const auto& sample : samples) {
        const double c = sample.confidence;
        if (!(c >= 0.0 && c <= 1.0)) throw ValidationError("confidence out of range");
        auto idx = static_cast<std::size_t>(std::min(static_cast<double>(n - 1),
                                                     c * static_cast<double>(n)));
        while (idx < n - 1 && c >= edges[idx + 1]) ++idx;
        while (idx > 0 && c < edges[idx]) --idx;
        bins[idx].count += 1;
        conf_sums[idx] += c;
        if (sample.correct) correct_counts[idx] += 1;
    }

    for (std::size_t i = 0; i < n; ++i) {
        if (bins[i].count > 0) {
            bins[i].mean_confidence = conf_sums[i] / bins[i].count;
            bins[i].accuracy = static_cast<double>(correct_counts[i]) / bins[i].count;
        }
    }
    return bins;
}

AgreementResult agreement_rate(const std::vector<Preference>& a, const std::vector<Preference>& b,
                               const std::vector<std::optional<Preference>>& round2) {
    if (a.size() != b.size()) throw ValidationError("label counts differ");
    if (a.empty()) throw ValidationError("empty summary");
    if (!round2.empty() && round2.size() != a.size()) {
        throw ValidationError("tiebreak label count differs");
    }

    AgreementResult result;
    result.final_labels.reserve(a.size());
    int agreed = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) {
            ++agreed;
            result.final_labels.push_back(a[i]);
            continue;
        }
        result.disagreements += 1;
        const auto breaker = i < round2.size() ? round2[i] : std::nullopt;
        // The majority of three exists only when the third label sides with
        // one of the first two.
        if (!breaker || (*breaker != a[i] && *breaker != b[i])) {
            throw ValidationError("unresolved instance at index " + std::to_string(i));
        }
        result.final_labels.push_back(*breaker);
    }
    result.rate = static_cast<double>(agreed) / static_cast<double>(a.size());
    return result;
}

std::vector<FinalPrediction> final_predictions(const std::vector<EvaluationRecord>& records) {
    std::vector<FinalPrediction> out;
    for (const auto& [id, group] : group_records(records)) {
        const bool f = group.forward && group.forward->verdict;
        const bool s = group.swapped && group.swapped->verdict;
        for (const auto* leg : {group.forward, group.swapped}) {
            if (leg && leg->verdict && leg->verdict->kind != Verdict::Kind::Preference) {
                throw ValidationError("final predictions need preference verdicts");
            }
        }

        FinalPrediction p;
        p.instance_id = id;
        if (f && s) {
            const auto vf = *group.forward->verdict->preference;
            const auto vs = *group.swapped->verdict->preference;
            if (vf == vs) {
                p.label = vf;
            } else {
                p.label = Preference::Tie;
                p.from_disagreement = true;
            }
        } else if (f || s) {
            p.label = f ? *group.forward->verdict->preference : *group.swapped->verdict->preference;
            p.partial = true;
        } else {
            continue;
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<GoldLabel> load_gold_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open gold file: " + path);
    std::vector<GoldLabel> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            GoldLabel g;
            g.instance_id = j.at("instance_id").get<std::string>();
            g.label = preference_from_string(j.at("label").get<std::string>());
            if (j.contains("category") && !j.at("category").is_null()) {
                g.category = category_from_string(j.at("category").get<std::string>());
            }
            out.push_back(std::move(g));
        } catch (const std::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

nlohmann::json summary_json(const RunSummary& s) {
    const auto rates = win_tie_rates(s.tally);
    nlohmann::json j;
    j["instance_count"] = s.instance_count;
    j["record_count"] = s.record_count;
    j["failed_count"] = s.failed_count;
    j["partial_pairs"] = s.partial_pairs;
    j["tally"] = {{"win", s.tally.win}, {"lose", s.tally.lose}, {"tie", s.tally.tie}};
    j["tie_rate"] = rates.tie_rate ? nlohmann::json(*rates.tie_rate) : nlohmann::json(nullptr);
    j["win_rate"] = rates.win_rate ? nlohmann::json(*rates.win_rate) : nlohmann::json(nullptr);
    j["mean_rating"] = s.mean_rating ? nlohmann::json(*s.mean_rating) : nlohmann::json(nullptr);
    auto hist = nlohmann::json::object();
    for (const auto& [score, count] : s.score_histogram) hist[std::to_string(score)] = count;
    j["score_histogram"] = std::move(hist);
    j["mean_evaluation_confidence"] = s.mean_evaluation_confidence
                                          ? nlohmann::json(*s.mean_evaluation_confidence)
                                          : nlohmann::json(nullptr);
    j["mean_response_confidence"] = s.mean_response_confidence
                                        ? nlohmann::json(*s.mean_response_confidence)
                                        : nlohmann::json(nullptr);

    auto per_category = nlohmann::json::object();
    for (const auto& [key, tally] : s.per_category_tally) {
        const auto r = win_tie_rates(tally);
        per_category[key] = {
            {"win", tally.win},
            {"lose", tally.lose},
            {"tie", tally.tie},
            {"tie_rate", r.tie_rate ? nlohmann::json(*r.tie_rate) : nlohmann::json(nullptr)},
            {"win_rate", r.win_rate ? nlohmann::json(*r.win_rate) : nlohmann::json(nullptr)}};
    }
    for (const auto& [key, mean] : s.per_category_mean_rating) {
        per_category[key] = {{"mean_rating", mean}};
    }
    j["per_category"] = std::move(per_category);
    return j;
}

nlohmann::json calibration_json(const std::vector<CalibrationBin>& bins) {
    auto arr = nlohmann::json::array();
    for (const auto& b : bins) {
        arr.push_back({{"lower", b.lower},
                       {"upper", b.upper},
                       {"count", b.count},
                       {"mean_confidence",
                        b.count > 0 ? nlohmann::json(b.mean_confidence) : nlohmann::json(nullptr)},
                       {"accuracy",
                        b.count > 0 ? nlohmann::json(b.accuracy) : nlohmann::json(nullptr)}});
    }
    return arr;
}

nlohmann::json macro_f1_json(const MacroF1& f1) {
    return {{"macro_f1", f1.value},
            {"per_class", f1.per_class},
            {"per_category", f1.per_category},
            {"flags", f1.flags}};
}

std::string summary_text(const RunSummary& s) {
    std::vector<std::pair<std::string, std::string>> rows;
    rows.emplace_back("instances", std::to_string(s.instance_count));
    rows.emplace_back("records", std::to_string(s.record_count));
    rows.emplace_back("failed", std::to_string(s.failed_count));

    const bool pairwise = s.tally.win + s.tally.lose + s.tally.tie > 0.0 || s.partial_pairs > 0;
    if (pairwise) {
        rows.emplace_back("partial pairs", std::to_string(s.partial_pairs));
        rows.emplace_back("win", fmt3(s.tally.win));
        rows.emplace_back("lose", fmt3(s.tally.lose));
        rows.emplace_back("tie", fmt3(s.tally.tie));
        const auto rates = win_tie_rates(s.tally);
        if (rates.tie_rate) rows.emplace_back("tie rate", fmt3(*rates.tie_rate));
        if (rates.win_rate) rows.emplace_back("win rate", fmt3(*rates.win_rate));
    }
    if (s.mean_rating) rows.emplace_back("mean rating", fmt3(*s.mean_rating));
    for (const auto& [score, count] : s.score_histogram) {
        rows.emplace_back("score " + std::to_string(score), std::to_string(count));
    }
    if (s.mean_evaluation_confidence) {
        rows.emplace_back("mean evaluation confidence", fmt3(*s.mean_evaluation_confidence));
    }
    if (s.mean_response_confidence) {
        rows.emplace_back("mean response confidence", fmt3(*s.mean_response_confidence));
    }
    for (const auto& [key, tally] : s.per_category_tally) {
        rows.emplace_back("category " + key, "win " + fmt3(tally.win) + "  lose " +
                                                 fmt3(tally.lose) + "  tie " + fmt3(tally.tie));
    }
    for (const auto& [key, mean] : s.per_category_mean_rating) {
        rows.emplace_back("category " + key, "mean rating " + fmt3(mean));
    }

    std::size_t width = 0;
    for (const auto& [label, value] : rows) width = std::max(width, label.size());
    std::string out;
    for (const auto& [label, value] : rows) {
        out += label;
        out.append(width - label.size() + 2, ' ');
        out += value;
        out += '\n';
    }
    return out;
}

std::string calibration_text(const std::vector<CalibrationBin>& bins) {
    std::string out = "bin         count  mean conf  accuracy\n";
    for (const auto& b : bins) {
        char range[32];
        std::snprintf(range, sizeof(range), "[%.1f, %.1f%c", b.lower, b.upper,
                      b.upper >= 1.0 ? ']' : ')');
        char line[96];
        if (b.count > 0) {
            std::snprintf(line, sizeof(line), "%-11s %5d  %9.3f  %8.3f\n", range, b.count,
                          b.mean_confidence, b.accuracy);
        } else {
            std::snprintf(line, sizeof(line), "%-11s %5d  %9s  %8s\n", range, b.count, "-", "-");
        }
        out += line;
    }
    return out;
}

} // namespace judgeval::metrics
