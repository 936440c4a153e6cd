#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "judgeval/core.hpp"
#include "judgeval/runner.hpp"

namespace judgeval::metrics {

struct RunSummary {
    int instance_count = 0;
    int record_count = 0;
    int failed_count = 0;
    int partial_pairs = 0;

    // Pairwise runs fill the tally; grading runs fill the histogram and mean.
    runner::WeightedTally tally;
    std::map<int, int> score_histogram;
    std::optional<double> mean_rating;

    std::optional<double> mean_evaluation_confidence;
    std::optional<double> mean_response_confidence;

    std::map<std::string, runner::WeightedTally> per_category_tally;
    std::map<std::string, double> per_category_mean_rating;
};

// Groups legs by instance id (pairwise legs via half-count aggregation, a
// lone parsed leg at full weight) and averages ratings and confidences.
// With `disagree_as_tie`, pairs whose legs disagree count as whole ties.
// Throws ValidationError ("empty summary") on an empty record list and
// ("heterogeneous verdicts") when score and preference verdicts are mixed.
RunSummary summarize(const std::vector<EvaluationRecord>& records,
                     const std::map<std::string, Category>& categories = {},
                     bool disagree_as_tie = false);

struct WinTieRates {
    std::optional<double> tie_rate;
    std::optional<double> win_rate;
};

// tie_rate = tie / total; win_rate = win / (win + lose), left unset when its
// denominator is zero.
WinTieRates win_tie_rates(const runner::WeightedTally& tally);

// Absolute difference between the mean evaluation confidences of two runs.
// Throws ValidationError ("empty summary") when either side has no
// confidence values.
double distribution_delta(const std::vector<EvaluationRecord>& a,
                          const std::vector<EvaluationRecord>& b);

struct MacroF1 {
    double value = 0.0;
    std::map<std::string, double> per_class;
    std::map<std::string, double> per_category;
    std::vector<std::string> flags;
};

// Macro-averaged F1 over the classes R1 and R2. A Tie prediction is a miss
// for the gold class and a false positive for neither. A class absent from
// gold scores 0 when predicted anyway and is otherwise excluded from the
// average (flagged). Gold labels must be R1 or R2. Categories, when given,
// align with the labels and add a per-category breakdown.
MacroF1 macro_f1(const std::vector<Preference>& gold, const std::vector<Preference>& predicted,
                 const std::vector<std::optional<Category>>& categories = {});

struct CalibrationBin {
    double lower = 0.0;
    double upper = 0.0;
    int count = 0;
    double mean_confidence = 0.0;
    double accuracy = 0.0;
};

struct CalibrationSample {
    double confidence = 0.0;
    bool correct = false;
};

// Bins of the given width (default five of width 0.2), lower edge inclusive,
// with 1.0 in the top bin. The width must divide 1 into a whole number of
// bins.
std::vector<CalibrationBin> calibration_table(const std::vector<CalibrationSample>& samples,
                                              double bin_width = 0.2);

struct AgreementResult {
    double rate = 0.0;
    int disagreements = 0;
    std::vector<Preference> final_labels;
};

// Share of items on which the two first-round labels agree. Disagreeing
// items take the majority once the second-round label joins; an item whose
// disagreement no second-round label settles is an error ("unresolved
// instance").
AgreementResult agreement_rate(const std::vector<Preference>& a, const std::vector<Preference>& b,
                               const std::vector<std::optional<Preference>>& round2 = {});

// One label per instance for comparing against gold: agreeing legs keep
// their verdict, disagreeing legs fall back to Tie, a single parsed leg
// stands alone.
struct FinalPrediction {
    std::string instance_id;
    Preference label = Preference::Tie;
    bool from_disagreement = false;
    bool partial = false;
};

std::vector<FinalPrediction> final_predictions(const std::vector<EvaluationRecord>& records);

struct GoldLabel {
    std::string instance_id;
    Preference label = Preference::R1;
    std::optional<Category> category;
};

std::vector<GoldLabel> load_gold_jsonl(const std::string& path);

// Stable JSON and fixed-width text renderings of a summary. Text shows three
// decimal places; JSON keeps full precision. Neither embeds timestamps, so
// re-rendering the same records is byte-identical.
nlohmann::json summary_json(const RunSummary& summary);
nlohmann::json calibration_json(const std::vector<CalibrationBin>& bins);
nlohmann::json macro_f1_json(const MacroF1& f1);

std::string summary_text(const RunSummary& summary);
std::string calibration_text(const std::vector<CalibrationBin>& bins);

} // namespace judgeval::metrics
