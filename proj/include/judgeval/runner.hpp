#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "judgeval/client.hpp"
#include "judgeval/core.hpp"
#include "judgeval/strategy.hpp"

namespace judgeval::runner {

// Half-count aggregation over the two presentation orders of one instance.
// `win` counts toward the first response in its original position.
struct WeightedTally {
    double win = 0.0;
    double lose = 0.0;
    double tie = 0.0;
    bool partial = false;

    WeightedTally& operator+=(const WeightedTally& other);
    bool operator==(const WeightedTally&) const = default;
};

// The two legs of one order-swapped comparison. Verdicts are stored in the
// original response frame: the swapped leg's raw "1"/"2" has already been
// mapped back before storage.
struct PairedRecord {
    EvaluationRecord forward;
    EvaluationRecord swapped;
};

// Each parsed leg contributes weight 0.5; when only one leg parsed it
// carries full weight and the tally is marked partial. Preference verdicts
// only. With `disagree_as_tie` set, a pair whose legs disagree counts as a
// whole tie instead of splitting its weight.
WeightedTally aggregate_swapped_pair(const EvaluationRecord& forward,
                                     const EvaluationRecord& swapped,
                                     bool disagree_as_tie = false);

std::vector<EvaluationRecord> flatten(const std::vector<PairedRecord>& pairs);

struct RunManifest {
    std::string run_id;
    std::string started_at;
    std::string finished_at;
    std::string endpoint;
    std::string dataset_path;
    std::string dataset_hash;
    std::string template_version;
    JudgeConfig judge;
    bool swap_enabled = false;
    std::optional<int> consistency_n;
    int instance_count = 0;
    int request_count = 0;
    int failed_count = 0;
};

void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

// Current time as "YYYY-MM-DDTHH:MM:SSZ".
std::string utc_timestamp();

// run_id is derived from the template digest, the judge configuration, and
// the sorted request hashes, so identical runs share an id and timestamps
// stay out of it.
RunManifest build_manifest(const std::vector<EvaluationRecord>& records, const JudgeConfig& judge,
                           const std::string& endpoint, const std::string& template_version,
                           int instance_count);

// Writes records.jsonl and manifest.json under `dir`, creating it if needed.
void write_run(const std::string& dir, const std::vector<EvaluationRecord>& records,
               const RunManifest& manifest);

// Drives judge requests for whole datasets. Instances are processed by a
// small worker pool but results keep input order. Per-instance failures
// (render errors, transport errors, unparseable replies) become records
// without a verdict instead of aborting the run.
class Runner {
  public:
    Runner(client::EndpointConfig endpoint, JudgeConfig judge, strategy::TemplateSet templates);

    // Sampling temperature for self-generated reference answers. Kept apart
    // from the judge temperature so consistency sampling does not leak into
    // the reference stage.
    double reference_temperature = 0.0;

    // One grading request per instance. The Reference strategy first asks
    // the judge model to answer the instruction itself unless the instance
    // already carries a reference answer.
    std::vector<EvaluationRecord> run_single_grading(const std::vector<EvalInstance>& instances);

    // Two requests per instance, one per presentation order.
    std::vector<PairedRecord> run_pairwise_swapped(const std::vector<EvalInstance>& instances);

    // One forward-order comparison per instance, skipping the swap protocol.
    std::vector<EvaluationRecord> run_pairwise_forward(const std::vector<EvalInstance>& instances);

    // One request with `samples` completions at temperature 0.7. The verdict
    // is the mode across samples and the confidence its share; unparseable
    // samples shrink the pool and are flagged.
    EvaluationRecord run_consistency(const EvalInstance& inst, int samples);
    std::vector<EvaluationRecord> run_consistency_all(const std::vector<EvalInstance>& instances,
                                                      int samples);

    const JudgeConfig& judge_config() const { return judge_; }
    const strategy::TemplateSet& templates() const { return templates_; }

  private:
    EvaluationRecord evaluate_once(const EvalInstance& inst, PresentationOrder order,
                                   const std::optional<std::string>& reference);
    std::optional<std::string> maybe_generate_reference(const EvalInstance& inst);
    client::ChatResponse complete_with_fallback(client::ChatRequest request,
                                                std::vector<std::string>& flags);

    client::ChatClient client_;
    JudgeConfig judge_;
    strategy::TemplateSet templates_;
};

} // namespace judgeval::runner
