#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "judgeval/client.hpp"
#include "judgeval/core.hpp"
#include "judgeval/metrics.hpp"
#include "judgeval/strategy.hpp"

namespace judgeval::dataset {

struct InstructionItem {
    std::string id;
    std::string instruction;
    std::optional<std::string> reference_answer;
    std::optional<Category> category;
};

// One instance's human annotation: two independent first-round labels, a
// tie-breaking label collected only when those two disagree, quality flags
// raised unanimously, and the explanation text the corpus will carry.
struct AnnotationRecord {
    std::string instance_id;
    std::pair<Preference, Preference> round1_labels{Preference::R1, Preference::R1};
    std::optional<Preference> round2_label;
    bool low_quality = false;
    bool hard_to_evaluate = false;
    std::string explanation;
};

struct LabeledInstance {
    EvalInstance instance;
    Preference label = Preference::R1;
    std::string explanation;
};

std::vector<InstructionItem> load_instructions_jsonl(const std::string& path);
std::vector<AnnotationRecord> load_annotations_jsonl(const std::string& path);
std::vector<LabeledInstance> load_labeled_jsonl(const std::string& path);
void save_labeled_jsonl(const std::vector<LabeledInstance>& items, const std::string& path);

// Chat markers that must never survive into evaluation or training text.
const std::vector<std::string>& default_special_tokens();

// Removes every occurrence of the given tokens: occurrences inside the text
// become a single space, occurrences at the edges vanish, and surrounding
// whitespace is trimmed. Idempotent.
std::string scrub_special_tokens(const std::string& text,
                                 const std::vector<std::string>& tokens = default_special_tokens());

std::vector<EvalInstance> scrub_dataset(std::vector<EvalInstance> instances,
                                        const std::vector<std::string>& tokens = default_special_tokens());

// Samples one answer per (instruction, model) at temperature 0.7 and forms
// an instance per unordered model pair, ids "<instruction>#<modelA>#<modelB>"
// following the order models were given in. Answers sampled with logprobs
// carry a mean-token-probability confidence and its verbal statement; when
// the backend cannot supply logprobs the answers are kept bare. A failed
// generation drops the pairs needing it, logged to stderr, instead of
// aborting the batch.
std::vector<EvalInstance> generate_pairs(const std::vector<InstructionItem>& items,
                                         const std::vector<std::string>& models,
                                         client::ChatClient& client, int max_tokens = 1024);

// Raised when first-round labels disagree and no second-round label settles
// them; carries every offending instance so callers can list them at once.
class UnresolvedAnnotationsError : public ValidationError {
  public:
    explicit UnresolvedAnnotationsError(std::vector<std::string> ids);
    const std::vector<std::string>& instance_ids() const { return ids_; }

  private:
    std::vector<std::string> ids_;
};

struct MergeResult {
    std::vector<LabeledInstance> labeled;
    metrics::AgreementResult agreement;
    int dropped_flagged = 0;
};

// Joins instances with their annotations. Instances whose quality flags are
// raised are dropped; the rest take the first-round label when the two
// agree and the second-round majority otherwise, with the explanation from
// the annotation file. Unsettled disagreements collect into a single
// UnresolvedAnnotationsError; an annotation pointing at an unknown instance
// is a ValidationError.
MergeResult merge_annotations(const std::vector<EvalInstance>& instances,
                              const std::vector<AnnotationRecord>& annotations);

struct BalanceResult {
    std::vector<LabeledInstance> kept;
    int dropped = 0;
    double majority_share = 0.0;
};

// Drops majority-label instances, highest id first, until that label's share
// of the remaining set is within `tolerance` of one half. The drop count is
// minimal and the surviving order unchanged.
BalanceResult balance_labels(std::vector<LabeledInstance> items, double tolerance = 0.05);

// Which corpus flavors to write: judge prompts with the responses' verbal
// confidence statements, stripped of them, or both side by side.
enum class CorpusVariant { WithConfidence, WithoutConfidence, Both };

std::string to_string(CorpusVariant variant);
CorpusVariant corpus_variant_from_string(const std::string& s);

struct CorpusOptions {
    std::vector<std::string> criteria = JudgeConfig::default_criteria();
    double train_ratio = 0.9;
    unsigned seed = 0;
    CorpusVariant variant = CorpusVariant::Both;
    strategy::TemplateSet templates = strategy::TemplateSet::builtin();
};

struct CorpusManifest {
    int total = 0;
    int train = 0;
    int test = 0;
    double train_ratio = 0.9;
    unsigned seed = 0;
    std::string variant;
    std::string template_version;
    std::map<std::string, int> label_counts;
    std::vector<std::string> files;
};

void to_json(nlohmann::json& j, const CorpusManifest& m);
void from_json(const nlohmann::json& j, CorpusManifest& m);

// One training chat per labeled instance: the comparison prompt with both
// answers and their confidence statements, and the target
// "Explanation: ...\nEvaluation result: <1|2>". A seeded Fisher-Yates
// shuffle picks the train split; order within each split follows the input.
// Writes {train,test}_{with,without}_confidence.jsonl for the selected
// variants plus manifest.json; the without-confidence files differ exactly
// by the lines mentioning confidence. Tie labels cannot be emitted.
CorpusManifest emit_corpus(const std::vector<LabeledInstance>& items, const std::string& out_dir,
                           const CorpusOptions& options = {});

// The chat messages for one labeled instance, before splitting.
std::vector<Message> corpus_messages(const LabeledInstance& item, const CorpusOptions& options,
                                     bool with_confidence);

} // namespace judgeval::dataset
