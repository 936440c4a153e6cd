#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "judgeval/core.hpp"

namespace judgeval::strategy {

// Named prompt templates with {placeholder} slots. The built-in set covers
// every task and strategy combination; a directory of .txt files can override
// individual entries by file stem.
class TemplateSet {
  public:
    static TemplateSet builtin();
    static TemplateSet from_directory(const std::string& dir);

    const std::string& get(const std::string& name) const;
    void set(std::string name, std::string text);

    // Short digest over all names and bodies, recorded in run manifests so
    // results can be traced to the exact prompts that produced them.
    std::string version() const;

    const std::map<std::string, std::string>& all() const { return templates_; }

  private:
    std::map<std::string, std::string> templates_;
};

// A fully rendered request, plus the marker that introduces the verdict in
// the judge's reply.
struct PromptBundle {
    std::vector<Message> messages;
    std::string verdict_marker;
    TaskKind task = TaskKind::Pairwise;
    StrategyKind strategy = StrategyKind::Default;
};

struct ParsedJudgment {
    Verdict verdict;
    std::optional<ConfidenceEstimate> verbalized_confidence;
    std::vector<std::string> warnings;
};

// "Rating:" for grading, "Result:" for comparison. Matching is
// case-insensitive by substring, so "Evaluation result:" also counts.
const std::string& verdict_marker(TaskKind task);

// Natural-language join of the criteria list ("a, b, and c").
std::string join_criteria(const std::vector<std::string>& criteria);

// Renders a 0-to-9 grading request for the single response of `inst`.
// The Reference strategy needs a reference answer, taken from the explicit
// argument first and the instance second; ValidationError
// ("missing reference") otherwise.
PromptBundle render_single_grading(const EvalInstance& inst, const JudgeConfig& config,
                                   const TemplateSet& templates,
                                   std::optional<std::string> reference = std::nullopt);

// Renders a two-response comparison request. Swapped order presents the
// responses in reverse; callers re-label the parsed verdict afterwards.
// The ConfiLM strategy requires a verbalized confidence statement on both
// responses (ValidationError "missing confidence statements").
PromptBundle render_pairwise(const EvalInstance& inst, const JudgeConfig& config,
                             const TemplateSet& templates, PresentationOrder order,
                             std::optional<std::string> reference = std::nullopt);

// Stage one of the Reference strategy: ask the judge model to answer the
// instruction itself so the answer can anchor the later evaluation.
PromptBundle render_reference_request(const EvalInstance& inst, const JudgeConfig& config,
                                      const TemplateSet& templates);

// Extracts the verdict, explanation, and any self-reported confidence from
// raw judge output. Throws ParseError ("unparseable judgment") when no
// verdict can be recovered, including via the [[x]] fallback.
ParsedJudgment parse_judgment(const std::string& text, TaskKind task, StrategyKind strategy);

} // namespace judgeval::strategy
