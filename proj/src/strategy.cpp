#include "judgeval/strategy.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "judgeval/confidence.hpp"

namespace judgeval::strategy {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::size_t ci_find(const std::string& haystack, const std::string& needle, std::size_t from = 0) {
    return lower(haystack).find(lower(needle), from);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string replace_all(std::string text, const std::string& key, const std::string& value) {
    const std::string slot = "{" + key + "}";
    std::size_t pos = 0;
    while ((pos = text.find(slot, pos)) != std::string::npos) {
        text.replace(pos, slot.size(), value);
        pos += value.size();
    }
    return text;
}

std::string render(const TemplateSet& templates, const std::string& name,
                   const std::vector<std::pair<std::string, std::string>>& vars) {
    std::string text = templates.get(name);
    for (const auto& [key, value] : vars) text = replace_all(std::move(text), key, value);
    return text;
}

std::map<std::string, std::string> builtin_templates() {
    std::map<std::string, std::string> t;

    t["grading_default_system"] =
        R"(You are an impartial judge. Evaluate the quality of the response provided by an AI assistant to the user instruction displayed below. Consider factors such as the {criteria} of the response, and judge as objectively as possible. Rate the response on a scale of 0 to 9, where a higher score means better overall quality.

Reply in exactly this format:
Rating: <score from 0 to 9>
Explanation: <the reasons for your rating>)";

    t["grading_cot_system"] =
        R"(You are an impartial judge. Evaluate the quality of the response provided by an AI assistant to the user instruction displayed below. Consider factors such as the {criteria} of the response, and judge as objectively as possible. Work through the instruction and the response step by step before settling on a score. Rate the response on a scale of 0 to 9, where a higher score means better overall quality.

Reply in exactly this format:
Reasoning: <your step-by-step analysis>
Rating: <score from 0 to 9>)";

    t["grading_reference_system"] =
        R"(You are an impartial judge. Evaluate the quality of the response provided by an AI assistant to the user instruction displayed below. A reference answer is provided; weigh the response against it. Consider factors such as the {criteria} of the response, and judge as objectively as possible. Rate the response on a scale of 0 to 9, where a higher score means better overall quality.

Reply in exactly this format:
Rating: <score from 0 to 9>
Explanation: <the reasons for your rating>)";

    t["grading_user"] =
        R"([Instruction]
{instruction}

[Response]
{response})";

    t["grading_reference_user"] =
        R"([Instruction]
{instruction}

[Reference Answer]
{reference}

[Response]
{response})";

    t["pairwise_default_system"] =
        R"(You are an impartial judge. Compare the quality of the two responses provided by different AI assistants to the user instruction displayed below. Consider factors such as the {criteria} of the responses, and judge as objectively as possible. Do not let the order of presentation, the length of the responses, or the names of the assistants influence your decision.

Reply in exactly this format:
Result: <1 if Response 1 is better, 2 if Response 2 is better, or Tie if both are equally good>
Explanation: <the reasons for your decision>)";

    t["pairwise_cot_system"] =
        R"(You are an impartial judge. Compare the quality of the two responses provided by different AI assistants to the user instruction displayed below. Consider factors such as the {criteria} of the responses, and judge as objectively as possible. Do not let the order of presentation, the length of the responses, or the names of the assistants influence your decision. Work through both responses step by step before settling on a verdict.

Reply in exactly this format:
Reasoning: <your step-by-step analysis>
Result: <1 if Response 1 is better, 2 if Response 2 is better, or Tie if both are equally good>)";

    t["pairwise_reference_system"] =
        R"(You are an impartial judge. Compare the quality of the two responses provided by different AI assistants to the user instruction displayed below. A reference answer is provided; weigh each response against it. Consider factors such as the {criteria} of the responses, and judge as objectively as possible. Do not let the order of presentation, the length of the responses, or the names of the assistants influence your decision.

Reply in exactly this format:
Result: <1 if Response 1 is better, 2 if Response 2 is better, or Tie if both are equally good>
Explanation: <the reasons for your decision>)";

    t["pairwise_user"] =
        R"([Instruction]
{instruction}

[Response 1]
{response_1}

[Response 2]
{response_2})";

    t["pairwise_reference_user"] =
        R"([Instruction]
{instruction}

[Reference Answer]
{reference}

[Response 1]
{response_1}

[Response 2]
{response_2})";

    t["confilm_system"] =
        R"(You are an impartial judge. Compare the quality of the two responses provided by different AI assistants to the user instruction displayed below. Consider factors such as the {criteria} of the responses, and judge as objectively as possible.
Each response is followed by a line "Confidence of Response <k>: <statement>" expressing how sure its author is about the answer; weigh that statement together with the content, since a confidently stated wrong answer should not outrank a cautious correct one.
Pick the better response; a tie is not allowed.

Reply in exactly this format:
Explanation: <the reasons for your decision>
Evaluation result: <1 if Response 1 is better, 2 if Response 2 is better>)";

    t["confilm_user"] =
        R"([Instruction]
{instruction}

[Response 1]
{response_1}
Confidence of Response 1: {confidence_1}

[Response 2]
{response_2}
Confidence of Response 2: {confidence_2})";

    t["reference_gen_system"] =
        R"(You are a capable assistant. Answer the instruction below to the best of your ability, giving a complete and accurate answer.)";

    t["reference_gen_user"] = R"({instruction})";

    return t;
}

} // namespace

TemplateSet TemplateSet::builtin() {
    TemplateSet set;
    set.templates_ = builtin_templates();
    return set;
}

TemplateSet TemplateSet::from_directory(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ConfigError("template directory not found: " + dir);

    TemplateSet set = builtin();
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read template file: " + path.string());
        std::ostringstream body;
        body << in.rdbuf();
        set.set(path.stem().string(), body.str());
    }
    return set;
}

const std::string& TemplateSet::get(const std::string& name) const {
    const auto it = templates_.find(name);
    if (it == templates_.end()) throw ConfigError("unknown template: " + name);
    return it->second;
}

void TemplateSet::set(std::string name, std::string text) {
    templates_[std::move(name)] = std::move(text);
}

std::string TemplateSet::version() const {
    std::string acc;
    for (const auto& [name, body] : templates_) {
        acc += name;
        acc += '\n';
        acc += body;
        acc += '\n';
    }
    return sha256_hex(acc).substr(0, 12);
}

const std::string& verdict_marker(TaskKind task) {
    static const std::string rating = "Rating:";
    static const std::string result = "Result:";
    return task == TaskKind::SingleGrading ? rating : result;
}

std::string join_criteria(const std::vector<std::string>& criteria) {
    if (criteria.empty()) throw ConfigError("criteria must be non-empty");
    if (criteria.size() == 1) return criteria.front();
    if (criteria.size() == 2) return criteria[0] + " and " + criteria[1];
    std::string out;
    for (std::size_t i = 0; i + 1 < criteria.size(); ++i) out += criteria[i] + ", ";
    return out + "and " + criteria.back();
}

namespace {

std::string resolve_reference(const EvalInstance& inst, const std::optional<std::string>& explicit_ref) {
    if (explicit_ref) return *explicit_ref;
    if (inst.reference_answer) return *inst.reference_answer;
    throw ValidationError("missing reference");
}

} // namespace

PromptBundle render_single_grading(const EvalInstance& inst, const JudgeConfig& config,
                                   const TemplateSet& templates,
                                   std::optional<std::string> reference) {
    if (inst.responses.size() != 1) {
        throw ValidationError("single grading needs exactly 1 response, got " +
                              std::to_string(inst.responses.size()));
    }

    std::string system_name;
    std::string user_name = "grading_user";
    switch (config.strategy) {
        case StrategyKind::Default: system_name = "grading_default_system"; break;
        case StrategyKind::CoT: system_name = "grading_cot_system"; break;
        case StrategyKind::Reference:
            system_name = "grading_reference_system";
            user_name = "grading_reference_user";
            break;
        case StrategyKind::ConfiLM:
            throw ConfigError("confilm strategy applies to pairwise comparison only");
    }

    std::vector<std::pair<std::string, std::string>> vars = {
        {"criteria", join_criteria(config.criteria)},
        {"instruction", inst.instruction},
        {"response", inst.responses[0].text},
    };
    if (config.strategy == StrategyKind::Reference) {
        vars.emplace_back("reference", resolve_reference(inst, reference));
    }

    PromptBundle bundle;
    bundle.messages = {{"system", render(templates, system_name, vars)},
                       {"user", render(templates, user_name, vars)}};
    bundle.verdict_marker = verdict_marker(TaskKind::SingleGrading);
    bundle.task = TaskKind::SingleGrading;
    bundle.strategy = config.strategy;
    return bundle;
}

PromptBundle render_pairwise(const EvalInstance& inst, const JudgeConfig& config,
                             const TemplateSet& templates, PresentationOrder order,
                             std::optional<std::string> reference) {
    if (inst.responses.size() != 2) {
        throw ValidationError("pairwise comparison needs exactly 2 responses, got " +
                              std::to_string(inst.responses.size()));
    }

    const auto& first =
        order == PresentationOrder::Forward ? inst.responses[0] : inst.responses[1];
    const auto& second =
        order == PresentationOrder::Forward ? inst.responses[1] : inst.responses[0];

    std::string system_name;
    std::string user_name = "pairwise_user";
    switch (config.strategy) {
        case StrategyKind::Default: system_name = "pairwise_default_system"; break;
        case StrategyKind::CoT: system_name = "pairwise_cot_system"; break;
        case StrategyKind::Reference:
            system_name = "pairwise_reference_system";
            user_name = "pairwise_reference_user";
            break;
        case StrategyKind::ConfiLM:
            system_name = "confilm_system";
            user_name = "confilm_user";
            break;
    }

    std::vector<std::pair<std::string, std::string>> vars = {
        {"criteria", join_criteria(config.criteria)},
        {"instruction", inst.instruction},
        {"response_1", first.text},
        {"response_2", second.text},
    };
    if (config.strategy == StrategyKind::Reference) {
        vars.emplace_back("reference", resolve_reference(inst, reference));
    }
    if (config.strategy == StrategyKind::ConfiLM) {
        if (!first.verbalized_confidence || !second.verbalized_confidence) {
            throw ValidationError("missing confidence statements");
        }
        vars.emplace_back("confidence_1", *first.verbalized_confidence);
        vars.emplace_back("confidence_2", *second.verbalized_confidence);
    }

    PromptBundle bundle;
    bundle.messages = {{"system", render(templates, system_name, vars)},
                       {"user", render(templates, user_name, vars)}};
    bundle.verdict_marker = verdict_marker(TaskKind::Pairwise);
    bundle.task = TaskKind::Pairwise;
    bundle.strategy = config.strategy;
    return bundle;
}

PromptBundle render_reference_request(const EvalInstance& inst, const JudgeConfig& config,
                                      const TemplateSet& templates) {
    std::vector<std::pair<std::string, std::string>> vars = {{"instruction", inst.instruction}};

    PromptBundle bundle;
    bundle.messages = {{"system", render(templates, "reference_gen_system", vars)},
                       {"user", render(templates, "reference_gen_user", vars)}};
    bundle.verdict_marker = "";
    bundle.task = config.task;
    bundle.strategy = StrategyKind::Reference;
    return bundle;
}

namespace {

struct LiteralMatch {
    std::string literal;
    std::size_t begin = 0;
    std::size_t end = 0;
};

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

// Tries to read a valid verdict literal starting at or after `from`,
// skipping blanks. A digit run longer than one character is not a score,
// and "1" inside "12" is not a choice.
std::optional<LiteralMatch> read_literal(const std::string& text, std::size_t from, TaskKind task) {
    std::size_t i = from;
    while (i < text.size() &&
           (text[i] == ' ' || text[i] == '\t' || text[i] == '*' || text[i] == '#')) {
        ++i;
    }
    if (i >= text.size()) return std::nullopt;

    if (task == TaskKind::Pairwise) {
        const std::string low = lower(text);
        if (low.compare(i, 3, "tie") == 0 &&
            (i + 3 >= text.size() || !is_word_char(text[i + 3]))) {
            return LiteralMatch{"Tie", i, i + 3};
        }
        if ((text[i] == '1' || text[i] == '2') &&
            (i + 1 >= text.size() || !is_word_char(text[i + 1]))) {
            return LiteralMatch{std::string(1, text[i]), i, i + 1};
        }
        return std::nullopt;
    }

    if (std::isdigit(static_cast<unsigned char>(text[i])) &&
        (i + 1 >= text.size() || !is_word_char(text[i + 1]))) {
        return LiteralMatch{std::string(1, text[i]), i, i + 1};
    }
    return std::nullopt;
}

std::optional<LiteralMatch> read_bracket_fallback(const std::string& text, TaskKind task) {
    std::size_t pos = 0;
    while ((pos = text.find("[[", pos)) != std::string::npos) {
        const auto close = text.find("]]", pos + 2);
        if (close == std::string::npos) break;
        const std::string inner = trim(text.substr(pos + 2, close - pos - 2));
        if (task == TaskKind::Pairwise) {
            if (inner == "1" || inner == "2") return LiteralMatch{inner, pos + 2, close};
            if (lower(inner) == "tie") return LiteralMatch{"Tie", pos + 2, close};
        } else if (inner.size() == 1 && std::isdigit(static_cast<unsigned char>(inner[0]))) {
            return LiteralMatch{inner, pos + 2, close};
        }
        pos = close + 2;
    }
    return std::nullopt;
}

} // namespace

ParsedJudgment parse_judgment(const std::string& text, TaskKind task, StrategyKind strategy) {
    const std::string& marker = verdict_marker(task);
    const std::string low_text = lower(text);
    const std::string low_marker = lower(marker);

    std::optional<LiteralMatch> match;
    std::size_t marker_pos = std::string::npos;
    std::vector<std::string> warnings;

    for (std::size_t pos = low_text.find(low_marker); pos != std::string::npos;
         pos = low_text.find(low_marker, pos + 1)) {
        if (auto m = read_literal(text, pos + marker.size(), task)) {
            match = m;
            marker_pos = pos;
            break;
        }
    }

    if (!match) {
        match = read_bracket_fallback(text, task);
        if (match) warnings.push_back("fallback bracket parse");
    }
    if (!match) throw ParseError("unparseable judgment");

    std::string explanation;
    const auto expl_pos = ci_find(text, "explanation:");
    if (expl_pos != std::string::npos) {
        const std::size_t begin = expl_pos + std::string("explanation:").size();
        std::size_t end = text.size();
        // ConfiLM output puts the verdict line after the explanation. The
        // matched marker may be the tail of "Evaluation result:", so back the
        // cut up over that leading word too.
        if (marker_pos != std::string::npos && marker_pos > begin) {
            std::size_t cut = marker_pos;
            while (cut > begin && (text[cut - 1] == ' ' || text[cut - 1] == '\t')) --cut;
            static const std::string ev = "evaluation";
            if (cut >= begin + ev.size() && lower(text.substr(cut - ev.size(), ev.size())) == ev) {
                cut -= ev.size();
            }
            end = cut;
        }
        explanation = trim(text.substr(begin, end - begin));
    } else {
        const auto reasoning_pos = ci_find(text, "reasoning:");
        if (reasoning_pos != std::string::npos && marker_pos != std::string::npos &&
            reasoning_pos < marker_pos) {
            const std::size_t begin = reasoning_pos + std::string("reasoning:").size();
            explanation = trim(text.substr(begin, marker_pos - begin));
        } else if (marker_pos != std::string::npos) {
            explanation = trim(text.substr(match->end));
            if (explanation.empty()) explanation = trim(text.substr(0, marker_pos));
        } else {
            explanation = trim(text);
        }
    }

    ParsedJudgment parsed;
    if (task == TaskKind::SingleGrading) {
        parsed.verdict = Verdict::make_score(match->literal[0] - '0', explanation);
    } else {
        parsed.verdict =
            Verdict::make_preference(preference_from_string(match->literal), explanation);
    }
    parsed.warnings = std::move(warnings);

    try {
        parsed.verbalized_confidence = confidence::parse_verbalized_confidence(text);
    } catch (const Error&) {
        parsed.verbalized_confidence.reset();
    }

    (void)strategy;
    return parsed;
}

} // namespace judgeval::strategy
