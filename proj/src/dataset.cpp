#include "judgeval/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>

#include "judgeval/confidence.hpp"

namespace judgeval::dataset {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename T, typename Parse>
std::vector<T> load_lines(const std::string& path, const char* what, Parse parse) {
    std::ifstream in(path);
    if (!in) throw ConfigError(std::string("cannot open ") + what + " file: " + path);
    std::vector<T> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(parse(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

} // namespace

std::vector<InstructionItem> load_instructions_jsonl(const std::string& path) {
    return load_lines<InstructionItem>(path, "instructions", [](const nlohmann::json& j) {
        InstructionItem item;
        item.id = j.at("id").get<std::string>();
        item.instruction = j.at("instruction").get<std::string>();
        if (j.contains("reference_answer") && !j.at("reference_answer").is_null()) {
            item.reference_answer = j.at("reference_answer").get<std::string>();
        }
        if (j.contains("category") && !j.at("category").is_null()) {
            item.category = category_from_string(j.at("category").get<std::string>());
        }
        return item;
    });
}

std::vector<AnnotationRecord> load_annotations_jsonl(const std::string& path) {
    return load_lines<AnnotationRecord>(path, "annotations", [](const nlohmann::json& j) {
        AnnotationRecord a;
        a.instance_id = j.at("instance_id").get<std::string>();
        const auto& round1 = j.at("round1_labels");
        if (!round1.is_array() || round1.size() != 2) {
            throw ValidationError("round1_labels must hold exactly 2 labels");
        }
        a.round1_labels = {preference_from_string(round1[0].get<std::string>()),
                           preference_from_string(round1[1].get<std::string>())};
        if (j.contains("round2_label") && !j.at("round2_label").is_null()) {
            a.round2_label = preference_from_string(j.at("round2_label").get<std::string>());
        }
        a.low_quality = j.value("low_quality", false);
        a.hard_to_evaluate = j.value("hard_to_evaluate", false);
        a.explanation = j.value("explanation", "");
        return a;
    });
}

std::vector<LabeledInstance> load_labeled_jsonl(const std::string& path) {
    return load_lines<LabeledInstance>(path, "labeled", [](const nlohmann::json& j) {
        LabeledInstance item;
        item.instance = j.at("instance").get<EvalInstance>();
        item.label = preference_from_string(j.at("label").get<std::string>());
        item.explanation = j.value("explanation", "");
        return item;
    });
}

void save_labeled_jsonl(const std::vector<LabeledInstance>& items, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write labeled file: " + path);
    for (const auto& item : items) {
        nlohmann::json j = {{"instance", item.instance},
                            {"label", to_string(item.label)},
                            {"explanation", item.explanation}};
        out << j.dump() << "\n";
    }
}

const std::vector<std::string>& default_special_tokens() {
    static const std::vector<std::string> tokens = {"<|im_end|>", "<eos>", "<|eot_id|>", "</s>"};
    return tokens;
}

std::string scrub_special_tokens(const std::string& text, const std::vector<std::string>& tokens) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t matched = 0;
        for (const auto& tok : tokens) {
            if (!tok.empty() && tok.size() > matched && text.compare(i, tok.size(), tok) == 0) {
                matched = tok.size();
            }
        }
        if (matched > 0) {
            out += ' ';
            i += matched;
        } else {
            out += text[i];
            ++i;
        }
    }
    return trim(out);
}

std::vector<EvalInstance> scrub_dataset(std::vector<EvalInstance> instances,
                                        const std::vector<std::string>& tokens) {
    for (auto& inst : instances) {
        inst.instruction = scrub_special_tokens(inst.instruction, tokens);
        if (inst.reference_answer) {
            inst.reference_answer = scrub_special_tokens(*inst.reference_answer, tokens);
        }
        for (auto& r : inst.responses) r.text = scrub_special_tokens(r.text, tokens);
    }
    return instances;
}

std::vector<EvalInstance> generate_pairs(const std::vector<InstructionItem>& items,
                                         const std::vector<std::string>& models,
                                         client::ChatClient& client, int max_tokens) {
    if (models.size() < 2) throw ConfigError("need at least 2 models to form pairs");
    if (std::set<std::string>(models.begin(), models.end()).size() != models.size()) {
        throw ConfigError("model names must be distinct");
    }

    std::vector<EvalInstance> instances;
    for (const auto& item : items) {
        // One sample per model, shared by every pair this instruction forms.
        // A model that fails to answer takes its pairs down with it, but the
        // rest of the batch continues.
        std::vector<std::optional<CandidateResponse>> answers(models.size());
        for (std::size_t m = 0; m < models.size(); ++m) {
            client::ChatRequest request;
            request.messages = {{"user", item.instruction}};
            request.model = models[m];
            request.temperature = 0.7;
            request.max_tokens = max_tokens;
            request.logprobs = true;

            client::ChatResponse response;
            try {
                try {
                    response = client.complete(request);
                } catch (const client::LogprobsUnsupportedError&) {
                    request.logprobs = false;
                    response = client.complete(request);
                }
            } catch (const Error& e) {
                std::cerr << "dropped " << item.id << " x " << models[m]
                          << ": generation failed: " << e.what() << "\n";
                continue;
            }

            CandidateResponse answer;
            answer.model_name = models[m];
            const auto& choice = response.choices.front();
            answer.text = choice.text;
            if (choice.has_logprobs && !choice.tokens.empty()) {
                answer.response_confidence = confidence::response_confidence(choice.tokens);
                answer.verbalized_confidence =
                    confidence::verbalize_confidence(answer.response_confidence->value);
            }
            answers[m] = std::move(answer);
        }

        for (std::size_t i = 0; i < models.size(); ++i) {
            for (std::size_t j = i + 1; j < models.size(); ++j) {
                if (!answers[i] || !answers[j]) continue;
                EvalInstance inst;
                inst.id = item.id + "#" + models[i] + "#" + models[j];
                inst.instruction = item.instruction;
                inst.reference_answer = item.reference_answer;
                inst.category = item.category;
                inst.responses = {*answers[i], *answers[j]};
                instances.push_back(std::move(inst));
            }
        }
    }
    return instances;
}

UnresolvedAnnotationsError::UnresolvedAnnotationsError(std::vector<std::string> ids)
    : ValidationError([&] {
          std::string msg = "unresolved instances:";
          for (const auto& id : ids) msg += " " + id;
          return msg;
      }()),
      ids_(std::move(ids)) {}

MergeResult merge_annotations(const std::vector<EvalInstance>& instances,
                              const std::vector<AnnotationRecord>& annotations) {
    std::set<std::string> known;
    for (const auto& inst : instances) known.insert(inst.id);

    std::map<std::string, const AnnotationRecord*> by_instance;
    for (const auto& a : annotations) {
        if (!known.count(a.instance_id)) {
            throw ValidationError("annotation references unknown instance: " + a.instance_id);
        }
        by_instance[a.instance_id] = &a;
    }

    // Every unsettled disagreement is reported, not just the first.
    std::vector<std::string> unresolved;
    std::vector<Preference> first;
    std::vector<Preference> second;
    std::vector<std::optional<Preference>> round2;
    std::vector<std::pair<const EvalInstance*, const AnnotationRecord*>> surviving;

    MergeResult result;
    for (const auto& inst : instances) {
        const auto it = by_instance.find(inst.id);
        if (it == by_instance.end()) continue;
        const auto& ann = *it->second;

        if (ann.low_quality || ann.hard_to_evaluate) {
            result.dropped_flagged += 1;
            continue;
        }

        const auto [a, b] = ann.round1_labels;
        const bool settled =
            a == b || (ann.round2_label && (*ann.round2_label == a || *ann.round2_label == b));
        if (!settled) {
            unresolved.push_back(inst.id);
            continue;
        }
        first.push_back(a);
        second.push_back(b);
        round2.push_back(ann.round2_label);
        surviving.emplace_back(&inst, &ann);
    }
    if (!unresolved.empty()) throw UnresolvedAnnotationsError(std::move(unresolved));
    if (surviving.empty()) throw ValidationError("empty summary");

    result.agreement = metrics::agreement_rate(first, second, round2);
    for (std::size_t i = 0; i < surviving.size(); ++i) {
        LabeledInstance labeled;
        labeled.instance = *surviving[i].first;
        labeled.label = result.agreement.final_labels[i];
        labeled.explanation = surviving[i].second->explanation;
        result.labeled.push_back(std::move(labeled));
    }
    return result;
}

BalanceResult balance_labels(std::vector<LabeledInstance> items, double tolerance) {
    if (tolerance < 0.0 || tolerance >= 0.5) throw ConfigError("tolerance must be in [0, 0.5)");

    BalanceResult result;
    if (items.empty()) {
        result.kept = std::move(items);
        return result;
    }

    int r1 = 0;
    int r2 = 0;
    for (const auto& item : items) {
        if (item.label == Preference::R1) ++r1;
        if (item.label == Preference::R2) ++r2;
    }
    const auto majority = r1 >= r2 ? Preference::R1 : Preference::R2;
    const int major_count = std::max(r1, r2);
    const int total = static_cast<int>(items.size());

    auto share_after = [&](int k) {
        return static_cast<double>(major_count - k) / static_cast<double>(total - k);
    };

    if (share_after(0) < 0.5 - tolerance) {
        throw ValidationError("cannot balance labels within tolerance");
    }

    int k = 0;
    while (std::abs(share_after(k) - 0.5) > tolerance) {
        ++k;
        if (k >= major_count || k >= total) {
            throw ValidationError("cannot balance labels within tolerance");
        }
    }

    if (k == 0) {
        result.kept = std::move(items);
        result.majority_share = share_after(0);
        return result;
    }

    std::vector<std::string> major_ids;
    for (const auto& item : items) {
        if (item.label == majority) major_ids.push_back(item.instance.id);
    }
    std::sort(major_ids.begin(), major_ids.end(), std::greater<>());
    const std::set<std::string> dropped(major_ids.begin(), major_ids.begin() + k);

    for (auto& item : items) {
        if (!dropped.count(item.instance.id)) result.kept.push_back(std::move(item));
    }
    result.dropped = k;
    result.majority_share = share_after(k);
    return result;
}

namespace {

std::string drop_confidence_lines(const std::string& text) {
    std::string out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        const std::string line =
            text.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
        if (line.find("Confidence of Response") == std::string::npos) {
            out += line;
            if (nl != std::string::npos) out += '\n';
        }
        if (nl == std::string::npos) break;
        start = nl + 1;
    }
    return out;
}

std::string replace_slot(std::string text, const std::string& key, const std::string& value) {
    const std::string slot = "{" + key + "}";
    std::size_t pos = 0;
    while ((pos = text.find(slot, pos)) != std::string::npos) {
        text.replace(pos, slot.size(), value);
        pos += value.size();
    }
    return text;
}

} // namespace

std::vector<Message> corpus_messages(const LabeledInstance& item, const CorpusOptions& options,
                                     bool with_confidence) {
    if (item.label == Preference::Tie) {
        throw ValidationError("tie labels cannot be emitted for fine-tuning");
    }
    if (item.instance.responses.size() != 2) {
        throw ValidationError("fine-tuning instances need exactly 2 responses");
    }
    const auto& r1 = item.instance.responses[0];
    const auto& r2 = item.instance.responses[1];
    if (with_confidence && (!r1.verbalized_confidence || !r2.verbalized_confidence)) {
        throw ValidationError("missing confidence statements");
    }

    std::string system = options.templates.get("confilm_system");
    system = replace_slot(std::move(system), "criteria", strategy::join_criteria(options.criteria));

    std::string user = options.templates.get("confilm_user");
    user = replace_slot(std::move(user), "instruction", item.instance.instruction);
    user = replace_slot(std::move(user), "response_1", r1.text);
    user = replace_slot(std::move(user), "response_2", r2.text);
    user = replace_slot(std::move(user), "confidence_1", r1.verbalized_confidence.value_or(""));
    user = replace_slot(std::move(user), "confidence_2", r2.verbalized_confidence.value_or(""));

    if (!with_confidence) {
        system = drop_confidence_lines(system);
        user = drop_confidence_lines(user);
    }

    const std::string target = "Explanation: " + item.explanation + "\nEvaluation result: " +
                               (item.label == Preference::R1 ? "1" : "2");
    return {{"system", system}, {"user", user}, {"assistant", target}};
}

std::string to_string(CorpusVariant variant) {
    switch (variant) {
        case CorpusVariant::WithConfidence: return "with_confidence";
        case CorpusVariant::WithoutConfidence: return "without_confidence";
        case CorpusVariant::Both: return "both";
    }
    throw Error("unknown corpus variant");
}

CorpusVariant corpus_variant_from_string(const std::string& s) {
    if (s == "with_confidence") return CorpusVariant::WithConfidence;
    if (s == "without_confidence") return CorpusVariant::WithoutConfidence;
    if (s == "both") return CorpusVariant::Both;
    throw ConfigError("unknown corpus variant: " + s);
}

void to_json(nlohmann::json& j, const CorpusManifest& m) {
    j = nlohmann::json{{"total", m.total},
                       {"train", m.train},
                       {"test", m.test},
                       {"train_ratio", m.train_ratio},
                       {"seed", m.seed},
                       {"variant", m.variant},
                       {"template_version", m.template_version},
                       {"label_counts", m.label_counts},
                       {"files", m.files}};
}

void from_json(const nlohmann::json& j, CorpusManifest& m) {
    m.total = j.value("total", 0);
    m.train = j.value("train", 0);
    m.test = j.value("test", 0);
    m.train_ratio = j.value("train_ratio", 0.9);
    m.seed = j.value("seed", 0u);
    m.variant = j.value("variant", "both");
    m.template_version = j.value("template_version", "");
    if (j.contains("label_counts")) {
        m.label_counts = j.at("label_counts").get<std::map<std::string, int>>();
    }
    if (j.contains("files")) m.files = j.at("files").get<std::vector<std::string>>();
}

CorpusManifest emit_corpus(const std::vector<LabeledInstance>& items, const std::string& out_dir,
                           const CorpusOptions& options) {
    if (options.train_ratio < 0.0 || options.train_ratio > 1.0) {
        throw ConfigError("train ratio must be in [0, 1]");
    }
    std::filesystem::create_directories(out_dir);

    const std::size_t n = items.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    // Explicit Fisher-Yates so the split does not depend on library
    // distribution internals.
    std::mt19937 rng(options.seed);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng() % i;
        std::swap(order[i - 1], order[j]);
    }

    auto train_count = static_cast<std::size_t>(options.train_ratio * static_cast<double>(n) + 0.5);
    train_count = std::min(train_count, n);

    std::vector<std::size_t> train_idx(order.begin(), order.begin() + train_count);
    std::vector<std::size_t> test_idx(order.begin() + train_count, order.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());

    CorpusManifest manifest;
    manifest.total = static_cast<int>(n);
    manifest.train = static_cast<int>(train_idx.size());
    manifest.test = static_cast<int>(test_idx.size());
    manifest.train_ratio = options.train_ratio;
    manifest.seed = options.seed;
    manifest.variant = to_string(options.variant);
    manifest.template_version = options.templates.version();
    for (const auto& item : items) manifest.label_counts[to_string(item.label)] += 1;

    auto write_split = [&](const std::vector<std::size_t>& idx, const std::string& name,
                           bool with_confidence) {
        const std::string path = out_dir + "/" + name;
        std::ofstream out(path);
        if (!out) throw ConfigError("cannot write corpus file: " + path);
        for (const auto i : idx) {
            nlohmann::json j = {{"id", items[i].instance.id},
                                {"messages", corpus_messages(items[i], options, with_confidence)}};
            out << j.dump() << "\n";
        }
        manifest.files.push_back(name);
    };

    if (options.variant != CorpusVariant::WithoutConfidence) {
        write_split(train_idx, "train_with_confidence.jsonl", true);
        write_split(test_idx, "test_with_confidence.jsonl", true);
    }
    if (options.variant != CorpusVariant::WithConfidence) {
        write_split(train_idx, "train_without_confidence.jsonl", false);
        write_split(test_idx, "test_without_confidence.jsonl", false);
    }

    std::ofstream mf(out_dir + "/manifest.json");
    if (!mf) throw ConfigError("cannot write corpus manifest: " + out_dir + "/manifest.json");
    mf << nlohmann::json(manifest).dump(2) << "\n";
    return manifest;
}

} // namespace judgeval::dataset
