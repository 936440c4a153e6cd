#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "judgeval/client.hpp"
#include "judgeval/confidence.hpp"
#include "judgeval/core.hpp"
#include "judgeval/dataset.hpp"
#include "judgeval/metrics.hpp"
#include "judgeval/mock_server.hpp"
#include "judgeval/runner.hpp"
#include "judgeval/strategy.hpp"

namespace {

using namespace judgeval;

// Shared endpoint and transport options.
struct EndpointArgs {
    std::string endpoint = "http://127.0.0.1:8080";
    std::string api_key_env = "OPENAI_API_KEY";
    std::string cache_dir;
    int timeout_ms = 30000;
    int max_retries = 3;
    int concurrency = 4;
    int requests_per_minute = 0;
    bool mock = false;
    std::string mock_fixtures;

    void attach(CLI::App* cmd) {
        cmd->add_option("--endpoint", endpoint, "Chat completions base URL");
        cmd->add_option("--api-key-env", api_key_env,
                        "Environment variable holding the API key");
        cmd->add_option("--cache-dir", cache_dir, "Directory for cached responses");
        cmd->add_option("--timeout-ms", timeout_ms, "Per-request timeout in milliseconds");
        cmd->add_option("--max-retries", max_retries, "Retries for 429/5xx/transport errors");
        cmd->add_option("--concurrency", concurrency, "Maximum in-flight requests");
        cmd->add_option("--rpm", requests_per_minute, "Requests-per-minute cap (0 = off)");
        cmd->add_flag("--mock", mock, "Serve requests from an in-process mock backend");
        cmd->add_option("--mock-fixtures", mock_fixtures,
                        "Fixture JSONL for the in-process mock backend")
            ->check(CLI::ExistingFile);
    }

    client::EndpointConfig endpoint_config(const std::string& base_url) const {
        client::EndpointConfig cfg;
        cfg.base_url = base_url;
        cfg.api_key_env_var = api_key_env;
        cfg.timeout_ms = timeout_ms;
        cfg.max_retries = max_retries;
        cfg.max_concurrent_requests = concurrency;
        cfg.requests_per_minute = requests_per_minute;
        cfg.cache_dir = cache_dir;
        return cfg;
    }

    // Starts the mock when requested and returns the URL requests should go
    // to. The server lives until the returned holder is destroyed.
    std::string resolve(std::unique_ptr<client::MockServer>& holder) {
        if (!mock && mock_fixtures.empty()) return endpoint;
        holder = mock_fixtures.empty() ? std::make_unique<client::MockServer>()
                                       : std::make_unique<client::MockServer>(mock_fixtures);
        holder->start();
        return holder->base_url();
    }
};

struct RunArgs {
    std::string dataset_path;
    std::string out_dir;
    std::string judge_config_path;
    std::string template_dir;
    std::optional<std::string> task;
    std::optional<std::string> strategy;
    std::optional<std::string> model;
    std::optional<double> temperature;
    std::optional<int> max_output_tokens;
    std::vector<std::string> criteria;
    bool no_logprobs = false;
    bool no_swap = false;
    int consistency_n = 0;
    double reference_temperature = 0.0;
    double failure_threshold = 0.0;
    EndpointArgs endpoint;
};

struct ReportArgs {
    std::string records_path;
    std::string dataset_path;
    std::string gold_path;
    std::string out_json_path;
    std::string out_table_path;
    double bin_width = 0.2;
    bool disagree_as_tie = false;
};

struct BuildArgs {
    std::string instructions_path;
    std::string pairs_path;
    std::string annotations_path;
    std::string out_dir;
    std::vector<std::string> models;
    std::vector<std::string> special_tokens;
    std::string variant = "both";
    double tolerance = 0.05;
    double train_ratio = 0.9;
    unsigned seed = 0;
    int max_tokens = 1024;
    std::string template_dir;
    EndpointArgs endpoint;
};

// Accepts the short task spellings alongside the canonical names.
TaskKind parse_task(const std::string& s) {
    if (s == "grade" || s == "grading") return TaskKind::SingleGrading;
    if (s == "pair") return TaskKind::Pairwise;
    return task_from_string(s);
}

std::string sha256_of_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return sha256_hex(buf.str());
}

struct ServeArgs {
    std::string fixtures_path;
    std::string host = "127.0.0.1";
    int port = 8080;
};

JudgeConfig make_judge_config(const RunArgs& args, const std::string& resolved_endpoint) {
    JudgeConfig judge;
    if (!args.judge_config_path.empty()) {
        std::ifstream in(args.judge_config_path);
        if (!in) throw ConfigError("cannot open judge config: " + args.judge_config_path);
        try {
            judge = nlohmann::json::parse(in).get<JudgeConfig>();
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError("bad judge config: " + std::string(e.what()));
        }
    }
    if (args.task) judge.task = parse_task(*args.task);
    if (args.strategy) judge.strategy = strategy_from_string(*args.strategy);
    if (args.model) judge.model = *args.model;
    if (args.temperature) judge.temperature = *args.temperature;
    if (args.max_output_tokens) judge.max_output_tokens = *args.max_output_tokens;
    if (!args.criteria.empty()) judge.criteria = args.criteria;
    if (args.no_logprobs) judge.request_logprobs = false;
    judge.endpoint = resolved_endpoint;
    if (judge.model.empty()) throw ConfigError("a judge model is required (--model)");
    return judge;
}

strategy::TemplateSet load_templates(const std::string& dir) {
    return dir.empty() ? strategy::TemplateSet::builtin()
                       : strategy::TemplateSet::from_directory(dir);
}

int cmd_run(RunArgs& args) {
    std::unique_ptr<client::MockServer> mock;
    const std::string endpoint_url = args.endpoint.resolve(mock);
    JudgeConfig judge = make_judge_config(args, endpoint_url);
    auto templates = load_templates(args.template_dir);

    const auto instances = load_instances_jsonl(args.dataset_path);
    for (const auto& report : validate_dataset(instances, judge.task)) {
        for (const auto& v : report.violations) {
            std::cerr << "warning: instance " << report.instance_id << ": " << v.code << ": "
                      << v.message << "\n";
        }
    }

    const std::string started_at = runner::utc_timestamp();
    runner::Runner runner(args.endpoint.endpoint_config(endpoint_url), judge, templates);
    runner.reference_temperature = args.reference_temperature;

    std::vector<EvaluationRecord> records;
    if (args.consistency_n > 0) {
        records = runner.run_consistency_all(instances, args.consistency_n);
        // Consistency sampling overrides the configured temperature; the
        // manifest should show what the requests actually used.
        judge.temperature = 0.7;
    } else if (judge.task == TaskKind::Pairwise && !args.no_swap) {
        records = runner::flatten(runner.run_pairwise_swapped(instances));
    } else if (judge.task == TaskKind::Pairwise) {
        records = runner.run_pairwise_forward(instances);
    } else {
        records = runner.run_single_grading(instances);
    }

    auto manifest = runner::build_manifest(records, judge, endpoint_url, templates.version(),
                                           static_cast<int>(instances.size()));
    manifest.dataset_path = args.dataset_path;
    manifest.dataset_hash = sha256_of_file(args.dataset_path);
    manifest.swap_enabled =
        args.consistency_n == 0 && judge.task == TaskKind::Pairwise && !args.no_swap;
    if (args.consistency_n > 0) manifest.consistency_n = args.consistency_n;
    manifest.started_at = started_at;
    manifest.finished_at = runner::utc_timestamp();
    runner::write_run(args.out_dir, records, manifest);

    const auto summary = metrics::summarize(records);
    std::cout << metrics::summary_text(summary);

    const double failure_rate =
        records.empty() ? 0.0
                        : static_cast<double>(summary.failed_count) /
                              static_cast<double>(records.size());
    return failure_rate > args.failure_threshold ? 1 : 0;
}

int cmd_report(const ReportArgs& args) {
    const auto records = load_records_jsonl(args.records_path);

    std::map<std::string, Category> categories;
    if (!args.dataset_path.empty()) {
        for (const auto& inst : load_instances_jsonl(args.dataset_path)) {
            if (inst.category) categories[inst.id] = *inst.category;
        }
    }

    const auto summary = metrics::summarize(records, categories, args.disagree_as_tie);
    std::string table = metrics::summary_text(summary);

    nlohmann::json doc;
    doc["summary"] = metrics::summary_json(summary);

    if (!args.gold_path.empty()) {
        const auto gold = metrics::load_gold_jsonl(args.gold_path);
        std::map<std::string, Preference> gold_by_id;
        for (const auto& g : gold) gold_by_id[g.instance_id] = g.label;

        std::map<std::string, Preference> predicted;
        for (const auto& p : metrics::final_predictions(records)) {
            predicted[p.instance_id] = p.label;
        }

        // Gold and records must describe the same instances; a partial
        // overlap would silently score a different dataset.
        std::vector<std::string> gold_only;
        std::vector<std::string> records_only;
        for (const auto& [id, label] : gold_by_id) {
            if (!predicted.count(id)) gold_only.push_back(id);
        }
        for (const auto& [id, label] : predicted) {
            if (!gold_by_id.count(id)) records_only.push_back(id);
        }
        if (!gold_only.empty() || !records_only.empty()) {
            nlohmann::json err = {{"error",
                                   {{"type", "validation"},
                                    {"message", "gold and records cover different instances"},
                                    {"gold_only", gold_only},
                                    {"records_only", records_only}}}};
            std::cerr << err.dump() << "\n";
            return 1;
        }

        std::vector<Preference> gold_labels;
        std::vector<Preference> pred_labels;
        std::vector<std::optional<Category>> gold_categories;
        bool any_category = false;
        for (const auto& g : gold) {
            gold_labels.push_back(g.label);
            pred_labels.push_back(predicted.at(g.instance_id));
            auto category = g.category;
            if (!category) {
                const auto it = categories.find(g.instance_id);
                if (it != categories.end()) category = it->second;
            }
            any_category = any_category || category.has_value();
            gold_categories.push_back(category);
        }

        const auto f1 = metrics::macro_f1(gold_labels, pred_labels,
                                          any_category ? gold_categories
                                                       : std::vector<std::optional<Category>>{});
        char buf[64];
        std::snprintf(buf, sizeof(buf), "macro F1 (vs gold)  %.3f\n", f1.value);
        table += buf;
        for (const auto& [cls, value] : f1.per_class) {
            std::snprintf(buf, sizeof(buf), "F1 %-17s %.3f\n", cls.c_str(), value);
            table += buf;
        }
        for (const auto& [cat, value] : f1.per_category) {
            std::snprintf(buf, sizeof(buf), "F1 %-17s %.3f\n", cat.c_str(), value);
            table += buf;
        }
        for (const auto& flag : f1.flags) table += "note: " + flag + "\n";
        doc["macro_f1"] = metrics::macro_f1_json(f1);

        std::vector<metrics::CalibrationSample> samples;
        for (const auto& r : records) {
            if (!r.verdict || !r.evaluation_confidence ||
                r.verdict->kind != Verdict::Kind::Preference) {
                continue;
            }
            const auto it = gold_by_id.find(r.instance_id);
            if (it == gold_by_id.end()) continue;
            samples.push_back({r.evaluation_confidence->value,
                               *r.verdict->preference == it->second});
        }
        const auto bins = metrics::calibration_table(samples, args.bin_width);
        table += metrics::calibration_text(bins);
        doc["calibration"] = metrics::calibration_json(bins);
    }

    std::cout << table;
    if (!args.out_table_path.empty()) {
        std::ofstream out(args.out_table_path);
        if (!out) throw ConfigError("cannot write report table: " + args.out_table_path);
        out << table;
    }
    if (!args.out_json_path.empty()) {
        std::ofstream out(args.out_json_path);
        if (!out) throw ConfigError("cannot write report: " + args.out_json_path);
        out << doc.dump(2) << "\n";
    }
    return 0;
}

int cmd_build(BuildArgs& args) {
    if (args.instructions_path.empty() == args.pairs_path.empty()) {
        throw ConfigError("exactly one of --instructions or --pairs is required");
    }
    std::filesystem::create_directories(args.out_dir);

    const auto& tokens =
        args.special_tokens.empty() ? dataset::default_special_tokens() : args.special_tokens;

    std::vector<EvalInstance> pairs;
    if (!args.pairs_path.empty()) {
        pairs = load_instances_jsonl(args.pairs_path);
    } else {
        std::unique_ptr<client::MockServer> mock;
        const std::string endpoint_url = args.endpoint.resolve(mock);
        client::ChatClient chat(args.endpoint.endpoint_config(endpoint_url));
        pairs = dataset::generate_pairs(dataset::load_instructions_jsonl(args.instructions_path),
                                        args.models, chat, args.max_tokens);
    }

    pairs = dataset::scrub_dataset(std::move(pairs), tokens);
    save_instances_jsonl(pairs, args.out_dir + "/pairs.jsonl");

    for (const auto& report : validate_dataset(pairs, TaskKind::Pairwise)) {
        for (const auto& v : report.violations) {
            std::cerr << "warning: instance " << report.instance_id << ": " << v.code << ": "
                      << v.message << "\n";
        }
    }

    if (args.annotations_path.empty()) {
        std::cout << "pairs " << pairs.size() << "\n";
        return 0;
    }

    const auto annotations = dataset::load_annotations_jsonl(args.annotations_path);
    dataset::MergeResult merged;
    try {
        merged = dataset::merge_annotations(pairs, annotations);
    } catch (const dataset::UnresolvedAnnotationsError& e) {
        nlohmann::json err = {{"error",
                               {{"type", "validation"},
                                {"message", "unresolved annotations"},
                                {"instance_ids", e.instance_ids()}}}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
    dataset::save_labeled_jsonl(merged.labeled, args.out_dir + "/labeled.jsonl");

    auto balanced = dataset::balance_labels(merged.labeled, args.tolerance);
    dataset::save_labeled_jsonl(balanced.kept, args.out_dir + "/balanced.jsonl");

    dataset::CorpusOptions options;
    options.train_ratio = args.train_ratio;
    options.seed = args.seed;
    options.variant = dataset::corpus_variant_from_string(args.variant);
    options.templates = load_templates(args.template_dir);
    const auto manifest = dataset::emit_corpus(balanced.kept, args.out_dir, options);

    char rate[32];
    std::snprintf(rate, sizeof(rate), "%.4f", merged.agreement.rate);
    std::cout << "pairs " << pairs.size() << "\n";
    std::cout << "agreement rate " << rate << "\n";
    std::cout << "dropped flagged " << merged.dropped_flagged << "\n";
    std::cout << "labeled " << merged.labeled.size() << "\n";
    std::cout << "dropped for balance " << balanced.dropped << "\n";
    std::cout << "train " << manifest.train << "\n";
    std::cout << "test " << manifest.test << "\n";
    return 0;
}

int cmd_serve(const ServeArgs& args) {
    auto server = args.fixtures_path.empty()
                      ? std::make_unique<client::MockServer>()
                      : std::make_unique<client::MockServer>(args.fixtures_path);
    std::cerr << "mock backend listening on http://" << args.host << ":" << args.port << "\n";
    server->start_blocking(args.host, args.port);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"LLM-as-a-judge evaluation harness"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from a TOML file");

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "Judge a dataset and write records + manifest");
    run->add_option("--dataset", run_args.dataset_path, "Instances JSONL")
        ->required()
        ->check(CLI::ExistingFile);
    run->add_option("--out", run_args.out_dir, "Output directory for the run")->required();
    run->add_option("--task", run_args.task, "grade or pair");
    run->add_option("--strategy", run_args.strategy, "default, cot, reference, or confilm");
    run->add_option("--model", run_args.model, "Judge model name");
    run->add_option("--temperature", run_args.temperature, "Judge sampling temperature");
    run->add_option("--max-output-tokens", run_args.max_output_tokens, "Completion token cap");
    run->add_option("--criteria", run_args.criteria, "Evaluation criteria (repeatable)");
    run->add_flag("--no-logprobs", run_args.no_logprobs, "Do not request token logprobs");
    run->add_flag("--no-swap", run_args.no_swap, "Single presentation order for pairwise");
    run->add_option("--consistency-n", run_args.consistency_n,
                    "Sample N verdicts at temperature 0.7 and keep the mode");
    run->add_option("--reference-temperature", run_args.reference_temperature,
                    "Sampling temperature for self-generated reference answers");
    run->add_option("--failure-threshold", run_args.failure_threshold,
                    "Tolerated share of failed records before exit code 1");
    run->add_option("--judge-config", run_args.judge_config_path, "Judge config JSON file")
        ->check(CLI::ExistingFile);
    run->add_option("--template-dir", run_args.template_dir, "Directory of template overrides")
        ->check(CLI::ExistingDirectory);
    run_args.endpoint.attach(run);

    ReportArgs report_args;
    auto* report = app.add_subcommand("report", "Summarize a records file");
    report->add_option("--records", report_args.records_path, "records.jsonl from a run")
        ->required()
        ->check(CLI::ExistingFile);
    report->add_option("--dataset", report_args.dataset_path, "Instances JSONL for categories")
        ->check(CLI::ExistingFile);
    report->add_option("--gold", report_args.gold_path, "Gold labels JSONL")
        ->check(CLI::ExistingFile);
    report->add_option("--bins", report_args.bin_width,
                       "Calibration bin width (used with --gold)");
    report->add_option("--out-json", report_args.out_json_path, "Write the report as JSON here");
    report->add_option("--out-table", report_args.out_table_path,
                       "Write the rendered table here as well as stdout");
    report->add_flag("--disagree-as-tie", report_args.disagree_as_tie,
                     "Count pairs whose legs disagree as whole ties");

    BuildArgs build_args;
    auto* build = app.add_subcommand("build-dataset", "Build a fine-tuning corpus");
    build->add_option("--instructions", build_args.instructions_path, "Instructions JSONL")
        ->check(CLI::ExistingFile);
    build->add_option("--pairs", build_args.pairs_path, "Existing pairs JSONL (skip generation)")
        ->check(CLI::ExistingFile);
    build->add_option("--annotations", build_args.annotations_path, "Annotations JSONL")
        ->check(CLI::ExistingFile);
    build->add_option("--out", build_args.out_dir, "Output directory")->required();
    build->add_option("--models", build_args.models, "Candidate model names (repeatable)");
    build->add_option("--special-tokens", build_args.special_tokens,
                      "Special tokens to scrub (repeatable)");
    build->add_option("--variant", build_args.variant,
                      "with_confidence, without_confidence, or both");
    build->add_option("--tolerance", build_args.tolerance, "Label balance tolerance");
    build->add_option("--train-ratio", build_args.train_ratio, "Train split share");
    build->add_option("--seed", build_args.seed, "Split shuffle seed");
    build->add_option("--max-tokens", build_args.max_tokens, "Generation token cap");
    build->add_option("--template-dir", build_args.template_dir,
                      "Directory of template overrides")
        ->check(CLI::ExistingDirectory);
    build_args.endpoint.attach(build);

    auto* bins = app.add_subcommand("dump-bins", "Print the confidence statement table as JSON");

    ServeArgs serve_args;
    auto* serve = app.add_subcommand("mock-serve", "Run the mock backend in the foreground");
    serve->add_option("--fixtures", serve_args.fixtures_path, "Fixture JSONL")
        ->check(CLI::ExistingFile);
    serve->add_option("--host", serve_args.host, "Bind address");
    serve->add_option("--port", serve_args.port, "Bind port");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) return cmd_run(run_args);
        if (*report) return cmd_report(report_args);
        if (*build) return cmd_build(build_args);
        if (*bins) {
            std::cout << judgeval::confidence::bin_table_json().dump(2) << "\n";
            return 0;
        }
        if (*serve) return cmd_serve(serve_args);
    } catch (const judgeval::Error& e) {
        // Configuration problems exit 2 so schedulers can tell them from
        // data failures, which exit 1.
        std::string type = "error";
        int code = 1;
        if (dynamic_cast<const judgeval::ConfigError*>(&e)) {
            type = "config";
            code = 2;
        } else if (dynamic_cast<const judgeval::ValidationError*>(&e)) {
            type = "validation";
        } else if (dynamic_cast<const judgeval::ParseError*>(&e)) {
            type = "parse";
        }
        nlohmann::json j = {{"error", {{"type", type}, {"message", e.what()}}}};
        std::cerr << j.dump() << "\n";
        return code;
    } catch (const std::exception& e) {
        nlohmann::json j = {{"error", {{"type", "error"}, {"message", e.what()}}}};
        std::cerr << j.dump() << "\n";
        return 2;
    }
    return 0;
}
