#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "judgeval/client.hpp"
#include "judgeval/core.hpp"
#include "judgeval/dataset.hpp"
#include "judgeval/mock_server.hpp"

using namespace judgeval;
using namespace judgeval::dataset;
using nlohmann::json;

namespace {

EvalInstance pair_instance(const std::string& id) {
    EvalInstance inst;
    inst.id = id;
    inst.instruction = "Summarize the plot of Hamlet.";
    inst.responses = {{"model-a", "A prince avenges his father.", std::nullopt, "Neutral"},
                      {"model-b", "A play about Denmark.", std::nullopt, "Slightly doubtful"}};
    return inst;
}

AnnotationRecord annotation(const std::string& id, Preference a, Preference b,
                            std::optional<Preference> round2 = std::nullopt,
                            const std::string& explanation = "covers the plot") {
    AnnotationRecord ann;
    ann.instance_id = id;
    ann.round1_labels = {a, b};
    ann.round2_label = round2;
    ann.explanation = explanation;
    return ann;
}

LabeledInstance labeled(const std::string& id, Preference label) {
    LabeledInstance item;
    item.instance = pair_instance(id);
    item.label = label;
    item.explanation = "the stronger summary";
    return item;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Minimal drop count found by trying every k in turn.
int oracle_min_drops(int major, int total, double tolerance) {
    for (int k = 0; k < major; ++k) {
        const double share = static_cast<double>(major - k) / (total - k);
        if (std::abs(share - 0.5) <= tolerance) return k;
    }
    return -1;
}

} // namespace

TEST_CASE("special-token scrubbing removes chat markers without touching text") {
    CHECK(scrub_special_tokens("Hello<eos>") == "Hello");
    CHECK(scrub_special_tokens("A<|im_end|>B") == "A B");
    CHECK(scrub_special_tokens("<|im_end|>") == "");
    CHECK(scrub_special_tokens("<|eot_id|>lead and trail</s>") == "lead and trail");
    CHECK(scrub_special_tokens("clean text stays clean") == "clean text stays clean");
    CHECK(scrub_special_tokens("half a marker < | im_end stays") ==
          "half a marker < | im_end stays");
    CHECK(scrub_special_tokens("two<eos>in<eos>a row") == "two in a row");
}

TEST_CASE("scrubbing prefers the longest matching token") {
    const std::vector<std::string> tokens = {"ab", "abc"};
    CHECK(scrub_special_tokens("abcd", tokens) == "d");
    CHECK(scrub_special_tokens("abd", tokens) == "d");
}

TEST_CASE("scrubbing is idempotent on adversarial inputs") {
    const auto& tokens = default_special_tokens();
    std::mt19937 rng(3);
    const std::vector<std::string> pieces = {"<eos>", "<|im_end|>", "</s>",  "<|eot_id|>",
                                             "<",     "|",          ">",     "eos",
                                             "plain", " ",          "word.", "<e",
                                             "os>",   "<<eos>"};
    for (int trial = 0; trial < 300; ++trial) {
        std::string text;
        const int parts = 1 + static_cast<int>(rng() % 8);
        for (int p = 0; p < parts; ++p) text += pieces[rng() % pieces.size()];
        const auto once = scrub_special_tokens(text, tokens);
        CHECK(scrub_special_tokens(once, tokens) == once);
        for (const auto& tok : tokens) CHECK(once.find(tok) == std::string::npos);
    }
}

TEST_CASE("scrub_dataset cleans instructions, references, and responses") {
    auto inst = pair_instance("s1");
    inst.instruction = "Summarize<|im_end|>the plot.";
    inst.reference_answer = "The prince dies.</s>";
    inst.responses[0].text = "An avenging prince.<eos>";

    auto cleaned = scrub_dataset({inst});
    CHECK(cleaned[0].instruction == "Summarize the plot.");
    CHECK(*cleaned[0].reference_answer == "The prince dies.");
    CHECK(cleaned[0].responses[0].text == "An avenging prince.");
    CHECK(cleaned[0].responses[1].text == inst.responses[1].text);
}

TEST_CASE("annotation files carry two first-round labels and an optional breaker") {
    namespace fs = std::filesystem;
    const auto path = fs::temp_directory_path() / "judgeval_annotations_test.jsonl";
    {
        std::ofstream out(path);
        out << R"({"instance_id":"a","round1_labels":["1","1"],"explanation":"clear"})" << "\n";
        out << R"({"instance_id":"b","round1_labels":["1","2"],"round2_label":"2"})" << "\n";
        out << R"({"instance_id":"c","round1_labels":["Tie","Tie"],"low_quality":true,)"
            << R"("hard_to_evaluate":true})" << "\n";
    }

    auto anns = load_annotations_jsonl(path.string());
    REQUIRE(anns.size() == 3);
    CHECK(anns[0].round1_labels == std::pair{Preference::R1, Preference::R1});
    CHECK(!anns[0].round2_label.has_value());
    CHECK(anns[0].explanation == "clear");
    CHECK(!anns[0].low_quality);
    CHECK(anns[1].round2_label == Preference::R2);
    CHECK(anns[2].low_quality);
    CHECK(anns[2].hard_to_evaluate);

    {
        std::ofstream out(path);
        out << R"({"instance_id":"a","round1_labels":["1"]})" << "\n";
    }
    CHECK_THROWS_AS(load_annotations_jsonl(path.string()), ParseError);
    fs::remove(path);
}

TEST_CASE("merging annotations keeps agreed labels and settles splits by majority") {
    std::vector<EvalInstance> instances = {pair_instance("a"), pair_instance("b"),
                                           pair_instance("c"), pair_instance("d")};
    std::vector<AnnotationRecord> annotations = {
        annotation("a", Preference::R1, Preference::R1),
        annotation("b", Preference::R1, Preference::R2, Preference::R2, "second is tighter"),
        annotation("c", Preference::R2, Preference::R2),
    };
    auto flagged = annotation("d", Preference::R1, Preference::R1);
    flagged.low_quality = true;
    flagged.hard_to_evaluate = true;
    annotations.push_back(flagged);

    auto result = merge_annotations(instances, annotations);
    REQUIRE(result.labeled.size() == 3);
    CHECK(result.labeled[0].instance.id == "a");
    CHECK(result.labeled[0].label == Preference::R1);
    CHECK(result.labeled[0].explanation == "covers the plot");
    CHECK(result.labeled[1].label == Preference::R2);
    CHECK(result.labeled[1].explanation == "second is tighter");
    CHECK(result.labeled[2].label == Preference::R2);
    CHECK(result.dropped_flagged == 1);

    // Agreement is measured over the surviving instances only.
    CHECK(result.agreement.rate == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(result.agreement.disagreements == 1);
}

TEST_CASE("every unsettled disagreement is reported at once") {
    std::vector<EvalInstance> instances = {pair_instance("a"), pair_instance("b"),
                                           pair_instance("c")};
    std::vector<AnnotationRecord> annotations = {
        annotation("a", Preference::R1, Preference::R2),
        annotation("b", Preference::R1, Preference::R1),
        annotation("c", Preference::R2, Preference::Tie, Preference::R1),
    };
    try {
        merge_annotations(instances, annotations);
        FAIL("expected UnresolvedAnnotationsError");
    } catch (const UnresolvedAnnotationsError& e) {
        CHECK(e.instance_ids() == std::vector<std::string>{"a", "c"});
        CHECK(std::string(e.what()) == "unresolved instances: a c");
    }
}

TEST_CASE("merge rejects annotations for unknown instances and empty survivals") {
    std::vector<EvalInstance> instances = {pair_instance("a")};
    CHECK_THROWS_WITH_AS(
        merge_annotations(instances, {annotation("zzz", Preference::R1, Preference::R1)}),
        "annotation references unknown instance: zzz", ValidationError);

    auto flagged = annotation("a", Preference::R1, Preference::R1);
    flagged.hard_to_evaluate = true;
    CHECK_THROWS_WITH_AS(merge_annotations(instances, {flagged}), "empty summary",
                         ValidationError);

    // Instances without annotations are simply left out.
    auto partial = merge_annotations({pair_instance("a"), pair_instance("unlabeled")},
                                     {annotation("a", Preference::R2, Preference::R2)});
    CHECK(partial.labeled.size() == 1);
}

TEST_CASE("label balancing drops the minimal number of majority instances") {
    auto build = [](int r1, int r2) {
        std::vector<LabeledInstance> items;
        for (int i = 0; i < r1 + r2; ++i) {
            char id[16];
            std::snprintf(id, sizeof(id), "i%03d", i);
            items.push_back(labeled(id, i < r1 ? Preference::R1 : Preference::R2));
        }
        return items;
    };

    // 60 against 40 needs exactly 12 drops to get within 5 points of even.
    auto result = balance_labels(build(60, 40), 0.05);
    CHECK(result.dropped == 12);
    CHECK(result.kept.size() == 88);
    CHECK(result.majority_share == doctest::Approx(48.0 / 88.0).epsilon(1e-12));
    CHECK(oracle_min_drops(60, 100, 0.05) == 12);

    // Drops take the highest ids and leave the rest in order.
    int r1_kept = 0;
    std::string previous;
    for (const auto& item : result.kept) {
        if (item.label == Preference::R1) {
            ++r1_kept;
            CHECK(item.instance.id < "i048");
        }
        CHECK(previous < item.instance.id);
        previous = item.instance.id;
    }
    CHECK(r1_kept == 48);

    for (int r1 = 0; r1 <= 12; ++r1) {
        for (int r2 = 0; r2 <= 12; ++r2) {
            if (r1 + r2 == 0) continue;
            const int major = std::max(r1, r2);
            const int expected = oracle_min_drops(major, r1 + r2, 0.1);
            if (expected < 0 ||
                static_cast<double>(major) / (r1 + r2) < 0.5 - 0.1) {
                CHECK_THROWS_AS(balance_labels(build(r1, r2), 0.1), ValidationError);
            } else {
                auto balanced = balance_labels(build(r1, r2), 0.1);
                CHECK(balanced.dropped == expected);
            }
        }
    }
}

TEST_CASE("balancing rejects impossible inputs and bad tolerances") {
    std::vector<LabeledInstance> one_sided;
    for (int i = 0; i < 10; ++i) one_sided.push_back(labeled("i" + std::to_string(i), Preference::R1));
    CHECK_THROWS_WITH_AS(balance_labels(one_sided, 0.05), "cannot balance labels within tolerance",
                         ValidationError);
    CHECK_THROWS_AS(balance_labels(one_sided, -0.1), ConfigError);
    CHECK_THROWS_AS(balance_labels(one_sided, 0.5), ConfigError);
    CHECK(balance_labels({}, 0.05).kept.empty());

    // An already balanced set is untouched.
    std::vector<LabeledInstance> even = {labeled("a", Preference::R1),
                                         labeled("b", Preference::R2)};
    auto result = balance_labels(even, 0.05);
    CHECK(result.dropped == 0);
    CHECK(result.kept.size() == 2);
}

TEST_CASE("pair generation samples one answer per model and forms every pair") {
    client::MockServer server;
    server.start();
    client::EndpointConfig endpoint;
    endpoint.base_url = server.base_url();
    client::ChatClient client(endpoint);

    std::vector<InstructionItem> items = {
        {"q1", "Name a prime number.", std::nullopt, Category::Math},
        {"q2", "Write a haiku.", std::nullopt, Category::Writing},
    };
    auto instances = generate_pairs(items, {"alpha", "beta", "gamma"}, client, 128);
    server.stop();

    // Three models give three unordered pairs per instruction.
    REQUIRE(instances.size() == 6);
    CHECK(server.stats().request_count == 6);
    CHECK(instances[0].id == "q1#alpha#beta");
    CHECK(instances[1].id == "q1#alpha#gamma");
    CHECK(instances[2].id == "q1#beta#gamma");
    CHECK(instances[3].id == "q2#alpha#beta");
    CHECK(*instances[0].category == Category::Math);
    CHECK(instances[0].responses[0].model_name == "alpha");
    CHECK(instances[0].responses[1].model_name == "beta");

    // The sampling request runs warm with logprobs on.
    const auto stats = server.stats();
    const auto& body = stats.request_bodies[0];
    CHECK(body.at("temperature") == 0.7);
    CHECK(body.at("logprobs") == true);

    // Mock answers put every token at one half, which verbalizes to Neutral.
    const auto& answer = instances[0].responses[0];
    CHECK(answer.response_confidence->value == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(answer.response_confidence->method == ConfidenceMethod::MeanTokenProb);
    CHECK(*answer.verbalized_confidence == "Neutral");

    CHECK_THROWS_AS(generate_pairs(items, {"alpha"}, client, 128), ConfigError);
    CHECK_THROWS_AS(generate_pairs(items, {"alpha", "alpha"}, client, 128), ConfigError);
}

TEST_CASE("a model that fails to answer drops only its own pairs") {
    client::MockServer server;
    // The very first sampling request dies with a non-retryable status.
    server.set_failures_before_success(1, 400);
    server.start();
    client::EndpointConfig endpoint;
    endpoint.base_url = server.base_url();
    client::ChatClient client(endpoint);

    std::vector<InstructionItem> items = {
        {"q1", "Name a prime number.", std::nullopt, std::nullopt},
        {"q2", "Write a haiku.", std::nullopt, std::nullopt},
    };
    auto instances = generate_pairs(items, {"alpha", "beta", "gamma"}, client, 128);
    server.stop();

    // q1 lost alpha, keeping only the beta/gamma pair; q2 kept all three.
    REQUIRE(instances.size() == 4);
    CHECK(instances[0].id == "q1#beta#gamma");
    CHECK(instances[1].id == "q2#alpha#beta");
    CHECK(instances[2].id == "q2#alpha#gamma");
    CHECK(instances[3].id == "q2#beta#gamma");
}

TEST_CASE("corpus chats pair the comparison prompt with the labeled target") {
    auto item = labeled("c1", Preference::R2);
    CorpusOptions options;

    auto messages = corpus_messages(item, options, true);
    REQUIRE(messages.size() == 3);
    CHECK(messages[0].role == "system");
    CHECK(messages[1].role == "user");
    CHECK(messages[2].role == "assistant");

    CHECK(messages[0].text.find("a tie is not allowed") != std::string::npos);
    CHECK(messages[0].text.find("{criteria}") == std::string::npos);
    CHECK(messages[1].text.find("Summarize the plot of Hamlet.") != std::string::npos);
    CHECK(messages[1].text.find("Confidence of Response 1: Neutral") != std::string::npos);
    CHECK(messages[1].text.find("Confidence of Response 2: Slightly doubtful") !=
          std::string::npos);
    CHECK(messages[2].text == "Explanation: the stronger summary\nEvaluation result: 2");

    CHECK(corpus_messages(labeled("c2", Preference::R1), options, true)[2].text ==
          "Explanation: the stronger summary\nEvaluation result: 1");
}

TEST_CASE("the bare variant differs exactly by the confidence lines") {
    auto item = labeled("c1", Preference::R1);
    CorpusOptions options;
    auto with = corpus_messages(item, options, true);
    auto without = corpus_messages(item, options, false);

    for (std::size_t m = 0; m < 3; ++m) {
        std::istringstream rich(with[m].text);
        std::string kept;
        std::string line;
        while (std::getline(rich, line)) {
            if (line.find("Confidence of Response") != std::string::npos) continue;
            kept += line;
            kept += '\n';
        }
        std::string bare = without[m].text;
        if (!bare.empty() && bare.back() != '\n') bare += '\n';
        CHECK(kept == bare);
    }
    // The target is identical in both variants.
    CHECK(with[2].text == without[2].text);
}

TEST_CASE("corpus chats refuse ties and missing statements") {
    CorpusOptions options;
    CHECK_THROWS_WITH_AS(corpus_messages(labeled("t", Preference::Tie), options, true),
                         "tie labels cannot be emitted for fine-tuning", ValidationError);

    auto bare = labeled("b", Preference::R1);
    bare.instance.responses[0].verbalized_confidence.reset();
    CHECK_THROWS_WITH_AS(corpus_messages(bare, options, true), "missing confidence statements",
                         ValidationError);
    // Without the confidence lines the statements are not needed.
    CHECK_NOTHROW(corpus_messages(bare, options, false));
}

TEST_CASE("emit_corpus writes seeded splits for the selected variants") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "judgeval_corpus_test";
    fs::remove_all(dir);

    std::vector<LabeledInstance> items;
    for (int i = 0; i < 10; ++i) {
        items.push_back(
            labeled("c" + std::to_string(i), i % 2 == 0 ? Preference::R1 : Preference::R2));
    }

    CorpusOptions options;
    options.seed = 7;
    auto manifest = emit_corpus(items, dir.string(), options);

    CHECK(manifest.total == 10);
    CHECK(manifest.train == 9);
    CHECK(manifest.test == 1);
    CHECK(manifest.seed == 7);
    CHECK(manifest.variant == "both");
    CHECK(manifest.label_counts == std::map<std::string, int>{{"R1", 5}, {"R2", 5}});
    CHECK(manifest.files ==
          std::vector<std::string>{"train_with_confidence.jsonl", "test_with_confidence.jsonl",
                                   "train_without_confidence.jsonl",
                                   "test_without_confidence.jsonl"});

    // One chat line per instance, split across train and test.
    int lines = 0;
    std::istringstream in(read_file(dir / "train_with_confidence.jsonl"));
    std::string line;
    std::set<std::string> seen_ids;
    while (std::getline(in, line)) {
        ++lines;
        auto j = json::parse(line);
        seen_ids.insert(j.at("id").get<std::string>());
        CHECK(j.at("messages").size() == 3);
    }
    CHECK(lines == 9);
    CHECK(seen_ids.size() == 9);

    // The same seed reproduces the files byte for byte.
    const auto dir2 = fs::temp_directory_path() / "judgeval_corpus_test2";
    fs::remove_all(dir2);
    emit_corpus(items, dir2.string(), options);
    for (const auto& name : manifest.files) {
        CHECK(read_file(dir / name) == read_file(dir2 / name));
    }

    // Some nearby seed shuffles differently.
    bool any_differs = false;
    for (unsigned seed = 0; seed < 6 && !any_differs; ++seed) {
        CorpusOptions other = options;
        other.seed = seed;
        const auto dir3 = fs::temp_directory_path() / "judgeval_corpus_test3";
        fs::remove_all(dir3);
        emit_corpus(items, dir3.string(), other);
        any_differs = read_file(dir3 / "test_with_confidence.jsonl") !=
                      read_file(dir / "test_with_confidence.jsonl");
        fs::remove_all(dir3);
    }
    CHECK(any_differs);

    // Single-variant runs write only their own files.
    const auto dir4 = fs::temp_directory_path() / "judgeval_corpus_test4";
    fs::remove_all(dir4);
    CorpusOptions bare_only = options;
    bare_only.variant = CorpusVariant::WithoutConfidence;
    auto bare_manifest = emit_corpus(items, dir4.string(), bare_only);
    CHECK(bare_manifest.files == std::vector<std::string>{"train_without_confidence.jsonl",
                                                          "test_without_confidence.jsonl"});
    CHECK(!fs::exists(dir4 / "train_with_confidence.jsonl"));
    CHECK(fs::exists(dir4 / "manifest.json"));
    auto loaded = json::parse(read_file(dir4 / "manifest.json")).get<CorpusManifest>();
    CHECK(loaded.variant == "without_confidence");
    CHECK(loaded.train == 9);

    fs::remove_all(dir);
    fs::remove_all(dir2);
    fs::remove_all(dir4);
}

TEST_CASE("corpus variant names round-trip and reject strangers") {
    for (auto v : {CorpusVariant::WithConfidence, CorpusVariant::WithoutConfidence,
                   CorpusVariant::Both}) {
        CHECK(corpus_variant_from_string(to_string(v)) == v);
    }
    CHECK_THROWS_AS(corpus_variant_from_string("all"), ConfigError);
}

TEST_CASE("labeled instances round-trip through JSONL") {
    namespace fs = std::filesystem;
    const auto path = fs::temp_directory_path() / "judgeval_labeled_test.jsonl";
    std::vector<LabeledInstance> items = {labeled("a", Preference::R1),
                                          labeled("b", Preference::R2)};
    save_labeled_jsonl(items, path.string());
    auto loaded = load_labeled_jsonl(path.string());
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].instance == items[0].instance);
    CHECK(loaded[0].label == Preference::R1);
    CHECK(loaded[0].explanation == items[0].explanation);
    CHECK(loaded[1].label == Preference::R2);
    fs::remove(path);
}

TEST_CASE("instruction files load id, text, reference, and category") {
    namespace fs = std::filesystem;
    const auto path = fs::temp_directory_path() / "judgeval_instructions_test.jsonl";
    {
        std::ofstream out(path);
        out << R"({"id":"q1","instruction":"Add 2 and 2.","reference_answer":"4",)"
            << R"("category":"math"})" << "\n";
        out << R"({"id":"q2","instruction":"Write a poem."})" << "\n";
    }
    auto items = load_instructions_jsonl(path.string());
    REQUIRE(items.size() == 2);
    CHECK(items[0].id == "q1");
    CHECK(items[0].instruction == "Add 2 and 2.");
    CHECK(*items[0].reference_answer == "4");
    CHECK(*items[0].category == Category::Math);
    CHECK(!items[1].reference_answer.has_value());
    CHECK(!items[1].category.has_value());
    fs::remove(path);
}
