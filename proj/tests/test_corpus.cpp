#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "revtune/corpus.hpp"
#include "revtune/metrics.hpp"

using namespace revtune;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string golden(const std::string& name) {
    return read_file(fs::path(GOLDEN_DIR) / name);
}

fs::path scratch_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("revtune_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

bool contains_token(const std::string& text, const std::string& token) {
    auto toks = corpus_tokenize(text);
    return std::find(toks.begin(), toks.end(), token) != toks.end();
}

// Recovers the applied rules from their lexical fingerprints.
std::set<std::string> oracle_classify(const RevisionExample& e) {
    std::set<std::string> out;
    if (contains_token(e.original, "are")) out.insert("fluency");
    for (const auto& marker : {"noting", "needless", "matter"}) {
        if (contains_token(e.original, marker)) out.insert("clarity");
    }
    for (const auto& marker : {"therefore", "moreover", "consequently"}) {
        if (contains_token(e.revised, marker)) out.insert("coherence");
    }
    for (const auto& marker : {"substantial", "minimal", "ancient", "novel", "rapid", "gradual",
                               "radiant", "tranquil", "temperate", "frigid"}) {
        if (contains_token(e.revised, marker)) out.insert("style");
    }
    for (const auto& marker : {"report", "confirmed", "committee"}) {
        if (contains_token(e.revised, marker)) out.insert("meaning-changed");
    }
    return out;
}

}  // namespace

TEST_CASE("corpus tokenizer keeps edit tags atomic") {
    CHECK(corpus_tokenize("The cat SAT.") ==
          std::vector<std::string>{"the", "cat", "sat", "."});
    CHECK(corpus_tokenize("<edit> the cat . </edit>") ==
          std::vector<std::string>{"<edit>", "the", "cat", ".", "</edit>"});
    CHECK(corpus_tokenize("a<edit>b") == std::vector<std::string>{"a", "<edit>", "b"});
    CHECK(corpus_tokenize("") == std::vector<std::string>{});
}

TEST_CASE("vocab specials and round trip") {
    Vocab vocab;
    CHECK(vocab.size() == 6);
    CHECK(vocab.id_of("<pad>") == Vocab::pad_id);
    CHECK(vocab.id_of("<bos>") == Vocab::bos_id);
    CHECK(vocab.id_of("<eos>") == Vocab::eos_id);
    CHECK(vocab.id_of("<unk>") == Vocab::unk_id);
    CHECK(vocab.id_of("<edit>") == Vocab::edit_open_id);
    CHECK(vocab.id_of("</edit>") == Vocab::edit_close_id);
    CHECK(vocab.id_of("missing") == Vocab::unk_id);

    int id = vocab.add_token("cat");
    CHECK(vocab.add_token("cat") == id);
    CHECK(vocab.id_of("cat") == id);
    CHECK(vocab.token_of(id) == "cat");
    CHECK_THROWS_AS(vocab.token_of(99), std::invalid_argument);

    for (const auto& tok : {"the", "sat", "."}) vocab.add_token(tok);
    std::string text = "the cat sat . <edit> the cat . </edit>";
    CHECK(vocab.decode(vocab.encode(text)) == text);
}

TEST_CASE("build_vocab covers prompt templates and applies min_count") {
    std::vector<RevisionExample> examples = {
        {"the cat are big .", "the cat is big .", {"fluency"}, "sentence"},
        {"the dog is old .", "the dog is ancient .", {"style"}, "sentence"},
    };
    auto taxonomy = IntentionTaxonomy::iterater();
    auto vocab = build_vocab(examples, taxonomy, 1);
    for (const auto& tok : {"identify", "intention", "revise", "original", "revised", "text",
                            "clarity", "fluency", "coherence", "style", "meaning", "cat",
                            "ancient", ",", "."}) {
        CAPTURE(tok);
        CHECK(vocab.contains(tok));
    }

    auto strict = build_vocab(examples, taxonomy, 3);
    CHECK_FALSE(strict.contains("ancient"));
    CHECK(strict.id_of("ancient") == Vocab::unk_id);
    CHECK(strict.contains("the"));
}

TEST_CASE("load_jsonl validates schema with line numbers") {
    auto dir = scratch_dir("jsonl");
    auto taxonomy = IntentionTaxonomy::iterater();

    {
        std::ofstream out(dir / "good.jsonl");
        out << R"({"original":"a","revised":"b","intentions":["fluency"]})" << "\n";
        out << R"({"original":"c .","revised":"d .","intentions":["style","clarity"],"level":"document"})"
            << "\n";
    }
    auto examples = load_jsonl((dir / "good.jsonl").string(), taxonomy);
    REQUIRE(examples.size() == 2);
    CHECK(examples[0].level == "sentence");
    CHECK(examples[0].original == "a");
    CHECK(examples[1].level == "document");
    CHECK(examples[1].intentions == std::vector<std::string>{"style", "clarity"});

    {
        std::ofstream out(dir / "missing.jsonl");
        out << R"({"original":"a","revised":"b","intentions":["fluency"]})" << "\n";
        out << R"({"original":"a","revised":"b"})" << "\n";
    }
    CHECK_THROWS_WITH_AS(load_jsonl((dir / "missing.jsonl").string(), taxonomy),
                         doctest::Contains(":2: missing field 'intentions'"),
                         std::invalid_argument);

    {
        std::ofstream out(dir / "broken.jsonl");
        out << "not json" << "\n";
    }
    CHECK_THROWS_WITH_AS(load_jsonl((dir / "broken.jsonl").string(), taxonomy),
                         doctest::Contains(":1: malformed json line"), std::invalid_argument);

    {
        std::ofstream out(dir / "label.jsonl");
        out << R"({"original":"a","revised":"b","intentions":["grammar"]})" << "\n";
    }
    CHECK_THROWS_WITH_AS(load_jsonl((dir / "label.jsonl").string(), taxonomy),
                         doctest::Contains("unknown intention label 'grammar'"),
                         std::invalid_argument);

    CHECK_THROWS_AS(load_jsonl((dir / "absent.jsonl").string(), taxonomy), std::runtime_error);
}

TEST_CASE("jsonl save and load round trip") {
    auto dir = scratch_dir("roundtrip");
    SyntheticConfig config{7, 25, 5, 5, "document"};
    auto examples = generate_synthetic_examples(config, "train");
    save_jsonl((dir / "out.jsonl").string(), examples);
    auto loaded = load_jsonl((dir / "out.jsonl").string(), IntentionTaxonomy::iterater());
    REQUIRE(loaded.size() == examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
        CHECK(loaded[i].original == examples[i].original);
        CHECK(loaded[i].revised == examples[i].revised);
        CHECK(loaded[i].intentions == examples[i].intentions);
        CHECK(loaded[i].level == examples[i].level);
    }
}

TEST_CASE("prediction prompt matches the golden template") {
    RevisionExample example{"the cat are big .", "the cat is big .", {"fluency"}, "sentence"};
    auto taxonomy = IntentionTaxonomy::iterater();
    std::vector<RevisionExample> corpus = {example};
    auto vocab = build_vocab(corpus, taxonomy, 1);

    auto prompt = build_prediction_prompt(example, taxonomy, vocab);
    CHECK(prompt.text == golden("prediction_prompt.txt"));
    CHECK(prompt.label == taxonomy.index_of("fluency"));
    CHECK(prompt.multi_hot == std::vector<int>{0, 1, 0, 0, 0});
    REQUIRE(!prompt.tokens.empty());
    CHECK(prompt.tokens.front() == Vocab::bos_id);
    // The rendered template re-encodes to the same ids it was built from.
    auto reencoded = vocab.encode(prompt.text);
    CHECK(std::vector<int>(prompt.tokens.begin() + 1, prompt.tokens.end()) == reencoded);
    CHECK(std::count(reencoded.begin(), reencoded.end(), Vocab::unk_id) == 0);

    RevisionExample multi{"a .", "b .", {"style", "clarity"}, "document"};
    auto multi_prompt = build_prediction_prompt(multi, taxonomy, build_vocab({multi}, taxonomy, 1));
    CHECK(multi_prompt.multi_hot == std::vector<int>{1, 0, 0, 1, 0});
    CHECK(multi_prompt.label == taxonomy.index_of("style"));
}

TEST_CASE("generation prompt matches the golden template and masks only the target") {
    auto taxonomy = IntentionTaxonomy::iterater();
    RevisionExample example{"the cat are big .", "the cat is big .", {"fluency"}, "sentence"};
    auto vocab = build_vocab({example}, taxonomy, 1);
    auto gen = build_generation_prompt(example, taxonomy, vocab);

    CHECK(gen.prompt_text == golden("generation_prompt_single.txt"));
    CHECK(gen.prompt_tokens.front() == Vocab::bos_id);
    CHECK(gen.inputs.size() == gen.targets.size());
    CHECK(gen.loss_mask.size() == gen.targets.size());

    auto revised_ids = vocab.encode(example.revised);
    std::size_t masked = 0;
    for (std::size_t t = 0; t < gen.loss_mask.size(); ++t) {
        if (gen.loss_mask[t]) ++masked;
    }
    CHECK(masked == revised_ids.size() + 1);  // revised tokens plus eos
    CHECK(gen.targets.back() == Vocab::eos_id);
    CHECK(gen.loss_mask.back() == 1);
    // Prompt-token targets carry no loss.
    for (std::size_t t = 0; t + 1 < gen.prompt_tokens.size(); ++t) {
        CHECK(gen.loss_mask[t] == 0);
    }
    // Masked targets spell the revised text followed by eos.
    std::vector<int> masked_targets;
    for (std::size_t t = 0; t < gen.targets.size(); ++t) {
        if (gen.loss_mask[t]) masked_targets.push_back(gen.targets[t]);
    }
    std::vector<int> expected = revised_ids;
    expected.push_back(Vocab::eos_id);
    CHECK(masked_targets == expected);

    RevisionExample multi{"the dog are fast . the house is old .",
                          "<edit> the dog is fast . </edit> <edit> the house is ancient . </edit>",
                          {"fluency", "style"},
                          "document"};
    auto multi_gen = build_generation_prompt(multi, taxonomy, build_vocab({multi}, taxonomy, 1));
    CHECK(multi_gen.prompt_text == golden("generation_prompt_multi.txt"));

    RevisionExample empty{"a .", "", {"fluency"}, "sentence"};
    CHECK_THROWS_AS(build_generation_prompt(empty, taxonomy, vocab), std::invalid_argument);
}

TEST_CASE("synthetic generation is deterministic") {
    auto dir_a = scratch_dir("synth_a");
    auto dir_b = scratch_dir("synth_b");
    SyntheticConfig config{11, 40, 8, 8, "sentence"};
    generate_synthetic_corpus(config, dir_a.string());
    generate_synthetic_corpus(config, dir_b.string());
    for (const char* split : {"train.jsonl", "val.jsonl", "test.jsonl"}) {
        CHECK(read_file(dir_a / split) == read_file(dir_b / split));
    }
    SyntheticConfig other{12, 40, 8, 8, "sentence"};
    auto dir_c = scratch_dir("synth_c");
    generate_synthetic_corpus(other, dir_c.string());
    CHECK(read_file(dir_a / "train.jsonl") != read_file(dir_c / "train.jsonl"));
}

TEST_CASE("synthetic examples are labeled with exactly the applied rules") {
    for (const char* level : {"sentence", "document"}) {
        SyntheticConfig config{3, 300, 0, 0, level};
        auto examples = generate_synthetic_examples(config, "train");
        REQUIRE(examples.size() == 300);
        for (const auto& e : examples) {
            CHECK(e.revised != e.original);
            CHECK(!e.intentions.empty());
            std::set<std::string> labels(e.intentions.begin(), e.intentions.end());
            CHECK(labels == oracle_classify(e));
            if (std::string(level) == "document") {
                CHECK(e.intentions.size() >= 2);
                CHECK(e.intentions.size() <= 3);
                CHECK(e.revised.find("<edit>") != std::string::npos);
                CHECK(e.original.find("<edit>") == std::string::npos);
            } else {
                CHECK(e.intentions.size() == 1);
            }
        }
    }
}

TEST_CASE("synthetic label mixture stays near uniform") {
    SyntheticConfig config{17, 10000, 0, 0, "sentence"};
    auto examples = generate_synthetic_examples(config, "train");
    std::map<std::string, int> counts;
    for (const auto& e : examples) counts[e.intentions.front()] += 1;
    auto taxonomy = IntentionTaxonomy::iterater();
    REQUIRE(counts.size() == taxonomy.labels.size());
    for (const auto& [label, count] : counts) {
        double share = static_cast<double>(count) / 10000.0;
        CAPTURE(label);
        CHECK(std::abs(share - 0.2) <= 0.01);
    }
}

TEST_CASE("encode decode identity on generated corpus text") {
    SyntheticConfig config{23, 60, 0, 0, "document"};
    auto examples = generate_synthetic_examples(config, "train");
    SyntheticConfig sent_config{23, 60, 0, 0, "sentence"};
    auto sentence_examples = generate_synthetic_examples(sent_config, "train");
    examples.insert(examples.end(), sentence_examples.begin(), sentence_examples.end());

    auto taxonomy = IntentionTaxonomy::iterater();
    auto vocab = build_vocab(examples, taxonomy, 1);
    CHECK(vocab.size() <= 512);
    for (const auto& e : examples) {
        CHECK(vocab.decode(vocab.encode(e.original)) == e.original);
        CHECK(vocab.decode(vocab.encode(e.revised)) == e.revised);
    }
}

TEST_CASE("taxonomies expose the canonical label sets") {
    auto iterater = IntentionTaxonomy::iterater();
    CHECK(iterater.labels ==
          std::vector<std::string>{"clarity", "fluency", "coherence", "style", "meaning-changed"});
    CHECK(iterater.excluded == std::vector<std::string>{"others"});
    CHECK(iterater.index_of("style") == 3);
    CHECK(iterater.index_of("others") == -1);

    auto arg = IntentionTaxonomy::argrevision();
    CHECK(arg.labels.size() == 6);
}
