#include <algorithm>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "revtune/corpus.hpp"
#include "revtune/rng.hpp"

namespace revtune {

namespace {

const std::vector<std::string> kNouns = {
    "cat",    "dog",    "bird",   "horse",  "garden",   "house",  "river",
    "teacher", "student", "engine", "market", "painting", "forest", "letter",
    "bridge", "doctor", "window", "mountain", "library", "farmer"};

const std::vector<std::string> kPlainAdjectives = {"big",  "small", "old",   "new",  "fast",
                                                   "slow", "bright", "quiet", "warm", "cold"};

const std::vector<std::pair<std::string, std::string>> kRegisterSwaps = {
    {"big", "substantial"}, {"small", "minimal"},  {"old", "ancient"},
    {"new", "novel"},       {"fast", "rapid"},     {"slow", "gradual"},
    {"bright", "radiant"},  {"quiet", "tranquil"}, {"warm", "temperate"},
    {"cold", "frigid"}};

const std::vector<std::string> kFillers = {"it is worth noting that", "as a matter of fact",
                                           "needless to say"};

const std::vector<std::string> kConnectives = {"therefore", "moreover", "consequently"};

const std::vector<std::string> kFacts = {"it also appears in the annual report .",
                                         "this detail was confirmed yesterday .",
                                         "the committee noted this point ."};

struct SentencePair {
    std::string original;
    std::string revised;
};

std::string base_sentence(const std::string& noun, const std::string& adjective) {
    return "the " + noun + " is " + adjective + " .";
}

// One mechanical realization per intention; the revised side always differs
// from the original side.
SentencePair realize(const std::string& intention, Rng& rng) {
    const std::string& noun = kNouns[rng.next_below(kNouns.size())];
    if (intention == "fluency") {
        const std::string& adj = kPlainAdjectives[rng.next_below(kPlainAdjectives.size())];
        return {"the " + noun + " are " + adj + " .", base_sentence(noun, adj)};
    }
    if (intention == "clarity") {
        const std::string& adj = kPlainAdjectives[rng.next_below(kPlainAdjectives.size())];
        const std::string& filler = kFillers[rng.next_below(kFillers.size())];
        return {filler + " the " + noun + " is " + adj + " .", base_sentence(noun, adj)};
    }
    if (intention == "coherence") {
        const std::string& adj = kPlainAdjectives[rng.next_below(kPlainAdjectives.size())];
        const std::string& conn = kConnectives[rng.next_below(kConnectives.size())];
        return {base_sentence(noun, adj), conn + " the " + noun + " is " + adj + " ."};
    }
    if (intention == "style") {
        const auto& swap = kRegisterSwaps[rng.next_below(kRegisterSwaps.size())];
        return {base_sentence(noun, swap.first), base_sentence(noun, swap.second)};
    }
    if (intention == "meaning-changed") {
        const std::string& adj = kPlainAdjectives[rng.next_below(kPlainAdjectives.size())];
        const std::string& fact = kFacts[rng.next_below(kFacts.size())];
        std::string original = base_sentence(noun, adj);
        return {original, original + " " + fact};
    }
    throw std::invalid_argument("no synthetic rule for intention '" + intention + "'");
}

RevisionExample make_sentence_example(const IntentionTaxonomy& taxonomy, Rng& rng) {
    const std::string& intention =
        taxonomy.labels[rng.next_below(taxonomy.labels.size())];
    auto pair = realize(intention, rng);
    return {pair.original, pair.revised, {intention}, "sentence"};
}

RevisionExample make_document_example(const IntentionTaxonomy& taxonomy, Rng& rng) {
    std::vector<std::string> picks = taxonomy.labels;
    shuffle(picks, rng);
    const std::size_t how_many = 2 + rng.next_below(2);
    picks.resize(how_many);

    // meaning-changed appends a tagged sentence; every other intention edits
    // one sentence in place. Applied in sentence order, appended rule last.
    std::vector<std::string> in_place, appended;
    for (const auto& intention : picks) {
        (intention == "meaning-changed" ? appended : in_place).push_back(intention);
    }

    RevisionExample example;
    example.level = "document";
    std::vector<std::string> original_parts, revised_parts;
    for (const auto& intention : in_place) {
        auto pair = realize(intention, rng);
        original_parts.push_back(pair.original);
        revised_parts.push_back("<edit> " + pair.revised + " </edit>");
        example.intentions.push_back(intention);
    }
    // One untouched filler sentence keeps the document from being all edits.
    {
        const std::string& noun = kNouns[rng.next_below(kNouns.size())];
        const std::string& adj = kPlainAdjectives[rng.next_below(kPlainAdjectives.size())];
        std::string neutral = base_sentence(noun, adj);
        original_parts.push_back(neutral);
        revised_parts.push_back(neutral);
    }
    for (const auto& intention : appended) {
        auto pair = realize(intention, rng);
        std::string added = pair.revised.substr(pair.original.size() + 1);
        original_parts.push_back(pair.original);
        revised_parts.push_back(pair.original + " <edit> " + added + " </edit>");
        example.intentions.push_back(intention);
    }

    for (std::size_t i = 0; i < original_parts.size(); ++i) {
        if (i > 0) {
            example.original += ' ';
            example.revised += ' ';
        }
        example.original += original_parts[i];
        example.revised += revised_parts[i];
    }
    return example;
}

}  // namespace

std::vector<RevisionExample> generate_synthetic_examples(const SyntheticConfig& config,
                                                         const std::string& split) {
    int size;
    if (split == "train") {
        size = config.train_size;
    } else if (split == "val") {
        size = config.val_size;
    } else if (split == "test") {
        size = config.test_size;
    } else {
        throw std::invalid_argument("unknown split '" + split + "'");
    }
    if (size < 0) throw std::invalid_argument("negative split size");
    if (config.level != "sentence" && config.level != "document") {
        throw std::invalid_argument("synthetic level must be sentence or document");
    }

    auto taxonomy = IntentionTaxonomy::iterater();
    Rng rng(derive_seed(config.seed, "synth/" + config.level + "/" + split));
    std::vector<RevisionExample> examples;
    examples.reserve(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) {
        examples.push_back(config.level == "sentence" ? make_sentence_example(taxonomy, rng)
                                                      : make_document_example(taxonomy, rng));
    }
    return examples;
}

void generate_synthetic_corpus(const SyntheticConfig& config, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    for (const char* split : {"train", "val", "test"}) {
        auto examples = generate_synthetic_examples(config, split);
        save_jsonl((std::filesystem::path(out_dir) / (std::string(split) + ".jsonl")).string(),
                   examples);
    }
}

}  // namespace revtune
