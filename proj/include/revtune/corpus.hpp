#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace revtune {

struct RevisionExample {
    std::string original;
    std::string revised;
    std::vector<std::string> intentions;  // ordered; length 1 = single-intent
    std::string level = "sentence";       // "sentence" or "document"
};

struct IntentionTaxonomy {
    std::string name;
    std::vector<std::string> labels;
    std::vector<std::string> excluded;

    int index_of(const std::string& label) const;
    int num_labels() const { return static_cast<int>(labels.size()); }
    std::string joined_labels() const;

    static IntentionTaxonomy iterater();
    static IntentionTaxonomy argrevision();
};

// Lowercased whitespace tokens with punctuation detached; <edit> and </edit>
// survive as atomic tokens.
std::vector<std::string> corpus_tokenize(const std::string& text);

class Vocab {
public:
    static constexpr int pad_id = 0;
    static constexpr int bos_id = 1;
    static constexpr int eos_id = 2;
    static constexpr int unk_id = 3;
    static constexpr int edit_open_id = 4;
    static constexpr int edit_close_id = 5;

    Vocab();

    int size() const { return static_cast<int>(id_to_token_.size()); }
    int id_of(const std::string& token) const;
    const std::string& token_of(int id) const;
    bool contains(const std::string& token) const;

    // Adds a token if absent; returns its id either way.
    int add_token(const std::string& token);

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

Vocab build_vocab(const std::vector<RevisionExample>& examples, const IntentionTaxonomy& taxonomy,
                  int min_count = 1);

std::vector<RevisionExample> load_jsonl(const std::string& path,
                                        const IntentionTaxonomy& taxonomy);
void save_jsonl(const std::string& path, const std::vector<RevisionExample>& examples);

struct PredictionExample {
    std::string text;         // rendered template
    std::vector<int> tokens;  // bos followed by the encoded template
    int label = -1;           // class index in single-intent mode
    std::vector<int> multi_hot;
};

struct GenerationExample {
    std::string prompt_text;         // rendered instruction, original text, "Revised Text:"
    std::vector<int> prompt_tokens;  // bos followed by the encoded prompt
    std::vector<int> inputs;         // full teacher-forced input sequence
    std::vector<int> targets;        // inputs shifted left by one
    std::vector<std::uint8_t> loss_mask;  // 1 on revised-text and eos targets
};

PredictionExample build_prediction_prompt(const RevisionExample& example,
                                          const IntentionTaxonomy& taxonomy, const Vocab& vocab);
GenerationExample build_generation_prompt(const RevisionExample& example,
                                          const IntentionTaxonomy& taxonomy, const Vocab& vocab);

struct SyntheticConfig {
    std::uint64_t seed = 0;
    int train_size = 600;
    int val_size = 60;
    int test_size = 60;
    std::string level = "sentence";  // "sentence" or "document"
};

std::vector<RevisionExample> generate_synthetic_examples(const SyntheticConfig& config,
                                                         const std::string& split);
// Writes train.jsonl, val.jsonl, test.jsonl under out_dir.
void generate_synthetic_corpus(const SyntheticConfig& config, const std::string& out_dir);

}  // namespace revtune
