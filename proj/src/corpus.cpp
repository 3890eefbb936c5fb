#include "revtune/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"

namespace revtune {

namespace {

const char* kSpecials[] = {"<pad>", "<bos>", "<eos>", "<unk>", "<edit>", "</edit>"};

std::string render_prediction_template(const RevisionExample& example,
                                       const IntentionTaxonomy& taxonomy) {
    return "Identify the intention of the revision between the original text and the revised "
           "text. The possible intentions include: " +
           taxonomy.joined_labels() + ". Original Text: " + example.original +
           " Revised Text: " + example.revised;
}

std::string joined_intentions(const RevisionExample& example) {
    std::string out;
    for (std::size_t i = 0; i < example.intentions.size(); ++i) {
        if (i > 0) out += ", ";
        out += example.intentions[i];
    }
    return out;
}

std::string render_generation_prompt(const RevisionExample& example) {
    return "Revise the original text based on the intention " + joined_intentions(example) +
           ". Original Text: " + example.original + " Revised Text:";
}

}  // namespace

int IntentionTaxonomy::index_of(const std::string& label) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == label) return static_cast<int>(i);
    }
    return -1;
}

std::string IntentionTaxonomy::joined_labels() const {
    std::string out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i > 0) out += ", ";
        out += labels[i];
    }
    return out;
}

IntentionTaxonomy IntentionTaxonomy::iterater() {
    return {"iterater", {"clarity", "fluency", "coherence", "style", "meaning-changed"},
            {"others"}};
}

IntentionTaxonomy IntentionTaxonomy::argrevision() {
    return {"argrevision", {"relevant", "irrelevant", "repeated", "lce", "not lce", "commentary"},
            {"others"}};
}

std::vector<std::string> corpus_tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            out.push_back(current);
            current.clear();
        }
    };
    std::size_t i = 0;
    while (i < text.size()) {
        if (text.compare(i, 6, "<edit>") == 0) {
            flush();
            out.emplace_back("<edit>");
            i += 6;
            continue;
        }
        if (text.compare(i, 7, "</edit>") == 0) {
            flush();
            out.emplace_back("</edit>");
            i += 7;
            continue;
        }
        char c = static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
        if (std::isalnum(static_cast<unsigned char>(c))) {
            current.push_back(c);
        } else {
            flush();
            if (!std::isspace(static_cast<unsigned char>(c))) out.emplace_back(1, c);
        }
        ++i;
    }
    flush();
    return out;
}

Vocab::Vocab() {
    for (const char* token : kSpecials) {
        token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
        id_to_token_.emplace_back(token);
    }
}

int Vocab::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? unk_id : it->second;
}

const std::string& Vocab::token_of(int id) const {
    if (id < 0 || id >= size()) {
        throw std::invalid_argument("token id " + std::to_string(id) + " out of range [0," +
                                    std::to_string(size()) + ")");
    }
    return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

int Vocab::add_token(const std::string& token) {
    auto it = token_to_id_.find(token);
    if (it != token_to_id_.end()) return it->second;
    int id = size();
    token_to_id_.emplace(token, id);
    id_to_token_.push_back(token);
    return id;
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& token : corpus_tokenize(text)) ids.push_back(id_of(token));
    return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id == pad_id || id == bos_id || id == eos_id) continue;
        if (!out.empty()) out += ' ';
        out += token_of(id);
    }
    return out;
}

Vocab build_vocab(const std::vector<RevisionExample>& examples, const IntentionTaxonomy& taxonomy,
                  int min_count) {
    std::map<std::string, long long> counts;
    auto count_text = [&counts](const std::string& text) {
        for (const auto& token : corpus_tokenize(text)) counts[token] += 1;
    };
    for (const auto& example : examples) {
        count_text(example.original);
        count_text(example.revised);
        count_text(render_prediction_template(example, taxonomy));
        count_text(render_generation_prompt(example));
    }

    std::vector<std::pair<std::string, long long>> ordered(counts.begin(), counts.end());
    std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocab vocab;
    for (const auto& [token, count] : ordered) {
        if (count < min_count) continue;
        if (vocab.contains(token)) continue;
        vocab.add_token(token);
    }
    return vocab;
}

std::vector<RevisionExample> load_jsonl(const std::string& path,
                                        const IntentionTaxonomy& taxonomy) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);

    std::vector<RevisionExample> examples;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto where = path + ":" + std::to_string(line_no);
        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument(where + ": malformed json line: " + e.what());
        }
        if (!parsed.is_object()) {
            throw std::invalid_argument(where + ": expected a json object");
        }
        for (const char* field : {"original", "revised", "intentions"}) {
            if (!parsed.contains(field)) {
                throw std::invalid_argument(where + ": missing field '" + field + "'");
            }
        }
        if (!parsed["original"].is_string() || !parsed["revised"].is_string() ||
            !parsed["intentions"].is_array()) {
            throw std::invalid_argument(where + ": wrong field type");
        }

        RevisionExample example;
        example.original = parsed["original"].get<std::string>();
        example.revised = parsed["revised"].get<std::string>();
        for (const auto& label : parsed["intentions"]) {
            if (!label.is_string()) {
                throw std::invalid_argument(where + ": intention labels must be strings");
            }
            example.intentions.push_back(label.get<std::string>());
        }
        if (example.intentions.empty()) {
            throw std::invalid_argument(where + ": empty intention list");
        }
        for (const auto& label : example.intentions) {
            if (taxonomy.index_of(label) < 0) {
                throw std::invalid_argument(where + ": unknown intention label '" + label +
                                            "' for taxonomy " + taxonomy.name);
            }
        }
        if (parsed.contains("level")) {
            example.level = parsed["level"].get<std::string>();
            if (example.level != "sentence" && example.level != "document") {
                throw std::invalid_argument(where + ": level must be sentence or document");
            }
        }
        examples.push_back(std::move(example));
    }
    return examples;
}

void save_jsonl(const std::string& path, const std::vector<RevisionExample>& examples) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path);
    for (const auto& example : examples) {
        nlohmann::json row;
        row["original"] = example.original;
        row["revised"] = example.revised;
        row["intentions"] = example.intentions;
        row["level"] = example.level;
        out << row.dump() << '\n';
    }
}

PredictionExample build_prediction_prompt(const RevisionExample& example,
                                          const IntentionTaxonomy& taxonomy, const Vocab& vocab) {
    if (example.intentions.empty()) {
        throw std::invalid_argument("prediction prompt needs at least one intention");
    }
    PredictionExample out;
    out.text = render_prediction_template(example, taxonomy);
    out.tokens.push_back(Vocab::bos_id);
    for (int id : vocab.encode(out.text)) out.tokens.push_back(id);

    out.multi_hot.assign(static_cast<std::size_t>(taxonomy.num_labels()), 0);
    for (const auto& label : example.intentions) {
        int idx = taxonomy.index_of(label);
        if (idx < 0) throw std::invalid_argument("unknown intention label '" + label + "'");
        out.multi_hot[static_cast<std::size_t>(idx)] = 1;
    }
    out.label = taxonomy.index_of(example.intentions.front());
    return out;
}

GenerationExample build_generation_prompt(const RevisionExample& example,
                                          const IntentionTaxonomy& taxonomy, const Vocab& vocab) {
    for (const auto& label : example.intentions) {
        if (taxonomy.index_of(label) < 0) {
            throw std::invalid_argument("unknown intention label '" + label + "'");
        }
    }
    std::vector<int> revised_ids = vocab.encode(example.revised);
    if (revised_ids.empty()) {
        throw std::invalid_argument("generation prompt needs a non-empty revised text");
    }

    GenerationExample out;
    out.prompt_text = render_generation_prompt(example);
    out.prompt_tokens.push_back(Vocab::bos_id);
    for (int id : vocab.encode(out.prompt_text)) out.prompt_tokens.push_back(id);

    std::vector<int> full = out.prompt_tokens;
    full.insert(full.end(), revised_ids.begin(), revised_ids.end());
    full.push_back(Vocab::eos_id);

    out.inputs.assign(full.begin(), full.end() - 1);
    out.targets.assign(full.begin() + 1, full.end());
    out.loss_mask.assign(out.targets.size(), 0);
    // Targets at positions >= prompt length - 1 are revised-text tokens or eos.
    for (std::size_t t = out.prompt_tokens.size() - 1; t < out.targets.size(); ++t) {
        out.loss_mask[t] = 1;
    }
    return out;
}

}  // namespace revtune
