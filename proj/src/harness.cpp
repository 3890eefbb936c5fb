#include "revtune/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "revtune/rng.hpp"
#include "revtune/textutil.hpp"

namespace revtune {

namespace {

std::string trim(const std::string& text) {
    std::size_t begin = text.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    std::size_t end = text.find_last_not_of(" \t\r\n");
    return text.substr(begin, end - begin + 1);
}

long long parse_integer(const std::string& key, const std::string& value) {
    long long parsed = 0;
    auto res = std::from_chars(value.data(), value.data() + value.size(), parsed);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size())
        throw std::invalid_argument("config key '" + key + "' expects an integer, got '" + value +
                                    "'");
    return parsed;
}

int parse_int(const std::string& key, const std::string& value) {
    return static_cast<int>(parse_integer(key, value));
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t parsed = 0;
    auto res = std::from_chars(value.data(), value.data() + value.size(), parsed);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size())
        throw std::invalid_argument("config key '" + key +
                                    "' expects a non-negative integer, got '" + value + "'");
    return parsed;
}

double parse_number(const std::string& key, const std::string& value) {
    double parsed = 0.0;
    auto res = std::from_chars(value.data(), value.data() + value.size(), parsed);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size())
        throw std::invalid_argument("config key '" + key + "' expects a number, got '" + value +
                                    "'");
    return parsed;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument("config key '" + key + "' expects true or false, got '" + value +
                                "'");
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file: " + path.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("failed writing output file: " + path.string());
}

TrainConfig resolved_train(const ExperimentConfig& config) {
    TrainConfig train = config.train;
    train.seed = config.seed;
    return train;
}

IntentionTaxonomy taxonomy_for(const ExperimentConfig& config) {
    return config.taxonomy == "argrevision" ? IntentionTaxonomy::argrevision()
                                            : IntentionTaxonomy::iterater();
}

std::filesystem::path out_path(const ExperimentConfig& config, const std::string& name) {
    return std::filesystem::path(config.out_dir) / name;
}

void write_config_record(const ExperimentConfig& config) {
    write_text_file(out_path(config, "config.txt"), experiment_config_text(config));
}

}  // namespace

void ExperimentConfig::validate() const {
    if (out_dir.empty()) throw std::invalid_argument("out_dir must not be empty");
    if (corpus_dir.empty()) throw std::invalid_argument("corpus_dir must not be empty");
    if (level != "sentence" && level != "document")
        throw std::invalid_argument("level must be 'sentence' or 'document', got '" + level + "'");
    if (taxonomy != "iterater" && taxonomy != "argrevision")
        throw std::invalid_argument("taxonomy must be 'iterater' or 'argrevision', got '" +
                                    taxonomy + "'");
    strategy_from_name(strategy);
    if (synth_train_size < 1 || synth_val_size < 1 || synth_test_size < 1)
        throw std::invalid_argument("synthetic split sizes must be positive");
    if (lisa_count < 1) throw std::invalid_argument("lisa_count must be positive");
    if (ist_count < 1) throw std::invalid_argument("ist_count must be positive");
    model.validate();
    train.validate();
    decode.validate();
}

SelectionStrategy ExperimentConfig::selection() const {
    SelectionStrategy strat;
    strat.variant = strategy_from_name(strategy);
    strat.lisa_count = lisa_count;
    strat.ist_count = ist_count;
    return strat;
}

ExperimentConfig parse_experiment_config(const std::string& text) {
    std::map<std::string, std::string> pairs;
    std::istringstream lines(text);
    std::string line;
    int line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        const std::size_t comment = line.find('#');
        if (comment != std::string::npos) line.resize(comment);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        " is not key = value: '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        " is not key = value: '" + line + "'");
        pairs[key] = value;
    }

    ExperimentConfig config;
    std::vector<std::string> held;
    held.reserve(pairs.size());
    auto consume = [&pairs, &held](const std::string& key) -> const std::string* {
        auto it = pairs.find(key);
        if (it == pairs.end()) return nullptr;
        held.push_back(std::move(it->second));
        pairs.erase(it);
        return &held.back();
    };

    if (const auto* v = consume("seed")) config.seed = parse_u64("seed", *v);
    if (const auto* v = consume("out_dir")) config.out_dir = *v;
    if (const auto* v = consume("corpus_dir")) config.corpus_dir = *v;
    if (const auto* v = consume("level")) config.level = *v;
    if (const auto* v = consume("taxonomy")) config.taxonomy = *v;
    if (const auto* v = consume("strategy")) config.strategy = *v;
    if (const auto* v = consume("synth.train_size"))
        config.synth_train_size = parse_int("synth.train_size", *v);
    if (const auto* v = consume("synth.val_size"))
        config.synth_val_size = parse_int("synth.val_size", *v);
    if (const auto* v = consume("synth.test_size"))
        config.synth_test_size = parse_int("synth.test_size", *v);
    if (const auto* v = consume("model.num_layers"))
        config.model.num_layers = parse_int("model.num_layers", *v);
    if (const auto* v = consume("model.embed_dim"))
        config.model.embed_dim = parse_int("model.embed_dim", *v);
    if (const auto* v = consume("model.num_heads"))
        config.model.num_heads = parse_int("model.num_heads", *v);
    if (const auto* v = consume("model.lora_rank"))
        config.model.lora_rank = parse_int("model.lora_rank", *v);
    if (const auto* v = consume("model.lora_alpha"))
        config.model.lora_alpha = parse_number("model.lora_alpha", *v);
    if (const auto* v = consume("model.lora_dropout"))
        config.model.lora_dropout = parse_number("model.lora_dropout", *v);
    if (const auto* v = consume("train.learning_rate"))
        config.train.learning_rate = parse_number("train.learning_rate", *v);
    if (const auto* v = consume("train.warmup_steps"))
        config.train.warmup_steps = parse_int("train.warmup_steps", *v);
    if (const auto* v = consume("train.epochs")) config.train.epochs = parse_int("train.epochs", *v);
    if (const auto* v = consume("train.weight_decay"))
        config.train.weight_decay = parse_number("train.weight_decay", *v);
    if (const auto* v = consume("train.log_every"))
        config.train.log_every = parse_int("train.log_every", *v);
    if (const auto* v = consume("strategy.lisa_count")) {
        config.lisa_count = parse_int("strategy.lisa_count", *v);
    } else {
        config.lisa_count = std::min(config.lisa_count, config.model.num_layers);
    }
    if (const auto* v = consume("strategy.ist_count")) {
        config.ist_count = parse_int("strategy.ist_count", *v);
    } else {
        config.ist_count = std::min(config.ist_count, config.model.num_layers);
    }
    if (const auto* v = consume("decode.sample")) config.decode.sample = parse_bool("decode.sample", *v);
    if (const auto* v = consume("decode.top_p")) config.decode.top_p = parse_number("decode.top_p", *v);
    if (const auto* v = consume("decode.top_k")) config.decode.top_k = parse_int("decode.top_k", *v);
    if (const auto* v = consume("decode.temperature"))
        config.decode.temperature = parse_number("decode.temperature", *v);

    // Knobs whose defaults follow the revision level resolve last, once the
    // level and taxonomy are known.
    if (const auto* v = consume("model.max_seq_len")) {
        config.model.max_seq_len = parse_int("model.max_seq_len", *v);
    } else {
        config.model.max_seq_len = config.level == "document" ? 512 : 160;
    }
    if (const auto* v = consume("train.batch_size")) {
        config.train.batch_size = parse_int("train.batch_size", *v);
    } else if (config.taxonomy == "argrevision") {
        config.train.batch_size = 2;
    } else {
        config.train.batch_size = config.level == "document" ? 4 : 16;
    }
    if (const auto* v = consume("decode.max_new_tokens")) {
        config.decode.max_new_tokens = parse_int("decode.max_new_tokens", *v);
    } else if (config.taxonomy == "argrevision") {
        config.decode.max_new_tokens = 768;
    } else {
        config.decode.max_new_tokens = config.level == "document" ? 512 : 128;
    }

    if (!pairs.empty())
        throw std::invalid_argument("unknown config key '" + pairs.begin()->first + "'");

    config.train.seed = config.seed;
    config.validate();
    return config;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_experiment_config(buffer.str());
}

std::string experiment_config_text(const ExperimentConfig& config) {
    std::string out;
    auto put = [&out](const std::string& key, const std::string& value) {
        out += key;
        out += " = ";
        out += value;
        out += '\n';
    };
    put("seed", std::to_string(config.seed));
    put("out_dir", config.out_dir);
    put("corpus_dir", config.corpus_dir);
    put("level", config.level);
    put("taxonomy", config.taxonomy);
    put("strategy", config.strategy);
    put("synth.train_size", std::to_string(config.synth_train_size));
    put("synth.val_size", std::to_string(config.synth_val_size));
    put("synth.test_size", std::to_string(config.synth_test_size));
    put("model.num_layers", std::to_string(config.model.num_layers));
    put("model.embed_dim", std::to_string(config.model.embed_dim));
    put("model.num_heads", std::to_string(config.model.num_heads));
    put("model.max_seq_len", std::to_string(config.model.max_seq_len));
    put("model.lora_rank", std::to_string(config.model.lora_rank));
    put("model.lora_alpha", format_double(config.model.lora_alpha));
    put("model.lora_dropout", format_double(config.model.lora_dropout));
    put("train.learning_rate", format_double(config.train.learning_rate));
    put("train.warmup_steps", std::to_string(config.train.warmup_steps));
    put("train.epochs", std::to_string(config.train.epochs));
    put("train.batch_size", std::to_string(config.train.batch_size));
    put("train.weight_decay", format_double(config.train.weight_decay));
    put("train.log_every", std::to_string(config.train.log_every));
    put("strategy.lisa_count", std::to_string(config.lisa_count));
    put("strategy.ist_count", std::to_string(config.ist_count));
    put("decode.max_new_tokens", std::to_string(config.decode.max_new_tokens));
    put("decode.sample", config.decode.sample ? "true" : "false");
    put("decode.top_p", format_double(config.decode.top_p));
    put("decode.top_k", std::to_string(config.decode.top_k));
    put("decode.temperature", format_double(config.decode.temperature));
    return out;
}

ExperimentData load_experiment_data(const ExperimentConfig& config) {
    config.validate();
    ExperimentData data;
    data.taxonomy = taxonomy_for(config);
    const std::filesystem::path corpus(config.corpus_dir);
    data.train = load_jsonl((corpus / "train.jsonl").string(), data.taxonomy);
    data.test = load_jsonl((corpus / "test.jsonl").string(), data.taxonomy);
    if (data.train.empty())
        throw std::runtime_error("corpus split has no examples: " +
                                 (corpus / "train.jsonl").string());
    if (data.test.empty())
        throw std::runtime_error("corpus split has no examples: " +
                                 (corpus / "test.jsonl").string());

    data.vocab = build_vocab(data.train, data.taxonomy);
    data.model = config.model;
    data.model.vocab_size = data.vocab.size();
    data.model.num_intentions = data.taxonomy.num_labels();
    data.model.multi_label = config.level == "document";
    data.model.pad_id = Vocab::pad_id;
    data.model.validate();

    data.pre_train.reserve(data.train.size());
    data.gen_train.reserve(data.train.size());
    for (const RevisionExample& example : data.train) {
        data.pre_train.push_back(build_prediction_prompt(example, data.taxonomy, data.vocab));
        data.gen_train.push_back(build_generation_prompt(example, data.taxonomy, data.vocab));
    }
    data.pre_test.reserve(data.test.size());
    for (const RevisionExample& example : data.test) {
        data.pre_test.push_back(build_prediction_prompt(example, data.taxonomy, data.vocab));
    }

    for (std::size_t i = 0; i < data.gen_train.size(); ++i) {
        const std::size_t need = data.gen_train[i].inputs.size();
        if (static_cast<int>(need) > data.model.max_seq_len)
            throw std::runtime_error("generation example " + std::to_string(i) + " needs " +
                                     std::to_string(need) + " positions, max_seq_len is " +
                                     std::to_string(data.model.max_seq_len));
    }
    for (std::size_t i = 0; i < data.pre_train.size(); ++i) {
        const std::size_t need = data.pre_train[i].tokens.size();
        if (static_cast<int>(need) > data.model.max_seq_len)
            throw std::runtime_error("prediction example " + std::to_string(i) + " needs " +
                                     std::to_string(need) + " positions, max_seq_len is " +
                                     std::to_string(data.model.max_seq_len));
    }
    return data;
}

std::string hypotheses_jsonl(const std::vector<HypothesisRecord>& records) {
    std::string out;
    for (const HypothesisRecord& record : records) {
        nlohmann::json line;
        line["index"] = record.index;
        line["source"] = record.source;
        line["hypothesis"] = record.hypothesis;
        line["reference"] = record.reference;
        line["intentions"] = record.intentions;
        out += line.dump();
        out += '\n';
    }
    return out;
}

std::vector<HypothesisRecord> parse_hypotheses_jsonl(const std::string& text,
                                                     const std::string& origin) {
    std::vector<HypothesisRecord> records;
    std::istringstream lines(text);
    std::string line;
    int line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = origin + ":" + std::to_string(line_no);
        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument(where + ": malformed json line: " + e.what());
        }
        if (!parsed.is_object()) throw std::invalid_argument(where + ": expected a json object");
        for (const char* field : {"index", "source", "hypothesis", "reference", "intentions"}) {
            if (!parsed.contains(field))
                throw std::invalid_argument(where + ": missing field '" + field + "'");
        }
        if (!parsed["index"].is_number_integer() || !parsed["source"].is_string() ||
            !parsed["hypothesis"].is_string() || !parsed["reference"].is_string() ||
            !parsed["intentions"].is_array())
            throw std::invalid_argument(where + ": field has the wrong type");
        HypothesisRecord record;
        record.index = parsed["index"].get<int>();
        record.source = parsed["source"].get<std::string>();
        record.hypothesis = parsed["hypothesis"].get<std::string>();
        record.reference = parsed["reference"].get<std::string>();
        for (const auto& intent : parsed["intentions"]) {
            if (!intent.is_string())
                throw std::invalid_argument(where + ": intentions must be strings");
            record.intentions.push_back(intent.get<std::string>());
        }
        records.push_back(std::move(record));
    }
    return records;
}

std::vector<EvalTriple> to_eval_triples(const std::vector<HypothesisRecord>& records) {
    std::vector<EvalTriple> triples;
    triples.reserve(records.size());
    for (const HypothesisRecord& record : records) {
        EvalTriple triple;
        triple.source = record.source;
        triple.hypothesis = record.hypothesis;
        triple.references = {record.reference};
        triple.intention = record.intentions.empty() ? "" : record.intentions.front();
        triples.push_back(std::move(triple));
    }
    return triples;
}

std::vector<HypothesisRecord> generate_records(const ExperimentConfig& config,
                                               DualHeadModel& model, const ExperimentData& data) {
    config.decode.validate();
    std::vector<HypothesisRecord> records;
    records.reserve(data.test.size());
    for (std::size_t i = 0; i < data.test.size(); ++i) {
        const RevisionExample& example = data.test[i];
        const GenerationExample prompt = build_generation_prompt(example, data.taxonomy, data.vocab);
        DecodeConfig decode = config.decode;
        decode.eos_id = Vocab::eos_id;
        decode.seed = derive_seed(config.seed, "decode/" + std::to_string(i));
        const std::vector<int> tokens = generate(model, prompt.prompt_tokens, decode);
        HypothesisRecord record;
        record.index = static_cast<int>(i);
        record.source = example.original;
        record.hypothesis = data.vocab.decode(tokens);
        record.reference = example.revised;
        record.intentions = example.intentions;
        records.push_back(std::move(record));
    }
    return records;
}

std::vector<HypothesisRecord> copy_records(const ExperimentData& data) {
    std::vector<HypothesisRecord> records;
    records.reserve(data.test.size());
    for (std::size_t i = 0; i < data.test.size(); ++i) {
        const RevisionExample& example = data.test[i];
        HypothesisRecord record;
        record.index = static_cast<int>(i);
        record.source = example.original;
        record.hypothesis = example.original;
        record.reference = example.revised;
        record.intentions = example.intentions;
        records.push_back(std::move(record));
    }
    return records;
}

std::string comparison_csv(const ComparisonTable& table) {
    std::string out = "strategy,sari,gleu,update_r,average,trainable_params\n";
    for (const ComparisonRow& row : table.rows) {
        out += row.strategy;
        out += ',';
        out += format_double(row.sari);
        out += ',';
        out += format_double(row.gleu);
        out += ',';
        out += format_double(row.update_r);
        out += ',';
        out += format_double(row.average);
        out += ',';
        out += std::to_string(row.trainable_params);
        out += '\n';
    }
    return out;
}

std::string timings_csv(const ComparisonTable& table) {
    std::string out = "strategy,wall_seconds\n";
    for (const ComparisonRow& row : table.rows) {
        out += row.strategy;
        out += ',';
        out += format_double(row.wall_seconds);
        out += '\n';
    }
    return out;
}

std::string alignment_csv(const ComparisonTable& table) {
    std::string out = "layer,s_pre,s_gen,alignment_ratio\n";
    const std::string ratio = format_double(table.alignment);
    for (int layer = 1; layer <= table.num_layers; ++layer) {
        out += std::to_string(layer);
        out += ',';
        out += table.s_pre.is_important(layer) ? '1' : '0';
        out += ',';
        out += table.s_gen.is_important(layer) ? '1' : '0';
        out += ',';
        out += ratio;
        out += '\n';
    }
    return out;
}

std::string metrics_json(const MetricReport& report, std::size_t num_examples) {
    nlohmann::json out;
    out["sari"] = report.sari;
    out["gleu"] = report.gleu;
    out["update_r"] = report.update_r;
    out["average"] = report.average;
    out["examples"] = num_examples;
    return out.dump(2) + "\n";
}

std::string per_intention_csv(const std::vector<HypothesisRecord>& records,
                              const IntentionTaxonomy& taxonomy) {
    std::string out = "intention,examples,sari,gleu,update_r,average\n";
    auto append_row = [&out](const std::string& label, const std::vector<EvalTriple>& triples) {
        const MetricReport report = evaluate_corpus(triples);
        out += label;
        out += ',';
        out += std::to_string(triples.size());
        out += ',';
        out += format_double(report.sari);
        out += ',';
        out += format_double(report.gleu);
        out += ',';
        out += format_double(report.update_r);
        out += ',';
        out += format_double(report.average);
        out += '\n';
    };
    for (const std::string& label : taxonomy.labels) {
        std::vector<HypothesisRecord> matching;
        for (const HypothesisRecord& record : records) {
            if (std::find(record.intentions.begin(), record.intentions.end(), label) !=
                record.intentions.end())
                matching.push_back(record);
        }
        if (matching.empty()) continue;
        append_row(label, to_eval_triples(matching));
    }
    append_row("all", to_eval_triples(records));
    return out;
}

std::string heatmap_csv(const StageReport& report) {
    if (report.stage1_scores.empty() || report.stage2_scores.empty())
        throw std::invalid_argument("heatmap needs recorded scores from both stages");
    const std::size_t num_layers = report.stage1_scores.front().scores.size();

    auto normalized_means = [num_layers](const std::vector<LayerScores>& steps) {
        std::vector<double> means(num_layers, 0.0);
        for (const LayerScores& step : steps) {
            for (std::size_t i = 0; i < num_layers; ++i) means[i] += step.scores[i];
        }
        for (double& m : means) m /= static_cast<double>(steps.size());
        const double lo = *std::min_element(means.begin(), means.end());
        const double hi = *std::max_element(means.begin(), means.end());
        if (hi > lo) {
            for (double& m : means) m = (m - lo) / (hi - lo);
        } else {
            std::fill(means.begin(), means.end(), 0.0);
        }
        return means;
    };

    std::string out = "task";
    for (std::size_t i = 1; i <= num_layers; ++i) out += ",layer_" + std::to_string(i);
    out += '\n';
    auto append_row = [&out](const std::string& task, const std::vector<double>& values) {
        out += task;
        for (double v : values) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    };
    append_row("pre", normalized_means(report.stage1_scores));
    append_row("gen", normalized_means(report.stage2_scores));
    return out;
}

void cmd_synth(const ExperimentConfig& config) {
    config.validate();
    SyntheticConfig synth;
    synth.seed = config.seed;
    synth.train_size = config.synth_train_size;
    synth.val_size = config.synth_val_size;
    synth.test_size = config.synth_test_size;
    synth.level = config.level;
    generate_synthetic_corpus(synth, config.corpus_dir);
}

TrainResult cmd_probe(const ExperimentConfig& config, const TrainHooks* hooks) {
    const ExperimentData data = load_experiment_data(config);
    TrainResult result = run_probe(data.model, data.pre_train, resolved_train(config), hooks);
    const StageReport& report = result.report;

    std::string splits = "step,layer,member\n";
    for (std::size_t step = 0; step < report.stage1_splits.size(); ++step) {
        const LayerSplit& split = report.stage1_splits[step];
        for (int layer = 1; layer <= split.num_layers(); ++layer) {
            splits += std::to_string(step);
            splits += ',';
            splits += std::to_string(layer);
            splits += ',';
            splits += split.is_important(layer) ? '1' : '0';
            splits += '\n';
        }
    }

    write_text_file(out_path(config, "probe_scores.csv"), scores_csv(report.stage1_scores));
    write_text_file(out_path(config, "probe_splits.csv"), splits);
    write_text_file(out_path(config, "frequency.csv"), frequency_csv(report.frequency));
    write_config_record(config);
    return result;
}

TrainResult cmd_train(const ExperimentConfig& config, const TrainHooks* hooks) {
    const ExperimentData data = load_experiment_data(config);
    const Strategy variant = strategy_from_name(config.strategy);
    if (variant == Strategy::Copy)
        throw std::invalid_argument("copy baseline involves no training");

    // Accuracy is a stage-1 quantity; the generation stage reinitializes and
    // retrains the shared adapters, so it must be measured before stage 2.
    double stage1_accuracy = 0.0;
    TrainHooks merged = hooks != nullptr ? *hooks : TrainHooks{};
    const auto inner_end = merged.on_stage1_end;
    merged.on_stage1_end = [&](DualHeadModel& model) {
        if (inner_end) inner_end(model);
        stage1_accuracy = prediction_accuracy(model, data.pre_test);
    };

    TrainResult result = variant == Strategy::IntentionTuning
                             ? run_intention_tuning(data.model, data.pre_train, data.gen_train,
                                                    resolved_train(config), &merged)
                             : run_baseline(config.selection(), data.model, data.gen_train,
                                            resolved_train(config), hooks);

    nlohmann::json summary;
    summary["strategy"] = config.strategy;
    summary["seed"] = config.seed;
    summary["final_layers"] = result.report.final_split.important;
    summary["stage1_trainable_params"] = result.report.stage1_trainable_params;
    summary["stage2_trainable_params"] = result.report.stage2_trainable_params;
    if (variant == Strategy::IntentionTuning) {
        summary["alignment"] = result.report.alignment;
        summary["transfer_layers"] = result.report.transfer_layers;
        summary["prediction_accuracy"] = stage1_accuracy;
    }

    write_text_file(out_path(config, "report.json"), report_json(result.report));
    write_text_file(out_path(config, "losses.csv"), losses_csv(result.report));
    write_text_file(out_path(config, "summary.json"), summary.dump(2) + "\n");
    save_snapshot(result.model->export_adapters(), out_path(config, "adapters.bin").string());
    write_config_record(config);
    return result;
}

std::vector<HypothesisRecord> cmd_generate(const ExperimentConfig& config, DualHeadModel& model,
                                           const ExperimentData& data) {
    std::vector<HypothesisRecord> records = generate_records(config, model, data);
    write_text_file(out_path(config, "hypotheses.jsonl"), hypotheses_jsonl(records));
    write_config_record(config);
    return records;
}

std::vector<HypothesisRecord> cmd_generate(const ExperimentConfig& config,
                                           const TrainHooks* hooks) {
    const ExperimentData data = load_experiment_data(config);
    if (strategy_from_name(config.strategy) == Strategy::Copy) {
        const std::vector<HypothesisRecord> records = copy_records(data);
        write_text_file(out_path(config, "hypotheses.jsonl"), hypotheses_jsonl(records));
        write_config_record(config);
        return records;
    }
    const TrainResult result = cmd_train(config, hooks);
    return cmd_generate(config, *result.model, data);
}

MetricReport cmd_evaluate(const ExperimentConfig& config, const std::string& hypotheses_path) {
    config.validate();
    const std::vector<HypothesisRecord> records =
        parse_hypotheses_jsonl(read_text_file(hypotheses_path), hypotheses_path);
    if (records.empty())
        throw std::invalid_argument("hypotheses file has no records: " + hypotheses_path);
    const MetricReport report = evaluate_corpus(to_eval_triples(records));
    write_text_file(out_path(config, "metrics.json"), metrics_json(report, records.size()));
    write_text_file(out_path(config, "per_intention.csv"),
                    per_intention_csv(records, taxonomy_for(config)));
    write_config_record(config);
    return report;
}

ComparisonTable cmd_compare(const ExperimentConfig& config) {
    const ExperimentData data = load_experiment_data(config);
    const TrainConfig train = resolved_train(config);

    ComparisonTable table;
    table.num_layers = data.model.num_layers;
    const std::vector<std::string> order = {"copy", "full",  "lisa",
                                            "ist",  "ir",    "intention_tuning"};
    for (const std::string& name : order) {
        const auto start = std::chrono::steady_clock::now();
        std::vector<HypothesisRecord> records;
        long long trainable = 0;
        if (name == "copy") {
            records = copy_records(data);
        } else {
            ExperimentConfig run = config;
            run.strategy = name;
            TrainResult result =
                name == "intention_tuning"
                    ? run_intention_tuning(data.model, data.pre_train, data.gen_train, train)
                    : run_baseline(run.selection(), data.model, data.gen_train, train);
            trainable = result.report.stage2_trainable_params;
            if (name == "intention_tuning") {
                table.s_pre = result.report.stage1_splits.back();
                table.s_gen = result.report.final_split;
                table.alignment = result.report.alignment;
            }
            records = generate_records(config, *result.model, data);
        }
        write_text_file(out_path(config, "hypotheses_" + name + ".jsonl"),
                        hypotheses_jsonl(records));
        const MetricReport report = evaluate_corpus(to_eval_triples(records));
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;

        ComparisonRow row;
        row.strategy = name;
        row.sari = report.sari;
        row.gleu = report.gleu;
        row.update_r = report.update_r;
        row.average = report.average;
        row.trainable_params = trainable;
        row.wall_seconds = elapsed.count();
        table.rows.push_back(std::move(row));
    }

    write_text_file(out_path(config, "comparison.csv"), comparison_csv(table));
    write_text_file(out_path(config, "timings.csv"), timings_csv(table));
    write_text_file(out_path(config, "alignment.csv"), alignment_csv(table));
    write_config_record(config);
    return table;
}

StageReport cmd_heatmap(const ExperimentConfig& config) {
    const ExperimentData data = load_experiment_data(config);
    const TrainResult result =
        run_intention_tuning(data.model, data.pre_train, data.gen_train, resolved_train(config));
    write_text_file(out_path(config, "heatmap.csv"), heatmap_csv(result.report));
    write_config_record(config);
    return result.report;
}

}  // namespace revtune
