#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "revtune/corpus.hpp"
#include "revtune/layerselect.hpp"
#include "revtune/metrics.hpp"
#include "revtune/model.hpp"
#include "revtune/training.hpp"

namespace revtune {

// Everything an experiment needs, parsed from a key = value config file.
// Defaults that depend on the revision level (sequence length, batch size,
// generation budget) resolve for the keys left unset.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    std::string corpus_dir = "corpus";
    std::string level = "sentence";         // "sentence" or "document"
    std::string taxonomy = "iterater";      // "iterater" or "argrevision"
    std::string strategy = "intention_tuning";
    int synth_train_size = 600;
    int synth_val_size = 60;
    int synth_test_size = 60;
    int lisa_count = 4;
    int ist_count = 8;
    ModelConfig model;
    TrainConfig train;
    DecodeConfig decode;

    void validate() const;
    SelectionStrategy selection() const;
};

// Parses "key = value" lines; '#' starts a comment, blank lines are skipped,
// unknown keys are rejected. The returned config is fully resolved and
// validated.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

// Canonical serialization: every field pinned to an explicit key, so
// parse_experiment_config(experiment_config_text(c)) reproduces c.
std::string experiment_config_text(const ExperimentConfig& config);

// Corpus splits plus the vocabulary-resolved model configuration.
struct ExperimentData {
    IntentionTaxonomy taxonomy;
    Vocab vocab;
    std::vector<RevisionExample> train;
    std::vector<RevisionExample> test;
    std::vector<PredictionExample> pre_train;
    std::vector<PredictionExample> pre_test;
    std::vector<GenerationExample> gen_train;
    ModelConfig model;
};

ExperimentData load_experiment_data(const ExperimentConfig& config);

struct HypothesisRecord {
    int index = 0;
    std::string source;
    std::string hypothesis;
    std::string reference;
    std::vector<std::string> intentions;
};

std::string hypotheses_jsonl(const std::vector<HypothesisRecord>& records);
std::vector<HypothesisRecord> parse_hypotheses_jsonl(const std::string& text,
                                                     const std::string& origin);
std::vector<EvalTriple> to_eval_triples(const std::vector<HypothesisRecord>& records);

// Decodes one hypothesis per test example without touching the filesystem.
std::vector<HypothesisRecord> generate_records(const ExperimentConfig& config,
                                               DualHeadModel& model, const ExperimentData& data);

// Copy baseline: the hypothesis is the source text, no model involved.
std::vector<HypothesisRecord> copy_records(const ExperimentData& data);

struct ComparisonRow {
    std::string strategy;
    double sari = 0.0;
    double gleu = 0.0;
    double update_r = 0.0;
    double average = 0.0;
    long long trainable_params = 0;
    double wall_seconds = 0.0;
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;  // copy, full, lisa, ist, ir, intention_tuning
    LayerSplit s_pre;
    LayerSplit s_gen;
    double alignment = 0.0;
    int num_layers = 0;
};

// Deterministic artifacts keep wall time out; it lives in timings_csv so the
// rest of the table is byte-stable across reruns.
std::string comparison_csv(const ComparisonTable& table);
std::string timings_csv(const ComparisonTable& table);
std::string alignment_csv(const ComparisonTable& table);
std::string metrics_json(const MetricReport& report, std::size_t num_examples);
std::string per_intention_csv(const std::vector<HypothesisRecord>& records,
                              const IntentionTaxonomy& taxonomy);
std::string heatmap_csv(const StageReport& report);

// Commands write their artifacts under config.out_dir (the synthesizer writes
// under config.corpus_dir) and also return the in-memory result.
void cmd_synth(const ExperimentConfig& config);
TrainResult cmd_probe(const ExperimentConfig& config, const TrainHooks* hooks = nullptr);
TrainResult cmd_train(const ExperimentConfig& config, const TrainHooks* hooks = nullptr);
std::vector<HypothesisRecord> cmd_generate(const ExperimentConfig& config, DualHeadModel& model,
                                           const ExperimentData& data);
// Config-only flow: trains under config.strategy first (copy skips training)
// and then decodes the test split.
std::vector<HypothesisRecord> cmd_generate(const ExperimentConfig& config,
                                           const TrainHooks* hooks = nullptr);
MetricReport cmd_evaluate(const ExperimentConfig& config, const std::string& hypotheses_path);
ComparisonTable cmd_compare(const ExperimentConfig& config);
StageReport cmd_heatmap(const ExperimentConfig& config);

}  // namespace revtune
