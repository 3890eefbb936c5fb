#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "revtune/corpus.hpp"
#include "revtune/layerselect.hpp"
#include "revtune/model.hpp"
#include "revtune/rng.hpp"
#include "revtune/tensor.hpp"

namespace revtune {

struct TrainConfig {
    double learning_rate = 2e-4;
    int warmup_steps = 100;
    int epochs = 2;
    int batch_size = 16;
    double weight_decay = 0.0;
    int log_every = 20;
    std::uint64_t seed = 0;

    void validate() const;
};

// Adam with decoupled weight decay over an explicit parameter list. Parameters
// whose requires_grad flag is off, or whose gradient buffer was never
// allocated, are skipped; their moment state does not advance.
class AdamW {
public:
    AdamW(std::vector<TensorPtr> params, const TrainConfig& config);

    void step();
    void zero_grad();
    int steps_taken() const { return step_; }
    // Warmup-then-constant rate the next step() call will use.
    double next_lr() const;

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

private:
    struct Slot {
        Matrix m;
        Matrix v;
        int steps = 0;
    };
    std::vector<TensorPtr> params_;
    std::vector<Slot> slots_;
    TrainConfig config_;
    int step_ = 0;
};

TensorPtr loss_pre_single(Tape& tape, const TensorPtr& logits, int label);
TensorPtr loss_pre_multi(Tape& tape, const TensorPtr& logits, const std::vector<int>& labels);
TensorPtr loss_gen(Tape& tape, const TensorPtr& logits, const std::vector<int>& targets,
                   const std::vector<std::uint8_t>& loss_mask);

struct StageReport {
    std::vector<double> stage1_losses;
    std::vector<LayerScores> stage1_scores;
    std::vector<LayerSplit> stage1_splits;
    FrequencyTable frequency;
    LayerSplit final_split;
    std::vector<int> transfer_layers;
    double alignment = 0.0;
    long long stage1_trainable_params = 0;
    long long stage2_trainable_params = 0;
    std::vector<double> stage2_losses;
    std::vector<LayerScores> stage2_scores;
};

std::string report_json(const StageReport& report);
// Rows "stage,step,loss" with stage pre or gen and 1-based steps.
std::string losses_csv(const StageReport& report);

// Test seams for the training loops. split_override replaces split_layers in
// the prediction stage; the step callbacks observe each optimizer step; the
// stage callbacks observe the model between the two stages.
struct TrainHooks {
    std::function<LayerSplit(const LayerScores&)> split_override;
    std::function<void(int step, double loss)> on_stage1_step;
    std::function<void(int step, double loss)> on_stage2_step;
    std::function<void(DualHeadModel&)> on_stage1_end;
    std::function<void(DualHeadModel&)> on_stage2_start;
};

struct TrainResult {
    std::shared_ptr<DualHeadModel> model;
    StageReport report;
};

// Prediction stage alone: fills the stage-1 report fields plus the frequency
// table and finalized split, and skips the generation stage entirely.
TrainResult run_probe(const ModelConfig& model_config,
                      const std::vector<PredictionExample>& corpus_pre,
                      const TrainConfig& config, const TrainHooks* hooks = nullptr);

// Two-stage driver: per-step re-splitting on the intention-prediction task,
// then frequency finalization, adapter transfer, and fixed-mask training on
// the revision-generation task.
TrainResult run_intention_tuning(const ModelConfig& model_config,
                                 const std::vector<PredictionExample>& corpus_pre,
                                 const std::vector<GenerationExample>& corpus_gen,
                                 const TrainConfig& config, const TrainHooks* hooks = nullptr);

// Single-stage generation training under the strategy's mask policy. IR
// re-splits every step; LISA draws once from the strategy seed; IST probes
// gradient norms on the first batch before training; Full keeps all layers.
TrainResult run_baseline(const SelectionStrategy& strategy, const ModelConfig& model_config,
                         const std::vector<GenerationExample>& corpus_gen,
                         const TrainConfig& config, const TrainHooks* hooks = nullptr);

struct DecodeConfig {
    int max_new_tokens = 128;
    bool sample = true;
    double top_p = 0.75;
    int top_k = 40;
    double temperature = 0.2;
    int eos_id = Vocab::eos_id;
    std::uint64_t seed = 0;

    void validate() const;
};

// Smallest prefix of the sorted distribution whose mass reaches top_p, after
// the top_k cut. Returns token ids ordered by (probability desc, id asc).
std::vector<int> decode_candidates(const std::vector<double>& probs, int top_k, double top_p);
// One draw from the truncated, renormalized distribution; greedy argmax when
// sampling is off or the temperature is non-positive.
int pick_token(const std::vector<double>& logits, const DecodeConfig& config, Rng& rng);

// Autoregressive continuation of the prompt; returns only the new tokens,
// without the end-of-sequence token.
std::vector<int> generate(DualHeadModel& model, const std::vector<int>& prompt,
                          const DecodeConfig& config);

// Argmax accuracy in single-label mode; exact-match of thresholded sigmoid
// outputs in multi-label mode.
double prediction_accuracy(DualHeadModel& model, const std::vector<PredictionExample>& examples);

}  // namespace revtune
