#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "revtune/layerselect.hpp"
#include "revtune/rng.hpp"
#include "revtune/tensor.hpp"

namespace revtune {

enum class AdapterTarget : std::uint8_t { Q = 0, K = 1, V = 2, Up = 3, Down = 4 };

inline constexpr std::array<AdapterTarget, 5> kAdapterTargets = {
    AdapterTarget::Q, AdapterTarget::K, AdapterTarget::V, AdapterTarget::Up, AdapterTarget::Down};

std::string adapter_target_name(AdapterTarget target);

struct ModelConfig {
    int num_layers = 4;
    int embed_dim = 64;
    int num_heads = 4;
    int vocab_size = 512;
    int max_seq_len = 160;
    int num_intentions = 5;
    bool multi_label = false;
    int lora_rank = 32;
    double lora_alpha = 64.0;
    double lora_dropout = 0.05;
    int pad_id = 0;

    int ff_dim() const { return 4 * embed_dim; }
    int head_dim() const { return embed_dim / num_heads; }
    void validate() const;
};

// Low-rank update on one frozen projection. The contribution
// (alpha / rank) * B * A * x is always part of the forward pass; the active
// flag only controls whether A and B accumulate gradients.
struct LoraAdapter {
    AdapterTarget target = AdapterTarget::Q;
    int rank = 0;
    double alpha = 0.0;
    double dropout_p = 0.0;
    TensorPtr A;  // [rank x d_in]
    TensorPtr B;  // [d_out x rank]
    bool active = true;
};

// Pre-norm decoder block. Base projections stay frozen; one adapter per
// target in {Q, K, V, Up, Down}.
struct TransformerLayer {
    int index = 0;  // 1-based, matching the selection module
    TensorPtr wq, wk, wv, wo;
    TensorPtr up, down;
    TensorPtr ln1_gain, ln1_bias;
    TensorPtr ln2_gain, ln2_bias;
    std::array<LoraAdapter, kAdapterTargets.size()> adapters;
};

// Flat copy of every adapter matrix, indexed [layer][target].
struct AdapterSnapshot {
    std::uint32_t version = 1;
    std::uint32_t num_layers = 0;
    std::uint32_t rank = 0;
    std::uint32_t embed_dim = 0;
    std::uint32_t ff_dim = 0;
    std::vector<std::uint8_t> targets;
    std::vector<std::vector<Matrix>> a;
    std::vector<std::vector<Matrix>> b;
};

// Binary container plus a JSON sidecar at path + ".json".
void save_snapshot(const AdapterSnapshot& snap, const std::string& path);
AdapterSnapshot load_snapshot(const std::string& path);

enum class TaskHead { Prediction, Generation };

// Decoder-only transformer with learned positional embeddings, a generation
// head over the vocabulary, and an intention-prediction head that pools the
// hidden state of the last non-padding token. The two heads share the
// backbone and its adapters.
class DualHeadModel {
public:
    DualHeadModel(const ModelConfig& config, Rng& rng);

    const ModelConfig& config() const { return config_; }
    std::vector<TransformerLayer>& layers() { return layers_; }
    const std::vector<TransformerLayer>& layers() const { return layers_; }
    const TensorPtr& token_embedding() const { return tok_embed_; }
    const TensorPtr& position_embedding() const { return pos_embed_; }
    const TensorPtr& prediction_weight() const { return pred_w_; }
    const TensorPtr& prediction_bias() const { return pred_b_; }
    const TensorPtr& generation_weight() const { return gen_w_; }

    // Next-token logits, one row per input position. Pass a dropout rng only
    // on training forwards; inference runs the adapters without dropout.
    TensorPtr forward_generate(Tape& tape, const std::vector<int>& tokens,
                               Rng* dropout_rng = nullptr);
    // Intention logits pooled from the last non-padding position.
    TensorPtr forward_predict(Tape& tape, const std::vector<int>& tokens,
                              Rng* dropout_rng = nullptr);

    void set_layer_mask(const LayerSplit& split);
    std::vector<int> active_layers() const;

    AdapterSnapshot export_adapters() const;
    // Copies A and B from the snapshot for the 1-based layers in the filter;
    // the other layers keep their current values.
    void import_adapters(const AdapterSnapshot& snap, const std::vector<int>& layer_filter);
    // Redraws A ~ Gaussian(0, 1/rank), clears B, and re-activates every layer.
    void reinit_adapters(Rng& rng);

    long long count_trainable_params() const;
    // Active adapter matrices followed by the head for the given task, in a
    // fixed order so optimizer state lines up across runs.
    std::vector<TensorPtr> trainable_params(TaskHead head) const;

private:
    TensorPtr backbone(Tape& tape, const std::vector<int>& tokens, Rng* dropout_rng);
    void check_tokens(const std::vector<int>& tokens) const;

    ModelConfig config_;
    TensorPtr tok_embed_;
    TensorPtr pos_embed_;
    std::vector<TransformerLayer> layers_;
    TensorPtr final_gain_, final_bias_;
    TensorPtr pred_w_, pred_b_;
    TensorPtr gen_w_;
};

}  // namespace revtune
