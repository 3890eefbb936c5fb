#include "revtune/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace revtune {

namespace {

// d_in and d_out of the base projection a target adapts.
void target_dims(AdapterTarget target, int embed_dim, int ff_dim, int& d_in, int& d_out) {
    switch (target) {
        case AdapterTarget::Q:
        case AdapterTarget::K:
        case AdapterTarget::V:
            d_in = embed_dim;
            d_out = embed_dim;
            return;
        case AdapterTarget::Up:
            d_in = embed_dim;
            d_out = ff_dim;
            return;
        case AdapterTarget::Down:
            d_in = ff_dim;
            d_out = embed_dim;
            return;
    }
    throw std::invalid_argument("unknown adapter target");
}

constexpr double kBaseStddev = 0.02;
constexpr double kPredHeadStddev = 0.01;
constexpr double kMaskValue = -1e30;

void init_adapter(LoraAdapter& adapter, AdapterTarget target, const ModelConfig& config,
                  Rng& rng) {
    int d_in = 0;
    int d_out = 0;
    target_dims(target, config.embed_dim, config.ff_dim(), d_in, d_out);
    adapter.target = target;
    adapter.rank = config.lora_rank;
    adapter.alpha = config.lora_alpha;
    adapter.dropout_p = config.lora_dropout;
    adapter.A = Tensor::randn(config.lora_rank, d_in, std::sqrt(1.0 / config.lora_rank), rng,
                              true);
    adapter.B = Tensor::zeros(d_out, config.lora_rank, true);
    adapter.active = true;
}

// Frozen base projection plus the always-on low-rank contribution.
TensorPtr project(Tape& tape, const TensorPtr& x, const TensorPtr& w, const LoraAdapter& adapter,
                  Rng* dropout_rng) {
    TensorPtr out = linear(tape, x, w);
    TensorPtr lora_in = x;
    if (dropout_rng != nullptr && adapter.dropout_p > 0.0) {
        lora_in = dropout(tape, x, adapter.dropout_p, *dropout_rng);
    }
    TensorPtr low = linear(tape, lora_in, adapter.A);
    TensorPtr contrib = scale(tape, linear(tape, low, adapter.B),
                              adapter.alpha / static_cast<double>(adapter.rank));
    return add(tape, out, contrib);
}

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char bytes[4];
    for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

void write_f64(std::ostream& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (!in) throw std::runtime_error("snapshot file truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
    return v;
}

double read_f64(std::istream& in) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw std::runtime_error("snapshot file truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

void write_matrix(std::ostream& out, const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) write_f64(out, m(r, c));
}

Matrix read_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = read_f64(in);
    return m;
}

constexpr char kSnapshotMagic[8] = {'R', 'T', 'A', 'D', 'S', 'N', 'A', 'P'};

}  // namespace

std::string adapter_target_name(AdapterTarget target) {
    switch (target) {
        case AdapterTarget::Q: return "q";
        case AdapterTarget::K: return "k";
        case AdapterTarget::V: return "v";
        case AdapterTarget::Up: return "up";
        case AdapterTarget::Down: return "down";
    }
    throw std::invalid_argument("unknown adapter target");
}

void ModelConfig::validate() const {
    if (num_layers < 2) throw std::invalid_argument("num_layers must be at least 2");
    if (embed_dim <= 0) throw std::invalid_argument("embed_dim must be positive");
    if (num_heads <= 0) throw std::invalid_argument("num_heads must be positive");
    if (embed_dim % num_heads != 0)
        throw std::invalid_argument("embed_dim must be divisible by num_heads");
    if (vocab_size <= 0) throw std::invalid_argument("vocab_size must be positive");
    if (max_seq_len <= 0) throw std::invalid_argument("max_seq_len must be positive");
    if (num_intentions <= 0) throw std::invalid_argument("num_intentions must be positive");
    if (lora_rank <= 0) throw std::invalid_argument("lora_rank must be positive");
    if (lora_alpha <= 0.0) throw std::invalid_argument("lora_alpha must be positive");
    if (lora_dropout < 0.0 || lora_dropout >= 1.0)
        throw std::invalid_argument("lora_dropout must lie in [0, 1)");
    if (pad_id < 0 || pad_id >= vocab_size)
        throw std::invalid_argument("pad_id must be a valid token id");
}

DualHeadModel::DualHeadModel(const ModelConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const int d = config_.embed_dim;
    const int ff = config_.ff_dim();

    tok_embed_ = Tensor::randn(config_.vocab_size, d, kBaseStddev, rng, false);
    pos_embed_ = Tensor::randn(config_.max_seq_len, d, kBaseStddev, rng, false);

    layers_.resize(static_cast<std::size_t>(config_.num_layers));
    for (int i = 0; i < config_.num_layers; ++i) {
        TransformerLayer& layer = layers_[static_cast<std::size_t>(i)];
        layer.index = i + 1;
        layer.wq = Tensor::randn(d, d, kBaseStddev, rng, false);
        layer.wk = Tensor::randn(d, d, kBaseStddev, rng, false);
        layer.wv = Tensor::randn(d, d, kBaseStddev, rng, false);
        layer.wo = Tensor::randn(d, d, kBaseStddev, rng, false);
        layer.up = Tensor::randn(ff, d, kBaseStddev, rng, false);
        layer.down = Tensor::randn(d, ff, kBaseStddev, rng, false);
        layer.ln1_gain = Tensor::create(Matrix::Ones(1, d), false);
        layer.ln1_bias = Tensor::zeros(1, d, false);
        layer.ln2_gain = Tensor::create(Matrix::Ones(1, d), false);
        layer.ln2_bias = Tensor::zeros(1, d, false);
        for (std::size_t t = 0; t < kAdapterTargets.size(); ++t) {
            init_adapter(layer.adapters[t], kAdapterTargets[t], config_, rng);
        }
    }

    final_gain_ = Tensor::create(Matrix::Ones(1, d), false);
    final_bias_ = Tensor::zeros(1, d, false);
    pred_w_ = Tensor::randn(config_.num_intentions, d, kPredHeadStddev, rng, true);
    pred_b_ = Tensor::zeros(1, config_.num_intentions, true);
    gen_w_ = Tensor::randn(config_.vocab_size, d, kBaseStddev, rng, true);
}

void DualHeadModel::check_tokens(const std::vector<int>& tokens) const {
    if (tokens.size() > static_cast<std::size_t>(config_.max_seq_len))
        throw std::invalid_argument("sequence length " + std::to_string(tokens.size()) +
                                    " exceeds max_seq_len " +
                                    std::to_string(config_.max_seq_len));
    for (int id : tokens) {
        if (id < 0 || id >= config_.vocab_size)
            throw std::invalid_argument("token id " + std::to_string(id) +
                                        " out of range for vocabulary of size " +
                                        std::to_string(config_.vocab_size));
    }
}

TensorPtr DualHeadModel::backbone(Tape& tape, const std::vector<int>& tokens, Rng* dropout_rng) {
    const auto seq_len = static_cast<Eigen::Index>(tokens.size());
    std::vector<int> positions(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) positions[t] = static_cast<int>(t);

    TensorPtr h = add(tape, embedding_lookup(tape, tok_embed_, tokens),
                      embedding_lookup(tape, pos_embed_, positions));

    Matrix mask_values = Matrix::Zero(seq_len, seq_len);
    for (Eigen::Index r = 0; r < seq_len; ++r)
        for (Eigen::Index c = r + 1; c < seq_len; ++c) mask_values(r, c) = kMaskValue;
    TensorPtr causal_mask = Tensor::create(std::move(mask_values), false);

    const int head_dim = config_.head_dim();
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    for (TransformerLayer& layer : layers_) {
        TensorPtr a_in = layer_norm(tape, h, layer.ln1_gain, layer.ln1_bias);
        TensorPtr q = project(tape, a_in, layer.wq,
                              layer.adapters[static_cast<std::size_t>(AdapterTarget::Q)],
                              dropout_rng);
        TensorPtr k = project(tape, a_in, layer.wk,
                              layer.adapters[static_cast<std::size_t>(AdapterTarget::K)],
                              dropout_rng);
        TensorPtr v = project(tape, a_in, layer.wv,
                              layer.adapters[static_cast<std::size_t>(AdapterTarget::V)],
                              dropout_rng);

        std::vector<TensorPtr> head_outputs;
        head_outputs.reserve(static_cast<std::size_t>(config_.num_heads));
        for (int hd = 0; hd < config_.num_heads; ++hd) {
            const Eigen::Index start = static_cast<Eigen::Index>(hd) * head_dim;
            TensorPtr qh = slice_cols(tape, q, start, head_dim);
            TensorPtr kh = slice_cols(tape, k, start, head_dim);
            TensorPtr vh = slice_cols(tape, v, start, head_dim);
            TensorPtr scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), attn_scale);
            TensorPtr weights = softmax_rows(tape, add(tape, scores, causal_mask));
            head_outputs.push_back(matmul(tape, weights, vh));
        }
        TensorPtr ctx = concat_cols(tape, head_outputs);
        h = add(tape, h, linear(tape, ctx, layer.wo));

        TensorPtr f_in = layer_norm(tape, h, layer.ln2_gain, layer.ln2_bias);
        TensorPtr mid = gelu(
            tape, project(tape, f_in, layer.up,
                          layer.adapters[static_cast<std::size_t>(AdapterTarget::Up)],
                          dropout_rng));
        TensorPtr f_out = project(tape, mid, layer.down,
                                  layer.adapters[static_cast<std::size_t>(AdapterTarget::Down)],
                                  dropout_rng);
        h = add(tape, h, f_out);
    }

    return layer_norm(tape, h, final_gain_, final_bias_);
}

TensorPtr DualHeadModel::forward_generate(Tape& tape, const std::vector<int>& tokens,
                                          Rng* dropout_rng) {
    if (tokens.empty()) throw std::invalid_argument("forward_generate requires a non-empty sequence");
    check_tokens(tokens);
    TensorPtr h = backbone(tape, tokens, dropout_rng);
    return linear(tape, h, gen_w_);
}

TensorPtr DualHeadModel::forward_predict(Tape& tape, const std::vector<int>& tokens,
                                         Rng* dropout_rng) {
    if (tokens.empty()) throw std::invalid_argument("forward_predict requires a non-empty sequence");
    check_tokens(tokens);
    Eigen::Index pool = -1;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (tokens[t] != config_.pad_id) pool = static_cast<Eigen::Index>(t);
    }
    if (pool < 0)
        throw std::invalid_argument("forward_predict requires at least one non-padding token");
    // Causal masking means positions after the pooled one cannot reach it, so
    // trailing padding is dropped before the backbone runs.
    const std::vector<int> trimmed(tokens.begin(), tokens.begin() + pool + 1);
    TensorPtr h = backbone(tape, trimmed, dropout_rng);
    TensorPtr pooled = select_row(tape, h, pool);
    return add(tape, linear(tape, pooled, pred_w_), pred_b_);
}

void DualHeadModel::set_layer_mask(const LayerSplit& split) {
    if (split.num_layers() != config_.num_layers)
        throw std::invalid_argument("layer mask covers " + std::to_string(split.num_layers()) +
                                    " layers, model has " + std::to_string(config_.num_layers));
    std::set<int> seen;
    for (int layer : split.important) seen.insert(layer);
    for (int layer : split.redundant) seen.insert(layer);
    if (static_cast<int>(seen.size()) != config_.num_layers || *seen.begin() != 1 ||
        *seen.rbegin() != config_.num_layers)
        throw std::invalid_argument("layer mask does not partition layers 1.." +
                                    std::to_string(config_.num_layers));
    for (TransformerLayer& layer : layers_) {
        const bool active = split.is_important(layer.index);
        for (LoraAdapter& adapter : layer.adapters) {
            adapter.active = active;
            adapter.A->requires_grad = active;
            adapter.B->requires_grad = active;
        }
    }
}

std::vector<int> DualHeadModel::active_layers() const {
    std::vector<int> out;
    for (const TransformerLayer& layer : layers_) {
        if (layer.adapters[0].active) out.push_back(layer.index);
    }
    return out;
}

AdapterSnapshot DualHeadModel::export_adapters() const {
    AdapterSnapshot snap;
    snap.num_layers = static_cast<std::uint32_t>(config_.num_layers);
    snap.rank = static_cast<std::uint32_t>(config_.lora_rank);
    snap.embed_dim = static_cast<std::uint32_t>(config_.embed_dim);
    snap.ff_dim = static_cast<std::uint32_t>(config_.ff_dim());
    for (AdapterTarget target : kAdapterTargets)
        snap.targets.push_back(static_cast<std::uint8_t>(target));
    for (const TransformerLayer& layer : layers_) {
        std::vector<Matrix> row_a;
        std::vector<Matrix> row_b;
        for (const LoraAdapter& adapter : layer.adapters) {
            row_a.push_back(adapter.A->value);
            row_b.push_back(adapter.B->value);
        }
        snap.a.push_back(std::move(row_a));
        snap.b.push_back(std::move(row_b));
    }
    return snap;
}

void DualHeadModel::import_adapters(const AdapterSnapshot& snap,
                                    const std::vector<int>& layer_filter) {
    if (snap.num_layers != static_cast<std::uint32_t>(config_.num_layers))
        throw std::invalid_argument("snapshot has " + std::to_string(snap.num_layers) +
                                    " layers, model has " + std::to_string(config_.num_layers));
    if (snap.rank != static_cast<std::uint32_t>(config_.lora_rank))
        throw std::invalid_argument("snapshot rank " + std::to_string(snap.rank) +
                                    " does not match model rank " +
                                    std::to_string(config_.lora_rank));
    if (snap.embed_dim != static_cast<std::uint32_t>(config_.embed_dim) ||
        snap.ff_dim != static_cast<std::uint32_t>(config_.ff_dim()))
        throw std::invalid_argument("snapshot dimensions do not match model dimensions");
    if (snap.targets.size() != kAdapterTargets.size())
        throw std::invalid_argument("snapshot adapter target set does not match the model");
    for (std::size_t t = 0; t < kAdapterTargets.size(); ++t) {
        if (snap.targets[t] != static_cast<std::uint8_t>(kAdapterTargets[t]))
            throw std::invalid_argument("snapshot adapter target set does not match the model");
    }
    for (int layer : layer_filter) {
        if (layer < 1 || layer > config_.num_layers)
            throw std::invalid_argument("layer filter entry " + std::to_string(layer) +
                                        " outside 1.." + std::to_string(config_.num_layers));
    }
    for (int layer : layer_filter) {
        const auto li = static_cast<std::size_t>(layer - 1);
        TransformerLayer& target_layer = layers_[li];
        for (std::size_t t = 0; t < kAdapterTargets.size(); ++t) {
            const Matrix& a = snap.a.at(li).at(t);
            const Matrix& b = snap.b.at(li).at(t);
            LoraAdapter& adapter = target_layer.adapters[t];
            if (a.rows() != adapter.A->rows() || a.cols() != adapter.A->cols() ||
                b.rows() != adapter.B->rows() || b.cols() != adapter.B->cols())
                throw std::invalid_argument("snapshot matrix shape mismatch at layer " +
                                            std::to_string(layer));
            adapter.A->value = a;
            adapter.B->value = b;
        }
    }
}

void DualHeadModel::reinit_adapters(Rng& rng) {
    for (TransformerLayer& layer : layers_) {
        for (std::size_t t = 0; t < kAdapterTargets.size(); ++t) {
            init_adapter(layer.adapters[t], kAdapterTargets[t], config_, rng);
        }
    }
}

long long DualHeadModel::count_trainable_params() const {
    long long total = 0;
    for (const TransformerLayer& layer : layers_) {
        for (const LoraAdapter& adapter : layer.adapters) {
            if (!adapter.active) continue;
            total += static_cast<long long>(adapter.A->size());
            total += static_cast<long long>(adapter.B->size());
        }
    }
    total += static_cast<long long>(pred_w_->size());
    total += static_cast<long long>(pred_b_->size());
    total += static_cast<long long>(gen_w_->size());
    return total;
}

std::vector<TensorPtr> DualHeadModel::trainable_params(TaskHead head) const {
    std::vector<TensorPtr> params;
    for (const TransformerLayer& layer : layers_) {
        for (const LoraAdapter& adapter : layer.adapters) {
            if (!adapter.active) continue;
            params.push_back(adapter.A);
            params.push_back(adapter.B);
        }
    }
    if (head == TaskHead::Prediction) {
        params.push_back(pred_w_);
        params.push_back(pred_b_);
    } else {
        params.push_back(gen_w_);
    }
    return params;
}

LayerScores gradient_norms(const DualHeadModel& model, int step_index) {
    LayerScores result;
    result.step_index = step_index;
    bool any_active = false;
    bool any_populated = false;
    for (const TransformerLayer& layer : model.layers()) {
        double sq = 0.0;
        for (const LoraAdapter& adapter : layer.adapters) {
            if (adapter.A->requires_grad) {
                any_active = true;
                if (adapter.A->grad.size() > 0 || adapter.B->grad.size() > 0) any_populated = true;
            }
            sq += adapter.A->grad_sq_sum();
            sq += adapter.B->grad_sq_sum();
        }
        result.scores.push_back(std::sqrt(sq));
    }
    if (any_active && !any_populated)
        throw std::runtime_error("gradient norms requested before a backward pass populated "
                                 "adapter gradients");
    return result;
}

void save_snapshot(const AdapterSnapshot& snap, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open snapshot file for writing: " + path);
    out.write(kSnapshotMagic, sizeof(kSnapshotMagic));
    write_u32(out, snap.version);
    write_u32(out, snap.num_layers);
    write_u32(out, snap.rank);
    write_u32(out, snap.embed_dim);
    write_u32(out, snap.ff_dim);
    write_u32(out, static_cast<std::uint32_t>(snap.targets.size()));
    for (std::uint8_t id : snap.targets) out.put(static_cast<char>(id));
    for (std::size_t li = 0; li < snap.a.size(); ++li) {
        for (std::size_t t = 0; t < snap.targets.size(); ++t) {
            write_matrix(out, snap.a[li][t]);
            write_matrix(out, snap.b[li][t]);
        }
    }
    if (!out) throw std::runtime_error("failed to write snapshot file: " + path);

    nlohmann::json sidecar;
    sidecar["magic"] = std::string(kSnapshotMagic, sizeof(kSnapshotMagic));
    sidecar["version"] = snap.version;
    sidecar["num_layers"] = snap.num_layers;
    sidecar["rank"] = snap.rank;
    sidecar["embed_dim"] = snap.embed_dim;
    sidecar["ff_dim"] = snap.ff_dim;
    std::vector<std::string> names;
    for (std::uint8_t id : snap.targets)
        names.push_back(adapter_target_name(static_cast<AdapterTarget>(id)));
    sidecar["targets"] = names;
    std::ofstream meta(path + ".json");
    if (!meta) throw std::runtime_error("cannot open snapshot sidecar for writing: " + path +
                                        ".json");
    meta << sidecar.dump(2) << "\n";
}

AdapterSnapshot load_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open snapshot file: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kSnapshotMagic, sizeof(magic)) != 0)
        throw std::runtime_error("snapshot magic mismatch: " + path);
    AdapterSnapshot snap;
    snap.version = read_u32(in);
    if (snap.version != 1)
        throw std::runtime_error("unsupported snapshot version " + std::to_string(snap.version));
    snap.num_layers = read_u32(in);
    snap.rank = read_u32(in);
    snap.embed_dim = read_u32(in);
    snap.ff_dim = read_u32(in);
    const std::uint32_t num_targets = read_u32(in);
    if (num_targets == 0 || num_targets > kAdapterTargets.size())
        throw std::runtime_error("snapshot target count out of range");
    for (std::uint32_t t = 0; t < num_targets; ++t) {
        const int ch = in.get();
        if (ch == std::char_traits<char>::eof())
            throw std::runtime_error("snapshot file truncated");
        if (ch >= static_cast<int>(kAdapterTargets.size()))
            throw std::runtime_error("snapshot contains an unknown adapter target id");
        snap.targets.push_back(static_cast<std::uint8_t>(ch));
    }
    for (std::uint32_t li = 0; li < snap.num_layers; ++li) {
        std::vector<Matrix> row_a;
        std::vector<Matrix> row_b;
        for (std::uint32_t t = 0; t < num_targets; ++t) {
            int d_in = 0;
            int d_out = 0;
            target_dims(static_cast<AdapterTarget>(snap.targets[t]),
                        static_cast<int>(snap.embed_dim), static_cast<int>(snap.ff_dim), d_in,
                        d_out);
            row_a.push_back(read_matrix(in, snap.rank, d_in));
            row_b.push_back(read_matrix(in, d_out, snap.rank));
        }
        snap.a.push_back(std::move(row_a));
        snap.b.push_back(std::move(row_b));
    }
    return snap;
}

}  // namespace revtune
