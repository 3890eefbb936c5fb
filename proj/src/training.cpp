#include "revtune/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "revtune/textutil.hpp"

namespace revtune {

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, int batch_size, Rng& rng) {
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

LayerSplit all_important_split(int num_layers) {
    LayerSplit split;
    for (int i = 1; i <= num_layers; ++i) split.important.push_back(i);
    split.threshold = 0.0;
    return split;
}

TensorPtr batch_mean(Tape& tape, const std::vector<TensorPtr>& losses) {
    TensorPtr total = losses.front();
    for (std::size_t i = 1; i < losses.size(); ++i) total = add(tape, total, losses[i]);
    return scale(tape, total, 1.0 / static_cast<double>(losses.size()));
}

TensorPtr prediction_batch_loss(Tape& tape, DualHeadModel& model,
                                const std::vector<PredictionExample>& corpus,
                                const std::vector<std::size_t>& batch, Rng* dropout_rng) {
    std::vector<TensorPtr> losses;
    losses.reserve(batch.size());
    for (std::size_t idx : batch) {
        const PredictionExample& example = corpus[idx];
        TensorPtr logits = model.forward_predict(tape, example.tokens, dropout_rng);
        if (model.config().multi_label) {
            losses.push_back(loss_pre_multi(tape, logits, example.multi_hot));
        } else {
            losses.push_back(loss_pre_single(tape, logits, example.label));
        }
    }
    return batch_mean(tape, losses);
}

TensorPtr generation_batch_loss(Tape& tape, DualHeadModel& model,
                                const std::vector<GenerationExample>& corpus,
                                const std::vector<std::size_t>& batch, Rng* dropout_rng) {
    std::vector<TensorPtr> losses;
    losses.reserve(batch.size());
    for (std::size_t idx : batch) {
        const GenerationExample& example = corpus[idx];
        TensorPtr logits = model.forward_generate(tape, example.inputs, dropout_rng);
        losses.push_back(loss_gen(tape, logits, example.targets, example.loss_mask));
    }
    return batch_mean(tape, losses);
}

nlohmann::json split_json(const LayerSplit& split) {
    nlohmann::json out;
    out["important"] = split.important;
    out["redundant"] = split.redundant;
    out["threshold"] = split.threshold;
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    if (learning_rate < 0.0) throw std::invalid_argument("learning_rate must be non-negative");
    if (warmup_steps < 0) throw std::invalid_argument("warmup_steps must be non-negative");
    if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
    if (log_every < 1) throw std::invalid_argument("log_every must be at least 1");
}

AdamW::AdamW(std::vector<TensorPtr> params, const TrainConfig& config)
    : params_(std::move(params)), config_(config) {
    config_.validate();
    slots_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        slots_[i].m = Matrix::Zero(params_[i]->rows(), params_[i]->cols());
        slots_[i].v = Matrix::Zero(params_[i]->rows(), params_[i]->cols());
    }
}

double AdamW::next_lr() const {
    if (config_.warmup_steps <= 0) return config_.learning_rate;
    const double frac = static_cast<double>(step_ + 1) / config_.warmup_steps;
    return config_.learning_rate * std::min(1.0, frac);
}

void AdamW::step() {
    const double lr = next_lr();
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const TensorPtr& p = params_[i];
        if (!p->requires_grad || p->grad.size() == 0) continue;
        Slot& slot = slots_[i];
        ++slot.steps;
        slot.m = kBeta1 * slot.m + (1.0 - kBeta1) * p->grad;
        slot.v = kBeta2 * slot.v + (1.0 - kBeta2) * p->grad.cwiseProduct(p->grad);
        const double bc1 = 1.0 - std::pow(kBeta1, slot.steps);
        const double bc2 = 1.0 - std::pow(kBeta2, slot.steps);
        if (config_.weight_decay != 0.0) p->value *= 1.0 - lr * config_.weight_decay;
        p->value.array() -=
            lr * ((slot.m.array() / bc1) / ((slot.v.array() / bc2).sqrt() + kEps));
    }
}

void AdamW::zero_grad() {
    for (const TensorPtr& p : params_) p->zero_grad();
}

TensorPtr loss_pre_single(Tape& tape, const TensorPtr& logits, int label) {
    return softmax_cross_entropy(tape, logits, label);
}

TensorPtr loss_pre_multi(Tape& tape, const TensorPtr& logits, const std::vector<int>& labels) {
    return sigmoid_bce(tape, logits, labels);
}

TensorPtr loss_gen(Tape& tape, const TensorPtr& logits, const std::vector<int>& targets,
                   const std::vector<std::uint8_t>& loss_mask) {
    return cross_entropy_rows(tape, logits, targets, loss_mask);
}

std::string report_json(const StageReport& report) {
    nlohmann::json out;
    out["stage1_losses"] = report.stage1_losses;
    out["stage2_losses"] = report.stage2_losses;
    nlohmann::json scores1 = nlohmann::json::array();
    for (const LayerScores& s : report.stage1_scores) {
        scores1.push_back({{"step", s.step_index}, {"scores", s.scores}});
    }
    out["stage1_scores"] = scores1;
    nlohmann::json scores2 = nlohmann::json::array();
    for (const LayerScores& s : report.stage2_scores) {
        scores2.push_back({{"step", s.step_index}, {"scores", s.scores}});
    }
    out["stage2_scores"] = scores2;
    nlohmann::json splits = nlohmann::json::array();
    for (const LayerSplit& s : report.stage1_splits) splits.push_back(split_json(s));
    out["stage1_splits"] = splits;
    out["frequency"] = {{"counts", report.frequency.counts},
                        {"total_steps", report.frequency.total_steps}};
    out["final_split"] = split_json(report.final_split);
    out["transfer_layers"] = report.transfer_layers;
    out["alignment"] = report.alignment;
    out["stage1_trainable_params"] = report.stage1_trainable_params;
    out["stage2_trainable_params"] = report.stage2_trainable_params;
    return out.dump(2) + "\n";
}

std::string losses_csv(const StageReport& report) {
    std::string out = "stage,step,loss\n";
    for (std::size_t i = 0; i < report.stage1_losses.size(); ++i) {
        out += "pre," + std::to_string(i + 1) + "," + format_double(report.stage1_losses[i]) +
               "\n";
    }
    for (std::size_t i = 0; i < report.stage2_losses.size(); ++i) {
        out += "gen," + std::to_string(i + 1) + "," + format_double(report.stage2_losses[i]) +
               "\n";
    }
    return out;
}

namespace {

// Shared generation-stage loop. The mask policy is fixed unless resplit_every_step
// is set, in which case the split is recomputed from the step's gradient norms
// before the optimizer update, mirroring the prediction-stage ordering.
void train_generation_stage(DualHeadModel& model, const std::vector<GenerationExample>& corpus,
                            const TrainConfig& config, bool resplit_every_step,
                            std::vector<LayerSplit>& mask_history, StageReport& report,
                            const TrainHooks* hooks) {
    AdamW optimizer(model.trainable_params(TaskHead::Generation), config);
    Rng dropout_rng(derive_seed(config.seed, "dropout/gen"));
    int step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng order_rng(derive_seed(config.seed, "data-order/gen/" + std::to_string(epoch)));
        for (const auto& batch : epoch_batches(corpus.size(), config.batch_size, order_rng)) {
            Tape tape(true);
            TensorPtr loss = generation_batch_loss(tape, model, corpus, batch, &dropout_rng);
            tape.backward(loss);
            LayerScores scores = gradient_norms(model, step);
            report.stage2_scores.push_back(scores);
            if (resplit_every_step) {
                LayerSplit split = split_layers(scores.scores);
                model.set_layer_mask(split);
                mask_history.push_back(split);
            } else {
                mask_history.push_back(report.final_split);
            }
            optimizer.step();
            optimizer.zero_grad();
            report.stage2_losses.push_back(loss->value(0, 0));
            if (hooks != nullptr && hooks->on_stage2_step)
                hooks->on_stage2_step(step, loss->value(0, 0));
            ++step;
        }
    }
}

}  // namespace

namespace {

// Algorithm core of the prediction stage: the backward pass at step j runs
// under the mask chosen at step j-1, with step 0 starting all-active, and the
// fresh split lands before the optimizer update.
void train_prediction_stage(DualHeadModel& model,
                            const std::vector<PredictionExample>& corpus,
                            const TrainConfig& config, StageReport& report,
                            const TrainHooks* hooks) {
    model.set_layer_mask(all_important_split(model.config().num_layers));
    report.stage1_trainable_params = model.count_trainable_params();

    AdamW optimizer(model.trainable_params(TaskHead::Prediction), config);
    Rng dropout_rng(derive_seed(config.seed, "dropout/pre"));
    int step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng order_rng(derive_seed(config.seed, "data-order/pre/" + std::to_string(epoch)));
        for (const auto& batch : epoch_batches(corpus.size(), config.batch_size, order_rng)) {
            Tape tape(true);
            TensorPtr loss = prediction_batch_loss(tape, model, corpus, batch, &dropout_rng);
            tape.backward(loss);
            LayerScores scores = gradient_norms(model, step);
            LayerSplit split = (hooks != nullptr && hooks->split_override)
                                   ? hooks->split_override(scores)
                                   : split_layers(scores.scores);
            model.set_layer_mask(split);
            optimizer.step();
            optimizer.zero_grad();
            report.stage1_losses.push_back(loss->value(0, 0));
            report.stage1_scores.push_back(scores);
            report.stage1_splits.push_back(split);
            if (hooks != nullptr && hooks->on_stage1_step)
                hooks->on_stage1_step(step, loss->value(0, 0));
            ++step;
        }
    }
}

}  // namespace

TrainResult run_probe(const ModelConfig& model_config,
                      const std::vector<PredictionExample>& corpus_pre,
                      const TrainConfig& config, const TrainHooks* hooks) {
    model_config.validate();
    config.validate();
    if (corpus_pre.empty()) throw std::invalid_argument("prediction corpus is empty");

    TrainResult result;
    Rng init_rng(derive_seed(config.seed, "model-init"));
    result.model = std::make_shared<DualHeadModel>(model_config, init_rng);
    StageReport& report = result.report;
    train_prediction_stage(*result.model, corpus_pre, config, report, hooks);
    report.frequency = accumulate_frequency(report.stage1_splits);
    report.final_split = finalize_layers(report.frequency);
    return result;
}

TrainResult run_intention_tuning(const ModelConfig& model_config,
                                 const std::vector<PredictionExample>& corpus_pre,
                                 const std::vector<GenerationExample>& corpus_gen,
                                 const TrainConfig& config, const TrainHooks* hooks) {
    model_config.validate();
    config.validate();
    if (corpus_pre.empty()) throw std::invalid_argument("prediction corpus is empty");
    if (corpus_gen.empty()) throw std::invalid_argument("generation corpus is empty");

    TrainResult result;
    Rng init_rng(derive_seed(config.seed, "model-init"));
    result.model = std::make_shared<DualHeadModel>(model_config, init_rng);
    DualHeadModel& model = *result.model;
    StageReport& report = result.report;

    train_prediction_stage(model, corpus_pre, config, report, hooks);

    if (hooks != nullptr && hooks->on_stage1_end) hooks->on_stage1_end(model);
    const AdapterSnapshot snapshot = model.export_adapters();
    report.frequency = accumulate_frequency(report.stage1_splits);
    report.final_split = finalize_layers(report.frequency);

    const std::vector<int>& s_pre = report.stage1_splits.back().important;
    const std::vector<int>& s_gen = report.final_split.important;
    for (int layer : s_gen) {
        if (std::find(s_pre.begin(), s_pre.end(), layer) != s_pre.end())
            report.transfer_layers.push_back(layer);
    }
    std::sort(report.transfer_layers.begin(), report.transfer_layers.end());
    report.alignment = alignment_ratio(s_pre, s_gen);

    Rng reinit_rng(derive_seed(config.seed, "stage2-adapter-init"));
    model.reinit_adapters(reinit_rng);
    model.import_adapters(snapshot, report.transfer_layers);
    model.set_layer_mask(report.final_split);
    report.stage2_trainable_params = model.count_trainable_params();
    if (hooks != nullptr && hooks->on_stage2_start) hooks->on_stage2_start(model);

    std::vector<LayerSplit> mask_history;
    train_generation_stage(model, corpus_gen, config, false, mask_history, report, hooks);
    return result;
}

TrainResult run_baseline(const SelectionStrategy& strategy, const ModelConfig& model_config,
                         const std::vector<GenerationExample>& corpus_gen,
                         const TrainConfig& config, const TrainHooks* hooks) {
    model_config.validate();
    config.validate();
    if (strategy.variant == Strategy::IntentionTuning)
        throw std::invalid_argument("intention_tuning runs through run_intention_tuning");
    if (strategy.variant == Strategy::Copy)
        throw std::invalid_argument("copy baseline involves no training");
    if (corpus_gen.empty()) throw std::invalid_argument("generation corpus is empty");

    TrainResult result;
    Rng init_rng(derive_seed(config.seed, "model-init"));
    result.model = std::make_shared<DualHeadModel>(model_config, init_rng);
    DualHeadModel& model = *result.model;
    StageReport& report = result.report;

    const bool dynamic = strategy.variant == Strategy::IR;
    if (dynamic) {
        report.final_split = all_important_split(model_config.num_layers);
    } else if (strategy.variant == Strategy::Ist) {
        // One probing backward on the first batch, before any update, scores
        // the layers; the model weights are untouched.
        model.set_layer_mask(all_important_split(model_config.num_layers));
        Rng probe_order(derive_seed(config.seed, "data-order/gen/0"));
        const auto batches = epoch_batches(corpus_gen.size(), config.batch_size, probe_order);
        Tape tape(true);
        TensorPtr loss = generation_batch_loss(tape, model, corpus_gen, batches.front(), nullptr);
        tape.backward(loss);
        LayerScores probe = gradient_norms(model, 0);
        for (TransformerLayer& layer : model.layers()) {
            for (LoraAdapter& adapter : layer.adapters) {
                adapter.A->grad = Matrix();
                adapter.B->grad = Matrix();
            }
        }
        model.generation_weight()->grad = Matrix();
        report.final_split = select_baseline(strategy, probe.scores, model_config.num_layers);
    } else {
        SelectionStrategy seeded = strategy;
        seeded.seed = derive_seed(config.seed, "lisa-mask");
        report.final_split = select_baseline(seeded, {}, model_config.num_layers);
    }

    model.set_layer_mask(report.final_split);
    report.stage2_trainable_params = model.count_trainable_params();

    std::vector<LayerSplit> mask_history;
    train_generation_stage(model, corpus_gen, config, dynamic, mask_history, report, hooks);
    report.frequency = accumulate_frequency(mask_history);
    if (dynamic && !mask_history.empty()) report.final_split = mask_history.back();
    return result;
}

void DecodeConfig::validate() const {
    if (max_new_tokens < 1) throw std::invalid_argument("max_new_tokens must be at least 1");
    if (top_k < 1) throw std::invalid_argument("top_k must be at least 1");
    if (top_p <= 0.0 || top_p > 1.0) throw std::invalid_argument("top_p must lie in (0, 1]");
    if (eos_id < 0) throw std::invalid_argument("eos_id must be non-negative");
}

std::vector<int> decode_candidates(const std::vector<double>& probs, int top_k, double top_p) {
    if (probs.empty()) throw std::invalid_argument("decode_candidates requires probabilities");
    if (top_k < 1) throw std::invalid_argument("top_k must be at least 1");
    std::vector<int> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
    });
    const std::size_t keep = std::min<std::size_t>(order.size(), static_cast<std::size_t>(top_k));
    order.resize(keep);
    std::vector<int> picked;
    double mass = 0.0;
    for (int id : order) {
        picked.push_back(id);
        mass += probs[static_cast<std::size_t>(id)];
        if (mass >= top_p) break;
    }
    return picked;
}

int pick_token(const std::vector<double>& logits, const DecodeConfig& config, Rng& rng) {
    if (logits.empty()) throw std::invalid_argument("pick_token requires logits");
    if (!config.sample || config.temperature <= 0.0) {
        return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> probs(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp((logits[i] - mx) / config.temperature);
        z += probs[i];
    }
    for (double& p : probs) p /= z;

    const std::vector<int> cands = decode_candidates(probs, config.top_k, config.top_p);
    double total = 0.0;
    for (int id : cands) total += probs[static_cast<std::size_t>(id)];
    const double u = rng.uniform() * total;
    double acc = 0.0;
    for (int id : cands) {
        acc += probs[static_cast<std::size_t>(id)];
        if (u < acc) return id;
    }
    return cands.back();
}

std::vector<int> generate(DualHeadModel& model, const std::vector<int>& prompt,
                          const DecodeConfig& config) {
    config.validate();
    if (prompt.empty()) throw std::invalid_argument("prompt must not be empty");
    const auto max_len = static_cast<std::size_t>(model.config().max_seq_len);
    if (prompt.size() >= max_len)
        throw std::invalid_argument("prompt length " + std::to_string(prompt.size()) +
                                    " leaves no room to generate within max_seq_len " +
                                    std::to_string(model.config().max_seq_len));

    Rng rng(config.seed);
    std::vector<int> tokens = prompt;
    std::vector<int> out;
    while (static_cast<int>(out.size()) < config.max_new_tokens && tokens.size() < max_len) {
        Tape tape(false);
        TensorPtr logits = model.forward_generate(tape, tokens);
        const Eigen::Index last = logits->rows() - 1;
        std::vector<double> row(static_cast<std::size_t>(logits->cols()));
        for (Eigen::Index c = 0; c < logits->cols(); ++c)
            row[static_cast<std::size_t>(c)] = logits->value(last, c);
        const int next = pick_token(row, config, rng);
        if (next == config.eos_id) break;
        tokens.push_back(next);
        out.push_back(next);
    }
    return out;
}

double prediction_accuracy(DualHeadModel& model, const std::vector<PredictionExample>& examples) {
    if (examples.empty()) throw std::invalid_argument("prediction_accuracy requires examples");
    long long correct = 0;
    for (const PredictionExample& example : examples) {
        Tape tape(false);
        TensorPtr logits = model.forward_predict(tape, example.tokens);
        if (model.config().multi_label) {
            bool match = true;
            for (Eigen::Index i = 0; i < logits->cols(); ++i) {
                const bool on = logits->value(0, i) > 0.0;
                const bool want = example.multi_hot[static_cast<std::size_t>(i)] != 0;
                match = match && (on == want);
            }
            correct += match ? 1 : 0;
        } else {
            Eigen::Index best = 0;
            logits->value.row(0).maxCoeff(&best);
            correct += (static_cast<int>(best) == example.label) ? 1 : 0;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

}  // namespace revtune
