#include "revtune/layerselect.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "revtune/rng.hpp"
#include "revtune/textutil.hpp"

namespace revtune {

bool LayerSplit::is_important(int layer) const {
    return std::find(important.begin(), important.end(), layer) != important.end();
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "intention_tuning") return Strategy::IntentionTuning;
    if (name == "ir") return Strategy::IR;
    if (name == "lisa") return Strategy::Lisa;
    if (name == "ist") return Strategy::Ist;
    if (name == "full") return Strategy::Full;
    if (name == "copy") return Strategy::Copy;
    throw std::invalid_argument("unknown strategy: " + name);
}

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::IntentionTuning: return "intention_tuning";
        case Strategy::IR: return "ir";
        case Strategy::Lisa: return "lisa";
        case Strategy::Ist: return "ist";
        case Strategy::Full: return "full";
        case Strategy::Copy: return "copy";
    }
    throw std::invalid_argument("unknown strategy tag");
}

namespace {

double population_variance(const std::vector<double>& xs, std::size_t begin, std::size_t end) {
    const std::size_t n = end - begin;
    if (n == 0) return 0.0;
    double mean = 0.0;
    for (std::size_t i = begin; i < end; ++i) mean += xs[i];
    mean /= static_cast<double>(n);
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
        double d = xs[i] - mean;
        acc += d * d;
    }
    return acc / static_cast<double>(n);
}

}  // namespace

LayerSplit split_layers(const std::vector<double>& scores) {
    const std::size_t l = scores.size();
    if (l < 2) {
        throw std::invalid_argument("split_layers needs at least 2 layers, got " +
                                    std::to_string(l));
    }
    for (double s : scores) {
        if (!std::isfinite(s)) throw std::runtime_error("split_layers: non-finite score");
    }

    std::vector<std::size_t> order(l);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> sorted(l);
    for (std::size_t i = 0; i < l; ++i) sorted[i] = scores[order[i]];

    // Only split points between distinct values realize a threshold; equal
    // values can never land on opposite sides of gamma.
    std::size_t best_t = 0;
    double best_sum = 0.0;
    bool found = false;
    for (std::size_t t = 1; t < l; ++t) {
        if (sorted[t - 1] == sorted[t]) continue;
        double sum = population_variance(sorted, 0, t) + population_variance(sorted, t, l);
        if (!found || sum < best_sum || (sum == best_sum && t > best_t)) {
            best_t = t;
            best_sum = sum;
            found = true;
        }
    }

    LayerSplit split;
    if (!found) {
        // All scores identical: keep every layer active.
        for (std::size_t i = 0; i < l; ++i) split.important.push_back(static_cast<int>(i) + 1);
        split.threshold = sorted[0] - 1.0;
        return split;
    }

    split.threshold = 0.5 * (sorted[best_t - 1] + sorted[best_t]);
    for (std::size_t i = 0; i < l; ++i) {
        if (scores[i] > split.threshold) {
            split.important.push_back(static_cast<int>(i) + 1);
        } else {
            split.redundant.push_back(static_cast<int>(i) + 1);
        }
    }

    double whole = population_variance(sorted, 0, l);
    if (best_sum > whole + 1e-12 * std::max(1.0, whole)) {
        throw std::runtime_error("split_layers: variance-sum bound violated");
    }
    return split;
}

FrequencyTable accumulate_frequency(const std::vector<LayerSplit>& splits) {
    FrequencyTable freq;
    freq.total_steps = static_cast<long long>(splits.size());
    if (splits.empty()) return freq;
    const int l = splits.front().num_layers();
    freq.counts.assign(static_cast<std::size_t>(l), 0);
    for (const auto& split : splits) {
        if (split.num_layers() != l) {
            throw std::invalid_argument("accumulate_frequency: inconsistent layer counts");
        }
        for (int layer : split.important) freq.counts[static_cast<std::size_t>(layer - 1)] += 1;
    }
    return freq;
}

LayerSplit finalize_layers(const FrequencyTable& freq) {
    if (freq.total_steps < 1) {
        throw std::invalid_argument("finalize_layers needs at least one accumulated step");
    }
    std::vector<double> counts(freq.counts.begin(), freq.counts.end());
    return split_layers(counts);
}

double alignment_ratio(const std::vector<int>& s_pre, const std::vector<int>& s_gen) {
    if (s_gen.empty()) throw std::invalid_argument("alignment_ratio: empty generation set");
    std::size_t shared = 0;
    for (int layer : s_gen) {
        if (std::find(s_pre.begin(), s_pre.end(), layer) != s_pre.end()) ++shared;
    }
    return static_cast<double>(shared) / static_cast<double>(s_gen.size());
}

LayerSplit select_baseline(const SelectionStrategy& strategy, const std::vector<double>& scores,
                           int num_layers) {
    if (num_layers < 2) {
        throw std::invalid_argument("select_baseline needs at least 2 layers");
    }
    LayerSplit split;
    switch (strategy.variant) {
        case Strategy::Full: {
            for (int i = 1; i <= num_layers; ++i) split.important.push_back(i);
            split.threshold = -1.0;
            return split;
        }
        case Strategy::Lisa: {
            if (strategy.lisa_count > num_layers) {
                throw std::invalid_argument("lisa count exceeds layer count");
            }
            std::vector<int> layers(static_cast<std::size_t>(num_layers));
            std::iota(layers.begin(), layers.end(), 1);
            Rng rng(strategy.seed);
            shuffle(layers, rng);
            layers.resize(static_cast<std::size_t>(strategy.lisa_count));
            std::sort(layers.begin(), layers.end());
            split.important = layers;
            for (int i = 1; i <= num_layers; ++i) {
                if (!split.is_important(i)) split.redundant.push_back(i);
            }
            return split;
        }
        case Strategy::Ist: {
            if (strategy.ist_count > num_layers) {
                throw std::invalid_argument("ist count exceeds layer count");
            }
            if (static_cast<int>(scores.size()) != num_layers) {
                throw std::invalid_argument("ist selection needs one score per layer");
            }
            std::vector<int> order(static_cast<std::size_t>(num_layers));
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&scores](int a, int b) {
                if (scores[a] != scores[b]) return scores[a] > scores[b];
                return a < b;
            });
            for (int i = 0; i < strategy.ist_count; ++i) split.important.push_back(order[i] + 1);
            std::sort(split.important.begin(), split.important.end());
            for (int i = 1; i <= num_layers; ++i) {
                if (!split.is_important(i)) split.redundant.push_back(i);
            }
            if (strategy.ist_count < num_layers) {
                split.threshold = 0.5 * (scores[order[strategy.ist_count - 1]] +
                                         scores[order[strategy.ist_count]]);
            } else {
                split.threshold = *std::min_element(scores.begin(), scores.end()) - 1.0;
            }
            return split;
        }
        case Strategy::IR:
            return split_layers(scores);
        case Strategy::IntentionTuning:
        case Strategy::Copy:
            throw std::invalid_argument("strategy " + strategy_name(strategy.variant) +
                                        " has no single-shot layer selection");
    }
    throw std::invalid_argument("unknown strategy tag");
}

std::string scores_csv(const std::vector<LayerScores>& steps) {
    std::string out = "step,layer,score\n";
    for (const auto& step : steps) {
        for (std::size_t i = 0; i < step.scores.size(); ++i) {
            out += std::to_string(step.step_index);
            out += ',';
            out += std::to_string(i + 1);
            out += ',';
            out += format_double(step.scores[i]);
            out += '\n';
        }
    }
    return out;
}

std::string frequency_csv(const FrequencyTable& freq) {
    std::string out = "layer,count\n";
    for (std::size_t i = 0; i < freq.counts.size(); ++i) {
        out += std::to_string(i + 1);
        out += ',';
        out += std::to_string(freq.counts[i]);
        out += '\n';
    }
    return out;
}

std::string split_csv(const LayerSplit& split) {
    std::string out = "layer,member\n";
    const int l = split.num_layers();
    for (int i = 1; i <= l; ++i) {
        out += std::to_string(i);
        out += ',';
        out += split.is_important(i) ? '1' : '0';
        out += '\n';
    }
    return out;
}

}  // namespace revtune
