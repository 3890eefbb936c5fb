#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace revtune {

class DualHeadModel;

// Per-layer gradient norms for one probing step. Layer indices are 1-based
// everywhere in this module; scores[i] belongs to layer i+1.
struct LayerScores {
    int step_index = 0;
    std::vector<double> scores;
};

// Partition of layers 1..l into an important set S (scores above the
// threshold) and a redundant set (scores at or below it).
struct LayerSplit {
    std::vector<int> important;
    std::vector<int> redundant;
    double threshold = 0.0;

    int num_layers() const { return static_cast<int>(important.size() + redundant.size()); }
    bool is_important(int layer) const;
};

// Per-layer selection counts accumulated over the probing steps.
struct FrequencyTable {
    std::vector<long long> counts;
    long long total_steps = 0;
};

enum class Strategy { IntentionTuning, IR, Lisa, Ist, Full, Copy };

Strategy strategy_from_name(const std::string& name);
std::string strategy_name(Strategy s);

struct SelectionStrategy {
    Strategy variant = Strategy::Full;
    std::uint64_t seed = 0;
    int lisa_count = 4;
    int ist_count = 8;
};

// Variance-minimizing split: sorts the scores, evaluates every contiguous
// split point that corresponds to a realizable threshold, and keeps the one
// with the smallest population-variance sum. Ties prefer the larger redundant
// side. All-equal scores degenerate to an all-important split.
LayerSplit split_layers(const std::vector<double>& scores);

FrequencyTable accumulate_frequency(const std::vector<LayerSplit>& splits);
LayerSplit finalize_layers(const FrequencyTable& freq);

// |s_pre intersect s_gen| / |s_gen|
double alignment_ratio(const std::vector<int>& s_pre, const std::vector<int>& s_gen);

// Single-shot selection for the fixed-mask baselines. IR delegates to
// split_layers on the supplied scores; scores may be empty for Full/Lisa.
LayerSplit select_baseline(const SelectionStrategy& strategy, const std::vector<double>& scores,
                           int num_layers);

// L2 norm over the adapter parameter gradients of each layer.
LayerScores gradient_norms(const DualHeadModel& model, int step_index);

std::string scores_csv(const std::vector<LayerScores>& steps);
std::string frequency_csv(const FrequencyTable& freq);
std::string split_csv(const LayerSplit& split);

}  // namespace revtune
