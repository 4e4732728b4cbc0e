#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "pheno/cohort.hpp"
#include "pheno/embedding.hpp"
#include "pheno/rng.hpp"

namespace pheno {

// Model-ready aggregate for one patient: the selected concepts with their
// cumulative counts and pre-trained vectors. Vectors point into the
// embedding table, which outlives every input.
struct ModelInput {
    std::string patient_id;
    struct Token {
        ConceptId concept_id;
        int64_t count = 0;
        const Tensor* embedding = nullptr;
    };
    std::vector<Token> tokens; // 1 <= size <= k_star
    Label label;
};

// Inclusive 1-based positions into the ordered window list.
struct WindowRange {
    int t_start = 1;
    int t_end = 1;
};

// Per-concept count sums over the selected window positions (full history
// when `range` is empty). Output sorted by concept id. Raises NumericError
// when the range violates 1 <= t_start <= t_end <= T.
AggregatedConcepts aggregate_counts(const std::vector<TimeWindow>& windows,
                                    std::optional<WindowRange> range = std::nullopt);

// Two independent uniform draws over 1..T, returned sorted. Weights middle
// windows more than uniform-over-pairs; see TruncationDistribution.
WindowRange truncate_window_range(int n_windows, Rng& rng);

enum class TruncationDistribution {
    sorted_uniform,    // two independent uniforms, sorted (default)
    uniform_over_pairs // every (start, end) pair equally likely
};
WindowRange truncate_window_range(int n_windows, Rng& rng, TruncationDistribution dist);

// One training instance per gold replica (replica ids 0..r-1) and one per
// silver patient; the replica id keys an independent truncation stream per
// replica per epoch.
struct TrainInstance {
    size_t patient_index = 0;
    int replica = 0;
    bool gold = false;
};
std::vector<TrainInstance> oversample_gold(const std::vector<size_t>& gold_train,
                                           const std::vector<size_t>& silver, int r);

// r = max(1, round(n_silver / n_gold))
int default_oversample_factor(size_t n_gold, size_t n_silver);

enum class InputMode {
    train_gold, // random temporal truncation before aggregation
    eval        // full history
};

// Aggregates counts (with truncation in train_gold mode), then selects the
// top-k_star anchor-similar concepts. A truncation range with zero known
// concepts is resampled up to 10 times, then falls back to the full range.
// A patient with no known concepts at all raises DataError.
ModelInput build_input(const PatientRecord& record, const EmbeddingTable& table, const ConceptId& anchor,
                       int k_star, InputMode mode, Rng& rng,
                       TruncationDistribution dist = TruncationDistribution::sorted_uniform);

} // namespace pheno
