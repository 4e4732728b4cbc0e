#include "pheno/preprocess.hpp"

#include <algorithm>
#include <map>

#include "pheno/error.hpp"

namespace pheno {

AggregatedConcepts aggregate_counts(const std::vector<TimeWindow>& windows, std::optional<WindowRange> range) {
    const int t_max = static_cast<int>(windows.size());
    WindowRange r{1, t_max};
    if (range) {
        r = *range;
        if (r.t_start < 1 || r.t_end > t_max || r.t_start > r.t_end)
            throw NumericError("aggregate range [" + std::to_string(r.t_start) + "," + std::to_string(r.t_end) +
                               "] out of bounds for T=" + std::to_string(t_max));
    }
    std::map<ConceptId, int64_t> sums;
    for (int t = r.t_start; t <= r.t_end; ++t)
        for (const auto& e : windows[static_cast<size_t>(t - 1)].events) sums[e.concept_id] += e.count;
    AggregatedConcepts agg;
    agg.reserve(sums.size());
    for (const auto& [id, n] : sums) agg.push_back({id, n});
    return agg;
}

WindowRange truncate_window_range(int n_windows, Rng& rng) {
    return truncate_window_range(n_windows, rng, TruncationDistribution::sorted_uniform);
}

WindowRange truncate_window_range(int n_windows, Rng& rng, TruncationDistribution dist) {
    if (n_windows < 1) throw NumericError("truncation requires at least one window");
    const auto t = static_cast<uint64_t>(n_windows);
    if (dist == TruncationDistribution::sorted_uniform) {
        int a = 1 + static_cast<int>(rng.uniform_int(t));
        int b = 1 + static_cast<int>(rng.uniform_int(t));
        if (a > b) std::swap(a, b);
        return {a, b};
    }
    // uniform over the T(T+1)/2 ordered pairs
    uint64_t n_pairs = t * (t + 1) / 2;
    uint64_t k = rng.uniform_int(n_pairs);
    for (int start = 1; start <= n_windows; ++start) {
        uint64_t span = static_cast<uint64_t>(n_windows - start + 1);
        if (k < span) return {start, start + static_cast<int>(k)};
        k -= span;
    }
    return {n_windows, n_windows}; // unreachable
}

std::vector<TrainInstance> oversample_gold(const std::vector<size_t>& gold_train,
                                           const std::vector<size_t>& silver, int r) {
    if (r < 1) throw ConfigError("oversample factor must be >= 1");
    std::vector<TrainInstance> out;
    out.reserve(gold_train.size() * static_cast<size_t>(r) + silver.size());
    for (size_t idx : gold_train)
        for (int k = 0; k < r; ++k) out.push_back({idx, k, true});
    for (size_t idx : silver) out.push_back({idx, 0, false});
    return out;
}

int default_oversample_factor(size_t n_gold, size_t n_silver) {
    if (n_gold == 0) return 1;
    auto r = static_cast<int>(std::llround(static_cast<double>(n_silver) / static_cast<double>(n_gold)));
    return std::max(1, r);
}

namespace {

AggregatedConcepts aggregate_known(const PatientRecord& record, const EmbeddingTable& table,
                                   std::optional<WindowRange> range) {
    AggregatedConcepts agg = aggregate_counts(record.windows, range);
    std::erase_if(agg, [&table](const ConceptCount& cc) { return !table.contains(cc.concept_id); });
    return agg;
}

} // namespace

ModelInput build_input(const PatientRecord& record, const EmbeddingTable& table, const ConceptId& anchor,
                       int k_star, InputMode mode, Rng& rng, TruncationDistribution dist) {
    if (record.windows.empty()) throw DataError("patient " + record.patient_id + " has no windows");
    const int t_max = static_cast<int>(record.windows.size());

    AggregatedConcepts agg;
    if (mode == InputMode::train_gold) {
        for (int attempt = 0; attempt < 10 && agg.empty(); ++attempt)
            agg = aggregate_known(record, table, truncate_window_range(t_max, rng, dist));
        if (agg.empty()) agg = aggregate_known(record, table, std::nullopt); // fall back to full range
    } else {
        agg = aggregate_known(record, table, std::nullopt);
    }
    if (agg.empty()) throw DataError("patient " + record.patient_id + " has no concepts with embeddings");

    AggregatedConcepts selected = select_features(agg, table, anchor, k_star);
    ModelInput input;
    input.patient_id = record.patient_id;
    input.label = record.label;
    input.tokens.reserve(selected.size());
    for (const auto& cc : selected)
        input.tokens.push_back({cc.concept_id, cc.count, &table.vector_for(cc.concept_id)});
    return input;
}

} // namespace pheno
