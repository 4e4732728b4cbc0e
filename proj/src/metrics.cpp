#include "pheno/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "pheno/error.hpp"

namespace pheno {

namespace {

void check_inputs(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw NumericError("scores and labels length mismatch");
    if (scores.empty()) throw NumericError("metric undefined on empty input");
}

} // namespace

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_inputs(scores, labels);
    const size_t n = scores.size();
    size_t n_pos = 0;
    for (int y : labels) n_pos += static_cast<size_t>(y != 0);
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw NumericError("AUC undefined: both classes required");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&scores](size_t a, size_t b) { return scores[a] < scores[b]; });

    // mid-ranks over tied scores give the ties-count-half convention
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]] != 0) rank_sum_pos += mid_rank;
        i = j + 1;
    }
    const double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

PpvAtSensitivity ppv_at_sensitivity_detail(const std::vector<double>& scores, const std::vector<int>& labels,
                                           double target_sens) {
    check_inputs(scores, labels);
    if (target_sens <= 0.0 || target_sens > 1.0) throw ConfigError("target sensitivity must be in (0,1]");
    size_t n_pos = 0;
    for (int y : labels) n_pos += static_cast<size_t>(y != 0);
    if (n_pos == 0) throw NumericError("PPV at sensitivity undefined without positives");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&scores](size_t a, size_t b) { return scores[a] > scores[b]; });

    // walk thresholds from the largest score down; each distinct score is a
    // candidate cutoff capturing every tied observation
    size_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        for (size_t k = i; k <= j; ++k) {
            if (labels[order[k]] != 0)
                ++tp;
            else
                ++fp;
        }
        const double sens = static_cast<double>(tp) / static_cast<double>(n_pos);
        if (sens >= target_sens)
            return {static_cast<double>(tp) / static_cast<double>(tp + fp), scores[order[i]], sens};
        i = j + 1;
    }
    // sensitivity 1.0 is always reachable at the smallest score
    return {static_cast<double>(tp) / static_cast<double>(tp + fp), scores[order.back()], 1.0};
}

double ppv_at_sensitivity(const std::vector<double>& scores, const std::vector<int>& labels, double target_sens) {
    return ppv_at_sensitivity_detail(scores, labels, target_sens).ppv;
}

} // namespace pheno
