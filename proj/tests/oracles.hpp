// Independent reference implementations used to cross-check the library.
// Everything here is deliberately brute-force and shares no code with the
// implementation paths it verifies.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "pheno/cohort.hpp"
#include "pheno/tape.hpp"
#include "pheno/tensor.hpp"

namespace oracle {

// element-wise triple loop matrix product
inline pheno::Tensor matmul(const pheno::Tensor& a, const pheno::Tensor& b) {
    pheno::Tensor c({a.rows(), b.cols()});
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (int k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

// all-pairs Mann-Whitney statistic, ties 0.5
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0, pairs = 0.0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 0) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            pairs += 1.0;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    return wins / pairs;
}

struct PpvSweep {
    double threshold = 0.0;
    double ppv = 0.0;
    double sensitivity = 0.0;
};

// exhaustive threshold sweep with direct recounting at every cutoff
inline PpvSweep ppv_at_sensitivity(const std::vector<double>& scores, const std::vector<int>& labels,
                                   double target) {
    std::vector<double> thresholds = scores;
    std::sort(thresholds.begin(), thresholds.end(), std::greater<double>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    double n_pos = 0.0;
    for (int y : labels) n_pos += y != 0 ? 1.0 : 0.0;
    for (double t : thresholds) {
        double tp = 0.0, fp = 0.0;
        for (size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= t) {
                if (labels[i] != 0)
                    tp += 1.0;
                else
                    fp += 1.0;
            }
        }
        if (tp / n_pos >= target) return {t, tp / (tp + fp), tp / n_pos};
    }
    return {thresholds.back(), 0.0, 1.0};
}

// minimum within-cluster sum of squares over all 2-partitions of <= ~20 pts
inline double best_two_partition_wcss(const std::vector<std::vector<double>>& points) {
    const size_t n = points.size();
    const size_t d = points[0].size();
    double best = -1.0;
    for (uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
        std::vector<double> c0(d, 0.0), c1(d, 0.0);
        double n0 = 0.0, n1 = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const bool in1 = (mask >> i) & 1u;
            for (size_t j = 0; j < d; ++j) (in1 ? c1 : c0)[j] += points[i][j];
            (in1 ? n1 : n0) += 1.0;
        }
        for (size_t j = 0; j < d; ++j) {
            c0[j] /= n0;
            c1[j] /= n1;
        }
        double wcss = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const auto& c = ((mask >> i) & 1u) ? c1 : c0;
            for (size_t j = 0; j < d; ++j) {
                const double diff = points[i][j] - c[j];
                wcss += diff * diff;
            }
        }
        if (best < 0.0 || wcss < best) best = wcss;
    }
    return best;
}

// recount of a concept's total over raw windows
inline int64_t recount(const std::vector<pheno::TimeWindow>& windows, const pheno::ConceptId& id, int t_start,
                       int t_end) {
    int64_t total = 0;
    for (int t = t_start; t <= t_end; ++t)
        for (const auto& e : windows[static_cast<size_t>(t - 1)].events)
            if (e.concept_id == id) total += e.count;
    return total;
}

// sort-and-slice feature selection with forced anchor, mirroring the
// documented tie-break (similarity desc, id asc) but built independently
inline std::vector<std::pair<std::string, int64_t>> select_sorted(
    std::vector<std::pair<std::string, int64_t>> agg, const std::map<std::string, double>& similarity,
    const std::string& anchor, size_t k_star) {
    std::stable_sort(agg.begin(), agg.end(), [&](const auto& a, const auto& b) {
        const double sa = similarity.at(a.first), sb = similarity.at(b.first);
        if (sa != sb) return sa > sb;
        return a.first < b.first;
    });
    if (agg.size() <= k_star) return agg;
    const bool anchor_present =
        std::any_of(agg.begin(), agg.end(), [&](const auto& p) { return p.first == anchor; });
    std::vector<std::pair<std::string, int64_t>> out(agg.begin(), agg.begin() + static_cast<long>(k_star));
    if (anchor_present &&
        std::none_of(out.begin(), out.end(), [&](const auto& p) { return p.first == anchor; })) {
        auto it = std::find_if(agg.begin(), agg.end(), [&](const auto& p) { return p.first == anchor; });
        out.back() = *it;
        std::stable_sort(out.begin(), out.end(), [&](const auto& a, const auto& b) {
            const double sa = similarity.at(a.first), sb = similarity.at(b.first);
            if (sa != sb) return sa > sb;
            return a.first < b.first;
        });
    }
    return out;
}

// central finite differences through a tape-builder: leaves are perturbed
// entry by entry and the whole graph re-run
struct FdCheck {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
};

inline FdCheck fd_check(std::vector<pheno::Tensor> leaves,
                        const std::function<pheno::Tape::NodeId(pheno::Tape&, const std::vector<pheno::Tape::NodeId>&)>& build,
                        double h = 1e-5) {
    auto run = [&](const std::vector<pheno::Tensor>& vals) {
        pheno::Tape fresh;
        std::vector<pheno::Tape::NodeId> fresh_ids;
        fresh_ids.reserve(vals.size());
        for (const auto& v : vals) fresh_ids.push_back(fresh.leaf(v));
        return fresh.value(build(fresh, fresh_ids)).at(0);
    };

    pheno::Tape tape;
    std::vector<pheno::Tape::NodeId> ids;
    for (const auto& v : leaves) ids.push_back(tape.leaf(v));
    pheno::Tape::NodeId loss = build(tape, ids);
    tape.backward(loss);

    FdCheck result;
    for (size_t l = 0; l < leaves.size(); ++l) {
        for (int64_t i = 0; i < leaves[l].size(); ++i) {
            const double orig = leaves[l].at(i);
            leaves[l].at(i) = orig + h;
            const double lp = run(leaves);
            leaves[l].at(i) = orig - h;
            const double lm = run(leaves);
            leaves[l].at(i) = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = tape.grad(ids[l]).at(i);
            const double abs_err = std::fabs(an - fd);
            result.max_abs_err = std::max(result.max_abs_err, abs_err);
            result.max_rel_err =
                std::max(result.max_rel_err, abs_err / std::max({std::fabs(an), std::fabs(fd), 0.01}));
        }
    }
    return result;
}

} // namespace oracle
