#pragma once

#include <vector>

namespace pheno {

// Probability that a random positive outscores a random negative, ties
// counted 0.5 (Mann-Whitney). Requires both classes present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// PPV at the largest score threshold whose capture set {score >= t}
// reaches sensitivity >= target_sens; ties at the threshold are all
// included. Requires at least one positive.
double ppv_at_sensitivity(const std::vector<double>& scores, const std::vector<int>& labels,
                          double target_sens = 0.85);

struct PpvAtSensitivity {
    double ppv = 0.0;
    double threshold = 0.0;
    double sensitivity = 0.0;
};
PpvAtSensitivity ppv_at_sensitivity_detail(const std::vector<double>& scores, const std::vector<int>& labels,
                                           double target_sens = 0.85);

} // namespace pheno
