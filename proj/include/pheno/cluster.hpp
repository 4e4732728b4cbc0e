#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pheno/tensor.hpp"

namespace pheno {

struct PcaResult {
    Tensor components;  // [m x d] principal axes, rows ordered by variance
    Tensor projected;   // [n x m] coordinates in the retained subspace
    Tensor coords2d;    // [n x 2] first two coordinates (zero-padded if d < 2)
    std::vector<double> explained_ratios; // all d ratios, nonincreasing
    int n_components = 0;
};

// Mean-centers the columns of X [n x d], eigendecomposes the sample
// covariance (cyclic Jacobi), and keeps the smallest component count whose
// cumulative explained variance reaches var_threshold. Requires n >= 2 and
// nonzero total variance.
PcaResult pca_reduce(const Tensor& x, double var_threshold = 0.99);

struct ClusterModel {
    int k = 0;
    Tensor centroids; // [k x d]
    std::vector<int> assignments;
    std::optional<int> min_size;
};

// k-means++ seeding followed by Lloyd iterations to an assignment fixpoint
// (at most 300 rounds), best objective over n_restarts runs; deterministic
// given seed. With min_size set, a post-assignment repair moves the nearest
// points from oversized clusters into deficient ones until every cluster
// reaches min_size.
ClusterModel kmeans(const Tensor& x, int k, uint64_t seed, std::optional<int> min_size = std::nullopt,
                    int n_restarts = 10);

// Within-cluster sum of squared distances.
double kmeans_objective(const Tensor& x, const ClusterModel& model);

// Adjusted Rand index between two labelings of the same points.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

} // namespace pheno
