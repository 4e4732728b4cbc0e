#include "pheno/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "pheno/error.hpp"
#include "pheno/rng.hpp"

namespace pheno {

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
// eigenvalues and matching eigenvector columns, unsorted.
void jacobi_eigen(Tensor a, std::vector<double>& eigenvalues, Tensor& eigenvectors) {
    const int n = a.rows();
    eigenvectors = Tensor({n, n});
    for (int i = 0; i < n; ++i) eigenvectors(i, i) = 1.0;

    double scale = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) scale += a(i, j) * a(i, j);
    scale = std::sqrt(scale);
    const double tol = scale > 0.0 ? 1e-14 * scale : 0.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(2.0 * off) <= tol) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (a(p, q) == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - s * aqi;
                    a(q, i) = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = eigenvectors(i, p), viq = eigenvectors(i, q);
                    eigenvectors(i, p) = c * vip - s * viq;
                    eigenvectors(i, q) = s * vip + c * viq;
                }
            }
        }
    }
    eigenvalues.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) eigenvalues[static_cast<size_t>(i)] = a(i, i);
}

double sq_dist_row(const Tensor& x, int i, const Tensor& c, int j) {
    double s = 0.0;
    for (int d = 0; d < x.cols(); ++d) {
        const double diff = x(i, d) - c(j, d);
        s += diff * diff;
    }
    return s;
}

} // namespace

PcaResult pca_reduce(const Tensor& x, double var_threshold) {
    if (x.rank() != 2) throw NumericError("pca_reduce requires a rank-2 matrix");
    const int n = x.rows(), d = x.cols();
    if (n < 2) throw NumericError("pca_reduce requires at least 2 rows");
    if (var_threshold <= 0.0 || var_threshold > 1.0) throw ConfigError("variance threshold must be in (0,1]");

    Tensor centered = x;
    for (int j = 0; j < d; ++j) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += x(i, j);
        mean /= n;
        for (int i = 0; i < n; ++i) centered(i, j) -= mean;
    }

    Tensor cov({d, d});
    for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += centered(i, a) * centered(i, b);
            s /= (n - 1);
            cov(a, b) = s;
            cov(b, a) = s;
        }

    std::vector<double> eigenvalues;
    Tensor eigenvectors;
    jacobi_eigen(cov, eigenvalues, eigenvectors);

    std::vector<int> order(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&eigenvalues](int a, int b) {
        return eigenvalues[static_cast<size_t>(a)] > eigenvalues[static_cast<size_t>(b)];
    });

    double total = 0.0;
    for (double& ev : eigenvalues) {
        if (ev < 0.0) ev = 0.0; // numerical noise on rank-deficient data
        total += ev;
    }
    if (total <= 0.0) throw NumericError("pca_reduce: input has zero variance");

    PcaResult result;
    result.explained_ratios.resize(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i)
        result.explained_ratios[static_cast<size_t>(i)] = eigenvalues[static_cast<size_t>(order[static_cast<size_t>(i)])] / total;

    double cumulative = 0.0;
    int m = d;
    for (int i = 0; i < d; ++i) {
        cumulative += result.explained_ratios[static_cast<size_t>(i)];
        if (cumulative >= var_threshold - 1e-12) {
            m = i + 1;
            break;
        }
    }
    result.n_components = m;

    result.components = Tensor({m, d});
    for (int c = 0; c < m; ++c) {
        const int col = order[static_cast<size_t>(c)];
        // deterministic sign: largest-magnitude entry positive
        int arg = 0;
        for (int i = 1; i < d; ++i)
            if (std::fabs(eigenvectors(i, col)) > std::fabs(eigenvectors(arg, col))) arg = i;
        const double sign = eigenvectors(arg, col) >= 0.0 ? 1.0 : -1.0;
        for (int i = 0; i < d; ++i) result.components(c, i) = sign * eigenvectors(i, col);
    }

    result.projected = matmul_nt(centered, result.components);
    result.coords2d = Tensor({n, 2});
    for (int i = 0; i < n; ++i) {
        result.coords2d(i, 0) = result.projected(i, 0);
        if (m >= 2) {
            result.coords2d(i, 1) = result.projected(i, 1);
        } else if (d >= 2) {
            const int col = order[1];
            double s = 0.0;
            for (int j = 0; j < d; ++j) s += centered(i, j) * eigenvectors(j, col);
            result.coords2d(i, 1) = s;
        }
    }
    return result;
}

namespace {

ClusterModel kmeans_once(const Tensor& x, int k, Rng rng, std::optional<int> min_size) {
    const int n = x.rows(), d = x.cols();
    ClusterModel model;
    model.k = k;
    model.min_size = min_size;
    model.centroids = Tensor({k, d});

    // k-means++ seeding
    std::vector<double> dist2(static_cast<size_t>(n), 0.0);
    int first = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
    for (int j = 0; j < d; ++j) model.centroids(0, j) = x(first, j);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = sq_dist_row(x, i, model.centroids, 0);
            for (int cc = 1; cc < c; ++cc) best = std::min(best, sq_dist_row(x, i, model.centroids, cc));
            dist2[static_cast<size_t>(i)] = best;
            total += best;
        }
        int pick = 0;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (int i = 0; i < n; ++i) {
                acc += dist2[static_cast<size_t>(i)];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
        }
        for (int j = 0; j < d; ++j) model.centroids(c, j) = x(pick, j);
    }

    model.assignments.assign(static_cast<size_t>(n), -1);
    double prev_objective = -1.0;
    for (int iter = 0; iter < 300; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = sq_dist_row(x, i, model.centroids, 0);
            for (int c = 1; c < k; ++c) {
                const double dd = sq_dist_row(x, i, model.centroids, c);
                if (dd < best_d) {
                    best_d = dd;
                    best = c;
                }
            }
            if (model.assignments[static_cast<size_t>(i)] != best) {
                model.assignments[static_cast<size_t>(i)] = best;
                changed = true;
            }
        }

        // empty-cluster repair: seize the point farthest from its centroid
        std::vector<int> sizes(static_cast<size_t>(k), 0);
        for (int a : model.assignments) ++sizes[static_cast<size_t>(a)];
        for (int c = 0; c < k; ++c) {
            if (sizes[static_cast<size_t>(c)] > 0) continue;
            int far = -1;
            double far_d = -1.0;
            for (int i = 0; i < n; ++i) {
                const int a = model.assignments[static_cast<size_t>(i)];
                if (sizes[static_cast<size_t>(a)] <= 1) continue;
                const double dd = sq_dist_row(x, i, model.centroids, a);
                if (dd > far_d) {
                    far_d = dd;
                    far = i;
                }
            }
            if (far < 0) throw NumericError("kmeans: cannot repair empty cluster");
            --sizes[static_cast<size_t>(model.assignments[static_cast<size_t>(far)])];
            model.assignments[static_cast<size_t>(far)] = c;
            ++sizes[static_cast<size_t>(c)];
            changed = true;
        }

        model.centroids = Tensor({k, d});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) model.centroids(model.assignments[static_cast<size_t>(i)], j) += x(i, j);
        for (int c = 0; c < k; ++c)
            for (int j = 0; j < d; ++j) model.centroids(c, j) /= sizes[static_cast<size_t>(c)];

        const double objective = kmeans_objective(x, model);
        if (prev_objective >= 0.0 && objective > prev_objective + 1e-9 * (1.0 + prev_objective))
            throw NumericError("kmeans objective increased across a Lloyd iteration");
        prev_objective = objective;
        if (!changed) break;
    }

    if (min_size) {
        std::vector<int> sizes(static_cast<size_t>(k), 0);
        for (int a : model.assignments) ++sizes[static_cast<size_t>(a)];
        while (true) {
            int deficient = -1;
            for (int c = 0; c < k; ++c)
                if (sizes[static_cast<size_t>(c)] < *min_size && (deficient < 0 || sizes[static_cast<size_t>(c)] < sizes[static_cast<size_t>(deficient)]))
                    deficient = c;
            if (deficient < 0) break;
            int best = -1;
            double best_d = 0.0;
            for (int i = 0; i < n; ++i) {
                const int a = model.assignments[static_cast<size_t>(i)];
                if (a == deficient || sizes[static_cast<size_t>(a)] <= *min_size) continue;
                const double dd = sq_dist_row(x, i, model.centroids, deficient);
                if (best < 0 || dd < best_d) {
                    best_d = dd;
                    best = i;
                }
            }
            if (best < 0) throw NumericError("kmeans: min_size constraint unsatisfiable");
            --sizes[static_cast<size_t>(model.assignments[static_cast<size_t>(best)])];
            model.assignments[static_cast<size_t>(best)] = deficient;
            ++sizes[static_cast<size_t>(deficient)];
        }
        model.centroids = Tensor({k, d});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) model.centroids(model.assignments[static_cast<size_t>(i)], j) += x(i, j);
        for (int c = 0; c < k; ++c)
            for (int j = 0; j < d; ++j) model.centroids(c, j) /= sizes[static_cast<size_t>(c)];
    }
    return model;
}

} // namespace

ClusterModel kmeans(const Tensor& x, int k, uint64_t seed, std::optional<int> min_size, int n_restarts) {
    if (x.rank() != 2) throw NumericError("kmeans requires a rank-2 matrix");
    const int n = x.rows();
    if (k < 1) throw ConfigError("kmeans requires k >= 1");
    if (k > n) throw NumericError("kmeans k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
    if (min_size && static_cast<int64_t>(*min_size) * k > n)
        throw ConfigError("min_size * k exceeds the number of points");
    if (n_restarts < 1) throw ConfigError("kmeans needs at least one restart");

    Rng base(seed);
    ClusterModel best;
    double best_objective = -1.0;
    for (int r = 0; r < n_restarts; ++r) {
        ClusterModel candidate = kmeans_once(x, k, base.fork(static_cast<uint64_t>(r)), min_size);
        const double objective = kmeans_objective(x, candidate);
        if (best_objective < 0.0 || objective < best_objective) {
            best_objective = objective;
            best = std::move(candidate);
        }
    }
    return best;
}

double kmeans_objective(const Tensor& x, const ClusterModel& model) {
    double s = 0.0;
    for (int i = 0; i < x.rows(); ++i) s += sq_dist_row(x, i, model.centroids, model.assignments[static_cast<size_t>(i)]);
    return s;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size() || a.empty()) throw NumericError("ARI requires two equal-length labelings");
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> ca, cb;
    for (size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}] += 1.0;
        ca[a[i]] += 1.0;
        cb[b[i]] += 1.0;
    }
    auto choose2 = [](double m) { return m * (m - 1.0) / 2.0; };
    double sum_joint = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& [k, v] : joint) sum_joint += choose2(v);
    for (const auto& [k, v] : ca) sum_a += choose2(v);
    for (const auto& [k, v] : cb) sum_b += choose2(v);
    const double total = choose2(static_cast<double>(a.size()));
    const double expected = sum_a * sum_b / total;
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0; // both labelings trivial
    return (sum_joint - expected) / (max_index - expected);
}

} // namespace pheno
