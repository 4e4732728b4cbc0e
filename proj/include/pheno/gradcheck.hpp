#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pheno/tensor.hpp"

namespace pheno {

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tol = 0.0;
    double max_rel_err = 0.0;
    bool pass = true;
};

// Compares analytic gradients against central finite differences
// (loss(p+h) - loss(p-h)) / 2h for every entry of every parameter tensor.
// Relative error uses a scale floor: |a-f| / max(|a|, |f|, 0.01), so
// near-zero gradients are compared at absolute scale 0.01.
//
// `loss_fn` evaluates the loss at the current parameter values and must be
// deterministic (no dropout randomness between calls). `analytic_grads`
// holds one gradient tensor per parameter, aligned with `params`.
// An empty parameter set yields an empty passing report.
GradCheckReport grad_check(std::vector<NamedTensor>& params,
                           const std::function<double()>& loss_fn,
                           const std::vector<Tensor>& analytic_grads,
                           double h, double tol);

} // namespace pheno
