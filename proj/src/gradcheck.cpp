#include "pheno/gradcheck.hpp"

#include <cmath>

#include "pheno/error.hpp"

namespace pheno {

GradCheckReport grad_check(std::vector<NamedTensor>& params,
                           const std::function<double()>& loss_fn,
                           const std::vector<Tensor>& analytic_grads,
                           double h, double tol) {
    if (h <= 0.0) throw NumericError("grad_check requires h > 0");
    if (analytic_grads.size() != params.size())
        throw NumericError("grad_check: gradient count does not match parameter count");

    GradCheckReport report;
    report.tol = tol;
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& t = params[p].value;
        const Tensor& g = analytic_grads[p];
        if (!t.same_shape(g))
            throw NumericError("grad_check: gradient shape mismatch for " + params[p].name);
        GradCheckEntry entry;
        entry.name = params[p].name;
        for (int64_t i = 0; i < t.size(); ++i) {
            const double orig = t.at(i);
            t.at(i) = orig + h;
            const double lp = loss_fn();
            t.at(i) = orig - h;
            const double lm = loss_fn();
            t.at(i) = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double a = g.at(i);
            const double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 0.01});
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

} // namespace pheno
