#pragma once

#include <vector>

namespace pheno {

struct SurvivalRecord {
    double time = 0.0; // follow-up duration, > 0
    int event = 0;     // 1 = event observed, 0 = censored
    int group = 0;     // cluster / arm id
};

struct KmPoint {
    double time = 0.0;
    double survival = 1.0;
};

// Product-limit estimator over distinct event times; censored times shrink
// the risk set without adding steps. Returns one point per event time,
// nonincreasing from 1.
std::vector<KmPoint> kaplan_meier(const std::vector<SurvivalRecord>& records);

// Survival probability of the step function at time t.
double km_survival_at(const std::vector<KmPoint>& curve, double t);

struct LogrankResult {
    double chi2 = 0.0;
    double p = 1.0;
    double observed_a = 0.0; // events in the first group
    double expected_a = 0.0;
};

// Two-group log-rank test: observed-minus-expected events accumulated over
// distinct event times with hypergeometric variance; p from chi-square(1).
LogrankResult logrank_test(const std::vector<SurvivalRecord>& group_a,
                           const std::vector<SurvivalRecord>& group_b);

struct CoxResult {
    double hazard_ratio = 1.0; // group 1 vs group 0
    double ci_low = 0.0;
    double ci_high = 0.0;
    double p = 1.0;
    double beta = 0.0;
    double se = 0.0;
    int iterations = 0;
    bool monotone = false; // all events in one group: HR diverges
};

// Single-covariate Cox proportional hazards with Breslow tie handling,
// Newton-Raphson to |score| < 1e-10. 95% CI from observed information,
// p from the Wald statistic. Monotone likelihood is flagged, not reported
// as a finite estimate.
CoxResult cox_hr_binary(const std::vector<SurvivalRecord>& records);

// Upper tail of the chi-square distribution via the regularized incomplete
// gamma function.
double chi_squared_sf(double x, double df);

} // namespace pheno
