#include "pheno/survival.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "pheno/error.hpp"

namespace pheno {

namespace {

// regularized lower incomplete gamma P(a, x), series expansion (x < a + 1)
double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// regularized upper incomplete gamma Q(a, x), continued fraction (x >= a + 1)
double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw NumericError("gamma_q domain error");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_cf(a, x);
}

struct EventCounts {
    double at_risk_a = 0.0, at_risk_b = 0.0;
    double events_a = 0.0, events_b = 0.0;
};

} // namespace

double chi_squared_sf(double x, double df) {
    if (df <= 0.0) throw NumericError("chi-square df must be positive");
    if (x <= 0.0) return 1.0;
    return gamma_q(df / 2.0, x / 2.0);
}

std::vector<KmPoint> kaplan_meier(const std::vector<SurvivalRecord>& records) {
    if (records.empty()) throw NumericError("Kaplan-Meier requires a nonempty group");
    std::vector<SurvivalRecord> sorted = records;
    std::sort(sorted.begin(), sorted.end(),
              [](const SurvivalRecord& a, const SurvivalRecord& b) { return a.time < b.time; });

    std::vector<KmPoint> curve;
    double survival = 1.0;
    double at_risk = static_cast<double>(sorted.size());
    size_t i = 0;
    while (i < sorted.size()) {
        const double t = sorted[i].time;
        double events = 0.0, leaving = 0.0;
        while (i < sorted.size() && sorted[i].time == t) {
            events += sorted[i].event;
            leaving += 1.0;
            ++i;
        }
        if (events > 0.0) {
            survival *= 1.0 - events / at_risk;
            curve.push_back({t, survival});
        }
        at_risk -= leaving;
    }
    return curve;
}

double km_survival_at(const std::vector<KmPoint>& curve, double t) {
    double s = 1.0;
    for (const auto& pt : curve) {
        if (pt.time > t) break;
        s = pt.survival;
    }
    return s;
}

LogrankResult logrank_test(const std::vector<SurvivalRecord>& group_a,
                           const std::vector<SurvivalRecord>& group_b) {
    if (group_a.empty() || group_b.empty()) throw NumericError("log-rank requires two nonempty groups");

    std::map<double, EventCounts> times;
    for (const auto& r : group_a)
        if (r.event) times[r.time].events_a += 1.0;
    for (const auto& r : group_b)
        if (r.event) times[r.time].events_b += 1.0;
    if (times.empty()) throw NumericError("log-rank undefined with zero events");

    for (auto& [t, counts] : times) {
        for (const auto& r : group_a) counts.at_risk_a += r.time >= t ? 1.0 : 0.0;
        for (const auto& r : group_b) counts.at_risk_b += r.time >= t ? 1.0 : 0.0;
    }

    double observed_a = 0.0, expected_a = 0.0, variance = 0.0;
    for (const auto& [t, c] : times) {
        const double n = c.at_risk_a + c.at_risk_b;
        const double d = c.events_a + c.events_b;
        if (n <= 0.0) continue;
        observed_a += c.events_a;
        expected_a += d * c.at_risk_a / n;
        if (n > 1.0)
            variance += d * (c.at_risk_a / n) * (c.at_risk_b / n) * (n - d) / (n - 1.0);
    }

    LogrankResult result;
    result.observed_a = observed_a;
    result.expected_a = expected_a;
    if (variance > 0.0) {
        const double diff = observed_a - expected_a;
        result.chi2 = diff * diff / variance;
        result.p = chi_squared_sf(result.chi2, 1.0);
    } else {
        result.chi2 = 0.0;
        result.p = 1.0;
    }
    return result;
}

CoxResult cox_hr_binary(const std::vector<SurvivalRecord>& records) {
    double n_group[2] = {0.0, 0.0};
    double events_group[2] = {0.0, 0.0};
    for (const auto& r : records) {
        if (r.group != 0 && r.group != 1) throw NumericError("cox_hr_binary requires group ids 0 and 1");
        n_group[r.group] += 1.0;
        events_group[r.group] += r.event;
    }
    if (n_group[0] == 0.0 || n_group[1] == 0.0) throw NumericError("cox_hr_binary requires both groups");
    const double total_events = events_group[0] + events_group[1];
    if (total_events == 0.0) throw NumericError("cox_hr_binary requires at least one event");

    CoxResult result;
    if (events_group[0] == 0.0 || events_group[1] == 0.0) {
        // monotone partial likelihood: the MLE diverges
        result.monotone = true;
        result.hazard_ratio = events_group[1] > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
        result.beta = events_group[1] > 0.0 ? std::numeric_limits<double>::infinity()
                                            : -std::numeric_limits<double>::infinity();
        result.se = std::numeric_limits<double>::quiet_NaN();
        result.ci_low = std::numeric_limits<double>::quiet_NaN();
        result.ci_high = std::numeric_limits<double>::quiet_NaN();
        result.p = std::numeric_limits<double>::quiet_NaN();
        return result;
    }

    // Breslow: at each distinct event time, d events with s of them in
    // group 1, risk denominator n0 + n1 * exp(beta)
    struct TimePoint {
        double d = 0.0, s = 0.0, n0 = 0.0, n1 = 0.0;
    };
    std::map<double, TimePoint> times;
    for (const auto& r : records) {
        if (!r.event) continue;
        auto& tp = times[r.time];
        tp.d += 1.0;
        tp.s += r.group;
    }
    for (auto& [t, tp] : times) {
        for (const auto& r : records) {
            if (r.time < t) continue;
            if (r.group == 1)
                tp.n1 += 1.0;
            else
                tp.n0 += 1.0;
        }
    }

    double beta = 0.0;
    double information = 0.0;
    int iter = 0;
    for (; iter < 100; ++iter) {
        const double eb = std::exp(beta);
        double score = 0.0;
        information = 0.0;
        for (const auto& [t, tp] : times) {
            const double denom = tp.n0 + tp.n1 * eb;
            const double mean = tp.n1 * eb / denom;
            score += tp.s - tp.d * mean;
            information += tp.d * mean * (1.0 - mean);
        }
        if (std::fabs(score) < 1e-10) break;
        if (information <= 0.0) throw NumericError("cox_hr_binary: singular information matrix");
        beta += score / information;
        if (std::fabs(beta) > 30.0) {
            result.monotone = true;
            result.hazard_ratio = beta > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
            result.beta = beta;
            result.iterations = iter + 1;
            return result;
        }
    }
    if (iter == 100)
        throw NumericError("cox_hr_binary failed to converge after 100 iterations (beta=" + std::to_string(beta) +
                           ")");

    result.beta = beta;
    result.se = 1.0 / std::sqrt(information);
    result.hazard_ratio = std::exp(beta);
    result.ci_low = std::exp(beta - 1.96 * result.se);
    result.ci_high = std::exp(beta + 1.96 * result.se);
    const double wald = (beta / result.se) * (beta / result.se);
    result.p = chi_squared_sf(wald, 1.0);
    result.iterations = iter + 1;
    return result;
}

} // namespace pheno
