#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dgdata/nn.hpp"

namespace dgdata::testsupport {

struct GradCheckReport {
    double max_err = 0.0; // |analytic - fd| / max(|analytic|, |fd|, 1e-3)
    long long checked = 0;
    bool ok = true;
};

// Central finite differences against the analytic gradients. `eval(true)` must
// zero the gradients, run forward + backward on a fresh tape, and return the
// loss; `eval(false)` only evaluates the loss. Both must be deterministic
// functions of the parameter values (fix any rng seed inside).
inline GradCheckReport finite_difference_check(const std::vector<Parameter*>& params,
                                               const std::function<double(bool)>& eval,
                                               double h = 1e-5, double tol = 1e-4,
                                               double abs_floor = 1e-7) {
    GradCheckReport report;
    eval(true);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->grad.data);

    for (size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        for (size_t k = 0; k < p->value.data.size(); ++k) {
            double saved = p->value.data[k];
            p->value.data[k] = saved + h;
            double f_plus = eval(false);
            p->value.data[k] = saved - h;
            double f_minus = eval(false);
            p->value.data[k] = saved;
            double fd = (f_plus - f_minus) / (2.0 * h);
            double a = analytic[pi][k];
            double denom = std::max({std::abs(a), std::abs(fd), 1e-3});
            double err = std::abs(a - fd) / denom;
            report.max_err = std::max(report.max_err, err);
            if (std::abs(a - fd) > tol * std::max(std::abs(a), std::abs(fd)) + abs_floor) {
                report.ok = false;
            }
            ++report.checked;
        }
    }
    return report;
}

// Shift values away from zero so ReLU and max-pool kinks stay clear of the
// finite-difference probes.
inline void avoid_kinks(Tensor& t, double margin = 0.05) {
    for (double& v : t.data) {
        if (std::abs(v) < margin) v += (v >= 0.0 ? margin : -margin);
    }
}

} // namespace dgdata::testsupport
