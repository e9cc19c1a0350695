#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace acvae {

// Scalar loss over a flat parameter vector. When grad is non-null the
// callee must fill it with the analytic gradient.
using FlatFn = std::function<double(const std::vector<double>&, std::vector<double>* grad)>;

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Central finite differences with h = 1e-5 * max(1, |theta_i|) against the
// analytic gradient. Relative error uses max(|a|, |n|, 1e-4) as denominator
// so near-zero gradients are compared on an absolute scale.
inline GradCheckResult gradient_check(const FlatFn& f, const std::vector<double>& theta0) {
    std::vector<double> grad(theta0.size(), 0.0);
    f(theta0, &grad);

    GradCheckResult res;
    std::vector<double> theta = theta0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double h = 1e-5 * std::max(1.0, std::abs(theta0[i]));
        theta[i] = theta0[i] + h;
        double up = f(theta, nullptr);
        theta[i] = theta0[i] - h;
        double down = f(theta, nullptr);
        theta[i] = theta0[i];
        double numeric = (up - down) / (2.0 * h);
        double denom = std::max({std::abs(grad[i]), std::abs(numeric), 1e-4});
        double err = std::abs(grad[i] - numeric) / denom;
        if (err > res.max_rel_err) {
            res.max_rel_err = err;
            res.worst_index = i;
            res.analytic = grad[i];
            res.numeric = numeric;
        }
    }
    return res;
}

} // namespace acvae
