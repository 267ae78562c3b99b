#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace pathalign {

// Central-difference check of an analytic gradient. Returns
// max_i |g_analytic[i] - g_fd[i]| / max(1, |g_fd[i]|).
inline double finite_diff_check(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> analytic_grad,
                                std::span<const double> point,
                                double eps = 1e-5) {
    std::vector<double> x(point.begin(), point.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + eps;
        const double fp = f(x);
        x[i] = saved - eps;
        const double fm = f(x);
        x[i] = saved;
        const double g_fd = (fp - fm) / (2.0 * eps);
        const double rel = std::abs(analytic_grad[i] - g_fd) / std::max(1.0, std::abs(g_fd));
        worst = std::max(worst, rel);
    }
    return worst;
}

// Same check restricted to an evenly strided coordinate subset; keeps large
// parameter tensors (embedding tables, projection heads) checkable without a
// quadratic blowup in function evaluations.
inline double finite_diff_check_sampled(const std::function<double(std::span<const double>)>& f,
                                        std::span<const double> analytic_grad,
                                        std::span<const double> point, std::size_t max_coords,
                                        double eps = 1e-5) {
    std::vector<double> x(point.begin(), point.end());
    const std::size_t stride = std::max<std::size_t>(1, x.size() / std::max<std::size_t>(1, max_coords));
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); i += stride) {
        const double saved = x[i];
        x[i] = saved + eps;
        const double fp = f(x);
        x[i] = saved - eps;
        const double fm = f(x);
        x[i] = saved;
        const double g_fd = (fp - fm) / (2.0 * eps);
        const double rel = std::abs(analytic_grad[i] - g_fd) / std::max(1.0, std::abs(g_fd));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace pathalign
