#ifndef XNAS_TESTS_GRADCHECK_HPP
#define XNAS_TESTS_GRADCHECK_HPP

// Central finite-difference oracle for gradient checks. Independent of the
// reverse-mode path: it only calls the forward function.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "xnas/tensor.hpp"

namespace xnas::testing {

struct GradCheckResult {
    bool ok = true;
    double worst_rel = 0.0;
    std::string detail;
};

inline double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

// Checks d loss / d inputs[target] against central differences. The forward
// callable must rebuild the whole graph from current leaf values and return a
// scalar loss tensor.
inline GradCheckResult check_gradient(const std::function<Tensor()>& forward, Tensor& target,
                                      double step = 1e-5, double tol = 1e-5) {
    GradCheckResult res;

    target.zero_grad();
    Tensor loss = forward();
    backward(loss);
    std::vector<double> analytic = target.grad();

    auto& vals = target.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double orig = vals[i];
        const double h = step * std::max(1.0, std::fabs(orig));
        vals[i] = orig + h;
        const double fp = forward().item();
        vals[i] = orig - h;
        const double fm = forward().item();
        vals[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double e = rel_err(fd, analytic[i]);
        if (e > res.worst_rel) res.worst_rel = e;
        if (e > tol) {
            res.ok = false;
            res.detail = "index " + std::to_string(i) + ": analytic " +
                         std::to_string(analytic[i]) + " vs fd " + std::to_string(fd);
        }
    }
    return res;
}

}  // namespace xnas::testing

#endif
