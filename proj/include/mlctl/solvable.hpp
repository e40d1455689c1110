#pragma once

#include <algorithm>
#include <cmath>

#include "errors.hpp"
#include "lti.hpp"
#include "pwl.hpp"
#include "quadrature.hpp"

namespace mlctl {

struct SolvableBoundReport {
    double sigma_bar = 0.0;  // largest admissible level in magnitude
    double gram_norm = 0.0;  // || e^{-tA} B ||_{L2(0,T)}
    double bound = 0.0;
    double x0_norm = 0.0;
    bool passes = false;
};

// || e^{-tA} B ||_{L2(0,T)} for a single column B: trapezoid rule with the
// first Euler-Maclaurin end correction, using f(t) = |e^{-tA}B|^2 and
// f'(t) = -2 v^T A v, v = e^{-tA}B.
inline double gram_norm(const Matrix& A, const Matrix& B, double T, std::size_t points = 4000) {
    if (B.cols() != 1)
        throw DimensionError("gram_norm: only single-channel systems are supported");
    const auto q = QuadratureGrid::trapezoid(T, points);
    const double h = T / static_cast<double>(points - 1);
    const double trap = q.integrate([&](double t) { return (mat_exp(A, -t) * B).squaredNorm(); });
    auto df = [&](double t) {
        const Vector v = mat_exp(A, -t) * B;
        return -2.0 * v.dot(A * v);
    };
    const double integral = trap - h * h / 12.0 * (df(T) - df(0.0));
    return std::sqrt(std::max(integral, 0.0));
}

// Necessary condition for null-controllability with levels bounded by
// sigma_bar: |x0| <= sigma_bar * || e^{-tA} B ||_{L2(0,T)}. `level_scale`
// multiplies the slopes (beta, or the realized scale of a squared kind).
inline SolvableBoundReport solvable_bound(const LtiSystem& sys, const PwlConvex& L, double level_scale = 1.0,
                                          std::size_t points = 4000) {
    if (sys.channels() != 1)
        throw DimensionError("solvable_bound: only single-channel systems are supported");
    SolvableBoundReport r;
    for (const auto& p : L.pieces())
        r.sigma_bar = std::max(r.sigma_bar, std::abs(p.slope));
    r.sigma_bar *= std::abs(level_scale);
    r.gram_norm = gram_norm(sys.A(), sys.B(), sys.horizon(), points);
    r.bound = r.sigma_bar * r.gram_norm;
    r.x0_norm = sys.x0().norm();
    r.passes = r.x0_norm <= r.bound;
    return r;
}

} // namespace mlctl
