#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace mlctl::detail {

// min || r0 + sum_j x_j a_j ||  subject to  lo_j <= x_j <= hi_j
// by cyclic coordinate descent. Bounds may be infinite. `x` holds the start
// point on entry and the final point on exit; returns the residual norm.
// Stops once the residual drops below `target` or a sweep changes nothing.
inline double bounded_least_squares(const Eigen::VectorXd& r0, const std::vector<Eigen::VectorXd>& cols,
                                    const std::vector<double>& lo, const std::vector<double>& hi,
                                    std::vector<double>& x, double target = 0.0, int max_sweeps = 5000) {
    Eigen::VectorXd r = r0;
    for (std::size_t j = 0; j < cols.size(); ++j)
        r += x[j] * cols[j];
    std::vector<double> sq(cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j)
        sq[j] = cols[j].squaredNorm();

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        if (r.norm() <= target)
            break;
        double moved = 0.0;
        for (std::size_t j = 0; j < cols.size(); ++j) {
            if (sq[j] == 0.0)
                continue;
            const double xn = std::clamp(x[j] - cols[j].dot(r) / sq[j], lo[j], hi[j]);
            const double d = xn - x[j];
            if (d != 0.0) {
                r += d * cols[j];
                x[j] = xn;
                moved = std::max(moved, std::abs(d) * std::sqrt(sq[j]));
            }
        }
        if (moved <= 1e-15 * (1.0 + r.norm()))
            break;
    }
    return r.norm();
}

} // namespace mlctl::detail
