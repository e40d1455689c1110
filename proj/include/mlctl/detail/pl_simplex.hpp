#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "../errors.hpp"

namespace mlctl::detail {

// Convex piecewise-linear cost on [points.front(), points.back()]; slope
// slopes[s] on [points[s], points[s+1]]. `start` indexes the point the
// variable starts from (typically its minimizer).
struct PlVariable {
    std::vector<double> points;
    std::vector<double> slopes;
    std::size_t start = 0;
};

struct PlLpResult {
    enum class Status { Optimal, Infeasible, IterationCap };
    Status status = Status::IterationCap;
    std::vector<double> x;
    double residual = 0.0;
    int iterations = 0;
};

// min sum_j f_j(x_j)  s.t.  A x = b, with f_j convex piecewise linear.
// Each variable is split into one bounded variable per linear piece, which
// by convexity fill up in order; the resulting bounded LP is solved by a
// two-phase primal simplex with artificial variables, Dantzig pricing, and
// Bland's rule after a run of degenerate pivots. Dense; meant for few rows.
inline PlLpResult solve_pl_lp(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                              const std::vector<PlVariable>& vars, int max_iterations = 100000) {
    using Eigen::Index;
    const Index N = A.rows();
    const std::size_t n = vars.size();
    if (static_cast<std::size_t>(A.cols()) != n || b.size() != N)
        throw DimensionError("solve_pl_lp: inconsistent dimensions");

    std::vector<Index> owner;
    std::vector<double> cost, ub, y;
    std::vector<char> at_upper;
    std::vector<double> base(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto& v = vars[j];
        if (v.points.size() < 2 || v.slopes.size() + 1 != v.points.size() || v.start >= v.points.size())
            throw DimensionError("solve_pl_lp: malformed variable");
        base[j] = v.points.front();
        for (std::size_t s = 0; s < v.slopes.size(); ++s) {
            owner.push_back(static_cast<Index>(j));
            cost.push_back(v.slopes[s]);
            ub.push_back(v.points[s + 1] - v.points[s]);
            const bool full = s < v.start;
            y.push_back(full ? ub.back() : 0.0);
            at_upper.push_back(full ? 1 : 0);
        }
    }
    const std::size_t m = y.size();
    at_upper.resize(m + static_cast<std::size_t>(N), 0);
    const double inf = std::numeric_limits<double>::infinity();

    auto current_x = [&] {
        Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(base.data(), static_cast<Index>(n));
        for (std::size_t k = 0; k < m; ++k)
            x[owner[k]] += y[k];
        return x;
    };

    // Artificial k = m + i has column sign_i * e_i.
    Eigen::VectorXd r = b - A * current_x();
    std::vector<double> sign(static_cast<std::size_t>(N));
    std::vector<double> art(static_cast<std::size_t>(N));
    for (Index i = 0; i < N; ++i) {
        sign[static_cast<std::size_t>(i)] = r[i] >= 0.0 ? 1.0 : -1.0;
        art[static_cast<std::size_t>(i)] = std::abs(r[i]);
    }
    std::vector<std::size_t> basis(static_cast<std::size_t>(N));
    std::vector<int> pos(m + static_cast<std::size_t>(N), -1);
    for (Index i = 0; i < N; ++i) {
        basis[static_cast<std::size_t>(i)] = m + static_cast<std::size_t>(i);
        pos[m + static_cast<std::size_t>(i)] = static_cast<int>(i);
    }

    const double bscale = 1.0 + b.lpNorm<Eigen::Infinity>();
    int phase = 1;
    int degenerate_run = 0;

    auto column = [&](std::size_t k) -> Eigen::VectorXd {
        if (k < m)
            return A.col(owner[k]);
        Eigen::VectorXd e = Eigen::VectorXd::Zero(N);
        e[static_cast<Index>(k - m)] = sign[k - m];
        return e;
    };
    auto phase_cost = [&](std::size_t k) {
        if (phase == 1)
            return k < m ? 0.0 : 1.0;
        return k < m ? cost[k] : 0.0;
    };
    auto upper = [&](std::size_t k) {
        if (k < m)
            return ub[k];
        return phase == 1 ? inf : 0.0;
    };
    auto value = [&](std::size_t k) -> double& { return k < m ? y[k] : art[k - m]; };

    PlLpResult out;
    int it = 0;
    for (; it < max_iterations; ++it) {
        Eigen::MatrixXd Bm(N, N);
        for (Index i = 0; i < N; ++i)
            Bm.col(i) = column(basis[static_cast<std::size_t>(i)]);
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(Bm);

        // basic values from the nonbasic ones
        Eigen::VectorXd rhs = b - A * Eigen::Map<const Eigen::VectorXd>(base.data(), static_cast<Index>(n));
        for (std::size_t k = 0; k < m; ++k)
            if (pos[k] < 0 && y[k] != 0.0)
                rhs -= y[k] * A.col(owner[k]);
        const Eigen::VectorXd xB = lu.solve(rhs);
        for (Index i = 0; i < N; ++i)
            value(basis[static_cast<std::size_t>(i)]) = xB[i];

        Eigen::VectorXd cB(N);
        for (Index i = 0; i < N; ++i)
            cB[i] = phase_cost(basis[static_cast<std::size_t>(i)]);
        const Eigen::VectorXd pi = Bm.transpose().partialPivLu().solve(cB);
        const Eigen::VectorXd apis = A.transpose() * pi;
        const double pin = pi.norm();

        // pricing
        const bool bland = degenerate_run > 50;
        std::size_t enter = m + static_cast<std::size_t>(N);
        double best = 0.0;
        auto consider = [&](std::size_t k, double d, double colnorm) {
            if (pos[k] >= 0)
                return;
            const double tol = 1e-11 * (std::abs(phase_cost(k)) + colnorm * pin) + 1e-300;
            const bool up = k < m && at_upper[k];
            double gain = 0.0;
            if (!up && d < -tol && upper(k) > 0.0)
                gain = -d;
            else if (up && d > tol)
                gain = d;
            if (gain <= 0.0)
                return;
            if (bland) {
                if (enter == m + static_cast<std::size_t>(N))
                    enter = k;
            } else if (gain / (colnorm + 1e-300) > best) {
                best = gain / (colnorm + 1e-300);
                enter = k;
            }
        };
        std::vector<double> colnorm(n);
        for (std::size_t j = 0; j < n; ++j)
            colnorm[j] = A.col(static_cast<Index>(j)).norm();
        for (std::size_t k = 0; k < m; ++k)
            consider(k, phase_cost(k) - apis[owner[k]], colnorm[static_cast<std::size_t>(owner[k])]);
        if (phase == 1)
            for (Index i = 0; i < N; ++i)
                consider(m + static_cast<std::size_t>(i), 1.0 - sign[static_cast<std::size_t>(i)] * pi[i], 1.0);

        if (enter == m + static_cast<std::size_t>(N)) {
            if (phase == 1) {
                double infeas = 0.0;
                for (double a : art)
                    infeas += a;
                if (infeas > 1e-9 * bscale) {
                    out.status = PlLpResult::Status::Infeasible;
                    break;
                }
                phase = 2;
                degenerate_run = 0;
                continue;
            }
            out.status = PlLpResult::Status::Optimal;
            break;
        }

        const bool from_upper = enter < m && at_upper[enter];
        const double dir = from_upper ? -1.0 : 1.0;
        const Eigen::VectorXd delta = lu.solve(column(enter));
        const double piv = 1e-11 * (delta.lpNorm<Eigen::Infinity>() + 1e-300);

        double theta = upper(enter);
        int leave = -1;
        bool leave_to_upper = false;
        for (Index i = 0; i < N; ++i) {
            const double rate = -dir * delta[i];
            const std::size_t bk = basis[static_cast<std::size_t>(i)];
            const double xv = value(bk);
            double lim = inf;
            bool to_up = false;
            if (rate < -piv)
                lim = std::max(xv, 0.0) / -rate;
            else if (rate > piv && std::isfinite(upper(bk))) {
                lim = std::max(upper(bk) - xv, 0.0) / rate;
                to_up = true;
            }
            const bool better = lim < theta ||
                                (lim == theta && leave >= 0 &&
                                 (bland ? bk < basis[static_cast<std::size_t>(leave)]
                                        : std::abs(delta[i]) > std::abs(delta[leave])));
            if (better) {
                theta = lim;
                leave = static_cast<int>(i);
                leave_to_upper = to_up;
            }
        }
        if (!std::isfinite(theta))
            throw NumericalError("solve_pl_lp: unbounded direction");
        degenerate_run = theta <= 1e-15 * bscale ? degenerate_run + 1 : 0;

        value(enter) += dir * theta;
        if (leave < 0) {
            at_upper[enter] = from_upper ? 0 : 1;
            value(enter) = from_upper ? 0.0 : upper(enter);
            continue;
        }
        const std::size_t lk = basis[static_cast<std::size_t>(leave)];
        pos[lk] = -1;
        if (lk < m) {
            at_upper[lk] = leave_to_upper ? 1 : 0;
            y[lk] = leave_to_upper ? ub[lk] : 0.0;
        } else {
            art[lk - m] = 0.0;
        }
        basis[static_cast<std::size_t>(leave)] = enter;
        pos[enter] = leave;
    }
    out.iterations = it;

    // Basic values were refreshed at the top of the last iteration; snap
    // them into their bounds before reporting.
    for (std::size_t k = 0; k < m; ++k)
        y[k] = std::clamp(y[k], 0.0, ub[k]);
    const Eigen::VectorXd x = current_x();
    out.x.assign(x.data(), x.data() + x.size());
    out.residual = (A * x - b).norm();
    return out;
}

} // namespace mlctl::detail
