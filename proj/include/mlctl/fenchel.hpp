#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "detail/pl_simplex.hpp"
#include "dual.hpp"
#include "errors.hpp"
#include "lti.hpp"
#include "pwl.hpp"
#include "solvable.hpp"

namespace mlctl {

// Discretized primal problem
//   min  sum_i w_i sum_k L_k*(v_{k,i})   s.t.  sum_{k,i} w_i e^{(T-t_i)A} B_k v_{k,i} = -e^{TA} x0,
// on the nodes of a dual problem's quadrature grid.
struct DiscretePrimal {
    std::vector<double> nodes;
    std::vector<double> weights;
    Matrix G;  // N x (K n): column k n + i is w_i e^{(T - t_i)A} B_k
    Vector c;  // -e^{TA} x0
    std::vector<PwlConvex> conjugates;
    // scalar single-channel data for the infeasibility message
    std::optional<SolvableBoundReport> solvable;

    [[nodiscard]] std::size_t size() const noexcept { return nodes.size(); }
    [[nodiscard]] std::size_t channels() const noexcept { return conjugates.size(); }
};

// Built from the system, penalizations and grid of a Jml or JmlBeta problem;
// nothing is taken from any dual solution.
inline DiscretePrimal make_discrete_primal(const DualProblem& prob) {
    if (prob.kind() != FunctionalKind::Jml && prob.kind() != FunctionalKind::JmlBeta)
        throw PreconditionError("make_discrete_primal: only the Jml and JmlBeta kinds have a linear dual pairing");
    const auto& sys = prob.system();
    const auto& q = prob.grid();
    DiscretePrimal dp;
    dp.nodes = q.nodes;
    dp.weights = q.weights;
    const std::size_t n = q.size();
    const std::size_t K = prob.channels();
    dp.G.resize(sys.states(), static_cast<Eigen::Index>(n * K));
    for (std::size_t i = 0; i < n; ++i) {
        const Matrix EB = mat_exp(sys.A(), sys.horizon() - q.nodes[i]) * sys.B();
        for (std::size_t k = 0; k < K; ++k)
            dp.G.col(static_cast<Eigen::Index>(k * n + i)) = q.weights[i] * EB.col(static_cast<Eigen::Index>(k));
    }
    dp.c = -(mat_exp(sys.A(), sys.horizon()) * sys.x0());
    for (const auto& L : prob.penalizations())
        dp.conjugates.push_back(conjugate(prob.beta() == 1.0 ? L : scaled(L, prob.beta())));
    if (K == 1)
        dp.solvable = solvable_bound(sys, prob.penalizations()[0], prob.beta(), n);
    return dp;
}

enum class PrimalStatus { Optimal, Infeasible, IterationCap };

inline const char* to_string(PrimalStatus s) {
    switch (s) {
    case PrimalStatus::Optimal: return "Optimal";
    case PrimalStatus::Infeasible: return "Infeasible";
    case PrimalStatus::IterationCap: return "IterationCap";
    }
    return "?";
}

struct PrimalSolution {
    PrimalStatus status = PrimalStatus::IterationCap;
    std::vector<std::vector<double>> v;  // v[k][i]
    double objective = 0.0;              // sum_i w_i sum_k L_k*(v_{k,i})
    double residual = 0.0;               // |G v - c|
    int iterations = 0;
    std::string message;
};

struct PrimalOptions {
    int max_iterations = 100000;
    // Adds tie_break * w_i * v_{k,i} to the cost. Zero solves the problem as
    // stated; a tiny positive value selects, among several optimal controls,
    // the one with the least integral.
    double tie_break = 0.0;
};

// Exact solution of the piecewise-linear program by the bounded simplex in
// detail/pl_simplex.hpp. Every variable starts at the minimizer of L_k*
// closest to 0 (0 itself when L_k* is flat around it), so a zero initial
// state yields the zero control with no pivots.
inline PrimalSolution solve_primal(const DiscretePrimal& dp, const PrimalOptions& opt = {}) {
    const std::size_t n = dp.size();
    std::vector<detail::PlVariable> vars;
    vars.reserve(n * dp.channels());
    for (std::size_t k = 0; k < dp.channels(); ++k) {
        const PwlConvex& Ls = dp.conjugates[k];
        if (!std::isfinite(Ls.domain_lo()) || !std::isfinite(Ls.domain_hi()))
            throw PreconditionError("solve_primal: conjugate penalization must have a bounded domain");
        std::vector<double> pts{Ls.domain_lo()};
        pts.insert(pts.end(), Ls.breakpoints().begin(), Ls.breakpoints().end());
        pts.push_back(Ls.domain_hi());
        std::vector<double> slopes;
        for (const auto& p : Ls.pieces())
            slopes.push_back(p.slope);
        // the minimizer set is where the slope changes sign; use 0 if it lies inside it
        std::size_t best = 0;
        for (std::size_t i = 1; i < pts.size(); ++i)
            if (Ls.value(pts[i]) < Ls.value(pts[best]) ||
                (Ls.value(pts[i]) == Ls.value(pts[best]) && std::abs(pts[i]) < std::abs(pts[best])))
                best = i;
        const double z = 0.0;
        if (z > pts.front() && z < pts.back() && std::abs(Ls.value(z) - Ls.value(pts[best])) <= 1e-15 &&
            std::find(pts.begin(), pts.end(), z) == pts.end()) {
            const std::size_t j = Ls.piece_index(z);
            pts.insert(pts.begin() + static_cast<std::ptrdiff_t>(j + 1), z);
            slopes.insert(slopes.begin() + static_cast<std::ptrdiff_t>(j), slopes[j]);
            best = j + 1;
        }
        for (std::size_t i = 0; i < n; ++i) {
            detail::PlVariable v{pts, slopes, best};
            for (double& s : v.slopes)
                s = dp.weights[i] * (s + opt.tie_break);
            vars.push_back(std::move(v));
        }
    }

    const auto lp = detail::solve_pl_lp(dp.G, dp.c, vars, opt.max_iterations);
    PrimalSolution out;
    out.iterations = lp.iterations;
    out.residual = lp.residual;
    out.v.assign(dp.channels(), std::vector<double>(n));
    out.objective = 0.0;
    for (std::size_t k = 0; k < dp.channels(); ++k)
        for (std::size_t i = 0; i < n; ++i) {
            const double vi = std::clamp(lp.x[k * n + i], dp.conjugates[k].domain_lo(), dp.conjugates[k].domain_hi());
            out.v[k][i] = vi;
            out.objective += dp.weights[i] * dp.conjugates[k].value(vi);
        }
    switch (lp.status) {
    case detail::PlLpResult::Status::Optimal:
        out.status = PrimalStatus::Optimal;
        if (out.residual > 1e-8 * (1.0 + dp.c.norm()))
            throw NumericalError("solve_primal: optimal basis violates the terminal constraint");
        break;
    case detail::PlLpResult::Status::Infeasible:
        out.status = PrimalStatus::Infeasible;
        out.message = "terminal constraint unreachable with controls inside the conjugate's domain";
        if (dp.solvable) {
            const auto& s = *dp.solvable;
            out.message += "; necessary bound |x0| <= sigma_bar * |e^{-tA}B|_L2: " + std::to_string(s.x0_norm) +
                           (s.passes ? " <= " : " > ") + std::to_string(s.bound);
        }
        break;
    case detail::PlLpResult::Status::IterationCap:
        out.status = PrimalStatus::IterationCap;
        out.message = "simplex iteration cap reached";
        break;
    }
    return out;
}

struct DualityGap {
    double gap;
    double primal;
    double dual;
};

// gap = primal + dual. The classical Fenchel-Rockafellar identity reads
// inf primal = -inf dual, so the sum is nonnegative for every feasible pair
// (weak duality) and vanishes at optimality.
inline DualityGap duality_gap(const PrimalSolution& primal, const Vector& p_T, const DualProblem& prob) {
    const auto& q = prob.grid();
    if (primal.v.size() != prob.channels() || primal.v.empty() || primal.v[0].size() != q.size())
        throw DimensionError("duality_gap: primal and dual grids differ");
    const DiscretePrimal ref = make_discrete_primal(prob);
    double obj = 0.0;
    for (std::size_t k = 0; k < prob.channels(); ++k)
        for (std::size_t i = 0; i < q.size(); ++i)
            obj += q.weights[i] * ref.conjugates[k].value(primal.v[k][i]);
    const double dual = prob.eval_functional(p_T);
    return {obj + dual, obj, dual};
}

// Fraction of (channel, node) pairs with B_k^T p(t_i) in dL_k*(v_{k,i}), up to `slack`.
inline double optimality_fraction(const PrimalSolution& primal, const Vector& p_T, const DualProblem& prob,
                                  double slack = 1e-6) {
    const DiscretePrimal ref = make_discrete_primal(prob);
    std::size_t ok = 0, total = 0;
    for (std::size_t k = 0; k < prob.channels(); ++k) {
        const Vector qk = prob.output(k, p_T);
        for (std::size_t i = 0; i < ref.size(); ++i) {
            ++total;
            const auto sd = ref.conjugates[k].subdifferential(primal.v[k][i]);
            if (sd.contains(qk[static_cast<Eigen::Index>(i)], slack))
                ++ok;
        }
    }
    return total ? static_cast<double>(ok) / static_cast<double>(total) : 1.0;
}

} // namespace mlctl
