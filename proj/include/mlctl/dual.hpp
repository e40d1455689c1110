#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "detail/bounded_lsq.hpp"
#include "errors.hpp"
#include "lti.hpp"
#include "pwl.hpp"
#include "quadrature.hpp"

namespace mlctl {

// Jml:      int sum_k L_k(B_k^T p) + <x0, p(0)>
// JmlFabre: 1/2 (int sum_k L_k(B_k^T p))^2 + <x0, p(0)>
// JmlBeta:  beta int sum_k L_k(B_k^T p) + <x0, p(0)>,  beta > 1
// J2:       int |B^T p|^2 + <x0, p(0)>
// J2Fabre:  1/2 (int |B^T p|^2)^2 + <x0, p(0)>
enum class FunctionalKind { Jml, JmlFabre, JmlBeta, J2, J2Fabre };

inline const char* to_string(FunctionalKind k) {
    switch (k) {
    case FunctionalKind::Jml: return "Jml";
    case FunctionalKind::JmlFabre: return "JmlFabre";
    case FunctionalKind::JmlBeta: return "JmlBeta";
    case FunctionalKind::J2: return "J2";
    case FunctionalKind::J2Fabre: return "J2Fabre";
    }
    return "?";
}

inline std::optional<FunctionalKind> parse_functional_kind(std::string_view s) {
    for (auto k : {FunctionalKind::Jml, FunctionalKind::JmlFabre, FunctionalKind::JmlBeta, FunctionalKind::J2,
                   FunctionalKind::J2Fabre})
        if (s == to_string(k))
            return k;
    return std::nullopt;
}

inline bool is_fabre(FunctionalKind k) { return k == FunctionalKind::JmlFabre || k == FunctionalKind::J2Fabre; }
inline bool is_quadratic(FunctionalKind k) { return k == FunctionalKind::J2 || k == FunctionalKind::J2Fabre; }

struct OptimizerSettings {
    double initial_step = 1.0;
    int max_iterations = 50000;
    double tolerance = 1e-6;          // stationarity
    double improvement_tol = 1e-12;   // on the best value
    int stall_window = 200;
    int growth_streak = 10;           // consecutive improvements before doubling the step
    double divergence_threshold = 1e6;
    int divergence_window = 100;
    std::optional<double> value_lower_bound;  // enables Polyak steps
    bool keep_trace = true;
};

enum class SolveStatus { Converged, Diverged, IterationCapReached };

inline const char* to_string(SolveStatus s) {
    switch (s) {
    case SolveStatus::Converged: return "Converged";
    case SolveStatus::Diverged: return "Diverged";
    case SolveStatus::IterationCapReached: return "IterationCapReached";
    }
    return "?";
}

struct TraceEntry {
    int iteration;
    double value;
    double best_value;
    double step;
    double subgradient_norm;
};

struct SolveReport {
    SolveStatus status = SolveStatus::IterationCapReached;
    Vector p_star;
    double value = 0.0;
    int iterations = 0;
    double stationarity = kInf;
    double subgradient_norm = kInf;
    bool refined = false;  // final point came from the active-set refinement
    std::vector<TraceEntry> trace;
    std::vector<std::string> warnings;

    [[nodiscard]] bool converged() const { return status == SolveStatus::Converged; }
};

class DualProblem {
public:
    DualProblem(LtiSystem sys, std::vector<PwlConvex> penalizations, FunctionalKind kind, QuadratureGrid grid,
                OptimizerSettings optimizer = {}, double beta = 1.0)
        : sys_(std::move(sys)), pens_(std::move(penalizations)), kind_(kind), grid_(std::move(grid)),
          opt_(optimizer), beta_(beta) {
        const auto K = static_cast<std::size_t>(sys_.channels());
        if (!is_quadratic(kind_) && pens_.size() != K)
            throw DimensionError("DualProblem: need one penalization per control channel");
        if (kind_ == FunctionalKind::JmlBeta && !(beta_ > 1.0))
            throw DomainError("DualProblem: JmlBeta requires beta > 1");
        if (kind_ != FunctionalKind::JmlBeta)
            beta_ = 1.0;
        grid_.validate(sys_.horizon());

        const double T = sys_.horizon();
        const std::size_t n = grid_.size();
        phi_.assign(K, Matrix(sys_.states(), static_cast<Eigen::Index>(n)));
        for (std::size_t i = 0; i < n; ++i) {
            const Matrix EB = mat_exp(sys_.A(), T - grid_.nodes[i]) * sys_.B();
            for (std::size_t k = 0; k < K; ++k)
                phi_[k].col(static_cast<Eigen::Index>(i)) = EB.col(static_cast<Eigen::Index>(k));
        }
        free_terminal_ = mat_exp(sys_.A(), T) * sys_.x0();
        phi_max_ = 0.0;
        for (const auto& P : phi_)
            phi_max_ = std::max(phi_max_, P.colwise().norm().maxCoeff());
    }

    [[nodiscard]] const LtiSystem& system() const noexcept { return sys_; }
    [[nodiscard]] const std::vector<PwlConvex>& penalizations() const noexcept { return pens_; }
    [[nodiscard]] FunctionalKind kind() const noexcept { return kind_; }
    [[nodiscard]] const QuadratureGrid& grid() const noexcept { return grid_; }
    [[nodiscard]] const OptimizerSettings& optimizer() const noexcept { return opt_; }
    [[nodiscard]] double beta() const noexcept { return beta_; }
    [[nodiscard]] std::size_t channels() const noexcept { return phi_.size(); }
    // Columns e^{(T - t_i)A} B_k over the quadrature nodes.
    [[nodiscard]] const Matrix& input_map(std::size_t k) const { return phi_.at(k); }
    // e^{TA} x0, so that <x0, p(0)> = <free_terminal, p_T>.
    [[nodiscard]] const Vector& free_terminal() const noexcept { return free_terminal_; }
    [[nodiscard]] double input_map_bound() const noexcept { return phi_max_; }

    // B_k^T p(t_i) at every node.
    [[nodiscard]] Vector output(std::size_t k, const Vector& p_T) const {
        check(p_T);
        return phi_.at(k).transpose() * p_T;
    }

    // int sum_k L_k(B_k^T p) dt (or int |B^T p|^2 for the quadratic kinds).
    [[nodiscard]] double penalty_integral(const Vector& p_T) const {
        double s = 0.0;
        for (std::size_t k = 0; k < channels(); ++k) {
            const Vector q = output(k, p_T);
            for (std::size_t i = 0; i < grid_.size(); ++i)
                s += grid_.weights[i] * penalty(k, q[static_cast<Eigen::Index>(i)]);
        }
        return s;
    }

    [[nodiscard]] double eval_functional(const Vector& p_T) const {
        const double I = penalty_integral(p_T);
        const double lin = free_terminal_.dot(p_T);
        if (is_fabre(kind_))
            return 0.5 * I * I + lin;
        return beta_ * I + lin;
    }

    // Multiplier of the pointwise derivative selection in the optimality
    // system: 1, beta, or the penalty integral for the squared kinds.
    [[nodiscard]] double control_scale(const Vector& p_T) const {
        if (is_fabre(kind_))
            return penalty_integral(p_T);
        return beta_;
    }

    // g = scale * int s(t) e^{(T-t)A} B dt + e^{TA} x0 with s(t) in dL(B^T p(t));
    // the midpoint of the subdifferential is selected at breakpoints.
    [[nodiscard]] Vector eval_subgradient(const Vector& p_T) const {
        const double scale = control_scale(p_T);
        Vector g = free_terminal_;
        for (std::size_t k = 0; k < channels(); ++k) {
            const Vector q = output(k, p_T);
            Vector s(q.size());
            for (Eigen::Index i = 0; i < q.size(); ++i)
                s[i] = grid_.weights[static_cast<std::size_t>(i)] * derivative_selection(k, q[i]);
            g += scale * (phi_[k] * s);
        }
        return g;
    }

    // Distance from 0 to the set of subgradients obtained by letting every
    // node whose output lies within `activity_tol` of a breakpoint pick any
    // slope of that breakpoint's subdifferential.
    [[nodiscard]] double stationarity(const Vector& p_T, double activity_tol = 1e-9) const {
        if (is_quadratic(kind_))
            return eval_subgradient(p_T).norm();
        const double scale = control_scale(p_T);
        Vector g0 = free_terminal_;
        std::vector<Vector> cols;
        std::vector<double> lo, hi, x;
        for (std::size_t k = 0; k < channels(); ++k) {
            const PwlConvex& L = pens_[k];
            const auto& knots = L.breakpoints();
            const Vector q = output(k, p_T);
            for (Eigen::Index i = 0; i < q.size(); ++i) {
                const double w = grid_.weights[static_cast<std::size_t>(i)];
                const std::size_t j = L.piece_index(q[i]);
                std::size_t near = knots.size();
                double dist = kInf;
                if (j < knots.size() && std::abs(q[i] - knots[j]) < dist) {
                    near = j;
                    dist = std::abs(q[i] - knots[j]);
                }
                if (j > 0 && std::abs(q[i] - knots[j - 1]) < dist) {
                    near = j - 1;
                    dist = std::abs(q[i] - knots[j - 1]);
                }
                if (near < knots.size() && dist <= activity_tol) {
                    cols.push_back(scale * w * phi_[k].col(i));
                    lo.push_back(L.pieces()[near].slope);
                    hi.push_back(L.pieces()[near + 1].slope);
                    x.push_back(0.5 * (lo.back() + hi.back()));
                } else {
                    g0 += scale * w * derivative_selection(k, q[i]) * phi_[k].col(i);
                }
            }
        }
        if (cols.empty())
            return g0.norm();
        return detail::bounded_least_squares(g0, cols, lo, hi, x, 0.1 * opt_.tolerance);
    }

    // Candidate minimizer from the local smooth model at p_T: nodes within
    // `activity_tol` of a breakpoint are held on it, every other node keeps
    // its current piece, and the resulting (affine or quadratic) model is
    // minimized by Newton steps on the constraint set. Returns nothing when
    // the model is unbounded there. Quadratic kinds are smooth and get plain
    // Newton iterations.
    [[nodiscard]] std::optional<Vector> refine(const Vector& p_T, double activity_tol) const {
        check(p_T);
        const Eigen::Index N = sys_.states();
        const bool fabre = is_fabre(kind_);
        if (is_quadratic(kind_)) {
            Matrix W = Matrix::Zero(N, N);
            for (std::size_t k = 0; k < channels(); ++k)
                for (std::size_t i = 0; i < grid_.size(); ++i) {
                    const auto c = phi_[k].col(static_cast<Eigen::Index>(i));
                    W.noalias() += grid_.weights[i] * c * c.transpose();
                }
            Vector x = p_T;
            for (int it = 0; it < 50; ++it) {
                const Vector Wx = W * x;
                const double I = x.dot(Wx);
                const Vector g = (fabre ? 2.0 * I : 2.0 * beta_) * Wx + free_terminal_;
                const Matrix H = fabre ? Matrix(2.0 * I * W + 4.0 * Wx * Wx.transpose()) : Matrix(2.0 * beta_ * W);
                const Vector dx = H.completeOrthogonalDecomposition().solve(-g);
                x += dx;
                if (dx.norm() <= 1e-15 * (1.0 + x.norm()))
                    break;
            }
            return x;
        }

        std::vector<Vector> rows;
        std::vector<double> rhs;
        Vector a = Vector::Zero(N);
        double a0 = 0.0;
        for (std::size_t k = 0; k < channels(); ++k) {
            const PwlConvex& L = pens_[k];
            const auto& knots = L.breakpoints();
            const Vector q = output(k, p_T);
            for (Eigen::Index i = 0; i < q.size(); ++i) {
                const double w = grid_.weights[static_cast<std::size_t>(i)];
                const std::size_t j = L.piece_index(q[i]);
                std::size_t near = knots.size();
                if (j < knots.size() && std::abs(q[i] - knots[j]) <= activity_tol)
                    near = j;
                else if (j > 0 && std::abs(q[i] - knots[j - 1]) <= activity_tol)
                    near = j - 1;
                if (near < knots.size()) {
                    rows.emplace_back(phi_[k].col(i));
                    rhs.push_back(knots[near]);
                    a0 += w * L.value(knots[near]);
                } else {
                    a += w * L.pieces()[j].slope * phi_[k].col(i);
                    a0 += w * L.intercept(j);
                }
            }
        }

        Vector x = p_T;
        Matrix Z = Matrix::Identity(N, N);
        if (!rows.empty()) {
            Matrix C(static_cast<Eigen::Index>(rows.size()), N);
            Vector d(C.rows());
            for (std::size_t r = 0; r < rows.size(); ++r) {
                C.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
                d[static_cast<Eigen::Index>(r)] = rhs[r];
            }
            Eigen::JacobiSVD<Matrix> svd(C, Eigen::ComputeThinU | Eigen::ComputeFullV);
            svd.setThreshold(1e-9);
            x += svd.solve(d - C * x);
            const auto rank = svd.rank();
            Z = svd.matrixV().rightCols(N - rank);
        }
        if (Z.cols() == 0)
            return x;
        for (int it = 0; it < 20; ++it) {
            const double I = a.dot(x) + a0;
            const Vector g = (fabre ? I : beta_) * a + free_terminal_;
            const Vector gy = Z.transpose() * g;
            if (gy.norm() <= 1e-14 * (1.0 + g.norm()))
                break;
            if (!fabre)
                return std::nullopt;  // affine model with a nonzero slope: no minimizer
            const Vector za = Z.transpose() * a;
            const Matrix Hy = za * za.transpose();
            const Vector dy = Hy.completeOrthogonalDecomposition().solve(-gy);
            if (!dy.allFinite() || dy.norm() == 0.0)
                return std::nullopt;
            x += Z * dy;
        }
        return x;
    }

private:
    void check(const Vector& p_T) const {
        if (p_T.size() != sys_.states())
            throw DimensionError("DualProblem: adjoint datum has wrong dimension");
    }

    [[nodiscard]] double penalty(std::size_t k, double q) const {
        if (is_quadratic(kind_))
            return q * q;
        return pens_[k].value(q);
    }

    [[nodiscard]] double derivative_selection(std::size_t k, double q) const {
        if (is_quadratic(kind_))
            return 2.0 * q;
        return pens_[k].subdifferential(q).midpoint();
    }

    LtiSystem sys_;
    std::vector<PwlConvex> pens_;
    FunctionalKind kind_;
    QuadratureGrid grid_;
    OptimizerSettings opt_;
    double beta_;
    std::vector<Matrix> phi_;
    Vector free_terminal_;
    double phi_max_ = 0.0;
};

// ============================================================================
// Subgradient descent
// ============================================================================

namespace detail {

inline std::string dump(const Vector& v) {
    std::ostringstream os;
    os.precision(17);
    os << "[";
    for (Eigen::Index i = 0; i < v.size(); ++i)
        os << (i ? ", " : "") << v[i];
    os << "]";
    return os.str();
}

} // namespace detail

// Normalized subgradient steps c/sqrt(k) from p_T = 0. The base step c
// doubles after `growth_streak` consecutive improvements (so unbounded
// descent is found quickly) and is halved, restarting from the best point,
// whenever the best value stalls for `stall_window` iterations without the
// stationarity test passing. With a value lower bound the step is Polyak's.
inline SolveReport minimize(const DualProblem& prob) {
    const OptimizerSettings& opt = prob.optimizer();
    const LtiSystem& sys = prob.system();
    SolveReport rep;
    if (kalman_rank(sys.A(), sys.B()) < sys.states())
        rep.warnings.emplace_back("system fails the Kalman rank condition; the dual functional may not be coercive");

    Vector p = Vector::Zero(sys.states());
    double val = prob.eval_functional(p);
    Vector best = p;
    double best_val = val;
    double c = opt.initial_step;
    int k = 1;
    int streak = 0;
    int run = 0;
    int stall = 0;

    auto finite_or_throw = [&](double v, const Vector& at) {
        if (!std::isfinite(v))
            throw NumericalError("minimize: non-finite functional value at p_T = " + detail::dump(at));
    };
    finite_or_throw(val, p);

    auto stationary = [&](const Vector& at) { return prob.stationarity(at); };

    int it = 0;
    for (; it < opt.max_iterations; ++it) {
        const Vector g = prob.eval_subgradient(p);
        const double gn = g.norm();
        if (!std::isfinite(gn))
            throw NumericalError("minimize: non-finite subgradient at p_T = " + detail::dump(p));
        if (gn == 0.0) {
            best = p;
            best_val = val;
            rep.stationarity = prob.stationarity(p);
            rep.status = SolveStatus::Converged;
            break;
        }

        double step;
        if (opt.value_lower_bound)
            step = std::max(val - *opt.value_lower_bound, 0.0) / gn;
        else
            step = c / std::sqrt(static_cast<double>(k));
        if (step == 0.0) {
            rep.stationarity = stationary(best);
            rep.status = rep.stationarity <= opt.tolerance ? SolveStatus::Converged : SolveStatus::IterationCapReached;
            break;
        }
        p -= (step / gn) * g;
        val = prob.eval_functional(p);
        finite_or_throw(val, p);
        ++k;

        if (opt.keep_trace)
            rep.trace.push_back({it, val, std::min(val, best_val), step, gn});

        if (val < best_val) {
            const bool significant = best_val - val > opt.improvement_tol;
            best = p;
            best_val = val;
            ++run;
            stall = significant ? 0 : stall + 1;
            if (++streak >= opt.growth_streak && !opt.value_lower_bound) {
                c *= 2.0;
                k = 1;
                streak = 0;
            }
        } else {
            run = 0;
            streak = 0;
            ++stall;
        }

        if (best.norm() > opt.divergence_threshold && run >= opt.divergence_window) {
            rep.status = SolveStatus::Diverged;
            break;
        }

        if (stall >= opt.stall_window) {
            rep.stationarity = stationary(best);
            if (rep.stationarity <= opt.tolerance) {
                rep.status = SolveStatus::Converged;
                break;
            }
            const double act = 1e-9 + 4.0 * step * prob.input_map_bound();
            if (auto cand = prob.refine(best, act)) {
                const double cv = prob.eval_functional(*cand);
                if (std::isfinite(cv) && cv <= best_val + 1e-12 * (1.0 + std::abs(best_val))) {
                    const double cs = prob.stationarity(*cand);
                    if (cs <= opt.tolerance) {
                        best = *cand;
                        best_val = std::min(cv, best_val);
                        rep.stationarity = cs;
                        rep.refined = true;
                        rep.status = SolveStatus::Converged;
                        break;
                    }
                }
            }
            c *= 0.5;
            if (c <= 1e-15 * (1.0 + best.norm())) {
                rep.status = SolveStatus::IterationCapReached;
                break;
            }
            p = best;
            val = best_val;
            k = 1;
            stall = 0;
            streak = 0;
            run = 0;
        }
    }
    if (it >= opt.max_iterations)
        rep.stationarity = stationary(best);

    rep.iterations = it;
    rep.p_star = best;
    rep.value = best_val;
    rep.subgradient_norm = prob.eval_subgradient(best).norm();
    return rep;
}

} // namespace mlctl
