#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace mlctl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ============================================================================
// Plant description
// ============================================================================

// x'(t) = A x(t) + B u(t), x(0) = x0, t in [0, T].
// Columns of B are the control channels.
class LtiSystem {
public:
    LtiSystem(Matrix A, Matrix B, Vector x0, double horizon)
        : A_(std::move(A)), B_(std::move(B)), x0_(std::move(x0)), horizon_(horizon) {
        const auto n = A_.rows();
        if (n < 1 || A_.cols() != n)
            throw DimensionError("LtiSystem: A must be square with at least one row");
        if (B_.rows() != n || B_.cols() < 1)
            throw DimensionError("LtiSystem: B must have N rows and at least one column");
        if (x0_.size() != n)
            throw DimensionError("LtiSystem: x0 must have N entries");
        if (!(horizon_ > 0.0) || !std::isfinite(horizon_))
            throw DomainError("LtiSystem: horizon T must be positive and finite");
        if (!A_.allFinite() || !B_.allFinite() || !x0_.allFinite())
            throw DomainError("LtiSystem: A, B and x0 must be finite");
    }

    [[nodiscard]] const Matrix& A() const noexcept { return A_; }
    [[nodiscard]] const Matrix& B() const noexcept { return B_; }
    [[nodiscard]] const Vector& x0() const noexcept { return x0_; }
    [[nodiscard]] double horizon() const noexcept { return horizon_; }
    [[nodiscard]] Eigen::Index states() const noexcept { return A_.rows(); }
    [[nodiscard]] Eigen::Index channels() const noexcept { return B_.cols(); }

    [[nodiscard]] LtiSystem with_initial_state(Vector x0) const { return {A_, B_, std::move(x0), horizon_}; }
    [[nodiscard]] LtiSystem with_horizon(double T) const { return {A_, B_, x0_, T}; }

private:
    Matrix A_;
    Matrix B_;
    Vector x0_;
    double horizon_;
};

// Sampled state path. states[i] = x(grid[i]).
struct Trajectory {
    std::vector<double> grid;
    std::vector<Vector> states;

    [[nodiscard]] const Vector& terminal() const { return states.back(); }
};

// ============================================================================
// Matrix exponential
// ============================================================================

namespace detail {

inline double norm1(const Matrix& M) {
    return M.cwiseAbs().colwise().sum().maxCoeff();
}

} // namespace detail

// e^{tA} by scaling and squaring with a diagonal [6/6] Pade kernel.
// The scaled argument satisfies ||tA / 2^s||_1 <= 1/2, where the kernel's
// truncation error is below 1e-16; total relative error stays near 1e-14 for
// ||tA|| <= 10.
inline Matrix mat_exp(const Matrix& A, double t = 1.0) {
    if (A.rows() != A.cols())
        throw DimensionError("mat_exp: matrix must be square");
    if (!std::isfinite(t))
        throw DomainError("mat_exp: t must be finite");
    const auto n = A.rows();
    if (n == 0)
        return Matrix(0, 0);

    Matrix X = t * A;
    const double nrm = detail::norm1(X);
    if (!std::isfinite(nrm))
        throw NumericalError("mat_exp: non-finite input");
    int squarings = 0;
    if (nrm > 0.5) {
        squarings = static_cast<int>(std::ceil(std::log2(nrm / 0.5)));
        X /= std::ldexp(1.0, squarings);
    }

    static constexpr double c[] = {1.0,
                                   1.0 / 2.0,
                                   5.0 / 44.0,
                                   1.0 / 66.0,
                                   1.0 / 792.0,
                                   1.0 / 15840.0,
                                   1.0 / 665280.0};
    const Matrix I = Matrix::Identity(n, n);
    const Matrix X2 = X * X;
    const Matrix X4 = X2 * X2;
    const Matrix X6 = X4 * X2;
    const Matrix even = c[0] * I + c[2] * X2 + c[4] * X4 + c[6] * X6;
    const Matrix odd = X * (c[1] * I + c[3] * X2 + c[5] * X4);
    Matrix R = (even - odd).partialPivLu().solve(even + odd);
    for (int k = 0; k < squarings; ++k)
        R = R * R;
    if (!R.allFinite())
        throw NumericalError("mat_exp: overflow");
    return R;
}

// Blocks of the exact one-step map for x' = Ax + Bu with u affine on [0,h]:
//   x(h) = E x(0) + G0 u(0) + G1 u'
// E = e^{hA}, G0 = int_0^h e^{sA} B ds, G1 = int_0^h e^{(h-s)A} B s ds.
struct StepMap {
    Matrix E;
    Matrix G0;
    Matrix G1;
};

inline StepMap step_map(const Matrix& A, const Matrix& B, double h) {
    const auto n = A.rows();
    const auto k = B.cols();
    Matrix M = Matrix::Zero(n + 2 * k, n + 2 * k);
    M.topLeftCorner(n, n) = A;
    M.block(0, n, n, k) = B;
    M.block(n, n + k, k, k) = Matrix::Identity(k, k);
    const Matrix F = mat_exp(M, h);
    return {F.topLeftCorner(n, n), F.block(0, n, n, k), F.block(0, n + k, n, k)};
}

// int_a^b e^{(T-t)A} B dt: the terminal-state response to a unit constant
// input held on [a,b].
inline Matrix input_response(const Matrix& A, const Matrix& B, double T, double a, double b) {
    const StepMap m = step_map(A, B, b - a);
    return mat_exp(A, T - b) * m.G0;
}

// ============================================================================
// Structural tests
// ============================================================================

inline Matrix controllability_matrix(const Matrix& A, const Matrix& B) {
    if (A.rows() != A.cols() || B.rows() != A.rows())
        throw DimensionError("controllability_matrix: inconsistent A, B");
    const auto n = A.rows();
    const auto k = B.cols();
    Matrix C(n, n * k);
    Matrix block = B;
    for (Eigen::Index i = 0; i < n; ++i) {
        C.middleCols(i * k, k) = block;
        block = A * block;
    }
    return C;
}

// Numerical rank of [B | AB | ... | A^{N-1}B]; singular values below
// 1e-10 * sigma_max count as zero.
inline int kalman_rank(const Matrix& A, const Matrix& B, double rel_tol = 1e-10) {
    const Matrix C = controllability_matrix(A, B);
    Eigen::JacobiSVD<Matrix> svd(C);
    const Vector& s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0)
        return 0;
    const double cut = rel_tol * s(0);
    return static_cast<int>((s.array() > cut).count());
}

inline bool is_controllable(const Matrix& A, const Matrix& B) {
    return kalman_rank(A, B) == A.rows();
}

enum class Dynamics { Conservative, Dissipative, General };

inline const char* to_string(Dynamics d) {
    switch (d) {
    case Dynamics::Conservative: return "conservative";
    case Dynamics::Dissipative: return "dissipative";
    case Dynamics::General: return "general";
    }
    return "?";
}

// Conservative: A = -A^T (max-abs entry of A + A^T below symmetric_tol).
// Dissipative: spectral abscissa (largest real part of the spectrum) below
// -abscissa_tol.
inline Dynamics classify_dynamics(const Matrix& A, double symmetric_tol = 1e-12, double abscissa_tol = 1e-10) {
    if (A.rows() != A.cols())
        throw DimensionError("classify_dynamics: A must be square");
    if ((A + A.transpose()).cwiseAbs().maxCoeff() <= symmetric_tol)
        return Dynamics::Conservative;
    Eigen::EigenSolver<Matrix> es(A, false);
    if (es.info() != Eigen::Success)
        throw NumericalError("classify_dynamics: eigenvalue computation failed");
    if (es.eigenvalues().real().maxCoeff() < -abscissa_tol)
        return Dynamics::Dissipative;
    return Dynamics::General;
}

// ============================================================================
// Adjoint and forward evolution
// ============================================================================

// p(t) = e^{(T-t)A^T} p_T, the solution of -p' = A^T p with p(T) = p_T.
inline Vector adjoint_state(const LtiSystem& sys, const Vector& p_T, double t) {
    if (p_T.size() != sys.states())
        throw DimensionError("adjoint_state: p_T must have N entries");
    const double T = sys.horizon();
    if (!(t >= 0.0 && t <= T))
        throw DomainError("adjoint_state: t outside [0, T]");
    return mat_exp(sys.A().transpose(), T - t) * p_T;
}

template <class C>
concept ControlSignal = requires(const C& u, double t) {
    { u(t) } -> std::convertible_to<Vector>;
};

template <class C>
concept HasDiscontinuities = requires(const C& u) {
    { u.discontinuities() } -> std::convertible_to<std::vector<double>>;
};

template <class C>
concept HasDerivative = requires(const C& u, double t) {
    { u.derivative(t) } -> std::convertible_to<Vector>;
};

namespace detail {

inline void check_grid(std::span<const double> grid, double T) {
    if (grid.size() < 2)
        throw DomainError("time grid needs at least two points");
    const double tol = 1e-12 * T;
    if (std::abs(grid.front()) > tol || std::abs(grid.back() - T) > tol)
        throw DomainError("time grid must start at 0 and end at T");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1]))
            throw DomainError("time grid must be strictly increasing");
}

// Step maps keyed by step length; lengths agreeing to 1e-13 relative share
// an entry.
class StepMapCache {
public:
    StepMapCache(const Matrix& A, const Matrix& B) : A_(A), B_(B) {}

    const StepMap& get(double h) {
        auto it = cache_.lower_bound(h * (1.0 - 1e-13));
        if (it != cache_.end() && it->first <= h * (1.0 + 1e-13))
            return it->second;
        return cache_.emplace(h, step_map(A_, B_, h)).first->second;
    }

private:
    const Matrix& A_;
    const Matrix& B_;
    std::map<double, StepMap> cache_;
};

} // namespace detail

// Exact propagation over every sub-interval on which the control is affine.
// Sub-intervals are the grid cells split at the control's discontinuities.
// On each sub-interval u is represented by its midpoint value and (when the
// control exposes one) its derivative, so piecewise-constant and
// piecewise-linear controls are integrated without truncation error.
template <ControlSignal Control>
Trajectory simulate_forward(const LtiSystem& sys, const Control& u, std::span<const double> grid) {
    const double T = sys.horizon();
    detail::check_grid(grid, T);

    std::vector<double> cuts;
    if constexpr (HasDiscontinuities<Control>) {
        cuts = u.discontinuities();
        std::sort(cuts.begin(), cuts.end());
    }

    detail::StepMapCache cache(sys.A(), sys.B());
    const auto k = sys.channels();

    Trajectory out;
    out.grid.assign(grid.begin(), grid.end());
    out.states.reserve(grid.size());
    Vector x = sys.x0();
    out.states.push_back(x);

    auto advance = [&](double a, double b) {
        const double h = b - a;
        const double mid = 0.5 * (a + b);
        Vector um = u(mid);
        if (um.size() != k)
            throw DimensionError("simulate_forward: control returned wrong channel count");
        Vector du = Vector::Zero(k);
        if constexpr (HasDerivative<Control>)
            du = u.derivative(mid);
        const StepMap& m = cache.get(h);
        x = m.E * x + m.G0 * (um - 0.5 * h * du) + m.G1 * du;
    };

    auto cut = cuts.begin();
    for (std::size_t i = 1; i < grid.size(); ++i) {
        double a = grid[i - 1];
        const double b = grid[i];
        const double guard = 1e-14 * std::max(1.0, T);
        while (cut != cuts.end() && *cut <= a + guard)
            ++cut;
        while (cut != cuts.end() && *cut < b - guard) {
            advance(a, *cut);
            a = *cut;
            ++cut;
        }
        advance(a, b);
        if (!x.allFinite())
            throw NumericalError("simulate_forward: state overflow");
        out.states.push_back(x);
    }
    return out;
}

inline std::vector<double> uniform_grid(double T, std::size_t points) {
    if (points < 2)
        throw DomainError("uniform_grid: need at least two points");
    std::vector<double> g(points);
    const double n = static_cast<double>(points - 1);
    for (std::size_t i = 0; i < points; ++i)
        g[i] = T * (static_cast<double>(i) / n);
    g.back() = T;
    return g;
}

} // namespace mlctl
