#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "detail/bounded_lsq.hpp"
#include "detail/pl_simplex.hpp"
#include "dual.hpp"
#include "errors.hpp"
#include "lti.hpp"
#include "pwl.hpp"

namespace mlctl {

// ============================================================================
// Switching-time localization
// ============================================================================

struct SwitchingSet {
    std::vector<double> crossings;  // sign changes of q - b, sorted
    std::vector<double> touches;    // q reaches b without changing side
};

namespace detail {

inline int sgn(double v) { return (v > 0.0) - (v < 0.0); }

template <class F>
double bisect(F&& f, double a, double b, double fa, double tol = 1e-12, int max_iter = 50) {
    for (int i = 0; i < max_iter && b - a > tol; ++i) {
        const double m = 0.5 * (a + b);
        const double fm = f(m);
        if (fm == 0.0)
            return m;
        if (sgn(fm) == sgn(fa)) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    return 0.5 * (a + b);
}

} // namespace detail

// Times in the open interval (grid.front(), grid.back()) where q crosses one of
// the breakpoint values. Each grid cell may hold at most one crossing per
// breakpoint; a cell whose midpoint disagrees in sign with both of its equal-
// signed end points holds two, and is reported as GridTooCoarseError.
template <class Q>
SwitchingSet find_switchings(Q&& q, const std::vector<double>& breakpoints, std::span<const double> grid,
                             double touch_tol = 1e-10) {
    if (grid.size() < 2)
        throw DomainError("find_switchings: grid needs at least two points");
    std::vector<double> qs(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        qs[i] = q(grid[i]);

    SwitchingSet out;
    const std::size_t last = grid.size() - 1;
    for (double b : breakpoints) {
        auto f = [&](double t) { return q(t) - b; };
        for (std::size_t i = 0; i < last; ++i) {
            const double fa = qs[i] - b;
            const double fb = qs[i + 1] - b;
            const int sa = detail::sgn(fa);
            const int sb = detail::sgn(fb);
            if (sa != 0 && sb != 0 && sa != sb) {
                out.crossings.push_back(detail::bisect(f, grid[i], grid[i + 1], fa));
                continue;
            }
            if (sa != 0 && sa == sb) {
                const double mid = 0.5 * (grid[i] + grid[i + 1]);
                const double fm = f(mid);
                if (detail::sgn(fm) == -sa)
                    throw GridTooCoarseError("find_switchings: two crossings of breakpoint " + std::to_string(b) +
                                             " inside [" + std::to_string(grid[i]) + ", " +
                                             std::to_string(grid[i + 1]) + "]; refine the bracketing grid");
                continue;
            }
            // q hits b exactly at the node i + 1 (interior nodes only)
            if (sb == 0 && sa != 0 && i + 1 < last) {
                std::size_t j = i + 1;
                while (j < last && detail::sgn(qs[j] - b) == 0)
                    ++j;
                const int sc = detail::sgn(qs[j] - b);
                if (j == last && sc == 0)
                    continue;
                if (sc == -sa)
                    out.crossings.push_back(grid[i + 1]);
                else
                    out.touches.push_back(grid[i + 1]);
            }
        }
        // grazing approaches between samples
        for (std::size_t i = 1; i < last; ++i) {
            const double d0 = std::abs(qs[i - 1] - b), d1 = std::abs(qs[i] - b), d2 = std::abs(qs[i + 1] - b);
            const int s0 = detail::sgn(qs[i - 1] - b), s1 = detail::sgn(qs[i] - b), s2 = detail::sgn(qs[i + 1] - b);
            if (s1 != 0 && s0 == s1 && s1 == s2 && d1 < d0 && d1 <= d2 && d1 <= touch_tol * (1.0 + std::abs(b)))
                out.touches.push_back(grid[i]);
        }
    }
    std::sort(out.crossings.begin(), out.crossings.end());
    std::sort(out.touches.begin(), out.touches.end());
    return out;
}

// ============================================================================
// Multilevel control
// ============================================================================

struct ChannelWaveform {
    std::vector<double> levels;        // s_0, ..., s_K
    std::vector<double> switch_times;  // t_1 < ... < t_K inside (0, T)
    double scale = 1.0;
    // realized on a singular arc by a bang-bang selection (see extract_control)
    bool singular = false;

    [[nodiscard]] double at(double t) const {
        const auto j = std::upper_bound(switch_times.begin(), switch_times.end(), t) - switch_times.begin();
        return levels[static_cast<std::size_t>(j)];
    }
};

struct MultilevelControl {
    double horizon = 0.0;
    std::vector<ChannelWaveform> channels;

    Vector operator()(double t) const {
        Vector u(static_cast<Eigen::Index>(channels.size()));
        for (std::size_t k = 0; k < channels.size(); ++k)
            u[static_cast<Eigen::Index>(k)] = channels[k].at(t);
        return u;
    }

    [[nodiscard]] std::vector<double> discontinuities() const {
        std::vector<double> d;
        for (const auto& c : channels)
            d.insert(d.end(), c.switch_times.begin(), c.switch_times.end());
        std::sort(d.begin(), d.end());
        d.erase(std::unique(d.begin(), d.end()), d.end());
        return d;
    }

    [[nodiscard]] std::size_t switch_count() const {
        std::size_t n = 0;
        for (const auto& c : channels)
            n += c.switch_times.size();
        return n;
    }
};

// Control of the quadratic kinds: scale * 2 B^T p(t).
struct L2Control {
    Matrix At;  // A^T
    Matrix B;
    Vector p_T;
    double T;
    double factor;

    Vector operator()(double t) const { return factor * 2.0 * (B.transpose() * (mat_exp(At, T - t) * p_T)); }
    [[nodiscard]] Vector derivative(double t) const {
        return -factor * 2.0 * (B.transpose() * (At * (mat_exp(At, T - t) * p_T)));
    }
};

inline L2Control l2_control(const Vector& p_T, const DualProblem& prob) {
    if (!is_quadratic(prob.kind()))
        throw PreconditionError("l2_control: functional kind is not quadratic");
    const auto& sys = prob.system();
    return {sys.A().transpose(), sys.B(), p_T, sys.horizon(), prob.control_scale(p_T)};
}

enum class DegeneratePolicy { Reject, BangBang };

struct ExtractOptions {
    int bracket_factor = 8;  // bracketing grid density relative to the quadrature grid
    DegeneratePolicy degenerate = DegeneratePolicy::BangBang;
    double degenerate_tol = 1e-10;
};

namespace detail {

struct Segment {
    double a;
    double b;
    double level;
};

inline void append_segment(std::vector<Segment>& segs, double a, double b, double level) {
    if (!(b > a))
        return;
    if (!segs.empty() && segs.back().level == level) {
        segs.back().b = b;
        return;
    }
    segs.push_back({a, b, level});
}

inline ChannelWaveform to_waveform(const std::vector<Segment>& segs, double scale, bool singular) {
    ChannelWaveform w;
    w.scale = scale;
    w.singular = singular;
    for (std::size_t i = 0; i < segs.size(); ++i) {
        w.levels.push_back(segs[i].level);
        if (i > 0)
            w.switch_times.push_back(segs[i].a);
    }
    return w;
}

// Index of the breakpoint that q sits on for the whole horizon, if any.
template <class Q>
std::optional<std::size_t> identically_on_breakpoint(Q&& q, const PwlConvex& L, std::span<const double> grid,
                                                     double tol) {
    const auto& knots = L.breakpoints();
    for (std::size_t j = 0; j < knots.size(); ++j) {
        bool all = true;
        for (double t : grid)
            if (std::abs(q(t) - knots[j]) > tol * (1.0 + std::abs(knots[j]))) {
                all = false;
                break;
            }
        if (all)
            return j;
    }
    return std::nullopt;
}

} // namespace detail

// Multilevel control from an optimal adjoint datum. Between consecutive
// crossings of B_k^T p(t) through the breakpoints of L_k the control equals
// the slope of the piece containing B_k^T p at the interval midpoint, times
// the control scale (1, beta, or the penalty integral for the squared kind).
//
// If B_k^T p sits on a breakpoint for the whole horizon (for an analytic
// adjoint this is the only way it can rest on one over a set of positive
// measure), every selection of the subdifferential is optimal. The
// BangBang policy picks one taking only the two adjacent slopes: a vertex of
// { u in [s_lo, s_hi] per cell : x(T) = 0 } minimizing int u, with the at
// most N fractional cells split into two sub-intervals whose switch points
// are refined by Gauss-Newton on x(T).
inline MultilevelControl extract_control(const Vector& p_T, const DualProblem& prob, const ExtractOptions& opt = {}) {
    if (is_quadratic(prob.kind()))
        throw PreconditionError("extract_control: quadratic kinds have no multilevel control, use l2_control");
    const LtiSystem& sys = prob.system();
    const double T = sys.horizon();
    const Matrix At = sys.A().transpose();
    const double scale = prob.control_scale(p_T);
    const std::size_t K = prob.channels();
    const auto bracket = uniform_grid(T, (prob.grid().size() - 1) * static_cast<std::size_t>(opt.bracket_factor) + 1);

    MultilevelControl ctrl;
    ctrl.horizon = T;
    ctrl.channels.resize(K);

    struct SingularChannel {
        std::size_t k;
        double lo;
        double hi;
    };
    std::vector<SingularChannel> singular;

    for (std::size_t k = 0; k < K; ++k) {
        const PwlConvex& L = prob.penalizations()[k];
        const Vector bk = sys.B().col(static_cast<Eigen::Index>(k));
        auto q = [&](double t) { return bk.dot(mat_exp(At, T - t) * p_T); };

        if (auto j = detail::identically_on_breakpoint(q, L, bracket, opt.degenerate_tol)) {
            if (opt.degenerate == DegeneratePolicy::Reject)
                throw DegenerateAdjointError("extract_control: B^T p is identically equal to a breakpoint on channel " +
                                             std::to_string(k));
            singular.push_back({k, L.pieces()[*j].slope * scale, L.pieces()[*j + 1].slope * scale});
            continue;
        }

        const SwitchingSet sw = find_switchings(q, L.breakpoints(), bracket);
        std::vector<double> cuts;
        cuts.push_back(0.0);
        cuts.insert(cuts.end(), sw.crossings.begin(), sw.crossings.end());
        cuts.push_back(T);
        std::vector<detail::Segment> segs;
        for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
            const double a = cuts[i], b = cuts[i + 1];
            const double level = L.pieces()[L.piece_index(q(0.5 * (a + b)))].slope * scale;
            detail::append_segment(segs, a, b, level);
        }
        ctrl.channels[k] = detail::to_waveform(segs, scale, false);
    }

    if (singular.empty())
        return ctrl;

    // Terminal state produced by x0 and the regular channels.
    Vector r0 = mat_exp(sys.A(), T) * sys.x0();
    for (std::size_t k = 0; k < K; ++k) {
        if (std::any_of(singular.begin(), singular.end(), [k](const SingularChannel& s) { return s.k == k; }))
            continue;
        const auto& w = ctrl.channels[k];
        const Matrix bk = sys.B().col(static_cast<Eigen::Index>(k));
        for (std::size_t i = 0; i < w.levels.size(); ++i) {
            const double a = i == 0 ? 0.0 : w.switch_times[i - 1];
            const double b = i == w.switch_times.size() ? T : w.switch_times[i];
            r0 += input_response(sys.A(), bk, T, a, b).col(0) * w.levels[i];
        }
    }

    // Nothing left to steer: the zero selection of each singular channel's
    // subdifferential is optimal when 0 lies in it.
    if (r0.norm() <= 1e-13 * (1.0 + sys.x0().norm()) &&
        std::all_of(singular.begin(), singular.end(), [](const SingularChannel& s) { return s.lo <= 0.0 && s.hi >= 0.0; })) {
        for (const auto& s : singular)
            ctrl.channels[s.k] = detail::to_waveform({{0.0, T, 0.0}}, scale, true);
        return ctrl;
    }

    const auto& nodes = prob.grid().nodes;
    const std::size_t cells = nodes.size() - 1;
    const std::size_t S = singular.size();
    Matrix G(sys.states(), static_cast<Eigen::Index>(cells * S));
    std::vector<detail::PlVariable> vars;
    for (std::size_t s = 0; s < S; ++s) {
        const Matrix bk = sys.B().col(static_cast<Eigen::Index>(singular[s].k));
        for (std::size_t c = 0; c < cells; ++c) {
            G.col(static_cast<Eigen::Index>(s * cells + c)) = input_response(sys.A(), bk, T, nodes[c], nodes[c + 1]);
            vars.push_back({{singular[s].lo, singular[s].hi}, {nodes[c + 1] - nodes[c]}, 0});
        }
    }
    auto lp = detail::solve_pl_lp(G, -r0, vars);
    std::vector<double> x = lp.x;
    if (lp.status != detail::PlLpResult::Status::Optimal) {
        // closest reachable terminal state instead
        std::vector<Vector> cols;
        std::vector<double> lo, hi;
        for (std::size_t j = 0; j < vars.size(); ++j) {
            cols.emplace_back(G.col(static_cast<Eigen::Index>(j)));
            lo.push_back(vars[j].points.front());
            hi.push_back(vars[j].points.back());
            x[j] = std::clamp(x[j], lo.back(), hi.back());
        }
        detail::bounded_least_squares(r0, cols, lo, hi, x);
    }

    // Waveforms with the fractional cells split; remember the split points.
    struct Split {
        std::size_t s;
        double left;
        double right;
        double a;
        double b;
        double tau;
    };
    std::vector<Split> splits;
    std::vector<std::vector<detail::Segment>> segs(S);
    for (std::size_t s = 0; s < S; ++s) {
        const double lo = singular[s].lo, hi = singular[s].hi;
        const double snap = 1e-12 * (std::abs(lo) + std::abs(hi));
        for (std::size_t c = 0; c < cells; ++c) {
            const double a = nodes[c], b = nodes[c + 1];
            const double v = x[s * cells + c];
            if (std::abs(v - lo) <= snap) {
                detail::append_segment(segs[s], a, b, lo);
            } else if (std::abs(v - hi) <= snap) {
                detail::append_segment(segs[s], a, b, hi);
            } else {
                const double frac_hi = (v - lo) / (hi - lo);
                const bool lo_first = segs[s].empty() || segs[s].back().level == lo;
                const double first = lo_first ? lo : hi;
                const double second = lo_first ? hi : lo;
                const double tau = a + (b - a) * (lo_first ? 1.0 - frac_hi : frac_hi);
                splits.push_back({s, first, second, a, b, tau});
                detail::append_segment(segs[s], a, tau, first);
                detail::append_segment(segs[s], tau, b, second);
            }
        }
    }

    if (!splits.empty()) {
        // Gauss-Newton on the split points; everything else is held fixed.
        auto terminal = [&](const std::vector<double>& taus) {
            Vector xT = r0;
            for (std::size_t s = 0; s < S; ++s) {
                const Matrix bk = sys.B().col(static_cast<Eigen::Index>(singular[s].k));
                for (std::size_t c = 0; c < cells; ++c) {
                    bool split = false;
                    for (std::size_t i = 0; i < splits.size(); ++i)
                        if (splits[i].s == s && splits[i].a == nodes[c]) {
                            xT += input_response(sys.A(), bk, T, splits[i].a, taus[i]).col(0) * splits[i].left;
                            xT += input_response(sys.A(), bk, T, taus[i], splits[i].b).col(0) * splits[i].right;
                            split = true;
                        }
                    if (!split) {
                        const double v = x[s * cells + c];
                        const double lo = singular[s].lo, hi = singular[s].hi;
                        const double lvl = std::abs(v - lo) <= std::abs(v - hi) ? lo : hi;
                        xT += G.col(static_cast<Eigen::Index>(s * cells + c)) * lvl;
                    }
                }
            }
            return xT;
        };
        std::vector<double> taus;
        for (const auto& sp : splits)
            taus.push_back(sp.tau);
        Vector res = terminal(taus);
        for (int iter = 0; iter < 30 && res.norm() > 1e-14 * (1.0 + sys.x0().norm()); ++iter) {
            Matrix J(sys.states(), static_cast<Eigen::Index>(splits.size()));
            for (std::size_t i = 0; i < splits.size(); ++i) {
                const Vector bk = sys.B().col(static_cast<Eigen::Index>(singular[splits[i].s].k));
                J.col(static_cast<Eigen::Index>(i)) =
                    mat_exp(sys.A(), T - taus[i]) * bk * (splits[i].left - splits[i].right);
            }
            const Vector step = J.completeOrthogonalDecomposition().solve(-res);
            std::vector<double> trial = taus;
            for (std::size_t i = 0; i < splits.size(); ++i)
                trial[i] = std::clamp(taus[i] + step[static_cast<Eigen::Index>(i)], splits[i].a, splits[i].b);
            const Vector rt = terminal(trial);
            if (!(rt.norm() < res.norm()))
                break;
            taus = trial;
            res = rt;
        }
        // rebuild the waveforms with the refined split points
        for (std::size_t s = 0; s < S; ++s) {
            segs[s].clear();
            const double lo = singular[s].lo, hi = singular[s].hi;
            for (std::size_t c = 0; c < cells; ++c) {
                const double a = nodes[c], b = nodes[c + 1];
                bool split = false;
                for (std::size_t i = 0; i < splits.size(); ++i)
                    if (splits[i].s == s && splits[i].a == a) {
                        detail::append_segment(segs[s], a, taus[i], splits[i].left);
                        detail::append_segment(segs[s], taus[i], b, splits[i].right);
                        split = true;
                    }
                if (!split) {
                    const double v = x[s * cells + c];
                    detail::append_segment(segs[s], a, b, std::abs(v - lo) <= std::abs(v - hi) ? lo : hi);
                }
            }
        }
    }

    for (std::size_t s = 0; s < S; ++s)
        ctrl.channels[singular[s].k] = detail::to_waveform(segs[s], scale, true);
    return ctrl;
}

// ============================================================================
// Staircase verification
// ============================================================================

struct StaircaseVerdict {
    bool ok = true;
    std::optional<std::size_t> violation;  // j such that s_j -> s_{j+1} skips a level
};

// `levels` is the admissible set R, sorted ascending.
inline StaircaseVerdict verify_staircase(const std::vector<double>& waveform, const std::vector<double>& levels,
                                         double tol = 1e-12) {
    auto index_of = [&](double v) {
        for (std::size_t i = 0; i < levels.size(); ++i)
            if (std::abs(levels[i] - v) <= tol * (1.0 + std::abs(v)))
                return i;
        throw MembershipError("verify_staircase: level " + std::to_string(v) + " is not in the admissible set");
    };
    StaircaseVerdict out;
    std::vector<std::size_t> idx;
    for (double v : waveform)
        idx.push_back(index_of(v));
    for (std::size_t j = 0; j + 1 < idx.size(); ++j) {
        const std::size_t a = std::min(idx[j], idx[j + 1]);
        const std::size_t b = std::max(idx[j], idx[j + 1]);
        if (b - a > 1) {
            out.ok = false;
            out.violation = j;
            return out;
        }
    }
    return out;
}

inline StaircaseVerdict verify_staircase(const ChannelWaveform& w, const std::vector<double>& levels) {
    return verify_staircase(w.levels, levels);
}

// Admissible levels of channel k: the slopes of L_k times the control scale.
inline std::vector<double> admissible_levels(const PwlConvex& L, double scale) {
    std::vector<double> r;
    for (const auto& p : L.pieces())
        r.push_back(p.slope * scale);
    std::sort(r.begin(), r.end());
    return r;
}

} // namespace mlctl
