#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace mlctl {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Two abscissae closer than this (relative to their magnitude) are the same
// breakpoint.
inline constexpr double kBreakpointTol = 1e-12;

inline bool same_point(double a, double b, double tol = kBreakpointTol) {
    return std::abs(a - b) <= tol * (1.0 + std::max(std::abs(a), std::abs(b)));
}

// ============================================================================
// Partition of the interpolation interval
// ============================================================================

class Partition {
public:
    explicit Partition(std::vector<double> points) : points_(std::move(points)) {
        if (points_.size() < 3)
            throw DomainError("Partition: need at least 3 points");
        for (double p : points_)
            if (!std::isfinite(p))
                throw DomainError("Partition: points must be finite");
        for (std::size_t i = 1; i < points_.size(); ++i)
            if (!(points_[i] > points_[i - 1]))
                throw DomainError("Partition: points must be strictly increasing");
    }

    // `segments` equal cells on [lo, hi].
    static Partition uniform(double lo, double hi, std::size_t segments) {
        if (segments < 2)
            throw DomainError("Partition::uniform: need at least 2 segments");
        std::vector<double> p(segments + 1);
        for (std::size_t k = 0; k <= segments; ++k)
            p[k] = lo + (hi - lo) * (static_cast<double>(k) / static_cast<double>(segments));
        p.front() = lo;
        p.back() = hi;
        return Partition(std::move(p));
    }

    [[nodiscard]] const std::vector<double>& points() const noexcept { return points_; }
    [[nodiscard]] std::size_t segments() const noexcept { return points_.size() - 1; }
    [[nodiscard]] double lo() const noexcept { return points_.front(); }
    [[nodiscard]] double hi() const noexcept { return points_.back(); }
    [[nodiscard]] double width(std::size_t k) const { return points_.at(k + 1) - points_.at(k); }

    [[nodiscard]] double max_width() const {
        double h = 0.0;
        for (std::size_t k = 0; k < segments(); ++k)
            h = std::max(h, width(k));
        return h;
    }

    [[nodiscard]] bool contains_point(double u) const {
        return std::any_of(points_.begin(), points_.end(), [u](double p) { return same_point(p, u); });
    }

private:
    std::vector<double> points_;
};

// Strictly convex, nonnegative profile to be interpolated. `second_derivative`
// may be empty (tabulated profiles); operations that need it say so.
struct ConvexProfile {
    std::string name;
    std::function<double(double)> value;
    std::function<double(double)> second_derivative;
    double minimizer = 0.0;

    static ConvexProfile quadratic() {
        return {"quadratic", [](double u) { return u * u; }, [](double) { return 2.0; }, 0.0};
    }

    // Values given only at the listed points; evaluation elsewhere throws.
    static ConvexProfile table(std::vector<double> points, std::vector<double> values) {
        if (points.size() != values.size() || points.empty())
            throw DimensionError("ConvexProfile::table: points and values must have equal nonzero length");
        std::size_t imin = 0;
        for (std::size_t i = 1; i < values.size(); ++i)
            if (values[i] < values[imin])
                imin = i;
        const double umin = points[imin];
        auto lookup = [pts = std::move(points), vals = std::move(values)](double u) {
            for (std::size_t i = 0; i < pts.size(); ++i)
                if (same_point(pts[i], u))
                    return vals[i];
            throw DomainError("tabulated profile has no value at u = " + std::to_string(u));
        };
        return {"custom-table", std::move(lookup), {}, umin};
    }
};

// ============================================================================
// Piecewise-linear convex functions
// ============================================================================

struct SubdiffInterval {
    double lower = 0.0;
    double upper = 0.0;

    [[nodiscard]] bool singleton() const { return lower == upper; }
    [[nodiscard]] bool contains(double v, double slack = 0.0) const { return v >= lower - slack && v <= upper + slack; }
    // Deterministic selection used by subgradient evaluation.
    [[nodiscard]] double midpoint() const {
        if (std::isinf(lower) && std::isinf(upper))
            return 0.0;
        if (std::isinf(lower))
            return upper;
        if (std::isinf(upper))
            return lower;
        return 0.5 * (lower + upper);
    }
};

// Extended: the function on its own domain (for an interpolated penalization
// this is all of R, with the extreme chords continued linearly).
// ClampedDomain: the restriction to the interpolation interval [u_1, u_{M+1}],
// whose end points carry half-infinite subdifferentials.
enum class SubdiffMode { Extended, ClampedDomain };

class PwlConvex {
public:
    struct Anchor {
        double x;
        double y;
    };
    // One affine piece. Values are reconstructed from the nearest anchor, so
    // interpolation nodes are reproduced bit for bit.
    struct Piece {
        double slope;
        std::vector<Anchor> anchors;
    };

    // `knots` are the interior breakpoints, `pieces` has knots.size() + 1
    // entries. The function is +inf outside [domain_lo, domain_hi].
    PwlConvex(double domain_lo, double domain_hi, std::vector<double> knots, std::vector<Piece> pieces,
              double clamp_lo, double clamp_hi)
        : lo_(domain_lo), hi_(domain_hi), clamp_lo_(clamp_lo), clamp_hi_(clamp_hi) {
        if (pieces.size() != knots.size() + 1)
            throw DimensionError("PwlConvex: need exactly one more piece than knots");
        if (!(lo_ <= hi_))
            throw DomainError("PwlConvex: empty domain");
        for (const auto& p : pieces)
            if (p.anchors.empty() || !std::isfinite(p.slope))
                throw DomainError("PwlConvex: every piece needs a finite slope and an anchor");
        normalize(std::move(knots), std::move(pieces));
    }

    [[nodiscard]] double domain_lo() const noexcept { return lo_; }
    [[nodiscard]] double domain_hi() const noexcept { return hi_; }
    [[nodiscard]] double clamp_lo() const noexcept { return clamp_lo_; }
    [[nodiscard]] double clamp_hi() const noexcept { return clamp_hi_; }
    [[nodiscard]] const std::vector<double>& breakpoints() const noexcept { return knots_; }
    [[nodiscard]] const std::vector<Piece>& pieces() const noexcept { return pieces_; }
    [[nodiscard]] std::size_t piece_count() const noexcept { return pieces_.size(); }

    [[nodiscard]] bool in_domain(double u) const { return u >= lo_ && u <= hi_; }

    // Index of the piece containing u; a breakpoint belongs to the piece on
    // its right.
    [[nodiscard]] std::size_t piece_index(double u) const {
        return static_cast<std::size_t>(std::upper_bound(knots_.begin(), knots_.end(), u) - knots_.begin());
    }

    [[nodiscard]] double value(double u) const {
        if (!in_domain(u))
            return kInf;
        return piece_value(piece_index(u), u);
    }
    double operator()(double u) const { return value(u); }

    [[nodiscard]] double piece_value(std::size_t j, double u) const {
        const Piece& p = pieces_[j];
        const Anchor* best = &p.anchors.front();
        for (const Anchor& a : p.anchors)
            if (std::abs(a.x - u) < std::abs(best->x - u))
                best = &a;
        return best->y + p.slope * (u - best->x);
    }

    // Canonical max-of-affines data: piece j is slope_j * u + intercept_j.
    [[nodiscard]] double intercept(std::size_t j) const {
        const Anchor& a = pieces_[j].anchors.front();
        return a.y - pieces_[j].slope * a.x;
    }

    [[nodiscard]] double max_form(double u) const {
        if (!in_domain(u))
            return kInf;
        double m = -kInf;
        for (std::size_t j = 0; j < pieces_.size(); ++j)
            m = std::max(m, pieces_[j].slope * u + intercept(j));
        return m;
    }

    [[nodiscard]] SubdiffInterval subdifferential(double u, SubdiffMode mode = SubdiffMode::Extended,
                                                  double tol = kBreakpointTol) const {
        const double dlo = mode == SubdiffMode::Extended ? lo_ : clamp_lo_;
        const double dhi = mode == SubdiffMode::Extended ? hi_ : clamp_hi_;
        if (!std::isfinite(u))
            throw DomainError("subdifferential: u must be finite");
        const bool at_lo = std::isfinite(dlo) && same_point(u, dlo, tol);
        const bool at_hi = std::isfinite(dhi) && same_point(u, dhi, tol);
        if (!at_lo && !at_hi && (u < dlo || u > dhi))
            throw DomainError("subdifferential: point outside the domain");

        const std::size_t j = piece_index(u);
        // Breakpoint test against both neighbours of the bracketing position.
        std::size_t knot = knots_.size();
        if (j < knots_.size() && same_point(u, knots_[j], tol))
            knot = j;
        else if (j > 0 && same_point(u, knots_[j - 1], tol))
            knot = j - 1;

        double lower = knot < knots_.size() ? pieces_[knot].slope : pieces_[j].slope;
        double upper = knot < knots_.size() ? pieces_[knot + 1].slope : pieces_[j].slope;
        if (at_lo)
            lower = -kInf;
        if (at_hi)
            upper = kInf;
        return {lower, upper};
    }

private:
    void normalize(std::vector<double> knots, std::vector<Piece> pieces) {
        // Drop zero-length pieces, then merge neighbours with equal slopes.
        std::vector<double> k2;
        std::vector<Piece> p2;
        p2.push_back(std::move(pieces[0]));
        for (std::size_t i = 0; i < knots.size(); ++i) {
            Piece& next = pieces[i + 1];
            const bool coincident = !k2.empty() && same_point(knots[i], k2.back());
            const bool same_slope = same_point(next.slope, p2.back().slope);
            if (same_slope || coincident) {
                auto& a = p2.back().anchors;
                if (coincident && !same_slope) {
                    // keep the later piece, the zero-length one carries no information
                    p2.back().slope = next.slope;
                    a = next.anchors;
                } else {
                    a.insert(a.end(), next.anchors.begin(), next.anchors.end());
                }
                continue;
            }
            k2.push_back(knots[i]);
            p2.push_back(std::move(next));
        }
        for (std::size_t i = 1; i < k2.size(); ++i)
            if (!(k2[i] > k2[i - 1]))
                throw DomainError("PwlConvex: breakpoints must be increasing");
        for (std::size_t i = 0; i < k2.size(); ++i) {
            if (!(k2[i] > lo_ && k2[i] < hi_))
                throw DomainError("PwlConvex: breakpoints must lie inside the domain");
            if (p2[i + 1].slope < p2[i].slope)
                throw PreconditionError("PwlConvex: slopes must be nondecreasing (convexity)");
        }
        knots_ = std::move(k2);
        pieces_ = std::move(p2);
        for (std::size_t i = 0; i < knots_.size(); ++i) {
            const double left = piece_value(i, knots_[i]);
            const double right = piece_value(i + 1, knots_[i]);
            const double scale = 1.0 + std::abs(left) + std::abs(pieces_[i].slope * knots_[i]);
            if (std::abs(left - right) > 1e-12 * scale)
                throw PreconditionError("PwlConvex: adjacent pieces disagree at a breakpoint");
        }
    }

    double lo_;
    double hi_;
    double clamp_lo_;
    double clamp_hi_;
    std::vector<double> knots_;
    std::vector<Piece> pieces_;
};

// ============================================================================
// Penalization construction
// ============================================================================

namespace detail {

inline void validate_profile(const ConvexProfile& profile, const Partition& part, const std::vector<double>& values) {
    const auto& u = part.points();
    for (std::size_t k = 0; k < u.size(); ++k)
        if (values[k] < 0.0)
            throw PreconditionError("profile must be nonnegative on the partition");
    if (!part.contains_point(profile.minimizer))
        throw PreconditionError("profile minimizer must be a partition point");
    const double pmin = profile.value(profile.minimizer);
    for (double v : values)
        if (v < pmin)
            throw PreconditionError("declared profile minimizer is not the minimum over the partition");
    if (!profile.second_derivative)
        return;
    constexpr int samples = 16;
    for (std::size_t k = 0; k + 1 < u.size(); ++k) {
        for (int s = 0; s <= samples; ++s) {
            const double t = u[k] + (u[k + 1] - u[k]) * s / samples;
            if (!(profile.value(t) >= 0.0))
                throw PreconditionError("profile must be nonnegative on the interpolation interval");
            if (!(profile.second_derivative(t) > 0.0))
                throw PreconditionError("profile must be strictly convex (P'' > 0)");
        }
    }
}

} // namespace detail

// Continuous piecewise-linear interpolant of the profile on the partition,
// continued beyond the end points by the first and last chords.
inline PwlConvex build_penalization(const ConvexProfile& profile, const Partition& part) {
    const auto& u = part.points();
    std::vector<double> values(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) {
        values[k] = profile.value(u[k]);
        if (!std::isfinite(values[k]))
            throw DomainError("profile not evaluable at partition point " + std::to_string(u[k]));
    }
    detail::validate_profile(profile, part, values);

    std::vector<PwlConvex::Piece> pieces;
    for (std::size_t k = 0; k + 1 < u.size(); ++k) {
        const double slope = (values[k + 1] - values[k]) / (u[k + 1] - u[k]);
        pieces.push_back({slope, {{u[k], values[k]}, {u[k + 1], values[k + 1]}}});
    }
    std::vector<double> knots(u.begin() + 1, u.end() - 1);
    return {-kInf, kInf, std::move(knots), std::move(pieces), part.lo(), part.hi()};
}

// Control levels: slope of every affine piece, nondecreasing.
inline std::vector<double> slopes(const PwlConvex& f) {
    std::vector<double> s;
    s.reserve(f.piece_count());
    for (const auto& p : f.pieces())
        s.push_back(p.slope);
    return s;
}

// c * f for c > 0.
inline PwlConvex scaled(const PwlConvex& f, double c) {
    if (!(c > 0.0) || !std::isfinite(c))
        throw DomainError("scaled: factor must be positive and finite");
    std::vector<PwlConvex::Piece> pieces = f.pieces();
    for (auto& p : pieces) {
        p.slope *= c;
        for (auto& a : p.anchors)
            a.y *= c;
    }
    return {f.domain_lo(), f.domain_hi(), f.breakpoints(), std::move(pieces), f.clamp_lo(), f.clamp_hi()};
}

inline SubdiffInterval subdifferential(const PwlConvex& f, double u, SubdiffMode mode = SubdiffMode::Extended) {
    return f.subdifferential(u, mode);
}

// f*(v) = sup_u (u v - f(u)). For slopes a_0 < ... < a_m and breakpoints
// b_1 < ... < b_m the supremum over v in [a_{j-1}, a_j] is attained at b_j,
// so f* is piecewise linear with breakpoints at the slopes of f and slopes
// equal to the breakpoints of f. A finite domain end of f becomes the slope
// of an unbounded piece of f*; an infinite one bounds the domain of f*.
inline PwlConvex conjugate(const PwlConvex& f) {
    const auto& knots = f.breakpoints();
    const auto& pcs = f.pieces();
    const double lo = f.domain_lo();
    const double hi = f.domain_hi();
    const bool lo_finite = std::isfinite(lo);
    const bool hi_finite = std::isfinite(hi);
    const std::size_t m = knots.size();

    std::vector<double> cknots;
    std::vector<PwlConvex::Piece> cpieces;

    if (m == 0 && !lo_finite && !hi_finite) {
        // affine on R: conjugate is finite at the single slope value
        const double a = pcs[0].slope;
        const double y = -f.intercept(0);
        cpieces.push_back({0.0, {{a, y}}});
        return {a, a, {}, std::move(cpieces), a, a};
    }

    if (lo_finite) {
        const double a0 = pcs.front().slope;
        cpieces.push_back({lo, {{a0, lo * a0 - f.value(lo)}}});
        cknots.push_back(a0);
    }
    for (std::size_t j = 1; j <= m; ++j) {
        const double b = knots[j - 1];
        const double fb = f.value(b);
        const double a_left = pcs[j - 1].slope;
        const double a_right = pcs[j].slope;
        cpieces.push_back({b, {{a_left, b * a_left - fb}, {a_right, b * a_right - fb}}});
        if (j < m)
            cknots.push_back(a_right);
    }
    if (hi_finite) {
        const double am = pcs.back().slope;
        if (m > 0 || lo_finite)
            cknots.push_back(am);
        cpieces.push_back({hi, {{am, hi * am - f.value(hi)}}});
    }
    if (m == 0 && lo_finite && !hi_finite) {
        // only the lo piece exists; it ends at a0 where the domain ends
        cknots.pop_back();
    }

    const double dlo = lo_finite ? -kInf : pcs.front().slope;
    const double dhi = hi_finite ? kInf : pcs.back().slope;
    return {dlo, dhi, std::move(cknots), std::move(cpieces), dlo, dhi};
}

struct BarrierConstants {
    double alpha1;
    double alpha2;
};

// alpha1 |u| <= L(u) <= alpha2 |u| on [lo, hi]. With L(0) = 0 and L convex,
// L(u)/|u| is monotone on each side of 0, so the extremes are the one-sided
// slopes at 0 and the ratios at the interval ends.
inline BarrierConstants barrier_constants(const PwlConvex& f, double lo, double hi) {
    if (!(lo < hi))
        throw DomainError("barrier_constants: empty interval");
    if (!(lo <= 0.0 && hi >= 0.0))
        throw PreconditionError("barrier_constants: interval must contain 0");
    if (std::abs(f.value(0.0)) > kBreakpointTol)
        throw PreconditionError("barrier_constants: requires L(0) = 0");
    const SubdiffInterval at0 = f.subdifferential(0.0);
    double a1 = kInf;
    double a2 = 0.0;
    if (hi > 0.0) {
        a1 = std::min(a1, at0.upper);
        a2 = std::max(a2, f.value(hi) / hi);
    }
    if (lo < 0.0) {
        a1 = std::min(a1, -at0.lower);
        a2 = std::max(a2, f.value(lo) / -lo);
    }
    if (!(a1 > 0.0))
        throw PreconditionError("barrier_constants: L has no kink at 0, lower barrier vanishes");
    return {a1, a2};
}

struct InterpErrorBound {
    std::vector<double> per_segment;
    double global;
};

// e_k <= h_k^2/2 max_k |P''| and e_max <= h^2/2 max |P''|, with the maxima of
// |P''| taken over `samples` + 1 equispaced points per segment.
inline InterpErrorBound interp_error_bound(const ConvexProfile& profile, const Partition& part, int samples = 64) {
    if (!profile.second_derivative)
        throw PreconditionError("interp_error_bound: profile has no second derivative");
    const auto& u = part.points();
    InterpErrorBound out{{}, 0.0};
    double dmax = 0.0;
    for (std::size_t k = 0; k + 1 < u.size(); ++k) {
        double seg_max = 0.0;
        for (int s = 0; s <= samples; ++s)
            seg_max = std::max(seg_max, std::abs(profile.second_derivative(u[k] + (u[k + 1] - u[k]) * s / samples)));
        const double hk = u[k + 1] - u[k];
        out.per_segment.push_back(0.5 * hk * hk * seg_max);
        dmax = std::max(dmax, seg_max);
    }
    const double h = part.max_width();
    out.global = 0.5 * h * h * dmax;
    return out;
}

// Sup of |P - L| per segment over `samples` + 1 equispaced points.
inline std::vector<double> measure_interp_error(const ConvexProfile& profile, const PwlConvex& f,
                                                const Partition& part, int samples = 256) {
    const auto& u = part.points();
    std::vector<double> err;
    for (std::size_t k = 0; k + 1 < u.size(); ++k) {
        double e = 0.0;
        for (int s = 0; s <= samples; ++s) {
            const double t = u[k] + (u[k + 1] - u[k]) * s / samples;
            e = std::max(e, std::abs(profile.value(t) - f.value(t)));
        }
        err.push_back(e);
    }
    return err;
}

} // namespace mlctl
