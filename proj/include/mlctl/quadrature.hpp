#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "errors.hpp"

namespace mlctl {

// Composite trapezoid rule on a uniform grid of [0, T], end points included.
struct QuadratureGrid {
    std::vector<double> nodes;
    std::vector<double> weights;

    static QuadratureGrid trapezoid(double T, std::size_t points = 4000) {
        if (!(T > 0.0) || !std::isfinite(T))
            throw DomainError("quadrature: horizon must be positive");
        if (points < 2)
            throw DomainError("quadrature: need at least two nodes");
        QuadratureGrid q;
        q.nodes.resize(points);
        q.weights.resize(points);
        const double n = static_cast<double>(points - 1);
        const double h = T / n;
        for (std::size_t i = 0; i < points; ++i) {
            q.nodes[i] = T * (static_cast<double>(i) / n);
            q.weights[i] = h;
        }
        q.nodes.back() = T;
        q.weights.front() = q.weights.back() = 0.5 * h;
        return q;
    }

    [[nodiscard]] std::size_t size() const noexcept { return nodes.size(); }
    [[nodiscard]] double horizon() const { return nodes.back(); }
    [[nodiscard]] double total_weight() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

    template <class F>
    double integrate(F&& f) const {
        double s = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i)
            s += weights[i] * f(nodes[i]);
        return s;
    }

    void validate(double T) const {
        if (nodes.size() != weights.size() || nodes.size() < 2)
            throw DimensionError("quadrature: nodes and weights differ in length");
        for (double w : weights)
            if (!(w > 0.0))
                throw DomainError("quadrature: weights must be positive");
        if (std::abs(total_weight() - T) > 1e-10 * std::max(1.0, T))
            throw DomainError("quadrature: weights must sum to the horizon");
        if (std::abs(nodes.front()) > 1e-12 * T || std::abs(nodes.back() - T) > 1e-12 * T)
            throw DomainError("quadrature: nodes must span [0, T]");
        for (std::size_t i = 1; i < nodes.size(); ++i)
            if (!(nodes[i] > nodes[i - 1]))
                throw DomainError("quadrature: nodes must be strictly increasing");
    }
};

} // namespace mlctl
