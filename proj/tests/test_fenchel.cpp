#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mlctl/fenchel.hpp"
#include "oracles.hpp"

using namespace mlctl;
using Catch::Matchers::WithinAbs;

namespace {

Matrix oscillator() {
    Matrix A(2, 2);
    A << 0, 1, -1, 0;
    return A;
}

Vector vec2(double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
}

DualProblem osc(Vector x0 = vec2(-1, 0.5), std::size_t nodes = 400, FunctionalKind kind = FunctionalKind::Jml,
                double beta = 1.0) {
    Matrix B(2, 1);
    B << 0, 1;
    auto L = build_penalization(ConvexProfile::quadratic(), Partition::uniform(-1, 1, 4));
    return {LtiSystem(oscillator(), B, std::move(x0), 4.0), {L}, kind, QuadratureGrid::trapezoid(4.0, nodes), {}, beta};
}

DualProblem scalar(double x0) {
    Matrix a(1, 1), b(1, 1);
    a << 1.0;
    b << 1.0;
    Vector x(1);
    x << x0;
    auto L = build_penalization(ConvexProfile::quadratic(), Partition({-1.0, 0.0, 1.0}));
    return {LtiSystem(a, b, x, 1.0), {L}, FunctionalKind::Jml, QuadratureGrid::trapezoid(1.0, 200)};
}

} // namespace

TEST_CASE("discrete primal data") {
    const auto P = osc();
    const auto dp = make_discrete_primal(P);
    CHECK(dp.size() == 400);
    CHECK(dp.channels() == 1);
    const Vector free = oracle::exp_series(oscillator(), 4.0) * vec2(-1, 0.5);
    CHECK((dp.c + free).norm() < 1e-13);
    // column i is w_i e^{(T - t_i)A} B
    const Vector col = dp.weights[7] * (oracle::exp_series(oscillator(), 4.0 - dp.nodes[7]) * vec2(0, 1));
    CHECK((dp.G.col(7) - col).norm() < 1e-14);
    CHECK_THROWS_AS(make_discrete_primal(osc(vec2(-1, 0.5), 400, FunctionalKind::JmlFabre)), PreconditionError);
    CHECK_THROWS_AS(make_discrete_primal(osc(vec2(-1, 0.5), 400, FunctionalKind::J2)), PreconditionError);
}

TEST_CASE("zero initial state has the zero primal solution") {
    const auto P = osc(vec2(0, 0));
    const auto sol = solve_primal(make_discrete_primal(P));
    REQUIRE(sol.status == PrimalStatus::Optimal);
    for (double v : sol.v[0])
        CHECK(std::abs(v) <= 1e-10);
    CHECK(std::abs(sol.objective) <= 1e-10);
}

TEST_CASE("unreachable targets are reported infeasible") {
    const auto dp = make_discrete_primal(scalar(1.5));
    const auto sol = solve_primal(dp);
    CHECK(sol.status == PrimalStatus::Infeasible);
    CHECK_FALSE(sol.message.empty());
    CHECK(std::string(to_string(sol.status)) == "Infeasible");
    // with |v| <= 1 on [0, 1], |x0| <= 1 - 1/e is the reachable range
    CHECK(solve_primal(make_discrete_primal(scalar(0.6))).status == PrimalStatus::Optimal);
}

TEST_CASE("primal solution satisfies the constraint and the bounds") {
    const auto P = osc();
    const auto dp = make_discrete_primal(P);
    const auto sol = solve_primal(dp);
    REQUIRE(sol.status == PrimalStatus::Optimal);
    Vector v(static_cast<Eigen::Index>(dp.size()));
    for (std::size_t i = 0; i < dp.size(); ++i) {
        v[static_cast<Eigen::Index>(i)] = sol.v[0][i];
        CHECK(std::abs(sol.v[0][i]) <= 1.5 + 1e-12);
    }
    CHECK((dp.G * v - dp.c).norm() <= 1e-9);
    CHECK(sol.residual <= 1e-9);
}

TEST_CASE("weak duality for arbitrary dual points") {
    const auto P = osc();
    const auto sol = solve_primal(make_discrete_primal(P));
    REQUIRE(sol.status == PrimalStatus::Optimal);
    std::mt19937_64 rng(17);
    for (int s = 0; s < 50; ++s) {
        const Vector p = oracle::random_vector(rng, 2, 2.0);
        CHECK(duality_gap(sol, p, P).gap >= -1e-10);
    }
}

TEST_CASE("zero gap at the dual minimizer") {
    const auto P = osc(vec2(-1, 0.5), 4000);
    const auto r = minimize(P);
    REQUIRE(r.converged());
    PrimalOptions opt;
    opt.tie_break = 1e-8;
    const auto sol = solve_primal(make_discrete_primal(P), opt);
    REQUIRE(sol.status == PrimalStatus::Optimal);
    const auto g = duality_gap(sol, r.p_star, P);
    CHECK(std::abs(g.gap) <= 1e-3);
    CHECK_THAT(g.gap, WithinAbs(g.primal + g.dual, 1e-15));
    CHECK(optimality_fraction(sol, r.p_star, P) >= 0.99);

    PrimalSolution bad = sol;
    bad.v[0].pop_back();
    CHECK_THROWS_AS(duality_gap(bad, r.p_star, P), DimensionError);
}

TEST_CASE("beta scales the conjugate domain") {
    const auto P = osc(vec2(-1, 0.5), 400, FunctionalKind::JmlBeta, 3.0);
    const auto sol = solve_primal(make_discrete_primal(P));
    REQUIRE(sol.status == PrimalStatus::Optimal);
    for (double v : sol.v[0])
        CHECK(std::abs(v) <= 4.5 + 1e-12);
}
