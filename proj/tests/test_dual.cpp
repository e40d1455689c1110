#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "mlctl/dual.hpp"
#include "oracles.hpp"

using namespace mlctl;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Matrix oscillator() {
    Matrix A(2, 2);
    A << 0, 1, -1, 0;
    return A;
}

Matrix col2(double a, double b) {
    Matrix B(2, 1);
    B << a, b;
    return B;
}

Vector vec2(double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
}

PwlConvex osc_pen(std::size_t segments = 4) {
    return build_penalization(ConvexProfile::quadratic(), Partition::uniform(-1, 1, segments));
}

DualProblem osc_problem(double T, FunctionalKind kind, Vector x0 = vec2(-1, 0.5), double beta = 1.0,
                        std::size_t nodes = 4000) {
    return {LtiSystem(oscillator(), col2(0, 1), std::move(x0), T), {osc_pen()}, kind,
            QuadratureGrid::trapezoid(T, nodes), {}, beta};
}

DualProblem scalar_problem(double x0) {
    Matrix a(1, 1), b(1, 1);
    a << 1.0;
    b << 1.0;
    Vector x(1);
    x << x0;
    auto L = build_penalization(ConvexProfile::quadratic(), Partition({-1.0, 0.0, 1.0}));
    return {LtiSystem(a, b, x, 1.0), {L}, FunctionalKind::Jml, QuadratureGrid::trapezoid(1.0, 4000)};
}

// smallest distance of any node output to a breakpoint, relative to |Phi_i|
double kink_clearance(const DualProblem& P, const Vector& p) {
    if (is_quadratic(P.kind()))
        return kInf;
    double d = kInf;
    for (std::size_t k = 0; k < P.channels(); ++k) {
        const Vector q = P.output(k, p);
        const Matrix& Phi = P.input_map(k);
        for (Eigen::Index i = 0; i < q.size(); ++i)
            for (double b : P.penalizations()[k].breakpoints())
                d = std::min(d, std::abs(q[i] - b) / (Phi.col(i).norm() + 1e-300));
    }
    return d;
}

} // namespace

TEST_CASE("functional kinds parse and print") {
    for (auto k : {FunctionalKind::Jml, FunctionalKind::JmlFabre, FunctionalKind::JmlBeta, FunctionalKind::J2,
                   FunctionalKind::J2Fabre})
        CHECK(parse_functional_kind(to_string(k)) == k);
    CHECK_FALSE(parse_functional_kind("J3").has_value());
    CHECK(is_fabre(FunctionalKind::J2Fabre));
    CHECK(is_quadratic(FunctionalKind::J2));
    CHECK_FALSE(is_quadratic(FunctionalKind::JmlBeta));
}

TEST_CASE("problem construction checks") {
    const LtiSystem sys(oscillator(), col2(0, 1), vec2(1, 0), 4.0);
    CHECK_THROWS_AS(DualProblem(sys, {}, FunctionalKind::Jml, QuadratureGrid::trapezoid(4.0, 100)), DimensionError);
    CHECK_THROWS_AS(DualProblem(sys, {osc_pen()}, FunctionalKind::JmlBeta, QuadratureGrid::trapezoid(4.0, 100), {}, 1.0),
                    DomainError);
    CHECK_THROWS(DualProblem(sys, {osc_pen()}, FunctionalKind::Jml, QuadratureGrid::trapezoid(3.0, 100)));
    // the quadratic kinds need no penalization
    CHECK_NOTHROW(DualProblem(sys, {}, FunctionalKind::J2, QuadratureGrid::trapezoid(4.0, 100)));
}

TEST_CASE("scalar functional in closed form") {
    // L(u) = |u| on R, q(t) = p e^{1-t}: J(p) = |p|(e - 1) + e x0 p
    const double x0 = 0.2;
    const auto P = scalar_problem(x0);
    const double e = std::numbers::e;
    for (double p : {-2.0, -0.3, 0.0, 0.7, 5.0}) {
        Vector v(1);
        v << p;
        const double exact = std::abs(p) * (e - 1.0) + e * x0 * p;
        CHECK_THAT(P.eval_functional(v), WithinAbs(exact, 1e-7 * (1.0 + std::abs(p))));
    }
}

TEST_CASE("oscillator output integrates sin^2 to pi over a period") {
    const double T = 2.0 * std::numbers::pi;
    const auto P = osc_problem(T, FunctionalKind::J2, vec2(0, 0));
    for (const Vector& p : {vec2(1, 0), vec2(0, 1), vec2(0.6, -0.8)})
        CHECK_THAT(P.penalty_integral(p), WithinAbs(std::numbers::pi, 1e-12));
}

TEST_CASE("functional composition and control scale") {
    const Vector p = vec2(0.3, -0.2);
    const auto Pml = osc_problem(4.0, FunctionalKind::Jml);
    const auto Pb = osc_problem(4.0, FunctionalKind::JmlBeta, vec2(-1, 0.5), 3.0);
    const auto Pf = osc_problem(4.0, FunctionalKind::JmlFabre);
    const double I = Pml.penalty_integral(p);
    const double lin = Pml.free_terminal().dot(p);
    CHECK_THAT(Pml.eval_functional(p), WithinAbs(I + lin, 1e-14));
    CHECK_THAT(Pb.eval_functional(p), WithinAbs(3.0 * I + lin, 1e-14));
    CHECK_THAT(Pf.eval_functional(p), WithinAbs(0.5 * I * I + lin, 1e-14));
    CHECK(Pml.control_scale(p) == 1.0);
    CHECK(Pb.control_scale(p) == 3.0);
    CHECK_THAT(Pf.control_scale(p), WithinAbs(I, 1e-14));
    // free terminal state of the rotation
    const Vector xT = oracle::exp_series(oscillator(), 4.0) * vec2(-1, 0.5);
    CHECK((Pml.free_terminal() - xT).norm() < 1e-13);
}

TEST_CASE("subgradient matches central differences at smooth points") {
    std::mt19937_64 rng(4242);
    const double h = 1e-6;
    const std::vector<DualProblem> problems = {
        osc_problem(4.0, FunctionalKind::Jml),
        osc_problem(4.0, FunctionalKind::JmlBeta, vec2(-1, 0.5), 3.0),
        osc_problem(0.5, FunctionalKind::JmlFabre),
        osc_problem(4.0, FunctionalKind::J2),
        osc_problem(0.5, FunctionalKind::J2Fabre),
    };
    int tested = 0;
    double worst = 0.0;
    while (tested < 100) {
        const auto& P = problems[static_cast<std::size_t>(tested) % problems.size()];
        const Vector p = oracle::random_vector(rng, 2, 0.7);
        // a smooth point: no output within 100 h of a breakpoint along any direction
        if (kink_clearance(P, p) < 100.0 * h)
            continue;
        const Vector g = P.eval_subgradient(p);
        Vector fd(2);
        for (int j = 0; j < 2; ++j) {
            Vector e = Vector::Zero(2);
            e[j] = h;
            fd[j] = (P.eval_functional(p + e) - P.eval_functional(p - e)) / (2 * h);
        }
        worst = std::max(worst, (g - fd).norm() / std::max(1.0, g.norm()));
        ++tested;
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("stationarity measure") {
    const auto P = osc_problem(4.0, FunctionalKind::Jml);
    // every output sits on the breakpoint 0 at p = 0, whose slopes +-0.5
    // make the zero subgradient reachable for this initial state
    CHECK(P.stationarity(vec2(0, 0)) <= P.optimizer().tolerance);
    CHECK(P.stationarity(vec2(0.5, 0.1)) > 0.1);
    const auto Q = osc_problem(4.0, FunctionalKind::J2);
    const Vector p = vec2(0.1, 0.2);
    CHECK_THAT(Q.stationarity(p), WithinAbs(Q.eval_subgradient(p).norm(), 1e-15));
}

TEST_CASE("subgradient descent on the oscillator") {
    SECTION("long horizon converges") {
        const auto P = osc_problem(4.0, FunctionalKind::Jml);
        const auto r = minimize(P);
        CHECK(r.status == SolveStatus::Converged);
        CHECK(r.stationarity <= P.optimizer().tolerance);
        CHECK(r.warnings.empty());
        REQUIRE_FALSE(r.trace.empty());
        CHECK(r.trace.back().best_value == r.value);
    }
    SECTION("quadratic functional converges to a zero gradient") {
        const auto P = osc_problem(4.0, FunctionalKind::J2);
        const auto r = minimize(P);
        CHECK(r.status == SolveStatus::Converged);
        CHECK(P.eval_subgradient(r.p_star).norm() <= 1e-6);
    }
    SECTION("short horizon: Jml diverges, Fabre converges") {
        CHECK(minimize(osc_problem(0.5, FunctionalKind::Jml)).status == SolveStatus::Diverged);
        const auto F = osc_problem(0.5, FunctionalKind::JmlFabre);
        const auto r = minimize(F);
        CHECK(r.status == SolveStatus::Converged);
        CHECK(F.stationarity(r.p_star) <= 1e-6);
    }
    SECTION("runs are deterministic") {
        const auto P = osc_problem(4.0, FunctionalKind::JmlFabre);
        const auto a = minimize(P);
        const auto b = minimize(P);
        CHECK(a.iterations == b.iterations);
        CHECK((a.p_star - b.p_star).norm() == 0.0);
    }
    SECTION("Polyak steps with a known optimal value") {
        const auto P = osc_problem(4.0, FunctionalKind::J2);
        const auto ref = minimize(P);
        OptimizerSettings s;
        s.value_lower_bound = ref.value;
        const DualProblem Q(P.system(), {}, FunctionalKind::J2, P.grid(), s);
        const auto r = minimize(Q);
        CHECK(r.status == SolveStatus::Converged);
        CHECK_THAT(r.value, WithinAbs(ref.value, 1e-8));
    }
}

TEST_CASE("scalar coercivity boundary") {
    // coercive iff |x0| < 1 - 1/e
    CHECK(minimize(scalar_problem(1.5)).status == SolveStatus::Diverged);
    const auto r = minimize(scalar_problem(0.5 * (1.0 - std::exp(-1.0))));
    CHECK(r.status == SolveStatus::Converged);
}

TEST_CASE("uncontrollable systems are flagged") {
    const LtiSystem sys(Matrix::Identity(2, 2), col2(1, 1), vec2(1, -1), 1.0);
    auto L = osc_pen();
    OptimizerSettings s;
    s.max_iterations = 500;
    const DualProblem P(sys, {L}, FunctionalKind::Jml, QuadratureGrid::trapezoid(1.0, 200), s);
    const auto r = minimize(P);
    REQUIRE_FALSE(r.warnings.empty());
    CHECK(r.warnings.front().find("Kalman") != std::string::npos);
}

TEST_CASE("multilevel and quadratic functionals differ by the interpolation error") {
    // |J_ml(p) - J2(p)| <= T h^2/2 max P'' whenever the output stays in [-1, 1]
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t M : {4u, 8u, 16u}) {
        const double T = 4.0;
        const LtiSystem sys(oscillator(), col2(0, 1), vec2(-1, 0.5), T);
        const DualProblem ml(sys, {osc_pen(M)}, FunctionalKind::Jml, QuadratureGrid::trapezoid(T, 2000));
        const DualProblem l2(sys, {}, FunctionalKind::J2, QuadratureGrid::trapezoid(T, 2000));
        const double h = 2.0 / static_cast<double>(M);
        for (int s = 0; s < 50; ++s) {
            Vector p = oracle::random_vector(rng, 2);
            p *= unif(rng) / ml.output(0, p).cwiseAbs().maxCoeff();
            CHECK(std::abs(ml.eval_functional(p) - l2.eval_functional(p)) <= T * h * h / 2.0 * 2.0);
        }
    }
}
