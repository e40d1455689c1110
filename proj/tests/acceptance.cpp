// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "mlctl/experiment/io.hpp"
#include "mlctl/experiment/runner.hpp"
#include "oracles.hpp"

using namespace mlctl;
using namespace mlctl::experiment;
namespace fs = std::filesystem;

namespace {

const fs::path kScenarios = MLCTL_SCENARIO_DIR;

struct Verdict {
    bool pass = true;
    std::ostringstream note;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            note << " [failed: " << what << "]";
        }
    }
};

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

std::map<std::string, ExperimentReport> g_reports;

const ExperimentReport& report(const std::string& name) {
    auto it = g_reports.find(name);
    if (it == g_reports.end())
        it = g_reports.emplace(name, run_scenario(load_config(kScenarios / (name + ".json")))).first;
    return it->second;
}

double terminal(const ExperimentReport& r) { return r.terminal_norm.value_or(kInf); }

bool levels_within(const MultilevelControl& u, const std::vector<double>& R) {
    for (const auto& ch : u.channels)
        for (double v : ch.levels)
            if (std::find(R.begin(), R.end(), v) == R.end())
                return false;
    return true;
}

bool all_staircase(const ExperimentReport& r) {
    if (r.staircase.empty())
        return false;
    return std::all_of(r.staircase.begin(), r.staircase.end(), [](const StaircaseVerdict& v) { return v.ok; });
}

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

// ---- 1 ------------------------------------------------------------------

void osc_t4(Verdict& v) {
    const auto& r = report("osc-T4");
    const auto* u = r.multilevel();
    v.require(r.solve.status == SolveStatus::Converged, "converged");
    v.require(terminal(r) <= 1e-2, "|x(T)| <= 1e-2");
    v.require(u && levels_within(*u, {-1.5, -0.5, 0.5, 1.5}), "levels in {-1.5,-0.5,0.5,1.5}");
    v.require(all_staircase(r), "staircase");
    v.require(r.timings.total <= 30.0, "runtime <= 30 s");
    v.note << " |x(T)|=" << sci(terminal(r)) << " switches=" << (u ? u->switch_count() : 0)
           << " runtime=" << sci(r.timings.total) << "s";
}

// ---- 2 ------------------------------------------------------------------

void short_horizon(Verdict& v) {
    const auto& a = report("osc-T05-Jml");
    const auto& b = report("osc-T05-Fabre");
    const auto& c = report("osc-T05-small-x0");
    v.require(a.solve.status == SolveStatus::Diverged || terminal(a) > 0.1, "Jml x0=(-1,0.5) fails");
    v.require(b.solve.status != SolveStatus::Diverged && terminal(b) <= 1e-2, "JmlFabre succeeds");
    v.require(c.solve.status != SolveStatus::Diverged && terminal(c) <= 1e-2, "Jml x0=(-0.25,0.25) succeeds");
    v.note << " Jml:" << to_string(a.solve.status) << " Fabre |x(T)|=" << sci(terminal(b))
           << " small-x0:" << to_string(c.solve.status) << " |x(T)|=" << sci(terminal(c));
}

// ---- 3 ------------------------------------------------------------------

void scalar_boundary(Verdict& v) {
    const auto& d = report("scalar-diverge");
    const auto& c = report("scalar-converge");
    v.require(d.solve.status == SolveStatus::Diverged, "x0=1.5 diverges");
    v.require(c.solve.status == SolveStatus::Converged, "x0=(1-1/e)/2 converges");
    v.require(terminal(c) <= 1e-3, "|x(T)| <= 1e-3");
    v.note << " x0=1.5:" << to_string(d.solve.status) << " x0=(1-1/e)/2:" << to_string(c.solve.status)
           << " |x(T)|=" << sci(terminal(c));
}

// ---- 4 ------------------------------------------------------------------

void convergence(Verdict& v) {
    const auto cfg = load_config(kScenarios / "osc-T4.json");
    const auto table = convergence_study(cfg, {4, 8, 16, 32}, 100);
    v.require(table.reference_status != SolveStatus::Diverged, "L2 reference solves");
    bool decreasing = table.rows.size() == 4;
    for (std::size_t i = 1; i < table.rows.size(); ++i)
        decreasing = decreasing && table.rows[i].distance < table.rows[i - 1].distance;
    v.require(decreasing, "distances strictly decreasing");
    for (const auto& row : table.rows) {
        const double h = 2.0 / static_cast<double>(row.segments);
        v.require(row.max_difference <= h * h / 2.0 * 2.0 * cfg.T, "|Jml-J2| bound at M=" + std::to_string(row.segments));
    }
    v.note << " distances";
    for (const auto& row : table.rows)
        v.note << " " << row.segments << ":" << sci(row.distance);
}

// ---- 5 ------------------------------------------------------------------

void fenchel(Verdict& v) {
    const auto& r = report("osc-T4");
    v.require(r.fenchel.has_value(), "primal solved");
    if (!r.fenchel)
        return;
    const auto& f = *r.fenchel;
    v.require(f.status == PrimalStatus::Optimal, "primal optimal");
    v.require(std::abs(f.relative_gap) <= 1e-3, "relative gap <= 1e-3");
    v.require(f.distance <= 0.05, "distance <= 5%");
    v.require(f.optimality_fraction >= 0.99, "optimality at >= 99% of nodes");
    v.note << " gap=" << sci(f.relative_gap) << " distance=" << sci(f.distance)
           << " optimality=" << sci(f.optimality_fraction);
}

// ---- 6 ------------------------------------------------------------------

void solvable_set(Verdict& v) {
    int covered = 0;
    for (const auto& entry : fs::directory_iterator(kScenarios)) {
        const auto cfg = load_config(entry.path());
        if (cfg.kind != FunctionalKind::Jml || cfg.B.cols() != 1)
            continue;
        const auto& r = report(cfg.scenario);
        if (r.solve.status != SolveStatus::Converged || !r.controlled(cfg.checks.terminal_tol))
            continue;
        const auto pens = make_penalizations(cfg);
        const auto b = solvable_bound(make_system(cfg), pens[0]);
        v.require(b.passes, cfg.scenario + " within the bound");
        ++covered;
    }
    v.require(covered > 0, "some scenario covered");
    double worst = 0.0;
    for (double T : {0.5, 1.0, 4.0, 10.0})
        worst = std::max(worst, std::abs(gram_norm(oscillator(), col2(0, 1), T) - std::sqrt(T)));
    v.require(worst <= 1e-8, "oscillator Gram norm = sqrt(T)");
    v.note << " scenarios=" << covered << " gram error=" << sci(worst);
}

// ---- 7 ------------------------------------------------------------------

void two_channel(Verdict& v) {
    const auto& r = report("two-channel");
    const auto* u = r.multilevel();
    v.require(u && u->channels.size() == 2, "two channels");
    v.require(terminal(r) <= 1e-2, "|x(T)| <= 1e-2");
    v.require(r.staircase.size() == 2 && all_staircase(r), "both channels staircase");
    v.note << " |x(T)|=" << sci(terminal(r));
}

// ---- 8 ------------------------------------------------------------------

PwlConvex random_pwl(std::mt19937_64& rng, int m) {
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::vector<double> knots, s;
    for (int i = 0; i < m; ++i)
        knots.push_back(u(rng));
    for (int i = 0; i <= m; ++i)
        s.push_back(u(rng));
    std::sort(knots.begin(), knots.end());
    std::sort(s.begin(), s.end());
    for (int i = 1; i < m; ++i)
        knots[i] = std::max(knots[i], knots[i - 1] + 0.05);
    for (int i = 1; i <= m; ++i)
        s[i] = std::max(s[i], s[i - 1] + 0.05);
    std::vector<PwlConvex::Piece> pieces;
    double y = u(rng);
    pieces.push_back({s[0], {{knots.front(), y}}});
    for (int i = 0; i < m; ++i) {
        const double xn = i + 1 < m ? knots[i + 1] : knots[i] + 1.0;
        const double yn = y + s[i + 1] * (xn - knots[i]);
        pieces.push_back({s[i + 1], {{knots[i], y}, {xn, yn}}});
        y = yn;
    }
    return {-kInf, kInf, knots, pieces, -kInf, kInf};
}

// (a) Fenchel-Young and subdifferential duality
bool fenchel_young(double& worst) {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    bool ok = true;
    worst = 0.0;
    for (int n = 0; n < 1000; ++n) {
        const PwlConvex f = random_pwl(rng, 1 + n % 5);
        const PwlConvex fs = conjugate(f);
        const double u = -4.0 + 8.0 * unif(rng);
        const double v = fs.domain_lo() + (fs.domain_hi() - fs.domain_lo()) * unif(rng);
        worst = std::max(worst, u * v - f.value(u) - fs.value(v));
        const auto sd = f.subdifferential(u);
        const double vp = sd.lower + (sd.upper - sd.lower) * unif(rng);
        worst = std::max(worst, std::abs(f.value(u) + fs.value(vp) - u * vp));
        ok = ok && fs.subdifferential(vp).contains(u, 1e-10);
    }
    return ok && worst <= 1e-10;
}

// (b) conjugate vs brute-force supremum over a grid of spacing delta
bool brute_conjugate(double& worst) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double delta = 1e-3;
    bool ok = true;
    worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
        const PwlConvex f = random_pwl(rng, 2 + inst % 5);
        const PwlConvex fs = conjugate(f);
        double amax = 0.0;
        for (const auto& p : f.pieces())
            amax = std::max(amax, std::abs(p.slope));
        for (int s = 0; s < 25; ++s) {
            const double v = fs.domain_lo() + (fs.domain_hi() - fs.domain_lo()) * unif(rng);
            double brute = -kInf;
            for (int i = 0; i <= 8000; ++i) {
                const double u = -4.0 + i * delta;
                brute = std::max(brute, u * v - f.value(u));
            }
            const double err = fs.value(v) - brute;
            worst = std::max(worst, err);
            ok = ok && err >= -1e-12 && err <= 0.5 * delta * (std::abs(v) + amax) + 1e-12;
        }
    }
    return ok;
}

// (c) subgradient vs central differences at smooth points
bool fd_subgradient(double& worst) {
    const Matrix B = col2(0, 1);
    auto L = build_penalization(ConvexProfile::quadratic(), Partition::uniform(-1, 1, 4));
    auto problem = [&](double T, FunctionalKind k, double beta = 1.0) {
        return DualProblem(LtiSystem(oscillator(), B, vec2(-1, 0.5), T), {L}, k, QuadratureGrid::trapezoid(T, 4000), {},
                           beta);
    };
    const std::vector<DualProblem> ps{problem(4.0, FunctionalKind::Jml), problem(4.0, FunctionalKind::JmlBeta, 3.0),
                                      problem(0.5, FunctionalKind::JmlFabre), problem(4.0, FunctionalKind::J2),
                                      problem(0.5, FunctionalKind::J2Fabre)};
    std::mt19937_64 rng(4242);
    const double h = 1e-6;
    worst = 0.0;
    int tested = 0;
    while (tested < 100) {
        const auto& P = ps[static_cast<std::size_t>(tested) % ps.size()];
        const Vector p = oracle::random_vector(rng, 2, 0.7);
        if (!is_quadratic(P.kind())) {
            double clear = kInf;
            const Vector q = P.output(0, p);
            const Matrix& Phi = P.input_map(0);
            for (Eigen::Index i = 0; i < q.size(); ++i)
                for (double b : L.breakpoints())
                    clear = std::min(clear, std::abs(q[i] - b) / (Phi.col(i).norm() + 1e-300));
            if (clear < 100.0 * h)
                continue;
        }
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
    return worst <= 1e-5;
}

// (d) interpolation error vs the second-derivative bound
bool interpolation(double& worst_ratio) {
    std::mt19937_64 rng(314);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    bool ok = true;
    worst_ratio = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        const double a = 0.1 + unif(rng), b = unif(rng), c = unif(rng);
        std::vector<double> pts{-2.0, 2.0};
        const int extra = 1 + static_cast<int>(unif(rng) * 10);
        for (int i = 0; i < extra; ++i)
            pts.push_back(-1.9 + 3.8 * unif(rng));
        std::sort(pts.begin(), pts.end());
        pts.erase(std::unique(pts.begin(), pts.end(), [](double x, double y) { return y - x < 1e-3; }), pts.end());
        if (pts.size() < 3)
            pts = {-2.0, 0.0, 2.0};
        const double m = pts[1 + static_cast<std::size_t>(unif(rng) * static_cast<double>(pts.size() - 2))];
        ConvexProfile P{"random",
                        [=](double u) {
                            const double d = u - m;
                            return a * d * d + b * d * d * d * d + c * (std::cosh(d) - 1.0);
                        },
                        [=](double u) {
                            const double d = u - m;
                            return 2.0 * a + 12.0 * b * d * d + c * std::cosh(d);
                        },
                        m};
        const Partition part(pts);
        const auto bound = interp_error_bound(P, part);
        const auto err = measure_interp_error(P, build_penalization(P, part), part);
        for (std::size_t k = 0; k < err.size(); ++k) {
            ok = ok && err[k] <= bound.per_segment[k] * (1.0 + 1e-12);
            if (bound.per_segment[k] > 0.0)
                worst_ratio = std::max(worst_ratio, err[k] / bound.per_segment[k]);
        }
    }
    return ok;
}

// (e) matrix exponential vs power series
bool expm(double& worst) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    worst = 0.0;
    for (int s = 0; s < 100; ++s) {
        Matrix A = oracle::random_matrix(rng, 4, 4);
        A *= 2.0 * u(rng) / Eigen::JacobiSVD<Matrix>(A).singularValues()(0);
        const Matrix ref = oracle::exp_series(A);
        worst = std::max(worst, (mat_exp(A) - ref).norm() / ref.norm());
    }
    return worst <= 1e-10;
}

struct Steps {
    std::vector<double> switches;
    std::vector<Vector> values;
    Vector operator()(double t) const {
        return values[static_cast<std::size_t>(std::upper_bound(switches.begin(), switches.end(), t) - switches.begin())];
    }
    std::vector<double> discontinuities() const { return switches; }
};

// (f) <x(T), p_T> - <x0, p(0)> = int <u, B^T p>
bool pairing(double& worst) {
    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    worst = 0.0;
    for (int s = 0; s < 20; ++s) {
        const Matrix A = oracle::random_matrix(rng, 3, 3, 0.5);
        const Matrix B = oracle::random_matrix(rng, 3, 2);
        const Vector x0 = oracle::random_vector(rng, 3);
        const Vector pT = oracle::random_vector(rng, 3);
        const double T = 1.0 + 2.0 * unif(rng);
        Steps u;
        for (int j = 0; j < 4; ++j)
            u.switches.push_back(T * unif(rng));
        std::sort(u.switches.begin(), u.switches.end());
        for (int j = 0; j < 5; ++j)
            u.values.push_back(oracle::random_vector(rng, 2));
        const LtiSystem sys(A, B, x0, T);
        const auto tr = simulate_forward(sys, u, uniform_grid(T, 11));
        const double lhs = tr.terminal().dot(pT) - x0.dot(adjoint_state(sys, pT, 0.0));
        std::vector<double> cuts{0.0};
        cuts.insert(cuts.end(), u.switches.begin(), u.switches.end());
        cuts.push_back(T);
        double rhs = 0.0;
        for (std::size_t j = 0; j + 1 < cuts.size(); ++j)
            rhs += oracle::integrate(
                [&](double t) { return u.values[j].dot(B.transpose() * oracle::exp_series(A.transpose(), T - t) * pT); },
                cuts[j], cuts[j + 1], 8);
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    return worst <= 1e-10;
}

void properties(Verdict& v) {
    const std::pair<const char*, bool (*)(double&)> suites[] = {
        {"a", fenchel_young}, {"b", brute_conjugate}, {"c", fd_subgradient},
        {"d", interpolation}, {"e", expm},            {"f", pairing},
    };
    for (const auto& [tag, fn] : suites) {
        double measure = 0.0;
        const bool ok = fn(measure);
        v.require(ok, std::string("suite ") + tag);
        v.note << " " << tag << "=" << sci(measure);
    }
}

// ---- 9 ------------------------------------------------------------------

void beta_levels(Verdict& v) {
    const auto& r = report("osc-T4-beta3");
    const auto* u = r.multilevel();
    v.require(u != nullptr, "multilevel control");
    if (!u)
        return;
    const auto cfg = load_config(kScenarios / "osc-T4-beta3.json");
    std::vector<double> R;
    for (double s : slopes(make_penalizations(cfg)[0]))
        R.push_back(s * 3.0);
    v.require(levels_within(*u, R), "levels bitwise in 3 x slopes");
    v.require(all_staircase(r), "staircase");
    v.require(terminal(r) <= cfg.checks.terminal_tol, "terminal check");
    v.note << " |x(T)|=" << sci(terminal(r));
}

} // namespace

int main() {
    const std::pair<const char*, std::function<void(Verdict&)>> criteria[] = {
        {"1 osc-T4 reproduction", osc_t4},
        {"2 short-horizon dichotomy", short_horizon},
        {"3 scalar coercivity boundary", scalar_boundary},
        {"4 convergence to L2", convergence},
        {"5 Fenchel duality", fenchel},
        {"6 solvable-set necessity", solvable_set},
        {"7 two channels", two_channel},
        {"8 property suites", properties},
        {"9 beta modulation", beta_levels},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Verdict v;
        try {
            fn(v);
        } catch (const std::exception& e) {
            v.pass = false;
            v.note << " [exception: " << e.what() << "]";
        }
        failed += !v.pass;
        std::printf("%s  %s:%s\n", v.pass ? "PASS" : "FAIL", name, v.note.str().c_str());
        std::fflush(stdout);
    }
    std::printf("%d of 9 criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
