#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "../dual.hpp"
#include "../errors.hpp"
#include "../lti.hpp"
#include "../pwl.hpp"
#include "../quadrature.hpp"

namespace mlctl::experiment {

using json = nlohmann::json;

struct PenalizationSpec {
    std::string profile = "quadratic";  // "quadratic" or "custom-table"
    std::vector<double> points;         // partition
    std::vector<double> values;         // custom-table only, one per point
};

struct CheckSettings {
    double terminal_tol = 1e-2;
    bool staircase = true;
    bool solvable = true;
    bool fenchel = false;
    double fenchel_gap_tol = 1e-3;       // relative
    double fenchel_distance_tol = 0.05;  // relative discrete L2
    double fenchel_optimality = 0.99;    // fraction of nodes
    double fenchel_slack = 1e-6;
    double fenchel_tie_break = 1e-8;
    // expect = failure: the run counts as failed to control when the solver
    // diverges or the terminal norm exceeds this
    double failure_threshold = 0.1;
};

enum class Expectation { Success, Failure };

struct ExperimentConfig {
    std::string scenario;
    Matrix A;
    Matrix B;
    Vector x0;
    double T = 0.0;
    std::vector<PenalizationSpec> penalizations;  // one per channel after parsing
    FunctionalKind kind = FunctionalKind::Jml;
    double beta = 1.0;
    OptimizerSettings optimizer;
    std::size_t quadrature_nodes = 4000;
    std::size_t trajectory_points = 2001;
    CheckSettings checks;
    Expectation expect = Expectation::Success;
    std::uint64_t seed = 0;
    std::string output;  // empty: <output root>/<scenario>
    json source;         // the document this was parsed from
};

namespace detail {

inline void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!ok.count(it.key()))
            throw ConfigError(where.empty() ? it.key() : where + "." + it.key(), "unknown key");
}

inline const json& require(const json& j, const std::string& where, const char* key) {
    if (!j.contains(key))
        throw ConfigError(where.empty() ? key : where + "." + key, "missing");
    return j.at(key);
}

inline double number(const json& j, const std::string& field) {
    if (!j.is_number())
        throw ConfigError(field, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v))
        throw ConfigError(field, "must be finite");
    return v;
}

inline double positive(const json& j, const std::string& field) {
    const double v = number(j, field);
    if (!(v > 0.0))
        throw ConfigError(field, "must be positive");
    return v;
}

inline std::size_t count(const json& j, const std::string& field, std::size_t min) {
    if (!j.is_number_integer() || j.get<long long>() < static_cast<long long>(min))
        throw ConfigError(field, "expected an integer >= " + std::to_string(min));
    return j.get<std::size_t>();
}

inline bool boolean(const json& j, const std::string& field) {
    if (!j.is_boolean())
        throw ConfigError(field, "expected true or false");
    return j.get<bool>();
}

inline std::vector<double> numbers(const json& j, const std::string& field) {
    if (!j.is_array() || j.empty())
        throw ConfigError(field, "expected a nonempty array of numbers");
    std::vector<double> v;
    for (std::size_t i = 0; i < j.size(); ++i)
        v.push_back(number(j[i], field + "[" + std::to_string(i) + "]"));
    return v;
}

inline Matrix matrix(const json& j, const std::string& field) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw ConfigError(field, "expected a nonempty array of rows");
    const std::size_t cols = j[0].size();
    Matrix M(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < j.size(); ++r) {
        const auto row = numbers(j[r], field + "[" + std::to_string(r) + "]");
        if (row.size() != cols)
            throw ConfigError(field, "rows have different lengths");
        for (std::size_t c = 0; c < cols; ++c)
            M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
    }
    return M;
}

inline PenalizationSpec penalization(const json& j, const std::string& where) {
    if (!j.is_object())
        throw ConfigError(where, "expected an object");
    reject_unknown(j, where, {"profile", "partition", "uniform", "values"});
    PenalizationSpec p;
    if (j.contains("profile")) {
        if (!j["profile"].is_string())
            throw ConfigError(where + ".profile", "expected a string");
        p.profile = j["profile"].get<std::string>();
    }
    if (p.profile != "quadratic" && p.profile != "custom-table")
        throw ConfigError(where + ".profile", "must be quadratic or custom-table");
    if (j.contains("partition") == j.contains("uniform"))
        throw ConfigError(where + ".partition", "give exactly one of partition or uniform");
    if (j.contains("partition")) {
        p.points = numbers(j["partition"], where + ".partition");
    } else {
        const auto& u = j["uniform"];
        const std::string f = where + ".uniform";
        if (!u.is_object())
            throw ConfigError(f, "expected {lo, hi, segments}");
        reject_unknown(u, f, {"lo", "hi", "segments"});
        const double lo = number(require(u, f, "lo"), f + ".lo");
        const double hi = number(require(u, f, "hi"), f + ".hi");
        const std::size_t m = count(require(u, f, "segments"), f + ".segments", 2);
        try {
            p.points = Partition::uniform(lo, hi, m).points();
        } catch (const std::exception& e) {
            throw ConfigError(f, e.what());
        }
    }
    try {
        (void)Partition(p.points);
    } catch (const std::exception& e) {
        throw ConfigError(where + ".partition", e.what());
    }
    if (p.profile == "custom-table") {
        p.values = numbers(require(j, where, "values"), where + ".values");
        if (p.values.size() != p.points.size())
            throw ConfigError(where + ".values", "need one value per partition point");
    } else if (j.contains("values")) {
        throw ConfigError(where + ".values", "only allowed for custom-table profiles");
    }
    return p;
}

} // namespace detail

inline ExperimentConfig parse_config(const json& j) {
    using namespace detail;
    if (!j.is_object())
        throw ConfigError("<root>", "expected an object");
    reject_unknown(j, "", {"scenario", "system", "penalization", "functional", "optimizer", "grid", "checks", "expect",
                           "seed", "output"});
    ExperimentConfig c;
    c.source = j;

    const auto& name = require(j, "", "scenario");
    if (!name.is_string() || name.get<std::string>().empty())
        throw ConfigError("scenario", "expected a nonempty string");
    c.scenario = name.get<std::string>();
    if (c.scenario.find_first_of("/\\") != std::string::npos || c.scenario == "." || c.scenario == "..")
        throw ConfigError("scenario", "must be usable as a directory name");

    const auto& sys = require(j, "", "system");
    if (!sys.is_object())
        throw ConfigError("system", "expected an object");
    reject_unknown(sys, "system", {"A", "B", "x0", "T"});
    c.A = matrix(require(sys, "system", "A"), "system.A");
    c.B = matrix(require(sys, "system", "B"), "system.B");
    const auto x0 = numbers(require(sys, "system", "x0"), "system.x0");
    c.x0 = Eigen::Map<const Vector>(x0.data(), static_cast<Eigen::Index>(x0.size()));
    c.T = positive(require(sys, "system", "T"), "system.T");
    if (c.A.rows() != c.A.cols())
        throw ConfigError("system.A", "must be square");
    if (c.B.rows() != c.A.rows())
        throw ConfigError("system.B", "must have as many rows as A");
    if (c.x0.size() != c.A.rows())
        throw ConfigError("system.x0", "must have as many entries as A has rows");

    const auto K = static_cast<std::size_t>(c.B.cols());
    const auto& pen = require(j, "", "penalization");
    if (pen.is_array()) {
        if (pen.size() != K)
            throw ConfigError("penalization", "need one entry per control channel (" + std::to_string(K) + ")");
        for (std::size_t k = 0; k < K; ++k)
            c.penalizations.push_back(penalization(pen[k], "penalization[" + std::to_string(k) + "]"));
    } else {
        c.penalizations.assign(K, penalization(pen, "penalization"));
    }

    if (j.contains("functional")) {
        const auto& f = j["functional"];
        if (!f.is_object())
            throw ConfigError("functional", "expected an object");
        reject_unknown(f, "functional", {"kind", "beta"});
        if (f.contains("kind")) {
            const auto kind = f["kind"].is_string() ? parse_functional_kind(f["kind"].get<std::string>()) : std::nullopt;
            if (!kind)
                throw ConfigError("functional.kind", "must be one of Jml, JmlFabre, JmlBeta, J2, J2Fabre");
            c.kind = *kind;
        }
        if (f.contains("beta"))
            c.beta = positive(f["beta"], "functional.beta");
    }
    if (c.kind == FunctionalKind::JmlBeta && !(c.beta > 1.0))
        throw ConfigError("functional.beta", "JmlBeta needs beta > 1");

    if (j.contains("optimizer")) {
        const auto& o = j["optimizer"];
        const std::string w = "optimizer";
        if (!o.is_object())
            throw ConfigError(w, "expected an object");
        reject_unknown(o, w, {"initial_step", "max_iterations", "tolerance", "improvement_tol", "stall_window",
                              "growth_streak", "divergence_threshold", "divergence_window", "value_lower_bound",
                              "keep_trace"});
        auto& s = c.optimizer;
        if (o.contains("initial_step")) s.initial_step = positive(o["initial_step"], w + ".initial_step");
        if (o.contains("max_iterations")) s.max_iterations = static_cast<int>(count(o["max_iterations"], w + ".max_iterations", 1));
        if (o.contains("tolerance")) s.tolerance = positive(o["tolerance"], w + ".tolerance");
        if (o.contains("improvement_tol")) s.improvement_tol = positive(o["improvement_tol"], w + ".improvement_tol");
        if (o.contains("stall_window")) s.stall_window = static_cast<int>(count(o["stall_window"], w + ".stall_window", 1));
        if (o.contains("growth_streak")) s.growth_streak = static_cast<int>(count(o["growth_streak"], w + ".growth_streak", 1));
        if (o.contains("divergence_threshold")) s.divergence_threshold = positive(o["divergence_threshold"], w + ".divergence_threshold");
        if (o.contains("divergence_window")) s.divergence_window = static_cast<int>(count(o["divergence_window"], w + ".divergence_window", 1));
        if (o.contains("value_lower_bound")) s.value_lower_bound = number(o["value_lower_bound"], w + ".value_lower_bound");
        if (o.contains("keep_trace")) s.keep_trace = boolean(o["keep_trace"], w + ".keep_trace");
    }

    if (j.contains("grid")) {
        const auto& g = j["grid"];
        if (!g.is_object())
            throw ConfigError("grid", "expected an object");
        reject_unknown(g, "grid", {"quadrature", "trajectory"});
        if (g.contains("quadrature")) c.quadrature_nodes = count(g["quadrature"], "grid.quadrature", 3);
        if (g.contains("trajectory")) c.trajectory_points = count(g["trajectory"], "grid.trajectory", 2);
    }

    if (j.contains("checks")) {
        const auto& k = j["checks"];
        const std::string w = "checks";
        if (!k.is_object())
            throw ConfigError(w, "expected an object");
        reject_unknown(k, w, {"terminal_tol", "staircase", "solvable", "fenchel", "fenchel_gap_tol",
                              "fenchel_distance_tol", "fenchel_optimality", "fenchel_slack", "fenchel_tie_break",
                              "failure_threshold"});
        auto& s = c.checks;
        if (k.contains("terminal_tol")) s.terminal_tol = positive(k["terminal_tol"], w + ".terminal_tol");
        if (k.contains("staircase")) s.staircase = boolean(k["staircase"], w + ".staircase");
        if (k.contains("solvable")) s.solvable = boolean(k["solvable"], w + ".solvable");
        if (k.contains("fenchel")) s.fenchel = boolean(k["fenchel"], w + ".fenchel");
        if (k.contains("fenchel_gap_tol")) s.fenchel_gap_tol = positive(k["fenchel_gap_tol"], w + ".fenchel_gap_tol");
        if (k.contains("fenchel_distance_tol")) s.fenchel_distance_tol = positive(k["fenchel_distance_tol"], w + ".fenchel_distance_tol");
        if (k.contains("fenchel_optimality")) s.fenchel_optimality = positive(k["fenchel_optimality"], w + ".fenchel_optimality");
        if (k.contains("fenchel_slack")) s.fenchel_slack = positive(k["fenchel_slack"], w + ".fenchel_slack");
        if (k.contains("fenchel_tie_break")) {
            s.fenchel_tie_break = number(k["fenchel_tie_break"], w + ".fenchel_tie_break");
            if (s.fenchel_tie_break < 0.0)
                throw ConfigError(w + ".fenchel_tie_break", "must be nonnegative");
        }
        if (k.contains("failure_threshold")) s.failure_threshold = positive(k["failure_threshold"], w + ".failure_threshold");
    }
    if (c.checks.fenchel && c.kind != FunctionalKind::Jml && c.kind != FunctionalKind::JmlBeta)
        throw ConfigError("checks.fenchel", "only available for Jml and JmlBeta");

    if (j.contains("expect")) {
        const auto& e = j["expect"];
        if (e == "success")
            c.expect = Expectation::Success;
        else if (e == "failure")
            c.expect = Expectation::Failure;
        else
            throw ConfigError("expect", "must be success or failure");
    }
    if (j.contains("seed")) c.seed = static_cast<std::uint64_t>(count(j["seed"], "seed", 0));
    if (j.contains("output")) {
        if (!j["output"].is_string())
            throw ConfigError("output", "expected a string");
        c.output = j["output"].get<std::string>();
    }
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("<file>", "cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("<file>", std::string("invalid JSON in ") + path.string() + ": " + e.what());
    }
    return parse_config(j);
}

inline LtiSystem make_system(const ExperimentConfig& c) { return {c.A, c.B, c.x0, c.T}; }

inline ConvexProfile make_profile(const PenalizationSpec& p) {
    if (p.profile == "custom-table")
        return ConvexProfile::table(p.points, p.values);
    return ConvexProfile::quadratic();
}

inline std::vector<PwlConvex> make_penalizations(const ExperimentConfig& c) {
    std::vector<PwlConvex> out;
    for (std::size_t k = 0; k < c.penalizations.size(); ++k) {
        const auto& p = c.penalizations[k];
        try {
            out.push_back(build_penalization(make_profile(p), Partition(p.points)));
        } catch (const std::exception& e) {
            throw ConfigError("penalization[" + std::to_string(k) + "]", e.what());
        }
    }
    return out;
}

inline DualProblem make_problem(const ExperimentConfig& c) {
    return {make_system(c), make_penalizations(c), c.kind, QuadratureGrid::trapezoid(c.T, c.quadrature_nodes),
            c.optimizer, c.beta};
}

} // namespace mlctl::experiment
