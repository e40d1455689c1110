#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "../extract.hpp"
#include "config.hpp"
#include "runner.hpp"

namespace mlctl::experiment {

namespace fs = std::filesystem;

inline std::string format17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// non-finite doubles become null
inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const Matrix& M) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < M.cols(); ++c)
            row.push_back(M(r, c));
        rows.push_back(row);
    }
    return rows;
}

// ----------------------------------------------------------------------------
// Multilevel controls
// ----------------------------------------------------------------------------

inline json control_to_json(const MultilevelControl& u) {
    json ch = json::array();
    for (const auto& c : u.channels)
        ch.push_back({{"levels", c.levels}, {"switch_times", c.switch_times}, {"scale", c.scale}, {"singular", c.singular}});
    return {{"horizon", u.horizon}, {"channels", ch}};
}

inline MultilevelControl control_from_json(const json& j) {
    MultilevelControl u;
    try {
        u.horizon = j.at("horizon").get<double>();
        for (const auto& c : j.at("channels")) {
            ChannelWaveform w;
            w.levels = c.at("levels").get<std::vector<double>>();
            w.switch_times = c.at("switch_times").get<std::vector<double>>();
            w.scale = c.at("scale").get<double>();
            w.singular = c.value("singular", false);
            if (w.levels.size() != w.switch_times.size() + 1)
                throw ConfigError("control.channels", "need one more level than switch times");
            u.channels.push_back(std::move(w));
        }
    } catch (const json::exception& e) {
        throw ConfigError("control", e.what());
    }
    return u;
}

// ----------------------------------------------------------------------------
// Configs
// ----------------------------------------------------------------------------

// Normalized document that parse_config reads back to the same config,
// with command line overrides applied.
inline json config_to_json(const ExperimentConfig& c) {
    json pens = json::array();
    for (const auto& p : c.penalizations) {
        json e = {{"profile", p.profile}, {"partition", p.points}};
        if (p.profile == "custom-table")
            e["values"] = p.values;
        pens.push_back(e);
    }
    const auto& o = c.optimizer;
    json opt = {{"initial_step", o.initial_step},
                {"max_iterations", o.max_iterations},
                {"tolerance", o.tolerance},
                {"improvement_tol", o.improvement_tol},
                {"stall_window", o.stall_window},
                {"growth_streak", o.growth_streak},
                {"divergence_threshold", o.divergence_threshold},
                {"divergence_window", o.divergence_window},
                {"keep_trace", o.keep_trace}};
    if (o.value_lower_bound)
        opt["value_lower_bound"] = *o.value_lower_bound;
    const auto& k = c.checks;
    json out = {
        {"scenario", c.scenario},
        {"system", {{"A", to_json(c.A)}, {"B", to_json(c.B)}, {"x0", to_json(c.x0)}, {"T", c.T}}},
        {"penalization", pens},
        {"functional", {{"kind", to_string(c.kind)}, {"beta", c.beta}}},
        {"optimizer", opt},
        {"grid", {{"quadrature", c.quadrature_nodes}, {"trajectory", c.trajectory_points}}},
        {"checks",
         {{"terminal_tol", k.terminal_tol},
          {"staircase", k.staircase},
          {"solvable", k.solvable},
          {"fenchel", k.fenchel},
          {"fenchel_gap_tol", k.fenchel_gap_tol},
          {"fenchel_distance_tol", k.fenchel_distance_tol},
          {"fenchel_optimality", k.fenchel_optimality},
          {"fenchel_slack", k.fenchel_slack},
          {"fenchel_tie_break", k.fenchel_tie_break},
          {"failure_threshold", k.failure_threshold}}},
        {"expect", c.expect == Expectation::Success ? "success" : "failure"},
        {"seed", c.seed}};
    if (!c.output.empty())
        out["output"] = c.output;
    return out;
}

// ----------------------------------------------------------------------------
// Reports
// ----------------------------------------------------------------------------

inline json checks_to_json(const std::vector<CheckResult>& checks) {
    json a = json::array();
    for (const auto& c : checks)
        a.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    return a;
}

inline json summary_to_json(const ExperimentReport& r) {
    return {{"scenario", r.scenario},
            {"outcome", to_string(r.outcome)},
            {"exit_code", exit_code(r.outcome)},
            {"passed", r.outcome == Outcome::Pass},
            {"expect", r.expect == Expectation::Success ? "success" : "failure"},
            {"status", to_string(r.solve.status)},
            {"terminal_norm", r.terminal_norm ? number_or_null(*r.terminal_norm) : json(nullptr)},
            {"checks", checks_to_json(r.checks)}};
}

inline json report_to_json(const ExperimentReport& r, const ExperimentConfig& cfg) {
    const auto& s = r.solve;
    json j = summary_to_json(r);
    j["config"] = config_to_json(cfg);
    j["solve"] = {{"status", to_string(s.status)},
                  {"p_star", s.p_star.size() ? to_json(s.p_star) : json::array()},
                  {"value", number_or_null(s.value)},
                  {"iterations", s.iterations},
                  {"stationarity", number_or_null(s.stationarity)},
                  {"subgradient_norm", number_or_null(s.subgradient_norm)},
                  {"refined", s.refined},
                  {"warnings", s.warnings}};
    if (!r.error.empty())
        j["error"] = r.error;
    if (const auto* ml = r.multilevel()) {
        j["control"] = control_to_json(*ml);
        j["control"]["admissible_levels"] = r.admissible;
        json st = json::array();
        for (const auto& v : r.staircase)
            st.push_back({{"ok", v.ok}, {"violation", v.violation ? json(*v.violation) : json(nullptr)}});
        j["staircase"] = st;
    } else if (const auto* l2 = std::get_if<L2Control>(&r.control)) {
        j["control"] = {{"type", "l2"}, {"factor", l2->factor}};
    }
    if (r.fenchel) {
        const auto& f = *r.fenchel;
        j["fenchel"] = {{"primal_status", to_string(f.status)},
                        {"gap", f.gap},
                        {"relative_gap", f.relative_gap},
                        {"primal", f.primal},
                        {"dual", f.dual},
                        {"distance", f.distance},
                        {"optimality_fraction", f.optimality_fraction},
                        {"simplex_iterations", f.simplex_iterations}};
    }
    if (r.solvable) {
        const auto& b = *r.solvable;
        j["solvable"] = {{"sigma_bar", b.sigma_bar}, {"gram_norm", b.gram_norm}, {"bound", b.bound},
                         {"x0_norm", b.x0_norm}, {"passes", b.passes}};
    }
    const auto& t = r.timings;
    j["timings"] = {{"solve", t.solve}, {"extract", t.extract}, {"simulate", t.simulate}, {"fenchel", t.fenchel},
                    {"total", t.total}};
    return j;
}

// ----------------------------------------------------------------------------
// Files
// ----------------------------------------------------------------------------

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << text;
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("<file>", "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("<file>", path.string() + ": " + e.what());
    }
}

// header row, then one row per sample, every value as %.17g
inline std::string csv_table(const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows) {
    std::string s;
    for (std::size_t i = 0; i < header.size(); ++i)
        s += (i ? "," : "") + header[i];
    s += '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i)
                s += ',';
            s += format17(row[i]);
        }
        s += '\n';
    }
    return s;
}

inline std::string trajectory_csv(const Trajectory& tr) {
    const auto N = tr.states.empty() ? 0 : static_cast<std::size_t>(tr.states.front().size());
    std::vector<std::string> header{"t"};
    for (std::size_t i = 0; i < N; ++i)
        header.push_back("x" + std::to_string(i + 1));
    std::vector<std::vector<double>> rows;
    for (std::size_t s = 0; s < tr.grid.size(); ++s) {
        std::vector<double> row{tr.grid[s]};
        row.insert(row.end(), tr.states[s].data(), tr.states[s].data() + N);
        rows.push_back(std::move(row));
    }
    return csv_table(header, rows);
}

// The control sampled on the trajectory grid (right-continuous at switches).
template <class Control>
std::string control_csv(const Control& u, const std::vector<double>& grid, std::size_t channels) {
    std::vector<std::string> header{"t"};
    for (std::size_t k = 0; k < channels; ++k)
        header.push_back("u" + std::to_string(k + 1));
    std::vector<std::vector<double>> rows;
    for (double t : grid) {
        const Vector v = u(t);
        std::vector<double> row{t};
        row.insert(row.end(), v.data(), v.data() + v.size());
        rows.push_back(std::move(row));
    }
    return csv_table(header, rows);
}

inline std::string trace_csv(const std::vector<TraceEntry>& trace) {
    std::vector<std::vector<double>> rows;
    for (const auto& e : trace)
        rows.push_back({static_cast<double>(e.iteration), e.value, e.best_value, e.step, e.subgradient_norm});
    return csv_table({"iteration", "value", "best_value", "step", "subgradient_norm"}, rows);
}

// report.json, summary.json, and when available control.csv,
// trajectory.csv and trace.csv.
inline void write_outputs(const ExperimentReport& r, const ExperimentConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    write_json(dir / "report.json", report_to_json(r, cfg));
    write_json(dir / "summary.json", summary_to_json(r));
    if (!r.trajectory.grid.empty()) {
        write_text(dir / "trajectory.csv", trajectory_csv(r.trajectory));
        const auto K = static_cast<std::size_t>(cfg.B.cols());
        if (const auto* ml = r.multilevel())
            write_text(dir / "control.csv", control_csv(*ml, r.trajectory.grid, K));
        else if (const auto* l2 = std::get_if<L2Control>(&r.control))
            write_text(dir / "control.csv", control_csv(*l2, r.trajectory.grid, K));
    }
    if (!r.solve.trace.empty())
        write_text(dir / "trace.csv", trace_csv(r.solve.trace));
}

inline std::string convergence_csv(const ConvergenceTable& t) {
    std::string s = "segments,status,distance,levels_used,max_difference,bound,bound_ok\n";
    for (const auto& r : t.rows)
        s += std::to_string(r.segments) + "," + to_string(r.status) + "," + format17(r.distance) + "," +
             std::to_string(r.levels_used) + "," + format17(r.max_difference) + "," + format17(r.bound) + "," +
             (r.bound_ok ? "true" : "false") + "\n";
    return s;
}

// Re-simulates the control stored in a report.json and returns
// |x(T)| next to the stored terminal norm.
struct ReplayCheck {
    double stored;
    double replayed;
};

inline std::optional<ReplayCheck> replay_report(const json& report) {
    if (!report.contains("control") || !report["control"].contains("channels") || report["terminal_norm"].is_null())
        return std::nullopt;
    const ExperimentConfig cfg = parse_config(report.at("config"));
    const MultilevelControl u = control_from_json(report["control"]);
    const auto tr = simulate_forward(make_system(cfg), u, uniform_grid(cfg.T, cfg.trajectory_points));
    return ReplayCheck{report["terminal_norm"].get<double>(), tr.terminal().norm()};
}

} // namespace mlctl::experiment
