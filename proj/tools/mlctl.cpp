// mlctl: run multilevel null-control experiments from JSON configs.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "mlctl/experiment/config.hpp"
#include "mlctl/experiment/io.hpp"
#include "mlctl/experiment/runner.hpp"

namespace fs = std::filesystem;
using namespace mlctl;
using namespace mlctl::experiment;

namespace {

constexpr const char* kOutputRootVar = "MLCTL_OUTPUT_ROOT";

struct Overrides {
    std::optional<std::size_t> grid;
    std::optional<std::uint64_t> seed;
    std::optional<double> tol;
    std::optional<std::string> out;
};

fs::path output_root() {
    const char* env = std::getenv(kOutputRootVar);
    return env && *env ? fs::path(env) : fs::path("mlctl-out");
}

void apply(ExperimentConfig& c, const Overrides& o) {
    if (o.grid) {
        if (*o.grid < 3)
            throw ConfigError("--grid", "need at least 3 quadrature nodes");
        c.quadrature_nodes = *o.grid;
    }
    if (o.seed)
        c.seed = *o.seed;
    if (o.tol) {
        if (!(*o.tol > 0.0))
            throw ConfigError("--tol", "must be positive");
        c.checks.terminal_tol = *o.tol;
    }
}

fs::path scenario_dir(const ExperimentConfig& c, const Overrides& o) {
    if (o.out)
        return *o.out;
    if (!c.output.empty())
        return c.output;
    return output_root() / c.scenario;
}

void print_report(const ExperimentReport& r, const fs::path& dir) {
    char norm[32] = "-";
    if (r.terminal_norm)
        std::snprintf(norm, sizeof norm, "%.3e", *r.terminal_norm);
    std::printf("%-18s %-9s %-20s |x(T)| = %-10s -> %s%s  (%s, %.2fs)\n", r.scenario.c_str(), to_string(r.kind),
                to_string(r.solve.status), norm, to_string(r.outcome),
                r.expect == Expectation::Failure ? " (failure expected)" : "", dir.string().c_str(), r.timings.total);
    if (r.outcome == Outcome::Pass)
        return;
    for (const auto& c : r.checks)
        if (!c.passed)
            std::printf("    FAILED %s: %s\n", c.name.c_str(), c.detail.c_str());
    if (!r.error.empty())
        std::printf("    error: %s\n", r.error.c_str());
}

int config_error(const ConfigError& e) {
    std::fprintf(stderr, "config error in %s\n", e.what());
    return kExitConfig;
}

int cmd_run(const std::string& path, const Overrides& o) {
    try {
        ExperimentConfig cfg = load_config(path);
        apply(cfg, o);
        const auto report = run_scenario(cfg);
        const fs::path dir = scenario_dir(cfg, o);
        write_outputs(report, cfg, dir);
        print_report(report, dir);
        return exit_code(report.outcome);
    } catch (const ConfigError& e) {
        return config_error(e);
    }
}

int cmd_suite(const std::string& dir, const Overrides& o, unsigned jobs) {
    std::vector<fs::path> files;
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(dir, ec))
        if (e.is_regular_file() && e.path().extension() == ".json")
            files.push_back(e.path());
    if (ec || files.empty()) {
        std::fprintf(stderr, "suite: no *.json configs in %s\n", dir.c_str());
        return kExitConfig;
    }
    std::sort(files.begin(), files.end());
    const fs::path root = o.out ? fs::path(*o.out) : output_root();

    struct Slot {
        std::optional<ExperimentConfig> cfg;
        std::optional<ExperimentReport> report;
        std::string error;
        int code = kExitConfig;
    };
    std::vector<Slot> slots(files.size());
    for (std::size_t i = 0; i < files.size(); ++i) {
        try {
            slots[i].cfg = load_config(files[i]);
            apply(*slots[i].cfg, o);
        } catch (const ConfigError& e) {
            slots[i].error = e.what();
        }
    }

    // each worker writes only into its own scenario directory
    std::atomic<std::size_t> next{0};
    std::mutex print_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < slots.size(); i = next++) {
            auto& s = slots[i];
            if (!s.cfg)
                continue;
            try {
                s.report = run_scenario(*s.cfg);
                write_outputs(*s.report, *s.cfg, root / s.cfg->scenario);
                s.code = exit_code(s.report->outcome);
                std::lock_guard lock(print_mutex);
                print_report(*s.report, root / s.cfg->scenario);
            } catch (const ConfigError& e) {
                s.error = e.what();
            } catch (const std::exception& e) {
                s.error = e.what();
                s.code = kExitChecksFailed;
            }
        }
    };
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(slots.size())));
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t)
        pool.emplace_back(worker);
    for (auto& t : pool)
        t.join();

    json rows = json::array();
    int worst = kExitPass;
    std::size_t passed = 0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto& s = slots[i];
        json row;
        if (s.report) {
            row = summary_to_json(*s.report);
        } else {
            row = {{"config", files[i].filename().string()}, {"passed", false}, {"exit_code", s.code},
                   {"error", s.error}};
            std::printf("%-18s error: %s\n", files[i].filename().string().c_str(), s.error.c_str());
        }
        worst = std::max(worst, s.code);
        passed += s.code == kExitPass;
        rows.push_back(row);
    }
    fs::create_directories(root);
    write_json(root / "summary.json",
               {{"scenarios", rows}, {"passed", passed}, {"total", slots.size()}, {"exit_code", worst}});
    std::printf("%zu/%zu scenarios passed; summary in %s\n", passed, slots.size(),
                (root / "summary.json").string().c_str());
    return worst;
}

int cmd_converge(const std::string& path, const Overrides& o, const std::vector<std::size_t>& sizes, int samples) {
    try {
        ExperimentConfig cfg = load_config(path);
        apply(cfg, o);
        const auto table = convergence_study(cfg, sizes, samples);
        const fs::path dir = o.out ? fs::path(*o.out) : output_root() / (cfg.scenario + "-converge");
        fs::create_directories(dir);
        write_text(dir / "convergence.csv", convergence_csv(table));

        bool ok = table.strictly_decreasing && table.reference_status == SolveStatus::Converged;
        std::printf("reference %s: %s\n", is_fabre(cfg.kind) ? "J2Fabre" : "J2", to_string(table.reference_status));
        std::printf("%8s %-20s %-14s %6s %-14s %-14s\n", "segments", "status", "distance", "levels", "max|Jml-J2|",
                    "bound");
        for (const auto& r : table.rows) {
            ok = ok && r.bound_ok && r.status == SolveStatus::Converged;
            std::printf("%8zu %-20s %-14.6e %6zu %-14.6e %-14.6e%s\n", r.segments, to_string(r.status), r.distance,
                        r.levels_used, r.max_difference, r.bound, r.bound_ok ? "" : "  BOUND VIOLATED");
        }
        std::printf("distances strictly decreasing: %s\n", table.strictly_decreasing ? "yes" : "no");
        std::printf("table in %s\n", (dir / "convergence.csv").string().c_str());
        if (table.reference_status == SolveStatus::Diverged)
            return kExitDiverged;
        return ok ? kExitPass : kExitChecksFailed;
    } catch (const ConfigError& e) {
        return config_error(e);
    }
}

// Prints every report under `dir` and re-simulates the stored controls.
int cmd_report(const std::string& dir) {
    std::vector<fs::path> reports;
    std::error_code ec;
    for (const auto& e : fs::recursive_directory_iterator(dir, ec))
        if (e.is_regular_file() && e.path().filename() == "report.json")
            reports.push_back(e.path());
    if (ec || reports.empty()) {
        std::fprintf(stderr, "report: no report.json under %s\n", dir.c_str());
        return kExitConfig;
    }
    std::sort(reports.begin(), reports.end());
    int worst = kExitPass;
    for (const auto& p : reports) {
        try {
            const json r = read_json(p);
            const auto replay = replay_report(r);
            const bool replay_ok = !replay || std::abs(replay->stored - replay->replayed) <= 1e-10;
            std::printf("%-18s %-9s %-20s %-14s replay %s\n", r.value("scenario", "?").c_str(),
                        r["config"]["functional"]["kind"].get<std::string>().c_str(),
                        r["solve"]["status"].get<std::string>().c_str(), r["outcome"].get<std::string>().c_str(),
                        replay ? (replay_ok ? "ok" : "MISMATCH") : "-");
            int code = r["exit_code"].get<int>();
            if (!replay_ok)
                code = std::max(code, kExitChecksFailed);
            worst = std::max(worst, code);
        } catch (const std::exception& e) {
            std::printf("%s: unreadable report: %s\n", p.string().c_str(), e.what());
            worst = std::max(worst, kExitConfig);
        }
    }
    return worst;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multilevel null-control synthesis for linear systems.\n"
                 "Exit codes: 0 pass, 2 checks failed, 3 solver diverged, 4 configuration error.\n"
                 "Output goes to $MLCTL_OUTPUT_ROOT/<scenario> (default ./mlctl-out) unless --out is given."};
    app.require_subcommand(1);

    Overrides o;
    auto add_overrides = [&](CLI::App* sub) {
        sub->add_option("--grid", o.grid, "Quadrature nodes (overrides grid.quadrature)");
        sub->add_option("--seed", o.seed, "Random seed (overrides seed)");
        sub->add_option("--tol", o.tol, "Terminal-norm tolerance (overrides checks.terminal_tol)");
        sub->add_option("--out", o.out, "Output directory");
    };

    std::string config, dir;
    unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
    std::vector<std::size_t> sizes{4, 8, 16, 32};
    int samples = 100;

    auto* run = app.add_subcommand("run", "Run one scenario config");
    run->add_option("config", config, "Scenario config (JSON)")->required();
    add_overrides(run);

    auto* suite = app.add_subcommand("suite", "Run every *.json config in a directory");
    suite->add_option("dir", dir, "Directory of scenario configs")->required();
    suite->add_option("--jobs,-j", jobs, "Scenarios run concurrently");
    add_overrides(suite);

    auto* conv = app.add_subcommand("converge", "Distance of multilevel controls to the L2 control over partition sizes");
    conv->add_option("config", config, "Scenario config (JSON)")->required();
    conv->add_option("--sizes", sizes, "Segments of the uniform partitions, increasing")->delimiter(',');
    conv->add_option("--samples", samples, "Random adjoint data for the functional bound check");
    add_overrides(conv);

    auto* report = app.add_subcommand("report", "Summarize and replay the reports under an output directory");
    report->add_option("dir", dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*run)
            return cmd_run(config, o);
        if (*suite)
            return cmd_suite(dir, o, jobs);
        if (*conv)
            return cmd_converge(config, o, sizes, samples);
        return cmd_report(dir);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitChecksFailed;
    }
}
