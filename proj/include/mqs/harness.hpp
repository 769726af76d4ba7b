#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "mqs/integrate.hpp"
#include "mqs/mesh.hpp"
#include "mqs/scenario.hpp"

namespace mqs {

/// Worker threads for bench subcommands, from MQS_THREADS (default 1).
inline unsigned thread_count()
{
    if (const char* env = std::getenv("MQS_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    return 1;
}

/// Columns: t, probe_avg_B, dt, cumulative_pcg_iterations, update_count.
inline void write_series_csv(const RunResult& r, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out << "t,probe_avg_B,dt,cumulative_pcg_iterations,update_count\n" << std::setprecision(17);
    for (const auto& row : r.series)
        out << row.t << ',' << row.probe << ',' << row.dt << ',' << row.cumulative_pcg_iterations << ','
            << row.update_count << '\n';
}

inline nlohmann::json run_summary(const RunResult& r)
{
    nlohmann::json j;
    j["method"] = r.method;
    j["step_count"] = r.step_count;
    j["dt_initial"] = r.dt_initial;
    j["dt_final"] = r.dt_final;
    j["lambda_max"] = r.lambda_max;
    j["update_count"] = r.update_count;
    j["pcg_solves"] = r.stats.stepping_solves();
    j["pcg_iterations"] = r.stats.stepping_iterations();
    j["mean_pcg_iterations"] = r.stats.stepping_mean();
    j["mean_iterations_schur_apply"] = r.stats.mean(SolvePurpose::SchurApply);
    j["mean_iterations_source_term"] = r.stats.mean(SolvePurpose::SourceTerm);
    j["mean_iterations_recovery"] = r.stats.mean(SolvePurpose::Recovery);
    j["mcc_iterations"] = r.mcc_iterations;
    j["newton_iterations"] = r.newton_iterations;
    j["linear_iterations"] = r.linear_iterations;
    j["max_constraint_residual"] = r.max_constraint_residual;
    j["wall_seconds"] = r.wall_seconds;
    return j;
}

/// Per-element |B| and per-node potential as whitespace-separated tables.
inline void write_field_snapshot(const Mesh2D& mesh, std::span<const double> a_nodal, const std::string& prefix)
{
    const auto b2 = compute_b2(mesh, a_nodal);
    std::ofstream el(prefix + "_elements.txt");
    std::ofstream nd(prefix + "_nodes.txt");
    if (!el || !nd) throw ConfigError("cannot write field snapshot " + prefix);
    el << "# element region abs_B\n" << std::setprecision(12);
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
        el << e << ' ' << mesh.regions[e].str() << ' ' << std::sqrt(b2[e]) << '\n';
    nd << "# node x y a\n" << std::setprecision(12);
    for (std::size_t v = 0; v < mesh.num_nodes(); ++v)
        nd << v << ' ' << mesh.nodes[v].x << ' ' << mesh.nodes[v].y << ' ' << a_nodal[v] << '\n';
}

struct CflReport {
    double lambda_max = 0.0;
    double dt_cfl = 0.0;
    bool converged = false;
    std::size_t projected_steps = 0;
    double h = 0.0;
    double heuristic = 0.0;  // max over conductors of 1 / (h^2 kappa mu), mu at zero field
    std::size_t n_c = 0;
    std::size_t n_n = 0;
};

inline CflReport cfl_report(const Scenario& sc)
{
    ExplicitSolver solver(sc.problem, sc.explicit_options);
    CflReport r;
    r.dt_cfl = solver.estimate_cfl();
    r.lambda_max = solver.state().lambda_max;
    r.converged = solver.power_converged();
    r.projected_steps = detail::step_count_for(sc.t_end, r.dt_cfl);
    r.h = min_edge_length(sc.problem.mesh);
    for (const auto& [key, model] : sc.problem.materials.entries())
        if (model.kappa > 0.0) r.heuristic = std::max(r.heuristic, nu(model, 0.0) / (r.h * r.h * model.kappa));
    r.n_c = solver.dofs().n_c;
    r.n_n = solver.dofs().n_n;
    return r;
}

namespace detail {

template <typename Fn>
auto run_all(std::size_t count, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))>
{
    using R = decltype(fn(std::size_t{}));
    std::vector<R> results;
    const unsigned threads = thread_count();
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) results.push_back(fn(i));
        return results;
    }
    for (std::size_t first = 0; first < count; first += threads) {
        std::vector<std::future<R>> batch;
        for (std::size_t i = first; i < std::min<std::size_t>(count, first + threads); ++i)
            batch.push_back(std::async(std::launch::async, fn, i));
        for (auto& f : batch) results.push_back(f.get());
    }
    return results;
}

/// Initial CFL step of a scenario, shared by all runs of a benchmark.
inline double shared_dt(const Scenario& sc)
{
    if (sc.explicit_options.dt_fixed) return *sc.explicit_options.dt_fixed;
    ExplicitSolver solver(sc.problem, sc.explicit_options);
    return solver.estimate_cfl();
}

} // namespace detail

struct StartvecRow {
    StartStrategy strategy = StartStrategy::Previous;
    RunResult run;
    double probe_deviation = 0.0;  // vs the first strategy
};

struct StartvecBench {
    std::vector<StartvecRow> rows;
    double dt = 0.0;
    double max_probe_deviation = 0.0;
    bool consistent = true;  // max_probe_deviation <= 10 pcg_tol
};

/// One explicit run per start-vector strategy with identical dt and seed.
inline StartvecBench bench_startvec(const Scenario& sc, const std::vector<StartStrategy>& strategies)
{
    StartvecBench out;
    out.dt = detail::shared_dt(sc);
    auto runs = detail::run_all(strategies.size(), [&](std::size_t i) {
        auto options = sc.explicit_options;
        options.schur.strategy = strategies[i];
        options.dt_fixed = out.dt;
        return run_explicit(sc.problem, options, sc.t_end);
    });
    for (std::size_t i = 0; i < strategies.size(); ++i) {
        StartvecRow row{strategies[i], std::move(runs[i]), 0.0};
        if (i > 0) row.probe_deviation = max_relative_deviation(row.run.series, out.rows.front().run.series);
        out.max_probe_deviation = std::max(out.max_probe_deviation, row.probe_deviation);
        out.rows.push_back(std::move(row));
    }
    out.consistent = out.max_probe_deviation <= 10.0 * sc.explicit_options.schur.pcg_tol;
    return out;
}

inline void write_startvec_csv(const StartvecBench& b, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out << "strategy,mean_iterations_schur_apply,mean_iterations_source_term,mean_iterations_recovery,"
           "mean_iterations,total_iterations,wall_seconds,probe_max_deviation\n"
        << std::setprecision(10);
    for (const auto& r : b.rows)
        out << to_string(r.strategy) << ',' << r.run.stats.mean(SolvePurpose::SchurApply) << ','
            << r.run.stats.mean(SolvePurpose::SourceTerm) << ',' << r.run.stats.mean(SolvePurpose::Recovery) << ','
            << r.run.stats.stepping_mean() << ',' << r.run.stats.stepping_iterations() << ',' << r.run.wall_seconds
            << ',' << r.probe_deviation << '\n';
}

struct UpdateRow {
    double tol = 0.0;
    RunResult run;
    double probe_deviation = 0.0;  // vs tol = 0
};

struct UpdateBench {
    std::vector<UpdateRow> rows;  // ascending tol, first row is tol = 0
    double dt = 0.0;
};

/// One explicit run per selective-update tolerance; tol = 0 is always included
/// as the update-every-step baseline.
inline UpdateBench bench_update(const Scenario& sc, std::vector<double> tolerances)
{
    for (double t : tolerances)
        if (!(t >= 0.0)) throw ConfigError("update tolerances must be >= 0");
    tolerances.push_back(0.0);
    std::sort(tolerances.begin(), tolerances.end());
    tolerances.erase(std::unique(tolerances.begin(), tolerances.end()), tolerances.end());
    UpdateBench out;
    out.dt = detail::shared_dt(sc);
    auto runs = detail::run_all(tolerances.size(), [&](std::size_t i) {
        auto options = sc.explicit_options;
        options.tol_update = tolerances[i];
        options.dt_fixed = out.dt;
        return run_explicit(sc.problem, options, sc.t_end);
    });
    for (std::size_t i = 0; i < tolerances.size(); ++i) {
        UpdateRow row{tolerances[i], std::move(runs[i]), 0.0};
        if (i > 0) row.probe_deviation = max_relative_deviation(row.run.series, out.rows.front().run.series);
        out.rows.push_back(std::move(row));
    }
    return out;
}

inline void write_update_csv(const UpdateBench& b, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out << "tol,update_count,step_count,wall_seconds,probe_max_deviation\n" << std::setprecision(10);
    for (const auto& r : b.rows)
        out << r.tol << ',' << r.run.update_count << ',' << r.run.step_count << ',' << r.run.wall_seconds << ','
            << r.probe_deviation << '\n';
}

} // namespace mqs
