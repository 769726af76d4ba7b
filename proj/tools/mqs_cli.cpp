// Command-line front end: single runs, start-vector and selective-update
// benchmarks, CFL report, and matrix/mesh export.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mqs/harness.hpp"

namespace {

enum ExitCode : int { kOk = 0, kConfigError = 2, kSolverError = 3, kInstability = 4 };

std::vector<std::string> split(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::filesystem::path prepare_out(const std::string& dir)
{
    std::filesystem::path p(dir);
    std::filesystem::create_directories(p);
    return p;
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) throw mqs::ConfigError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
}

int cmd_run(const std::string& config, const std::string& method, const std::string& out_dir, double dt_implicit)
{
    const auto sc = mqs::load_scenario(config);
    const auto out = prepare_out(out_dir);
    mqs::RunResult result;
    if (method == "explicit") {
        std::size_t snapshot = 0;
        result = mqs::run_explicit(sc.problem, sc.explicit_options, sc.t_end,
                                   [&](mqs::ExplicitSolver& solver, std::size_t step) {
                                       if (sc.snapshot_every && step % sc.snapshot_every == 0)
                                           mqs::write_field_snapshot(sc.problem.mesh, solver.nodal_potential(),
                                                                     (out / ("fields_" + std::to_string(snapshot++))).string());
                                   });
        mqs::write_iteration_csv(result.stats, sc.explicit_options.schur.strategy, (out / "iterations.csv").string());
    } else if (method == "implicit") {
        auto options = sc.implicit_options;
        if (dt_implicit > 0.0) options.dt = dt_implicit;
        result = mqs::run_implicit(sc.problem, options, sc.t_end);
    } else {
        throw mqs::ConfigError("--method must be 'explicit' or 'implicit'");
    }
    mqs::write_series_csv(result, (out / "result.csv").string());
    auto summary = mqs::run_summary(result);
    summary["scenario"] = sc.name;
    write_json(summary, out / "summary.json");
    std::cout << summary.dump(2) << '\n';
    return kOk;
}

int cmd_bench_startvec(const std::string& config, const std::string& strategies, const std::string& out_dir)
{
    const auto sc = mqs::load_scenario(config);
    std::vector<mqs::StartStrategy> list;
    for (const auto& s : split(strategies)) list.push_back(mqs::parse_strategy(s));
    if (list.empty()) throw mqs::ConfigError("--strategies is empty");
    const auto bench = mqs::bench_startvec(sc, list);
    const auto out = prepare_out(out_dir);
    mqs::write_startvec_csv(bench, (out / "bench_startvec.csv").string());
    std::cout << "dt = " << bench.dt << '\n';
    for (const auto& row : bench.rows)
        std::cout << std::setw(9) << mqs::to_string(row.strategy) << "  mean iterations "
                  << row.run.stats.stepping_mean() << "  total " << row.run.stats.stepping_iterations()
                  << "  probe deviation " << row.probe_deviation << '\n';
    if (!bench.consistent) {
        std::cerr << "error: probe series differ across strategies by " << bench.max_probe_deviation
                  << " (limit " << 10.0 * sc.explicit_options.schur.pcg_tol << ")\n";
        return kSolverError;
    }
    return kOk;
}

int cmd_bench_update(const std::string& config, const std::string& tols, const std::string& out_dir)
{
    const auto sc = mqs::load_scenario(config);
    std::vector<double> list;
    for (const auto& s : split(tols)) {
        try {
            list.push_back(std::stod(s));
        } catch (const std::exception&) {
            throw mqs::ConfigError("--tols: not a number: " + s);
        }
    }
    const auto bench = mqs::bench_update(sc, list);
    const auto out = prepare_out(out_dir);
    mqs::write_update_csv(bench, (out / "bench_update.csv").string());
    std::cout << "dt = " << bench.dt << '\n';
    for (const auto& row : bench.rows)
        std::cout << "tol " << std::setw(8) << row.tol << "  updates " << row.run.update_count << " / "
                  << row.run.step_count << " steps  probe deviation " << row.probe_deviation << '\n';
    return kOk;
}

int cmd_cfl(const std::string& config)
{
    const auto sc = mqs::load_scenario(config);
    const auto r = mqs::cfl_report(sc);
    nlohmann::json j;
    j["lambda_max"] = r.lambda_max;
    j["dt_cfl"] = r.dt_cfl;
    j["power_iteration_converged"] = r.converged;
    j["projected_steps"] = r.projected_steps;
    j["min_edge_length"] = r.h;
    j["heuristic_inv_h2_kappa_mu"] = r.heuristic;
    j["heuristic_note"] = "order-of-magnitude only; not a sharp estimate of lambda_max";
    j["n_c"] = r.n_c;
    j["n_n"] = r.n_n;
    std::cout << j.dump(2) << '\n';
    return kOk;
}

int cmd_export(const std::string& config, const std::string& out_dir)
{
    const auto sc = mqs::load_scenario(config);
    const auto out = prepare_out(out_dir);
    mqs::save_mesh(sc.problem.mesh, (out / "mesh.json").string());
    const auto p = mqs::partition(sc.problem.mesh);
    auto sys = mqs::assemble(sc.problem.mesh, sc.problem.materials, std::nullopt);
    const auto blocks = mqs::extract_blocks(sys.mass, sys.stiffness, p, sys.element_b2);
    mqs::write_matrix_market(blocks.m_cc, (out / "M_cc.mtx").string());
    mqs::write_matrix_market(blocks.k_cc, (out / "K_cc.mtx").string());
    mqs::write_matrix_market(blocks.k_cn, (out / "K_cn.mtx").string());
    mqs::write_matrix_market(blocks.k_nn, (out / "K_nn.mtx").string());
    std::cout << "n_c = " << p.n_c << ", n_n = " << p.n_n << '\n';
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Semi-explicit eddy-current solver"};
    app.require_subcommand(1);

    std::string config, method = "explicit", out_dir = "out", strategies = "previous,cspe,pod",
                tols = "0,1e-4,1e-3,1e-2";
    double dt_implicit = 0.0;

    auto* run = app.add_subcommand("run", "Run one transient simulation");
    run->add_option("--config", config, "Scenario file")->required();
    run->add_option("--method", method, "explicit or implicit")->check(CLI::IsMember({"explicit", "implicit"}));
    run->add_option("--out", out_dir, "Output directory");
    run->add_option("--dt", dt_implicit, "Implicit step size (overrides the scenario)");

    auto* bsv = app.add_subcommand("bench-startvec", "Compare PCG start-vector strategies");
    bsv->add_option("--config", config, "Scenario file")->required();
    bsv->add_option("--strategies", strategies, "Comma-separated: previous,cspe,pod");
    bsv->add_option("--out", out_dir, "Output directory");

    auto* bup = app.add_subcommand("bench-update", "Compare selective-update tolerances");
    bup->add_option("--config", config, "Scenario file")->required();
    bup->add_option("--tols", tols, "Comma-separated tolerances");
    bup->add_option("--out", out_dir, "Output directory");

    auto* cfl = app.add_subcommand("cfl", "Estimate the explicit stability limit");
    cfl->add_option("--config", config, "Scenario file")->required();

    auto* exp = app.add_subcommand("export", "Write the mesh and matrix blocks");
    exp->add_option("--config", config, "Scenario file")->required();
    exp->add_option("--out", out_dir, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (run->parsed()) return cmd_run(config, method, out_dir, dt_implicit);
        if (bsv->parsed()) return cmd_bench_startvec(config, strategies, out_dir);
        if (bup->parsed()) return cmd_bench_update(config, tols, out_dir);
        if (cfl->parsed()) return cmd_cfl(config);
        if (exp->parsed()) return cmd_export(config, out_dir);
    } catch (const mqs::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const mqs::InstabilityError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInstability;
    } catch (const std::exception& e) {
        std::cerr << "solver error: " << e.what() << '\n';
        return kSolverError;
    }
    return kOk;
}
