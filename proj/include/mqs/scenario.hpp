#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "mqs/error.hpp"
#include "mqs/integrate.hpp"
#include "mqs/mesh.hpp"

namespace mqs {

/// A validated run configuration: the physical problem plus solver settings.
struct Scenario {
    std::string name;
    Problem problem;
    double t_end = 0.0;
    ExplicitOptions explicit_options;
    ImplicitOptions implicit_options;
    std::size_t snapshot_every = 0;  // 0 disables field dumps
};

namespace config {

using nlohmann::json;

inline void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed)
{
    if (!j.is_object()) throw ConfigError(path + ": expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& item : j.items())
        if (!ok.count(item.key())) throw ConfigError((path.empty() ? "" : path + ".") + item.key() + ": unknown key");
}

inline const json& require(const json& j, const std::string& path, const char* key)
{
    if (!j.contains(key)) throw ConfigError((path.empty() ? "" : path + ".") + key + ": required key missing");
    return j.at(key);
}

template <typename T>
T get(const json& j, const std::string& path, const char* key)
{
    const auto& v = require(j, path, key);
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw ConfigError((path.empty() ? "" : path + ".") + key + ": wrong type");
    }
}

template <typename T>
T get_or(const json& j, const std::string& path, const char* key, T fallback)
{
    return j.contains(key) ? get<T>(j, path, key) : fallback;
}

inline double positive(double v, const std::string& what)
{
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(what + ": must be positive");
    return v;
}

struct Box {
    double x0, y0, x1, y1;
    bool contains(const Point& p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
};

inline Box parse_box(const json& j, const std::string& path)
{
    if (!j.is_array() || j.size() != 4) throw ConfigError(path + ": box must be [x0, y0, x1, y1]");
    try {
        return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    } catch (const json::exception&) {
        throw ConfigError(path + ": box entries must be numbers");
    }
}

inline Mesh2D parse_generated_mesh(const json& g)
{
    const std::string path = "mesh.generate";
    check_keys(g, path, {"width", "height", "nx", "ny", "regions", "probes"});
    struct RegionBox {
        RegionTag tag;
        Box box;
    };
    std::vector<RegionBox> regions;
    std::vector<std::pair<int, Box>> probes;
    if (g.contains("regions")) {
        std::size_t i = 0;
        for (const auto& r : g.at("regions")) {
            const std::string rp = path + ".regions[" + std::to_string(i++) + "]";
            check_keys(r, rp, {"tag", "box"});
            regions.push_back({RegionTag::parse(get<std::string>(r, rp, "tag")), parse_box(require(r, rp, "box"), rp)});
        }
    }
    if (g.contains("probes")) {
        std::size_t i = 0;
        for (const auto& r : g.at("probes")) {
            const std::string rp = path + ".probes[" + std::to_string(i++) + "]";
            check_keys(r, rp, {"id", "box"});
            probes.emplace_back(get<int>(r, rp, "id"), parse_box(require(r, rp, "box"), rp));
        }
    }
    // Later boxes override earlier ones; unmatched cells are air.
    auto region_fn = [regions, probes](const Point& c) {
        RegionTag tag = RegionTag::air();
        for (const auto& r : regions)
            if (r.box.contains(c)) tag = r.tag;
        for (const auto& [id, box] : probes)
            if (box.contains(c)) tag.probe = id;
        return tag;
    };
    return generate_rect_mesh(get<double>(g, path, "width"), get<double>(g, path, "height"), get<int>(g, path, "nx"),
                              get<int>(g, path, "ny"), region_fn);
}

inline MaterialModel parse_material(const json& m, const std::string& path)
{
    MaterialModel model;
    const auto law = get_or<std::string>(m, path, "law", "linear");
    if (law == "linear") {
        check_keys(m, path, {"kappa", "law", "nu", "mu_r"});
        if (m.contains("nu") && m.contains("mu_r")) throw ConfigError(path + ": give either nu or mu_r, not both");
        double nu_value = nu0;
        if (m.contains("nu")) nu_value = get<double>(m, path, "nu");
        if (m.contains("mu_r")) nu_value = nu0 / positive(get<double>(m, path, "mu_r"), path + ".mu_r");
        model.law = LinearReluctivity{nu_value};
    } else if (law == "brauer") {
        check_keys(m, path, {"kappa", "law", "k1", "k2", "k3"});
        model.law = BrauerReluctivity{get<double>(m, path, "k1"), get<double>(m, path, "k2"), get<double>(m, path, "k3")};
    } else {
        throw ConfigError(path + ".law: expected 'linear' or 'brauer'");
    }
    model.kappa = get_or<double>(m, path, "kappa", 0.0);
    try {
        model.validate();
    } catch (const ConfigError& ex) {
        throw ConfigError(path + ": " + ex.what());
    }
    return model;
}

inline void parse_solver(const json& s, ExplicitOptions& ex, std::size_t& snapshot_every)
{
    const std::string path = "solver";
    check_keys(s, path,
               {"pcg_tol", "pcg_max_iter", "strategy", "cspe_window", "pod_window", "tol_pod", "preconditioner",
                "two_solve_recovery", "tol_update", "safety", "mcc_mode", "mcc_tol", "power_tol", "power_max_iter",
                "spectral_tol", "seed", "dt_override", "output_every", "snapshot_every"});
    auto& sc = ex.schur;
    sc.pcg_tol = positive(get_or(s, path, "pcg_tol", sc.pcg_tol), "solver.pcg_tol");
    sc.pcg_max_iter = get_or(s, path, "pcg_max_iter", sc.pcg_max_iter);
    sc.strategy = parse_strategy(get_or<std::string>(s, path, "strategy", to_string(sc.strategy)));
    sc.cspe_window = get_or(s, path, "cspe_window", sc.cspe_window);
    sc.pod_window = get_or(s, path, "pod_window", sc.pod_window);
    if (sc.cspe_window == 0 || sc.pod_window == 0) throw ConfigError("solver: window sizes must be >= 1");
    sc.tol_pod = positive(get_or(s, path, "tol_pod", sc.tol_pod), "solver.tol_pod");
    const auto pre = get_or<std::string>(s, path, "preconditioner", "ic0");
    if (pre == "ic0") sc.preconditioner = PreconditionerKind::Ic0;
    else if (pre == "jacobi") sc.preconditioner = PreconditionerKind::Jacobi;
    else throw ConfigError("solver.preconditioner: expected 'ic0' or 'jacobi'");
    sc.two_solve_recovery = get_or(s, path, "two_solve_recovery", sc.two_solve_recovery);

    ex.tol_update = get_or(s, path, "tol_update", ex.tol_update);
    if (!(ex.tol_update >= 0.0)) throw ConfigError("solver.tol_update: must be >= 0");
    ex.safety = positive(get_or(s, path, "safety", ex.safety), "solver.safety");
    const auto mcc = get_or<std::string>(s, path, "mcc_mode", "pcg");
    if (mcc == "pcg") ex.mcc_mode = MccMode::Pcg;
    else if (mcc == "lumped") ex.mcc_mode = MccMode::Lumped;
    else throw ConfigError("solver.mcc_mode: expected 'pcg' or 'lumped'");
    ex.mcc_tol = positive(get_or(s, path, "mcc_tol", ex.mcc_tol), "solver.mcc_tol");
    ex.power_tol = positive(get_or(s, path, "power_tol", ex.power_tol), "solver.power_tol");
    ex.power_max_iter = get_or(s, path, "power_max_iter", ex.power_max_iter);
    ex.spectral_tol = positive(get_or(s, path, "spectral_tol", ex.spectral_tol), "solver.spectral_tol");
    ex.seed = get_or(s, path, "seed", ex.seed);
    if (s.contains("dt_override")) ex.dt_fixed = positive(get<double>(s, path, "dt_override"), "solver.dt_override");
    ex.output_every = get_or(s, path, "output_every", ex.output_every);
    if (ex.output_every == 0) throw ConfigError("solver.output_every: must be >= 1");
    snapshot_every = get_or(s, path, "snapshot_every", snapshot_every);
}

inline void parse_implicit(const json& s, ImplicitOptions& im, double t_end)
{
    const std::string path = "implicit";
    check_keys(s, path, {"dt", "newton_tol", "max_newton", "linear_tol"});
    im.dt = positive(get_or(s, path, "dt", t_end / 100.0), "implicit.dt");
    im.newton.newton_tol = positive(get_or(s, path, "newton_tol", im.newton.newton_tol), "implicit.newton_tol");
    im.newton.max_newton = get_or(s, path, "max_newton", im.newton.max_newton);
    im.newton.linear_tol = positive(get_or(s, path, "linear_tol", im.newton.linear_tol), "implicit.linear_tol");
}

} // namespace config

/// Builds a scenario from parsed JSON. Relative mesh paths resolve against `base_dir`.
inline Scenario scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".")
{
    using namespace config;
    check_keys(j, "", {"name", "mesh", "materials", "source", "probe", "t_end", "solver", "implicit"});
    Scenario sc;
    sc.name = get_or<std::string>(j, "", "name", "scenario");
    sc.t_end = positive(get<double>(j, "", "t_end"), "t_end");

    const auto& mesh = require(j, "", "mesh");
    check_keys(mesh, "mesh", {"generate", "file"});
    if (mesh.contains("generate") == mesh.contains("file"))
        throw ConfigError("mesh: exactly one of 'generate' or 'file' is required");
    if (mesh.contains("file")) {
        std::filesystem::path p = get<std::string>(mesh, "mesh", "file");
        if (p.is_relative()) p = base_dir / p;
        sc.problem.mesh = load_mesh(p.string());
    } else {
        sc.problem.mesh = parse_generated_mesh(mesh.at("generate"));
    }

    // Air and coils default to vacuum reluctivity when not listed.
    for (const auto& r : sc.problem.mesh.regions)
        if (!r.is_conductor() && !sc.problem.materials.contains(r)) sc.problem.materials.set(r, MaterialModel::vacuum());
    const auto& mats = require(j, "", "materials");
    if (!mats.is_object()) throw ConfigError("materials: expected an object keyed by region tag");
    for (const auto& item : mats.items()) {
        const std::string path = "materials." + item.key();
        RegionTag tag;
        try {
            tag = RegionTag::parse(item.key());
        } catch (const ConfigError& ex) {
            throw ConfigError(path + ": " + ex.what());
        }
        if (tag.probe) throw ConfigError(path + ": material keys cannot carry a probe overlay");
        sc.problem.materials.set(tag, parse_material(item.value(), path));
    }

    const auto& src = require(j, "", "source");
    check_keys(src, "source", {"coil", "turns", "i_max", "tau"});
    sc.problem.source.coil_id = get<int>(src, "source", "coil");
    sc.problem.source.turns = get_or(src, "source", "turns", 1.0);
    sc.problem.source.i_max = get<double>(src, "source", "i_max");
    sc.problem.source.tau = positive(get<double>(src, "source", "tau"), "source.tau");
    sc.problem.probe_id = get<int>(j, "", "probe");

    if (j.contains("solver")) parse_solver(j.at("solver"), sc.explicit_options, sc.snapshot_every);
    parse_implicit(j.contains("implicit") ? j.at("implicit") : nlohmann::json::object(), sc.implicit_options, sc.t_end);

    if (const char* seed = std::getenv("MQS_SEED")) {
        try {
            sc.explicit_options.seed = std::stoull(seed);
        } catch (const std::exception&) {
            throw ConfigError("MQS_SEED: not an unsigned integer");
        }
    }

    try {
        sc.problem.validate();
    } catch (const ConfigError& ex) {
        throw ConfigError(std::string("scenario: ") + ex.what());
    }
    return sc;
}

inline Scenario load_scenario(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& ex) {
        throw ConfigError(path + ":" + std::to_string(detail::line_of_offset(text, ex.byte)) + ": parse error: " +
                          ex.what());
    }
    return scenario_from_json(j, std::filesystem::path(path).parent_path());
}

} // namespace mqs
