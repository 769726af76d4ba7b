#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mqs/error.hpp"

namespace mqs {

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

enum class RegionKind { Conductor, Air, Coil };

/// Material region of an element. A probe id may be overlaid on any kind.
struct RegionTag {
    RegionKind kind = RegionKind::Air;
    int id = 0;
    std::optional<int> probe;

    static RegionTag air() { return {RegionKind::Air, 0, std::nullopt}; }
    static RegionTag conductor(int id) { return {RegionKind::Conductor, id, std::nullopt}; }
    static RegionTag coil(int id) { return {RegionKind::Coil, id, std::nullopt}; }

    RegionTag with_probe(int probe_id) const
    {
        RegionTag t = *this;
        t.probe = probe_id;
        return t;
    }

    bool is_conductor() const noexcept { return kind == RegionKind::Conductor; }

    /// "conductor:0", "air", "coil:1", with optional "+probe:2" suffix.
    std::string str() const
    {
        std::string s = kind == RegionKind::Air ? "air" : (kind == RegionKind::Conductor ? "conductor:" : "coil:") +
                                                              std::to_string(id);
        if (probe) s += "+probe:" + std::to_string(*probe);
        return s;
    }

    /// Material key without the probe overlay.
    std::string material_key() const
    {
        RegionTag t = *this;
        t.probe.reset();
        return t.str();
    }

    static RegionTag parse(const std::string& text)
    {
        auto parse_id = [&](const std::string& s) {
            std::size_t used = 0;
            int v = 0;
            try {
                v = std::stoi(s, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != s.size() || s.empty() || v < 0) throw ConfigError("invalid region id in tag '" + text + "'");
            return v;
        };
        std::string base = text;
        std::optional<int> probe;
        if (auto plus = text.find('+'); plus != std::string::npos) {
            base = text.substr(0, plus);
            const std::string overlay = text.substr(plus + 1);
            if (overlay.rfind("probe:", 0) != 0) throw ConfigError("invalid overlay in region tag '" + text + "'");
            probe = parse_id(overlay.substr(6));
        }
        RegionTag tag;
        if (base == "air") tag = air();
        else if (base.rfind("conductor:", 0) == 0) tag = conductor(parse_id(base.substr(10)));
        else if (base.rfind("coil:", 0) == 0) tag = coil(parse_id(base.substr(5)));
        else throw ConfigError("unknown region tag '" + text + "'");
        tag.probe = probe;
        return tag;
    }

    bool operator==(const RegionTag&) const = default;
};

using Triangle = std::array<std::size_t, 3>;

inline double signed_area(const Point& a, const Point& b, const Point& c)
{
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

/// Triangulated 2D domain with per-element region tags. Boundary nodes carry
/// the homogeneous Dirichlet condition a = 0.
struct Mesh2D {
    std::vector<Point> nodes;
    std::vector<Triangle> elements;
    std::vector<RegionTag> regions;
    std::vector<std::size_t> boundary;  // sorted, unique

    std::size_t num_nodes() const noexcept { return nodes.size(); }
    std::size_t num_elements() const noexcept { return elements.size(); }

    std::array<Point, 3> corners(std::size_t e) const
    {
        const auto& t = elements[e];
        return {nodes[t[0]], nodes[t[1]], nodes[t[2]]};
    }

    double area(std::size_t e) const
    {
        const auto c = corners(e);
        return signed_area(c[0], c[1], c[2]);
    }

    /// Throws ConfigError naming the first offending element or node.
    void validate() const
    {
        if (regions.size() != elements.size()) throw ConfigError("mesh: region count differs from element count");
        for (std::size_t e = 0; e < elements.size(); ++e) {
            const auto& t = elements[e];
            for (auto v : t)
                if (v >= nodes.size())
                    throw ConfigError("mesh: element " + std::to_string(e) + " references node " + std::to_string(v) +
                                      " out of range");
            if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
                throw ConfigError("mesh: element " + std::to_string(e) + " repeats a node");
            if (!(area(e) > 0.0))
                throw ConfigError("mesh: element " + std::to_string(e) + " is clockwise or degenerate");
        }
        for (std::size_t i = 0; i < boundary.size(); ++i) {
            if (boundary[i] >= nodes.size())
                throw ConfigError("mesh: boundary node " + std::to_string(boundary[i]) + " out of range");
            if (i > 0 && boundary[i] <= boundary[i - 1]) throw ConfigError("mesh: boundary list not strictly increasing");
        }
    }

    bool operator==(const Mesh2D&) const = default;
};

using RegionFn = std::function<RegionTag(const Point& centroid)>;

/// Structured triangulation of [0,width]x[0,height]; each cell is split along
/// its lower-left to upper-right diagonal. All outer-rectangle nodes are Dirichlet.
inline Mesh2D generate_rect_mesh(double width, double height, int nx, int ny, const RegionFn& region_fn)
{
    if (!(width > 0.0) || !(height > 0.0)) throw ConfigError("generate_rect_mesh: dimensions must be positive");
    if (nx < 1 || ny < 1) throw ConfigError("generate_rect_mesh: cell counts must be >= 1");
    Mesh2D mesh;
    const auto nxu = static_cast<std::size_t>(nx), nyu = static_cast<std::size_t>(ny);
    mesh.nodes.reserve((nxu + 1) * (nyu + 1));
    for (std::size_t j = 0; j <= nyu; ++j)
        for (std::size_t i = 0; i <= nxu; ++i)
            mesh.nodes.push_back({width * static_cast<double>(i) / nx, height * static_cast<double>(j) / ny});
    auto id = [&](std::size_t i, std::size_t j) { return j * (nxu + 1) + i; };
    for (std::size_t j = 0; j < nyu; ++j)
        for (std::size_t i = 0; i < nxu; ++i) {
            const std::size_t ll = id(i, j), lr = id(i + 1, j), ul = id(i, j + 1), ur = id(i + 1, j + 1);
            for (Triangle t : {Triangle{ll, lr, ur}, Triangle{ll, ur, ul}}) {
                const auto& a = mesh.nodes[t[0]];
                const auto& b = mesh.nodes[t[1]];
                const auto& c = mesh.nodes[t[2]];
                mesh.elements.push_back(t);
                mesh.regions.push_back(region_fn({(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0}));
            }
        }
    for (std::size_t j = 0; j <= nyu; ++j)
        for (std::size_t i = 0; i <= nxu; ++i)
            if (i == 0 || j == 0 || i == nxu || j == nyu) mesh.boundary.push_back(id(i, j));
    return mesh;
}

inline double min_edge_length(const Mesh2D& mesh)
{
    double h = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto c = mesh.corners(e);
        for (int k = 0; k < 3; ++k) {
            const auto& p = c[static_cast<std::size_t>(k)];
            const auto& q = c[static_cast<std::size_t>((k + 1) % 3)];
            h = std::min(h, std::hypot(q.x - p.x, q.y - p.y));
        }
    }
    return h;
}

inline nlohmann::json mesh_to_json(const Mesh2D& mesh)
{
    nlohmann::json j;
    j["nodes"] = nlohmann::json::array();
    for (const auto& p : mesh.nodes) j["nodes"].push_back({p.x, p.y});
    j["elements"] = nlohmann::json::array();
    for (const auto& t : mesh.elements) j["elements"].push_back({t[0], t[1], t[2]});
    j["regions"] = nlohmann::json::array();
    for (const auto& r : mesh.regions) j["regions"].push_back(r.str());
    j["boundary"] = mesh.boundary;
    return j;
}

inline void save_mesh(const Mesh2D& mesh, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    // max_digits10 via the serializer keeps doubles round-trip exact.
    out << mesh_to_json(mesh).dump(1) << '\n';
}

namespace detail {

inline std::size_t line_of_offset(const std::string& text, std::size_t byte)
{
    byte = std::min(byte, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

} // namespace detail

inline Mesh2D mesh_from_json(const nlohmann::json& j)
{
    Mesh2D mesh;
    try {
        for (const auto& key : j.items())
            if (key.key() != "nodes" && key.key() != "elements" && key.key() != "regions" && key.key() != "boundary")
                throw ConfigError("mesh: unknown key '" + key.key() + "'");
        for (const auto& p : j.at("nodes")) {
            if (p.size() != 2) throw ConfigError("mesh: node entries must be [x, y]");
            mesh.nodes.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        }
        for (const auto& t : j.at("elements")) {
            if (t.size() != 3) throw ConfigError("mesh: element entries must be [i, j, k]");
            mesh.elements.push_back({t.at(0).get<std::size_t>(), t.at(1).get<std::size_t>(), t.at(2).get<std::size_t>()});
        }
        for (const auto& r : j.at("regions")) mesh.regions.push_back(RegionTag::parse(r.get<std::string>()));
        mesh.boundary = j.at("boundary").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("mesh: ") + ex.what());
    }
    std::sort(mesh.boundary.begin(), mesh.boundary.end());
    mesh.validate();
    return mesh;
}

inline Mesh2D load_mesh(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open mesh file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& ex) {
        throw ConfigError(path + ":" + std::to_string(detail::line_of_offset(text, ex.byte)) + ": parse error: " +
                          ex.what());
    }
    return mesh_from_json(j);
}

} // namespace mqs
