#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mqs/error.hpp"
#include "mqs/linalg/sparse_matrix.hpp"
#include "mqs/materials.hpp"
#include "mqs/mesh.hpp"

namespace mqs {

using ElementMatrix = std::array<std::array<double, 3>, 3>;

/// Region material assignments keyed by RegionTag::material_key().
class MaterialTable {
public:
    void set(const RegionTag& tag, MaterialModel model) { table_[tag.material_key()] = model; }

    const MaterialModel& at(const RegionTag& tag) const
    {
        auto it = table_.find(tag.material_key());
        if (it == table_.end()) throw ConfigError("no material defined for region '" + tag.material_key() + "'");
        return it->second;
    }

    bool contains(const RegionTag& tag) const { return table_.count(tag.material_key()) != 0; }

    const std::map<std::string, MaterialModel>& entries() const noexcept { return table_; }

    /// Nonconducting regions must have kappa = 0 and a linear law.
    void validate_for(const Mesh2D& mesh) const
    {
        for (const auto& [key, model] : table_) {
            model.validate();
            const auto tag = RegionTag::parse(key);
            if (!tag.is_conductor()) {
                if (model.kappa != 0.0) throw ConfigError("material '" + key + "': nonconducting region needs kappa = 0");
                if (model.is_nonlinear())
                    throw ConfigError("material '" + key + "': nonlinear reluctivity is only allowed on conductors");
            } else if (!(model.kappa > 0.0)) {
                throw ConfigError("material '" + key + "': conductor needs kappa > 0");
            }
        }
        for (const auto& r : mesh.regions) (void)at(r);
    }

private:
    std::map<std::string, MaterialModel> table_;
};

/// Gradient coefficients of the linear shape functions: grad(phi_i) = (b_i, c_i) / (2 area).
struct ElementGeometry {
    std::array<double, 3> b{};
    std::array<double, 3> c{};
    double area = 0.0;

    explicit ElementGeometry(const std::array<Point, 3>& p)
    {
        for (std::size_t i = 0; i < 3; ++i) {
            const auto& pj = p[(i + 1) % 3];
            const auto& pk = p[(i + 2) % 3];
            b[i] = pj.y - pk.y;
            c[i] = pk.x - pj.x;
        }
        area = signed_area(p[0], p[1], p[2]);
        if (!(area > 0.0)) throw SolverError("element geometry: degenerate or clockwise triangle");
    }

    /// Geometric stiffness S with K_e = nu * S.
    ElementMatrix stiffness(double nu) const
    {
        ElementMatrix k{};
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) k[i][j] = nu * (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
        return k;
    }

    /// |grad a|^2 for nodal values a; equals |B|^2 for B = curl(a e_z).
    double gradient_norm2(const std::array<double, 3>& a) const
    {
        double gx = 0.0, gy = 0.0;
        for (std::size_t i = 0; i < 3; ++i) {
            gx += a[i] * b[i];
            gy += a[i] * c[i];
        }
        return (gx * gx + gy * gy) / (4.0 * area * area);
    }
};

inline ElementMatrix element_stiffness(const std::array<Point, 3>& nodes, double nu)
{
    return ElementGeometry(nodes).stiffness(nu);
}

inline ElementMatrix element_mass(const std::array<Point, 3>& nodes, double kappa)
{
    const double area = ElementGeometry(nodes).area;
    ElementMatrix m{};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) m[i][j] = kappa * area / 12.0 * (i == j ? 2.0 : 1.0);
    return m;
}

inline constexpr std::size_t no_dof = std::numeric_limits<std::size_t>::max();

/// Free DoFs after Dirichlet elimination, reordered as [conducting | nonconducting].
struct DofPartition {
    std::vector<std::size_t> node_to_free;  // no_dof on Dirichlet nodes
    std::vector<std::size_t> free_to_node;
    std::vector<std::size_t> perm;      // block position -> free index
    std::vector<std::size_t> position;  // free index -> block position
    std::size_t n_c = 0;
    std::size_t n_n = 0;

    std::size_t num_free() const noexcept { return free_to_node.size(); }
    bool is_conducting_free(std::size_t f) const { return position[f] < n_c; }
};

/// A free DoF is conducting iff an adjacent element is tagged Conductor.
/// Order within each set follows ascending free index.
inline DofPartition partition(const Mesh2D& mesh)
{
    DofPartition p;
    std::vector<bool> dirichlet(mesh.num_nodes(), false);
    for (auto b : mesh.boundary) dirichlet[b] = true;
    p.node_to_free.assign(mesh.num_nodes(), no_dof);
    for (std::size_t v = 0; v < mesh.num_nodes(); ++v)
        if (!dirichlet[v]) {
            p.node_to_free[v] = p.free_to_node.size();
            p.free_to_node.push_back(v);
        }
    std::vector<bool> conducting(mesh.num_nodes(), false);
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
        if (mesh.regions[e].is_conductor())
            for (auto v : mesh.elements[e]) conducting[v] = true;
    for (std::size_t f = 0; f < p.num_free(); ++f)
        if (conducting[p.free_to_node[f]]) p.perm.push_back(f);
    p.n_c = p.perm.size();
    for (std::size_t f = 0; f < p.num_free(); ++f)
        if (!conducting[p.free_to_node[f]]) p.perm.push_back(f);
    p.n_n = p.perm.size() - p.n_c;
    p.position.assign(p.num_free(), 0);
    for (std::size_t k = 0; k < p.perm.size(); ++k) p.position[p.perm[k]] = k;
    return p;
}

/// Per-element |B|^2 from a nodal potential (Dirichlet zeros included).
inline std::vector<double> compute_b2(const Mesh2D& mesh, std::span<const double> a_nodal)
{
    if (a_nodal.size() != mesh.num_nodes()) throw SolverError("compute_b2: nodal vector size mismatch");
    std::vector<double> b2(mesh.num_elements());
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto& t = mesh.elements[e];
        b2[e] = ElementGeometry(mesh.corners(e)).gradient_norm2({a_nodal[t[0]], a_nodal[t[1]], a_nodal[t[2]]});
    }
    return b2;
}

/// Area-weighted mean of |B| over the elements carrying the probe overlay.
inline double probe_average_b(const Mesh2D& mesh, std::span<const double> b2, int probe_id)
{
    double num = 0.0, den = 0.0;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
        if (mesh.regions[e].probe == probe_id) {
            const double a = mesh.area(e);
            num += a * std::sqrt(b2[e]);
            den += a;
        }
    if (den == 0.0) throw ConfigError("probe region " + std::to_string(probe_id) + " has no elements");
    return num / den;
}

struct AssembledSystem {
    SparseMatrix mass;
    SparseMatrix stiffness;
    std::vector<double> element_b2;
};

/// Which DoFs the global matrices are indexed by.
enum class Elimination { Dirichlet, None };

/// Global mass and stiffness. With Elimination::Dirichlet the matrices are
/// indexed by free DoFs (partition order is NOT applied). `a_nodal`, when given,
/// sets the per-element B^2 seen by nonlinear laws; otherwise B^2 = 0.
inline AssembledSystem assemble(const Mesh2D& mesh, const MaterialTable& materials,
                                std::optional<std::span<const double>> a_nodal,
                                Elimination elimination = Elimination::Dirichlet)
{
    std::vector<std::size_t> index(mesh.num_nodes());
    std::size_t n = 0;
    if (elimination == Elimination::Dirichlet) {
        const auto p = partition(mesh);
        index = p.node_to_free;
        n = p.num_free();
    } else {
        for (std::size_t v = 0; v < index.size(); ++v) index[v] = v;
        n = mesh.num_nodes();
    }
    AssembledSystem out;
    out.element_b2 = a_nodal ? compute_b2(mesh, *a_nodal) : std::vector<double>(mesh.num_elements(), 0.0);
    std::vector<Triplet> mt, kt;
    kt.reserve(9 * mesh.num_elements());
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto& model = materials.at(mesh.regions[e]);
        const auto corners = mesh.corners(e);
        const auto ke = element_stiffness(corners, nu(model, out.element_b2[e]));
        const bool conducting = model.kappa > 0.0;
        const auto me = conducting ? element_mass(corners, model.kappa) : ElementMatrix{};
        const auto& t = mesh.elements[e];
        for (std::size_t i = 0; i < 3; ++i) {
            const auto gi = index[t[i]];
            if (gi == no_dof) continue;
            for (std::size_t j = 0; j < 3; ++j) {
                const auto gj = index[t[j]];
                if (gj == no_dof) continue;
                kt.push_back({gi, gj, ke[i][j]});
                if (conducting) mt.push_back({gi, gj, me[i][j]});
            }
        }
    }
    out.mass = SparseMatrix::from_triplets(n, n, std::move(mt));
    out.stiffness = SparseMatrix::from_triplets(n, n, std::move(kt));
    return out;
}

/// Blocks of the partitioned system; K_nc is K_cn^T and is not stored.
struct SystemBlocks {
    SparseMatrix m_cc;
    SparseMatrix k_cc;
    SparseMatrix k_cn;
    SparseMatrix k_nn;
    std::vector<double> element_b2;
};

namespace detail {

inline SparseMatrix slice(const SparseMatrix& a, const DofPartition& p, bool row_c, bool col_c)
{
    std::vector<Triplet> t;
    for (const auto& e : a.triplets()) {
        const auto pr = p.position[e.row], pc = p.position[e.col];
        if ((pr < p.n_c) != row_c || (pc < p.n_c) != col_c) continue;
        t.push_back({row_c ? pr : pr - p.n_c, col_c ? pc : pc - p.n_c, e.value});
    }
    return SparseMatrix::from_triplets(row_c ? p.n_c : p.n_n, col_c ? p.n_c : p.n_n, std::move(t));
}

} // namespace detail

/// Extracts the (cc), (cn), (nn) blocks of matrices indexed by free DoFs.
inline SystemBlocks extract_blocks(const SparseMatrix& m, const SparseMatrix& k, const DofPartition& p,
                                   std::vector<double> element_b2)
{
    const auto n = p.num_free();
    if (m.rows() != n || m.cols() != n || k.rows() != n || k.cols() != n)
        throw SolverError("extract_blocks: matrix dimensions do not match the partition");
    return {detail::slice(m, p, true, true), detail::slice(k, p, true, true), detail::slice(k, p, true, false),
            detail::slice(k, p, false, false), std::move(element_b2)};
}

/// Exponential ramp excitation I(t) = I_max (1 - exp(-t / tau)) through `turns`
/// conductors spread uniformly over a coil region.
struct SourceSpec {
    int coil_id = 0;
    double turns = 1.0;
    double i_max = 1.0;  // A
    double tau = 1.0;    // s

    double current(double t) const { return i_max * (1.0 - std::exp(-t / tau)); }
};

/// Load vector over all nodes: int J_z phi_i with J_z = I(t) turns / coil area.
inline std::vector<double> assemble_source_nodal(const Mesh2D& mesh, const SourceSpec& src, double t)
{
    const RegionTag coil = RegionTag::coil(src.coil_id);
    double coil_area = 0.0;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
        if (mesh.regions[e].material_key() == coil.material_key()) coil_area += mesh.area(e);
    if (coil_area == 0.0) throw ConfigError("source: coil region " + std::to_string(src.coil_id) + " has no elements");
    const double jz = src.current(t) * src.turns / coil_area;
    std::vector<double> f(mesh.num_nodes(), 0.0);
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
        if (mesh.regions[e].material_key() == coil.material_key())
            for (auto v : mesh.elements[e]) f[v] += jz * mesh.area(e) / 3.0;
    return f;
}

/// Throws if the coil is missing or its support touches a conducting DoF.
inline void check_source_support(const Mesh2D& mesh, const SourceSpec& src, const DofPartition& p)
{
    const auto key = RegionTag::coil(src.coil_id).material_key();
    bool found = false;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        if (mesh.regions[e].material_key() != key) continue;
        found = true;
        for (auto v : mesh.elements[e]) {
            const auto f = p.node_to_free[v];
            if (f != no_dof && p.is_conducting_free(f))
                throw ConfigError("source: coil region " + std::to_string(src.coil_id) +
                                  " overlaps a conductor region (node " + std::to_string(v) + ")");
        }
    }
    if (!found) throw ConfigError("source: coil region " + std::to_string(src.coil_id) + " has no elements");
}

/// Source restricted to the nonconducting partition (length n_n).
inline std::vector<double> assemble_source(const Mesh2D& mesh, const SourceSpec& src, double t, const DofPartition& p)
{
    check_source_support(mesh, src, p);
    const auto nodal = assemble_source_nodal(mesh, src, t);
    std::vector<double> j(p.n_n, 0.0);
    for (std::size_t k = 0; k < p.n_n; ++k) j[k] = nodal[p.free_to_node[p.perm[p.n_c + k]]];
    return j;
}

/// Free-DoF source vector (unpermuted), as used by the monolithic implicit solver.
inline std::vector<double> assemble_source_free(const Mesh2D& mesh, const SourceSpec& src, double t,
                                                const DofPartition& p)
{
    const auto nodal = assemble_source_nodal(mesh, src, t);
    std::vector<double> j(p.num_free());
    for (std::size_t f = 0; f < p.num_free(); ++f) j[f] = nodal[p.free_to_node[f]];
    return j;
}

/// Nodal vector from partitioned (a_c, a_n), with zeros on Dirichlet nodes.
inline std::vector<double> to_nodal(const DofPartition& p, std::span<const double> a_c, std::span<const double> a_n)
{
    std::vector<double> a(p.node_to_free.size(), 0.0);
    for (std::size_t k = 0; k < p.n_c; ++k) a[p.free_to_node[p.perm[k]]] = a_c[k];
    for (std::size_t k = 0; k < p.n_n; ++k) a[p.free_to_node[p.perm[p.n_c + k]]] = a_n[k];
    return a;
}

/// Nodal vector from a free-DoF vector in unpermuted order.
inline std::vector<double> free_to_nodal(const DofPartition& p, std::span<const double> a_free)
{
    std::vector<double> a(p.node_to_free.size(), 0.0);
    for (std::size_t f = 0; f < p.num_free(); ++f) a[p.free_to_node[f]] = a_free[f];
    return a;
}

/// Stiffness K_cc assembled at the current conducting potential. Conductor
/// elements only touch conducting or Dirichlet nodes, so a_c determines their B^2.
inline SparseMatrix assemble_kcc(const Mesh2D& mesh, const MaterialTable& materials, const DofPartition& p,
                                 std::span<const double> a_c)
{
    std::vector<double> a(p.node_to_free.size(), 0.0);
    for (std::size_t k = 0; k < p.n_c; ++k) a[p.free_to_node[p.perm[k]]] = a_c[k];
    std::vector<Triplet> t;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto& tri = mesh.elements[e];
        std::array<std::size_t, 3> local{};
        bool touches = false;
        for (std::size_t i = 0; i < 3; ++i) {
            const auto f = p.node_to_free[tri[i]];
            local[i] = (f != no_dof && p.is_conducting_free(f)) ? p.position[f] : no_dof;
            touches = touches || local[i] != no_dof;
        }
        if (!touches) continue;
        const auto& model = materials.at(mesh.regions[e]);
        const ElementGeometry geo(mesh.corners(e));
        const double b2 = model.is_nonlinear() ? geo.gradient_norm2({a[tri[0]], a[tri[1]], a[tri[2]]}) : 0.0;
        const auto ke = geo.stiffness(nu(model, b2));
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j)
                if (local[i] != no_dof && local[j] != no_dof) t.push_back({local[i], local[j], ke[i][j]});
    }
    return SparseMatrix::from_triplets(p.n_c, p.n_c, std::move(t));
}

struct TangentSystem {
    SparseMatrix stiffness;  // K(a)
    SparseMatrix jacobian;   // d(K(a) a)/da
};

/// K(a) and the Jacobian of a -> K(a) a over free DoFs (unpermuted). Per element
/// with B^2 = a_e^T S a_e / area, the chain rule adds (2 nu' / area) (S a_e)(S a_e)^T.
inline TangentSystem assemble_tangent(const Mesh2D& mesh, const MaterialTable& materials, const DofPartition& p,
                                      std::span<const double> a_free)
{
    const auto a = free_to_nodal(p, a_free);
    std::vector<Triplet> kt, jt;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto& tri = mesh.elements[e];
        const auto& model = materials.at(mesh.regions[e]);
        const ElementGeometry geo(mesh.corners(e));
        const std::array<double, 3> ae{a[tri[0]], a[tri[1]], a[tri[2]]};
        const double b2 = geo.gradient_norm2(ae);
        const auto s = geo.stiffness(1.0);
        const double nu_e = nu(model, b2);
        const double dnu = dnu_db2(model, b2);
        std::array<double, 3> sa{};
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) sa[i] += s[i][j] * ae[j];
        for (std::size_t i = 0; i < 3; ++i) {
            const auto gi = p.node_to_free[tri[i]];
            if (gi == no_dof) continue;
            for (std::size_t j = 0; j < 3; ++j) {
                const auto gj = p.node_to_free[tri[j]];
                if (gj == no_dof) continue;
                kt.push_back({gi, gj, nu_e * s[i][j]});
                jt.push_back({gi, gj, nu_e * s[i][j] + 2.0 * dnu / geo.area * sa[i] * sa[j]});
            }
        }
    }
    const auto n = p.num_free();
    return {SparseMatrix::from_triplets(n, n, std::move(kt)), SparseMatrix::from_triplets(n, n, std::move(jt))};
}

} // namespace mqs
