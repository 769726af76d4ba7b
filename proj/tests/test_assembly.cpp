#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "mqs/assembly.hpp"
#include "support.hpp"

using namespace mqs;
using mqs::testing::dense;

namespace {

const std::array<Point, 3> unit_right{{{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}}};

MaterialTable unit_materials(bool with_conductor)
{
    MaterialTable t;
    t.set(RegionTag::air(), MaterialModel{0.0, LinearReluctivity{1.0}});
    if (with_conductor) t.set(RegionTag::conductor(0), MaterialModel{1.0, LinearReluctivity{1.0}});
    return t;
}

Mesh2D strip_mesh()
{
    return generate_rect_mesh(1.0, 1.0, 6, 6, [](const Point& c) {
        return c.x < 0.5 ? RegionTag::conductor(0) : RegionTag::air();
    });
}

/// Value of the linear interpolant of `a` at point q inside element e.
double interpolate(const Mesh2D& m, std::size_t e, std::span<const double> a, const Point& q)
{
    const auto c = m.corners(e);
    const double area = signed_area(c[0], c[1], c[2]);
    const double l0 = signed_area(q, c[1], c[2]) / area;
    const double l1 = signed_area(c[0], q, c[2]) / area;
    const double l2 = signed_area(c[0], c[1], q) / area;
    const auto& t = m.elements[e];
    return l0 * a[t[0]] + l1 * a[t[1]] + l2 * a[t[2]];
}

} // namespace

TEST(ElementStiffness, UnitRightTriangle)
{
    const auto k = element_stiffness(unit_right, 1.0);
    const double expected[3][3] = {{1.0, -0.5, -0.5}, {-0.5, 0.5, 0.0}, {-0.5, 0.0, 0.5}};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_NEAR(k[i][j], expected[i][j], 1e-15);
}

TEST(ElementStiffness, RowSumsZeroAndSymmetric)
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::array<Point, 3> p{{{u(rng), u(rng)}, {u(rng), u(rng)}, {u(rng), u(rng)}}};
        if (signed_area(p[0], p[1], p[2]) < 0.0) std::swap(p[1], p[2]);
        if (signed_area(p[0], p[1], p[2]) < 1e-3) continue;
        const auto k = element_stiffness(p, 3.7);
        for (int i = 0; i < 3; ++i) {
            EXPECT_NEAR(k[i][0] + k[i][1] + k[i][2], 0.0, 1e-10 * std::abs(k[i][i]));
            for (int j = 0; j < 3; ++j) EXPECT_EQ(k[i][j], k[j][i]);
        }
    }
}

TEST(ElementStiffness, ScaleInvariant)
{
    const std::array<Point, 3> p{{{0.1, 0.2}, {0.9, 0.1}, {0.4, 0.8}}};
    const std::array<Point, 3> q{{{0.2, 0.4}, {1.8, 0.2}, {0.8, 1.6}}};
    const auto a = element_stiffness(p, 2.0), b = element_stiffness(q, 2.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_NEAR(a[i][j], b[i][j], 1e-14);
}

TEST(ElementStiffness, DegenerateRejected)
{
    const std::array<Point, 3> flat{{{0.0, 0.0}, {1.0, 1.0}, {2.0, 2.0}}};
    EXPECT_THROW(element_stiffness(flat, 1.0), Error);
    EXPECT_THROW(element_mass(flat, 1.0), Error);
}

TEST(ElementMass, Examples)
{
    const auto zero = element_mass(unit_right, 0.0);
    for (const auto& row : zero)
        for (double v : row) EXPECT_EQ(v, 0.0);
    const auto m = element_mass(unit_right, 12.0);
    for (int i = 0; i < 3; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 3; ++j) {
            EXPECT_DOUBLE_EQ(m[i][j], i == j ? 1.0 : 0.5);
            sum += m[i][j];
        }
        EXPECT_DOUBLE_EQ(sum, 12.0 * 0.5 / 3.0);
    }
}

TEST(Assemble, AllAirHasZeroMass)
{
    const auto mesh = generate_rect_mesh(1.0, 1.0, 4, 4, [](const Point&) { return RegionTag::air(); });
    const auto sys = assemble(mesh, unit_materials(false), std::nullopt);
    EXPECT_EQ(sys.mass.nonzeros(), 0u);
    EXPECT_EQ(sys.mass.rows(), 9u);
    EXPECT_GT(sys.stiffness.nonzeros(), 0u);
}

TEST(Assemble, ConstantInKernelWithoutElimination)
{
    const auto mesh = generate_rect_mesh(1.0, 1.0, 2, 2, [](const Point&) { return RegionTag::air(); });
    const auto sys = assemble(mesh, unit_materials(false), std::nullopt, Elimination::None);
    ASSERT_EQ(sys.stiffness.rows(), 9u);
    for (double v : sys.stiffness * Vector(9, 1.0)) EXPECT_NEAR(v, 0.0, 1e-14);
}

TEST(Assemble, SymmetricAndMassSupport)
{
    const auto prob = mqs::testing::small_problem(true);
    std::mt19937_64 rng(3);
    const auto a = mqs::testing::random_vector(prob.mesh.num_nodes(), rng, 0.0, 1e-3);
    const auto p = partition(prob.mesh);
    auto nodal = a;
    for (auto b : prob.mesh.boundary) nodal[b] = 0.0;
    const auto sys = assemble(prob.mesh, prob.materials, nodal);
    const auto k = dense(sys.stiffness), m = dense(sys.mass);
    EXPECT_LE((k - k.transpose()).norm(), 1e-12 * k.norm());
    EXPECT_LE((m - m.transpose()).norm(), 1e-12 * m.norm());
    // Mass vanishes outside the conducting block.
    for (std::size_t i = 0; i < p.num_free(); ++i)
        for (std::size_t j = 0; j < p.num_free(); ++j)
            if (!p.is_conducting_free(i) || !p.is_conducting_free(j)) {
                EXPECT_EQ(m(static_cast<int>(i), static_cast<int>(j)), 0.0);
            }
}

TEST(Assemble, LinearIndependentOfPotential)
{
    const auto prob = mqs::testing::small_problem(false);
    std::mt19937_64 rng(4);
    const auto a = mqs::testing::random_vector(prob.mesh.num_nodes(), rng);
    const auto with = assemble(prob.mesh, prob.materials, a);
    const auto without = assemble(prob.mesh, prob.materials, std::nullopt);
    EXPECT_TRUE(with.stiffness == without.stiffness);
    EXPECT_TRUE(with.mass == without.mass);
}

TEST(Assemble, MissingMaterial)
{
    const auto mesh = strip_mesh();
    EXPECT_THROW(assemble(mesh, unit_materials(false), std::nullopt), ConfigError);
}

TEST(MaterialTable, Validation)
{
    const auto mesh = strip_mesh();
    auto t = unit_materials(true);
    EXPECT_NO_THROW(t.validate_for(mesh));
    auto nonlinear_air = t;
    nonlinear_air.set(RegionTag::air(), MaterialModel{0.0, BrauerReluctivity{1.0, 1.0, 1.0}});
    EXPECT_THROW(nonlinear_air.validate_for(mesh), ConfigError);
    auto conducting_air = t;
    conducting_air.set(RegionTag::air(), MaterialModel{1.0, LinearReluctivity{1.0}});
    EXPECT_THROW(conducting_air.validate_for(mesh), ConfigError);
    auto dead_conductor = t;
    dead_conductor.set(RegionTag::conductor(0), MaterialModel{0.0, LinearReluctivity{1.0}});
    EXPECT_THROW(dead_conductor.validate_for(mesh), ConfigError);
}

TEST(Partition, AllAirAndAllConductor)
{
    const auto air = generate_rect_mesh(1.0, 1.0, 4, 3, [](const Point&) { return RegionTag::air(); });
    EXPECT_EQ(partition(air).n_c, 0u);
    EXPECT_EQ(partition(air).n_n, 6u);
    const auto cond = generate_rect_mesh(1.0, 1.0, 4, 3, [](const Point&) { return RegionTag::conductor(0); });
    EXPECT_EQ(partition(cond).n_n, 0u);
    EXPECT_EQ(partition(cond).n_c, 6u);
}

TEST(Partition, InterfaceNodesAreConducting)
{
    const auto mesh = strip_mesh();
    const auto p = partition(mesh);
    std::set<std::size_t> boundary(mesh.boundary.begin(), mesh.boundary.end());
    // Oracle: free nodes with x <= 0.5 touch a conductor element.
    std::vector<std::size_t> expected_c, expected_n;
    for (std::size_t v = 0; v < mesh.num_nodes(); ++v) {
        if (boundary.count(v)) continue;
        (mesh.nodes[v].x <= 0.5 + 1e-12 ? expected_c : expected_n).push_back(p.node_to_free[v]);
    }
    EXPECT_EQ(p.n_c, expected_c.size());
    EXPECT_EQ(p.n_n, expected_n.size());
    EXPECT_EQ(std::vector<std::size_t>(p.perm.begin(), p.perm.begin() + static_cast<std::ptrdiff_t>(p.n_c)), expected_c);
    EXPECT_EQ(std::vector<std::size_t>(p.perm.begin() + static_cast<std::ptrdiff_t>(p.n_c), p.perm.end()), expected_n);
    for (std::size_t k = 0; k < p.perm.size(); ++k) EXPECT_EQ(p.position[p.perm[k]], k);
}

TEST(ExtractBlocks, IdentityMatrix)
{
    const auto mesh = strip_mesh();
    const auto p = partition(mesh);
    const auto n = p.num_free();
    const auto b = extract_blocks(SparseMatrix::identity(n), SparseMatrix::identity(n), p, {});
    EXPECT_TRUE(b.k_cc == SparseMatrix::identity(p.n_c));
    EXPECT_TRUE(b.k_nn == SparseMatrix::identity(p.n_n));
    EXPECT_EQ(b.k_cn.nonzeros(), 0u);
    EXPECT_EQ(b.k_cn.rows(), p.n_c);
    EXPECT_EQ(b.k_cn.cols(), p.n_n);
}

TEST(ExtractBlocks, RandomPartitionMatchesDenseSlicing)
{
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 10;
        const auto k = mqs::testing::random_spd(n, 0.4, rng);
        DofPartition p;
        p.perm.resize(n);
        std::iota(p.perm.begin(), p.perm.end(), 0);
        std::shuffle(p.perm.begin(), p.perm.end(), rng);
        p.n_c = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
        p.n_n = n - p.n_c;
        p.free_to_node = p.perm;
        p.node_to_free = p.perm;
        p.position.resize(n);
        for (std::size_t i = 0; i < n; ++i) p.position[p.perm[i]] = i;
        const auto b = extract_blocks(k, k, p, {});
        const auto kd = dense(k);
        Eigen::MatrixXd permuted(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                permuted(static_cast<int>(i), static_cast<int>(j)) =
                    kd(static_cast<int>(p.perm[i]), static_cast<int>(p.perm[j]));
        const int c = static_cast<int>(p.n_c), m = static_cast<int>(p.n_n);
        EXPECT_EQ(dense(b.k_cc), permuted.topLeftCorner(c, c));
        EXPECT_EQ(dense(b.k_cn), permuted.topRightCorner(c, m));
        EXPECT_EQ(dense(b.k_nn), permuted.bottomRightCorner(m, m));
        EXPECT_EQ(dense(b.k_cn).transpose(), permuted.bottomLeftCorner(m, c));
    }
}

TEST(ExtractBlocks, DimensionMismatch)
{
    const auto p = partition(strip_mesh());
    EXPECT_THROW(extract_blocks(SparseMatrix::identity(3), SparseMatrix::identity(3), p, {}), SolverError);
}

TEST(Blocks, DefinitenessOnSmallProblem)
{
    const auto prob = mqs::testing::small_problem(false);
    const auto p = partition(prob.mesh);
    const auto sys = assemble(prob.mesh, prob.materials, std::nullopt);
    const auto b = mqs::testing::dense_blocks(extract_blocks(sys.mass, sys.stiffness, p, sys.element_b2));
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(b.m_cc).eigenvalues().minCoeff(), 0.0);
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(b.k_nn).eigenvalues().minCoeff(), 0.0);
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(b.k_cc - b.schur()).eigenvalues().minCoeff(), 0.0);
}

TEST(AssembleKcc, NonlinearityConfinedToConductingBlock)
{
    const auto prob = mqs::testing::small_problem(true);
    const auto p = partition(prob.mesh);
    std::mt19937_64 rng(6);
    const auto a_c = mqs::testing::random_vector(p.n_c, rng, -5e-3, 5e-3);
    const auto a_n = mqs::testing::random_vector(p.n_n, rng, -5e-3, 5e-3);
    const auto nodal = to_nodal(p, a_c, a_n);
    const auto at_a = assemble(prob.mesh, prob.materials, nodal);
    const auto at_zero = assemble(prob.mesh, prob.materials, std::nullopt);
    const auto ba = extract_blocks(at_a.mass, at_a.stiffness, p, at_a.element_b2);
    const auto b0 = extract_blocks(at_zero.mass, at_zero.stiffness, p, at_zero.element_b2);
    EXPECT_TRUE(ba.k_cn == b0.k_cn);
    EXPECT_TRUE(ba.k_nn == b0.k_nn);
    EXPECT_FALSE(ba.k_cc == b0.k_cc);
    const auto kcc = assemble_kcc(prob.mesh, prob.materials, p, a_c);
    EXPECT_LE((dense(kcc) - dense(ba.k_cc)).norm(), 1e-12 * dense(ba.k_cc).norm());
}

TEST(Source, WaveformAndTotals)
{
    const auto prob = mqs::testing::small_problem(false);
    const auto p = partition(prob.mesh);
    for (double v : assemble_source(prob.mesh, prob.source, 0.0, p)) EXPECT_EQ(v, 0.0);
    const double t = 0.7 * prob.source.tau;
    const auto nodal = assemble_source_nodal(prob.mesh, prob.source, t);
    const double total = std::accumulate(nodal.begin(), nodal.end(), 0.0);
    EXPECT_NEAR(total, prob.source.current(t) * prob.source.turns, 1e-12 * total);
    const auto late = assemble_source_nodal(prob.mesh, prob.source, 1e3 * prob.source.tau);
    auto unit = prob.source;
    unit.i_max = 1.0;
    const auto unit_late = assemble_source_nodal(prob.mesh, unit, 1e3 * prob.source.tau);
    for (std::size_t v = 0; v < late.size(); ++v) EXPECT_NEAR(late[v], prob.source.i_max * unit_late[v], 1e-12);
    // Restricted vector is the nodal vector on the nonconducting DoFs.
    const auto j = assemble_source(prob.mesh, prob.source, t, p);
    EXPECT_NEAR(std::accumulate(j.begin(), j.end(), 0.0), total, 1e-12 * total);
}

TEST(Source, CoilTouchingConductorRejected)
{
    const auto mesh = generate_rect_mesh(1.0, 1.0, 4, 4, [](const Point& c) {
        if (c.x < 0.5) return RegionTag::conductor(0);
        if (c.x < 0.75) return RegionTag::coil(0);
        return RegionTag::air();
    });
    const auto p = partition(mesh);
    EXPECT_THROW(assemble_source(mesh, SourceSpec{0, 1.0, 1.0, 1.0}, 1.0, p), ConfigError);
}

TEST(ComputeB2, Examples)
{
    const auto mesh = generate_rect_mesh(1.0, 1.0, 3, 3, [](const Point&) { return RegionTag::air(); });
    for (double v : compute_b2(mesh, Vector(mesh.num_nodes(), 0.0))) EXPECT_EQ(v, 0.0);
    Vector a(mesh.num_nodes());
    for (std::size_t v = 0; v < a.size(); ++v) a[v] = mesh.nodes[v].y;
    for (double v : compute_b2(mesh, a)) EXPECT_NEAR(v, 1.0, 1e-13);
}

TEST(ComputeB2, FiniteDifferenceOracle)
{
    const auto mesh = generate_rect_mesh(0.3, 0.2, 5, 4, [](const Point&) { return RegionTag::air(); });
    std::mt19937_64 rng(10);
    const auto a = mqs::testing::random_vector(mesh.num_nodes(), rng);
    const auto b2 = compute_b2(mesh, a);
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto c = mesh.corners(e);
        const Point g{(c[0].x + c[1].x + c[2].x) / 3.0, (c[0].y + c[1].y + c[2].y) / 3.0};
        const double d = 1e-4;
        const double ax = (interpolate(mesh, e, a, {g.x + d, g.y}) - interpolate(mesh, e, a, {g.x - d, g.y})) / (2 * d);
        const double ay = (interpolate(mesh, e, a, {g.x, g.y + d}) - interpolate(mesh, e, a, {g.x, g.y - d})) / (2 * d);
        // B = (dA/dy, -dA/dx)
        const double expected = ay * ay + ax * ax;
        EXPECT_NEAR(b2[e], expected, 1e-10 * std::max(1.0, expected));
    }
}

TEST(ProbeAverage, AreaWeighted)
{
    const auto mesh = generate_rect_mesh(1.0, 1.0, 2, 1, [](const Point& c) {
        return c.x < 0.5 ? RegionTag::air().with_probe(0) : RegionTag::air();
    });
    Vector b2(mesh.num_elements(), 0.0);
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) b2[e] = mesh.regions[e].probe ? 4.0 : 100.0;
    EXPECT_DOUBLE_EQ(probe_average_b(mesh, b2, 0), 2.0);
    EXPECT_THROW(probe_average_b(mesh, b2, 5), ConfigError);
}
