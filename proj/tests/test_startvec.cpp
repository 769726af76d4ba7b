#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mqs/linalg/krylov.hpp"
#include "mqs/startvec.hpp"
#include "support.hpp"

using namespace mqs;
using mqs::testing::dense;
using mqs::testing::random_spd;
using mqs::testing::random_vector;

namespace {

/// V (V^T K V)^{-1} V^T r with Eigen, V given by columns.
Vector galerkin_oracle(const SparseMatrix& k, const std::vector<Vector>& v, const Vector& r)
{
    const auto n = static_cast<Eigen::Index>(r.size());
    const auto m = static_cast<Eigen::Index>(v.size());
    Eigen::MatrixXd vm(n, m);
    for (Eigen::Index j = 0; j < m; ++j) vm.col(j) = mqs::testing::eig(v[static_cast<std::size_t>(j)]);
    const Eigen::MatrixXd proj = vm.transpose() * dense(k) * vm;
    const Eigen::VectorXd z = proj.ldlt().solve(vm.transpose() * mqs::testing::eig(r));
    return mqs::testing::vec(vm * z);
}

double energy(const SparseMatrix& k, const Vector& x, const Vector& r) { return 0.5 * dot(x, k * x) - dot(x, r); }

std::size_t pcg_iterations(const SparseMatrix& k, const Vector& b, const Vector& x0)
{
    return pcg(LinearOperator::from_matrix(k), b, x0, jacobi_preconditioner(k), 1e-6, 1000).iterations;
}

} // namespace

TEST(PodTruncate, Examples)
{
    EXPECT_EQ(pod_truncate(Vector{10.0, 1.0, 1e-5}, 1e4), 2u);
    EXPECT_EQ(pod_truncate(Vector{5.0}, 1.0), 1u);
    EXPECT_EQ(pod_truncate(Vector{5.0}, 1e4), 1u);
    EXPECT_EQ(pod_truncate(Vector{2.0, 2.0, 2.0, 2.0}, 1.0), 4u);
    EXPECT_EQ(pod_truncate(Vector{}, 1e4), 0u);
}

TEST(CspeCache, PushIntoEmpty)
{
    const auto k = SparseMatrix::identity(3);
    CspeCache c(k, 5);
    c.push(Vector{3.0, 0.0, 4.0});
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c.spmv_count(), 1u);
    EXPECT_NEAR(c.basis()[0][0], 0.6, 1e-15);
    EXPECT_NEAR(c.basis()[0][2], 0.8, 1e-15);
}

TEST(CspeCache, PushInSpanIsNoOp)
{
    std::mt19937_64 rng(1);
    const auto k = random_spd(20, 0.3, rng);
    CspeCache c(k, 5);
    const auto x = random_vector(20, rng), y = random_vector(20, rng);
    c.push(x);
    c.push(y);
    const auto before = c.basis();
    c.push(2.0 * x - 0.5 * y);
    EXPECT_EQ(c.size(), 2u);
    EXPECT_EQ(c.spmv_count(), 2u);
    EXPECT_EQ(c.basis(), before);
}

TEST(CspeCache, WindowEvictsOldestWithOneProduct)
{
    std::mt19937_64 rng(2);
    const auto k = random_spd(30, 0.2, rng);
    CspeCache c(k, 3);
    for (int i = 0; i < 3; ++i) c.push(random_vector(30, rng));
    const auto second = c.basis()[1];
    const auto before = c.spmv_count();
    c.push(random_vector(30, rng));
    EXPECT_EQ(c.size(), 3u);
    EXPECT_EQ(c.spmv_count(), before + 1);
    EXPECT_EQ(c.basis()[0], second);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(dot(c.basis()[i], c.basis()[j]), i == j ? 1.0 : 0.0, 1e-10);
        EXPECT_EQ(c.products()[i], k * c.basis()[i]);
    }
}

TEST(CspeCache, SpmvEconomyOverManyPushes)
{
    std::mt19937_64 rng(3);
    const auto k = random_spd(40, 0.1, rng);
    CspeCache c(k, 5);
    for (int t = 0; t < 60; ++t) c.push(random_vector(40, rng));
    EXPECT_LE(c.spmv_count(), 60u);
}

TEST(CspeStart, OneDimensionalIdentity)
{
    const auto k = SparseMatrix::identity(4);
    CspeCache c(k, 5);
    const Vector r{1.0, -2.0, 0.5, 3.0};
    EXPECT_EQ(c.start(r), Vector(4, 0.0));
    c.push(r);
    EXPECT_LE(mqs::testing::rel_err(c.start(r), r), 1e-15);
}

TEST(CspeStart, OrthogonalRhsGivesZero)
{
    const auto k = SparseMatrix::diagonal(Vector{2.0, 3.0, 4.0});
    CspeCache c(k, 5);
    c.push(Vector{1.0, 0.0, 0.0});
    EXPECT_EQ(c.start(Vector{0.0, 5.0, -1.0}), Vector(3, 0.0));
}

TEST(CspeStart, GalerkinOptimality)
{
    std::mt19937_64 rng(4);
    const auto k = random_spd(25, 0.3, rng);
    CspeCache c(k, 4);
    for (int i = 0; i < 4; ++i) c.push(random_vector(25, rng));
    const auto r = random_vector(25, rng);
    const auto x0 = c.start(r);
    EXPECT_LE(mqs::testing::rel_err(x0, galerkin_oracle(k, c.basis(), r)), 1e-10);
    // No coefficient perturbation inside span(V) lowers the energy functional.
    const double e0 = energy(k, x0, r);
    for (std::size_t i = 0; i < c.size(); ++i)
        for (double step : {-1e-2, -1e-4, 1e-4, 1e-2}) {
            Vector x = x0;
            axpy(step, c.basis()[i], x);
            EXPECT_GE(energy(k, x, r), e0);
        }
}

TEST(CspeStart, LinearInRhs)
{
    std::mt19937_64 rng(5);
    const auto k = random_spd(15, 0.3, rng);
    CspeCache c(k, 3);
    for (int i = 0; i < 3; ++i) c.push(random_vector(15, rng));
    const auto r1 = random_vector(15, rng), r2 = random_vector(15, rng);
    const auto combined = c.start(2.0 * r1 + (-3.0) * r2);
    EXPECT_LE(mqs::testing::rel_err(combined, 2.0 * c.start(r1) + (-3.0) * c.start(r2)), 1e-12);
}

TEST(CspeStart, ExactSolutionInSpanNeedsNoIterations)
{
    std::mt19937_64 rng(6);
    const auto k = random_spd(30, 0.2, rng);
    const auto x = random_vector(30, rng);
    const auto b = k * x;
    CspeCache c(k, 5);
    c.push(random_vector(30, rng));
    c.push(x);
    c.push(random_vector(30, rng));
    EXPECT_EQ(pcg_iterations(k, b, c.start(b)), 0u);
    EXPECT_GT(pcg_iterations(k, b, Vector(30, 0.0)), 0u);
}

TEST(CspeStart, RankDeficientProjectionDropsColumn)
{
    const auto k = SparseMatrix::diagonal(Vector{1.0, 0.0, 1.0});
    CspeCache c(k, 5);
    c.push(Vector{0.0, 1.0, 0.0});
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c.start(Vector{1.0, 0.0, 1.0}), Vector(3, 0.0));
    EXPECT_EQ(c.size(), 0u);
}

TEST(PodCache, ColdStartIsZero)
{
    const auto k = SparseMatrix::identity(3);
    PodCache p(k, 10, 1e4);
    EXPECT_EQ(p.modes(), 0u);
    EXPECT_EQ(p.start(Vector{1.0, 2.0, 3.0}), Vector(3, 0.0));
}

TEST(PodCache, SingleSnapshotOfExactSolution)
{
    std::mt19937_64 rng(7);
    const auto k = random_spd(20, 0.3, rng);
    const auto x = random_vector(20, rng);
    PodCache p(k, 10, 1e4);
    p.push(x);
    ASSERT_EQ(p.modes(), 1u);
    EXPECT_LE(mqs::testing::rel_err(p.start(k * x), x), 1e-12);
}

TEST(PodCache, MatchesDenseReducedSystem)
{
    std::mt19937_64 rng(8);
    const auto k = random_spd(40, 0.15, rng);
    PodCache p(k, 6, 1e4);
    for (int i = 0; i < 8; ++i) p.push(random_vector(40, rng));
    EXPECT_EQ(p.snapshots(), 6u);
    ASSERT_EQ(p.modes(), 6u);
    for (std::size_t i = 0; i < p.modes(); ++i)
        for (std::size_t j = 0; j < p.modes(); ++j) EXPECT_NEAR(dot(p.basis()[i], p.basis()[j]), i == j ? 1.0 : 0.0, 1e-8);
    const auto r = random_vector(40, rng);
    EXPECT_LE(mqs::testing::rel_err(p.start(r), galerkin_oracle(k, p.basis(), r)), 1e-10);
}

TEST(PodCache, TruncatesIllConditionedModes)
{
    std::mt19937_64 rng(9);
    const auto k = random_spd(30, 0.2, rng);
    const auto x = random_vector(30, rng), y = random_vector(30, rng), z = random_vector(30, rng);
    PodCache p(k, 10, 1e4);
    p.push(x);
    p.push(y);
    Vector nearly = x;
    axpy(1e-7, z, nearly);
    p.push(nearly);
    ASSERT_EQ(p.singular_values().size(), 3u);
    EXPECT_EQ(p.modes(), 2u);
    EXPECT_EQ(p.modes(), pod_truncate(p.singular_values(), 1e4));
}

TEST(PodCache, ExactSolutionInBasisNeedsNoIterations)
{
    std::mt19937_64 rng(10);
    const auto k = random_spd(30, 0.2, rng);
    const auto x = random_vector(30, rng);
    PodCache p(k, 10, 1e4);
    p.push(random_vector(30, rng));
    p.push(x);
    const auto b = k * x;
    EXPECT_EQ(pcg_iterations(k, b, p.start(b)), 0u);
}

TEST(PodCache, LinearInRhs)
{
    std::mt19937_64 rng(11);
    const auto k = random_spd(15, 0.3, rng);
    PodCache p(k, 4, 1e4);
    for (int i = 0; i < 4; ++i) p.push(random_vector(15, rng));
    const auto r1 = random_vector(15, rng), r2 = random_vector(15, rng);
    EXPECT_LE(mqs::testing::rel_err(p.start(r1 + r2), p.start(r1) + p.start(r2)), 1e-12);
}
