#pragma once

// Shared fixtures for the test suite: small problems, random generators and
// dense Eigen oracles.

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "mqs/integrate.hpp"

namespace mqs::testing {

inline Eigen::MatrixXd dense(const SparseMatrix& a)
{
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
    for (const auto& t : a.triplets()) d(static_cast<Eigen::Index>(t.row), static_cast<Eigen::Index>(t.col)) = t.value;
    return d;
}

inline Eigen::VectorXd eig(const Vector& v)
{
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Vector vec(const Eigen::VectorXd& v) { return Vector(v.data(), v.data() + v.size()); }

inline double rel_err(const Vector& a, const Vector& b)
{
    const double ref = norm2(b);
    const double d = norm2(a - b);
    return ref > 0.0 ? d / ref : d;
}

inline Vector random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    Vector v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

/// Sparse SPD matrix: random symmetric pattern made diagonally dominant.
inline SparseMatrix random_spd(std::size_t n, double density, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Triplet> t;
    Vector rowsum(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (u(rng) < density) {
                const double v = u(rng) * 2.0 - 1.0;
                t.push_back({i, j, v});
                t.push_back({j, i, v});
                rowsum[i] += std::abs(v);
                rowsum[j] += std::abs(v);
            }
    for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, rowsum[i] + 0.5 + u(rng)});
    return SparseMatrix::from_triplets(n, n, std::move(t));
}

/// A 4 cm x 3 cm box with one conducting strip, a coil below it and a probe
/// above it. 35 free DoFs on the default 8 x 6 grid.
inline Problem small_problem(bool nonlinear, int nx = 8, int ny = 6, double kappa = 5e6)
{
    const double w = 0.04, h = 0.03;
    Problem p;
    p.mesh = generate_rect_mesh(w, h, nx, ny, [](const Point& c) {
        if (c.y > 0.015 && c.y < 0.02 && c.x > 0.005 && c.x < 0.035) return RegionTag::conductor(0);
        if (c.y > 0.005 && c.y < 0.01 && c.x > 0.015 && c.x < 0.025) return RegionTag::coil(0);
        if (c.y > 0.02 && c.y < 0.025 && c.x > 0.015 && c.x < 0.025) return RegionTag::air().with_probe(0);
        return RegionTag::air();
    });
    MaterialModel steel;
    steel.kappa = kappa;
    if (nonlinear) steel.law = BrauerReluctivity{nu0 / 20.0, 50.0, 2.5};
    else steel.law = LinearReluctivity{nu0 / 20.0};
    p.materials.set(RegionTag::conductor(0), steel);
    p.materials.set(RegionTag::air(), MaterialModel::vacuum());
    p.materials.set(RegionTag::coil(0), MaterialModel::vacuum());
    p.source = {0, 200.0, 10.0, 2e-3};
    p.probe_id = 0;
    p.validate();
    return p;
}

struct DenseBlocks {
    Eigen::MatrixXd m_cc, k_cc, k_cn, k_nn;

    /// K_cn K_nn^{-1} K_cn^T
    Eigen::MatrixXd schur() const { return k_cn * k_nn.inverse() * k_cn.transpose(); }
};

inline DenseBlocks dense_blocks(const SystemBlocks& b)
{
    return {dense(b.m_cc), dense(b.k_cc), dense(b.k_cn), dense(b.k_nn)};
}

/// Largest eigenvalue of (K_cc - K_S) x = lambda M_cc x.
inline double dense_lambda_max(const DenseBlocks& d)
{
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(d.k_cc - d.schur(), d.m_cc);
    return es.eigenvalues().maxCoeff();
}

} // namespace mqs::testing
