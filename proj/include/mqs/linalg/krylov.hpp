#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>

#include "mqs/error.hpp"
#include "mqs/linalg/sparse_matrix.hpp"
#include "mqs/linalg/vector_ops.hpp"

namespace mqs {

/// Matrix-free linear map x -> y of a declared square dimension.
class LinearOperator {
public:
    using ApplyFn = std::function<void(std::span<const double>, std::span<double>)>;

    LinearOperator() = default;
    LinearOperator(std::size_t dim, ApplyFn apply) : dim_(dim), apply_(std::move(apply)) {}

    static LinearOperator from_matrix(const SparseMatrix& a)
    {
        return {a.rows(), [&a](std::span<const double> x, std::span<double> y) { a.multiply(x, y); }};
    }

    static LinearOperator identity(std::size_t n)
    {
        return {n, [](std::span<const double> x, std::span<double> y) { std::copy(x.begin(), x.end(), y.begin()); }};
    }

    std::size_t dim() const noexcept { return dim_; }

    void apply(std::span<const double> x, std::span<double> y) const { apply_(x, y); }

    Vector operator()(std::span<const double> x) const
    {
        Vector y(dim_);
        apply_(x, y);
        return y;
    }

private:
    std::size_t dim_ = 0;
    ApplyFn apply_;
};

struct PcgReport {
    Vector solution;
    std::size_t iterations = 0;
    bool converged = false;
    double final_relative_residual = 0.0;
};

/// Preconditioned conjugate gradients for symmetric positive (semi)definite
/// operators. Convergence is ||b - A x|| <= tol ||b||. For b = 0 the
/// reference scale is ||x0||.
inline PcgReport pcg(const LinearOperator& op, std::span<const double> b, std::span<const double> x0,
                     const LinearOperator& precond, double tol, std::size_t max_iter)
{
    const std::size_t n = op.dim();
    if (b.size() != n || x0.size() != n) throw SolverError("pcg: dimension mismatch");
    PcgReport rep;
    rep.solution.assign(x0.begin(), x0.end());
    Vector& x = rep.solution;

    Vector r(n);
    op.apply(x, r);
    for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - r[i];

    double ref = norm2(b);
    if (ref == 0.0) ref = norm2(x0);
    double rnorm = norm2(r);
    if (!std::isfinite(ref) || !std::isfinite(rnorm)) throw SolverError("pcg: non-finite right-hand side or start");
    if (ref == 0.0) {
        rep.converged = true;
        return rep;
    }
    rep.final_relative_residual = rnorm / ref;
    if (rnorm <= tol * ref) {
        rep.converged = true;
        return rep;
    }

    Vector z(n), p(n), q(n);
    precond.apply(r, z);
    p = z;
    double rz = dot(r, z);
    while (rep.iterations < max_iter) {
        op.apply(p, q);
        const double pq = dot(p, q);
        if (!std::isfinite(pq) || !std::isfinite(rz) || pq <= 0.0)
            throw SolverError("pcg: breakdown (indefinite or inconsistent system), p'Ap = " + std::to_string(pq));
        const double alpha = rz / pq;
        axpy(alpha, p, x);
        axpy(-alpha, q, r);
        ++rep.iterations;
        rnorm = norm2(r);
        rep.final_relative_residual = rnorm / ref;
        if (!std::isfinite(rnorm)) throw SolverError("pcg: non-finite residual");
        if (rnorm <= tol * ref) {
            rep.converged = true;
            return rep;
        }
        precond.apply(r, z);
        const double rz_new = dot(r, z);
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    return rep;
}

/// Elementwise division by diag(A); rows with zero diagonal pass through.
inline LinearOperator jacobi_preconditioner(const SparseMatrix& a)
{
    Vector inv = a.diagonal_entries();
    for (std::size_t i = 0; i < inv.size(); ++i) {
        if (inv[i] < 0.0) throw SolverError("jacobi: negative diagonal entry in row " + std::to_string(i));
        inv[i] = inv[i] > 0.0 ? 1.0 / inv[i] : 1.0;
    }
    return {inv.size(), [inv = std::move(inv)](std::span<const double> x, std::span<double> y) {
                for (std::size_t i = 0; i < x.size(); ++i) y[i] = inv[i] * x[i];
            }};
}

/// Zero-fill incomplete Cholesky factor on the lower pattern of A.
class IncompleteCholesky {
public:
    explicit IncompleteCholesky(const SparseMatrix& a)
    {
        const std::size_t n = a.rows();
        if (a.cols() != n) throw SolverError("ic0: matrix not square");
        std::vector<Triplet> lower;
        for (const auto& t : a.triplets())
            if (t.col <= t.row) lower.push_back(t);
        l_ = SparseMatrix::from_triplets(n, n, std::move(lower));
        // Factor in place on a mutable copy of the values.
        const auto& off = l_.row_offsets();
        const auto& col = l_.col_indices();
        values_ = l_.values();
        diag_.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t begin = off[i], end = off[i + 1];
            if (begin == end || col[end - 1] != i)
                throw FactorizationError("ic0: missing diagonal in row " + std::to_string(i), i);
            for (std::size_t kk = begin; kk + 1 < end; ++kk) {
                const std::size_t k = col[kk];
                // L_ik = (A_ik - sum_{j<k} L_ij L_kj) / L_kk over the shared pattern.
                double s = values_[kk];
                std::size_t pi = begin, pk = off[k];
                const std::size_t ek = off[k + 1] - 1;  // exclude diagonal of row k
                while (pi < kk && pk < ek) {
                    if (col[pi] == col[pk]) s -= values_[pi++] * values_[pk++];
                    else if (col[pi] < col[pk]) ++pi;
                    else ++pk;
                }
                values_[kk] = s / diag_[k];
            }
            double d = values_[end - 1];
            for (std::size_t kk = begin; kk + 1 < end; ++kk) d -= values_[kk] * values_[kk];
            if (!(d > 0.0) || !std::isfinite(d)) throw FactorizationError("ic0: nonpositive pivot", i);
            diag_[i] = std::sqrt(d);
            values_[end - 1] = diag_[i];
        }
    }

    /// Solves L L^T y = x.
    void solve(std::span<const double> x, std::span<double> y) const
    {
        const auto& off = l_.row_offsets();
        const auto& col = l_.col_indices();
        const std::size_t n = diag_.size();
        std::copy(x.begin(), x.end(), y.begin());
        for (std::size_t i = 0; i < n; ++i) {
            double s = y[i];
            for (std::size_t kk = off[i]; kk + 1 < off[i + 1]; ++kk) s -= values_[kk] * y[col[kk]];
            y[i] = s / diag_[i];
        }
        for (std::size_t i = n; i-- > 0;) {
            y[i] /= diag_[i];
            for (std::size_t kk = off[i]; kk + 1 < off[i + 1]; ++kk) y[col[kk]] -= values_[kk] * y[i];
        }
    }

    /// The factor as a sparse matrix (lower triangle including the diagonal).
    SparseMatrix factor() const
    {
        auto t = l_.triplets();
        for (std::size_t k = 0; k < t.size(); ++k) t[k].value = values_[k];
        return SparseMatrix::from_triplets(l_.rows(), l_.cols(), std::move(t));
    }

private:
    SparseMatrix l_;
    std::vector<double> values_;
    std::vector<double> diag_;
};

inline LinearOperator ic0_preconditioner(const SparseMatrix& a)
{
    auto factor = std::make_shared<const IncompleteCholesky>(a);
    return {a.rows(), [factor](std::span<const double> x, std::span<double> y) { factor->solve(x, y); }};
}

enum class PreconditionerKind { Ic0, Jacobi };

/// IC(0) with Jacobi fallback on breakdown. `used` reports the kind built.
inline LinearOperator make_preconditioner(const SparseMatrix& a, PreconditionerKind kind,
                                          PreconditionerKind* used = nullptr)
{
    if (kind == PreconditionerKind::Ic0 && a.rows() > 0) {
        try {
            auto op = ic0_preconditioner(a);
            if (used) *used = PreconditionerKind::Ic0;
            return op;
        } catch (const FactorizationError&) {
        }
    }
    if (used) *used = PreconditionerKind::Jacobi;
    return jacobi_preconditioner(a);
}

struct PowerIterationResult {
    double lambda = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    Vector eigenvector;
};

/// Dominant eigenvalue by power iteration with a Rayleigh-quotient estimate.
/// If `weight` is given, the quotient uses the inner product <x, W y>, which
/// makes it symmetric for operators of the form W^{-1} K with K symmetric.
/// `start` (optional) warm-starts the iteration; otherwise a seeded random vector.
inline PowerIterationResult power_iteration(const LinearOperator& op, double tol, std::size_t max_iter,
                                            std::uint64_t seed, const LinearOperator* weight = nullptr,
                                            std::span<const double> start = {})
{
    const std::size_t n = op.dim();
    PowerIterationResult res;
    if (n == 0) {
        res.converged = true;
        return res;
    }
    std::mt19937_64 rng(seed);
    auto random_vector = [&] {
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        Vector v(n);
        for (double& e : v) e = dist(rng);
        return v;
    };
    Vector x = start.size() == n ? Vector(start.begin(), start.end()) : random_vector();
    auto inner = [&](const Vector& a, const Vector& b) {
        if (!weight) return dot(a, b);
        return dot(a, (*weight)(b));
    };

    Vector y(n);
    bool reseeded = false;
    double previous = 0.0;
    double previous_change = 0.0;
    for (std::size_t it = 0; it < max_iter; ++it) {
        double nx = std::sqrt(std::abs(inner(x, x)));
        if (nx == 0.0 || !std::isfinite(nx)) {
            if (reseeded) throw SolverError("power iteration: zero vector encountered twice");
            reseeded = true;
            x = random_vector();
            continue;
        }
        scale(1.0 / nx, x);
        op.apply(x, y);
        const double lambda = inner(x, y);
        res.iterations = it + 1;
        res.lambda = lambda;
        Vector defect = y;
        axpy(-lambda, x, defect);
        const bool eigenpair = norm2(defect) <= tol * norm2(y);
        // The successive change underestimates the error when the spectral gap
        // is small; scale it by the observed contraction rho / (1 - rho).
        const double change = std::abs(lambda - previous);
        bool settled = false;
        if (it > 0 && change <= tol * std::abs(lambda)) {
            const double rho = it > 1 && previous_change > 0.0 ? std::min(change / previous_change, 0.999) : 0.0;
            settled = change * std::max(1.0, rho / (1.0 - rho)) <= tol * std::abs(lambda);
        }
        previous_change = change;
        if (eigenpair || settled) {
            res.converged = true;
            res.eigenvector = y;
            return res;
        }
        previous = lambda;
        std::swap(x, y);
    }
    res.eigenvector = x;
    return res;
}

} // namespace mqs
