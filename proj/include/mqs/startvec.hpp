#pragma once

#include <algorithm>
#include <cstddef>
#include <deque>
#include <vector>

#include "mqs/linalg/dense.hpp"
#include "mqs/linalg/sparse_matrix.hpp"
#include "mqs/linalg/vector_ops.hpp"

namespace mqs {

/// Number of leading modes kept: the largest k with sigma_1 / sigma_k <= tol_pod.
inline std::size_t pod_truncate(std::span<const double> sigma, double tol_pod)
{
    if (sigma.empty() || !(sigma[0] > 0.0)) return 0;
    std::size_t k = 0;
    while (k < sigma.size() && sigma[k] > 0.0 && sigma[0] / sigma[k] <= tol_pod) ++k;
    return k;
}

/// Cascaded subspace projection extrapolation.
///
/// Holds an orthonormal basis V of recent solutions together with the cached
/// products K V and the projected matrix V^T K V. A push adds one column and
/// computes exactly one new product with K; all other products are reused.
class CspeCache {
public:
    CspeCache(const SparseMatrix& k, std::size_t window, double drop_tol = 1e-10)
        : k_(&k), window_(std::max<std::size_t>(window, 1)), drop_tol_(drop_tol) {}

    std::size_t size() const noexcept { return v_.size(); }
    std::size_t window() const noexcept { return window_; }
    const std::vector<Vector>& basis() const noexcept { return v_; }
    const std::vector<Vector>& products() const noexcept { return kv_; }
    /// Matrix-vector products with K performed by this cache so far.
    std::size_t spmv_count() const noexcept { return spmv_count_; }

    void push(std::span<const double> x_new)
    {
        const double original = norm2(x_new);
        if (original == 0.0) return;
        Vector w(x_new.begin(), x_new.end());
        orthogonalize(w, 0);
        if (norm2(w) <= drop_tol_ * original) return;  // already in span(V)
        if (v_.size() == window_) {
            evict_oldest();
            w.assign(x_new.begin(), x_new.end());
            orthogonalize(w, 0);
        }
        scale(1.0 / norm2(w), w);
        Vector kw = *k_ * w;
        ++spmv_count_;
        // Extend the projected matrix by one row/column.
        const std::size_t n = v_.size();
        std::vector<double> row(n + 1);
        for (std::size_t i = 0; i < n; ++i) row[i] = 0.5 * (dot(v_[i], kw) + dot(w, kv_[i]));
        row[n] = dot(w, kw);
        for (std::size_t i = 0; i < n; ++i) projected_[i].push_back(row[i]);
        projected_.push_back(std::move(row));
        v_.push_back(std::move(w));
        kv_.push_back(std::move(kw));
    }

    /// x0 = V z with (V^T K V) z = V^T r. Zero if the cache is empty.
    Vector start(std::span<const double> r)
    {
        for (int attempt = 0; attempt < 2 && !v_.empty(); ++attempt) {
            const std::size_t n = v_.size();
            DenseMatrix p(n, n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) p(i, j) = projected_[i][j];
            Vector rhs(n);
            for (std::size_t i = 0; i < n; ++i) rhs[i] = dot(v_[i], r);
            try {
                const Vector z = dense_solve_spd(p, rhs);
                Vector x0(r.size(), 0.0);
                for (std::size_t i = 0; i < n; ++i) axpy(z[i], v_[i], x0);
                return x0;
            } catch (const FactorizationError& ex) {
                drop(ex.pivot());
            }
        }
        return Vector(r.size(), 0.0);
    }

private:
    void orthogonalize(Vector& w, std::size_t first) const
    {
        for (int pass = 0; pass < 2; ++pass)
            for (std::size_t i = first; i < v_.size(); ++i) axpy(-dot(v_[i], w), v_[i], w);
    }

    void evict_oldest() { drop(0); }

    void drop(std::size_t i)
    {
        v_.erase(v_.begin() + static_cast<std::ptrdiff_t>(i));
        kv_.erase(kv_.begin() + static_cast<std::ptrdiff_t>(i));
        projected_.erase(projected_.begin() + static_cast<std::ptrdiff_t>(i));
        for (auto& row : projected_) row.erase(row.begin() + static_cast<std::ptrdiff_t>(i));
    }

    const SparseMatrix* k_;
    std::size_t window_;
    double drop_tol_;
    std::vector<Vector> v_;
    std::vector<Vector> kv_;
    std::vector<std::vector<double>> projected_;
    std::size_t spmv_count_ = 0;
};

/// Proper orthogonal decomposition of a sliding window of solution snapshots.
/// The truncated basis U_r and R = U_r^T K U_r are rebuilt on every push.
class PodCache {
public:
    PodCache(const SparseMatrix& k, std::size_t window, double tol_pod)
        : k_(&k), window_(std::max<std::size_t>(window, 1)), tol_pod_(tol_pod) {}

    std::size_t snapshots() const noexcept { return x_.size(); }
    std::size_t modes() const noexcept { return u_.size(); }
    const std::vector<Vector>& basis() const noexcept { return u_; }
    const Vector& singular_values() const noexcept { return sigma_; }
    double tol_pod() const noexcept { return tol_pod_; }

    void push(std::span<const double> x_new)
    {
        if (norm2(x_new) == 0.0) return;
        if (x_.size() == window_) x_.pop_front();
        x_.emplace_back(x_new.begin(), x_new.end());
        rebuild();
    }

    /// x0 = U_r R^{-1} U_r^T r. Zero while no modes are available.
    Vector start(std::span<const double> r) const
    {
        const std::size_t k = u_.size();
        if (k == 0) return Vector(r.size(), 0.0);
        Vector rhs(k);
        for (std::size_t i = 0; i < k; ++i) rhs[i] = dot(u_[i], r);
        const Vector z = cholesky_solve(chol_, rhs);
        Vector x0(r.size(), 0.0);
        for (std::size_t i = 0; i < k; ++i) axpy(z[i], u_[i], x0);
        return x0;
    }

private:
    void rebuild()
    {
        const auto svd = svd_small(std::vector<Vector>(x_.begin(), x_.end()));
        sigma_ = svd.sigma;
        std::size_t k = pod_truncate(sigma_, tol_pod_);
        std::vector<Vector> ku;
        for (std::size_t i = 0; i < k; ++i) ku.push_back(*k_ * svd.u[i]);
        // Stricter truncation until the reduced matrix is SPD.
        for (; k > 0; --k) {
            DenseMatrix r(k, k);
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j <= i; ++j)
                    r(i, j) = r(j, i) = 0.5 * (dot(svd.u[i], ku[j]) + dot(svd.u[j], ku[i]));
            try {
                chol_ = cholesky(r);
                break;
            } catch (const FactorizationError&) {
            }
        }
        u_.assign(svd.u.begin(), svd.u.begin() + static_cast<std::ptrdiff_t>(k));
    }

    const SparseMatrix* k_;
    std::size_t window_;
    double tol_pod_;
    std::deque<Vector> x_;
    std::vector<Vector> u_;
    Vector sigma_;
    DenseMatrix chol_;
};

} // namespace mqs
