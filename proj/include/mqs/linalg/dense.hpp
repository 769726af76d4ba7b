#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mqs/error.hpp"
#include "mqs/linalg/vector_ops.hpp"

namespace mqs {

/// Small row-major dense matrix, sized for projection dimensions (tens).
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static DenseMatrix identity(std::size_t n)
    {
        DenseMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    Vector operator*(std::span<const double> x) const
    {
        Vector y(rows_, 0.0);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < cols_; ++c) y[r] += (*this)(r, c) * x[c];
        return y;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Lower Cholesky factor of a symmetric positive definite matrix.
/// Throws FactorizationError naming the first nonpositive pivot.
inline DenseMatrix cholesky(const DenseMatrix& a)
{
    const std::size_t n = a.rows();
    DenseMatrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 0.0) || !std::isfinite(d))
            throw FactorizationError("dense Cholesky: nonpositive pivot (rank-deficient projection)", j);
        l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

inline Vector cholesky_solve(const DenseMatrix& l, std::span<const double> b)
{
    const std::size_t n = l.rows();
    Vector y(b.begin(), b.end());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) y[i] -= l(i, k) * y[k];
        y[i] /= l(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t k = i + 1; k < n; ++k) y[i] -= l(k, i) * y[k];
        y[i] /= l(i, i);
    }
    return y;
}

inline Vector dense_solve_spd(const DenseMatrix& a, std::span<const double> b)
{
    if (a.rows() != a.cols() || a.rows() != b.size()) throw SolverError("dense_solve_spd: dimension mismatch");
    return cholesky_solve(cholesky(a), b);
}

struct SymmetricEigen {
    Vector values;        // ascending
    DenseMatrix vectors;  // columns
};

/// Cyclic Jacobi eigensolver for small symmetric matrices.
inline SymmetricEigen symmetric_eigen(DenseMatrix a)
{
    const std::size_t n = a.rows();
    DenseMatrix v = DenseMatrix::identity(n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0, total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                total += a(i, j) * a(i, j);
                if (i != j) off += a(i, j) * a(i, j);
            }
        if (off <= 1e-32 * total || off == 0.0) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a(p, q) == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });
    SymmetricEigen out{Vector(n), DenseMatrix(n, n)};
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = a(order[k], order[k]);
        for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
    }
    return out;
}

/// Modified Gram-Schmidt with one reorthogonalization pass. Columns whose
/// residual falls to tol_drop times their original norm or below are dropped.
inline std::vector<Vector> mgs_orthonormalize(const std::vector<Vector>& columns, double tol_drop)
{
    std::vector<Vector> basis;
    for (const auto& col : columns) {
        Vector w = col;
        const double original = norm2(w);
        if (original == 0.0) continue;
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& q : basis) axpy(-dot(q, w), q, w);
        const double residual = norm2(w);
        if (residual <= tol_drop * original) continue;
        scale(1.0 / residual, w);
        basis.push_back(std::move(w));
    }
    return basis;
}

struct ThinSvd {
    std::vector<Vector> u;  // left singular vectors
    Vector sigma;           // nonincreasing
};

/// Left singular vectors and values of a tall matrix given by its columns,
/// via the eigendecomposition of the column Gram matrix.
inline ThinSvd svd_small(const std::vector<Vector>& x)
{
    const std::size_t m = x.size();
    ThinSvd out;
    if (m == 0) return out;
    DenseMatrix gram(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i; j < m; ++j) gram(i, j) = gram(j, i) = dot(x[i], x[j]);
    const auto eig = symmetric_eigen(gram);

    const std::size_t n = x.front().size();
    struct Mode {
        double sigma;
        Vector u;
    };
    std::vector<Mode> modes;
    for (std::size_t k = 0; k < m; ++k) {
        Vector xw(n, 0.0);
        for (std::size_t j = 0; j < m; ++j) axpy(eig.vectors(j, k), x[j], xw);
        // ||X w|| is accurate to eps*sigma_1 in absolute terms, unlike sqrt(lambda).
        modes.push_back({norm2(xw), std::move(xw)});
    }
    std::sort(modes.begin(), modes.end(), [](const Mode& a, const Mode& b) { return a.sigma > b.sigma; });
    const double sigma1 = modes.front().sigma;
    if (sigma1 == 0.0) return out;
    for (auto& mode : modes) {
        if (mode.sigma <= 1e-12 * sigma1) break;
        scale(1.0 / mode.sigma, mode.u);
        out.u.push_back(std::move(mode.u));
        out.sigma.push_back(mode.sigma);
    }
    // Restore orthogonality lost in the low modes (error grows like eps*(sigma_1/sigma_k)^2).
    for (std::size_t k = 0; k < out.u.size(); ++k) {
        for (int pass = 0; pass < 2; ++pass)
            for (std::size_t j = 0; j < k; ++j) axpy(-dot(out.u[j], out.u[k]), out.u[j], out.u[k]);
        scale(1.0 / norm2(out.u[k]), out.u[k]);
    }
    return out;
}

} // namespace mqs
