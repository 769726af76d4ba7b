#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "mqs/error.hpp"
#include "mqs/linalg/vector_ops.hpp"

namespace mqs {

struct Triplet {
    std::size_t row;
    std::size_t col;
    double value;
};

/// Compressed-row real matrix. Column indices are strictly increasing per row
/// and no explicit zeros are stored.
class SparseMatrix {
public:
    SparseMatrix() = default;

    SparseMatrix(std::size_t nrows, std::size_t ncols)
        : nrows_(nrows), ncols_(ncols), row_offsets_(nrows + 1, 0) {}

    /// Duplicate entries are summed; entries that sum to exactly zero are dropped.
    static SparseMatrix from_triplets(std::size_t nrows, std::size_t ncols, std::vector<Triplet> triplets)
    {
        for (const auto& t : triplets)
            if (t.row >= nrows || t.col >= ncols)
                throw SolverError("triplet index out of range");
        std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
            return std::tie(a.row, a.col) < std::tie(b.row, b.col);
        });
        SparseMatrix m(nrows, ncols);
        std::size_t i = 0;
        while (i < triplets.size()) {
            std::size_t j = i;
            double sum = 0.0;
            while (j < triplets.size() && triplets[j].row == triplets[i].row && triplets[j].col == triplets[i].col)
                sum += triplets[j++].value;
            if (sum != 0.0) {
                m.col_indices_.push_back(triplets[i].col);
                m.values_.push_back(sum);
                ++m.row_offsets_[triplets[i].row + 1];
            }
            i = j;
        }
        for (std::size_t r = 0; r < nrows; ++r) m.row_offsets_[r + 1] += m.row_offsets_[r];
        return m;
    }

    static SparseMatrix identity(std::size_t n)
    {
        std::vector<Triplet> t;
        t.reserve(n);
        for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, 1.0});
        return from_triplets(n, n, std::move(t));
    }

    static SparseMatrix diagonal(std::span<const double> d)
    {
        std::vector<Triplet> t;
        for (std::size_t i = 0; i < d.size(); ++i) t.push_back({i, i, d[i]});
        return from_triplets(d.size(), d.size(), std::move(t));
    }

    std::size_t rows() const noexcept { return nrows_; }
    std::size_t cols() const noexcept { return ncols_; }
    std::size_t nonzeros() const noexcept { return values_.size(); }

    const std::vector<std::size_t>& row_offsets() const noexcept { return row_offsets_; }
    const std::vector<std::size_t>& col_indices() const noexcept { return col_indices_; }
    const std::vector<double>& values() const noexcept { return values_; }

    /// y = A x
    void multiply(std::span<const double> x, std::span<double> y) const
    {
        if (x.size() != ncols_ || y.size() != nrows_) throw SolverError("spmv: dimension mismatch");
        for (std::size_t r = 0; r < nrows_; ++r) {
            double s = 0.0;
            for (std::size_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) s += values_[k] * x[col_indices_[k]];
            y[r] = s;
        }
    }

    Vector operator*(std::span<const double> x) const
    {
        Vector y(nrows_);
        multiply(x, y);
        return y;
    }

    /// y = A^T x
    void multiply_transpose(std::span<const double> x, std::span<double> y) const
    {
        if (x.size() != nrows_ || y.size() != ncols_) throw SolverError("spmv^T: dimension mismatch");
        std::fill(y.begin(), y.end(), 0.0);
        for (std::size_t r = 0; r < nrows_; ++r)
            for (std::size_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) y[col_indices_[k]] += values_[k] * x[r];
    }

    Vector transpose_times(std::span<const double> x) const
    {
        Vector y(ncols_);
        multiply_transpose(x, y);
        return y;
    }

    double at(std::size_t r, std::size_t c) const
    {
        auto first = col_indices_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[r]);
        auto last = col_indices_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[r + 1]);
        auto it = std::lower_bound(first, last, c);
        if (it == last || *it != c) return 0.0;
        return values_[static_cast<std::size_t>(it - col_indices_.begin())];
    }

    Vector diagonal_entries() const
    {
        Vector d(std::min(nrows_, ncols_), 0.0);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = at(i, i);
        return d;
    }

    Vector row_sums() const
    {
        Vector s(nrows_, 0.0);
        for (std::size_t r = 0; r < nrows_; ++r)
            for (std::size_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) s[r] += values_[k];
        return s;
    }

    SparseMatrix transposed() const
    {
        std::vector<Triplet> t;
        t.reserve(nonzeros());
        for (std::size_t r = 0; r < nrows_; ++r)
            for (std::size_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k)
                t.push_back({col_indices_[k], r, values_[k]});
        return from_triplets(ncols_, nrows_, std::move(t));
    }

    std::vector<Triplet> triplets() const
    {
        std::vector<Triplet> t;
        t.reserve(nonzeros());
        for (std::size_t r = 0; r < nrows_; ++r)
            for (std::size_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k)
                t.push_back({r, col_indices_[k], values_[k]});
        return t;
    }

    /// alpha * A + beta * B (pattern union).
    friend SparseMatrix linear_combination(double alpha, const SparseMatrix& a, double beta, const SparseMatrix& b)
    {
        if (a.rows() != b.rows() || a.cols() != b.cols()) throw SolverError("matrix sum: dimension mismatch");
        auto t = a.triplets();
        for (auto& e : t) e.value *= alpha;
        for (auto e : b.triplets()) {
            e.value *= beta;
            t.push_back(e);
        }
        return from_triplets(a.rows(), a.cols(), std::move(t));
    }

    bool operator==(const SparseMatrix&) const = default;

private:
    std::size_t nrows_ = 0;
    std::size_t ncols_ = 0;
    std::vector<std::size_t> row_offsets_{0};
    std::vector<std::size_t> col_indices_;
    std::vector<double> values_;
};

/// Coordinate exchange format, 1-based, general real.
inline void write_matrix_market(const SparseMatrix& a, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << a.rows() << ' ' << a.cols() << ' ' << a.nonzeros() << '\n';
    out << std::setprecision(17);
    for (const auto& t : a.triplets()) out << t.row + 1 << ' ' << t.col + 1 << ' ' << t.value << '\n';
}

} // namespace mqs
