#pragma once

#include <cassert>
#include <cmath>
#include <span>
#include <vector>

namespace mqs {

using Vector = std::vector<double>;

inline double dot(std::span<const double> x, std::span<const double> y)
{
    assert(x.size() == y.size());
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y)
{
    assert(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scale(double alpha, std::span<double> x)
{
    for (double& v : x) v *= alpha;
}

inline Vector operator-(const Vector& a, const Vector& b)
{
    assert(a.size() == b.size());
    Vector r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

inline Vector operator+(const Vector& a, const Vector& b)
{
    assert(a.size() == b.size());
    Vector r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

inline Vector operator*(double alpha, const Vector& a)
{
    Vector r(a);
    scale(alpha, r);
    return r;
}

inline bool all_finite(std::span<const double> x)
{
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace mqs
