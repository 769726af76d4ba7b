#pragma once

#include <cmath>
#include <numbers>
#include <variant>

#include "mqs/error.hpp"

namespace mqs {

inline constexpr double mu0 = 4.0e-7 * std::numbers::pi;
inline constexpr double nu0 = 1.0 / mu0;

struct LinearReluctivity {
    double nu = nu0;  // m/H
};

/// Brauer law nu(B^2) = k1 + k2 exp(k3 B^2).
struct BrauerReluctivity {
    double k1 = 0.0;  // m/H
    double k2 = 0.0;  // m/H
    double k3 = 0.0;  // 1/T^2
};

using ReluctivityLaw = std::variant<LinearReluctivity, BrauerReluctivity>;

struct MaterialModel {
    double kappa = 0.0;  // S/m
    ReluctivityLaw law = LinearReluctivity{};

    static MaterialModel vacuum() { return {}; }

    bool is_nonlinear() const { return std::holds_alternative<BrauerReluctivity>(law); }

    void validate() const
    {
        if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw ConfigError("material: conductivity must be >= 0");
        if (const auto* lin = std::get_if<LinearReluctivity>(&law)) {
            if (!(lin->nu > 0.0)) throw ConfigError("material: linear reluctivity must be > 0");
        } else {
            const auto& b = std::get<BrauerReluctivity>(law);
            if (!(b.k1 > 0.0) || !(b.k2 >= 0.0) || !(b.k3 >= 0.0))
                throw ConfigError("material: Brauer parameters need k1 > 0, k2 >= 0, k3 >= 0");
        }
    }
};

inline double nu(const MaterialModel& model, double b2)
{
    if (!(b2 >= 0.0)) throw SolverError("nu: negative B^2");
    if (const auto* lin = std::get_if<LinearReluctivity>(&model.law)) return lin->nu;
    const auto& b = std::get<BrauerReluctivity>(model.law);
    return b.k1 + b.k2 * std::exp(b.k3 * b2);
}

inline double dnu_db2(const MaterialModel& model, double b2)
{
    if (!(b2 >= 0.0)) throw SolverError("dnu_db2: negative B^2");
    if (std::holds_alternative<LinearReluctivity>(model.law)) return 0.0;
    const auto& b = std::get<BrauerReluctivity>(model.law);
    return b.k2 * b.k3 * std::exp(b.k3 * b2);
}

} // namespace mqs
