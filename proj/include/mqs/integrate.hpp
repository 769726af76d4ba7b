#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mqs/assembly.hpp"
#include "mqs/error.hpp"
#include "mqs/linalg/krylov.hpp"
#include "mqs/schur.hpp"

namespace mqs {

/// Everything the time integrators need to know about the physical problem.
struct Problem {
    Mesh2D mesh;
    MaterialTable materials;
    SourceSpec source;
    int probe_id = 0;

    void validate() const
    {
        mesh.validate();
        materials.validate_for(mesh);
        if (!(source.tau > 0.0)) throw ConfigError("source: tau must be > 0");
        bool has_probe = false;
        for (const auto& r : mesh.regions) has_probe = has_probe || r.probe == probe_id;
        if (!has_probe) throw ConfigError("probe region " + std::to_string(probe_id) + " has no elements");
        check_source_support(mesh, source, partition(mesh));
    }
};

enum class MccMode { Pcg, Lumped };

/// Applies M_cc^{-1}: Jacobi-preconditioned CG to a tight tolerance, or the
/// row-sum lumped diagonal.
class MccSolver {
public:
    MccSolver(const SparseMatrix& m_cc, MccMode mode, double tol = 1e-10, std::size_t max_iter = 10000)
        : m_(&m_cc), mode_(mode), tol_(tol), max_iter_(max_iter)
    {
        if (mode == MccMode::Lumped) {
            lumped_ = m_cc.row_sums();
            for (double d : lumped_)
                if (!(d > 0.0)) throw SolverError("lumped mass has a nonpositive entry");
        } else {
            precond_ = jacobi_preconditioner(m_cc);
        }
    }

    MccMode mode() const noexcept { return mode_; }
    std::size_t iterations() const noexcept { return iterations_; }

    Vector solve(std::span<const double> b)
    {
        if (mode_ == MccMode::Lumped) {
            Vector x(b.size());
            for (std::size_t i = 0; i < b.size(); ++i) x[i] = b[i] / lumped_[i];
            return x;
        }
        const Vector x0(b.size(), 0.0);
        auto rep = pcg(LinearOperator::from_matrix(*m_), b, x0, precond_, tol_, max_iter_);
        if (!rep.converged) throw SolverError("M_cc solve did not converge");
        iterations_ += rep.iterations;
        return std::move(rep.solution);
    }

    /// The mass inner product matching this solver (consistent or lumped).
    LinearOperator weight() const
    {
        if (mode_ == MccMode::Lumped)
            return {lumped_.size(), [this](std::span<const double> x, std::span<double> y) {
                        for (std::size_t i = 0; i < x.size(); ++i) y[i] = lumped_[i] * x[i];
                    }};
        return LinearOperator::from_matrix(*m_);
    }

private:
    const SparseMatrix* m_;
    MccMode mode_;
    double tol_;
    std::size_t max_iter_;
    LinearOperator precond_;
    Vector lumped_;
    std::size_t iterations_ = 0;
};

struct ExplicitOptions {
    SchurOptions schur;
    double tol_update = 1e-3;
    double safety = 0.95;
    MccMode mcc_mode = MccMode::Pcg;
    double mcc_tol = 1e-10;
    double power_tol = 1e-6;
    std::size_t power_max_iter = 5000;
    /// Tolerance of the K_nn solves inside the spectral estimate.
    double spectral_tol = 1e-10;
    std::uint64_t seed = 1;
    /// Step bound replacing the CFL estimate. Disables mid-run re-estimation.
    std::optional<double> dt_fixed;
    std::size_t output_every = 1;
    /// Abort when ||a_c|| exceeds this bound. Well below the range where squared norms overflow.
    double blowup_norm = 1e100;
};

struct SolverState {
    double t = 0.0;
    Vector a_c;
    Vector a_n;
    Vector a_c_last_update;
    SparseMatrix k_cc_current;
    std::size_t update_count = 0;
    double dt = 0.0;
    double lambda_max = 0.0;
    bool lambda_current = false;
    Vector dominant_mode;  // warm start for re-estimation
};

/// Explicit Euler on M_cc a_c' + (K_cc(a_c) - K_S) a_c = -K_cn K_nn^+ j_sn,
/// with a_n recovered from the algebraic row after each step.
class ExplicitSolver {
public:
    ExplicitSolver(const Problem& problem, ExplicitOptions options)
        : problem_(&problem),
          options_(options),
          partition_(partition(problem.mesh)),
          blocks_(make_blocks(problem, partition_)),
          schur_(blocks_.k_cn, blocks_.k_nn, options.schur),
          mcc_(blocks_.m_cc, options.mcc_mode, options.mcc_tol)
    {
        check_source_support(problem.mesh, problem.source, partition_);
        state_.a_c.assign(partition_.n_c, 0.0);
        state_.a_n.assign(partition_.n_n, 0.0);
        state_.a_c_last_update = state_.a_c;
        state_.k_cc_current = blocks_.k_cc;
        state_.update_count = 1;  // assembly at t = 0
    }

    ExplicitSolver(const ExplicitSolver&) = delete;
    ExplicitSolver& operator=(const ExplicitSolver&) = delete;

    const SolverState& state() const noexcept { return state_; }
    SolverState& state() noexcept { return state_; }
    const DofPartition& dofs() const noexcept { return partition_; }
    const SystemBlocks& blocks() const noexcept { return blocks_; }
    SchurContext& schur() noexcept { return schur_; }
    MccSolver& mcc() noexcept { return mcc_; }
    const ExplicitOptions& options() const noexcept { return options_; }

    /// x -> M_cc^{-1} (K_cc - K_S) x at the current K_cc.
    LinearOperator ode_operator()
    {
        return {partition_.n_c, [this](std::span<const double> x, std::span<double> y) {
                    Vector r = state_.k_cc_current * x;
                    axpy(-1.0, schur_.apply_ks(x, SolvePurpose::Spectral, options_.spectral_tol), r);
                    const Vector z = mcc_.solve(r);
                    std::copy(z.begin(), z.end(), y.begin());
                }};
    }

    /// safety * 2 / lambda_max of the ODE operator; stores lambda_max in the state.
    double estimate_cfl()
    {
        const auto op = ode_operator();
        const auto weight = mcc_.weight();
        const auto res = power_iteration(op, options_.power_tol, options_.power_max_iter, options_.seed, &weight,
                                         state_.dominant_mode);
        if (!(res.lambda > 0.0) || !std::isfinite(res.lambda))
            throw SolverError("CFL estimate failed: lambda_max = " + std::to_string(res.lambda));
        state_.lambda_max = res.lambda;
        state_.lambda_current = true;
        power_converged_ = res.converged;
        state_.dominant_mode = res.eigenvector;
        return options_.safety * 2.0 / res.lambda;
    }

    bool power_converged() const noexcept { return power_converged_; }

    /// One explicit Euler step to t + dt with the source evaluated at t + dt.
    void step(std::span<const double> j_sn_next)
    {
        auto& s = state_;
        Vector bracket = schur_.schur_rhs(j_sn_next);
        axpy(-1.0, s.k_cc_current * s.a_c, bracket);
        axpy(1.0, schur_.apply_ks(s.a_c), bracket);
        const Vector incr = mcc_.solve(bracket);
        axpy(s.dt, incr, s.a_c);
        const double norm = norm2(s.a_c);
        if (!std::isfinite(norm) || norm > options_.blowup_norm) {
            std::ostringstream msg;
            msg << "instability: ||a_c|| = " << norm << " at t = " << s.t + s.dt << " with dt = " << s.dt;
            throw InstabilityError(msg.str());
        }
        s.a_n = schur_.recover_an(s.a_c, j_sn_next);
        s.t += s.dt;
    }

    /// Selective update: rebuild K_cc when ||a_c - a_c^l|| / ||a_c^l|| > tol.
    /// tol = 0 rebuilds unconditionally.
    bool maybe_update_kcc(double tol_update)
    {
        auto& s = state_;
        bool update = tol_update == 0.0;
        if (!update) {
            const double ref = norm2(s.a_c_last_update);
            const double change = norm2(s.a_c - s.a_c_last_update);
            update = ref == 0.0 ? norm2(s.a_c) > 0.0 : change / ref > tol_update;
        }
        if (!update) return false;
        s.k_cc_current = assemble_kcc(problem_->mesh, problem_->materials, partition_, s.a_c);
        s.a_c_last_update = s.a_c;
        ++s.update_count;
        s.lambda_current = false;
        return true;
    }

    /// Source restricted to the nonconducting DoFs at time t.
    Vector source(double t) const { return assemble_source(problem_->mesh, problem_->source, t, partition_); }

    /// ||K_cn^T a_c + K_nn a_n - j_sn|| / ||j_sn||.
    double constraint_residual(std::span<const double> j_sn) const
    {
        Vector r = blocks_.k_cn.transpose_times(state_.a_c);
        axpy(1.0, blocks_.k_nn * state_.a_n, r);
        axpy(-1.0, j_sn, r);
        const double ref = norm2(j_sn);
        return ref > 0.0 ? norm2(r) / ref : norm2(r);
    }

    std::vector<double> nodal_potential() const { return to_nodal(partition_, state_.a_c, state_.a_n); }

    double probe() const
    {
        const auto b2 = compute_b2(problem_->mesh, nodal_potential());
        return probe_average_b(problem_->mesh, b2, problem_->probe_id);
    }

private:
    static SystemBlocks make_blocks(const Problem& problem, const DofPartition& p)
    {
        auto sys = assemble(problem.mesh, problem.materials, std::nullopt);
        return extract_blocks(sys.mass, sys.stiffness, p, std::move(sys.element_b2));
    }

    const Problem* problem_;
    ExplicitOptions options_;
    DofPartition partition_;
    SystemBlocks blocks_;
    SchurContext schur_;
    MccSolver mcc_;
    SolverState state_;
    bool power_converged_ = false;
};

struct SeriesRow {
    double t = 0.0;
    double probe = 0.0;
    double dt = 0.0;
    std::size_t cumulative_pcg_iterations = 0;
    std::size_t update_count = 0;
};

struct RunResult {
    std::string method;
    std::vector<SeriesRow> series;
    IterationStats stats;
    std::size_t update_count = 0;
    std::size_t step_count = 0;
    double wall_seconds = 0.0;
    double lambda_max = 0.0;
    double dt_initial = 0.0;
    double dt_final = 0.0;
    double max_constraint_residual = 0.0;
    std::size_t mcc_iterations = 0;
    std::size_t newton_iterations = 0;
    std::size_t linear_iterations = 0;
};

namespace detail {

/// Smallest N with t_span / N <= dt_max.
inline std::size_t step_count_for(double t_span, double dt_max)
{
    const double ratio = t_span / dt_max;
    if (!std::isfinite(ratio) || ratio > 1e12) {
        std::ostringstream msg;
        msg << "instability: step bound collapsed to " << dt_max << " (" << ratio << " steps for the remaining span)";
        throw InstabilityError(msg.str());
    }
    auto n = static_cast<std::size_t>(std::ceil(ratio * (1.0 - 1e-12)));
    return std::max<std::size_t>(n, 1);
}

} // namespace detail

/// Explicit run from t = 0 to t_end. The step is the CFL bound (or dt_fixed)
/// rounded down so that t_end is hit exactly. After a K_cc update the bound is
/// re-estimated and the step may shrink, never grow.
/// `on_step` (optional) observes the solver after every accepted step.
template <typename StepObserver>
RunResult run_explicit(const Problem& problem, const ExplicitOptions& options, double t_end, StepObserver&& on_step)
{
    const auto start = std::chrono::steady_clock::now();
    ExplicitSolver solver(problem, options);
    RunResult out;
    out.method = "explicit";

    double dt_bound = 0.0;
    if (options.dt_fixed) {
        dt_bound = *options.dt_fixed;
    } else {
        dt_bound = solver.estimate_cfl();
        out.lambda_max = solver.state().lambda_max;
    }
    if (!(dt_bound > 0.0)) throw ConfigError("time step must be positive");
    std::size_t total = detail::step_count_for(t_end, dt_bound);
    auto& s = solver.state();
    s.dt = t_end / static_cast<double>(total);
    out.dt_initial = s.dt;

    for (std::size_t m = 1; m <= total; ++m) {
        solver.schur().set_step(m);
        const Vector j = solver.source(s.t + s.dt);
        solver.step(j);
        if (m == total) s.t = t_end;
        out.max_constraint_residual = std::max(out.max_constraint_residual, solver.constraint_residual(j));
        on_step(solver, m);
        if (m % options.output_every == 0 || m == total)
            out.series.push_back({s.t, solver.probe(), s.dt, solver.schur().stats().stepping_iterations(),
                                  s.update_count});
        if (m == total) break;
        if (solver.maybe_update_kcc(options.tol_update) && !options.dt_fixed) {
            const double bound = solver.estimate_cfl();
            out.lambda_max = s.lambda_max;
            if (bound < s.dt) {
                const double remaining = t_end - s.t;
                const auto rest = detail::step_count_for(remaining, bound);
                s.dt = remaining / static_cast<double>(rest);
                total = m + rest;
            }
        }
    }
    out.stats = solver.schur().stats();
    out.update_count = s.update_count;
    out.step_count = total;
    out.dt_final = s.dt;
    out.mcc_iterations = solver.mcc().iterations();
    out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

inline RunResult run_explicit(const Problem& problem, const ExplicitOptions& options, double t_end)
{
    return run_explicit(problem, options, t_end, [](ExplicitSolver&, std::size_t) {});
}

struct NewtonReport {
    Vector a;
    std::size_t iterations = 0;
    std::size_t linear_iterations = 0;
    double relative_residual = 0.0;
};

struct NewtonOptions {
    double newton_tol = 1e-8;
    std::size_t max_newton = 30;
    /// Linear solve tolerance relative to ||F||.
    double linear_tol = 1e-11;
    std::size_t linear_max_iter = 20000;
    PreconditionerKind preconditioner = PreconditionerKind::Ic0;
};

/// Implicit Euler residual F(a) = (M/dt + K(a)) a - M/dt a_old - j over free DoFs.
inline Vector implicit_residual(const Problem& problem, const DofPartition& p, const SparseMatrix& mass, double dt,
                                std::span<const double> a_old, std::span<const double> j, std::span<const double> a)
{
    const auto tangent = assemble_tangent(problem.mesh, problem.materials, p, a);
    Vector f = tangent.stiffness * a;
    axpy(1.0 / dt, mass * a, f);
    axpy(-1.0 / dt, mass * a_old, f);
    axpy(-1.0, j, f);
    return f;
}

/// Newton-Raphson on the implicit Euler residual. Converged when
/// ||F(a_k)|| <= newton_tol * max(||F(a_old)||, ||M/dt a_old + j||).
inline NewtonReport newton_solve(const Problem& problem, const DofPartition& p, const SparseMatrix& mass, double dt,
                                 std::span<const double> a_old, std::span<const double> j,
                                 const NewtonOptions& options = {})
{
    NewtonReport rep;
    rep.a.assign(a_old.begin(), a_old.end());
    Vector rhs = mass * a_old;
    scale(1.0 / dt, rhs);
    axpy(1.0, j, rhs);
    double ref = 0.0;
    for (std::size_t k = 0;; ++k) {
        const auto tangent = assemble_tangent(problem.mesh, problem.materials, p, rep.a);
        Vector f = tangent.stiffness * rep.a;
        axpy(1.0 / dt, mass * rep.a, f);
        axpy(-1.0, rhs, f);
        const double fnorm = norm2(f);
        if (!std::isfinite(fnorm)) throw SolverError("Newton diverged (non-finite residual); try a smaller dt");
        if (k == 0) ref = std::max(fnorm, norm2(rhs));
        rep.relative_residual = ref > 0.0 ? fnorm / ref : 0.0;
        if (fnorm <= options.newton_tol * ref) return rep;
        if (k == options.max_newton)
            throw SolverError("Newton did not converge in " + std::to_string(k) +
                              " iterations (relative residual " + std::to_string(rep.relative_residual) +
                              "); try a smaller dt");
        const SparseMatrix jac = linear_combination(1.0 / dt, mass, 1.0, tangent.jacobian);
        const auto precond = make_preconditioner(jac, options.preconditioner);
        scale(-1.0, f);
        const Vector zero(f.size(), 0.0);
        const auto lin = pcg(LinearOperator::from_matrix(jac), f, zero, precond, options.linear_tol,
                             options.linear_max_iter);
        if (!lin.converged) throw SolverError("Newton linear solve did not converge");
        rep.linear_iterations += lin.iterations;
        axpy(1.0, lin.solution, rep.a);
        ++rep.iterations;
    }
}

struct ImplicitOptions {
    double dt = 0.0;
    NewtonOptions newton;
    std::size_t output_every = 1;
};

/// Implicit Euler on the full DAE with a Newton solve per step.
inline RunResult run_implicit(const Problem& problem, const ImplicitOptions& options, double t_end,
                              std::span<const double> a_initial = {})
{
    if (!(options.dt > 0.0)) throw ConfigError("implicit dt must be positive");
    const auto start = std::chrono::steady_clock::now();
    const auto p = partition(problem.mesh);
    const auto sys = assemble(problem.mesh, problem.materials, std::nullopt);
    RunResult out;
    out.method = "implicit";
    const std::size_t total = detail::step_count_for(t_end, options.dt);
    const double dt = t_end / static_cast<double>(total);
    out.dt_initial = out.dt_final = dt;
    Vector a = a_initial.size() == p.num_free() ? Vector(a_initial.begin(), a_initial.end()) : Vector(p.num_free(), 0.0);
    double t = 0.0;
    for (std::size_t m = 1; m <= total; ++m) {
        t = m == total ? t_end : t + dt;
        const auto j = assemble_source_free(problem.mesh, problem.source, t, p);
        auto rep = newton_solve(problem, p, sys.mass, dt, a, j, options.newton);
        a = std::move(rep.a);
        out.newton_iterations += rep.iterations;
        out.linear_iterations += rep.linear_iterations;
        if (m % options.output_every == 0 || m == total) {
            const auto b2 = compute_b2(problem.mesh, free_to_nodal(p, a));
            out.series.push_back({t, probe_average_b(problem.mesh, b2, problem.probe_id), dt, out.linear_iterations,
                                  out.newton_iterations});
        }
    }
    out.step_count = total;
    out.update_count = out.newton_iterations;  // one tangent assembly per Newton iteration
    out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

/// max_t |a(t) - b(t)| / max_t |b(t)|, with `a` linearly interpolated onto b's times.
inline double max_relative_deviation(const std::vector<SeriesRow>& a, const std::vector<SeriesRow>& b)
{
    if (a.empty() || b.empty()) return 0.0;
    double peak = 0.0, dev = 0.0;
    std::size_t k = 0;
    for (const auto& row : b) {
        peak = std::max(peak, std::abs(row.probe));
        while (k + 1 < a.size() && a[k + 1].t < row.t) ++k;
        double value = a[k].probe;
        if (k + 1 < a.size() && row.t > a[k].t) {
            const double w = std::min(1.0, (row.t - a[k].t) / (a[k + 1].t - a[k].t));
            value = (1.0 - w) * a[k].probe + w * a[k + 1].probe;
        } else if (row.t < a[k].t) {
            const double w = row.t / a[k].t;  // interpolate from the zero initial state
            value = w * a[k].probe;
        }
        dev = std::max(dev, std::abs(value - row.probe));
    }
    return peak > 0.0 ? dev / peak : dev;
}

} // namespace mqs
