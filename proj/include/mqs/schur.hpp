#pragma once

#include <array>
#include <fstream>
#include <iomanip>
#include <optional>
#include <string>
#include <vector>

#include "mqs/assembly.hpp"
#include "mqs/error.hpp"
#include "mqs/linalg/krylov.hpp"
#include "mqs/startvec.hpp"

namespace mqs {

enum class StartStrategy { Previous, Cspe, Pod };

inline std::string to_string(StartStrategy s)
{
    switch (s) {
    case StartStrategy::Previous: return "previous";
    case StartStrategy::Cspe: return "cspe";
    case StartStrategy::Pod: return "pod";
    }
    return "?";
}

inline StartStrategy parse_strategy(const std::string& s)
{
    if (s == "previous") return StartStrategy::Previous;
    if (s == "cspe") return StartStrategy::Cspe;
    if (s == "pod") return StartStrategy::Pod;
    throw ConfigError("unknown start-vector strategy '" + s + "' (expected previous, cspe, pod)");
}

/// Right-hand-side family of a K_nn solve. Each family keeps its own history.
/// Spectral solves (CFL estimation) always start from zero and are not recycled.
enum class SolvePurpose { SchurApply = 0, SourceTerm = 1, Recovery = 2, Spectral = 3 };
inline constexpr std::size_t num_purposes = 4;

inline std::string to_string(SolvePurpose p)
{
    switch (p) {
    case SolvePurpose::SchurApply: return "schur_apply";
    case SolvePurpose::SourceTerm: return "source_term";
    case SolvePurpose::Recovery: return "recovery";
    case SolvePurpose::Spectral: return "spectral";
    }
    return "?";
}

struct SolveRecord {
    std::size_t step = 0;
    SolvePurpose purpose = SolvePurpose::SchurApply;
    std::size_t iterations = 0;
    double residual = 0.0;
};

struct IterationStats {
    std::array<std::size_t, num_purposes> solves{};
    std::array<std::size_t, num_purposes> iterations{};
    std::vector<SolveRecord> records;

    void record(const SolveRecord& r)
    {
        const auto i = static_cast<std::size_t>(r.purpose);
        ++solves[i];
        iterations[i] += r.iterations;
        records.push_back(r);
    }

    double mean(SolvePurpose p) const
    {
        const auto i = static_cast<std::size_t>(p);
        return solves[i] ? static_cast<double>(iterations[i]) / static_cast<double>(solves[i]) : 0.0;
    }

    /// Totals over the time-stepping families (spectral solves excluded).
    std::size_t stepping_solves() const { return solves[0] + solves[1] + solves[2]; }
    std::size_t stepping_iterations() const { return iterations[0] + iterations[1] + iterations[2]; }

    double stepping_mean() const
    {
        const auto n = stepping_solves();
        return n ? static_cast<double>(stepping_iterations()) / static_cast<double>(n) : 0.0;
    }
};

/// CSV columns: step, purpose, strategy, iterations, residual.
inline void write_iteration_csv(const IterationStats& stats, StartStrategy strategy, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out << "step,purpose,strategy,iterations,residual\n" << std::setprecision(10);
    for (const auto& r : stats.records)
        out << r.step << ',' << to_string(r.purpose) << ',' << to_string(strategy) << ',' << r.iterations << ','
            << r.residual << '\n';
}

struct SchurOptions {
    double pcg_tol = 1e-6;
    std::size_t pcg_max_iter = 5000;
    StartStrategy strategy = StartStrategy::Previous;
    std::size_t cspe_window = 5;
    std::size_t pod_window = 10;
    double tol_pod = 1e4;
    PreconditionerKind preconditioner = PreconditionerKind::Ic0;
    /// Evaluate a_n as two separate solves, literally K_nn^+ j - K_nn^+ K_cn^T a_c.
    bool two_solve_recovery = false;
};

/// Matrix-free generalized Schur complement K_S = K_cn K_nn^+ K_cn^T and the
/// K_nn pseudo-inverse service used by the explicit time stepper.
///
/// The context references the blocks; K_cn and K_nn must outlive it and must
/// not change (they are independent of the nonlinear state).
class SchurContext {
public:
    SchurContext(const SparseMatrix& k_cn, const SparseMatrix& k_nn, SchurOptions options)
        : k_cn_(&k_cn), k_nn_(&k_nn), options_(options)
    {
        if (k_cn.cols() != k_nn.rows() || k_nn.rows() != k_nn.cols())
            throw SolverError("SchurContext: inconsistent block dimensions");
        if (k_nn.rows() > 0) precond_ = make_preconditioner(k_nn, options.preconditioner, &precond_kind_);
        for (std::size_t i = 0; i < num_purposes; ++i) {
            slots_[i].previous.assign(k_nn.rows(), 0.0);
            slots_[i].cspe.emplace(k_nn, options.cspe_window);
            slots_[i].pod.emplace(k_nn, options.pod_window, options.tol_pod);
        }
    }

    // Histories hold pointers into the referenced blocks; moving is fine, copying is not meaningful.
    SchurContext(const SchurContext&) = delete;
    SchurContext& operator=(const SchurContext&) = delete;
    SchurContext(SchurContext&&) = default;
    SchurContext& operator=(SchurContext&&) = default;

    std::size_t n_c() const noexcept { return k_cn_->rows(); }
    std::size_t n_n() const noexcept { return k_nn_->rows(); }
    const SchurOptions& options() const noexcept { return options_; }
    PreconditionerKind preconditioner_kind() const noexcept { return precond_kind_; }
    const IterationStats& stats() const noexcept { return stats_; }
    IterationStats& stats() noexcept { return stats_; }

    /// Step index stamped on subsequent solve records.
    void set_step(std::size_t step) noexcept { step_ = step; }

    const CspeCache& cspe_cache(SolvePurpose p) const { return *slots_[static_cast<std::size_t>(p)].cspe; }
    const PodCache& pod_cache(SolvePurpose p) const { return *slots_[static_cast<std::size_t>(p)].pod; }

    /// Start vector the configured strategy would use for `rhs`.
    Vector start_vector(std::span<const double> rhs, SolvePurpose purpose)
    {
        if (purpose == SolvePurpose::Spectral) return Vector(rhs.size(), 0.0);
        auto& slot = slots_[static_cast<std::size_t>(purpose)];
        switch (options_.strategy) {
        case StartStrategy::Previous: return slot.previous;
        case StartStrategy::Cspe: return slot.cspe->start(rhs);
        case StartStrategy::Pod: return slot.pod->start(rhs);
        }
        return Vector(rhs.size(), 0.0);
    }

    /// x with ||K_nn x - rhs|| <= tol ||rhs||. Throws SolverError on non-convergence.
    Vector solve_knn(std::span<const double> rhs, SolvePurpose purpose, std::optional<double> tol = std::nullopt)
    {
        if (rhs.size() != n_n()) throw SolverError("solve_knn: rhs dimension mismatch");
        if (norm2(rhs) == 0.0) {
            stats_.record({step_, purpose, 0, 0.0});
            return Vector(rhs.size(), 0.0);
        }
        const Vector x0 = start_vector(rhs, purpose);
        const auto op = LinearOperator::from_matrix(*k_nn_);
        auto rep = pcg(op, rhs, x0, precond_, tol.value_or(options_.pcg_tol), options_.pcg_max_iter);
        if (!rep.converged)
            throw SolverError("K_nn solve (" + to_string(purpose) + ") did not converge in " +
                              std::to_string(rep.iterations) + " iterations, relative residual " +
                              std::to_string(rep.final_relative_residual));
        stats_.record({step_, purpose, rep.iterations, rep.final_relative_residual});
        if (purpose != SolvePurpose::Spectral) {
            auto& slot = slots_[static_cast<std::size_t>(purpose)];
            switch (options_.strategy) {
            case StartStrategy::Previous: slot.previous = rep.solution; break;
            case StartStrategy::Cspe: slot.cspe->push(rep.solution); break;
            case StartStrategy::Pod: slot.pod->push(rep.solution); break;
            }
        }
        return std::move(rep.solution);
    }

    /// K_S a_c = K_cn K_nn^+ K_cn^T a_c, never formed explicitly.
    Vector apply_ks(std::span<const double> a_c, SolvePurpose purpose = SolvePurpose::SchurApply,
                    std::optional<double> tol = std::nullopt)
    {
        if (a_c.size() != n_c()) throw SolverError("apply_ks: dimension mismatch");
        const Vector y = solve_knn(k_cn_->transpose_times(a_c), purpose, tol);
        return *k_cn_ * y;
    }

    /// -K_cn K_nn^+ j_sn.
    Vector schur_rhs(std::span<const double> j_sn)
    {
        Vector out = *k_cn_ * solve_knn(j_sn, SolvePurpose::SourceTerm);
        scale(-1.0, out);
        return out;
    }

    /// a_n = K_nn^+ j_sn - K_nn^+ K_cn^T a_c.
    /// The combined solve is tightened so its residual is also within pcg_tol of ||j_sn||.
    Vector recover_an(std::span<const double> a_c, std::span<const double> j_sn)
    {
        const Vector coupling = k_cn_->transpose_times(a_c);
        if (options_.two_solve_recovery) {
            Vector x = solve_knn(j_sn, SolvePurpose::Recovery);
            const Vector y = solve_knn(coupling, SolvePurpose::SchurApply);
            axpy(-1.0, y, x);
            return x;
        }
        Vector rhs(j_sn.begin(), j_sn.end());
        axpy(-1.0, coupling, rhs);
        const double j_norm = norm2(j_sn);
        const double rhs_norm = norm2(rhs);
        double tol = options_.pcg_tol;
        if (j_norm > 0.0 && rhs_norm > j_norm) tol *= j_norm / rhs_norm;
        return solve_knn(rhs, SolvePurpose::Recovery, tol);
    }

private:
    struct Slot {
        Vector previous;
        std::optional<CspeCache> cspe;
        std::optional<PodCache> pod;
    };

    const SparseMatrix* k_cn_;
    const SparseMatrix* k_nn_;
    SchurOptions options_;
    LinearOperator precond_;
    PreconditionerKind precond_kind_ = PreconditionerKind::Jacobi;
    std::array<Slot, num_purposes> slots_;
    IterationStats stats_;
    std::size_t step_ = 0;
};

} // namespace mqs
