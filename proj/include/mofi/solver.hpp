#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "mofi/common.hpp"

namespace mofi {

struct SolverConfig {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double theta = 1e-3;
    double kappa = 1.0;  // >= 1, inflates the zeroing threshold
    double outer_tol = 1e-6;
    double inner_tol = 1e-8;
    int max_outer_iters = 500;
    int max_inner_iters = 200;

    void validate() const {
        if (lambda1 < 0.0 || lambda2 < 0.0) throw std::invalid_argument("penalties must be nonnegative");
        if (!(theta > 0.0)) throw std::invalid_argument("theta must be positive");
        if (kappa < 1.0) throw std::invalid_argument("kappa must be >= 1");
        if (!(outer_tol > 0.0) || !(inner_tol > 0.0)) throw std::invalid_argument("tolerances must be positive");
        if (max_outer_iters < 1 || max_inner_iters < 1) throw std::invalid_argument("iteration caps must be positive");
    }
};

/// One penalized group: design gamma (n x M_j) in the truncated eigenbasis
/// and the diagonal of H_j = Lambda_j/N + theta I.
struct SolverBlock {
    Matrix gamma;
    Vector h_diag;
};

/// Group elastic-net problem in eigen coordinates; the optional parametric
/// design carries the unpenalized null-space regressors of Step-Two.
struct BlockProblem {
    Vector response;
    std::vector<SolverBlock> blocks;
    std::optional<Matrix> parametric_design;

    void validate() const {
        const Index n = response.size();
        for (const auto& blk : blocks) {
            if (blk.gamma.rows() != n) throw std::invalid_argument("block design row mismatch");
            if (blk.gamma.cols() != blk.h_diag.size())
                throw std::invalid_argument("block h_diag size mismatch");
            if ((blk.h_diag.array() <= 0.0).any())
                throw std::invalid_argument("h_diag entries must be positive");
        }
        if (parametric_design) {
            if (parametric_design->rows() != n) throw std::invalid_argument("parametric design row mismatch");
            if (parametric_design->cols() > n)
                throw std::invalid_argument("parametric design needs at most n columns");
        }
    }
};

/// Solution in the reparameterized coordinates b_j = H_j^{1/2} c_j.
/// A block is inactive iff its b_j is exactly the zero vector.
struct BlockCoefficients {
    std::vector<Vector> b;
    Vector a;  // empty when no parametric block
    std::vector<bool> active;
};

struct FitDiagnostics {
    int sweeps = 0;
    bool converged = false;
    std::vector<double> objective_trace;  // one entry per outer sweep
};

struct FitResult {
    BlockCoefficients coeffs;
    FitDiagnostics diagnostics;
};

/// Non-convergence carrying the last iterate and the objective trace.
struct ConvergenceError : NumericError {
    ConvergenceError(const std::string& msg, BlockCoefficients last_iterate,
                     std::vector<double> trace)
        : NumericError(msg), last(std::move(last_iterate)), objective_trace(std::move(trace)) {}
    BlockCoefficients last;
    std::vector<double> objective_trace;
};

namespace detail {

inline bool is_zero(const Vector& v) { return v.size() == 0 || (v.array() == 0.0).all(); }

inline Vector omega_diag_for(const Vector& h_diag, double lambda2, double theta) {
    Vector omega = 1.0 + (lambda2 - theta) / h_diag.array();
    if ((omega.array() <= 0.0).any())
        throw NumericError("solver: Omega has nonpositive entries (lambda2 too small for theta)");
    return omega;
}

}  // namespace detail

/// Solves the single-block stationarity equation
///   diag(omega) b - rho + lambda1 * b / ||b|| = 0,
/// returning zero when ||rho|| <= kappa * lambda1 (ties resolve to zero).
///
/// The fixed-point map b <- (diag(omega) + lambda1/||b|| I)^{-1} rho moves
/// the iterate only through its norm r = ||b||, so the update reduces to the
/// scalar root of
///   psi(r) = sum_i rho_i^2 / (omega_i r + lambda1)^2 - 1 = 0,
/// which is strictly decreasing with a unique positive root bracketed by
/// (||rho|| - lambda1)/omega_max and (||rho|| - lambda1)/omega_min. The
/// plain vector iteration contracts at rate lambda1/||rho|| and stalls
/// near the activation threshold; bisection-safeguarded Newton on psi finds
/// the same root at full precision. The warm value (or the activation
/// initializer (1 - kappa*lambda1/||rho||) diag(omega)^{-1} rho) seeds r.
inline Vector block_update(const Vector& omega_diag, const Vector& rho, double lambda1,
                           double kappa, double inner_tol, int max_inner_iters,
                           const Vector* warm_start = nullptr) {
    const double rho_norm = rho.norm();
    if (rho_norm <= kappa * lambda1) return Vector::Zero(rho.size());
    if (lambda1 == 0.0) return rho.cwiseQuotient(omega_diag);

    const double omega_min = omega_diag.minCoeff();
    const double omega_max = omega_diag.maxCoeff();
    double lo = (rho_norm - lambda1) / omega_max;
    double hi = (rho_norm - lambda1) / omega_min;
    const auto psi = [&](double r) {
        return (rho.array() / (omega_diag.array() * r + lambda1)).square().sum() - 1.0;
    };
    const auto psi_deriv = [&](double r) {
        return -2.0 * (rho.array().square() * omega_diag.array() /
                       (omega_diag.array() * r + lambda1).cube())
                          .sum();
    };

    double r;
    if (warm_start != nullptr && !detail::is_zero(*warm_start)) {
        r = std::clamp(warm_start->norm(), lo, hi);
    } else {
        r = std::clamp(
            ((1.0 - kappa * lambda1 / rho_norm) * rho.cwiseQuotient(omega_diag)).norm(), lo, hi);
    }
    bool converged = false;
    for (int it = 0; it < max_inner_iters; ++it) {
        const double value = psi(r);
        if (value > 0.0) lo = r;
        else hi = r;
        const double step = value / psi_deriv(r);
        double next = r - step;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);  // bisection safeguard
        const double change = std::abs(next - r) / std::max(r, 1e-300);
        r = next;
        if (change < inner_tol || hi - lo < inner_tol * std::max(r, 1e-300)) {
            converged = true;
            break;
        }
    }
    const Vector b = (rho.array() * r / (omega_diag.array() * r + lambda1)).matrix();
    const double residual =
        (omega_diag.cwiseProduct(b) - rho + (lambda1 / b.norm()) * b).norm();
    if (!converged || residual > 1e-8 * (1.0 + rho_norm))
        throw NumericError("block_update: inner iteration did not converge (residual " +
                           std::to_string(residual) + ")");
    return b;
}

/// Least-squares coefficients via the normal equations with a
/// condition-number guard.
inline Vector ols_parametric(const Matrix& z, const Vector& partial_residual) {
    if (z.cols() > z.rows()) throw std::invalid_argument("ols_parametric: more columns than rows");
    if (z.rows() != partial_residual.size())
        throw std::invalid_argument("ols_parametric: size mismatch");
    const Matrix ztz = z.transpose() * z;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(ztz);
    if (eig.info() != Eigen::Success) throw NumericError("ols_parametric: eigensolve failed");
    const double lam_min = eig.eigenvalues().minCoeff();
    const double lam_max = eig.eigenvalues().maxCoeff();
    if (!(lam_min > 0.0) || lam_max / lam_min > 1e12)
        throw NumericError("ols_parametric: rank-deficient parametric design");
    return eig.eigenvectors() *
           (eig.eigenvectors().transpose() * (z.transpose() * partial_residual))
               .cwiseQuotient(eig.eigenvalues());
}

/// Objective in transformed coordinates:
///   (1/2n) ||Y - Za - sum_j Gamma_j H_j^{-1/2} b_j||^2
///   + lambda1 sum_j ||b_j|| + (lambda2/2) sum_j ||H_j^{-1/2} b_j||^2.
inline double objective_value(const BlockProblem& problem, const BlockCoefficients& coeffs,
                              const SolverConfig& config) {
    const Index n = problem.response.size();
    Vector fitted = Vector::Zero(n);
    if (problem.parametric_design && coeffs.a.size() > 0)
        fitted.noalias() += *problem.parametric_design * coeffs.a;
    double penalty = 0.0;
    for (std::size_t j = 0; j < problem.blocks.size(); ++j) {
        const auto& blk = problem.blocks[j];
        const Vector& b = coeffs.b[j];
        if (detail::is_zero(b)) continue;
        const Vector c = b.cwiseQuotient(blk.h_diag.cwiseSqrt());
        fitted.noalias() += blk.gamma * c;
        penalty += config.lambda1 * b.norm() + 0.5 * config.lambda2 * c.squaredNorm();
    }
    return (problem.response - fitted).squaredNorm() / (2.0 * static_cast<double>(n)) + penalty;
}

/// Block coordinate descent for the group elastic-net problem.
///
/// Blocks are visited in ascending index order; a running residual is kept
/// up to date by swapping single-block contributions in and out. When a
/// parametric design is present, its coefficients are refreshed by least
/// squares once per sweep before the block updates, and once more after
/// convergence so the returned iterate is self-consistent. Convergence is
/// declared when the largest block-coefficient change in a sweep falls
/// below outer_tol.
inline FitResult bcd_fit(const BlockProblem& problem, const SolverConfig& config,
                         const BlockCoefficients* warm_start = nullptr) {
    config.validate();
    problem.validate();
    const Index n = problem.response.size();
    const std::size_t p = problem.blocks.size();

    std::vector<Vector> omega(p), h_inv_sqrt(p);
    std::vector<Matrix> gamma_scaled(p);  // Gamma_j H_j^{-1/2}
    for (std::size_t j = 0; j < p; ++j) {
        omega[j] = detail::omega_diag_for(problem.blocks[j].h_diag, config.lambda2, config.theta);
        h_inv_sqrt[j] = problem.blocks[j].h_diag.cwiseSqrt().cwiseInverse();
        gamma_scaled[j] = problem.blocks[j].gamma * h_inv_sqrt[j].asDiagonal();
    }

    BlockCoefficients coeffs;
    coeffs.b.resize(p);
    coeffs.active.assign(p, false);
    for (std::size_t j = 0; j < p; ++j) {
        if (warm_start != nullptr && warm_start->b.size() == p &&
            warm_start->b[j].size() == problem.blocks[j].gamma.cols()) {
            coeffs.b[j] = warm_start->b[j];
        } else {
            coeffs.b[j] = Vector::Zero(problem.blocks[j].gamma.cols());
        }
    }

    std::optional<Eigen::LDLT<Matrix>> z_solver;
    if (problem.parametric_design) {
        const Matrix& z = *problem.parametric_design;
        const Matrix ztz = z.transpose() * z;
        Eigen::SelfAdjointEigenSolver<Matrix> eig(ztz);
        const double lam_min = eig.eigenvalues().minCoeff();
        const double lam_max = eig.eigenvalues().maxCoeff();
        if (!(lam_min > 0.0) || lam_max / lam_min > 1e12)
            throw NumericError("bcd_fit: singular Z^T Z in parametric refresh");
        z_solver.emplace(ztz);
        coeffs.a = Vector::Zero(z.cols());
        if (warm_start != nullptr && warm_start->a.size() == z.cols()) coeffs.a = warm_start->a;
    }

    // Full residual r = Y - Za - sum_j Gamma_j H_j^{-1/2} b_j.
    Vector residual = problem.response;
    if (z_solver) residual.noalias() -= *problem.parametric_design * coeffs.a;
    for (std::size_t j = 0; j < p; ++j)
        if (!detail::is_zero(coeffs.b[j])) residual.noalias() -= gamma_scaled[j] * coeffs.b[j];

    FitDiagnostics diag;
    double prev_objective = std::numeric_limits<double>::infinity();
    const double inv_n = 1.0 / static_cast<double>(n);

    for (int sweep = 1; sweep <= config.max_outer_iters; ++sweep) {
        double max_change = 0.0;

        if (z_solver) {
            Vector without_a = residual + *problem.parametric_design * coeffs.a;
            Vector a_new = z_solver->solve(problem.parametric_design->transpose() * without_a);
            max_change = std::max(max_change, (a_new - coeffs.a).norm());
            residual = without_a - *problem.parametric_design * a_new;
            coeffs.a = std::move(a_new);
        }

        for (std::size_t j = 0; j < p; ++j) {
            const bool was_zero = detail::is_zero(coeffs.b[j]);
            Vector partial = was_zero ? residual : Vector(residual + gamma_scaled[j] * coeffs.b[j]);
            const Vector rho = inv_n * (gamma_scaled[j].transpose() * partial);
            Vector b_new = block_update(omega[j], rho, config.lambda1, config.kappa,
                                        config.inner_tol, config.max_inner_iters, &coeffs.b[j]);
            max_change = std::max(max_change, (b_new - coeffs.b[j]).norm());
            if (detail::is_zero(b_new)) {
                residual = std::move(partial);
                coeffs.b[j].setZero();
            } else {
                residual = partial - gamma_scaled[j] * b_new;
                coeffs.b[j] = std::move(b_new);
            }
        }

        const double objective = objective_value(problem, coeffs, config);
        if (config.kappa <= 1.0 && objective > prev_objective + 1e-10 * (1.0 + std::abs(prev_objective)))
            throw NumericError("bcd_fit: objective increased across sweeps");
        prev_objective = objective;
        diag.objective_trace.push_back(objective);
        diag.sweeps = sweep;

        if (max_change < config.outer_tol) {
            diag.converged = true;
            break;
        }
    }

    if (!diag.converged)
        throw ConvergenceError("bcd_fit: no convergence within max_outer_iters", coeffs,
                               diag.objective_trace);

    if (z_solver) {  // final refresh keeps a consistent with the final blocks
        Vector without_a = residual + *problem.parametric_design * coeffs.a;
        coeffs.a = z_solver->solve(problem.parametric_design->transpose() * without_a);
        residual = without_a - *problem.parametric_design * coeffs.a;
    }
    for (std::size_t j = 0; j < p; ++j) coeffs.active[j] = !detail::is_zero(coeffs.b[j]);
    return FitResult{std::move(coeffs), std::move(diag)};
}

struct KktReport {
    std::vector<double> per_block;  // stationarity norm (active) or dual slack excess (inactive)
    double parametric = 0.0;
    double max_violation = 0.0;
};

/// Optimality certificate at the given coefficients. Active blocks report
/// the stationarity residual ||Omega b - rho + lambda1 b/||b||||; inactive
/// blocks report max(0, ||rho|| - lambda1).
inline KktReport kkt_residual(const BlockProblem& problem, const BlockCoefficients& coeffs,
                              const SolverConfig& config) {
    const Index n = problem.response.size();
    const std::size_t p = problem.blocks.size();
    const double inv_n = 1.0 / static_cast<double>(n);

    std::vector<Matrix> gamma_scaled(p);
    Vector residual = problem.response;
    if (problem.parametric_design && coeffs.a.size() > 0)
        residual.noalias() -= *problem.parametric_design * coeffs.a;
    for (std::size_t j = 0; j < p; ++j) {
        gamma_scaled[j] =
            problem.blocks[j].gamma * problem.blocks[j].h_diag.cwiseSqrt().cwiseInverse().asDiagonal();
        if (!detail::is_zero(coeffs.b[j])) residual.noalias() -= gamma_scaled[j] * coeffs.b[j];
    }

    KktReport report;
    report.per_block.resize(p, 0.0);
    for (std::size_t j = 0; j < p; ++j) {
        Vector partial = residual;
        if (!detail::is_zero(coeffs.b[j])) partial.noalias() += gamma_scaled[j] * coeffs.b[j];
        const Vector rho = inv_n * (gamma_scaled[j].transpose() * partial);
        if (detail::is_zero(coeffs.b[j])) {
            report.per_block[j] = std::max(0.0, rho.norm() - config.lambda1);
        } else {
            const Vector omega =
                detail::omega_diag_for(problem.blocks[j].h_diag, config.lambda2, config.theta);
            const Vector& b = coeffs.b[j];
            report.per_block[j] =
                (omega.cwiseProduct(b) - rho + (config.lambda1 / b.norm()) * b).norm();
        }
        report.max_violation = std::max(report.max_violation, report.per_block[j]);
    }
    if (problem.parametric_design && coeffs.a.size() > 0) {
        report.parametric = (inv_n * (problem.parametric_design->transpose() * residual)).norm();
        report.max_violation = std::max(report.max_violation, report.parametric);
    }
    return report;
}

}  // namespace mofi
