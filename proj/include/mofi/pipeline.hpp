#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mofi/common.hpp"
#include "mofi/kernels.hpp"
#include "mofi/operators.hpp"
#include "mofi/solver.hpp"
#include "mofi/tuning.hpp"

namespace mofi {

/// Kernel split plus everything derived from it that fits reuse across
/// predictors and replicates: grid evaluations of the square-root kernels
/// K^{1/2}(s,t) and K1^{1/2}(s,t), and the sqrt(N)-scaled top-M0
/// eigenvectors of K0.
///
/// The grid evaluation of the square-root kernel is sqrt(N) times the
/// matrix square root of the gridded kernel (eigenvalues of the grid matrix
/// are N times the operator eigenvalues). Using it keeps every derived
/// quantity on the operator scale: T's eigenvalues approximate the
/// covariance operator's, so H = Lambda/N + theta reads as mu + theta and
/// theta is comparable with covariance eigenvalues, as the tuning rules
/// assume.
struct PreparedKernel {
    KernelSplit split;
    KernelMatrix k_sqrt;   // grid values of K^{1/2}(s,t)
    KernelMatrix k1_sqrt;  // grid values of K1^{1/2}(s,t)
    Matrix phi_tilde;      // N x M0

    static PreparedKernel make(KernelSplit s) {
        PreparedKernel pk;
        pk.split = std::move(s);
        const double root_n = std::sqrt(static_cast<double>(pk.split.full.size()));
        pk.k_sqrt = psd_sqrt(pk.split.full);
        pk.k_sqrt.values *= root_n;
        pk.k1_sqrt = psd_sqrt(pk.split.complement);
        pk.k1_sqrt.values *= root_n;
        EigSystem es = truncated_eigs(pk.split.null_part.values, pk.split.null_dim);
        const double top = es.lambda[0];
        if (!(top > 0.0) || es.lambda[pk.split.null_dim - 1] <= 1e-10 * top)
            throw NumericError("PreparedKernel: null kernel has rank below its declared dimension");
        pk.phi_tilde = std::move(es.b_tilde);
        return pk;
    }
};

/// One kernel per predictor, or a single shared one.
struct KernelSet {
    std::vector<PreparedKernel> kernels;

    bool shared() const { return kernels.size() == 1; }
    const PreparedKernel& at(std::size_t j) const { return kernels[shared() ? 0 : j]; }
    Index null_dim() const { return kernels.front().split.null_dim; }

    static KernelSet make_shared(KernelSplit split) {
        KernelSet set;
        set.kernels.push_back(PreparedKernel::make(std::move(split)));
        return set;
    }
};

namespace detail {

inline Matrix take_rows(const Matrix& x, const std::vector<int>& rows) {
    Matrix out(static_cast<Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = x.row(rows[i]);
    return out;
}

inline Vector take_rows(const Vector& y, const std::vector<int>& rows) {
    Vector out(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Index>(i)] = y[rows[i]];
    return out;
}

inline std::vector<int> complement_rows(int n, const std::vector<int>& hold) {
    std::vector<char> is_hold(n, 0);
    for (int i : hold) is_hold[i] = 1;
    std::vector<int> rows;
    rows.reserve(n - static_cast<int>(hold.size()));
    for (int i = 0; i < n; ++i)
        if (!is_hold[i]) rows.push_back(i);
    return rows;
}

}  // namespace detail

/// Per-predictor design pieces at the truncation cap. Only fold-dependent
/// quantities live here; h_diag is re-derived per theta as lambda/N + theta.
struct DesignCore {
    Matrix b_tilde;     // N x m_cap
    Vector lambda;      // m_cap
    Matrix gamma;       // n_train x m_cap
    Matrix gamma_hold;  // n_hold x m_cap (empty when no holdout)
};

/// Training-rows view of the data with per-predictor designs, ready for
/// solver problems at any (m, theta) and for held-out prediction.
struct StageOneWorkspace {
    std::vector<DesignCore> designs;
    std::vector<RowVector> x_means;
    Vector y_centered;
    double y_mean = 0.0;
    Vector y_hold;
    Index n_grid = 0;
    Index m_cap = 0;
    double max_cov_eig = 0.0;  // largest covariance-operator eigenvalue across predictors
};

inline StageOneWorkspace build_stage1_workspace(const std::vector<Matrix>& x,
                                                const KernelSet& kernels, const Vector& y,
                                                Index m_cap, const std::vector<int>& train_rows,
                                                const std::vector<int>& hold_rows) {
    StageOneWorkspace ws;
    const std::size_t p = x.size();
    ws.designs.resize(p);
    ws.x_means.resize(p);
    ws.n_grid = x.front().cols();
    const Index n_train = static_cast<Index>(train_rows.size());
    ws.m_cap = std::min<Index>({m_cap, n_train - 1, ws.n_grid});
    if (ws.m_cap < 1) throw std::invalid_argument("build_stage1_workspace: not enough rows");

    Vector y_train = detail::take_rows(y, train_rows);
    ws.y_mean = y_train.mean();
    ws.y_centered = y_train.array() - ws.y_mean;
    if (!hold_rows.empty()) ws.y_hold = detail::take_rows(y, hold_rows);

    for (std::size_t j = 0; j < p; ++j) {
        PredictorMatrix xc = center_predictor(detail::take_rows(x[j], train_rows));
        ws.x_means[j] = xc.col_means;
        TruncatedDesign d = assemble_design_with_sqrt(xc, kernels.at(j).k_sqrt, ws.m_cap, 1.0);
        ws.max_cov_eig = std::max(ws.max_cov_eig, d.lambda[0] / static_cast<double>(ws.n_grid));
        DesignCore core;
        core.b_tilde = std::move(d.b_tilde);
        core.lambda = std::move(d.lambda);
        core.gamma = std::move(d.gamma);
        if (!hold_rows.empty()) {
            Matrix x_hold = detail::take_rows(x[j], hold_rows);
            x_hold.rowwise() -= ws.x_means[j];
            const Matrix x_tilde_hold =
                (x_hold * kernels.at(j).k_sqrt.values) / static_cast<double>(ws.n_grid);
            core.gamma_hold.noalias() = x_tilde_hold * core.b_tilde / static_cast<double>(ws.n_grid);
        }
        ws.designs[j] = std::move(core);
    }
    return ws;
}

inline StageOneWorkspace build_stage1_workspace(const std::vector<Matrix>& x,
                                                const KernelSet& kernels, const Vector& y,
                                                Index m_cap) {
    std::vector<int> all(static_cast<std::size_t>(y.size()));
    std::iota(all.begin(), all.end(), 0);
    return build_stage1_workspace(x, kernels, y, m_cap, all, {});
}

namespace detail {

inline Vector h_diag_at(const DesignCore& core, Index m, double theta, Index n_grid) {
    Vector h = core.lambda.head(m) / static_cast<double>(n_grid);
    h.array() += theta;
    return h;
}

inline BlockProblem make_stage1_problem(const StageOneWorkspace& ws, Index m, double theta) {
    BlockProblem problem;
    problem.response = ws.y_centered;
    problem.blocks.reserve(ws.designs.size());
    for (const auto& core : ws.designs)
        problem.blocks.push_back({core.gamma.leftCols(m), h_diag_at(core, m, theta, ws.n_grid)});
    return problem;
}

inline void set_problem_theta(BlockProblem& problem, const StageOneWorkspace& ws, Index m,
                              double theta) {
    for (std::size_t j = 0; j < problem.blocks.size(); ++j)
        problem.blocks[j].h_diag = h_diag_at(ws.designs[j], m, theta, ws.n_grid);
}

/// Fitted values on held-out rows, in coefficient coordinates.
inline Vector predict_holdout(const StageOneWorkspace& ws, const BlockProblem& problem,
                              const BlockCoefficients& coeffs, Index m) {
    Vector pred = Vector::Constant(ws.y_hold.size(), ws.y_mean);
    for (std::size_t j = 0; j < problem.blocks.size(); ++j) {
        if (!coeffs.active[j]) continue;
        const Vector c =
            coeffs.b[j].cwiseQuotient(problem.blocks[j].h_diag.cwiseSqrt());
        pred.noalias() += ws.designs[j].gamma_hold.leftCols(m) * c;
    }
    return pred;
}

}  // namespace detail

/// Smallest lambda1 that zeroes every block: max_j ||(1/n) H^{-1/2} Gamma^T y||.
inline double lambda_max_stage1(const StageOneWorkspace& ws, Index m, double theta, double kappa) {
    double lam = 0.0;
    const double inv_n = 1.0 / static_cast<double>(ws.y_centered.size());
    for (const auto& core : ws.designs) {
        const Vector h = detail::h_diag_at(core, m, theta, ws.n_grid);
        const Vector rho =
            inv_n * (core.gamma.leftCols(m).transpose() * ws.y_centered).cwiseQuotient(h.cwiseSqrt());
        lam = std::max(lam, rho.norm());
    }
    return lam / kappa;
}

struct StageOneResult {
    std::vector<int> selected;       // 1-based predictor ids
    std::vector<Vector> f_hat;       // per predictor, N (zero when inactive)
    std::vector<Vector> beta_hat;    // per predictor, N (zero when inactive)
    FitResult fit;
    KktReport kkt;
    double y_mean = 0.0;
    std::vector<RowVector> x_means;
    Index m = 0;
    double theta = 0.0;
};

/// Step-One: functional elastic-net over all predictors in the truncated
/// eigenbasis of the full kernel; curves are rebuilt on the grid as
/// f_hat = B H^{-1/2} b and beta_hat = N^{-1} K^{1/2} f_hat.
inline StageOneResult run_step1_on_workspace(const StageOneWorkspace& ws, const KernelSet& kernels,
                                             const SolverConfig& config, Index m) {
    BlockProblem problem = detail::make_stage1_problem(ws, m, config.theta);
    FitResult fit = bcd_fit(problem, config);
    StageOneResult res;
    res.m = m;
    res.theta = config.theta;
    res.y_mean = ws.y_mean;
    res.x_means = ws.x_means;
    res.kkt = kkt_residual(problem, fit.coeffs, config);
    const std::size_t p = ws.designs.size();
    res.f_hat.resize(p);
    res.beta_hat.resize(p);
    for (std::size_t j = 0; j < p; ++j) {
        if (fit.coeffs.active[j]) {
            res.selected.push_back(static_cast<int>(j) + 1);
            const Vector c = fit.coeffs.b[j].cwiseQuotient(problem.blocks[j].h_diag.cwiseSqrt());
            res.f_hat[j].noalias() = ws.designs[j].b_tilde.leftCols(m) * c;
            res.beta_hat[j].noalias() =
                kernels.at(j).k_sqrt.values * res.f_hat[j] / static_cast<double>(ws.n_grid);
        } else {
            res.f_hat[j] = Vector::Zero(ws.n_grid);
            res.beta_hat[j] = Vector::Zero(ws.n_grid);
        }
    }
    res.fit = std::move(fit);
    return res;
}

inline StageOneResult run_step1(const std::vector<Matrix>& x, const KernelSet& kernels,
                                const Vector& y, const SolverConfig& config, Index m = -1) {
    if (m < 0) m = default_truncation(y.size(), x.front().cols());
    StageOneWorkspace ws = build_stage1_workspace(x, kernels, y, m);
    return run_step1_on_workspace(ws, kernels, config, ws.m_cap);
}

/// Step-Two designs restricted to the selected set.
struct StageTwoWorkspace {
    std::vector<int> selected;  // 1-based original ids
    Matrix z;                   // n_train x (M0 * |S|)
    std::vector<DesignCore> designs;  // complement designs per selected predictor
    std::vector<RowVector> x_means;
    Vector y_centered;
    double y_mean = 0.0;
    Matrix z_hold;
    Vector y_hold;
    Index n_grid = 0;
    Index m0 = 0;
    Index m1_cap = 0;
};

inline StageTwoWorkspace build_stage2_workspace(const std::vector<Matrix>& x,
                                                const KernelSet& kernels, const Vector& y,
                                                const std::vector<int>& selected, Index m,
                                                const std::vector<int>& train_rows,
                                                const std::vector<int>& hold_rows) {
    if (selected.empty()) throw std::invalid_argument("build_stage2_workspace: empty selection");
    StageTwoWorkspace ws;
    ws.selected = selected;
    ws.n_grid = x.front().cols();
    ws.m0 = kernels.null_dim();
    const Index n_train = static_cast<Index>(train_rows.size());
    const Index q_hat = static_cast<Index>(selected.size());
    if (ws.m0 * q_hat > n_train)
        throw NumericError("step-two: M0 * |S_hat| exceeds the sample size; no unique solution");
    ws.m1_cap = std::min<Index>({m - ws.m0, n_train - 1, ws.n_grid});
    if (ws.m1_cap < 1)
        throw NumericError("step-two: truncation level leaves no complement directions (need m >= M0+1)");

    Vector y_train = detail::take_rows(y, train_rows);
    ws.y_mean = y_train.mean();
    ws.y_centered = y_train.array() - ws.y_mean;
    if (!hold_rows.empty()) ws.y_hold = detail::take_rows(y, hold_rows);

    ws.z.resize(n_train, ws.m0 * q_hat);
    if (!hold_rows.empty()) ws.z_hold.resize(static_cast<Index>(hold_rows.size()), ws.m0 * q_hat);
    ws.designs.resize(static_cast<std::size_t>(q_hat));
    ws.x_means.resize(static_cast<std::size_t>(q_hat));

    for (Index s = 0; s < q_hat; ++s) {
        const std::size_t j = static_cast<std::size_t>(selected[s] - 1);
        const PreparedKernel& pk = kernels.at(j);
        PredictorMatrix xc = center_predictor(detail::take_rows(x[j], train_rows));
        ws.x_means[s] = xc.col_means;
        ws.z.middleCols(s * ws.m0, ws.m0).noalias() =
            xc.values * pk.phi_tilde / static_cast<double>(ws.n_grid);
        TruncatedDesign d = assemble_design_with_sqrt(xc, pk.k1_sqrt, ws.m1_cap, 1.0);
        DesignCore core;
        core.b_tilde = std::move(d.b_tilde);
        core.lambda = std::move(d.lambda);
        core.gamma = std::move(d.gamma);
        if (!hold_rows.empty()) {
            Matrix x_hold = detail::take_rows(x[j], hold_rows);
            x_hold.rowwise() -= ws.x_means[s];
            ws.z_hold.middleCols(s * ws.m0, ws.m0).noalias() =
                x_hold * pk.phi_tilde / static_cast<double>(ws.n_grid);
            const Matrix x_tilde_hold =
                (x_hold * pk.k1_sqrt.values) / static_cast<double>(ws.n_grid);
            core.gamma_hold.noalias() = x_tilde_hold * core.b_tilde / static_cast<double>(ws.n_grid);
        }
        ws.designs[static_cast<std::size_t>(s)] = std::move(core);
    }
    return ws;
}

namespace detail {

inline BlockProblem make_stage2_problem(const StageTwoWorkspace& ws, Index m1, double theta) {
    BlockProblem problem;
    problem.response = ws.y_centered;
    problem.parametric_design = ws.z;
    problem.blocks.reserve(ws.designs.size());
    for (const auto& core : ws.designs)
        problem.blocks.push_back({core.gamma.leftCols(m1), h_diag_at(core, m1, theta, ws.n_grid)});
    return problem;
}

inline Vector predict_holdout_stage2(const StageTwoWorkspace& ws, const BlockProblem& problem,
                                     const BlockCoefficients& coeffs, Index m1) {
    Vector pred = Vector::Constant(ws.y_hold.size(), ws.y_mean);
    pred.noalias() += ws.z_hold * coeffs.a;
    for (std::size_t s = 0; s < ws.designs.size(); ++s) {
        if (!coeffs.active[s]) continue;
        const Vector c = coeffs.b[s].cwiseQuotient(problem.blocks[s].h_diag.cwiseSqrt());
        pred.noalias() += ws.designs[s].gamma_hold.leftCols(m1) * c;
    }
    return pred;
}

}  // namespace detail

struct StageTwoResult {
    std::vector<int> selected;     // echo of Step-One's S_hat (1-based)
    std::vector<int> simple_set;   // S0_hat
    std::vector<int> complex_set;  // S1_hat
    std::vector<Vector> a_hat;     // per selected, M0
    std::vector<Vector> b1_hat;    // per selected, m1 (zero when simple)
    std::vector<Vector> beta_hat;  // per selected, N
    std::vector<Vector> beta0_hat; // per selected, N (null-space part)
    std::vector<Vector> beta1_hat; // per selected, N (complement part)
    FitResult fit;
    KktReport kkt;
    double y_mean = 0.0;
    Index m1 = 0;
    double theta = 0.0;

    bool empty() const { return selected.empty(); }
};

/// Step-Two: unpenalized null-space regression plus a group elastic-net on
/// the complement designs; a predictor is classified simple exactly when
/// its complement block is zero. Curves follow
///   beta_hat = Phi_tilde a + N^{-1} K1^{1/2} B1 H1^{-1/2} b1,
/// the same half-power composition as Step-One, so fitted values from the
/// curves coincide with the coefficient-space fitted values.
inline StageTwoResult run_step2_on_workspace(const StageTwoWorkspace& ws, const KernelSet& kernels,
                                             const SolverConfig& config, Index m1) {
    BlockProblem problem = detail::make_stage2_problem(ws, m1, config.theta);
    FitResult fit = bcd_fit(problem, config);
    StageTwoResult res;
    res.selected = ws.selected;
    res.m1 = m1;
    res.theta = config.theta;
    res.y_mean = ws.y_mean;
    res.kkt = kkt_residual(problem, fit.coeffs, config);
    const std::size_t q_hat = ws.selected.size();
    res.a_hat.resize(q_hat);
    res.b1_hat.resize(q_hat);
    res.beta_hat.resize(q_hat);
    res.beta0_hat.resize(q_hat);
    res.beta1_hat.resize(q_hat);
    for (std::size_t s = 0; s < q_hat; ++s) {
        const int original_id = ws.selected[s];
        const PreparedKernel& pk = kernels.at(static_cast<std::size_t>(original_id - 1));
        res.a_hat[s] = fit.coeffs.a.segment(static_cast<Index>(s) * ws.m0, ws.m0);
        res.b1_hat[s] = fit.coeffs.b[s];
        res.beta0_hat[s].noalias() = pk.phi_tilde * res.a_hat[s];
        if (fit.coeffs.active[s]) {
            res.complex_set.push_back(original_id);
            const Vector c = fit.coeffs.b[s].cwiseQuotient(problem.blocks[s].h_diag.cwiseSqrt());
            const Vector f1 = ws.designs[s].b_tilde.leftCols(m1) * c;
            res.beta1_hat[s].noalias() = pk.k1_sqrt.values * f1 / static_cast<double>(ws.n_grid);
        } else {
            res.simple_set.push_back(original_id);
            res.beta1_hat[s] = Vector::Zero(ws.n_grid);
        }
        res.beta_hat[s] = res.beta0_hat[s] + res.beta1_hat[s];
    }
    res.fit = std::move(fit);
    return res;
}

inline StageTwoResult run_step2(const std::vector<Matrix>& x, const KernelSet& kernels,
                                const Vector& y, const std::vector<int>& selected,
                                const SolverConfig& config, Index m = -1) {
    if (selected.empty()) return StageTwoResult{};  // nothing to classify
    if (m < 0) m = default_truncation(y.size(), x.front().cols());
    std::vector<int> all(static_cast<std::size_t>(y.size()));
    std::iota(all.begin(), all.end(), 0);
    StageTwoWorkspace ws = build_stage2_workspace(x, kernels, y, selected, m, all, {});
    return run_step2_on_workspace(ws, kernels, config, ws.m1_cap);
}

enum class Strategy { Fix, Optim };

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "fix") return Strategy::Fix;
    if (s == "optim") return Strategy::Optim;
    throw ConfigError("unknown strategy: " + s + " (expected fix|optim)");
}

struct MofiOptions {
    SolverConfig solver;   // tolerance/kappa profile; penalty fields are set per fit
    Strategy strategy = Strategy::Optim;
    Index m = -1;          // -1 -> default cap
    int folds = 5;
    std::uint64_t cv_seed = 0;
    int lambda_count = 20;
    double lambda_min_ratio = 1e-3;
    std::vector<double> alpha_grid = default_alpha_grid();
    std::vector<double> theta_multipliers = {0.01, 0.1, 1.0};
    double alpha_window_half_width = 0.2;
    // Optional explicit Step-One point; when all three are set, Step-One CV
    // is skipped.
    double fixed_lambda = -1.0, fixed_alpha = -1.0, fixed_theta = -1.0;
    double cv_outer_tol = 1e-6;  // CV fits may run looser than the final fits

    bool has_fixed_point() const {
        return fixed_lambda > 0.0 && fixed_alpha > 0.0 && fixed_theta > 0.0;
    }
};

struct MofiResult {
    StageOneResult stage1;
    StageTwoResult stage2;
    TuningRecord record1;
    TuningRecord record2;
    bool stage2_run = false;
};

namespace detail {

inline SolverConfig penalized_config(const SolverConfig& base, double lambda, double alpha,
                                     double theta) {
    SolverConfig cfg = base;
    cfg.lambda1 = alpha * lambda;
    cfg.lambda2 = (1.0 - alpha) * lambda;
    cfg.theta = theta;
    return cfg;
}

/// Per-fold problems cached across grid points: block designs are rebuilt
/// only when m changes and h_diag is refreshed only when theta changes.
struct Stage1CvCache {
    std::vector<StageOneWorkspace> folds;
    std::vector<BlockProblem> problems;
    std::vector<Index> m_eff;
    Index current_m = -1;
    double current_theta = -1.0;

    void prepare(Index m, double theta) {
        if (problems.size() != folds.size()) {
            problems.resize(folds.size());
            m_eff.resize(folds.size());
        }
        if (m != current_m) {
            for (std::size_t i = 0; i < folds.size(); ++i) {
                m_eff[i] = std::min(m, folds[i].m_cap);
                problems[i] = make_stage1_problem(folds[i], m_eff[i], theta);
            }
        } else if (theta != current_theta) {
            for (std::size_t i = 0; i < folds.size(); ++i)
                set_problem_theta(problems[i], folds[i], m_eff[i], theta);
        }
        current_m = m;
        current_theta = theta;
    }
};

/// Mean held-out squared prediction error along a descending lambda path,
/// warm-starting each fit from the previous lambda.
inline std::vector<double> stage1_path_errors(Stage1CvCache& cache, Index m, double theta,
                                              double alpha, const std::vector<double>& lambdas,
                                              const SolverConfig& base) {
    cache.prepare(m, theta);
    std::vector<double> total(lambdas.size(), 0.0);
    for (std::size_t f = 0; f < cache.folds.size(); ++f) {
        const auto& ws = cache.folds[f];
        const BlockProblem& problem = cache.problems[f];
        BlockCoefficients warm;
        for (std::size_t i = 0; i < lambdas.size(); ++i) {
            const SolverConfig cfg = penalized_config(base, lambdas[i], alpha, theta);
            FitResult fit = bcd_fit(problem, cfg, warm.b.empty() ? nullptr : &warm);
            warm = fit.coeffs;
            const Vector pred = predict_holdout(ws, problem, fit.coeffs, cache.m_eff[f]);
            total[i] += (pred - ws.y_hold).squaredNorm() / static_cast<double>(ws.y_hold.size());
        }
    }
    for (double& e : total) e /= static_cast<double>(cache.folds.size());
    return total;
}

struct Stage2CvCache {
    std::vector<StageTwoWorkspace> folds;
    std::vector<BlockProblem> problems;
    std::vector<Index> m1_eff;
    Index current_m1 = -1;
    double current_theta = -1.0;

    void prepare(Index m1, double theta) {
        if (problems.size() != folds.size()) {
            problems.resize(folds.size());
            m1_eff.resize(folds.size());
        }
        if (m1 != current_m1) {
            for (std::size_t i = 0; i < folds.size(); ++i) {
                m1_eff[i] = std::min(m1, folds[i].m1_cap);
                problems[i] = make_stage2_problem(folds[i], m1_eff[i], theta);
            }
        } else if (theta != current_theta) {
            for (std::size_t i = 0; i < folds.size(); ++i)
                for (std::size_t j = 0; j < problems[i].blocks.size(); ++j)
                    problems[i].blocks[j].h_diag =
                        h_diag_at(folds[i].designs[j], m1_eff[i], theta, folds[i].n_grid);
        }
        current_m1 = m1;
        current_theta = theta;
    }
};

inline std::vector<double> stage2_path_errors(Stage2CvCache& cache, Index m1, double theta,
                                              double alpha, const std::vector<double>& lambdas,
                                              const SolverConfig& base) {
    cache.prepare(m1, theta);
    std::vector<double> total(lambdas.size(), 0.0);
    for (std::size_t f = 0; f < cache.folds.size(); ++f) {
        const auto& ws = cache.folds[f];
        const BlockProblem& problem = cache.problems[f];
        BlockCoefficients warm;
        for (std::size_t i = 0; i < lambdas.size(); ++i) {
            const SolverConfig cfg = penalized_config(base, lambdas[i], alpha, theta);
            FitResult fit = bcd_fit(problem, cfg, warm.b.empty() ? nullptr : &warm);
            warm = fit.coeffs;
            const Vector pred = predict_holdout_stage2(ws, problem, fit.coeffs, cache.m1_eff[f]);
            total[i] += (pred - ws.y_hold).squaredNorm() / static_cast<double>(ws.y_hold.size());
        }
    }
    for (double& e : total) e /= static_cast<double>(cache.folds.size());
    return total;
}

}  // namespace detail

struct StageOnePack {
    StageOneResult result;
    TuningRecord record;
};

/// Step-One with its penalties tuned by K-fold CV over (lambda, alpha,
/// theta), or taken from an explicit point when one is configured.
inline StageOnePack run_step1_tuned(const std::vector<Matrix>& x, const KernelSet& kernels,
                                    const Vector& y, const MofiOptions& options) {
    const int n = static_cast<int>(y.size());
    const Index n_grid = x.front().cols();
    const Index m_request = options.m > 0 ? options.m : default_truncation(n, n_grid);

    StageOneWorkspace full = build_stage1_workspace(x, kernels, y, m_request);
    const Index m = full.m_cap;

    SolverConfig cv_base = options.solver;
    cv_base.outer_tol = std::max(options.solver.outer_tol, options.cv_outer_tol);

    StageOnePack pack;
    if (options.has_fixed_point()) {
        pack.record.lambda = options.fixed_lambda;
        pack.record.alpha = options.fixed_alpha;
        pack.record.theta = options.fixed_theta;
        pack.record.m = m;
        pack.record.cv_error = std::numeric_limits<double>::quiet_NaN();
    } else {
        TuningGrid grid;
        grid.folds = options.folds;
        grid.seed = options.cv_seed;
        grid.alpha_grid = options.alpha_grid;
        grid.theta_grid = make_theta_grid(options.theta_multipliers, full.max_cov_eig);
        grid.m_grid = {m};
        double lam_max = 0.0;
        for (double theta : grid.theta_grid)
            lam_max = std::max(lam_max, lambda_max_stage1(full, m, theta, options.solver.kappa));
        if (!(lam_max > 0.0))
            throw NumericError("run_step1_tuned: degenerate response (lambda_max = 0)");
        grid.lambda_grid =
            default_lambda_grid(lam_max, options.lambda_count, options.lambda_min_ratio);

        auto folds_idx = split_folds(n, options.folds, grid.seed);
        detail::Stage1CvCache cache;
        cache.folds.reserve(folds_idx.size());
        for (const auto& hold : folds_idx)
            cache.folds.push_back(
                build_stage1_workspace(x, kernels, y, m, detail::complement_rows(n, hold), hold));
        pack.record = cv_grid_search(
            grid, [&](Index gm, double theta, double alpha, const std::vector<double>& lambdas) {
                return detail::stage1_path_errors(cache, gm, theta, alpha, lambdas, cv_base);
            });
    }

    const SolverConfig stage1_cfg = detail::penalized_config(
        options.solver, pack.record.lambda, pack.record.alpha, pack.record.theta);
    pack.result = run_step1_on_workspace(full, kernels, stage1_cfg, m);
    return pack;
}

struct StageTwoPack {
    StageTwoResult result;
    TuningRecord record;
};

/// Step-Two on the Step-One selection. The fix strategy reuses the Step-One
/// penalties exactly; optim re-tunes by CV with lambda_bar capped at the
/// Step-One lambda and alpha_bar in a window around the Step-One alpha,
/// theta kept fixed.
inline StageTwoPack run_step2_tuned(const std::vector<Matrix>& x, const KernelSet& kernels,
                                    const Vector& y, const StageOneResult& stage1,
                                    const TuningRecord& record1, const MofiOptions& options,
                                    Strategy strategy) {
    StageTwoPack pack;
    pack.record = record1;
    pack.record.surface.clear();
    if (stage1.selected.empty()) return pack;  // empty selection: nothing to classify

    const int n = static_cast<int>(y.size());
    const Index m = record1.m;
    SolverConfig cv_base = options.solver;
    cv_base.outer_tol = std::max(options.solver.outer_tol, options.cv_outer_tol);

    if (strategy == Strategy::Optim) {
        TuningGrid grid2;
        grid2.folds = options.folds;
        grid2.seed = options.cv_seed;
        grid2.alpha_grid = alpha_window(record1.alpha, options.alpha_window_half_width);
        grid2.theta_grid = {record1.theta};
        grid2.m_grid = {m};
        // Search range capped at the Step-One choice.
        grid2.lambda_grid =
            default_lambda_grid(record1.lambda, options.lambda_count, options.lambda_min_ratio);
        auto folds_idx = split_folds(n, options.folds, grid2.seed);
        detail::Stage2CvCache cache2;
        cache2.folds.reserve(folds_idx.size());
        for (const auto& hold : folds_idx)
            cache2.folds.push_back(build_stage2_workspace(
                x, kernels, y, stage1.selected, m, detail::complement_rows(n, hold), hold));
        const Index m1_request = m - kernels.null_dim();
        pack.record = cv_grid_search(
            grid2, [&](Index gm, double theta, double alpha, const std::vector<double>& lambdas) {
                (void)gm;
                return detail::stage2_path_errors(cache2, m1_request, theta, alpha, lambdas,
                                                  cv_base);
            });
        pack.record.m = m;
    }

    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    StageTwoWorkspace ws2 = build_stage2_workspace(x, kernels, y, stage1.selected, m, all, {});
    const SolverConfig stage2_cfg = detail::penalized_config(
        options.solver, pack.record.lambda, pack.record.alpha, pack.record.theta);
    pack.result = run_step2_on_workspace(ws2, kernels, stage2_cfg, ws2.m1_cap);
    return pack;
}

/// The full two-stage procedure.
inline MofiResult run_mofi(const std::vector<Matrix>& x, const KernelSet& kernels, const Vector& y,
                           const MofiOptions& options) {
    MofiResult result;
    StageOnePack s1 = run_step1_tuned(x, kernels, y, options);
    result.stage1 = std::move(s1.result);
    result.record1 = std::move(s1.record);
    if (result.stage1.selected.empty()) return result;  // null model; Step-Two skipped
    StageTwoPack s2 =
        run_step2_tuned(x, kernels, y, result.stage1, result.record1, options, options.strategy);
    result.stage2 = std::move(s2.result);
    result.record2 = std::move(s2.record);
    result.stage2_run = true;
    return result;
}

struct RefineResult {
    std::vector<Vector> f_hat;     // per predictor (all p), zero when unselected
    std::vector<Vector> beta_hat;  // per predictor (all p)
    double lambda2 = 0.0;
    double cv_error = 0.0;
    FitResult fit;
};

/// Ridge refit of the Step-One objective restricted to the selected set:
/// lambda1 = 0, lambda2 re-tuned by CV on the same fold split.
inline RefineResult fenet_refine(const std::vector<Matrix>& x, const KernelSet& kernels,
                                 const Vector& y, const StageOneResult& step1,
                                 const MofiOptions& options,
                                 const std::vector<double>& lambda2_grid) {
    RefineResult res;
    const std::size_t p = x.size();
    res.f_hat.assign(p, Vector());
    res.beta_hat.assign(p, Vector());
    const Index n_grid = x.front().cols();
    for (std::size_t j = 0; j < p; ++j) {
        res.f_hat[j] = Vector::Zero(n_grid);
        res.beta_hat[j] = Vector::Zero(n_grid);
    }
    if (step1.selected.empty()) return res;  // nothing to refit

    std::vector<Matrix> x_sel;
    x_sel.reserve(step1.selected.size());
    KernelSet kernels_sel;
    for (int id : step1.selected) {
        x_sel.push_back(x[static_cast<std::size_t>(id - 1)]);
        if (!kernels.shared()) kernels_sel.kernels.push_back(kernels.at(id - 1));
    }
    if (kernels.shared()) kernels_sel.kernels.push_back(kernels.at(0));

    const int n = static_cast<int>(y.size());
    const Index m = step1.m;
    SolverConfig cv_base = options.solver;
    cv_base.outer_tol = std::max(options.solver.outer_tol, options.cv_outer_tol);

    std::vector<double> lambdas = lambda2_grid;
    std::sort(lambdas.begin(), lambdas.end(), std::greater<double>());
    auto folds_idx = split_folds(n, options.folds, options.cv_seed);
    std::vector<double> errors(lambdas.size(), 0.0);
    for (const auto& hold : folds_idx) {
        StageOneWorkspace ws = build_stage1_workspace(x_sel, kernels_sel, y, m,
                                                      detail::complement_rows(n, hold), hold);
        BlockProblem problem = detail::make_stage1_problem(ws, ws.m_cap, step1.theta);
        BlockCoefficients warm;
        for (std::size_t i = 0; i < lambdas.size(); ++i) {
            SolverConfig cfg = cv_base;
            cfg.lambda1 = 0.0;
            cfg.lambda2 = lambdas[i];
            cfg.theta = step1.theta;
            FitResult fit = bcd_fit(problem, cfg, warm.b.empty() ? nullptr : &warm);
            warm = fit.coeffs;
            const Vector pred = detail::predict_holdout(ws, problem, fit.coeffs, ws.m_cap);
            errors[i] += (pred - ws.y_hold).squaredNorm() / static_cast<double>(ws.y_hold.size());
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < lambdas.size(); ++i)
        if (errors[i] < errors[best]) best = i;
    res.lambda2 = lambdas[best];
    res.cv_error = errors[best] / static_cast<double>(folds_idx.size());

    StageOneWorkspace full = build_stage1_workspace(x_sel, kernels_sel, y, m);
    SolverConfig cfg = options.solver;
    cfg.lambda1 = 0.0;
    cfg.lambda2 = res.lambda2;
    cfg.theta = step1.theta;
    StageOneResult refit = run_step1_on_workspace(full, kernels_sel, cfg, full.m_cap);
    for (std::size_t s = 0; s < step1.selected.size(); ++s) {
        const std::size_t j = static_cast<std::size_t>(step1.selected[s] - 1);
        res.f_hat[j] = refit.f_hat[s];
        res.beta_hat[j] = refit.beta_hat[s];
    }
    res.fit = std::move(refit.fit);
    return res;
}

/// Riemann-sum predictions from reconstructed curves on new raw data.
inline Vector predict_from_curves(const std::vector<Matrix>& x_new,
                                  const std::vector<RowVector>& x_means, double y_mean,
                                  const std::vector<Vector>& beta_hat) {
    const Index n_new = x_new.front().rows();
    const double inv_grid = 1.0 / static_cast<double>(x_new.front().cols());
    Vector pred = Vector::Constant(n_new, y_mean);
    for (std::size_t j = 0; j < x_new.size(); ++j) {
        if (beta_hat[j].size() == 0 || (beta_hat[j].array() == 0.0).all()) continue;
        Vector contrib = x_new[j] * beta_hat[j];
        contrib.array() -= x_means[j].dot(beta_hat[j]);
        pred.noalias() += inv_grid * contrib;
    }
    return pred;
}

}  // namespace mofi
