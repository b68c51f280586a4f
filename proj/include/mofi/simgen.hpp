#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mofi/common.hpp"
#include "mofi/kernels.hpp"
#include "mofi/operators.hpp"

namespace mofi {

/// Synthetic-study configuration. Predictors are cosine expansions
/// X_ij(t) = sum_k z_ijk nu_k^{1/2} phi_k(t) with nu_k = exp(-k/4) and
/// AR(1) cross-predictor score correlation rho.
struct SimConfig {
    int n = 125;
    int p = 100;
    int q = 10;
    int q0 = -1;  // -1 -> floor(q/2)
    double rho = 0.5;
    double sigma = 1.0;
    int n_basis = 30;
    Scenario scenario = Scenario::I;
    std::uint64_t seed = 0;
    int n_grid = 100;
    int n_test = 0;

    int resolved_q0() const { return q0 < 0 ? q / 2 : q0; }

    void validate() const {
        if (n < 1 || p < 1 || n_basis < 2 || n_grid < 2) throw ConfigError("simulate: sizes must be positive");
        if (q < 0 || q > p) throw ConfigError("simulate: need 0 <= q <= p");
        if (resolved_q0() > q) throw ConfigError("simulate: need q0 <= q");
        if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("simulate: need rho in [0,1)");
        if (sigma < 0.0) throw ConfigError("simulate: sigma must be nonnegative");
        if (n_test < 0) throw ConfigError("simulate: n_test must be nonnegative");
        if (scenario == Scenario::III && n_basis < 3) throw ConfigError("simulate: scenario III needs n_basis >= 3");
    }
};

inline double nu_decay(int k) { return std::exp(-static_cast<double>(k) / 4.0); }

/// phi_1 = 1, phi_k(t) = sqrt(2) cos((k-1) pi t) for k >= 2 (1-based k).
inline double cosine_basis(int k, double t) {
    if (k == 1) return 1.0;
    return std::numbers::sqrt2 * std::cos((k - 1) * std::numbers::pi * t);
}

/// N x K matrix of basis values on the grid {1/N,...,1}.
inline Matrix cosine_basis_matrix(Index n_grid, int n_basis) {
    const Vector grid = unit_grid(n_grid);
    Matrix phi(n_grid, n_basis);
    for (int k = 1; k <= n_basis; ++k)
        for (Index i = 0; i < n_grid; ++i) phi(i, k - 1) = cosine_basis(k, grid[i]);
    return phi;
}

/// Ground truth exposed for metric computation.
struct SimulationTruth {
    Matrix u_signs;      // q x n_basis, entries in {0,1}
    Matrix gamma_flags;  // q x n_basis, entries in {0,1}
    Matrix beta_coeffs;  // p x n_basis, row j = expansion of beta_0j
    std::vector<int> s_true, s0_true, s1_true;  // 1-based predictor ids
};

/// Complete in-memory dataset for one replicate.
struct Dataset {
    SimConfig cfg;
    std::vector<Matrix> scores;       // p matrices, n x n_basis
    std::vector<Matrix> x;            // p matrices, n x N (uncentered)
    Vector y;                         // n, with noise
    std::vector<Matrix> scores_test;  // p matrices, n_test x n_basis
    std::vector<Matrix> x_test;       // p matrices, n_test x N
    Vector y_test_noiseless;          // n_test
};

namespace detail {

// Scores for each (row, basis k): AR(1) chain across predictors,
// z_1 = e_1, z_j = rho z_{j-1} + sqrt(1-rho^2) e_j.
inline std::vector<Matrix> gen_scores(int n_rows, int p, int n_basis, double rho,
                                      std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Matrix> scores(p, Matrix(n_rows, n_basis));
    const double innov = std::sqrt(1.0 - rho * rho);
    for (int i = 0; i < n_rows; ++i) {
        for (int k = 0; k < n_basis; ++k) {
            double prev = gauss(rng);
            scores[0](i, k) = prev;
            for (int j = 1; j < p; ++j) {
                prev = rho * prev + innov * gauss(rng);
                scores[j](i, k) = prev;
            }
        }
    }
    return scores;
}

inline std::vector<Matrix> curves_from_scores(const std::vector<Matrix>& scores,
                                              const Matrix& phi, int n_basis) {
    Vector nu_sqrt(n_basis);
    for (int k = 1; k <= n_basis; ++k) nu_sqrt[k - 1] = std::sqrt(nu_decay(k));
    std::vector<Matrix> x(scores.size());
    for (std::size_t j = 0; j < scores.size(); ++j)
        x[j].noalias() = scores[j] * nu_sqrt.asDiagonal() * phi.transpose();
    return x;
}

}  // namespace detail

/// Draws signs and scenario-specific activity flags and assembles the true
/// coefficient expansions beta_0j = 4 sum_k (-1)^{u_jk} gamma_jk nu_k phi_k.
inline SimulationTruth gen_coefficients(const SimConfig& cfg, std::uint64_t replicate = 0) {
    cfg.validate();
    const int q = cfg.q;
    const int q0 = cfg.resolved_q0();
    SimulationTruth truth;
    truth.u_signs = Matrix::Zero(std::max(q, 1), cfg.n_basis);
    truth.gamma_flags = Matrix::Zero(std::max(q, 1), cfg.n_basis);
    truth.beta_coeffs = Matrix::Zero(cfg.p, cfg.n_basis);

    std::mt19937_64 rng(derive_seed(cfg.seed, 1 /* signs */, replicate));
    std::bernoulli_distribution coin(0.5);
    for (int j = 0; j < q; ++j)
        for (int k = 0; k < cfg.n_basis; ++k) truth.u_signs(j, k) = coin(rng) ? 1.0 : 0.0;

    for (int j = 0; j < q; ++j) {
        for (int k = 1; k <= cfg.n_basis; ++k) {
            bool active;
            if (j < q0) {
                switch (cfg.scenario) {
                    case Scenario::I: active = (k == 1); break;
                    case Scenario::II: active = (k == 2); break;
                    default: active = (k == 1 || k == 2); break;
                }
            } else {
                active = true;
            }
            truth.gamma_flags(j, k - 1) = active ? 1.0 : 0.0;
            if (active) {
                const double sign = truth.u_signs(j, k - 1) > 0.5 ? -1.0 : 1.0;
                truth.beta_coeffs(j, k - 1) = 4.0 * sign * nu_decay(k);
            }
        }
    }
    for (int j = 1; j <= q; ++j) truth.s_true.push_back(j);
    for (int j = 1; j <= q0; ++j) truth.s0_true.push_back(j);
    for (int j = q0 + 1; j <= q; ++j) truth.s1_true.push_back(j);
    return truth;
}

/// Noiseless responses sum_j <X_ij, beta_0j>, computed exactly in
/// coefficient space thanks to basis orthonormality.
inline Vector noiseless_response(const SimulationTruth& truth, const std::vector<Matrix>& scores,
                                 int n_basis) {
    const int n_rows = static_cast<int>(scores.empty() ? 0 : scores[0].rows());
    Vector nu_sqrt(n_basis);
    for (int k = 1; k <= n_basis; ++k) nu_sqrt[k - 1] = std::sqrt(nu_decay(k));
    Vector y = Vector::Zero(n_rows);
    for (std::size_t j = 0; j < scores.size(); ++j) {
        const Vector w = truth.beta_coeffs.row(j).transpose().cwiseProduct(nu_sqrt);
        if ((w.array() == 0.0).all()) continue;
        y.noalias() += scores[j] * w;
    }
    return y;
}

/// Adds N(0, sigma^2) noise from its own stream, so changing sigma never
/// perturbs the score draws.
inline Vector gen_response(const SimulationTruth& truth, const std::vector<Matrix>& scores,
                           int n_basis, double sigma, std::uint64_t noise_seed) {
    Vector y = noiseless_response(truth, scores, n_basis);
    if (sigma > 0.0) {
        std::mt19937_64 rng(noise_seed);
        std::normal_distribution<double> gauss(0.0, sigma);
        for (Index i = 0; i < y.size(); ++i) y[i] += gauss(rng);
    }
    return y;
}

/// Generates the predictor curves (and scores) for one replicate.
inline std::pair<std::vector<Matrix>, std::vector<Matrix>> gen_predictors(const SimConfig& cfg,
                                                                          std::uint64_t replicate = 0) {
    cfg.validate();
    auto scores = detail::gen_scores(cfg.n, cfg.p, cfg.n_basis, cfg.rho,
                                     derive_seed(cfg.seed, 0 /* scores */, replicate));
    const Matrix phi = cosine_basis_matrix(cfg.n_grid, cfg.n_basis);
    auto x = detail::curves_from_scores(scores, phi, cfg.n_basis);
    return {std::move(x), std::move(scores)};
}

/// Full replicate: train curves + response, optional noiseless test bundle.
inline Dataset simulate(const SimConfig& cfg, const SimulationTruth& truth,
                        std::uint64_t replicate = 0) {
    cfg.validate();
    Dataset ds;
    ds.cfg = cfg;
    ds.scores = detail::gen_scores(cfg.n, cfg.p, cfg.n_basis, cfg.rho,
                                   derive_seed(cfg.seed, 0 /* scores */, replicate));
    const Matrix phi = cosine_basis_matrix(cfg.n_grid, cfg.n_basis);
    ds.x = detail::curves_from_scores(ds.scores, phi, cfg.n_basis);
    ds.y = gen_response(truth, ds.scores, cfg.n_basis, cfg.sigma,
                        derive_seed(cfg.seed, 2 /* noise */, replicate));
    if (cfg.n_test > 0) {
        ds.scores_test = detail::gen_scores(cfg.n_test, cfg.p, cfg.n_basis, cfg.rho,
                                            derive_seed(cfg.seed, 3 /* test scores */, replicate));
        ds.x_test = detail::curves_from_scores(ds.scores_test, phi, cfg.n_basis);
        ds.y_test_noiseless = noiseless_response(truth, ds.scores_test, cfg.n_basis);
    }
    return ds;
}

inline Dataset simulate(const SimConfig& cfg, std::uint64_t replicate = 0) {
    return simulate(cfg, gen_coefficients(cfg, replicate), replicate);
}

/// True coefficient curve beta_0j on the grid (1-based predictor id).
inline Vector true_beta_grid(const SimulationTruth& truth, int predictor_id, Index n_grid,
                             int n_basis) {
    const Matrix phi = cosine_basis_matrix(n_grid, n_basis);
    return phi * truth.beta_coeffs.row(predictor_id - 1).transpose();
}

/// Monte-Carlo check that projecting the transformed complement curves off
/// the null-space scores shrinks their covariance kernel by exactly
/// (1 - q M0 / n). Returns the max entrywise deviation relative to the
/// largest expected entry.
inline double verify_projection_identity(int q, int m0, int n, int reps,
                                         std::uint64_t seed = 12345, int n_grid = 50,
                                         int n_basis = 30, double rho = 0.5) {
    if (q < 0 || m0 < 1 || n < 2 || reps < 1) throw std::invalid_argument("verify_projection_identity: bad sizes");
    if (q * m0 >= n) throw std::invalid_argument("verify_projection_identity: need q*M0 < n");
    const int p_eval = std::max(q, 1);
    if (n_basis <= m0) throw std::invalid_argument("verify_projection_identity: need n_basis > M0");

    const Matrix phi = cosine_basis_matrix(n_grid, n_basis);
    Vector nu(n_basis);
    for (int k = 1; k <= n_basis; ++k) nu[k - 1] = nu_decay(k);

    // Expected kernels: (1 - qM0/n) * rho^{|j-j'|} * sum_{m>M0} nu_m^2 phi_m phi_m^T.
    Matrix base = Matrix::Zero(n_grid, n_grid);
    for (int k = m0 + 1; k <= n_basis; ++k)
        base.noalias() += nu[k - 1] * nu[k - 1] * phi.col(k - 1) * phi.col(k - 1).transpose();
    const double shrink = 1.0 - static_cast<double>(q * m0) / static_cast<double>(n);

    std::vector<Matrix> accum(static_cast<std::size_t>(p_eval) * p_eval,
                              Matrix::Zero(n_grid, n_grid));
    for (int rep = 0; rep < reps; ++rep) {
        auto scores = detail::gen_scores(n, p_eval, n_basis, rho,
                                         derive_seed(seed, 17, static_cast<std::uint64_t>(rep)));
        // Transformed complement curves: sum_{m>M0} nu_m z_ijm phi_m.
        std::vector<Matrix> u(p_eval);
        for (int j = 0; j < p_eval; ++j) {
            u[j].noalias() = scores[j].rightCols(n_basis - m0) *
                             nu.tail(n_basis - m0).asDiagonal() *
                             phi.rightCols(n_basis - m0).transpose();
        }
        if (q > 0) {
            Matrix z(n, q * m0);  // null-space scores <X_ij, phi_m> = nu_m^{1/2} z_ijm
            for (int j = 0; j < q; ++j)
                for (int m = 0; m < m0; ++m)
                    z.col(j * m0 + m) = std::sqrt(nu[m]) * scores[j].col(m);
            const Eigen::LDLT<Matrix> ldlt(z.transpose() * z);
            for (int j = 0; j < p_eval; ++j)
                u[j] -= z * ldlt.solve(z.transpose() * u[j]);
        }
        for (int j1 = 0; j1 < p_eval; ++j1)
            for (int j2 = 0; j2 < p_eval; ++j2)
                accum[j1 * p_eval + j2].noalias() +=
                    u[j1].transpose() * u[j2] / static_cast<double>(n);
    }

    double max_dev = 0.0;
    double max_expected = 0.0;
    for (int j1 = 0; j1 < p_eval; ++j1) {
        for (int j2 = 0; j2 < p_eval; ++j2) {
            const Matrix expected = shrink * std::pow(rho, std::abs(j1 - j2)) * base;
            const Matrix estimate = accum[j1 * p_eval + j2] / static_cast<double>(reps);
            max_dev = std::max(max_dev, (estimate - expected).cwiseAbs().maxCoeff());
            max_expected = std::max(max_expected, expected.cwiseAbs().maxCoeff());
        }
    }
    return max_dev / std::max(max_expected, 1e-300);
}

}  // namespace mofi
