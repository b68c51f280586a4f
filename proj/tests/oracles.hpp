// Test-only oracles, independent of the solver implementation they check.
#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "mofi/solver.hpp"

namespace mofi::test {

/// Truncated cosine expansion of the Scenario-I complement kernel:
/// sum_{m=1}^{terms} 2 cos(m pi s) cos(m pi t) / (pi^4 m^4).
inline double series_complement_scenario1(double s, double t, int terms) {
    const double pi = std::numbers::pi;
    double sum = 0.0;
    for (int m = 1; m <= terms; ++m) {
        const double m4 = static_cast<double>(m) * m * m * m;
        sum += 2.0 * std::cos(m * pi * s) * std::cos(m * pi * t) / (pi * pi * pi * pi * m4);
    }
    return sum;
}

/// Objective of the group elastic-net problem, written out directly.
inline double oracle_objective(const BlockProblem& problem, const std::vector<Vector>& b,
                               const Vector& a, double lambda1, double lambda2) {
    const double n = static_cast<double>(problem.response.size());
    Vector fitted = Vector::Zero(problem.response.size());
    if (problem.parametric_design && a.size() > 0) fitted += *problem.parametric_design * a;
    double penalty = 0.0;
    for (std::size_t j = 0; j < problem.blocks.size(); ++j) {
        const auto& blk = problem.blocks[j];
        fitted += blk.gamma * blk.h_diag.cwiseSqrt().cwiseInverse().asDiagonal() * b[j];
        penalty += lambda1 * b[j].norm();
        penalty += 0.5 * lambda2 * b[j].cwiseQuotient(blk.h_diag.cwiseSqrt()).squaredNorm();
    }
    return (problem.response - fitted).squaredNorm() / (2.0 * n) + penalty;
}

struct OracleSolution {
    std::vector<Vector> b;
    Vector a;
    double objective = 0.0;
};

/// Accelerated proximal-gradient (FISTA with monotone restart) minimizer of
/// the same objective. Deliberately shares no code with bcd_fit.
inline OracleSolution proximal_gradient_oracle(const BlockProblem& problem, double lambda1,
                                               double lambda2, int max_iters = 200000) {
    const Index n = problem.response.size();
    const std::size_t p = problem.blocks.size();
    std::vector<Index> offsets(p);
    Index dim_b = 0;
    for (std::size_t j = 0; j < p; ++j) {
        offsets[j] = dim_b;
        dim_b += problem.blocks[j].gamma.cols();
    }
    const Index dim_a = problem.parametric_design ? problem.parametric_design->cols() : 0;
    const Index dim = dim_b + dim_a;

    // Stacked scaled design [G_1 .. G_p Z] and the smooth-part Hessian.
    Matrix design(n, dim);
    Vector ridge_diag = Vector::Zero(dim);
    for (std::size_t j = 0; j < p; ++j) {
        const auto& blk = problem.blocks[j];
        design.middleCols(offsets[j], blk.gamma.cols()) =
            blk.gamma * blk.h_diag.cwiseSqrt().cwiseInverse().asDiagonal();
        ridge_diag.segment(offsets[j], blk.h_diag.size()) = lambda2 * blk.h_diag.cwiseInverse();
    }
    if (dim_a > 0) design.rightCols(dim_a) = *problem.parametric_design;
    Matrix hessian = design.transpose() * design / static_cast<double>(n);
    hessian.diagonal() += ridge_diag;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(hessian);
    const double lipschitz = std::max(eig.eigenvalues().maxCoeff(), 1e-12);
    const double step = 1.0 / lipschitz;

    auto objective_at = [&](const Vector& v) {
        std::vector<Vector> b(p);
        for (std::size_t j = 0; j < p; ++j)
            b[j] = v.segment(offsets[j], problem.blocks[j].gamma.cols());
        const Vector a = dim_a > 0 ? Vector(v.tail(dim_a)) : Vector();
        return oracle_objective(problem, b, a, lambda1, lambda2);
    };

    Vector v = Vector::Zero(dim);
    Vector z = v;
    double t_momentum = 1.0;
    double best_obj = objective_at(v);
    Vector best_v = v;
    int stall = 0;
    for (int it = 0; it < max_iters && stall < 200; ++it) {
        Vector grad = design.transpose() * (design * z - problem.response) / static_cast<double>(n);
        grad += ridge_diag.cwiseProduct(z);
        Vector candidate = z - step * grad;
        for (std::size_t j = 0; j < p; ++j) {  // group soft-threshold on the b segments
            auto seg = candidate.segment(offsets[j], problem.blocks[j].gamma.cols());
            const double norm = seg.norm();
            const double scale = norm > step * lambda1 ? 1.0 - step * lambda1 / norm : 0.0;
            seg *= scale;
        }
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_momentum * t_momentum));
        z = candidate + ((t_momentum - 1.0) / t_next) * (candidate - v);
        v = candidate;
        t_momentum = t_next;
        const double obj = objective_at(v);
        if (obj < best_obj - 1e-15 * (1.0 + std::abs(best_obj))) {
            best_obj = obj;
            best_v = v;
            stall = 0;
        } else {
            ++stall;
        }
        if (obj > best_obj + 1e-8 * (1.0 + std::abs(best_obj))) {  // restart momentum
            z = best_v;
            v = best_v;
            t_momentum = 1.0;
        }
    }
    OracleSolution sol;
    sol.b.resize(p);
    for (std::size_t j = 0; j < p; ++j)
        sol.b[j] = best_v.segment(offsets[j], problem.blocks[j].gamma.cols());
    if (dim_a > 0) sol.a = best_v.tail(dim_a);
    sol.objective = best_obj;
    return sol;
}

/// Closed-form ridge solution of the concatenated design (lambda1 = 0) via
/// the normal equations, in the c coordinates.
inline std::vector<Vector> ridge_oracle(const BlockProblem& problem, double lambda2) {
    const Index n = problem.response.size();
    const std::size_t p = problem.blocks.size();
    std::vector<Index> offsets(p);
    Index dim = 0;
    for (std::size_t j = 0; j < p; ++j) {
        offsets[j] = dim;
        dim += problem.blocks[j].gamma.cols();
    }
    Matrix g(n, dim);
    for (std::size_t j = 0; j < p; ++j)
        g.middleCols(offsets[j], problem.blocks[j].gamma.cols()) = problem.blocks[j].gamma;
    Matrix normal = g.transpose() * g / static_cast<double>(n);
    normal.diagonal().array() += lambda2;
    const Vector c = normal.ldlt().solve(g.transpose() * problem.response / static_cast<double>(n));
    std::vector<Vector> out(p);
    for (std::size_t j = 0; j < p; ++j) out[j] = c.segment(offsets[j], problem.blocks[j].gamma.cols());
    return out;
}

/// Random solver instance whose blocks honor the per-block eigenstructure
/// contract (1/n) Gamma^T Gamma = diag(lambda)/N.
struct RandomInstance {
    BlockProblem problem;
    SolverConfig config;
};

inline RandomInstance make_random_instance(std::mt19937_64& rng, bool with_parametric = false,
                                           Index n_grid = 20) {
    std::uniform_int_distribution<int> n_dist(8, 25), blocks_dist(1, 4), m_dist(1, 3);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    RandomInstance inst;
    const int n = n_dist(rng);
    const int p = blocks_dist(rng);
    const double theta = 0.05 + 0.5 * unif(rng);
    inst.problem.response.resize(n);
    for (int i = 0; i < n; ++i) inst.problem.response[i] = gauss(rng);

    for (int j = 0; j < p; ++j) {
        const int m = std::min<int>(m_dist(rng), n - 1);
        Matrix raw(n, m);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < m; ++k) raw(i, k) = gauss(rng);
        const Matrix q = Eigen::HouseholderQR<Matrix>(raw).householderQ() * Matrix::Identity(n, m);
        Vector lambda(m);
        for (int k = 0; k < m; ++k) lambda[k] = 0.1 + 2.0 * unif(rng);
        std::sort(lambda.data(), lambda.data() + m, std::greater<double>());
        SolverBlock blk;
        blk.gamma = q * (lambda * static_cast<double>(n) / static_cast<double>(n_grid))
                            .cwiseSqrt()
                            .asDiagonal();
        blk.h_diag = lambda / static_cast<double>(n_grid);
        blk.h_diag.array() += theta;
        inst.problem.blocks.push_back(std::move(blk));
        inst.problem.response += 0.7 * (inst.problem.blocks.back().gamma * Vector::Random(m));
    }
    if (with_parametric) {
        const int d = std::min(2, n / 4);
        Matrix z(n, d);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < d; ++k) z(i, k) = gauss(rng);
        inst.problem.parametric_design = std::move(z);
    }

    double rho_max = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (const auto& blk : inst.problem.blocks) {
        const Vector rho = inv_n * (blk.gamma.transpose() * inst.problem.response)
                                       .cwiseQuotient(blk.h_diag.cwiseSqrt());
        rho_max = std::max(rho_max, rho.norm());
    }
    inst.config.lambda1 = (0.05 + 0.85 * unif(rng)) * rho_max;
    inst.config.lambda2 = 0.01 + 0.8 * unif(rng);
    inst.config.theta = theta;
    inst.config.kappa = 1.0;
    inst.config.outer_tol = 1e-8;
    inst.config.inner_tol = 1e-10;
    inst.config.max_outer_iters = 5000;
    inst.config.max_inner_iters = 500;
    return inst;
}

}  // namespace mofi::test
