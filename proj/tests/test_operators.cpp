#include <gtest/gtest.h>

#include <random>

#include "mofi/operators.hpp"
#include "mofi/simgen.hpp"

using namespace mofi;

namespace {

PredictorMatrix random_centered(Index n, Index n_grid, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    Matrix x(n, n_grid);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n_grid; ++j) x(i, j) = gauss(rng);
    return center_predictor(std::move(x));
}

KernelMatrix identity_kernel(Index n_grid) {
    KernelMatrix k;
    k.values = Matrix::Identity(n_grid, n_grid);
    return k;
}

}  // namespace

TEST(TransformPredictor, IdentityKernelDividesByGridSize) {
    PredictorMatrix x = random_centered(5, 8, 1);
    const Matrix xt = transform_predictor(x, identity_kernel(8));
    EXPECT_TRUE(xt.isApprox(x.values / 8.0, 1e-15));
}

TEST(TransformPredictor, ZeroInZeroOut) {
    PredictorMatrix x;
    x.values = Matrix::Zero(4, 6);
    x.centered = true;
    EXPECT_TRUE(transform_predictor(x, identity_kernel(6)).isZero(0.0));
}

TEST(TransformPredictor, DiagonalKernelScalesColumns) {
    PredictorMatrix x = random_centered(3, 4, 2);
    KernelMatrix d;
    d.values = Vector{{1.0, 2.0, 3.0, 4.0}}.asDiagonal();
    const Matrix xt = transform_predictor(x, d);
    for (Index m = 0; m < 4; ++m)
        EXPECT_TRUE(xt.col(m).isApprox(x.values.col(m) * (m + 1.0) / 4.0, 1e-15));
}

TEST(TransformPredictor, RequiresCentering) {
    PredictorMatrix x;
    x.values = Matrix::Ones(3, 3);
    EXPECT_THROW(transform_predictor(x, identity_kernel(3)), std::invalid_argument);
}

TEST(EmpiricalCov, SingleRowOuterProduct) {
    Matrix xt(1, 4);
    xt << 1.0, -2.0, 0.5, 3.0;
    EXPECT_TRUE(empirical_cov(xt).isApprox(xt.transpose() * xt, 1e-15));
}

TEST(EmpiricalCov, OrthogonalRowsTrace) {
    const Index n = 5;
    Matrix xt = Matrix::Zero(n, 8);
    for (Index i = 0; i < n; ++i) xt(i, i) = std::sqrt(static_cast<double>(n));
    EXPECT_NEAR(empirical_cov(xt).trace(), static_cast<double>(n), 1e-12);
}

TEST(EmpiricalCov, ZeroMatrix) {
    EXPECT_TRUE(empirical_cov(Matrix::Zero(3, 5)).isZero(0.0));
}

TEST(TruncatedEigs, IdentityMatrix) {
    const EigSystem es = truncated_eigs(Matrix::Identity(6, 6), 2);
    EXPECT_NEAR(es.lambda[0], 1.0, 1e-14);
    EXPECT_NEAR(es.lambda[1], 1.0, 1e-14);
    EXPECT_TRUE((es.b_tilde.transpose() * es.b_tilde).isApprox(6.0 * Matrix::Identity(2, 2), 1e-12));
}

TEST(TruncatedEigs, DiagonalMatrix) {
    Matrix t = Matrix::Zero(3, 3);
    t.diagonal() << 3.0, 2.0, 1.0;
    const EigSystem es = truncated_eigs(t, 2);
    EXPECT_NEAR(es.lambda[0], 3.0, 1e-14);
    EXPECT_NEAR(es.lambda[1], 2.0, 1e-14);
    const double s = std::sqrt(3.0);
    EXPECT_NEAR(es.b_tilde(0, 0), s, 1e-12);
    EXPECT_NEAR(es.b_tilde(1, 1), s, 1e-12);
}

TEST(TruncatedEigs, RejectsTooManyComponents) {
    EXPECT_THROW(truncated_eigs(Matrix::Identity(3, 3), 4), std::invalid_argument);
}

TEST(TruncatedEigs, SignConventionIsStable) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss;
    Matrix a(10, 10);
    for (Index i = 0; i < 10; ++i)
        for (Index j = 0; j < 10; ++j) a(i, j) = gauss(rng);
    const Matrix t = a * a.transpose();
    const EigSystem e1 = truncated_eigs(t, 4);
    const EigSystem e2 = truncated_eigs(t, 4);
    EXPECT_TRUE(e1.b_tilde.isApprox(e2.b_tilde, 0.0));
    for (Index k = 0; k < 4; ++k) {
        Index first = 0;
        const double vmax = e1.b_tilde.col(k).cwiseAbs().maxCoeff();
        while (std::abs(e1.b_tilde(first, k)) <= 1e-9 * vmax) ++first;
        EXPECT_GT(e1.b_tilde(first, k), 0.0);
    }
}

TEST(TruncatedEigs, ReconstructionImprovesWithRank) {
    // Covariance of a Scenario-I style transformed design.
    SimConfig cfg;
    cfg.n = 60;
    cfg.p = 1;
    cfg.q = 1;
    cfg.q0 = 0;
    cfg.n_grid = 40;
    cfg.seed = 3;
    const Dataset ds = simulate(cfg);
    const KernelSplit split = builtin_split(Scenario::I, cfg.n_grid);
    PredictorMatrix x = center_predictor(ds.x[0]);
    const Matrix xt = transform_predictor(x, psd_sqrt(split.full));
    const Matrix t = empirical_cov(xt);
    double prev = std::numeric_limits<double>::infinity();
    for (Index m : {2, 5, 10, 20}) {
        const EigSystem es = truncated_eigs(t, m);
        const Matrix approx = es.b_tilde * es.lambda.asDiagonal() * es.b_tilde.transpose() /
                              static_cast<double>(cfg.n_grid);
        const double resid = (t - approx).norm();
        EXPECT_LE(resid, prev + 1e-14);
        prev = resid;
    }
}

TEST(AssembleDesign, ZeroPredictorGivesThetaOnly) {
    PredictorMatrix x;
    x.values = Matrix::Zero(6, 10);
    x.centered = true;
    x.col_means = RowVector::Zero(10);
    const TruncatedDesign d = assemble_design(x, identity_kernel(10), 4, 1.0);
    EXPECT_TRUE((d.h_diag.array() == 1.0).all());
    EXPECT_TRUE((d.lambda.array() == 0.0).all());
}

TEST(AssembleDesign, SingleRowAlignsWithTopDirection) {
    PredictorMatrix x = random_centered(2, 12, 9);  // centering kills one dof; rank 1
    const TruncatedDesign d = assemble_design(x, identity_kernel(12), 2, 0.5);
    EXPECT_GT(std::abs(d.gamma(0, 0)), 1e-8);
    EXPECT_LE(std::abs(d.gamma(0, 1)), 1e-10 * std::abs(d.gamma(0, 0)));
}

TEST(AssembleDesign, InvariantsOnSimulatedData) {
    SimConfig cfg;
    cfg.n = 250;
    cfg.p = 1;
    cfg.q = 1;
    cfg.q0 = 0;
    cfg.n_grid = 100;
    cfg.seed = 17;
    const Dataset ds = simulate(cfg);
    const KernelSplit split = builtin_split(Scenario::I, cfg.n_grid);
    PredictorMatrix x = center_predictor(ds.x[0]);
    const KernelMatrix k_sqrt = psd_sqrt(split.full);
    const double theta = 1e-4;
    const TruncatedDesign d = assemble_design_with_sqrt(x, k_sqrt, 30, theta);

    // sqrt(N)-scaled orthonormality of the eigenvector columns.
    const Matrix btb = d.b_tilde.transpose() * d.b_tilde / static_cast<double>(cfg.n_grid);
    EXPECT_LE((btb - Matrix::Identity(30, 30)).cwiseAbs().maxCoeff(), 1e-8);

    // Descending nonnegative spectrum; h strictly decreasing then flat at theta.
    for (Index m = 1; m < 30; ++m) {
        EXPECT_LE(d.lambda[m], d.lambda[m - 1] + 1e-15);
        EXPECT_GE(d.lambda[m], 0.0);
    }
    EXPECT_GT(d.h_diag[0], d.h_diag[10]);
    EXPECT_LE(d.h_diag[29] - theta, 1e-3 * theta);

    // Diagonality of (1/n) Gamma^T Gamma against Lambda/N.
    Matrix gtg = d.gamma.transpose() * d.gamma / static_cast<double>(cfg.n);
    const double ref = gtg.diagonal().maxCoeff();
    gtg.diagonal() -= d.lambda / static_cast<double>(cfg.n_grid);
    EXPECT_LE(gtg.cwiseAbs().maxCoeff(), 1e-6 * ref);

    // Riemann inner products of f = B c match Gamma c.
    std::mt19937_64 rng(23);
    std::normal_distribution<double> gauss;
    Vector c(30);
    for (Index m = 0; m < 30; ++m) c[m] = gauss(rng);
    const Vector f = d.b_tilde * c;
    const Vector lhs = d.x_tilde * f / static_cast<double>(cfg.n_grid);
    const Vector rhs = d.gamma * c;
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, rhs.cwiseAbs().maxCoeff()));

    // Captured variance is monotone in the truncation level.
    double prev = 0.0;
    for (Index m : {5, 10, 20, 30}) {
        const TruncatedDesign dm = assemble_design_with_sqrt(x, k_sqrt, m, theta);
        const double captured = dm.lambda.sum();
        EXPECT_GE(captured, prev - 1e-14);
        prev = captured;
    }
}

TEST(AssembleDesign, RejectsBadArguments) {
    PredictorMatrix x = random_centered(5, 8, 4);
    EXPECT_THROW(assemble_design(x, identity_kernel(8), 4, 0.0), std::invalid_argument);
    EXPECT_THROW(assemble_design(x, identity_kernel(8), 7, 1.0), std::invalid_argument);
}
