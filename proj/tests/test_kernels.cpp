#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "mofi/kernels.hpp"
#include "oracles.hpp"

using namespace mofi;

namespace {
constexpr double kPi4 = 97.40909103400243;  // pi^4
}

TEST(BernoulliB4, KnownValues) {
    EXPECT_DOUBLE_EQ(bernoulli_b4(0.0), -1.0 / 30.0);
    EXPECT_DOUBLE_EQ(bernoulli_b4(1.0), -1.0 / 30.0);
    EXPECT_NEAR(bernoulli_b4(0.5), 7.0 / 240.0, 1e-15);
}

TEST(BernoulliB4, RejectsOutOfDomain) {
    EXPECT_THROW(bernoulli_b4(-0.1), std::invalid_argument);
    EXPECT_THROW(bernoulli_b4(1.1), std::invalid_argument);
}

TEST(BuiltinKernels, ScenarioOneNullIsConstant) {
    for (double s : {0.0, 0.3, 1.0})
        for (double t : {0.1, 0.5, 0.9})
            EXPECT_DOUBLE_EQ(eval_builtin_kernel(Scenario::I, KernelPart::Null, s, t), 1.0 / kPi4);
}

TEST(BuiltinKernels, ScenarioOneComplementCornerValues) {
    // Frozen from the cosine series: sum 2/(pi^4 m^4) = 1/45 and
    // sum 2(-1)^m/(pi^4 m^4) = -7/360.
    EXPECT_NEAR(eval_builtin_kernel(Scenario::I, KernelPart::Complement, 0.0, 0.0), 1.0 / 45.0,
                1e-15);
    EXPECT_NEAR(eval_builtin_kernel(Scenario::I, KernelPart::Complement, 0.0, 1.0), -7.0 / 360.0,
                1e-15);
    EXPECT_NEAR(test::series_complement_scenario1(0.0, 0.0, 200000), 1.0 / 45.0, 1e-12);
    EXPECT_NEAR(test::series_complement_scenario1(0.0, 1.0, 200000), -7.0 / 360.0, 1e-12);
}

TEST(BuiltinKernels, ScenarioTwoNullVanishesAtHalf) {
    for (double t : {0.0, 0.2, 0.7, 1.0})
        EXPECT_NEAR(eval_builtin_kernel(Scenario::II, KernelPart::Null, 0.5, t), 0.0, 1e-16);
}

TEST(BuiltinKernels, ClosedFormMatchesSeries) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 0; i < 20; ++i) {
        const double s = unif(rng), t = unif(rng);
        const double closed = eval_builtin_kernel(Scenario::I, KernelPart::Complement, s, t);
        EXPECT_NEAR(closed, test::series_complement_scenario1(s, t, 2000), 1e-8);
    }
}

TEST(BuiltinKernels, SplitsAddUpForAllScenarios) {
    for (Scenario sc : {Scenario::I, Scenario::II, Scenario::III}) {
        const KernelSplit split = builtin_split(sc, 60);
        const double scale = split.full.values.cwiseAbs().maxCoeff();
        const double dev =
            (split.full.values - split.null_part.values - split.complement.values)
                .cwiseAbs()
                .maxCoeff();
        EXPECT_LE(dev, 1e-12 * scale) << to_string(sc);
        EXPECT_EQ(split.null_dim, sc == Scenario::III ? 2 : 1);
    }
}

TEST(BuiltinKernels, GridMatricesSymmetricAndPsd) {
    for (Scenario sc : {Scenario::I, Scenario::II, Scenario::III}) {
        const KernelSplit split = builtin_split(sc, 50);
        for (const KernelMatrix* k : {&split.full, &split.null_part, &split.complement}) {
            EXPECT_TRUE(k->values.isApprox(k->values.transpose(), 0.0));
            EXPECT_TRUE(is_psd_within(*k));
        }
    }
}

TEST(BuiltinKernels, ComplementAnnihilatesConstants) {
    // The column mean is a Riemann sum of an integral that is exactly zero;
    // on the right-endpoint grid the error is O(1/N), so the 1e-6 bound
    // needs a fine grid.
    const Index n_grid = 30000;
    const Vector grid = unit_grid(n_grid);
    for (Index c = 0; c < n_grid; c += 297) {
        const double t = grid[c];
        double mean = 0.0;
        for (Index s = 0; s < n_grid; ++s)
            mean += eval_builtin_kernel(Scenario::I, KernelPart::Complement, grid[s], t);
        mean /= static_cast<double>(n_grid);
        EXPECT_LE(std::abs(mean), 1e-6) << "column t=" << t;
    }
}

TEST(PsdSqrt, Identity) {
    KernelMatrix id;
    id.values = Matrix::Identity(5, 5);
    EXPECT_TRUE(psd_sqrt(id).values.isApprox(Matrix::Identity(5, 5), 1e-14));
}

TEST(PsdSqrt, DiagFourNine) {
    KernelMatrix d;
    d.values = Matrix::Zero(2, 2);
    d.values(0, 0) = 4.0;
    d.values(1, 1) = 9.0;
    const Matrix s = psd_sqrt(d).values;
    EXPECT_NEAR(s(0, 0), 2.0, 1e-12);
    EXPECT_NEAR(s(1, 1), 3.0, 1e-12);
    EXPECT_NEAR(s(0, 1), 0.0, 1e-12);
}

TEST(PsdSqrt, ReconstructsScenarioOneKernel) {
    const KernelSplit split = builtin_split(Scenario::I, 80);
    const Matrix s = psd_sqrt(split.full).values;
    const double rel = (s * s - split.full.values).norm() / split.full.values.norm();
    EXPECT_LE(rel, 1e-8);
}

TEST(PsdSqrt, ProjectionIsFixedPoint) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> gauss;
    Matrix a(8, 3);
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j) a(i, j) = gauss(rng);
    const Matrix q = Eigen::HouseholderQR<Matrix>(a).householderQ() * Matrix::Identity(8, 3);
    KernelMatrix proj;
    proj.values = q * q.transpose();
    EXPECT_LE((psd_sqrt(proj).values - proj.values).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(PsdSqrt, RejectsStronglyIndefinite) {
    KernelMatrix m;
    m.values = Matrix::Zero(2, 2);
    m.values(0, 0) = 1.0;
    m.values(1, 1) = -1.0;
    EXPECT_THROW(psd_sqrt(m), NumericError);
}

TEST(NullKernelFromBasis, SingleGaussianAnchor) {
    const Index n_grid = 40;
    const double scale = 50.0;
    const double anchor = 0.5;
    const KernelSplit split = gaussian_anchor_split(scale, {anchor}, n_grid);
    const Vector grid = unit_grid(n_grid);
    for (Index i = 0; i < n_grid; i += 7)
        for (Index j = 0; j < n_grid; j += 5) {
            const double expected = eval_gaussian_kernel(scale, grid[i], anchor) *
                                    eval_gaussian_kernel(scale, anchor, grid[j]);
            EXPECT_NEAR(split.null_part.values(i, j), expected, 1e-12);
        }
}

TEST(NullKernelFromBasis, FirstEigenfunctionGivesSpectralTerm) {
    const KernelSplit ambient = builtin_split(Scenario::I, 30);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(ambient.full.values);
    const Index top = ambient.full.size() - 1;
    const double mu = eig.eigenvalues()[top];
    // Unit-RKHS-norm top eigenfunction on the grid.
    const Matrix basis = std::sqrt(mu) * eig.eigenvectors().col(top);
    const Matrix gram = Matrix::Constant(1, 1, 1.0);
    const KernelSplit split = null_kernel_from_basis(ambient.full, basis, gram);
    const Matrix expected = mu * eig.eigenvectors().col(top) * eig.eigenvectors().col(top).transpose();
    EXPECT_LE((split.null_part.values - expected).cwiseAbs().maxCoeff(), 1e-10 * mu);
}

TEST(NullKernelFromBasis, ThreeAnchorSetup) {
    const Index n_grid = 50;
    const std::vector<double> anchors = {0.7, 0.5, 0.3};
    const KernelSplit split = gaussian_anchor_split(50.0, anchors, n_grid);
    EXPECT_EQ(split.null_dim, 3);
    // Direct evaluation of psi(s)^T G^{-1} psi(t).
    Matrix gram(3, 3);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) gram(a, b) = eval_gaussian_kernel(50.0, anchors[a], anchors[b]);
    const Matrix gram_inv = gram.inverse();
    const Vector grid = unit_grid(n_grid);
    for (Index i = 0; i < n_grid; i += 11)
        for (Index j = 0; j < n_grid; j += 13) {
            Vector psi_s(3), psi_t(3);
            for (int a = 0; a < 3; ++a) {
                psi_s[a] = eval_gaussian_kernel(50.0, anchors[a], grid[i]);
                psi_t[a] = eval_gaussian_kernel(50.0, anchors[a], grid[j]);
            }
            EXPECT_NEAR(split.null_part.values(i, j), psi_s.dot(gram_inv * psi_t), 1e-10);
        }
    const double scale = split.full.values.cwiseAbs().maxCoeff();
    EXPECT_LE((split.full.values - split.null_part.values - split.complement.values)
                  .cwiseAbs()
                  .maxCoeff(),
              1e-12 * scale);
}

TEST(NullKernelFromBasis, RejectsCollinearBasis) {
    EXPECT_THROW(gaussian_anchor_split(50.0, {0.5, 0.5}, 30), NumericError);
}
