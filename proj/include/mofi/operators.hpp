#pragma once

#include <algorithm>
#include <cmath>

#include "mofi/common.hpp"
#include "mofi/kernels.hpp"

namespace mofi {

/// Discretized functional predictor: n curves sampled on the N-point grid.
struct PredictorMatrix {
    Matrix values;  // n x N
    bool centered = false;
    RowVector col_means;  // set when centered

    Index n() const { return values.rows(); }
    Index n_grid() const { return values.cols(); }
};

/// Centers each grid column to mean zero; keeps the means for prediction.
inline PredictorMatrix center_predictor(Matrix x) {
    PredictorMatrix out;
    out.col_means = x.colwise().mean();
    x.rowwise() -= out.col_means;
    out.values = std::move(x);
    out.centered = true;
    return out;
}

/// X_tilde = N^{-1} X K^{1/2}: rows are the transformed curves on the grid.
inline Matrix transform_predictor(const PredictorMatrix& x, const KernelMatrix& k_sqrt) {
    if (!x.centered) throw std::invalid_argument("transform_predictor: predictor must be centered");
    if (x.n_grid() != k_sqrt.size())
        throw std::invalid_argument("transform_predictor: grid size mismatch");
    return (x.values * k_sqrt.values) / static_cast<double>(x.n_grid());
}

/// Empirical covariance (1/n) X_tilde^T X_tilde on the grid.
inline Matrix empirical_cov(const Matrix& x_tilde) {
    if (x_tilde.rows() < 1) throw std::invalid_argument("empirical_cov: empty sample");
    Matrix t = Matrix::Zero(x_tilde.cols(), x_tilde.cols());
    t.selfadjointView<Eigen::Lower>().rankUpdate(x_tilde.transpose(),
                                                 1.0 / static_cast<double>(x_tilde.rows()));
    t.triangularView<Eigen::Upper>() = t.transpose();
    return t;
}

struct EigSystem {
    Matrix b_tilde;  // N x M, columns are sqrt(N)-scaled orthonormal eigenvectors
    Vector lambda;   // M, descending, clipped at zero
};

/// Top-m eigenpairs of a symmetric PSD matrix, eigenvalues descending.
/// Sign convention: the first element with magnitude above 1e-9 of the
/// column max is made positive, so repeated runs agree.
inline EigSystem truncated_eigs(const Matrix& t, Index m) {
    const Index n_grid = t.rows();
    if (m < 1 || m > n_grid) throw std::invalid_argument("truncated_eigs: m out of range");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(t);
    if (eig.info() != Eigen::Success) throw NumericError("truncated_eigs: eigendecomposition failed");
    EigSystem out;
    out.b_tilde.resize(n_grid, m);
    out.lambda.resize(m);
    const double scale = std::sqrt(static_cast<double>(n_grid));
    for (Index k = 0; k < m; ++k) {
        const Index src = n_grid - 1 - k;  // Eigen sorts ascending
        out.lambda[k] = std::max(eig.eigenvalues()[src], 0.0);
        Vector v = eig.eigenvectors().col(src);
        const double vmax = v.cwiseAbs().maxCoeff();
        for (Index i = 0; i < n_grid; ++i) {
            if (std::abs(v[i]) > 1e-9 * vmax) {
                if (v[i] < 0.0) v = -v;
                break;
            }
        }
        out.b_tilde.col(k) = scale * v;
    }
    return out;
}

/// Per-predictor quantities feeding the solver, all in the truncated
/// eigenbasis of T = (1/n) X_tilde^T X_tilde:
///   gamma  = N^{-1} X_tilde B_tilde          (n x M)
///   h_diag = lambda/N + theta                (diagonal of H)
struct TruncatedDesign {
    Matrix x_tilde;
    Matrix b_tilde;
    Vector lambda;
    Matrix gamma;
    Vector h_diag;
    Index m = 0;
    double theta = 0.0;
};

namespace detail {

inline void check_design_diagonality(const TruncatedDesign& d, Index n) {
    Matrix gtg = (d.gamma.transpose() * d.gamma) / static_cast<double>(n);
    const double ref = std::max(gtg.diagonal().maxCoeff(), 1e-300);
    gtg.diagonal() -= d.lambda / static_cast<double>(d.b_tilde.rows());
    if (gtg.cwiseAbs().maxCoeff() > 1e-6 * ref)
        throw NumericError("assemble_design: (1/n) Gamma^T Gamma deviates from diag(Lambda)/N");
}

}  // namespace detail

/// Builds the design from an already-computed kernel square root.
inline TruncatedDesign assemble_design_with_sqrt(const PredictorMatrix& x,
                                                 const KernelMatrix& k_sqrt, Index m,
                                                 double theta) {
    if (!(theta > 0.0)) throw std::invalid_argument("assemble_design: theta must be positive");
    const Index n = x.n();
    const Index n_grid = x.n_grid();
    if (m > std::min(n, n_grid))
        throw std::invalid_argument("assemble_design: m exceeds min(n, N)");
    TruncatedDesign d;
    d.m = m;
    d.theta = theta;
    d.x_tilde = transform_predictor(x, k_sqrt);
    EigSystem es = truncated_eigs(empirical_cov(d.x_tilde), m);
    d.b_tilde = std::move(es.b_tilde);
    d.lambda = std::move(es.lambda);
    d.gamma.noalias() = d.x_tilde * d.b_tilde / static_cast<double>(n_grid);
    d.h_diag = d.lambda / static_cast<double>(n_grid);
    d.h_diag.array() += theta;
    detail::check_design_diagonality(d, n);
    return d;
}

/// Builds the design from the kernel itself (takes its PSD square root).
inline TruncatedDesign assemble_design(const PredictorMatrix& x, const KernelMatrix& kernel,
                                       Index m, double theta) {
    return assemble_design_with_sqrt(x, psd_sqrt(kernel), m, theta);
}

/// Default truncation level: generous fixed cap, selection and prediction
/// are insensitive to the exact choice.
inline Index default_truncation(Index n, Index n_grid) {
    return std::min<Index>({n - 1, n_grid, 50});
}

}  // namespace mofi
