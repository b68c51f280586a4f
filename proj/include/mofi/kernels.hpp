#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "mofi/common.hpp"

namespace mofi {

/// Built-in reproducing kernels on [0,1]^2. The ambient kernel K is the
/// second-order Sobolev-type kernel shared by all three scenarios; they
/// differ only in which finite-dimensional null part K0 is split off:
///   I   : K0 = constants,          K0(s,t) = 1/pi^4
///   II  : K0 = first cosine mode,  K0(s,t) = 2 pi^-4 cos(pi s) cos(pi t)
///   III : K0 = span of both,       K0 = K0_I + K0_II
enum class Scenario { I, II, III };

enum class KernelPart { Full, Null, Complement };

inline Scenario scenario_from_string(const std::string& s) {
    if (s == "I" || s == "1") return Scenario::I;
    if (s == "II" || s == "2") return Scenario::II;
    if (s == "III" || s == "3") return Scenario::III;
    throw ConfigError("unknown scenario: " + s);
}

inline std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::I: return "I";
        case Scenario::II: return "II";
        default: return "III";
    }
}

inline int null_dimension(Scenario s) { return s == Scenario::III ? 2 : 1; }

/// Fourth Bernoulli polynomial B4(t) = t^4 - 2t^3 + t^2 - 1/30 on [0,1].
inline double bernoulli_b4(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("bernoulli_b4: t outside [0,1]");
    return ((t - 2.0) * t + 1.0) * t * t - 1.0 / 30.0;
}

namespace detail {

constexpr double kPi = std::numbers::pi;
inline const double kInvPi4 = 1.0 / (kPi * kPi * kPi * kPi);

inline void check_unit_square(double s, double t) {
    if (!(s >= 0.0 && s <= 1.0 && t >= 0.0 && t <= 1.0))
        throw std::invalid_argument("kernel arguments outside [0,1]");
}

// K1 of Scenario I; its cosine expansion has zero mean in each argument.
inline double sobolev_complement_i(double s, double t) {
    return -(bernoulli_b4(std::abs(s - t) / 2.0) + bernoulli_b4((s + t) / 2.0)) / 3.0;
}

inline double sobolev_null_ii(double s, double t) {
    return 2.0 * kInvPi4 * std::cos(kPi * s) * std::cos(kPi * t);
}

inline double sobolev_full(double s, double t) { return kInvPi4 + sobolev_complement_i(s, t); }

}  // namespace detail

/// Closed-form evaluation of the built-in scenario kernels.
inline double eval_builtin_kernel(Scenario scenario, KernelPart part, double s, double t) {
    detail::check_unit_square(s, t);
    const double full = detail::sobolev_full(s, t);
    if (part == KernelPart::Full) return full;
    double null_part = 0.0;
    switch (scenario) {
        case Scenario::I: null_part = detail::kInvPi4; break;
        case Scenario::II: null_part = detail::sobolev_null_ii(s, t); break;
        case Scenario::III: null_part = detail::kInvPi4 + detail::sobolev_null_ii(s, t); break;
    }
    return part == KernelPart::Null ? null_part : full - null_part;
}

/// Gaussian RBF kernel exp{-scale (s-t)^2}.
inline double eval_gaussian_kernel(double scale, double s, double t) {
    detail::check_unit_square(s, t);
    if (!(scale > 0.0)) throw std::invalid_argument("gaussian kernel: scale must be positive");
    const double d = s - t;
    return std::exp(-scale * d * d);
}

/// Equally spaced evaluation grid {1/N, 2/N, ..., 1}.
inline Vector unit_grid(Index n_grid) {
    if (n_grid <= 0) throw std::invalid_argument("grid size must be positive");
    Vector g(n_grid);
    for (Index i = 0; i < n_grid; ++i) g[i] = static_cast<double>(i + 1) / static_cast<double>(n_grid);
    return g;
}

/// A kernel evaluated on the N x N grid. Immutable once built.
struct KernelMatrix {
    Matrix values;
    bool symmetric = true;

    Index size() const { return values.rows(); }

    template <class Fn>
    static KernelMatrix from_function(Index n_grid, Fn&& k) {
        const Vector grid = unit_grid(n_grid);
        KernelMatrix out;
        out.values.resize(n_grid, n_grid);
        for (Index i = 0; i < n_grid; ++i) {
            for (Index j = 0; j <= i; ++j) {
                const double v = k(grid[i], grid[j]);
                out.values(i, j) = v;
                out.values(j, i) = v;
            }
        }
        return out;
    }
};

/// Ambient kernel split K = K0 + K1 on the grid, with dim(H0) = null_dim.
struct KernelSplit {
    KernelMatrix full;
    KernelMatrix null_part;
    KernelMatrix complement;
    Index null_dim = 0;
};

/// Relative tolerance for clipping round-off negatives in PSD spectra.
inline constexpr double kPsdClipTol = 1e-8;
/// Below this an input counts as genuinely indefinite.
inline constexpr double kPsdErrorTol = 1e-6;
/// Condition-number guard for Gram / normal-equation solves.
inline constexpr double kConditionLimit = 1e12;

/// Symmetric PSD square root: S with S*S = m. Eigenvalues in
/// [-kPsdErrorTol * lambda_max, 0) are clipped to zero before rooting;
/// anything lower throws. Round-off positives below 1e-12 * lambda_max are
/// clipped too, since the square root would amplify them to sqrt-scale
/// noise (an orthogonal projection must map to itself).
inline KernelMatrix psd_sqrt(const KernelMatrix& m) {
    if (m.values.rows() != m.values.cols()) throw std::invalid_argument("psd_sqrt: matrix not square");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m.values);
    if (eig.info() != Eigen::Success) throw NumericError("psd_sqrt: eigendecomposition failed");
    const Vector& lam = eig.eigenvalues();
    const double lam_max = std::max(lam.maxCoeff(), 0.0);
    const double floor = -kPsdErrorTol * lam_max;
    Vector roots(lam.size());
    for (Index i = 0; i < lam.size(); ++i) {
        if (lam[i] < floor && lam[i] < -1e-300)
            throw NumericError("psd_sqrt: matrix is strongly indefinite (eigenvalue " +
                               std::to_string(lam[i]) + ")");
        roots[i] = lam[i] > 1e-12 * lam_max ? std::sqrt(lam[i]) : 0.0;
    }
    KernelMatrix out;
    out.values.noalias() = eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
    out.values = ((out.values + out.values.transpose()) / 2.0).eval();
    return out;
}

/// Grid split for the built-in scenario kernels. K1 is closed form for
/// Scenario I and K - K0 for II/III, so K0 + K1 = K holds by construction.
inline KernelSplit builtin_split(Scenario scenario, Index n_grid) {
    KernelSplit split;
    split.null_dim = null_dimension(scenario);
    split.full = KernelMatrix::from_function(
        n_grid, [](double s, double t) { return detail::sobolev_full(s, t); });
    split.null_part = KernelMatrix::from_function(n_grid, [scenario](double s, double t) {
        return eval_builtin_kernel(scenario, KernelPart::Null, s, t);
    });
    split.complement.values = split.full.values - split.null_part.values;
    return split;
}

/// Builds the null kernel K0(s,t) = psi(s)^T G^{-1} psi(t) from basis
/// functions evaluated on the grid (N x M0) and their RKHS Gram matrix,
/// and splits the ambient kernel accordingly.
inline KernelSplit null_kernel_from_basis(const KernelMatrix& ambient, const Matrix& basis_values,
                                          const Matrix& gram) {
    const Index n_grid = ambient.size();
    const Index m0 = basis_values.cols();
    if (basis_values.rows() != n_grid)
        throw std::invalid_argument("null_kernel_from_basis: basis grid does not match ambient grid");
    if (gram.rows() != m0 || gram.cols() != m0)
        throw std::invalid_argument("null_kernel_from_basis: gram size does not match basis count");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    if (eig.info() != Eigen::Success) throw NumericError("null_kernel_from_basis: gram eigensolve failed");
    const double lam_min = eig.eigenvalues().minCoeff();
    const double lam_max = eig.eigenvalues().maxCoeff();
    if (!(lam_min > 0.0) || lam_max / lam_min > kConditionLimit)
        throw NumericError("null_kernel_from_basis: Gram matrix singular or near-singular "
                           "(collinear basis functions)");
    const Matrix gram_inv =
        eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    KernelSplit split;
    split.null_dim = m0;
    split.full = ambient;
    split.null_part.values.noalias() = basis_values * gram_inv * basis_values.transpose();
    split.null_part.values = ((split.null_part.values + split.null_part.values.transpose()) / 2.0).eval();
    split.complement.values = ambient.values - split.null_part.values;
    return split;
}

/// Gaussian ambient kernel with a null space spanned by anchor bumps
/// K(t_r, .): Gram entries are K(t_r1, t_r2).
inline KernelSplit gaussian_anchor_split(double scale, const std::vector<double>& anchors,
                                         Index n_grid) {
    if (anchors.empty()) throw std::invalid_argument("gaussian_anchor_split: no anchors given");
    const KernelMatrix ambient = KernelMatrix::from_function(
        n_grid, [scale](double s, double t) { return eval_gaussian_kernel(scale, s, t); });
    const Vector grid = unit_grid(n_grid);
    const Index m0 = static_cast<Index>(anchors.size());
    Matrix basis(n_grid, m0);
    Matrix gram(m0, m0);
    for (Index r = 0; r < m0; ++r) {
        for (Index i = 0; i < n_grid; ++i) basis(i, r) = eval_gaussian_kernel(scale, anchors[r], grid[i]);
        for (Index r2 = 0; r2 < m0; ++r2) gram(r, r2) = eval_gaussian_kernel(scale, anchors[r], anchors[r2]);
    }
    return null_kernel_from_basis(ambient, basis, gram);
}

/// Smallest eigenvalue must satisfy lambda_min >= -tol * lambda_max.
inline bool is_psd_within(const KernelMatrix& m, double tol = kPsdClipTol) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m.values, Eigen::EigenvaluesOnly);
    const double lam_max = std::max(eig.eigenvalues().maxCoeff(), 0.0);
    return eig.eigenvalues().minCoeff() >= -tol * std::max(lam_max, 1e-300);
}

/// Descriptor of a kernel choice, as encoded in the CLI config.
struct KernelSpec {
    enum class Kind { SobolevScenario, GaussianAnchors };
    Kind kind = Kind::SobolevScenario;
    Scenario scenario = Scenario::I;
    double scale = 50.0;
    std::vector<double> anchors;

    Index null_dim() const {
        return kind == Kind::SobolevScenario ? null_dimension(scenario)
                                             : static_cast<Index>(anchors.size());
    }

    KernelSplit build(Index n_grid) const {
        if (kind == Kind::SobolevScenario) return builtin_split(scenario, n_grid);
        return gaussian_anchor_split(scale, anchors, n_grid);
    }
};

}  // namespace mofi
