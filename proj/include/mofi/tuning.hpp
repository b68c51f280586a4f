#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "mofi/common.hpp"

namespace mofi {

/// Search grid for K-fold CV. Penalties are reparameterized as
/// lambda1 = alpha * lambda, lambda2 = (1 - alpha) * lambda.
struct TuningGrid {
    std::vector<double> lambda_grid;  // searched in descending order (warm starts)
    std::vector<double> alpha_grid;
    std::vector<double> theta_grid;
    std::vector<Index> m_grid;
    int folds = 5;
    std::uint64_t seed = 0;

    void validate() const {
        if (lambda_grid.empty() || alpha_grid.empty() || theta_grid.empty() || m_grid.empty())
            throw ConfigError("tuning grid has an empty axis");
        for (double l : lambda_grid)
            if (!(l > 0.0)) throw ConfigError("lambda grid entries must be positive");
        for (double a : alpha_grid)
            if (!(a > 0.0 && a < 1.0)) throw ConfigError("alpha grid entries must lie in (0,1)");
        for (double t : theta_grid)
            if (!(t > 0.0)) throw ConfigError("theta grid entries must be positive");
        if (folds < 2) throw ConfigError("need at least 2 folds");
    }
};

struct GridPointError {
    double lambda = 0.0, alpha = 0.0, theta = 0.0;
    Index m = 0;
    double cv_error = 0.0;
};

struct TuningRecord {
    double lambda = 0.0, alpha = 0.0, theta = 0.0;
    Index m = 0;
    double cv_error = 0.0;
    std::vector<GridPointError> surface;
    std::uint64_t fold_seed = 0;
};

/// Seeded partition of {0..n-1} into k folds whose sizes differ by at most one.
inline std::vector<std::vector<int>> split_folds(int n, int k, std::uint64_t seed) {
    if (k > n) throw std::invalid_argument("split_folds: more folds than observations");
    if (k < 1) throw std::invalid_argument("split_folds: need k >= 1");
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::vector<int>> folds(k);
    for (int i = 0; i < n; ++i) folds[i % k].push_back(idx[i]);
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

/// 20-point log-spaced grid on [min_ratio * lambda_max, lambda_max].
inline std::vector<double> default_lambda_grid(double lambda_max, int count = 20,
                                               double min_ratio = 1e-3) {
    if (!(lambda_max > 0.0)) throw std::invalid_argument("default_lambda_grid: lambda_max must be positive");
    std::vector<double> grid(count);
    if (count == 1) {
        grid[0] = lambda_max;
        return grid;
    }
    const double lo = std::log(min_ratio * lambda_max);
    const double hi = std::log(lambda_max);
    for (int i = 0; i < count; ++i)
        grid[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / (count - 1));
    return grid;
}

inline std::vector<double> default_alpha_grid() {
    return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}

/// Materializes the theta axis from multipliers of the largest sample
/// covariance eigenvalue; entries at or above the cap are truncated away.
inline std::vector<double> make_theta_grid(const std::vector<double>& multipliers,
                                           double max_cov_eig) {
    if (!(max_cov_eig > 0.0)) throw NumericError("make_theta_grid: nonpositive covariance scale");
    std::vector<double> grid;
    for (double m : multipliers) {
        const double theta = m * max_cov_eig;
        if (theta > 0.0 && theta < max_cov_eig) grid.push_back(theta);
    }
    if (grid.empty()) throw ConfigError("theta grid empty after truncation below the top eigenvalue");
    std::sort(grid.begin(), grid.end());
    return grid;
}

/// Step-Two alpha window: values around the Step-One choice, clipped to (0,1).
inline std::vector<double> alpha_window(double alpha_center, double half_width = 0.2,
                                        double step = 0.1) {
    std::vector<double> grid;
    for (double a = alpha_center - half_width; a <= alpha_center + half_width + 1e-12; a += step)
        if (a > 1e-9 && a < 1.0 - 1e-9) grid.push_back(a);
    if (grid.empty()) grid.push_back(std::clamp(alpha_center, 0.05, 0.95));
    return grid;
}

/// Generic CV grid search. The evaluator is called once per
/// (m, theta, alpha) combination with the descending lambda path and must
/// return one mean CV error per lambda (warm-starting along the path is the
/// evaluator's business). Ties break toward larger lambda, then larger alpha.
template <class PathEvaluator>
TuningRecord cv_grid_search(const TuningGrid& grid, PathEvaluator&& evaluate_path) {
    grid.validate();
    std::vector<double> lambdas = grid.lambda_grid;
    std::sort(lambdas.begin(), lambdas.end(), std::greater<double>());

    TuningRecord best;
    best.fold_seed = grid.seed;
    bool have_best = false;
    for (Index m : grid.m_grid) {
        for (double theta : grid.theta_grid) {
            for (double alpha : grid.alpha_grid) {
                const std::vector<double> errors = evaluate_path(m, theta, alpha, lambdas);
                if (errors.size() != lambdas.size())
                    throw NumericError("cv_grid_search: evaluator returned wrong path length");
                for (std::size_t i = 0; i < lambdas.size(); ++i) {
                    best.surface.push_back({lambdas[i], alpha, theta, m, errors[i]});
                    const bool better =
                        !have_best || errors[i] < best.cv_error ||
                        (errors[i] == best.cv_error &&
                         (lambdas[i] > best.lambda ||
                          (lambdas[i] == best.lambda && alpha > best.alpha)));
                    if (better) {
                        best.lambda = lambdas[i];
                        best.alpha = alpha;
                        best.theta = theta;
                        best.m = m;
                        best.cv_error = errors[i];
                        have_best = true;
                    }
                }
            }
        }
    }
    if (!have_best) throw NumericError("cv_grid_search: no grid point produced an error value");
    return best;
}

}  // namespace mofi
