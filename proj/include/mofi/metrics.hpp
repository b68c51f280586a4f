#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "mofi/common.hpp"

namespace mofi {

/// Relative excess risk over a test sample: the empirical second moment of
/// sum_j <X*_j, beta_hat_j - beta_0j> divided by that of sum_j <X*_j, beta_0j>,
/// with inner products taken as Riemann sums on the grid.
inline double rer(const std::vector<Vector>& beta_hat, const std::vector<Vector>& beta_true,
                  const std::vector<Matrix>& x_test) {
    if (x_test.empty() || x_test[0].rows() == 0) throw std::invalid_argument("rer: empty test set");
    if (beta_hat.size() != beta_true.size() || beta_hat.size() != x_test.size())
        throw std::invalid_argument("rer: predictor count mismatch");
    const Index n_test = x_test[0].rows();
    const Index n_grid = x_test[0].cols();
    const double inv_grid = 1.0 / static_cast<double>(n_grid);
    Vector err = Vector::Zero(n_test);
    Vector signal = Vector::Zero(n_test);
    for (std::size_t j = 0; j < x_test.size(); ++j) {
        const bool hat_zero = beta_hat[j].size() == 0 || (beta_hat[j].array() == 0.0).all();
        const bool true_zero = beta_true[j].size() == 0 || (beta_true[j].array() == 0.0).all();
        if (!hat_zero) err.noalias() += inv_grid * (x_test[j] * beta_hat[j]);
        if (!true_zero) {
            const Vector contrib = inv_grid * (x_test[j] * beta_true[j]);
            err -= contrib;
            signal += contrib;
        }
    }
    const double denom = signal.squaredNorm();
    if (!(denom > 0.0)) throw NumericError("rer: true functional is identically zero on the test set");
    return err.squaredNorm() / denom;
}

/// FPR = |S_hat ∩ S^c| / |S^c|, FNR = |S_hat^c ∩ S| / |S|; an empty
/// denominator yields rate 0 so the metrics are total.
inline std::pair<double, double> selection_metrics(const std::vector<int>& s_hat,
                                                   const std::vector<int>& s_true, int p) {
    const std::set<int> hat(s_hat.begin(), s_hat.end());
    const std::set<int> truth(s_true.begin(), s_true.end());
    int false_pos = 0, false_neg = 0;
    for (int j : hat)
        if (!truth.count(j)) ++false_pos;
    for (int j : truth)
        if (!hat.count(j)) ++false_neg;
    const int n_null = p - static_cast<int>(truth.size());
    const double fpr = n_null > 0 ? static_cast<double>(false_pos) / n_null : 0.0;
    const double fnr = !truth.empty() ? static_cast<double>(false_neg) / truth.size() : 0.0;
    return {fpr, fnr};
}

/// r(0->1) = |S1_hat ∩ S0| / |S0| and r(1->0) = |S0_hat ∩ S1| / |S1|,
/// with the same empty-denominator convention.
inline std::pair<double, double> form_metrics(const std::vector<int>& s0_hat,
                                              const std::vector<int>& s1_hat,
                                              const std::vector<int>& s0_true,
                                              const std::vector<int>& s1_true) {
    const std::set<int> hat0(s0_hat.begin(), s0_hat.end());
    const std::set<int> hat1(s1_hat.begin(), s1_hat.end());
    int simple_as_complex = 0, complex_as_simple = 0;
    for (int j : s0_true)
        if (hat1.count(j)) ++simple_as_complex;
    for (int j : s1_true)
        if (hat0.count(j)) ++complex_as_simple;
    const double r01 = !s0_true.empty() ? static_cast<double>(simple_as_complex) / s0_true.size() : 0.0;
    const double r10 = !s1_true.empty() ? static_cast<double>(complex_as_simple) / s1_true.size() : 0.0;
    return {r01, r10};
}

struct PredictionMetrics {
    double rmse = 0.0;
    double relative_rmse = 0.0;  // vs the constant null predictor
    double pearson = 0.0;
};

inline PredictionMetrics prediction_metrics(const Vector& y_true, const Vector& y_pred,
                                            double null_baseline) {
    if (y_true.size() != y_pred.size() || y_true.size() < 2)
        throw std::invalid_argument("prediction_metrics: need matched vectors of length >= 2");
    const double n = static_cast<double>(y_true.size());
    PredictionMetrics out;
    out.rmse = std::sqrt((y_pred - y_true).squaredNorm() / n);
    const double null_rmse = std::sqrt((y_true.array() - null_baseline).square().sum() / n);
    if (!(null_rmse > 0.0)) throw NumericError("prediction_metrics: null predictor has zero error");
    out.relative_rmse = out.rmse / null_rmse;
    const Vector ct = y_true.array() - y_true.mean();
    const Vector cp = y_pred.array() - y_pred.mean();
    const double denom = ct.norm() * cp.norm();
    if (!(denom > 0.0)) throw NumericError("prediction_metrics: zero-variance input");
    out.pearson = ct.dot(cp) / denom;
    return out;
}

/// One replicate's evaluation row.
struct EvaluationReport {
    double rer = 0.0;
    double fpr = 0.0, fnr = 0.0;
    double r01 = 0.0, r10 = 0.0;
    double rmse = 0.0, pearson = 0.0;
    int replicate = 0;
};

}  // namespace mofi
