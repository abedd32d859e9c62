#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ivcalc/distributions.hpp"
#include "ivcalc/linalg.hpp"

namespace ivcalc {

/// Causal-effect vector theta = (theta_1..theta_n) with diagnostics.
struct ThetaEstimate {
  Vec theta;
  int rank = 0;
  double cond_number = 0.0;
  double residual_norm = 0.0;
  Vec residuals;                ///< per-equation residuals b - A theta
  std::optional<Mat> boot_ci;   ///< n x 2 percentile intervals
  std::optional<Vec> boot_se;   ///< bootstrap standard deviations
  int boot_failures = 0;        ///< resamples on which the estimator failed
  std::vector<std::string> warnings;
};

/// Percentile intervals and standard deviations from bootstrap draws
/// (one row per successful replication).
inline void attach_bootstrap(ThetaEstimate& est, const std::vector<Vec>& draws, double level = 0.95) {
  const auto n = est.theta.size();
  if (draws.size() < 2) {
    est.warnings.push_back("bootstrap produced fewer than 2 successful replications");
    return;
  }
  Mat ci(n, 2);
  Vec se(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    std::vector<double> col;
    col.reserve(draws.size());
    for (const auto& d : draws) col.push_back(d(j));
    ci(j, 0) = percentile(col, 0.5 * (1.0 - level));
    ci(j, 1) = percentile(col, 1.0 - 0.5 * (1.0 - level));
    se(j) = mean_sd(col).sd;
  }
  est.boot_ci = std::move(ci);
  est.boot_se = std::move(se);
}

}  // namespace ivcalc
