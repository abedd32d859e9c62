#pragma once

// Discrete X, continuous Z in [0, 1]: regress, differentiate, then fit
// b(z) = sum_j theta_j a_j(z) over the grid.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ivcalc/dataset.hpp"
#include "ivcalc/error.hpp"
#include "ivcalc/estimate.hpp"
#include "ivcalc/linalg.hpp"
#include "ivcalc/npreg.hpp"
#include "ivcalc/random.hpp"

namespace ivcalc {

struct SmoothIvOptions {
  int degree = 2;        ///< local polynomial degree for E(Y | Z)
  int degree_probs = 1;  ///< degree for the class-probability curves
  std::optional<double> bandwidth_probs;  ///< unset: cross-validated
  std::optional<double> bandwidth_mean;   ///< unset: cross-validated
  int grid_points = 101;
  double trim = 0.025;
  bool density_weights = true;
  int cv_folds = 5;
  int cv_candidates = 10;
  std::uint64_t cv_seed = 0;
  double rank_tol = 1e-8;
  int bootstrap = 0;
  std::uint64_t seed = 0;
};

/// Sampled curves of the functional identification equation.
struct FunctionalSystem {
  Vec grid;
  Mat a_curves;  ///< grid x n: a_j(z) = q_j'(z), j = 1..n
  Vec b_curve;   ///< b(z) = mu'(z)
  Vec weights;
  Mat a_full;    ///< grid x (n+1), includes class 0; rows sum to zero
  Mat probs;     ///< grid x (n+1) fitted q_j(z)
  Vec mu;        ///< fitted E(Y | Z = z)
  double bandwidth_probs = 0.0;
  double bandwidth_mean = 0.0;
  std::vector<std::string> warnings;
};

namespace detail {

inline Mat mixed_responses(const MixedDataset& d) {
  Mat ys(static_cast<Eigen::Index>(d.size()), d.n() + 2);
  ys.col(0) = Eigen::Map<const Vec>(d.y().data(), static_cast<Eigen::Index>(d.size()));
  ys.rightCols(d.n() + 1) = class_indicators(d.x(), d.n());
  return ys;
}

inline FunctionalSystem functional_from_smoother(const LocalPolySmoother& smoother, const Vec& grid, int n,
                                                 double h_probs, double h_mean, const SmoothIvOptions& opt) {
  const std::span<const double> pts(grid.data(), grid.size());
  auto probs = smoother.fit(opt.degree_probs, h_probs, pts);
  const auto mean =
      h_mean == h_probs && opt.degree == opt.degree_probs ? probs : smoother.fit(opt.degree, h_mean, pts);
  Mat pv = probs.values.rightCols(n + 1);
  Mat pd = probs.derivs.rightCols(n + 1);
  std::vector<bool> valid = probs.valid;
  project_to_simplex(pv, pd, valid);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index g = 0; g < grid.size(); ++g)
    if (valid[static_cast<std::size_t>(g)] && mean.valid[static_cast<std::size_t>(g)]) keep.push_back(g);
  FunctionalSystem sys;
  const auto k = static_cast<Eigen::Index>(keep.size());
  sys.grid = Vec(k);
  sys.a_curves = Mat(k, n);
  sys.a_full = Mat(k, n + 1);
  sys.probs = Mat(k, n + 1);
  sys.b_curve = Vec(k);
  sys.mu = Vec(k);
  sys.weights = Vec(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto g = keep[static_cast<std::size_t>(i)];
    sys.grid(i) = grid(g);
    sys.a_full.row(i) = pd.row(g);
    sys.a_curves.row(i) = pd.row(g).tail(n);
    sys.probs.row(i) = pv.row(g);
    sys.b_curve(i) = mean.derivs(g, 0);
    sys.mu(i) = mean.values(g, 0);
    sys.weights(i) = opt.density_weights ? mean.mass(g) : 1.0;
  }
  if (k > 0 && opt.density_weights) sys.weights /= sys.weights.mean();
  if (k < grid.size())
    sys.warnings.push_back(std::to_string(grid.size() - k) + " grid point(s) dropped: insufficient local data");
  sys.bandwidth_probs = h_probs;
  sys.bandwidth_mean = h_mean;
  return sys;
}

}  // namespace detail

inline FunctionalSystem build_functional_system(const MixedDataset& d, const SmoothIvOptions& opt = {}) {
  if (d.size() < 20) throw EstimationError("smooth IV needs at least 20 observations");
  const Mat ys = detail::mixed_responses(d);
  const auto z = d.z();
  const Vec candidates = default_bandwidth_candidates(z, opt.cv_candidates);
  const double h_mean = opt.bandwidth_mean.value_or(
      select_bandwidth_cv(z, Mat(ys.col(0)), opt.degree, candidates, opt.cv_folds, opt.cv_seed).bandwidth);
  const double h_probs = opt.bandwidth_probs.value_or(
      select_bandwidth_cv(z, Mat(ys.rightCols(d.n() + 1)), opt.degree_probs, candidates, opt.cv_folds, opt.cv_seed)
          .bandwidth);
  const LocalPolySmoother smoother(z, ys);
  const Vec grid = default_grid(z, opt.grid_points, opt.trim);
  auto sys = detail::functional_from_smoother(smoother, grid, d.n(), h_probs, h_mean, opt);
  for (int j = 0; j <= d.n(); ++j)
    if (ys.col(j + 1).sum() == 0.0)
      sys.warnings.push_back("class " + std::to_string(j) + " never observed; its probability is 0");
  return sys;
}

struct IndependenceInfo {
  int effective_rank = 0;
  double gram_cond = 0.0;
};

/// Effective rank of the weighted Gram matrix of {a_j} over the grid.
inline IndependenceInfo check_linear_independence(const FunctionalSystem& sys, double tol = 1e-8) {
  const auto n = sys.a_curves.cols();
  if (sys.a_curves.rows() < n) throw EstimationError("fewer grid points than unknowns");
  const Mat gram = sys.a_curves.transpose() * sys.weights.asDiagonal() * sys.a_curves;
  Eigen::SelfAdjointEigenSolver<Mat> eig(gram);
  const Vec ev = eig.eigenvalues();
  IndependenceInfo info;
  const double top = ev.size() ? ev(ev.size() - 1) : 0.0;
  if (top <= 0.0) {
    info.gram_cond = std::numeric_limits<double>::infinity();
    return info;
  }
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev(i) > tol * top) ++info.effective_rank;
  info.gram_cond = ev(0) > 0.0 ? top / ev(0) : std::numeric_limits<double>::infinity();
  return info;
}

/// Weighted least squares of b on the a_j curves.
inline ThetaEstimate fit_theta_functional(const FunctionalSystem& sys, double rank_tol = 1e-8) {
  const auto n = sys.a_curves.cols();
  const auto info = check_linear_independence(sys, rank_tol);
  const Vec sw = sys.weights.cwiseSqrt();
  const Mat a = sw.asDiagonal() * sys.a_curves;
  const Vec b = sw.asDiagonal() * sys.b_curve;
  if (info.effective_rank < n)
    throw UnderidentifiedError("a_j curves are linearly dependent (effective rank " +
                                   std::to_string(info.effective_rank) + " < n = " + std::to_string(n) + ")",
                               null_space(a, std::sqrt(rank_tol)));
  ThetaEstimate est;
  est.rank = info.effective_rank;
  est.cond_number = std::sqrt(info.gram_cond);
  est.theta = a.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(b);
  est.residuals = sys.b_curve - sys.a_curves * est.theta;
  est.residual_norm = (sw.asDiagonal() * est.residuals).norm();
  return est;
}

struct SmoothIvResult {
  ThetaEstimate estimate;
  FunctionalSystem system;
};

inline SmoothIvResult estimate_smooth(const MixedDataset& d, const SmoothIvOptions& opt = {}) {
  SmoothIvResult out;
  out.system = build_functional_system(d, opt);
  out.estimate = fit_theta_functional(out.system, opt.rank_tol);
  out.estimate.warnings.insert(out.estimate.warnings.end(), out.system.warnings.begin(), out.system.warnings.end());
  if (opt.bootstrap > 0) {
    // Resample rows with the bandwidths and grid of the full-sample fit.
    LocalPolySmoother smoother(d.z(), detail::mixed_responses(d));
    const Vec grid = default_grid(d.z(), opt.grid_points, opt.trim);
    std::vector<Vec> draws;
    for (int b = 0; b < opt.bootstrap; ++b) {
      auto eng = make_engine(substream_seed(opt.seed, static_cast<std::uint64_t>(b)));
      smoother.set_weights(bootstrap_counts(d.size(), eng));
      try {
        const auto sys = detail::functional_from_smoother(smoother, grid, d.n(), out.system.bandwidth_probs,
                                                          out.system.bandwidth_mean, opt);
        draws.push_back(fit_theta_functional(sys, opt.rank_tol).theta);
      } catch (const EstimationError&) {
        ++out.estimate.boot_failures;
      }
    }
    attach_bootstrap(out.estimate, draws);
  }
  return out;
}

}  // namespace ivcalc
