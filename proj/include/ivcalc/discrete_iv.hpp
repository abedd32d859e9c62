#pragma once

// Discrete X, discrete Z: theta from the contrast system A theta = b.

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "ivcalc/dataset.hpp"
#include "ivcalc/error.hpp"
#include "ivcalc/estimate.hpp"
#include "ivcalc/linalg.hpp"
#include "ivcalc/pairs.hpp"
#include "ivcalc/random.hpp"

namespace ivcalc {

/// Rows: one per instrument-level pair (higher level minus lower level).
/// a_sj = P(X = x_j | z_hi) - P(X = x_j | z_lo) for j = 1..n, and
/// b_s = E(Y | z_hi) - E(Y | z_lo).
struct ContrastSystem {
  Mat A;
  Vec b;
  Vec b_var;  ///< sampling variance of each b_s, ignoring the noise in A
  std::vector<std::pair<int, int>> pair_labels;
};

inline ContrastSystem build_contrasts(const GroupStats& stats, const PairSet& s0) {
  const auto m = static_cast<int>(stats.group_counts.size());
  s0.validate_for(m);
  const auto n = stats.cond_prob_x.cols() - 1;
  ContrastSystem sys;
  const auto rows = static_cast<Eigen::Index>(s0.size());
  sys.A = Mat(rows, n);
  sys.b = Vec(rows);
  sys.b_var = Vec(rows);
  for (Eigen::Index s = 0; s < rows; ++s) {
    const auto pair = s0.pairs()[static_cast<std::size_t>(s)];
    const int hi = pair.first - 1;
    const int lo = pair.second - 1;
    for (int level : {hi, lo})
      if (stats.group_counts[static_cast<std::size_t>(level)] == 0)
        throw EstimationError("pair " + PairSet::label(pair) + " touches empty instrument level " +
                              std::to_string(level + 1));
    // Baseline column x_0 is excluded: I(X = x_0) = 1 - sum_j I(X = x_j).
    sys.A.row(s) = stats.cond_prob_x.row(hi).tail(n) - stats.cond_prob_x.row(lo).tail(n);
    sys.b(s) = stats.cond_mean_y(hi) - stats.cond_mean_y(lo);
    sys.b_var(s) = stats.cond_var_y(hi) / static_cast<double>(stats.group_counts[static_cast<std::size_t>(hi)]) +
                   stats.cond_var_y(lo) / static_cast<double>(stats.group_counts[static_cast<std::size_t>(lo)]);
    sys.pair_labels.push_back(pair);
  }
  return sys;
}

inline RankInfo check_rank(const ContrastSystem& sys, double tol = 1e-8) { return numerical_rank(sys.A, tol); }

struct SolveOptions {
  double rank_tol = 1e-8;
  double weak_cond = 1e6;
  /// Weight rows by the inverse sampling variance of b_s.
  bool weighted = false;
};

inline ThetaEstimate solve_theta(const ContrastSystem& sys, const SolveOptions& opt = {}) {
  const auto n = sys.A.cols();
  const auto rows = sys.A.rows();
  Mat a = sys.A;
  Vec b = sys.b;
  if (opt.weighted) {
    for (Eigen::Index s = 0; s < rows; ++s) {
      if (!(sys.b_var(s) > 0.0)) throw EstimationError("weighted solve needs positive row variances");
      const double w = 1.0 / std::sqrt(sys.b_var(s));
      a.row(s) *= w;
      b(s) *= w;
    }
  }
  const RankInfo info = numerical_rank(a, opt.rank_tol);
  if (info.rank < n)
    throw UnderidentifiedError("contrast matrix has rank " + std::to_string(info.rank) + " < n = " +
                                   std::to_string(n) + "; see null_space() for unidentified directions",
                               null_space(a, opt.rank_tol));
  ThetaEstimate est;
  est.rank = info.rank;
  est.cond_number = info.cond_number;
  est.theta = a.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(b);
  est.residuals = sys.b - sys.A * est.theta;
  est.residual_norm = est.residuals.norm();
  if (info.cond_number > opt.weak_cond)
    est.warnings.push_back("weak instrument: contrast matrix condition number " +
                           std::to_string(info.cond_number));
  if (rows > n && sys.b_var.size() == rows) {
    // Overidentified: compare the misfit with the sampling noise in b.
    const double noise = sys.b_var.sum();
    if (noise > 0.0 && est.residuals.squaredNorm() > 10.0 * noise)
      est.warnings.push_back("overidentified residual is large relative to sampling noise; "
                             "the zero-correlation condition may fail for some pairs");
  }
  return est;
}

struct DiscreteIvOptions {
  /// Empty means all pairs.
  std::optional<PairSet> pairs;
  SolveOptions solve;
  /// Row-resampling replications for percentile intervals; 0 turns it off.
  int bootstrap = 500;
  std::uint64_t seed = 0;
};

inline ThetaEstimate estimate_discrete(const DiscreteDataset& d, const DiscreteIvOptions& opt = {}) {
  if (d.size() == 0) throw EstimationError("dataset is empty");
  const PairSet pairs = opt.pairs.value_or(PairSet::all_pairs(d.m()));
  const GroupStats stats = group_stats(d);
  auto est = solve_theta(build_contrasts(stats, pairs), opt.solve);
  if (opt.bootstrap > 0) {
    std::vector<Vec> draws;
    for (int b = 0; b < opt.bootstrap; ++b) {
      auto eng = make_engine(substream_seed(opt.seed, static_cast<std::uint64_t>(b)));
      const auto w = bootstrap_counts(d.size(), eng);
      try {
        draws.push_back(solve_theta(build_contrasts(group_stats(d, w), pairs), opt.solve).theta);
      } catch (const EstimationError&) {
        ++est.boot_failures;
      }
    }
    attach_bootstrap(est, draws);
  }
  return est;
}

/// Difference of mean Y between each non-baseline X level and the baseline,
/// ignoring Z: the confounded comparison an instrument is meant to fix.
inline Vec naive_group_difference(std::span<const double> y, std::span<const int> x, int n) {
  Vec sum = Vec::Zero(n + 1), count = Vec::Zero(n + 1);
  for (std::size_t i = 0; i < y.size(); ++i) {
    sum(x[i]) += y[i];
    count(x[i]) += 1.0;
  }
  if (count(0) == 0.0) throw EstimationError("no baseline observations");
  Vec out(n);
  for (int j = 1; j <= n; ++j) {
    if (count(j) == 0.0) throw EstimationError("no observations at X level " + std::to_string(j));
    out(j - 1) = sum(j) / count(j) - sum(0) / count(0);
  }
  return out;
}

}  // namespace ivcalc
