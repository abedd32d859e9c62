#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "ivcalc/error.hpp"
#include "ivcalc/linalg.hpp"
#include "ivcalc/random.hpp"

namespace ivcalc {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// Pearson correlation of a bivariate normal whose Spearman correlation is
/// `rank_corr`.
inline double gaussian_corr_from_rank(double rank_corr) {
  return 2.0 * std::sin(std::numbers::pi * rank_corr / 6.0);
}

/// Draw from Normal(mean, sd) conditioned on [lo, hi] by rejection.
inline double truncated_normal(Engine& eng, double mean, double sd, double lo, double hi) {
  std::normal_distribution<double> normal(mean, sd);
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const double v = normal(eng);
    if (v >= lo && v <= hi) return v;
  }
  throw ValidationError("truncated normal: acceptance region has negligible mass");
}

/// Continuous univariate law for scalar latents.
struct ScalarLaw {
  enum class Kind { Normal, Uniform };
  Kind kind = Kind::Normal;
  double a = 0.0;  ///< mean (Normal) or lower end (Uniform)
  double b = 1.0;  ///< sd (Normal) or upper end (Uniform)

  static ScalarLaw normal(double mean, double sd) { return {Kind::Normal, mean, sd}; }
  static ScalarLaw uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }

  double cdf(double x) const {
    if (kind == Kind::Normal) return normal_cdf((x - a) / b);
    if (x <= a) return 0.0;
    if (x >= b) return 1.0;
    return (x - a) / (b - a);
  }
  double pdf(double x) const {
    if (kind == Kind::Normal) return normal_pdf((x - a) / b) / b;
    return (x >= a && x <= b) ? 1.0 / (b - a) : 0.0;
  }
  /// Maps a standard-normal score to this law (used by the Gaussian copula).
  /// Normal laws are truncated at +/-6 sd so that simulated variables live in
  /// bounded rectangles.
  double from_gaussian_score(double g) const {
    if (kind == Kind::Normal) return a + b * std::clamp(g, -6.0, 6.0);
    return a + (b - a) * normal_cdf(g);
  }
  double mean() const { return kind == Kind::Normal ? a : 0.5 * (a + b); }
  double variance() const { return kind == Kind::Normal ? b * b : (b - a) * (b - a) / 12.0; }
  Interval support() const {
    return kind == Kind::Normal ? Interval{a - 6.0 * b, a + 6.0 * b} : Interval{a, b};
  }
  void validate() const {
    if (!std::isfinite(a) || !std::isfinite(b)) throw ValidationError("law parameters must be finite");
    if (kind == Kind::Normal && b <= 0.0) throw ValidationError("normal law needs sd > 0");
    if (kind == Kind::Uniform && b <= a) throw ValidationError("uniform law needs lo < hi");
  }
};

/// Gauss-Hermite nodes and weights for E[f(G)], G ~ Normal(0, 1)
/// (probabilists' normalization, weights sum to one). Golub-Welsch.
inline std::pair<Vec, Vec> gauss_hermite_normal(int count) {
  Mat jacobi = Mat::Zero(count, count);
  for (int i = 1; i < count; ++i) {
    jacobi(i, i - 1) = std::sqrt(static_cast<double>(i));
    jacobi(i - 1, i) = jacobi(i, i - 1);
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(jacobi);
  Vec nodes = eig.eigenvalues();
  Vec weights = eig.eigenvectors().row(0).transpose().array().square();
  return {nodes, weights};
}

/// Percentile of a sample by linear interpolation between order statistics.
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

inline MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd out;
  if (v.empty()) return out;
  double s = 0.0;
  for (double x : v) s += x;
  out.mean = s / static_cast<double>(v.size());
  if (v.size() < 2) return out;
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return out;
}

}  // namespace ivcalc
