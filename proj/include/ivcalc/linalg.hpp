#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace ivcalc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Closed interval [lo, hi].
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const noexcept { return v >= lo && v <= hi; }
  double width() const noexcept { return hi - lo; }
};

/// Singular-value summary of a matrix at a relative threshold.
struct RankInfo {
  int rank = 0;
  /// Largest over smallest of the leading min(rows, cols) singular values;
  /// +inf when the smallest is zero.
  double cond_number = std::numeric_limits<double>::infinity();
};

inline RankInfo numerical_rank(const Mat& a, double rel_tol) {
  RankInfo info;
  if (a.size() == 0) return info;
  Eigen::JacobiSVD<Mat> svd(a);
  const Vec& s = svd.singularValues();
  const double smax = s.size() ? s(0) : 0.0;
  if (smax <= 0.0) return info;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * smax) ++info.rank;
  const double smin = s(s.size() - 1);
  info.cond_number = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
  return info;
}

/// Orthonormal basis of the right null space (columns of V whose singular
/// value is at or below rel_tol times the largest).
inline Mat null_space(const Mat& a, double rel_tol) {
  Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeFullV);
  const Vec& s = svd.singularValues();
  const double smax = s.size() ? s(0) : 0.0;
  const Eigen::Index cols = a.cols();
  Eigen::Index keep = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (smax > 0.0 && s(i) > rel_tol * smax) ++keep;
  return svd.matrixV().rightCols(cols - keep);
}

/// Equispaced points on [lo, hi], both ends included.
inline Vec linspace(double lo, double hi, int count) {
  Vec out(count);
  if (count == 1) {
    out(0) = lo;
    return out;
  }
  for (int i = 0; i < count; ++i)
    out(i) = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  return out;
}

/// Logarithmically spaced points on [lo, hi].
inline Vec logspace(double lo, double hi, int count) {
  Vec out = linspace(std::log(lo), std::log(hi), count);
  for (auto& v : out) v = std::exp(v);
  return out;
}

/// Trapezoid quadrature weights for an increasing grid.
inline Vec trapezoid_weights(const Vec& grid) {
  const Eigen::Index n = grid.size();
  Vec w = Vec::Zero(n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const double half = 0.5 * (grid(i + 1) - grid(i));
    w(i) += half;
    w(i + 1) += half;
  }
  return w;
}

}  // namespace ivcalc
