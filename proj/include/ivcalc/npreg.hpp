#pragma once

// Local polynomial regression with derivatives, cross-validated bandwidths,
// multiclass probability curves and conditional densities.
//
// Kernel: biweight K(u) = (1 - u^2)^2 on |u| < 1 (the 15/16 normalizing
// constant cancels in every estimator here and is omitted).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ivcalc/error.hpp"
#include "ivcalc/linalg.hpp"
#include "ivcalc/random.hpp"

namespace ivcalc {

/// Bandwidths are kernel standard deviations. The biweight kernel
/// (1 - u^2)^2 on |u| < 1 has standard deviation 1/sqrt(7), so its support
/// half-width is sqrt(7) bandwidths.
inline constexpr double kSupportPerSd = 2.6457513110645907;

inline double biweight(double u) noexcept {
  const double t = 1.0 - u * u;
  return t > 0.0 ? t * t : 0.0;
}

/// Smoothing outputs at a set of evaluation points, one column per response.
struct LocalPolyResult {
  Mat values;               ///< points x responses
  Mat derivs;               ///< points x responses
  std::vector<bool> valid;  ///< false where the local design was degenerate
  Vec mass;                 ///< sum of kernel weights at each point (proportional to the density)
};

/// Sorted sample with per-bin moment tables. Fits agree with the direct
/// kernel-weighted least-squares sums up to rounding: bins lying entirely
/// inside the kernel support contribute through a binomial expansion of their
/// local power sums, and bins straddling the support edge are summed point by
/// point.
class LocalPolySmoother {
 public:
  static constexpr int kMaxDegree = 3;

  LocalPolySmoother(std::span<const double> x, const Mat& ys, std::span<const double> weights = {}) {
    const std::size_t n = x.size();
    if (static_cast<std::size_t>(ys.rows()) != n)
      throw ValidationError("smoother: x and responses differ in length");
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    xs_.resize(n);
    ys_ = Mat(n, ys.cols());
    for (std::size_t i = 0; i < n; ++i) {
      xs_[i] = x[order_[i]];
      if (!std::isfinite(xs_[i])) throw ValidationError("smoother: non-finite x");
      ys_.row(static_cast<Eigen::Index>(i)) = ys.row(static_cast<Eigen::Index>(order_[i]));
    }
    set_weights(weights);
  }

  std::size_t size() const noexcept { return xs_.size(); }
  int responses() const noexcept { return static_cast<int>(ys_.cols()); }
  Interval range() const {
    if (xs_.empty()) return {0.0, 0.0};
    return {xs_.front(), xs_.back()};
  }

  /// Replaces the row weights (original sample order); empty means unit
  /// weights. Zero-weight rows drop out of every fit.
  void set_weights(std::span<const double> weights) {
    const std::size_t n = xs_.size();
    if (!weights.empty() && weights.size() != n) throw ValidationError("smoother: weight length mismatch");
    ws_.assign(n, 1.0);
    if (!weights.empty())
      for (std::size_t i = 0; i < n; ++i) {
        ws_[i] = weights[order_[i]];
        if (ws_[i] < 0.0) throw ValidationError("smoother: negative weight");
      }
    distinct_prefix_.assign(n + 1, 0);
    double last = std::numeric_limits<double>::quiet_NaN();
    bool have_last = false;
    for (std::size_t i = 0; i < n; ++i) {
      int fresh = 0;
      if (ws_[i] > 0.0 && (!have_last || xs_[i] != last)) {
        fresh = 1;
        last = xs_[i];
        have_last = true;
      }
      distinct_prefix_[i + 1] = distinct_prefix_[i] + fresh;
    }
    build_bins();
  }

  /// Local polynomial fit of every response at `points` (any order).
  LocalPolyResult fit(int degree, double bandwidth, std::span<const double> points) const {
    if (degree < 1 || degree > kMaxDegree)
      throw ValidationError("local polynomial degree must be in 1.." + std::to_string(kMaxDegree));
    if (!(bandwidth > 0.0)) throw ValidationError("bandwidth must be positive");
    const double half = bandwidth * kSupportPerSd;
    const int p = degree;
    const int r_count = responses();
    const auto g_count = static_cast<Eigen::Index>(points.size());
    LocalPolyResult out;
    out.values = Mat::Constant(g_count, r_count, std::numeric_limits<double>::quiet_NaN());
    out.derivs = out.values;
    out.valid.assign(points.size(), false);
    out.mass = Vec::Zero(g_count);

    Scratch scratch(p, r_count);
    Mat design(p + 1, p + 1);
    Mat rhs(p + 1, r_count);
    for (Eigen::Index gi = 0; gi < g_count; ++gi) {
      const double g = points[static_cast<std::size_t>(gi)];
      const auto lo = static_cast<std::size_t>(
          std::upper_bound(xs_.begin(), xs_.end(), g - half) - xs_.begin());
      const auto hi = static_cast<std::size_t>(
          std::lower_bound(xs_.begin(), xs_.end(), g + half) - xs_.begin());
      if (hi <= lo || distinct_prefix_[hi] - distinct_prefix_[lo] < p + 1) continue;
      scratch.reset();
      accumulate(g, half, lo, hi, scratch);
      for (int a = 0; a <= p; ++a) {
        for (int b = 0; b <= p; ++b) design(a, b) = scratch.s_mom[a + b];
        for (int r = 0; r < r_count; ++r) rhs(a, r) = scratch.t_mom[a * r_count + r];
      }
      Eigen::FullPivLU<Mat> lu(design);
      if (!lu.isInvertible() || lu.rcond() < 1e-13) continue;
      const Mat coef = lu.solve(rhs);
      out.values.row(gi) = coef.row(0);
      out.derivs.row(gi) = coef.row(1) / half;
      out.valid[static_cast<std::size_t>(gi)] = true;
      out.mass(gi) = scratch.s_mom[0];
    }
    return out;
  }

 private:
  static constexpr int kMom = 2 * kMaxDegree + 5;   // u^0 .. u^{2p+4}
  static constexpr int kYMom = kMaxDegree + 5;      // u^0 .. u^{p+4}
  static constexpr std::size_t kMinBinnedSample = 2048;

  struct Bin {
    std::size_t begin = 0;
    std::size_t end = 0;
    double center = 0.0;
    double xmin = 0.0;
    double xmax = 0.0;
  };

  struct Scratch {
    Scratch(int degree, int responses)
        : p(degree), r(responses), t_mom(static_cast<std::size_t>((degree + 1) * responses)),
          yq(static_cast<std::size_t>((degree + 5) * responses)) {}
    void reset() {
      s_mom.fill(0.0);
      std::fill(t_mom.begin(), t_mom.end(), 0.0);
    }
    int p;
    int r;
    std::array<double, 2 * kMaxDegree + 1> s_mom{};
    std::vector<double> t_mom;  // (p+1) x r, row-major
    std::vector<double> yq;     // (p+5) x r, row-major
  };

  void build_bins() {
    bins_.clear();
    const std::size_t n = xs_.size();
    if (n < kMinBinnedSample || xs_.back() <= xs_.front()) return;
    const auto count = std::clamp<std::size_t>(static_cast<std::size_t>(0.25 * std::sqrt(static_cast<double>(n))), 16, 512);
    lo_ = xs_.front();
    width_ = (xs_.back() - xs_.front()) / static_cast<double>(count);
    bins_.resize(count);
    std::size_t idx = 0;
    for (std::size_t b = 0; b < count; ++b) {
      Bin& bin = bins_[b];
      bin.begin = idx;
      const double edge = lo_ + width_ * static_cast<double>(b + 1);
      while (idx < n && (xs_[idx] < edge || b + 1 == count)) ++idx;
      bin.end = idx;
      bin.center = lo_ + width_ * (static_cast<double>(b) + 0.5);
      if (bin.end > bin.begin) {
        bin.xmin = xs_[bin.begin];
        bin.xmax = xs_[bin.end - 1];
      }
    }
    const auto r_count = static_cast<std::size_t>(ys_.cols());
    bin_pow_.assign(count * kMom, 0.0);
    bin_ypow_.assign(count * kYMom * r_count, 0.0);
    for (std::size_t b = 0; b < count; ++b) {
      const Bin& bin = bins_[b];
      double* pw = &bin_pow_[b * kMom];
      double* yw = &bin_ypow_[b * kYMom * r_count];
      for (std::size_t i = bin.begin; i < bin.end; ++i) {
        const double w = ws_[i];
        if (w == 0.0) continue;
        const double t = (xs_[i] - bin.center) / width_;
        double tp = w;
        for (int s = 0; s < kMom; ++s) {
          pw[s] += tp;
          if (s < kYMom)
            for (std::size_t r = 0; r < r_count; ++r)
              yw[s * r_count + r] += tp * ys_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r));
          tp *= t;
        }
      }
    }
  }

  void add_point(std::size_t i, double g, double h, Scratch& sc) const {
    const double w = ws_[i];
    if (w == 0.0) return;
    const double u = (xs_[i] - g) / h;
    const double k = w * biweight(u);
    if (k == 0.0) return;
    double up = k;
    for (int a = 0; a <= 2 * sc.p; ++a) {
      sc.s_mom[a] += up;
      if (a <= sc.p)
        for (int r = 0; r < sc.r; ++r) sc.t_mom[a * sc.r + r] += up * ys_(static_cast<Eigen::Index>(i), r);
      up *= u;
    }
  }

  void accumulate(double g, double h, std::size_t lo, std::size_t hi, Scratch& sc) const {
    if (bins_.empty()) {
      for (std::size_t i = lo; i < hi; ++i) add_point(i, g, h, sc);
      return;
    }
    const int p = sc.p;
    const int r_count = sc.r;
    const auto count = static_cast<long>(bins_.size());
    const long b_lo = std::clamp(static_cast<long>(std::floor((g - h - lo_) / width_)), 0L, count - 1);
    const long b_hi = std::clamp(static_cast<long>(std::floor((g + h - lo_) / width_)), 0L, count - 1);
    const double beta = width_ / h;
    std::array<double, kMom> beta_pow{};
    beta_pow[0] = 1.0;
    for (int s = 1; s < kMom; ++s) beta_pow[s] = beta_pow[s - 1] * beta;
    const int top = 2 * p + 4;
    const int ytop = p + 4;
    std::array<double, kMom> pw{};
    std::array<double, kMom> alpha_pow{};
    std::array<double, kMom> mb{};
    for (long b = b_lo; b <= b_hi; ++b) {
      const Bin& bin = bins_[static_cast<std::size_t>(b)];
      if (bin.end == bin.begin) continue;
      if (bin.xmin < g - h || bin.xmax > g + h) {
        for (std::size_t i = std::max(bin.begin, lo); i < std::min(bin.end, hi); ++i) add_point(i, g, h, sc);
        continue;
      }
      // Whole bin inside the support: u = alpha + beta t with t = (x - center)/width,
      // so sum w u^r = sum_s C(r,s) alpha^(r-s) beta^s sum w t^s.
      const double alpha = (bin.center - g) / h;
      alpha_pow[0] = 1.0;
      for (int s = 1; s <= top; ++s) alpha_pow[s] = alpha_pow[s - 1] * alpha;
      const double* bp = &bin_pow_[static_cast<std::size_t>(b) * kMom];
      const double* yp = &bin_ypow_[static_cast<std::size_t>(b) * kYMom * static_cast<std::size_t>(r_count)];
      for (int s = 0; s <= top; ++s) mb[s] = beta_pow[s] * bp[s];
      std::fill(sc.yq.begin(), sc.yq.begin() + (ytop + 1) * r_count, 0.0);
      for (int r = 0; r <= top; ++r) {
        double acc = 0.0;
        double binom = 1.0;
        for (int s = 0; s <= r; ++s) {
          const double c = binom * alpha_pow[r - s];
          acc += c * mb[s];
          if (r <= ytop) {
            const double cy = c * beta_pow[s];
            for (int q = 0; q < r_count; ++q) sc.yq[r * r_count + q] += cy * yp[s * r_count + q];
          }
          binom = binom * static_cast<double>(r - s) / static_cast<double>(s + 1);
        }
        pw[r] = acc;
      }
      // (1 - u^2)^2 u^a = u^a - 2 u^{a+2} + u^{a+4}
      for (int a = 0; a <= 2 * p; ++a) sc.s_mom[a] += pw[a] - 2.0 * pw[a + 2] + pw[a + 4];
      for (int a = 0; a <= p; ++a)
        for (int q = 0; q < r_count; ++q)
          sc.t_mom[a * r_count + q] +=
              sc.yq[a * r_count + q] - 2.0 * sc.yq[(a + 2) * r_count + q] + sc.yq[(a + 4) * r_count + q];
    }
  }

  std::vector<std::size_t> order_;
  std::vector<double> xs_;
  Mat ys_;
  std::vector<double> ws_;
  std::vector<int> distinct_prefix_;
  std::vector<Bin> bins_;
  double lo_ = 0.0;
  double width_ = 1.0;
  std::vector<double> bin_pow_;
  std::vector<double> bin_ypow_;
};

// ---------------------------------------------------------------------------

/// A smooth conditional-mean estimate and its first derivative on a grid.
struct RegressionFit {
  Vec grid;
  Vec values;
  Vec derivs;
  std::vector<bool> valid;
  Vec mass;
  double bandwidth = 0.0;
  int degree = 1;
  std::vector<std::string> warnings;
};

/// Default evaluation grid: `points` equispaced points over the observed
/// range trimmed by `trim` of its width on each side.
inline Vec default_grid(std::span<const double> x, int points = 101, double trim = 0.025) {
  if (x.empty()) throw ValidationError("cannot build a grid from an empty sample");
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  const double width = *mx - *mn;
  return linspace(*mn + trim * width, *mx - trim * width, points);
}

/// Candidate bandwidths: `count` log-spaced values between 5% and 50% of the
/// sample range.
inline Vec default_bandwidth_candidates(std::span<const double> x, int count = 10) {
  if (x.empty()) throw ValidationError("cannot build bandwidth candidates from an empty sample");
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  const double width = *mx - *mn;
  if (!(width > 0.0)) throw ValidationError("sample has zero range");
  return logspace(0.05 * width, 0.5 * width, count);
}

inline RegressionFit fit_local_poly(std::span<const double> x, std::span<const double> y, int degree,
                                    double bandwidth, const Vec& grid) {
  if (x.size() != y.size()) throw ValidationError("fit_local_poly: x and y differ in length");
  const Mat ys = Eigen::Map<const Vec>(y.data(), static_cast<Eigen::Index>(y.size()));
  const LocalPolySmoother smoother(x, ys);
  const auto res = smoother.fit(degree, bandwidth, std::span<const double>(grid.data(), grid.size()));
  RegressionFit fit;
  fit.grid = grid;
  fit.values = res.values.col(0);
  fit.derivs = res.derivs.col(0);
  fit.valid = res.valid;
  fit.mass = res.mass;
  fit.bandwidth = bandwidth;
  fit.degree = degree;
  const auto masked = std::count(res.valid.begin(), res.valid.end(), false);
  if (masked > 0)
    fit.warnings.push_back(std::to_string(masked) + " grid point(s) masked: insufficient local data");
  return fit;
}

// ---------------------------------------------------------------------------
// Bandwidth selection.

struct CvResult {
  double bandwidth = 0.0;
  Vec candidates;
  Vec scores;  ///< mean squared prediction error per candidate (+inf when infeasible)
};

namespace detail {

/// Cubic Hermite interpolation of a fitted curve at `at`. Returns NaN when the
/// bracketing grid points are not both valid.
inline double hermite_at(const Vec& grid, const LocalPolyResult& res, Eigen::Index col, double at) {
  const auto count = grid.size();
  auto it = std::upper_bound(grid.data(), grid.data() + count, at);
  Eigen::Index right = std::clamp<Eigen::Index>(it - grid.data(), 1, count - 1);
  const Eigen::Index left = right - 1;
  if (!res.valid[left] || !res.valid[right]) return std::numeric_limits<double>::quiet_NaN();
  const double span = grid(right) - grid(left);
  const double t = (at - grid(left)) / span;
  const double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * res.values(left, col) + (t3 - 2 * t2 + t) * span * res.derivs(left, col) +
         (-2 * t3 + 3 * t2) * res.values(right, col) + (t3 - t2) * span * res.derivs(right, col);
}

}  // namespace detail

/// K-fold cross-validation over `candidates`; the score sums squared errors
/// over all response columns. Samples up to 2000 rows are predicted exactly at
/// the held-out points; larger samples predict by cubic Hermite interpolation
/// of each training fit on a 201-point grid.
inline CvResult select_bandwidth_cv(std::span<const double> x, const Mat& ys, int degree, const Vec& candidates,
                                    int folds = 5, std::uint64_t fold_seed = 0) {
  if (candidates.size() < 1) throw ValidationError("bandwidth CV needs at least one candidate");
  CvResult out;
  out.candidates = candidates;
  out.scores = Vec::Constant(candidates.size(), std::numeric_limits<double>::infinity());
  if (candidates.size() == 1) {
    out.bandwidth = candidates(0);
    return out;
  }
  const std::size_t n = x.size();
  if (n < 20) throw ValidationError("bandwidth CV needs at least 20 observations");
  if (folds < 2) throw ValidationError("bandwidth CV needs at least 2 folds");
  const auto label = make_folds(n, folds, fold_seed);
  LocalPolySmoother smoother(x, ys);
  const bool exact = n <= 2000;
  const Vec eval_grid = exact ? Vec() : linspace(smoother.range().lo, smoother.range().hi, 201);
  Vec sse = Vec::Zero(candidates.size());
  std::vector<bool> feasible(static_cast<std::size_t>(candidates.size()), true);
  std::vector<double> weights(n);
  for (int f = 0; f < folds; ++f) {
    std::vector<std::size_t> held;
    for (std::size_t i = 0; i < n; ++i) {
      weights[i] = label[i] == f ? 0.0 : 1.0;
      if (label[i] == f) held.push_back(i);
    }
    smoother.set_weights(weights);
    std::vector<double> held_x;
    for (auto i : held) held_x.push_back(x[i]);
    for (Eigen::Index c = 0; c < candidates.size(); ++c) {
      if (!feasible[static_cast<std::size_t>(c)]) continue;
      if (exact) {
        const auto res = smoother.fit(degree, candidates(c), held_x);
        for (std::size_t h = 0; h < held.size(); ++h) {
          if (!res.valid[h]) {
            feasible[static_cast<std::size_t>(c)] = false;
            break;
          }
          const auto row = static_cast<Eigen::Index>(held[h]);
          sse(c) += (ys.row(row) - res.values.row(static_cast<Eigen::Index>(h))).squaredNorm();
        }
      } else {
        const auto res = smoother.fit(degree, candidates(c), std::span<const double>(eval_grid.data(), eval_grid.size()));
        for (std::size_t h = 0; h < held.size() && feasible[static_cast<std::size_t>(c)]; ++h) {
          const auto row = static_cast<Eigen::Index>(held[h]);
          for (Eigen::Index r = 0; r < ys.cols(); ++r) {
            const double pred = detail::hermite_at(eval_grid, res, r, held_x[h]);
            if (std::isnan(pred)) {
              feasible[static_cast<std::size_t>(c)] = false;
              break;
            }
            sse(c) += (ys(row, r) - pred) * (ys(row, r) - pred);
          }
        }
      }
    }
  }
  // Ties go to the larger bandwidth: scan from largest to smallest and only
  // move on a strict improvement.
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(candidates.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return candidates(a) > candidates(b); });
  double best = std::numeric_limits<double>::infinity();
  Eigen::Index best_idx = -1;
  for (auto c : idx) {
    if (!feasible[static_cast<std::size_t>(c)]) continue;
    out.scores(c) = sse(c) / static_cast<double>(n);
    if (best_idx < 0 || out.scores(c) < best - 1e-12 * std::abs(best)) {
      best = out.scores(c);
      best_idx = c;
    }
  }
  if (best_idx < 0) throw EstimationError("bandwidth CV: every candidate lacks local data somewhere");
  out.bandwidth = candidates(best_idx);
  return out;
}

inline CvResult select_bandwidth_cv(std::span<const double> x, std::span<const double> y, int degree,
                                    const Vec& candidates, int folds = 5, std::uint64_t fold_seed = 0) {
  if (x.size() != y.size()) throw ValidationError("select_bandwidth_cv: x and y differ in length");
  const Mat ys = Eigen::Map<const Vec>(y.data(), static_cast<Eigen::Index>(y.size()));
  return select_bandwidth_cv(x, ys, degree, candidates, folds, fold_seed);
}

// ---------------------------------------------------------------------------
// Multiclass probabilities.

/// Class-probability curves q_j(z), j = 0..n, and derivatives on a grid.
struct ProbFit {
  Vec grid;
  Mat probs;   ///< grid x (n+1), rows on the simplex
  Mat dprobs;  ///< grid x (n+1), rows sum to zero
  std::vector<bool> valid;
  double bandwidth = 0.0;
  std::vector<std::string> warnings;
};

/// Clip raw per-class fits to [0, 1] and renormalize each row to sum to one,
/// carrying the derivatives through the same map. Rows whose clipped sum
/// vanishes are marked invalid.
inline void project_to_simplex(Mat& values, Mat& derivs, std::vector<bool>& valid) {
  for (Eigen::Index g = 0; g < values.rows(); ++g) {
    if (!valid[static_cast<std::size_t>(g)]) continue;
    double sum = 0.0, dsum = 0.0;
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      const double raw = values(g, j);
      if (raw <= 0.0) {
        values(g, j) = 0.0;
        derivs(g, j) = 0.0;
      } else if (raw >= 1.0) {
        values(g, j) = 1.0;
        derivs(g, j) = 0.0;
      }
      sum += values(g, j);
      dsum += derivs(g, j);
    }
    if (!(sum > 0.0)) {
      valid[static_cast<std::size_t>(g)] = false;
      continue;
    }
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      const double c = values(g, j);
      values(g, j) = c / sum;
      derivs(g, j) = (derivs(g, j) * sum - c * dsum) / (sum * sum);
    }
  }
}

/// Indicator matrix N x (n+1) of class codes 0..n.
inline Mat class_indicators(std::span<const int> codes, int n) {
  Mat ind = Mat::Zero(static_cast<Eigen::Index>(codes.size()), n + 1);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] < 0 || codes[i] > n) throw ValidationError("class code out of range");
    ind(static_cast<Eigen::Index>(i), codes[i]) = 1.0;
  }
  return ind;
}

/// Per-class local-linear fits of the class indicators, projected onto the
/// simplex. `degree` is exposed for callers that want a higher-order fit.
inline ProbFit fit_multiclass_probs(std::span<const double> z, std::span<const int> x, int n, double bandwidth,
                                    const Vec& grid, int degree = 1) {
  if (z.size() != x.size()) throw ValidationError("fit_multiclass_probs: z and x differ in length");
  const Mat ind = class_indicators(x, n);
  const LocalPolySmoother smoother(z, ind);
  auto res = smoother.fit(degree, bandwidth, std::span<const double>(grid.data(), grid.size()));
  ProbFit fit;
  fit.grid = grid;
  fit.bandwidth = bandwidth;
  for (int j = 0; j <= n; ++j)
    if (ind.col(j).sum() == 0.0)
      fit.warnings.push_back("class " + std::to_string(j) + " never observed; its probability is 0");
  project_to_simplex(res.values, res.derivs, res.valid);
  fit.probs = std::move(res.values);
  fit.dprobs = std::move(res.derivs);
  fit.valid = std::move(res.valid);
  const auto masked = std::count(fit.valid.begin(), fit.valid.end(), false);
  if (masked > 0)
    fit.warnings.push_back(std::to_string(masked) + " grid point(s) masked: insufficient local data");
  return fit;
}

// ---------------------------------------------------------------------------
// Conditional density of X given Z.

/// K(i, j) approximates the density of X at x_grid[i] given Z = z_grid[j].
struct CondDensityKernel {
  Vec x_grid;
  Vec z_grid;
  Mat K;
  Vec x_weights;            ///< trapezoid quadrature weights on x_grid
  std::vector<bool> valid;  ///< per z_grid column
};

/// Product-kernel estimate: a biweight kernel in x times local weights in z,
/// either plain kernel weights (z_degree 0) or local-linear equivalent
/// weights (z_degree 1, free of the first-order bias near the ends of the Z
/// range). Negative entries are clipped to zero and each valid column is
/// renormalized to integrate to one over x_grid. Columns with an effective
/// local sample below 10 are masked.
inline CondDensityKernel fit_cond_density(std::span<const double> x, std::span<const double> z, const Vec& x_grid,
                                          const Vec& z_grid, double hx, double hz, int z_degree = 1) {
  if (z_degree != 0 && z_degree != 1) throw ValidationError("fit_cond_density: z_degree must be 0 or 1");
  if (x.size() != z.size()) throw ValidationError("fit_cond_density: x and z differ in length");
  if (x.size() < 100) throw ValidationError("fit_cond_density needs at least 100 observations");
  if (!(hx > 0.0) || !(hz > 0.0)) throw ValidationError("fit_cond_density: bandwidths must be positive");
  if (x_grid.size() < 2) throw ValidationError("fit_cond_density: x grid needs >= 2 points");
  for (Eigen::Index i = 1; i < x_grid.size(); ++i)
    if (!(x_grid(i) > x_grid(i - 1))) throw ValidationError("fit_cond_density: x grid must increase");
  const double wx = hx * kSupportPerSd, wz_half = hz * kSupportPerSd;
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return z[a] < z[b]; });
  std::vector<double> zs(x.size()), xs(x.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    zs[i] = z[order[i]];
    xs[i] = x[order[i]];
  }
  CondDensityKernel out;
  out.x_grid = x_grid;
  out.z_grid = z_grid;
  out.x_weights = trapezoid_weights(x_grid);
  out.K = Mat::Zero(x_grid.size(), z_grid.size());
  out.valid.assign(static_cast<std::size_t>(z_grid.size()), false);
  const double* xg = x_grid.data();
  const auto nx = x_grid.size();
  for (Eigen::Index j = 0; j < z_grid.size(); ++j) {
    const double zj = z_grid(j);
    const auto lo = std::upper_bound(zs.begin(), zs.end(), zj - wz_half) - zs.begin();
    const auto hi = std::lower_bound(zs.begin(), zs.end(), zj + wz_half) - zs.begin();
    double wsum = 0.0, wsq = 0.0, s1 = 0.0, s2 = 0.0;
    for (auto l = lo; l < hi; ++l) {
      const double u = (zs[l] - zj) / wz_half;
      const double wz = biweight(u);
      wsum += wz;
      wsq += wz * wz;
      s1 += wz * u;
      s2 += wz * u * u;
    }
    const double det = wsum * s2 - s1 * s1;
    if (wsum <= 0.0 || wsum * wsum / wsq < 10.0 || (z_degree == 1 && !(det > 1e-12 * wsum * wsum))) continue;
    for (auto l = lo; l < hi; ++l) {
      const double u = (zs[l] - zj) / wz_half;
      double wz = biweight(u);
      if (wz == 0.0) continue;
      if (z_degree == 1) wz *= (s2 - u * s1) / det * wsum;
      const auto i0 = std::upper_bound(xg, xg + nx, xs[l] - wx) - xg;
      const auto i1 = std::lower_bound(xg, xg + nx, xs[l] + wx) - xg;
      for (auto i = i0; i < i1; ++i) out.K(i, j) += wz * biweight((xg[i] - xs[l]) / wx);
    }
    out.K.col(j) = out.K.col(j).cwiseMax(0.0);
    const double integral = out.x_weights.dot(out.K.col(j));
    if (!(integral > 0.0)) {
      out.K.col(j).setZero();
      continue;
    }
    out.K.col(j) /= integral;
    out.valid[static_cast<std::size_t>(j)] = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Multivariate local-linear regression with a product kernel.

struct MultiLinearFit {
  Mat values;              ///< points x responses
  std::vector<Mat> grads;  ///< per evaluation point: m x responses
  std::vector<bool> valid;
};

/// Local-linear fit of every column of `ys` on the m-dimensional `z`, with
/// product biweight kernel and per-coordinate bandwidths. The gradient at a
/// point is the vector of linear coefficients.
class MultiLinearSmoother {
 public:
  MultiLinearSmoother(const Mat& z, const Mat& ys) : z_(z), ys_(ys) {
    if (z.rows() != ys.rows()) throw ValidationError("multivariate smoother: row counts differ");
    order_.resize(static_cast<std::size_t>(z.rows()));
    std::iota(order_.begin(), order_.end(), Eigen::Index{0});
    std::stable_sort(order_.begin(), order_.end(), [&](auto a, auto b) { return z(a, 0) < z(b, 0); });
    first_.resize(order_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) first_[i] = z(order_[i], 0);
    weights_.assign(order_.size(), 1.0);
  }

  void set_weights(std::span<const double> w) {
    if (w.empty()) {
      weights_.assign(order_.size(), 1.0);
      return;
    }
    if (w.size() != order_.size()) throw ValidationError("multivariate smoother: weight length mismatch");
    for (std::size_t i = 0; i < order_.size(); ++i) weights_[i] = w[static_cast<std::size_t>(order_[i])];
  }

  MultiLinearFit fit(const Vec& bandwidths, const Mat& points) const {
    const auto m = z_.cols();
    if (bandwidths.size() != m || points.cols() != m)
      throw ValidationError("multivariate smoother: dimension mismatch");
    if ((bandwidths.array() <= 0.0).any()) throw ValidationError("bandwidths must be positive");
    const Vec half = bandwidths * kSupportPerSd;
    const auto r_count = ys_.cols();
    MultiLinearFit out;
    out.values = Mat::Constant(points.rows(), r_count, std::numeric_limits<double>::quiet_NaN());
    out.grads.assign(static_cast<std::size_t>(points.rows()), Mat());
    out.valid.assign(static_cast<std::size_t>(points.rows()), false);
    Mat design(m + 1, m + 1);
    Mat rhs(m + 1, r_count);
    Vec basis(m + 1);
    for (Eigen::Index g = 0; g < points.rows(); ++g) {
      const double c0 = points(g, 0);
      const auto lo = std::upper_bound(first_.begin(), first_.end(), c0 - half(0)) - first_.begin();
      const auto hi = std::lower_bound(first_.begin(), first_.end(), c0 + half(0)) - first_.begin();
      design.setZero();
      rhs.setZero();
      double wsum = 0.0, wsq = 0.0;
      for (auto l = lo; l < hi; ++l) {
        const double wl = weights_[static_cast<std::size_t>(l)];
        if (wl == 0.0) continue;
        const auto row = order_[static_cast<std::size_t>(l)];
        double k = wl;
        basis(0) = 1.0;
        for (Eigen::Index c = 0; c < m && k > 0.0; ++c) {
          const double u = (z_(row, c) - points(g, c)) / half(c);
          k *= biweight(u);
          basis(c + 1) = u;
        }
        if (k == 0.0) continue;
        wsum += k;
        wsq += k * k;
        design.noalias() += k * basis * basis.transpose();
        rhs.noalias() += k * basis * ys_.row(row);
      }
      if (wsum <= 0.0 || wsum * wsum / wsq < static_cast<double>(2 * (m + 1))) continue;
      Eigen::FullPivLU<Mat> lu(design);
      if (!lu.isInvertible() || lu.rcond() < 1e-10) continue;
      const Mat coef = lu.solve(rhs);
      out.values.row(g) = coef.row(0);
      Mat grad(m, r_count);
      for (Eigen::Index c = 0; c < m; ++c) grad.row(c) = coef.row(c + 1) / half(c);
      out.grads[static_cast<std::size_t>(g)] = std::move(grad);
      out.valid[static_cast<std::size_t>(g)] = true;
    }
    return out;
  }

 private:
  Mat z_;
  Mat ys_;
  std::vector<Eigen::Index> order_;
  std::vector<double> first_;
  std::vector<double> weights_;
};

/// Tensor grid with `per_axis` points per coordinate over the observed ranges
/// trimmed by `trim` of their widths. Only m <= 2 is supported.
inline Mat default_tensor_grid(const Mat& z, int per_axis = 21, double trim = 0.025) {
  const auto m = z.cols();
  if (m > 2) throw ValidationError("default tensor grid supports m <= 2; supply a grid for m > 2");
  if (z.rows() == 0) throw ValidationError("cannot build a grid from an empty sample");
  std::vector<Vec> axes;
  for (Eigen::Index c = 0; c < m; ++c) {
    const double lo = z.col(c).minCoeff(), hi = z.col(c).maxCoeff();
    axes.push_back(linspace(lo + trim * (hi - lo), hi - trim * (hi - lo), per_axis));
  }
  if (m == 1) return axes[0];
  Mat grid(per_axis * per_axis, 2);
  for (int i = 0; i < per_axis; ++i)
    for (int j = 0; j < per_axis; ++j) grid.row(i * per_axis + j) << axes[0](i), axes[1](j);
  return grid;
}

/// K-fold CV over a common scale factor: bandwidth_c = scale * range_c. Each
/// fold scores at most `max_eval` held-out points (deterministic subsample).
/// Ties go to the larger scale.
inline double select_scale_cv_multi(const Mat& z, const Mat& ys, Vec scales, int folds = 5,
                                    std::uint64_t fold_seed = 0, std::size_t max_eval = 300) {
  if (scales.size() < 1) throw ValidationError("bandwidth CV needs at least one candidate");
  if (scales.size() == 1) return scales(0);
  std::sort(scales.begin(), scales.end());
  const auto n = static_cast<std::size_t>(z.rows());
  if (n < 20) throw ValidationError("bandwidth CV needs at least 20 observations");
  const Vec ranges = z.colwise().maxCoeff() - z.colwise().minCoeff();
  const auto label = make_folds(n, folds, fold_seed);
  MultiLinearSmoother smoother(z, ys);
  Vec sse = Vec::Zero(scales.size());
  std::vector<bool> feasible(static_cast<std::size_t>(scales.size()), true);
  std::vector<double> w(n);
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> held;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = label[i] == f ? 0.0 : 1.0;
      if (label[i] == f) held.push_back(static_cast<Eigen::Index>(i));
    }
    if (held.size() > max_eval) {
      std::vector<Eigen::Index> sub;
      const double stride = static_cast<double>(held.size()) / static_cast<double>(max_eval);
      for (std::size_t k = 0; k < max_eval; ++k) sub.push_back(held[static_cast<std::size_t>(k * stride)]);
      held = std::move(sub);
    }
    smoother.set_weights(w);
    Mat pts(static_cast<Eigen::Index>(held.size()), z.cols());
    for (std::size_t h = 0; h < held.size(); ++h) pts.row(static_cast<Eigen::Index>(h)) = z.row(held[h]);
    for (Eigen::Index s = 0; s < scales.size(); ++s) {
      if (!feasible[static_cast<std::size_t>(s)]) continue;
      const auto res = smoother.fit(scales(s) * ranges, pts);
      for (std::size_t h = 0; h < held.size(); ++h) {
        if (!res.valid[h]) {
          feasible[static_cast<std::size_t>(s)] = false;
          break;
        }
        sse(s) += (ys.row(held[h]) - res.values.row(static_cast<Eigen::Index>(h))).squaredNorm();
      }
    }
  }
  double best = std::numeric_limits<double>::infinity();
  double chosen = -1.0;
  for (Eigen::Index s = scales.size() - 1; s >= 0; --s) {
    if (!feasible[static_cast<std::size_t>(s)]) continue;
    if (chosen < 0.0 || sse(s) < best - 1e-12 * std::abs(best)) {
      best = sse(s);
      chosen = scales(s);
    }
  }
  if (chosen < 0.0) throw EstimationError("bandwidth CV: every candidate lacks local data somewhere");
  return chosen;
}

}  // namespace ivcalc
