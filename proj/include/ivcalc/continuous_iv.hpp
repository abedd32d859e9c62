#pragma once

// Continuous X and Z: phi(z) = E(dY/dX | Z = z) from a(z) phi(z) = b(z),
// Tikhonov recovery of s'(x) from phi, the constant-effect average, and the
// linear ratio estimator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
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

enum class MaskReason { None, WeakDenominator, RankDeficient, Boundary };

inline std::string to_string(MaskReason r) {
  switch (r) {
    case MaskReason::None: return "none";
    case MaskReason::WeakDenominator: return "weak-denominator";
    case MaskReason::RankDeficient: return "rank-deficient";
    case MaskReason::Boundary: return "boundary";
  }
  return "unknown";
}

struct PhiCurve {
  Mat grid;                 ///< points x m
  Mat phi;                  ///< points x n, NaN where masked
  std::vector<bool> valid;
  std::vector<MaskReason> reason;
  std::vector<Mat> a_vals;  ///< per point, m x n
  Mat b_vals;               ///< points x m
  double bandwidth_x = 0.0;
  double bandwidth_y = 0.0;
  std::vector<std::string> warnings;

  std::size_t valid_count() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true)); }
};

/// phi = b / a where |a| > denom_tol * max |a|. Non-finite a or b marks the
/// point as a boundary failure.
inline PhiCurve phi_from_ab_scalar(const Vec& grid, const Vec& a, const Vec& b, double denom_tol = 0.1) {
  if (a.size() != grid.size() || b.size() != grid.size()) throw ValidationError("phi: a, b and grid differ in length");
  if (!(denom_tol >= 0.0)) throw ValidationError("denom_tol must be nonnegative");
  const auto g = grid.size();
  PhiCurve out;
  out.grid = grid;
  out.phi = Mat::Constant(g, 1, std::numeric_limits<double>::quiet_NaN());
  out.valid.assign(static_cast<std::size_t>(g), false);
  out.reason.assign(static_cast<std::size_t>(g), MaskReason::Boundary);
  out.a_vals.assign(static_cast<std::size_t>(g), Mat::Zero(1, 1));
  out.b_vals = b;
  double amax = 0.0;
  for (Eigen::Index i = 0; i < g; ++i) {
    out.a_vals[static_cast<std::size_t>(i)](0, 0) = a(i);
    if (std::isfinite(a(i)) && std::isfinite(b(i))) amax = std::max(amax, std::abs(a(i)));
  }
  for (Eigen::Index i = 0; i < g; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (!std::isfinite(a(i)) || !std::isfinite(b(i))) continue;
    if (!(std::abs(a(i)) > denom_tol * amax) || a(i) == 0.0) {
      out.reason[k] = MaskReason::WeakDenominator;
      continue;
    }
    out.phi(i, 0) = b(i) / a(i);
    out.valid[k] = true;
    out.reason[k] = MaskReason::None;
  }
  return out;
}

/// Pointwise least squares of a(z) phi = b(z). A point is rank deficient when
/// its n-th singular value is at most rank_tol times the largest singular
/// value seen anywhere on the grid. For m = n = 1 this is the scalar rule.
inline PhiCurve phi_from_ab_vector(const Mat& grid, const std::vector<Mat>& a, const Mat& b, double rank_tol = 0.1) {
  const auto g = grid.rows();
  if (static_cast<Eigen::Index>(a.size()) != g || b.rows() != g) throw ValidationError("phi: a, b and grid differ in length");
  if (!(rank_tol >= 0.0)) throw ValidationError("rank_tol must be nonnegative");
  if (g == 0) throw ValidationError("phi: empty grid");
  const auto m = a.front().rows(), n = a.front().cols();
  if (m < n) throw ValidationError("vector phi needs m >= n");
  PhiCurve out;
  out.grid = grid;
  out.phi = Mat::Constant(g, n, std::numeric_limits<double>::quiet_NaN());
  out.valid.assign(static_cast<std::size_t>(g), false);
  out.reason.assign(static_cast<std::size_t>(g), MaskReason::Boundary);
  out.a_vals = a;
  out.b_vals = b;
  std::vector<Vec> sv(static_cast<std::size_t>(g));
  double smax = 0.0;
  for (Eigen::Index i = 0; i < g; ++i) {
    const auto& ai = a[static_cast<std::size_t>(i)];
    if (ai.rows() != m || ai.cols() != n || b.cols() != m) throw ValidationError("phi: inconsistent a(z) shapes");
    if (!ai.allFinite() || !b.row(i).allFinite()) continue;
    sv[static_cast<std::size_t>(i)] = ai.jacobiSvd().singularValues();
    smax = std::max(smax, sv[static_cast<std::size_t>(i)](0));
  }
  for (Eigen::Index i = 0; i < g; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (sv[k].size() == 0) continue;
    if (!(sv[k](n - 1) > rank_tol * smax) || sv[k](n - 1) == 0.0) {
      out.reason[k] = MaskReason::RankDeficient;
      continue;
    }
    const Vec bi = b.row(i).transpose();
    out.phi.row(i) = a[k].jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(bi).transpose();
    out.valid[k] = true;
    out.reason[k] = MaskReason::None;
  }
  return out;
}

struct ContinuousIvOptions {
  int degree = 2;
  /// Scalar Z: absolute bandwidths. Vector Z: scale factors times each
  /// coordinate's range. Unset values are cross-validated.
  std::optional<double> bandwidth_x;
  std::optional<double> bandwidth_y;
  int grid_points = 101;
  double trim = 0.025;
  std::optional<Mat> grid;  ///< caller-supplied evaluation points (points x m)
  int tensor_points = 21;
  int cv_folds = 5;
  int cv_candidates = 10;
  std::uint64_t cv_seed = 0;
  double denom_tol = 0.1;
  double rank_tol = 0.1;
};

namespace detail {

inline Mat continuous_responses(const ContinuousDataset& d) {
  Mat ys(static_cast<Eigen::Index>(d.size()), d.n() + 1);
  ys.col(0) = d.y();
  ys.rightCols(d.n()) = d.x();
  return ys;
}

struct ScalarBandwidths {
  double x = 0.0;
  double y = 0.0;
};

/// One bandwidth for the X and Y fits unless set explicitly, chosen by CV on
/// sd-standardized responses so that the choice is unaffected by affine
/// changes of units. Sharing it lets the smoothing noise in a and b cancel.
inline ScalarBandwidths scalar_bandwidths(const ContinuousDataset& d, const ContinuousIvOptions& opt) {
  ScalarBandwidths h;
  if (opt.bandwidth_x && opt.bandwidth_y) return {*opt.bandwidth_x, *opt.bandwidth_y};
  const Vec z = d.z().col(0);
  const std::span<const double> zs(z.data(), static_cast<std::size_t>(z.size()));
  const Vec cand = default_bandwidth_candidates(zs, opt.cv_candidates);
  Mat ys = continuous_responses(d);
  for (Eigen::Index c = 0; c < ys.cols(); ++c) {
    ys.col(c).array() -= ys.col(c).mean();
    const double sd = std::sqrt(ys.col(c).squaredNorm() / std::max<double>(1.0, static_cast<double>(ys.rows() - 1)));
    if (sd > 0.0) ys.col(c) /= sd;
  }
  const double common = select_bandwidth_cv(zs, ys, opt.degree, cand, opt.cv_folds, opt.cv_seed).bandwidth;
  h.x = opt.bandwidth_x.value_or(common);
  h.y = opt.bandwidth_y.value_or(common);
  return h;
}

inline Vec scalar_grid(const ContinuousDataset& d, const ContinuousIvOptions& opt) {
  if (opt.grid) {
    if (opt.grid->cols() != 1) throw ValidationError("grid must have one column per Z component");
    return opt.grid->col(0);
  }
  const Vec z = d.z().col(0);
  return default_grid(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())), opt.grid_points, opt.trim);
}

/// a(z) (m x n per point) and b(z) (points x m) from a 1-D smoother over Z.
inline void scalar_ab(const LocalPolySmoother& smoother, const Vec& grid, int degree, ScalarBandwidths h, int n,
                      std::vector<Mat>& a, Mat& b) {
  const std::span<const double> pts(grid.data(), static_cast<std::size_t>(grid.size()));
  const auto fx = smoother.fit(degree, h.x, pts);
  const auto fy = h.y == h.x ? fx : smoother.fit(degree, h.y, pts);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  a.assign(static_cast<std::size_t>(grid.size()), Mat(1, n));
  b = Mat(grid.size(), 1);
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    const auto k = static_cast<std::size_t>(g);
    b(g, 0) = fy.valid[k] ? fy.derivs(g, 0) : nan;
    for (int j = 0; j < n; ++j) a[k](0, j) = fx.valid[k] ? fx.derivs(g, j + 1) : nan;
  }
}

inline PhiCurve scalar_phi(const LocalPolySmoother& smoother, const Vec& grid, int degree, ScalarBandwidths h,
                           double denom_tol) {
  std::vector<Mat> a;
  Mat b;
  scalar_ab(smoother, grid, degree, h, 1, a, b);
  Vec av(grid.size());
  for (Eigen::Index g = 0; g < grid.size(); ++g) av(g) = a[static_cast<std::size_t>(g)](0, 0);
  auto out = phi_from_ab_scalar(grid, av, b.col(0), denom_tol);
  out.bandwidth_x = h.x;
  out.bandwidth_y = h.y;
  return out;
}

inline void note_masks(PhiCurve& c) {
  std::size_t weak = 0, rank = 0, edge = 0;
  for (auto r : c.reason) {
    weak += r == MaskReason::WeakDenominator;
    rank += r == MaskReason::RankDeficient;
    edge += r == MaskReason::Boundary;
  }
  if (weak) c.warnings.push_back(std::to_string(weak) + " grid point(s) masked: weak denominator");
  if (rank) c.warnings.push_back(std::to_string(rank) + " grid point(s) masked: rank deficient");
  if (edge) c.warnings.push_back(std::to_string(edge) + " grid point(s) masked: insufficient local data");
}

}  // namespace detail

inline PhiCurve estimate_phi_scalar(const ContinuousDataset& d, const ContinuousIvOptions& opt = {}) {
  if (d.n() != 1 || d.m() != 1) throw ValidationError("scalar phi needs n = m = 1");
  if (d.size() < 20) throw EstimationError("phi estimation needs at least 20 observations");
  const auto h = detail::scalar_bandwidths(d, opt);
  const Vec z = d.z().col(0);
  const LocalPolySmoother smoother(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())),
                                   detail::continuous_responses(d));
  auto out = detail::scalar_phi(smoother, detail::scalar_grid(d, opt), opt.degree, h, opt.denom_tol);
  detail::note_masks(out);
  if (out.valid_count() < 10) throw EstimationError("phi curve has fewer than 10 valid points");
  return out;
}

/// Vector case. With m = 1 the curves come from the same one-dimensional fits
/// as the scalar path; with m >= 2 from a product-kernel local-linear fit.
inline PhiCurve estimate_phi_vector(const ContinuousDataset& d, const ContinuousIvOptions& opt = {}) {
  const int n = d.n(), m = d.m();
  if (m < n) throw ValidationError("vector phi needs m >= n");
  if (d.size() < 20) throw EstimationError("phi estimation needs at least 20 observations");
  const Mat ys = detail::continuous_responses(d);
  PhiCurve out;
  if (m == 1) {
    const auto h = detail::scalar_bandwidths(d, opt);
    const Vec z = d.z().col(0);
    const LocalPolySmoother smoother(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())), ys);
    const Vec grid = detail::scalar_grid(d, opt);
    std::vector<Mat> a;
    Mat b;
    detail::scalar_ab(smoother, grid, opt.degree, h, n, a, b);
    out = phi_from_ab_vector(grid, a, b, opt.rank_tol);
    out.bandwidth_x = h.x;
    out.bandwidth_y = h.y;
  } else {
    const Mat grid = opt.grid ? *opt.grid : default_tensor_grid(d.z(), opt.tensor_points, opt.trim);
    if (grid.cols() != m) throw ValidationError("grid must have one column per Z component");
    const Vec scales = logspace(0.05, 0.5, opt.cv_candidates);
    const double sy = opt.bandwidth_y ? *opt.bandwidth_y
                                      : select_scale_cv_multi(d.z(), Mat(d.y()), scales, opt.cv_folds, opt.cv_seed);
    const double sx = opt.bandwidth_x ? *opt.bandwidth_x
                                      : select_scale_cv_multi(d.z(), d.x(), scales, opt.cv_folds, opt.cv_seed);
    const Vec ranges = d.z().colwise().maxCoeff() - d.z().colwise().minCoeff();
    if ((ranges.array() <= 0.0).any()) throw EstimationError("a Z component is constant");
    const MultiLinearSmoother smoother(d.z(), ys);
    const auto fx = smoother.fit(sx * ranges, grid);
    const auto fy = sy == sx ? fx : smoother.fit(sy * ranges, grid);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<Mat> a(static_cast<std::size_t>(grid.rows()), Mat::Constant(m, n, nan));
    Mat b = Mat::Constant(grid.rows(), m, nan);
    for (Eigen::Index g = 0; g < grid.rows(); ++g) {
      const auto k = static_cast<std::size_t>(g);
      if (fy.valid[k]) b.row(g) = fy.grads[k].col(0).transpose();
      if (fx.valid[k]) a[k] = fx.grads[k].rightCols(n);
    }
    out = phi_from_ab_vector(grid, a, b, opt.rank_tol);
    out.bandwidth_x = sx;
    out.bandwidth_y = sy;
  }
  detail::note_masks(out);
  if (out.valid_count() < 10) throw EstimationError("phi curve has fewer than 10 valid points");
  return out;
}

// ---------------------------------------------------------------------------
// s'(x) from E(s'(X) | Z = z) = phi(z).

struct SprimeCurve {
  Vec x_grid;
  Vec sprime;
  double lambda = 0.0;
  double residual_norm = 0.0;  ///< ||Q s' - phi||
  double solution_norm = 0.0;  ///< ||D s'||
};

namespace detail {

struct SprimeSystem {
  Mat Q;    ///< valid z points x x_grid
  Vec rhs;  ///< phi at valid z points
  Mat DtD;
  Mat QtQ;
  Vec Qtr;
};

inline SprimeSystem sprime_system(const PhiCurve& phi, const CondDensityKernel& kernel) {
  if (phi.grid.cols() != 1 || phi.phi.cols() != 1) throw ValidationError("s' recovery needs scalar X and Z");
  std::vector<Eigen::Index> zp;
  for (Eigen::Index i = 0; i < phi.grid.rows(); ++i)
    if (phi.valid[static_cast<std::size_t>(i)]) zp.push_back(i);
  if (static_cast<Eigen::Index>(zp.size()) != kernel.z_grid.size())
    throw ValidationError("kernel z grid must match the valid points of the phi curve");
  SprimeSystem s;
  const auto nx = kernel.x_grid.size();
  std::vector<Eigen::Index> rows;
  for (std::size_t j = 0; j < zp.size(); ++j) {
    const double zj = phi.grid(zp[j], 0);
    if (std::abs(kernel.z_grid(static_cast<Eigen::Index>(j)) - zj) > 1e-12 * std::max(1.0, std::abs(zj)))
      throw ValidationError("kernel z grid must match the valid points of the phi curve");
    if (kernel.valid[j]) rows.push_back(static_cast<Eigen::Index>(j));
  }
  if (rows.empty()) throw EstimationError("conditional density kernel has no valid columns");
  s.Q = Mat(static_cast<Eigen::Index>(rows.size()), nx);
  s.rhs = Vec(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto j = rows[r];
    s.Q.row(static_cast<Eigen::Index>(r)) = kernel.K.col(j).cwiseProduct(kernel.x_weights).transpose();
    s.rhs(static_cast<Eigen::Index>(r)) = phi.phi(zp[static_cast<std::size_t>(j)], 0);
  }
  Mat D = Mat::Zero(nx - 1, nx);
  for (Eigen::Index i = 0; i + 1 < nx; ++i) {
    D(i, i) = -1.0;
    D(i, i + 1) = 1.0;
  }
  s.DtD = D.transpose() * D;
  s.QtQ = s.Q.transpose() * s.Q;
  s.Qtr = s.Q.transpose() * s.rhs;
  return s;
}

inline SprimeCurve solve_sprime(const SprimeSystem& s, const Vec& x_grid, double lambda) {
  const Mat lhs = s.QtQ + lambda * s.DtD;
  SprimeCurve out;
  out.x_grid = x_grid;
  out.lambda = lambda;
  out.sprime = lhs.ldlt().solve(s.Qtr);
  if (!out.sprime.allFinite()) out.sprime = lhs.fullPivLu().solve(s.Qtr);
  if (!out.sprime.allFinite()) throw EstimationError("s' system is singular");
  out.residual_norm = (s.Q * out.sprime - s.rhs).norm();
  Vec diff = out.sprime.tail(out.sprime.size() - 1) - out.sprime.head(out.sprime.size() - 1);
  out.solution_norm = diff.norm();
  return out;
}

}  // namespace detail

/// Minimizes ||Q s' - phi||^2 + lambda ||D s'||^2 with Q the quadrature
/// weighted kernel transpose and D the first-difference matrix.
inline SprimeCurve recover_sprime(const PhiCurve& phi, const CondDensityKernel& kernel, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be positive");
  if (kernel.x_grid.size() < 2) throw ValidationError("x grid needs at least 2 points");
  return detail::solve_sprime(detail::sprime_system(phi, kernel), kernel.x_grid, lambda);
}

struct LCurve {
  Vec lambdas;
  Vec residual_norms;
  Vec solution_norms;
  Vec curvature;
  Eigen::Index corner = 0;
};

/// Sweep of `count` log-spaced lambdas scaled by trace(Q'Q) / trace(D'D).
/// The corner maximizes the curvature of (log residual, log solution norm),
/// evaluated in closed form from the derivative of ||D s'||^2 with respect
/// to lambda rather than by differencing the coarse sweep.
inline LCurve lcurve_sweep(const PhiCurve& phi, const CondDensityKernel& kernel, int count = 20, double lo = 1e-4,
                           double hi = 1e4) {
  if (count < 3) throw ValidationError("L-curve needs at least 3 lambdas");
  const auto sys = detail::sprime_system(phi, kernel);
  const double scale = sys.QtQ.trace() / std::max(sys.DtD.trace(), 1e-300);
  LCurve lc;
  lc.lambdas = scale * logspace(lo, hi, count);
  lc.residual_norms = Vec(count);
  lc.solution_norms = Vec(count);
  lc.curvature = Vec::Constant(count, -std::numeric_limits<double>::infinity());
  double best = -std::numeric_limits<double>::infinity();
  lc.corner = count / 2;
  for (int i = 0; i < count; ++i) {
    const double mu = lc.lambdas(i);
    const Mat lhs = sys.QtQ + mu * sys.DtD;
    const Eigen::LDLT<Mat> ldlt(lhs);
    const Vec s = ldlt.solve(sys.Qtr);
    if (!s.allFinite()) continue;
    const Vec ds = s.tail(s.size() - 1) - s.head(s.size() - 1);
    const double rho = (sys.Q * s - sys.rhs).squaredNorm();
    const double eta = ds.squaredNorm();
    lc.residual_norms(i) = std::sqrt(rho);
    lc.solution_norms(i) = std::sqrt(eta);
    // Curvature of (log ||r||, log ||D s'||) in mu, using d rho / d mu =
    // -mu d eta / d mu and d s / d mu = -(Q'Q + mu D'D)^{-1} D'D s.
    const Vec dsdmu = -ldlt.solve(sys.DtD * s);
    const double deta = 2.0 * s.dot(sys.DtD * dsdmu);
    if (!(deta < 0.0) || !(rho > 0.0) || !(eta > 0.0)) continue;
    lc.curvature(i) = 2.0 * rho * eta / -deta * (rho * eta + mu * deta * rho + mu * mu * deta * eta) /
                      std::pow(mu * mu * eta * eta + rho * rho, 1.5);
    if (lc.curvature(i) > best) {
      best = lc.curvature(i);
      lc.corner = i;
    }
  }
  return lc;
}

struct SprimeOptions {
  ContinuousIvOptions phi;
  int x_points = 101;
  /// Empirical quantile trimmed from each end of X for the x grid. Kept small
  /// so that each kernel column retains nearly all of its mass.
  double x_trim = 0.001;
  std::optional<double> bandwidth_kx;
  std::optional<double> bandwidth_kz;
  std::optional<double> lambda;  ///< unset: L-curve corner
  int lcurve_points = 20;
};

struct SprimeResult {
  PhiCurve phi;
  CondDensityKernel kernel;
  SprimeCurve sprime;
  std::optional<LCurve> lcurve;
};

namespace detail {

/// Normal-reference (Silverman) bandwidth.
inline double reference_bandwidth(const Vec& v) {
  const double n = static_cast<double>(v.size());
  const double mean = v.mean();
  const double sd = std::sqrt((v.array() - mean).square().sum() / std::max(1.0, n - 1.0));
  return 1.06 * sd * std::pow(n, -0.2);
}

}  // namespace detail

inline SprimeResult estimate_sprime(const ContinuousDataset& d, const SprimeOptions& opt = {}) {
  if (d.n() != 1 || d.m() != 1) throw ValidationError("s' recovery needs n = m = 1");
  SprimeResult out;
  out.phi = estimate_phi_scalar(d, opt.phi);
  const Vec x = d.x().col(0), z = d.z().col(0);
  std::vector<double> xs(x.data(), x.data() + x.size());
  const double xlo = percentile(xs, opt.x_trim), xhi = percentile(xs, 1.0 - opt.x_trim);
  if (!(xhi > xlo)) throw EstimationError("X has no spread");
  const Vec x_grid = linspace(xlo, xhi, opt.x_points);
  std::vector<double> zv;
  for (Eigen::Index i = 0; i < out.phi.grid.rows(); ++i)
    if (out.phi.valid[static_cast<std::size_t>(i)]) zv.push_back(out.phi.grid(i, 0));
  const Vec z_grid = Eigen::Map<const Vec>(zv.data(), static_cast<Eigen::Index>(zv.size()));
  out.kernel = fit_cond_density(std::span<const double>(x.data(), xs.size()),
                                std::span<const double>(z.data(), xs.size()), x_grid, z_grid,
                                opt.bandwidth_kx.value_or(detail::reference_bandwidth(x)),
                                opt.bandwidth_kz.value_or(detail::reference_bandwidth(z)));
  double lambda = 0.0;
  if (opt.lambda) {
    lambda = *opt.lambda;
  } else {
    out.lcurve = lcurve_sweep(out.phi, out.kernel, opt.lcurve_points);
    lambda = out.lcurve->lambdas(out.lcurve->corner);
  }
  out.sprime = recover_sprime(out.phi, out.kernel, lambda);
  return out;
}

// ---------------------------------------------------------------------------
// Constant effect: theta = E(phi(Z)).

namespace detail {

/// Index of the first grid point not below z, for each sample.
inline std::vector<Eigen::Index> grid_positions(const Mat& grid, std::span<const double> z) {
  const auto g = grid.rows();
  const double* gp = grid.col(0).data();
  std::vector<Eigen::Index> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = std::lower_bound(gp, gp + g, z[i]) - gp;
  return out;
}

inline double interpolate_at(const PhiCurve& phi, Eigen::Index col, Eigen::Index right, double z) {
  const auto g = phi.grid.rows();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (right == 0 || right == g) {
    const auto k = right == 0 ? 0 : g - 1;
    return phi.valid[static_cast<std::size_t>(k)] ? phi.phi(k, col) : nan;
  }
  const auto left = right - 1;
  const double gl = phi.grid(left, 0), gr = phi.grid(right, 0);
  const bool vl = phi.valid[static_cast<std::size_t>(left)], vr = phi.valid[static_cast<std::size_t>(right)];
  if (vl && vr) {
    const double t = (z - gl) / (gr - gl);
    return (1.0 - t) * phi.phi(left, col) + t * phi.phi(right, col);
  }
  const auto nearest = (z - gl <= gr - z) ? left : right;
  return phi.valid[static_cast<std::size_t>(nearest)] ? phi.phi(nearest, col) : nan;
}

}  // namespace detail

/// phi interpolated at z: linear between two valid neighbours, otherwise the
/// nearest grid value. NaN when the nearest grid point is masked.
inline double interpolate_phi(const PhiCurve& phi, Eigen::Index col, double z) {
  const double* gp = phi.grid.col(0).data();
  return detail::interpolate_at(phi, col, std::lower_bound(gp, gp + phi.grid.rows(), z) - gp, z);
}

struct ThetaConstant {
  Vec theta;
  double dropped_fraction = 0.0;
  std::size_t used = 0;
  double naive_se = 0.0;  ///< sd of phi(Z_i) / sqrt(used); ignores curve noise
};

namespace detail {

inline ThetaConstant theta_constant_at(const PhiCurve& phi, std::span<const double> z_samples,
                                       std::span<const double> weights, const std::vector<Eigen::Index>& positions) {
  if (phi.grid.cols() != 1) throw ValidationError("theta_constant supports scalar Z");
  if (phi.valid_count() < 10) throw EstimationError("theta_constant needs at least 10 valid phi points");
  if (z_samples.empty()) throw ValidationError("theta_constant: no samples");
  if (!weights.empty() && weights.size() != z_samples.size()) throw ValidationError("weight length mismatch");
  const auto n = phi.phi.cols();
  ThetaConstant out;
  Vec sum = Vec::Zero(n), sq = Vec::Zero(n), v(n);
  double wsum = 0.0, wall = 0.0;
  for (std::size_t i = 0; i < z_samples.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    if (w == 0.0) continue;
    wall += w;
    bool ok = true;
    for (Eigen::Index c = 0; c < n && ok; ++c) {
      v(c) = interpolate_at(phi, c, positions[i], z_samples[i]);
      ok = std::isfinite(v(c));
    }
    if (!ok) continue;
    ++out.used;
    wsum += w;
    sum += w * v;
    sq += w * v.cwiseProduct(v);
  }
  out.dropped_fraction = wall > 0.0 ? 1.0 - wsum / wall : 1.0;
  if (out.dropped_fraction > 0.5)
    throw EstimationError("phi curve covers too few samples (" + std::to_string(out.dropped_fraction * 100.0) +
                          "% dropped)");
  out.theta = sum / wsum;
  const Vec var = (sq / wsum - out.theta.cwiseProduct(out.theta)).cwiseMax(0.0);
  out.naive_se = std::sqrt(var(0) / std::max<double>(1.0, static_cast<double>(out.used)));
  return out;
}

}  // namespace detail

/// Weighted average of interpolated phi(Z_i); weights default to one.
inline ThetaConstant theta_constant(const PhiCurve& phi, std::span<const double> z_samples,
                                    std::span<const double> weights = {}) {
  if (phi.grid.cols() != 1) throw ValidationError("theta_constant supports scalar Z");
  return detail::theta_constant_at(phi, z_samples, weights, detail::grid_positions(phi.grid, z_samples));
}

struct ConstantEffectResult {
  ThetaEstimate estimate;
  PhiCurve phi;
  double dropped_fraction = 0.0;
};

/// phi curve, theta = E(phi(Z)), and optional bootstrap that reweights rows
/// with the bandwidths and grid of the full-sample fit.
inline ConstantEffectResult estimate_theta_constant(const ContinuousDataset& d, const ContinuousIvOptions& opt = {},
                                                    int bootstrap = 0, std::uint64_t seed = 0) {
  if (d.n() != 1 || d.m() != 1) throw ValidationError("constant-effect average needs n = m = 1");
  ConstantEffectResult out;
  out.phi = estimate_phi_scalar(d, opt);
  const Vec z = d.z().col(0);
  const std::span<const double> zs(z.data(), static_cast<std::size_t>(z.size()));
  const auto tc = theta_constant(out.phi, zs);
  out.dropped_fraction = tc.dropped_fraction;
  out.estimate.theta = tc.theta;
  out.estimate.rank = 1;
  out.estimate.warnings = out.phi.warnings;
  if (tc.dropped_fraction > 0.0)
    out.estimate.warnings.push_back(std::to_string(tc.dropped_fraction * 100.0) + "% of samples fall on masked phi");
  if (bootstrap > 0) {
    LocalPolySmoother smoother(zs, detail::continuous_responses(d));
    const Vec grid = out.phi.grid.col(0);
    const detail::ScalarBandwidths h{out.phi.bandwidth_x, out.phi.bandwidth_y};
    const auto positions = detail::grid_positions(out.phi.grid, zs);
    std::vector<Vec> draws;
    for (int b = 0; b < bootstrap; ++b) {
      auto eng = make_engine(substream_seed(seed, static_cast<std::uint64_t>(b)));
      const auto counts = bootstrap_counts(d.size(), eng);
      smoother.set_weights(counts);
      try {
        const auto pb = detail::scalar_phi(smoother, grid, opt.degree, h, opt.denom_tol);
        draws.push_back(detail::theta_constant_at(pb, zs, counts, positions).theta);
      } catch (const EstimationError&) {
        ++out.estimate.boot_failures;
      }
    }
    attach_bootstrap(out.estimate, draws);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear ratio estimator.

struct LinearIvRatio {
  double beta_hat = 0.0;
  double slope_yz = 0.0;
  double slope_xz = 0.0;
  double se = 0.0;  ///< heteroskedasticity-robust
};

inline LinearIvRatio linear_iv_ratio(const ContinuousDataset& d) {
  if (d.n() != 1 || d.m() != 1) throw ValidationError("linear ratio estimator needs n = m = 1");
  const auto n = static_cast<double>(d.size());
  if (d.size() < 3) throw EstimationError("linear ratio estimator needs at least 3 observations");
  const Vec zc = d.z().col(0).array() - d.z().col(0).mean();
  const Vec xc = d.x().col(0).array() - d.x().col(0).mean();
  const Vec yc = d.y().array() - d.y().mean();
  const double szz = zc.squaredNorm();
  const double sd_z = std::sqrt(szz / (n - 1.0));
  const double sd_y = std::sqrt(yc.squaredNorm() / (n - 1.0));
  if (!(szz > 0.0)) throw EstimationError("weak instrument: Z is constant");
  LinearIvRatio out;
  out.slope_yz = zc.dot(yc) / szz;
  out.slope_xz = zc.dot(xc) / szz;
  if (!(std::abs(out.slope_xz) >= 1e-12 * sd_y / sd_z) || out.slope_xz == 0.0)
    throw EstimationError("weak instrument: slope of X on Z is numerically zero");
  out.beta_hat = out.slope_yz / out.slope_xz;
  const Vec e = yc - out.beta_hat * xc;
  out.se = std::sqrt(zc.cwiseProduct(e).squaredNorm()) / std::abs(zc.dot(xc));
  return out;
}

/// Ordinary least-squares slope of Y on X (the confounded baseline).
inline double naive_ols_slope(const ContinuousDataset& d) {
  if (d.n() != 1) throw ValidationError("naive slope needs scalar X");
  const Vec xc = d.x().col(0).array() - d.x().col(0).mean();
  const Vec yc = d.y().array() - d.y().mean();
  const double sxx = xc.squaredNorm();
  if (!(sxx > 0.0)) throw EstimationError("X is constant");
  return xc.dot(yc) / sxx;
}

}  // namespace ivcalc
