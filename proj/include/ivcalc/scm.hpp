#pragma once

// Generative structural models and the exact finite-population oracle.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ivcalc/dataset.hpp"
#include "ivcalc/distributions.hpp"
#include "ivcalc/error.hpp"
#include "ivcalc/linalg.hpp"
#include "ivcalc/pairs.hpp"
#include "ivcalc/random.hpp"

namespace ivcalc {

// ---------------------------------------------------------------------------
// Discrete X, discrete Z.

/// One support point of the joint law of (U_0..U_n, V_1..V_m).
struct DiscreteAtom {
  double weight = 0.0;
  Vec u;               ///< potential outcomes, length n+1
  std::vector<int> v;  ///< X code taken under each Z level, length m
};

/// Y = sum_j I(X = x_j) U_j,  X = sum_i I(Z = z_i) V_i, with Z drawn from
/// `p_z` independently of the atom.
struct DiscreteScm {
  int n = 1;
  int m = 2;
  Vec p_z;
  std::vector<DiscreteAtom> atoms;

  void validate() const {
    if (n < 1 || m < 2) throw ValidationError("discrete model needs n >= 1 and m >= 2");
    if (p_z.size() != m) throw ValidationError("p_z must have length m");
    if ((p_z.array() < 0.0).any() || std::abs(p_z.sum() - 1.0) > 1e-12)
      throw ValidationError("p_z must be a probability simplex");
    if (atoms.empty()) throw ValidationError("discrete model has no atoms");
    double total = 0.0;
    for (const auto& a : atoms) {
      if (a.weight < 0.0) throw ValidationError("atom weights must be nonnegative");
      if (a.u.size() != n + 1) throw ValidationError("atom u must have length n+1");
      if (static_cast<int>(a.v.size()) != m) throw ValidationError("atom v must have length m");
      for (int c : a.v)
        if (c < 0 || c > n) throw ValidationError("atom v entry is not a valid X code");
      total += a.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ValidationError("atom weights must sum to 1");
  }

  /// theta_j = E(U_j - U_0), j = 1..n.
  Vec theta() const {
    Vec th = Vec::Zero(n);
    for (const auto& a : atoms)
      for (int j = 1; j <= n; ++j) th(j - 1) += a.weight * (a.u(j) - a.u(0));
    return th;
  }
};

inline DiscreteDataset simulate_discrete(const DiscreteScm& model, std::size_t count,
                                         std::uint64_t seed) {
  model.validate();
  auto eng = make_engine(seed);
  std::discrete_distribution<int> draw_z(model.p_z.data(), model.p_z.data() + model.p_z.size());
  std::vector<double> w;
  for (const auto& a : model.atoms) w.push_back(a.weight);
  std::discrete_distribution<std::size_t> draw_atom(w.begin(), w.end());
  std::vector<double> y(count);
  std::vector<int> x(count);
  std::vector<int> z(count);
  for (std::size_t r = 0; r < count; ++r) {
    z[r] = draw_z(eng);
    const auto& atom = model.atoms[draw_atom(eng)];
    x[r] = atom.v[z[r]];
    y[r] = atom.u(x[r]);
  }
  return DiscreteDataset(std::move(y), std::move(x), std::move(z), model.n, model.m);
}

struct OracleReport {
  Vec theta_true;
  Mat A_pop;
  Vec b_pop;
  PairSet pairs;
  double identity_residual = 0.0;
  /// max over (pair, j) of |corr(U_j - U_0, I(V_i = x_j) - I(V_k = x_j))|.
  double cond_i_corr = 0.0;
};

/// Population contrasts computed by enumerating atoms: no sampling.
inline OracleReport exact_population_oracle(const DiscreteScm& model, const PairSet& pairs) {
  model.validate();
  pairs.validate_for(model.m);
  const int n = model.n;
  const auto rows = static_cast<Eigen::Index>(pairs.size());
  OracleReport rep;
  rep.pairs = pairs;
  rep.theta_true = model.theta();
  rep.A_pop = Mat::Zero(rows, n);
  rep.b_pop = Vec::Zero(rows);
  for (Eigen::Index s = 0; s < rows; ++s) {
    const int hi = pairs.pairs()[s].first - 1;
    const int lo = pairs.pairs()[s].second - 1;
    for (const auto& a : model.atoms) {
      rep.b_pop(s) += a.weight * (a.u(a.v[hi]) - a.u(a.v[lo]));
      for (int j = 1; j <= n; ++j)
        rep.A_pop(s, j - 1) += a.weight * ((a.v[hi] == j ? 1.0 : 0.0) - (a.v[lo] == j ? 1.0 : 0.0));
    }
    for (int j = 1; j <= n; ++j) {
      // Population correlation of dY = U_j - U_0 with dI = I(V_hi = j) - I(V_lo = j).
      double ey = 0.0, ei = 0.0;
      for (const auto& a : model.atoms) {
        ey += a.weight * (a.u(j) - a.u(0));
        ei += a.weight * ((a.v[hi] == j ? 1.0 : 0.0) - (a.v[lo] == j ? 1.0 : 0.0));
      }
      double cov = 0.0, vy = 0.0, vi = 0.0;
      for (const auto& a : model.atoms) {
        const double dy = a.u(j) - a.u(0) - ey;
        const double di = (a.v[hi] == j ? 1.0 : 0.0) - (a.v[lo] == j ? 1.0 : 0.0) - ei;
        cov += a.weight * dy * di;
        vy += a.weight * dy * dy;
        vi += a.weight * di * di;
      }
      const double scale = std::sqrt(vy * vi);
      const double corr = scale > 1e-300 ? cov / scale : 0.0;
      rep.cond_i_corr = std::max(rep.cond_i_corr, std::abs(corr));
    }
  }
  rep.identity_residual = rows ? (rep.b_pop - rep.A_pop * rep.theta_true).cwiseAbs().maxCoeff() : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Discrete X, continuous Z in [0, 1].

/// Law of the instrument on [0, 1].
struct ZLaw {
  enum class Kind { Uniform, TruncatedNormal };
  Kind kind = Kind::Uniform;
  double mean = 0.5;
  double sd = 1.0;

  static ZLaw uniform() { return {}; }
  static ZLaw truncated_normal(double mean, double sd) { return {Kind::TruncatedNormal, mean, sd}; }

  double sample(Engine& eng) const {
    if (kind == Kind::Uniform) return std::uniform_real_distribution<double>(0.0, 1.0)(eng);
    return ivcalc::truncated_normal(eng, mean, sd, 0.0, 1.0);
  }
  double density(double z) const {
    if (z < 0.0 || z > 1.0) return 0.0;
    if (kind == Kind::Uniform) return 1.0;
    const double mass = normal_cdf((1.0 - mean) / sd) - normal_cdf((0.0 - mean) / sd);
    return normal_pdf((z - mean) / sd) / (sd * mass);
  }
  void validate() const {
    if (kind == Kind::TruncatedNormal && !(sd > 0.0)) throw ValidationError("z law needs sd > 0");
  }
};

/// Class-probability curves q_j(z), j = 0..n, and their derivatives.
class QCurves {
 public:
  using Curve = std::function<Vec(double)>;

  QCurves() = default;
  QCurves(int n, Curve q, Curve dq, std::string description)
      : n_(n), q_(std::move(q)), dq_(std::move(dq)), description_(std::move(description)) {}

  /// Binary latent-index model: X = I(alpha0 + alpha1 z + eps > 0), so
  /// q_1(z) = P(eps > -alpha0 - alpha1 z).
  static QCurves threshold(double alpha0, double alpha1, ScalarLaw eps) {
    eps.validate();
    auto q = [=](double z) {
      Vec out(2);
      out(0) = eps.cdf(-alpha0 - alpha1 * z);
      out(1) = 1.0 - out(0);
      return out;
    };
    auto dq = [=](double z) {
      Vec out(2);
      out(1) = alpha1 * eps.pdf(-alpha0 - alpha1 * z);
      out(0) = -out(1);
      return out;
    };
    return QCurves(1, q, dq, "threshold");
  }

  /// q_j(z) proportional to exp(c_j + d_j z), with class 0 pinned at c_0 = d_0 = 0.
  static QCurves multinomial_logit(Vec intercepts, Vec slopes) {
    if (intercepts.size() != slopes.size() || intercepts.size() < 1)
      throw ValidationError("logit curves need matching intercepts and slopes");
    const int n = static_cast<int>(intercepts.size());
    auto probs = [=](double z) {
      Vec e(n + 1);
      e(0) = 1.0;
      for (int j = 1; j <= n; ++j) e(j) = std::exp(intercepts(j - 1) + slopes(j - 1) * z);
      return Vec(e / e.sum());
    };
    auto dq = [=](double z) {
      Vec p = probs(z);
      Vec d(n + 1);
      d(0) = 0.0;
      for (int j = 1; j <= n; ++j) d(j) = slopes(j - 1);
      const double mean_slope = p.dot(d);
      return Vec(p.array() * (d.array() - mean_slope));
    };
    return QCurves(n, probs, dq, "multinomial_logit");
  }

  /// Curves that do not depend on z.
  static QCurves constant(Vec probs) {
    const int n = static_cast<int>(probs.size()) - 1;
    return QCurves(
        n, [=](double) { return probs; }, [=](double) { return Vec(Vec::Zero(n + 1)); }, "constant");
  }

  int n() const noexcept { return n_; }
  Vec q(double z) const { return q_(z); }
  Vec dq(double z) const { return dq_(z); }
  const std::string& description() const noexcept { return description_; }

 private:
  int n_ = 0;
  Curve q_;
  Curve dq_;
  std::string description_;
};

/// X = V(Z) with the whole path {V(z)} generated from one latent
/// W ~ Uniform(0, 1): V(z) = smallest j with W < q_0(z) + ... + q_j(z).
/// Potential outcomes U_j = class_means_j + eta + delta_j, where eta has
/// Spearman correlation `noise_rank_corr` with W and each delta_j has Spearman
/// correlation `effect_rank_corr` with W. Any nonzero effect correlation
/// breaks the zero-correlation condition between U_j - U_0 and the change in
/// I(X = x_j).
struct MixedScm {
  int n = 1;
  ZLaw z_law;
  QCurves curves;
  Vec class_means;
  double noise_sd = 1.0;
  double noise_rank_corr = 0.0;
  Vec effect_sd;  ///< length n+1; zero means no per-class spread
  double effect_rank_corr = 0.0;

  void validate() const {
    z_law.validate();
    if (curves.n() != n) throw ValidationError("q curves have the wrong number of classes");
    if (class_means.size() != n + 1) throw ValidationError("class_means must have length n+1");
    if (effect_sd.size() != n + 1) throw ValidationError("effect_sd must have length n+1");
    if (noise_sd < 0.0 || (effect_sd.array() < 0.0).any())
      throw ValidationError("outcome spreads must be nonnegative");
    for (double r : {noise_rank_corr, effect_rank_corr})
      if (!(r > -1.0 && r < 1.0)) throw ValidationError("rank correlations must lie in (-1, 1)");
    for (int i = 0; i <= 200; ++i) {
      const double z = i / 200.0;
      const Vec q = curves.q(z);
      if (q.size() != n + 1 || (q.array() < -1e-12).any() || std::abs(q.sum() - 1.0) > 1e-9)
        throw ValidationError("q curves fail the simplex check at z = " + std::to_string(z));
    }
  }

  /// theta_j = E(U_j - U_0) = class_means_j - class_means_0.
  Vec theta() const { return class_means.tail(n).array() - class_means(0); }

  /// a_j(z) = q_j'(z), j = 1..n.
  Vec a_true(double z) const { return curves.dq(z).tail(n); }

  /// b(z) = d/dz E(Y | Z = z). Exact when effect_rank_corr = 0; otherwise the
  /// cross term E(I(X = x_j) delta_j | z) also varies with z and this value
  /// is what the identification equation would predict.
  double b_identified(double z) const { return theta().dot(a_true(z)); }

  /// V(z) for a given latent W.
  int class_at(double z, double w) const {
    const Vec q = curves.q(z);
    double cum = 0.0;
    for (int j = 0; j < n; ++j) {
      cum += q(j);
      if (w < cum) return j;
    }
    return n;
  }
};

inline MixedDataset simulate_mixed(const MixedScm& model, std::size_t count, std::uint64_t seed) {
  model.validate();
  auto eng = make_engine(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double r_eta = gaussian_corr_from_rank(model.noise_rank_corr);
  const double r_eff = gaussian_corr_from_rank(model.effect_rank_corr);
  std::vector<double> y(count), z(count);
  std::vector<int> x(count);
  Vec delta(model.n + 1);
  for (std::size_t r = 0; r < count; ++r) {
    z[r] = model.z_law.sample(eng);
    const double gw = normal(eng);
    const double w = normal_cdf(gw);
    const double geta = r_eta * gw + std::sqrt(1.0 - r_eta * r_eta) * normal(eng);
    for (int j = 0; j <= model.n; ++j) {
      const double g = r_eff * gw + std::sqrt(1.0 - r_eff * r_eff) * normal(eng);
      delta(j) = model.effect_sd(j) * std::clamp(g, -6.0, 6.0);
    }
    x[r] = model.class_at(z[r], w);
    y[r] = model.class_means(x[r]) + model.noise_sd * std::clamp(geta, -6.0, 6.0) + delta(x[r]);
  }
  return MixedDataset(std::move(y), std::move(x), std::move(z), model.n);
}

/// Monte Carlo estimate of max_j |corr(U_j - U_0, I(V(z+step) = x_j) - I(V(z) = x_j))|
/// at one probe (z, step). Only computable for synthetic models.
inline double mixed_condition_i_corr(const MixedScm& model, double z, double step,
                                     std::size_t draws, std::uint64_t seed) {
  model.validate();
  auto eng = make_engine(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double r_eff = gaussian_corr_from_rank(model.effect_rank_corr);
  std::vector<std::vector<double>> dy(model.n), di(model.n);
  Vec delta(model.n + 1);
  for (std::size_t r = 0; r < draws; ++r) {
    const double gw = normal(eng);
    const double w = normal_cdf(gw);
    for (int j = 0; j <= model.n; ++j) {
      const double g = r_eff * gw + std::sqrt(1.0 - r_eff * r_eff) * normal(eng);
      delta(j) = model.effect_sd(j) * std::clamp(g, -6.0, 6.0);
    }
    const int before = model.class_at(z, w);
    const int after = model.class_at(z + step, w);
    for (int j = 1; j <= model.n; ++j) {
      dy[j - 1].push_back(model.class_means(j) - model.class_means(0) + delta(j) - delta(0));
      di[j - 1].push_back((after == j ? 1.0 : 0.0) - (before == j ? 1.0 : 0.0));
    }
  }
  double worst = 0.0;
  for (int j = 0; j < model.n; ++j) {
    const auto a = mean_sd(dy[j]);
    const auto b = mean_sd(di[j]);
    if (a.sd == 0.0 || b.sd == 0.0) continue;
    double cov = 0.0;
    for (std::size_t r = 0; r < draws; ++r) cov += (dy[j][r] - a.mean) * (di[j][r] - b.mean);
    cov /= static_cast<double>(draws - 1);
    worst = std::max(worst, std::abs(cov / (a.sd * b.sd)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Continuous X in R^n, continuous Z in R^m.

/// Closed-form ground truth attached to a continuous scenario. Every member
/// is optional.
struct ContinuousTruth {
  std::function<Vec(const Vec& z)> phi;     ///< E(dY/dX | Z = z), length n
  std::function<Mat(const Vec& z)> a;       ///< d E(X|Z=z)/dz, m x n
  std::function<Vec(const Vec& z)> b;       ///< d E(Y|Z=z)/dz, length m
  std::function<double(double x)> sprime;   ///< s'(x) for additive scalar models
  std::optional<Vec> theta;                 ///< constant causal effect
  std::optional<double> naive_slope_limit;  ///< plim of the OLS slope of Y on X
};

/// Y = f(X, U), X = g(Z, U), Z drawn independently of U.
struct ContinuousScm {
  std::string name;
  int n = 1;
  int m = 1;
  std::vector<Interval> x_bounds;
  std::vector<Interval> z_bounds;
  std::function<double(const Vec& x, const Vec& u)> f;
  std::function<Vec(const Vec& z, const Vec& u)> g;
  std::function<Vec(Engine&)> draw_u;
  std::function<Vec(Engine&)> draw_z;
  /// Optional analytic derivatives: h(x,u) = df/dx (length n) and
  /// k(z,u) = dg/dz as an m x n matrix with k_ij = d g_j / d z_i.
  std::function<Vec(const Vec& x, const Vec& u)> h;
  std::function<Mat(const Vec& z, const Vec& u)> k;
  ContinuousTruth truth;

  void validate() const {
    if (n < 1 || m < 1) throw ValidationError("continuous model needs n, m >= 1");
    if (static_cast<int>(x_bounds.size()) != n || static_cast<int>(z_bounds.size()) != m)
      throw ValidationError("continuous model needs one bound per X and Z component");
    if (!f || !g || !draw_u || !draw_z) throw ValidationError("continuous model is incomplete");
  }
};

inline ContinuousDataset simulate_continuous(const ContinuousScm& model, std::size_t count,
                                             std::uint64_t seed) {
  model.validate();
  auto eng = make_engine(seed);
  const auto rows = static_cast<Eigen::Index>(count);
  Vec y(rows);
  Mat x(rows, model.n);
  Mat z(rows, model.m);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Vec zr = model.draw_z(eng);
    const Vec u = model.draw_u(eng);
    const Vec xr = model.g(zr, u);
    for (int c = 0; c < model.n; ++c)
      if (!model.x_bounds[c].contains(xr(c)))
        throw ValidationError("simulated x" + std::to_string(c + 1) + " = " + std::to_string(xr(c)) +
                              " falls outside its declared bounds; widen x_bounds");
    z.row(r) = zr.transpose();
    x.row(r) = xr.transpose();
    y(r) = model.f(xr, u);
  }
  return ContinuousDataset(std::move(y), std::move(x), std::move(z), model.x_bounds, model.z_bounds);
}

/// Largest relative discrepancy between the analytic derivatives and central
/// finite differences of f and g at `probes` random points (relative to
/// max(1, |analytic|)). Returns 0 when no analytic derivatives are attached.
inline double derivative_check(const ContinuousScm& model, int probes, std::uint64_t seed) {
  model.validate();
  if (!model.h && !model.k) return 0.0;
  auto eng = make_engine(seed);
  double worst = 0.0;
  auto rel = [](double fd, double an) { return std::abs(fd - an) / std::max(1.0, std::abs(an)); };
  for (int p = 0; p < probes; ++p) {
    const Vec z = model.draw_z(eng);
    const Vec u = model.draw_u(eng);
    const Vec x = model.g(z, u);
    if (model.h) {
      const Vec h = model.h(x, u);
      for (int j = 0; j < model.n; ++j) {
        const double step = 1e-5 * std::max(1.0, std::abs(x(j)));
        Vec xp = x, xm = x;
        xp(j) += step;
        xm(j) -= step;
        worst = std::max(worst, rel((model.f(xp, u) - model.f(xm, u)) / (2.0 * step), h(j)));
      }
    }
    if (model.k) {
      const Mat k = model.k(z, u);
      for (int i = 0; i < model.m; ++i) {
        const double step = 1e-5 * std::max(1.0, std::abs(z(i)));
        Vec zp = z, zm = z;
        zp(i) += step;
        zm(i) -= step;
        const Vec fd = (model.g(zp, u) - model.g(zm, u)) / (2.0 * step);
        for (int j = 0; j < model.n; ++j) worst = std::max(worst, rel(fd(j), k(i, j)));
      }
    }
  }
  return worst;
}

/// Throws when the attached analytic derivatives disagree with finite
/// differences beyond 1e-4 relative.
inline void verify_derivatives(const ContinuousScm& model, int probes = 20, std::uint64_t seed = 1) {
  const double err = derivative_check(model, probes, seed);
  if (err > 1e-4)
    throw ValidationError("analytic derivatives of '" + model.name +
                          "' disagree with finite differences (relative error " +
                          std::to_string(err) + ")");
}

/// Monte Carlo population curves at z: a(z) = E k(z,U), b(z) = E k(z,U) h(g(z,U),U),
/// and the factored prediction a(z) E h(g(z,U),U). The gap between b and the
/// factored value measures a violation of the conditional zero-correlation
/// condition between dY/dX and dX/dZ.
struct PopulationCurves {
  Mat a;           ///< m x n
  Vec b;           ///< m
  Vec b_factored;  ///< m: a(z) * E(dY/dX | Z = z)
  Vec phi;         ///< n: E(dY/dX | Z = z)
};

inline PopulationCurves population_curves(const ContinuousScm& model, const Vec& z,
                                          std::size_t draws, std::uint64_t seed) {
  model.validate();
  if (!model.h || !model.k) throw ValidationError("population curves need analytic derivatives");
  auto eng = make_engine(seed);
  PopulationCurves out;
  out.a = Mat::Zero(model.m, model.n);
  out.b = Vec::Zero(model.m);
  out.phi = Vec::Zero(model.n);
  for (std::size_t r = 0; r < draws; ++r) {
    const Vec u = model.draw_u(eng);
    const Vec x = model.g(z, u);
    const Vec h = model.h(x, u);
    const Mat k = model.k(z, u);
    out.a += k;
    out.b += k * h;
    out.phi += h;
  }
  const double inv = 1.0 / static_cast<double>(draws);
  out.a *= inv;
  out.b *= inv;
  out.phi *= inv;
  out.b_factored = out.a * out.phi;
  return out;
}

}  // namespace ivcalc
