#pragma once

// Ready-made structural models with analytic ground truth.

#include <array>
#include <cmath>
#include <functional>
#include <random>

#include "ivcalc/distributions.hpp"
#include "ivcalc/scm.hpp"

namespace ivcalc {

namespace detail {

inline double std_normal_clamped(Engine& eng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  return std::clamp(normal(eng), -6.0, 6.0);
}

inline std::function<Vec(Engine&)> uniform_unit_cube(int m) {
  return [m](Engine& eng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vec z(m);
    for (int i = 0; i < m; ++i) z(i) = unit(eng);
    return z;
  };
}

inline void check_corr(double c) {
  if (!(c > -1.0 && c < 1.0)) throw ValidationError("correlation must lie in (-1, 1)");
}

/// Range of a scalar function over [0, 1], padded by 1% of its span.
inline Interval function_range(const std::function<double(double)>& fn) {
  double lo = fn(0.0), hi = lo;
  for (int i = 1; i <= 2000; ++i) {
    const double v = fn(i / 2000.0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double pad = 0.01 * (hi - lo) + 1e-9;
  return {lo - pad, hi + pad};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Example 1: errors in variables.
//   latent X~ = alpha Z + W,  X = X~ + U1,  Y = beta X~ + U2,  Z ~ Uniform(0,1)
// so Y = beta X + (U2 - beta U1) and X = alpha Z + U3 with U3 = W + U1.

struct Example1NoiseSds {
  double u1 = 0.5;  ///< measurement error in X
  double u2 = 0.5;  ///< measurement error in Y
  double w = 0.5;   ///< latent variation of X~ not driven by Z
};

inline ContinuousScm example1_scm(double beta, double alpha, Example1NoiseSds sds = {},
                                  double corr = 0.0) {
  detail::check_corr(corr);
  if (sds.u1 < 0.0 || sds.u2 < 0.0 || sds.w < 0.0) throw ValidationError("noise sds must be >= 0");
  ContinuousScm model;
  model.name = "example1";
  model.n = model.m = 1;
  model.z_bounds = {{0.0, 1.0}};
  const double spread = 6.0 * (sds.u1 + sds.w) + 1e-9;
  model.x_bounds = {{std::min(0.0, alpha) - spread, std::max(0.0, alpha) + spread}};
  model.draw_z = detail::uniform_unit_cube(1);
  model.draw_u = [=](Engine& eng) {
    const double g1 = detail::std_normal_clamped(eng);
    const double g2 = detail::std_normal_clamped(eng);
    const double g3 = detail::std_normal_clamped(eng);
    Vec u(3);
    u(0) = sds.u1 * g1;
    u(1) = sds.u2 * std::clamp(corr * g1 + std::sqrt(1.0 - corr * corr) * g2, -6.0, 6.0);
    u(2) = sds.w * g3;
    return u;
  };
  model.g = [=](const Vec& z, const Vec& u) { return Vec::Constant(1, alpha * z(0) + u(2) + u(0)); };
  model.f = [=](const Vec& x, const Vec& u) { return beta * x(0) - beta * u(0) + u(1); };
  model.h = [=](const Vec&, const Vec&) { return Vec::Constant(1, beta); };
  model.k = [=](const Vec&, const Vec&) { return Mat::Constant(1, 1, alpha); };
  model.truth.phi = [=](const Vec&) { return Vec::Constant(1, beta); };
  model.truth.a = [=](const Vec&) { return Mat::Constant(1, 1, alpha); };
  model.truth.b = [=](const Vec&) { return Vec::Constant(1, beta * alpha); };
  model.truth.theta = Vec::Constant(1, beta);
  const double var_latent = alpha * alpha / 12.0 + sds.w * sds.w;
  model.truth.naive_slope_limit =
      (beta * var_latent + corr * sds.u1 * sds.u2) / (var_latent + sds.u1 * sds.u1);
  return model;
}

// ---------------------------------------------------------------------------
// Example 2: latent-index participation.
//   Y = beta0 + beta1 X + eta,  X = I(alpha0 + alpha1 Z + eps > 0)
// with eps ~ eps_law and eta ~ Normal(0, eta_sd) joined by a Gaussian copula
// with Spearman correlation `corr`.

inline MixedScm example2_scm(double beta0, double beta1, double alpha0, double alpha1,
                             ScalarLaw eps_law, double corr, double eta_sd = 1.0) {
  detail::check_corr(corr);
  MixedScm model;
  model.n = 1;
  model.z_law = ZLaw::uniform();
  model.curves = QCurves::threshold(alpha0, alpha1, eps_law);
  model.class_means = Vec(2);
  model.class_means << beta0, beta0 + beta1;
  model.noise_sd = eta_sd;
  model.noise_rank_corr = corr;
  model.effect_sd = Vec::Zero(2);
  model.effect_rank_corr = 0.0;
  model.validate();
  return model;
}

/// Three-level X with multinomial-logit q curves. `effect_rank_corr` != 0
/// correlates the per-class effects with the selection latent.
inline MixedScm three_level_mixed_scm(double theta1, double theta2, double effect_rank_corr = 0.0,
                                      double confounding = 0.5) {
  MixedScm model;
  model.n = 2;
  model.z_law = ZLaw::uniform();
  Vec c(2), d(2);
  c << -1.0, 1.0;
  d << 3.0, -3.0;
  model.curves = QCurves::multinomial_logit(c, d);
  model.class_means = Vec(3);
  model.class_means << 0.0, theta1, theta2;
  model.noise_sd = 1.0;
  model.noise_rank_corr = confounding;
  model.effect_sd = Vec(3);
  model.effect_sd << 0.0, 1.0, 1.0;
  model.effect_rank_corr = effect_rank_corr;
  model.validate();
  return model;
}

// ---------------------------------------------------------------------------
// Example 3: randomized assignment Z in {0, 1} with noncompliance.

/// Population shares of the four compliance types. Under assignment code 0 /
/// code 1 the types take X = never (0,0), always (1,1), complier (0,1),
/// defier (1,0).
struct ComplianceSpec {
  double p_assign = 0.5;  ///< P(Z = code 1)
  double never = 0.0;
  double always = 0.0;
  double complier = 1.0;
  double defier = 0.0;
};

/// Potential outcomes per compliance type t:
///   U_0 = baseline[t] +/- noise_spread,
///   U_1 = U_0 + effect + effect_shift[t] +/- effect_spread,
/// with the two +/- signs equally likely and independent. Type-dependent
/// baselines confound X; a nonzero effect_shift on types whose treatment
/// choice responds to Z breaks the zero-correlation condition.
struct OutcomeLaw {
  std::array<double, 4> baseline{0.0, 0.0, 0.0, 0.0};
  double effect = 1.0;
  std::array<double, 4> effect_shift{0.0, 0.0, 0.0, 0.0};
  double effect_spread = 0.0;
  double noise_spread = 0.0;
};

inline DiscreteScm example3_scm(const ComplianceSpec& comp, const OutcomeLaw& law) {
  const std::array<double, 4> share{comp.never, comp.always, comp.complier, comp.defier};
  const std::array<std::array<int, 2>, 4> choice{{{0, 0}, {1, 1}, {0, 1}, {1, 0}}};
  if (!(comp.p_assign > 0.0 && comp.p_assign < 1.0))
    throw ValidationError("assignment probability must lie in (0, 1)");
  double total = 0.0;
  for (double s : share) {
    if (s < 0.0) throw ValidationError("compliance shares must be nonnegative");
    total += s;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ValidationError("compliance shares must sum to 1");
  DiscreteScm model;
  model.n = 1;
  model.m = 2;
  model.p_z = Vec(2);
  model.p_z << 1.0 - comp.p_assign, comp.p_assign;
  for (int t = 0; t < 4; ++t) {
    if (share[t] == 0.0) continue;
    for (double e0 : {-1.0, 1.0})
      for (double ed : {-1.0, 1.0}) {
        DiscreteAtom a;
        a.weight = share[t] / 4.0;
        a.u = Vec(2);
        a.u(0) = law.baseline[t] + e0 * law.noise_spread;
        a.u(1) = a.u(0) + law.effect + law.effect_shift[t] + ed * law.effect_spread;
        a.v = {choice[t][0], choice[t][1]};
        model.atoms.push_back(std::move(a));
      }
  }
  model.validate();
  return model;
}

/// Binary assignment with never-takers, always-takers and compliers. The
/// effect on compliers is shifted so that corr(U_1 - U_0, compliance) equals
/// `cond_i_corr` exactly; theta = E(U_1 - U_0) is `theta` regardless.
/// Never-takers sit below and always-takers above the complier baseline, so
/// the naive group difference is confounded.
inline DiscreteScm noncompliance_scm(double theta = 1.5, double cond_i_corr = 0.0, double complier = 0.6,
                                     double effect_spread = 1.0, double noise_spread = 1.0) {
  if (!(cond_i_corr > -1.0 && cond_i_corr < 1.0)) throw ValidationError("cond_i_corr must lie in (-1, 1)");
  if (!(complier > 0.0 && complier < 1.0)) throw ValidationError("complier share must lie in (0, 1)");
  if (!(effect_spread > 0.0)) throw ValidationError("effect_spread must be positive");
  ComplianceSpec comp;
  comp.complier = complier;
  comp.never = comp.always = 0.5 * (1.0 - complier);
  const double var_c = complier * (1.0 - complier);
  const double shift = cond_i_corr * effect_spread / std::sqrt(var_c * (1.0 - cond_i_corr * cond_i_corr));
  OutcomeLaw law;
  law.baseline = {-1.0, 1.0, 0.0, 0.0};
  law.effect = theta - complier * shift;
  law.effect_shift = {0.0, 0.0, shift, 0.0};
  law.effect_spread = effect_spread;
  law.noise_spread = noise_spread;
  return example3_scm(comp, law);
}

// ---------------------------------------------------------------------------
// Example 4: additive nonlinear model.
//   Y = s(X) + U1,  X = t(Z) + U2,  Z ~ Uniform(0,1), U2 ~ Normal(0, u2_sd),
// with (U1, U2) Gaussian-correlated.

struct Example4Spec {
  std::function<double(double)> s = [](double x) { return x * x; };
  std::function<double(double)> ds = [](double x) { return 2.0 * x; };
  std::function<double(double)> t = [](double z) { return z; };
  std::function<double(double)> dt = [](double) { return 1.0; };
  double u1_sd = 0.5;
  double u2_sd = 0.5;
  double corr = 0.5;
};

inline ContinuousScm example4_scm(const Example4Spec& spec = {}) {
  detail::check_corr(spec.corr);
  if (!(spec.u2_sd > 0.0) || spec.u1_sd < 0.0) throw ValidationError("example4 needs u2_sd > 0");
  ContinuousScm model;
  model.name = "example4";
  model.n = model.m = 1;
  model.z_bounds = {{0.0, 1.0}};
  const Interval trange = detail::function_range(spec.t);
  model.x_bounds = {{trange.lo - 6.0 * spec.u2_sd, trange.hi + 6.0 * spec.u2_sd}};
  model.draw_z = detail::uniform_unit_cube(1);
  model.draw_u = [=](Engine& eng) {
    const double g1 = detail::std_normal_clamped(eng);
    const double g2 = detail::std_normal_clamped(eng);
    Vec u(2);
    u(0) = spec.u1_sd * std::clamp(spec.corr * g2 + std::sqrt(1.0 - spec.corr * spec.corr) * g1, -6.0, 6.0);
    u(1) = spec.u2_sd * g2;
    return u;
  };
  model.g = [=](const Vec& z, const Vec& u) { return Vec::Constant(1, spec.t(z(0)) + u(1)); };
  model.f = [=](const Vec& x, const Vec& u) { return spec.s(x(0)) + u(0); };
  model.h = [=](const Vec& x, const Vec&) { return Vec::Constant(1, spec.ds(x(0))); };
  model.k = [=](const Vec& z, const Vec&) { return Mat::Constant(1, 1, spec.dt(z(0))); };
  // E(s'(t(z) + U2)) by Gauss-Hermite quadrature.
  const auto [nodes, weights] = gauss_hermite_normal(48);
  auto phi = [=](double z) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < nodes.size(); ++i)
      acc += weights(i) * spec.ds(spec.t(z) + spec.u2_sd * nodes(i));
    return acc;
  };
  model.truth.phi = [=](const Vec& z) { return Vec::Constant(1, phi(z(0))); };
  model.truth.a = [=](const Vec& z) { return Mat::Constant(1, 1, spec.dt(z(0))); };
  model.truth.b = [=](const Vec& z) { return Vec::Constant(1, spec.dt(z(0)) * phi(z(0))); };
  model.truth.sprime = spec.ds;
  return model;
}

// ---------------------------------------------------------------------------
// Example 5: random coefficient.
//   Y = U1 X + U2,  X = t(Z) + U3,  Z ~ Uniform(0,1),
// U1 independent of (U2, U3); U2 and U3 correlated with `corr`.

struct Example5Spec {
  ScalarLaw u1 = ScalarLaw::normal(1.5, 1.0);
  double u2_sd = 0.5;
  double u3_sd = 0.5;
  double corr = 0.5;
  std::function<double(double)> t = [](double z) { return z; };
  std::function<double(double)> dt = [](double) { return 1.0; };
};

inline ContinuousScm example5_scm(const Example5Spec& spec = {}) {
  detail::check_corr(spec.corr);
  spec.u1.validate();
  ContinuousScm model;
  model.name = "example5";
  model.n = model.m = 1;
  model.z_bounds = {{0.0, 1.0}};
  const Interval trange = detail::function_range(spec.t);
  model.x_bounds = {{trange.lo - 6.0 * spec.u3_sd - 1e-9, trange.hi + 6.0 * spec.u3_sd + 1e-9}};
  model.draw_z = detail::uniform_unit_cube(1);
  model.draw_u = [=](Engine& eng) {
    const double g1 = detail::std_normal_clamped(eng);
    const double g2 = detail::std_normal_clamped(eng);
    const double g3 = detail::std_normal_clamped(eng);
    Vec u(3);
    u(0) = spec.u1.from_gaussian_score(g1);
    u(2) = spec.u3_sd * g3;
    u(1) = spec.u2_sd * std::clamp(spec.corr * g3 + std::sqrt(1.0 - spec.corr * spec.corr) * g2, -6.0, 6.0);
    return u;
  };
  model.g = [=](const Vec& z, const Vec& u) { return Vec::Constant(1, spec.t(z(0)) + u(2)); };
  model.f = [](const Vec& x, const Vec& u) { return u(0) * x(0) + u(1); };
  model.h = [](const Vec&, const Vec& u) { return Vec::Constant(1, u(0)); };
  model.k = [=](const Vec& z, const Vec&) { return Mat::Constant(1, 1, spec.dt(z(0))); };
  const double mean_u1 = spec.u1.mean();
  model.truth.phi = [=](const Vec&) { return Vec::Constant(1, mean_u1); };
  model.truth.a = [=](const Vec& z) { return Mat::Constant(1, 1, spec.dt(z(0))); };
  model.truth.b = [=](const Vec& z) { return Vec::Constant(1, mean_u1 * spec.dt(z(0))); };
  model.truth.theta = Vec::Constant(1, mean_u1);
  return model;
}

// ---------------------------------------------------------------------------
// Vector instrument: X = Z1 + Z2 + U, Y = coef X + U', Z ~ Uniform([0,1]^2).

inline ContinuousScm linear_vector_scm(double coef = 3.0, double u_sd = 0.5, double corr = 0.5) {
  detail::check_corr(corr);
  ContinuousScm model;
  model.name = "linear_vector";
  model.n = 1;
  model.m = 2;
  model.z_bounds = {{0.0, 1.0}, {0.0, 1.0}};
  model.x_bounds = {{-6.0 * u_sd - 1e-9, 2.0 + 6.0 * u_sd + 1e-9}};
  model.draw_z = detail::uniform_unit_cube(2);
  model.draw_u = [=](Engine& eng) {
    const double g1 = detail::std_normal_clamped(eng);
    const double g2 = detail::std_normal_clamped(eng);
    Vec u(2);
    u(0) = u_sd * g1;
    u(1) = u_sd * std::clamp(corr * g1 + std::sqrt(1.0 - corr * corr) * g2, -6.0, 6.0);
    return u;
  };
  model.g = [](const Vec& z, const Vec& u) { return Vec::Constant(1, z(0) + z(1) + u(0)); };
  model.f = [=](const Vec& x, const Vec& u) { return coef * x(0) + u(1); };
  model.h = [=](const Vec&, const Vec&) { return Vec::Constant(1, coef); };
  model.k = [](const Vec&, const Vec&) { return Mat::Constant(2, 1, 1.0); };
  model.truth.phi = [=](const Vec&) { return Vec::Constant(1, coef); };
  model.truth.a = [](const Vec&) { return Mat::Constant(2, 1, 1.0); };
  model.truth.b = [=](const Vec&) { return Vec::Constant(2, coef); };
  model.truth.theta = Vec::Constant(1, coef);
  return model;
}

// ---------------------------------------------------------------------------
// Negative control: dY/dX and dX/dZ share the random coefficient U1.
//   Y = U1 X + U2,  X = U1 Z + U3,  U1 ~ Normal(mean, sd) truncated.
// Population: a(z) = E U1, b(z) = E U1^2, phi(z) = E U1, so a phi != b.

inline ContinuousScm shared_coefficient_scm(double mean = 1.0, double sd = 0.5, double noise_sd = 0.25) {
  ContinuousScm model;
  model.name = "shared_coefficient";
  model.n = model.m = 1;
  model.z_bounds = {{0.0, 1.0}};
  const double hi_coef = mean + 6.0 * sd;
  const double lo_coef = mean - 6.0 * sd;
  model.x_bounds = {{std::min(0.0, lo_coef) - 6.0 * noise_sd - 1e-9,
                     std::max(0.0, hi_coef) + 6.0 * noise_sd + 1e-9}};
  model.draw_z = detail::uniform_unit_cube(1);
  model.draw_u = [=](Engine& eng) {
    Vec u(3);
    u(0) = mean + sd * detail::std_normal_clamped(eng);
    u(1) = noise_sd * detail::std_normal_clamped(eng);
    u(2) = noise_sd * detail::std_normal_clamped(eng);
    return u;
  };
  model.g = [](const Vec& z, const Vec& u) { return Vec::Constant(1, u(0) * z(0) + u(2)); };
  model.f = [](const Vec& x, const Vec& u) { return u(0) * x(0) + u(1); };
  model.h = [](const Vec&, const Vec& u) { return Vec::Constant(1, u(0)); };
  model.k = [](const Vec&, const Vec& u) { return Mat::Constant(1, 1, u(0)); };
  model.truth.phi = [=](const Vec&) { return Vec::Constant(1, mean); };
  model.truth.theta = Vec::Constant(1, mean);
  return model;
}

}  // namespace ivcalc
