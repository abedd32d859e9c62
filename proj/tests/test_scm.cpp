#include <gtest/gtest.h>

#include "ivcalc/random.hpp"
#include "ivcalc/scenarios.hpp"
#include "ivcalc/scm.hpp"
#include "support.hpp"

using namespace ivcalc;

namespace {

double ols_slope(const Vec& y, const Vec& x) {
  const Vec xc = x.array() - x.mean();
  return xc.dot(y.array().matrix() - Vec::Constant(y.size(), y.mean())) / xc.squaredNorm();
}

DiscreteScm constant_outcomes(double c0, double c1, double c2) {
  DiscreteScm m;
  m.n = 2;
  m.m = 3;
  m.p_z = Vec::Constant(3, 1.0 / 3.0);
  Vec u(3);
  u << c0, c1, c2;
  m.atoms = {{0.5, u, {0, 1, 2}}, {0.3, u, {0, 0, 2}}, {0.2, u, {1, 2, 2}}};
  return m;
}

}  // namespace

TEST(SimulateDiscrete, EmptyAndDeterministic) {
  const auto model = noncompliance_scm();
  EXPECT_EQ(simulate_discrete(model, 0, 1).size(), 0u);
  const auto a = simulate_discrete(model, 1000, 42), b = simulate_discrete(model, 1000, 42);
  EXPECT_TRUE(std::equal(a.y().begin(), a.y().end(), b.y().begin()));
  EXPECT_TRUE(std::equal(a.x().begin(), a.x().end(), b.x().begin()));
  EXPECT_TRUE(std::equal(a.z().begin(), a.z().end(), b.z().begin()));
  const auto c = simulate_discrete(model, 1000, 43);
  EXPECT_FALSE(std::equal(a.y().begin(), a.y().end(), c.y().begin()));
}

TEST(SimulateDiscrete, DegenerateOutcomes) {
  DiscreteScm model;
  model.n = 1;
  model.m = 2;
  model.p_z = Vec::Constant(2, 0.5);
  Vec u(2);
  u << 0, 1;
  model.atoms = {{0.4, u, {0, 1}}, {0.3, u, {0, 0}}, {0.3, u, {1, 1}}};
  const auto d = simulate_discrete(model, 10000, 3);
  double sum1 = 0.0;
  int n1 = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_TRUE(d.y()[i] == 0.0 || d.y()[i] == 1.0);
    if (d.x()[i] == 1) {
      sum1 += d.y()[i];
      ++n1;
    }
  }
  ASSERT_GT(n1, 0);
  EXPECT_EQ(sum1 / n1, 1.0);
}

TEST(SimulateMixed, AlwaysClassOne) {
  MixedScm model;
  model.n = 1;
  model.curves = QCurves::constant(Vec::Unit(2, 1));
  model.class_means = Vec(2);
  model.class_means << 0.0, 4.0;
  model.noise_sd = 0.0;
  model.effect_sd = Vec::Zero(2);
  const auto d = simulate_mixed(model, 500, 2);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(d.x()[i], 1);
    EXPECT_EQ(d.y()[i], 4.0);
  }
}

TEST(SimulateMixed, ParticipationNearMidpoint) {
  // q(z) = P(eps > -z) = (1 + z) / 2 for eps ~ Uniform(-1, 1); it is linear,
  // so its average over [0.45, 0.55] is q(0.5) = 0.75.
  const auto model = example2_scm(1, 2, 0, 1, ScalarLaw::uniform(-1, 1), 0.5);
  const auto d = simulate_mixed(model, 100000, 7);
  int hits = 0, total = 0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.z()[i] >= 0.45 && d.z()[i] <= 0.55) {
      ++total;
      hits += d.x()[i] == 1;
    }
  const double p = 0.75;
  EXPECT_NEAR(static_cast<double>(hits) / total, p, 3.0 * std::sqrt(p * (1 - p) / total));
  const auto again = simulate_mixed(model, 100, 7), first = simulate_mixed(model, 100, 7);
  EXPECT_TRUE(std::equal(again.y().begin(), again.y().end(), first.y().begin()));
}

TEST(SimulateContinuous, OutcomeIgnoresTreatment) {
  ContinuousScm model;
  model.name = "flat";
  model.x_bounds = {{-10, 10}};
  model.z_bounds = {{0, 1}};
  model.draw_z = [](Engine& e) { return Vec::Constant(1, std::uniform_real_distribution<double>(0, 1)(e)); };
  model.draw_u = [](Engine& e) {
    std::normal_distribution<double> g(0, 1);
    Vec u(2);
    u << std::clamp(g(e), -5.0, 5.0), std::clamp(g(e), -5.0, 5.0);
    return u;
  };
  model.f = [](const Vec&, const Vec& u) { return u(0); };
  model.g = [](const Vec& z, const Vec& u) { return Vec::Constant(1, z(0) + 0.5 * u(1)); };
  model.h = [](const Vec&, const Vec&) { return Vec::Zero(1); };
  model.k = [](const Vec&, const Vec&) { return Mat::Ones(1, 1); };
  const auto pc = population_curves(model, Vec::Constant(1, 0.3), 2000, 1);
  EXPECT_EQ(pc.phi(0), 0.0);
  EXPECT_EQ(pc.b(0), 0.0);
  const auto d = simulate_continuous(model, 20000, 4);
  EXPECT_NEAR(ols_slope(d.y(), d.x().col(0)), 0.0, 0.05);
}

TEST(SimulateContinuous, LinearModelSlopes) {
  const auto model = example1_scm(2.0, 1.0, {}, 0.5);
  const auto d = simulate_continuous(model, 100000, 11);
  // Y = 2 (Z + W) + U2 and X = Z + W + U1 with Z ~ Uniform(0, 1): the slopes on
  // Z are beta * alpha = 2 and alpha = 1. Tolerance is 3 standard errors.
  const double sd_z = std::sqrt(1.0 / 12.0), n = 1e5;
  const double se_y = std::sqrt(4 * 0.25 + 0.25) / (sd_z * std::sqrt(n));
  const double se_x = std::sqrt(0.25 + 0.25) / (sd_z * std::sqrt(n));
  EXPECT_NEAR(ols_slope(d.y(), d.z().col(0)), 2.0, 3 * se_y);
  EXPECT_NEAR(ols_slope(d.x().col(0), d.z().col(0)), 1.0, 3 * se_x);
  const auto again = simulate_continuous(model, 100, 11), first = simulate_continuous(model, 100, 11);
  EXPECT_EQ(again.y(), first.y());
  EXPECT_EQ(again.x(), first.x());
}

TEST(Oracle, ConstantOutcomes) {
  const auto rep = exact_population_oracle(constant_outcomes(1.0, 4.0, -2.0), PairSet::all_pairs(3));
  EXPECT_DOUBLE_EQ(rep.theta_true(0), 3.0);
  EXPECT_DOUBLE_EQ(rep.theta_true(1), -3.0);
  EXPECT_LE(rep.identity_residual, 1e-14);
}

TEST(Oracle, IndependentOutcomesSatisfyIdentity) {
  std::mt19937_64 eng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto model = testing_support::random_independent_model(eng);
    const auto rep = exact_population_oracle(model, PairSet::all_pairs(model.m));
    EXPECT_LE(rep.cond_i_corr, 1e-12);
    EXPECT_LE(rep.identity_residual, 1e-12);
  }
}

TEST(Oracle, CorrelatedEffectsBreakIdentity) {
  const auto rep = exact_population_oracle(noncompliance_scm(1.5, 0.5), PairSet::all_pairs(2));
  EXPECT_NEAR(rep.cond_i_corr, 0.5, 1e-12);
  EXPECT_GT(rep.identity_residual, 0.1);
  EXPECT_DOUBLE_EQ(rep.theta_true(0), 1.5);
}

TEST(Scenarios, ParticipationModelTruth) {
  const auto model = example2_scm(1, 2, 0, 1, ScalarLaw::uniform(-1, 1), 0.5);
  EXPECT_DOUBLE_EQ(model.theta()(0), 2.0);
  for (double z : {0.0, 0.2, 0.5, 0.9, 1.0}) {
    EXPECT_NEAR(model.curves.q(z)(1), (1 + z) / 2, 1e-15);
    EXPECT_NEAR(model.a_true(z)(0), 0.5, 1e-15);
    EXPECT_NEAR(model.b_identified(z), 1.0, 1e-15);
  }
}

TEST(Scenarios, QuadraticModelPhi) {
  const auto model = example4_scm();
  for (double z : {0.0, 0.3, 0.7, 1.0}) EXPECT_NEAR(model.truth.phi(Vec::Constant(1, z))(0), 2 * z, 1e-12);
}

TEST(Scenarios, PerfectComplianceContrast) {
  ComplianceSpec comp;
  OutcomeLaw law;
  law.effect = 1.5;
  const auto rep = exact_population_oracle(example3_scm(comp, law), PairSet::all_pairs(2));
  ASSERT_EQ(rep.A_pop.rows(), 1);
  EXPECT_DOUBLE_EQ(rep.A_pop(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(rep.b_pop(0), 1.5);
}

TEST(ScmProperties, SampleConditionalsConvergeToPopulation) {
  std::mt19937_64 eng(23);
  const auto model = testing_support::random_independent_model(eng);
  const auto d = simulate_discrete(model, 100000, 5);
  const auto rep = exact_population_oracle(model, PairSet::spanning(model.m));
  const auto stats = group_stats(d);
  for (std::size_t s = 0; s < rep.pairs.size(); ++s) {
    const auto [hi, lo] = rep.pairs.pairs()[s];
    const double env = 5.0 * std::sqrt(1.0 / static_cast<double>(std::min(stats.group_counts[hi - 1],
                                                                           stats.group_counts[lo - 1])));
    for (int j = 1; j <= model.n; ++j)
      EXPECT_NEAR(stats.cond_prob_x(hi - 1, j) - stats.cond_prob_x(lo - 1, j), rep.A_pop(s, j - 1), env);
  }
}

TEST(ScmProperties, AnalyticDerivativesMatchFiniteDifferences) {
  for (const auto& model : {example1_scm(2, 1, {}, 0.5), example4_scm(), example5_scm(), linear_vector_scm(),
                            shared_coefficient_scm()})
    EXPECT_LE(derivative_check(model, 20, 3), 1e-4) << model.name;
  auto bad = example4_scm();
  bad.h = [](const Vec& x, const Vec&) { return Vec::Constant(1, 3.0 * x(0)); };
  EXPECT_THROW(verify_derivatives(bad), ValidationError);
}

TEST(ScmProperties, SimulatedDataPassInvariantsAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_NO_THROW(simulate_discrete(noncompliance_scm(), 200, seed));
    EXPECT_NO_THROW(simulate_mixed(three_level_mixed_scm(1, -1), 200, seed));
    EXPECT_NO_THROW(simulate_continuous(example5_scm(), 200, seed));
    EXPECT_NO_THROW(simulate_continuous(linear_vector_scm(), 200, seed));
  }
}

TEST(ScmProperties, ConditionDiagnosticForMixedModels) {
  EXPECT_LT(mixed_condition_i_corr(three_level_mixed_scm(1, -1, 0.0), 0.5, 0.05, 50000, 1), 0.03);
  EXPECT_GT(mixed_condition_i_corr(three_level_mixed_scm(1, -1, 0.8), 0.5, 0.05, 50000, 1), 0.1);
}

TEST(Substreams, IndependentOfRequestOrder) {
  std::vector<std::uint64_t> forward, backward;
  for (std::uint64_t k = 0; k < 8; ++k) forward.push_back(substream_seed(99, k, 3));
  for (std::uint64_t k = 8; k-- > 0;) backward.push_back(substream_seed(99, k, 3));
  std::reverse(backward.begin(), backward.end());
  EXPECT_EQ(forward, backward);
  std::sort(forward.begin(), forward.end());
  EXPECT_EQ(std::unique(forward.begin(), forward.end()), forward.end());
}
