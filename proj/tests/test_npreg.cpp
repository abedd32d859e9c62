#include <gtest/gtest.h>

#include "ivcalc/npreg.hpp"
#include "ivcalc/random.hpp"
#include "ivcalc/scenarios.hpp"
#include "ivcalc/scm.hpp"
#include "support.hpp"

using namespace ivcalc;
using testing_support::direct_local_poly;

namespace {

struct Sample {
  std::vector<double> x, y;
};

Sample uniform_sample(std::size_t n, std::uint64_t seed, const std::function<double(double)>& f,
                      double noise = 0.0) {
  auto eng = make_engine(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, noise > 0 ? noise : 1.0);
  Sample s;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = unif(eng);
    s.x.push_back(x);
    s.y.push_back(f(x) + (noise > 0 ? gauss(eng) : 0.0));
  }
  return s;
}

/// Interior grid points: the fit window lies inside the sample range.
std::vector<Eigen::Index> interior(const Vec& grid, double half) {
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < grid.size(); ++i)
    if (grid(i) - half > 0.0 && grid(i) + half < 1.0) out.push_back(i);
  return out;
}

}  // namespace

class Reproduction : public ::testing::TestWithParam<std::size_t> {};

TEST_P(Reproduction, AffineAndQuadraticAndCubicExactly) {
  const std::size_t n = GetParam();  // below and above the binning threshold
  const Vec grid = linspace(0.0, 1.0, 41);
  const double h = 0.05;
  const double half = h * kSupportPerSd;
  {
    const auto s = uniform_sample(n, 1, [](double x) { return 2 * x + 1; });
    const auto fit = fit_local_poly(s.x, s.y, 1, h, grid);
    for (auto i : interior(grid, half)) {
      EXPECT_NEAR(fit.values(i), 2 * grid(i) + 1, 1e-8);
      EXPECT_NEAR(fit.derivs(i), 2.0, 1e-8);
    }
  }
  {
    const auto s = uniform_sample(n, 2, [](double x) { return x * x - 0.3 * x; });
    const auto fit = fit_local_poly(s.x, s.y, 2, h, grid);
    for (auto i : interior(grid, half)) {
      EXPECT_NEAR(fit.values(i), grid(i) * grid(i) - 0.3 * grid(i), 1e-8);
      EXPECT_NEAR(fit.derivs(i), 2 * grid(i) - 0.3, 1e-8);
    }
  }
  {
    const auto s = uniform_sample(n, 3, [](double x) { return x * x * x; });
    const auto fit = fit_local_poly(s.x, s.y, 3, h, grid);
    for (auto i : interior(grid, half)) EXPECT_NEAR(fit.derivs(i), 3 * grid(i) * grid(i), 1e-8);
  }
}

INSTANTIATE_TEST_SUITE_P(SampleSizes, Reproduction, ::testing::Values(500u, 20000u));

TEST(LocalPoly, MatchesDirectWeightedLeastSquares) {
  for (std::size_t n : {400u, 30000u}) {
    const auto s = uniform_sample(n, 5, [](double x) { return std::sin(6 * x); }, 0.3);
    const Vec grid = linspace(0.0, 1.0, 23);
    for (int degree : {1, 2}) {
      const auto fit = fit_local_poly(s.x, s.y, degree, 0.04, grid);
      for (Eigen::Index i = 0; i < grid.size(); ++i) {
        ASSERT_TRUE(fit.valid[i]);
        const auto [v, d] = direct_local_poly(s.x, s.y, degree, 0.04 * kSupportPerSd, grid(i));
        EXPECT_NEAR(fit.values(i), v, 1e-9) << n << " " << degree << " " << grid(i);
        EXPECT_NEAR(fit.derivs(i), d, 1e-7) << n << " " << degree << " " << grid(i);
      }
    }
  }
}

TEST(LocalPoly, SineDerivativeWithCrossValidatedBandwidth) {
  const auto s = uniform_sample(50000, 7, [](double x) { return std::sin(4 * x); }, 0.1);
  const auto cv = select_bandwidth_cv(s.x, s.y, 2, default_bandwidth_candidates(s.x));
  const Vec grid = default_grid(s.x);
  const auto fit = fit_local_poly(s.x, s.y, 2, cv.bandwidth, grid);
  const double lo = grid(0) + 0.1 * (grid(grid.size() - 1) - grid(0));
  const double hi = grid(grid.size() - 1) - 0.1 * (grid(grid.size() - 1) - grid(0));
  double sq = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < grid.size(); ++i)
    if (grid(i) >= lo && grid(i) <= hi) {
      sq += std::pow(fit.derivs(i) - 4 * std::cos(4 * grid(i)), 2);
      ++count;
    }
  EXPECT_LT(std::sqrt(sq / count), 0.15);

  // Central differences of the fitted values against the fitted slope. The
  // degree-2 slope carries a leading h^2 m'''(x) mu4 / (6 mu2) bias that the
  // values do not (biweight in sd units: mu2 = 1, mu4 = 7/3), so it is removed.
  // The expansion holds where the kernel window lies inside the data.
  const double spacing = grid(1) - grid(0);
  const double h2 = cv.bandwidth * cv.bandwidth;
  for (auto i : interior(grid, cv.bandwidth * kSupportPerSd + spacing)) {
    const double fd = (fit.values(i + 1) - fit.values(i - 1)) / (2 * spacing);
    const double bias = 7.0 / 18.0 * h2 * (-64 * std::cos(4 * grid(i)));
    EXPECT_NEAR(fd, fit.derivs(i) - bias, std::max(0.05, 5 * spacing)) << grid(i);
  }
}

TEST(LocalPoly, OddDegreeDifferencesMatchSlopes) {
  // Odd degrees have no slope-only bias term at this order.
  const auto s = uniform_sample(50000, 7, [](double x) { return std::sin(4 * x); }, 0.1);
  for (int degree : {1, 3}) {
    const auto cv = select_bandwidth_cv(s.x, s.y, degree, default_bandwidth_candidates(s.x));
    const Vec grid = default_grid(s.x);
    const auto fit = fit_local_poly(s.x, s.y, degree, cv.bandwidth, grid);
    const double spacing = grid(1) - grid(0);
    for (Eigen::Index i = 1; i + 1 < grid.size(); ++i) {
      const double fd = (fit.values(i + 1) - fit.values(i - 1)) / (2 * spacing);
      EXPECT_NEAR(fd, fit.derivs(i), std::max(0.05, 5 * spacing)) << degree << " " << grid(i);
    }
  }
}

TEST(LocalPoly, InvariantToSampleOrder) {
  const auto s = uniform_sample(5000, 8, [](double x) { return x * std::exp(x); }, 0.2);
  const auto order = testing_support::shuffled_order(s.x.size(), 1);
  const auto px = testing_support::permute<double>(s.x, order), py = testing_support::permute<double>(s.y, order);
  const Vec grid = linspace(0.1, 0.9, 17);
  const auto a = fit_local_poly(s.x, s.y, 2, 0.07, grid), b = fit_local_poly(px, py, 2, 0.07, grid);
  EXPECT_LT((a.values - b.values).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.derivs - b.derivs).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(LocalPoly, MasksPointsWithoutLocalData) {
  std::vector<double> x{0.0, 0.01, 0.02, 0.03, 0.04, 0.05}, y{0, 1, 2, 3, 4, 5};
  const auto fit = fit_local_poly(x, y, 1, 0.01, linspace(0.0, 1.0, 5));
  EXPECT_TRUE(fit.valid[0]);
  EXPECT_FALSE(fit.valid[4]);
  EXPECT_FALSE(fit.warnings.empty());
}

TEST(BandwidthCv, PureNoiseScoresMatchExhaustiveOracle) {
  const auto s = uniform_sample(1000, 9, [](double) { return 0.0; }, 1.0);
  const Vec cand = default_bandwidth_candidates(s.x);
  const auto cv = select_bandwidth_cv(s.x, s.y, 1, cand, 5, 3);

  // Oracle: the same folds scored with from-scratch fits at each held-out point.
  const auto label = make_folds(s.x.size(), 5, 3);
  Vec oracle = Vec::Zero(cand.size());
  for (Eigen::Index c = 0; c < cand.size(); ++c)
    for (int f = 0; f < 5; ++f) {
      std::vector<double> tx, ty;
      for (std::size_t i = 0; i < s.x.size(); ++i)
        if (label[i] != f) {
          tx.push_back(s.x[i]);
          ty.push_back(s.y[i]);
        }
      for (std::size_t i = 0; i < s.x.size(); ++i)
        if (label[i] == f) {
          const double pred = direct_local_poly(tx, ty, 1, cand(c) * kSupportPerSd, s.x[i]).first;
          oracle(c) += (s.y[i] - pred) * (s.y[i] - pred) / static_cast<double>(s.x.size());
        }
    }
  Eigen::Index best = 0;
  oracle.minCoeff(&best);
  EXPECT_EQ(cand(best), cv.bandwidth);
  for (Eigen::Index c = 0; c < cand.size(); ++c) {
    if (std::isfinite(cv.scores(c))) {
      EXPECT_NEAR(cv.scores(c), oracle(c), 1e-9);
    }
  }
}

TEST(BandwidthCv, PureNoiseFavoursLargestCandidate) {
  // Score differences between candidates are of the same order as their
  // sampling noise, so the largest wins most often rather than always.
  int largest = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto s = uniform_sample(1000, 100 + seed, [](double) { return 0.0; }, 1.0);
    const Vec cand = default_bandwidth_candidates(s.x);
    largest += select_bandwidth_cv(s.x, s.y, 1, cand, 5, 3).bandwidth == cand.maxCoeff();
  }
  EXPECT_GE(largest, 20);
}

TEST(BandwidthCv, SingleCandidateAndDeterminism) {
  const auto s = uniform_sample(3000, 10, [](double x) { return std::cos(3 * x); }, 0.2);
  Vec one(1);
  one << 0.123;
  EXPECT_EQ(select_bandwidth_cv(s.x, s.y, 2, one).bandwidth, 0.123);
  const Vec cand = default_bandwidth_candidates(s.x);
  const auto a = select_bandwidth_cv(s.x, s.y, 2, cand, 5, 4), b = select_bandwidth_cv(s.x, s.y, 2, cand, 5, 4);
  EXPECT_EQ(a.bandwidth, b.bandwidth);
  EXPECT_EQ(a.scores, b.scores);
}

TEST(BandwidthCv, CandidateGridSpansFixedFractionsOfRange) {
  std::vector<double> x{2.0, 3.0, 6.0};
  const Vec c = default_bandwidth_candidates(x);
  EXPECT_EQ(c.size(), 10);
  EXPECT_NEAR(c(0), 0.2, 1e-12);
  EXPECT_NEAR(c(9), 2.0, 1e-12);
  EXPECT_NEAR(c(1) / c(0), c(9) / c(8), 1e-12);
  const Vec g = default_grid(x);
  EXPECT_EQ(g.size(), 101);
  EXPECT_NEAR(g(0), 2.1, 1e-12);
  EXPECT_NEAR(g(100), 5.9, 1e-12);
}

TEST(MulticlassProbs, ConstantClassHasFlatCurves) {
  const auto s = uniform_sample(2000, 11, [](double) { return 0.0; });
  std::vector<int> x(s.x.size(), 1);
  const auto fit = fit_multiclass_probs(s.x, x, 1, 0.1, default_grid(s.x));
  for (Eigen::Index g = 0; g < fit.grid.size(); ++g) {
    EXPECT_NEAR(fit.probs(g, 1), 1.0, 1e-12);
    EXPECT_NEAR(fit.dprobs(g, 1), 0.0, 1e-9);
  }
  EXPECT_FALSE(fit.warnings.empty());  // class 0 never observed
}

TEST(MulticlassProbs, ParticipationCurve) {
  const auto model = example2_scm(1, 2, 0, 1, ScalarLaw::uniform(-1, 1), 0.5);
  const auto d = simulate_mixed(model, 100000, 12);
  // q is linear here, so a wide window costs no bias.
  const Vec grid = default_grid(d.z());
  const auto fit = fit_multiclass_probs(d.z(), d.x(), 1, 0.15, grid);
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    if (grid(g) < 0.1 || grid(g) > 0.9) continue;  // inner 80%
    EXPECT_NEAR(fit.probs(g, 1), (1 + grid(g)) / 2, 0.02);
    EXPECT_NEAR(fit.dprobs(g, 1), 0.5, 0.1);
  }
}

TEST(MulticlassProbs, LabelSwapSwapsColumns) {
  const auto model = three_level_mixed_scm(1, -1);
  const auto d = simulate_mixed(model, 4000, 13);
  std::vector<int> x(d.x().begin(), d.x().end()), swapped = x;
  for (auto& c : swapped) c = c == 1 ? 2 : c == 2 ? 1 : c;
  const Vec grid = default_grid(d.z(), 31);
  const auto a = fit_multiclass_probs(d.z(), x, 2, 0.1, grid);
  const auto b = fit_multiclass_probs(d.z(), swapped, 2, 0.1, grid);
  EXPECT_LT((a.probs.col(1) - b.probs.col(2)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.probs.col(2) - b.probs.col(1)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.dprobs.col(0) - b.dprobs.col(0)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(MulticlassProbs, RowsAreSimplicesWithZeroSumDerivatives) {
  const auto d = simulate_mixed(three_level_mixed_scm(1, -1), 3000, 14);
  for (double h : {0.02, 0.05, 0.2}) {
    const auto fit = fit_multiclass_probs(d.z(), d.x(), 2, h, default_grid(d.z()));
    for (Eigen::Index g = 0; g < fit.grid.size(); ++g) {
      if (!fit.valid[g]) continue;
      EXPECT_NEAR(fit.probs.row(g).sum(), 1.0, 1e-9);
      EXPECT_GE(fit.probs.row(g).minCoeff(), 0.0);
      EXPECT_LE(fit.probs.row(g).maxCoeff(), 1.0);
      EXPECT_NEAR(fit.dprobs.row(g).sum(), 0.0, 1e-9);
    }
  }
}

TEST(SimplexProjection, ClipsAndCarriesDerivatives) {
  Mat v(1, 3), d(1, 3);
  v << -0.1, 0.6, 0.6;
  d << 1.0, 2.0, -1.0;
  std::vector<bool> valid{true};
  project_to_simplex(v, d, valid);
  EXPECT_DOUBLE_EQ(v(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(v(0, 1), 0.5);
  // d/dt of c_j / sum with the clipped entry frozen: (2 * 1.2 - 0.6 * 1) / 1.44.
  EXPECT_NEAR(d(0, 1), (2.0 * 1.2 - 0.6 * 1.0) / 1.44, 1e-15);
  EXPECT_NEAR(d.row(0).sum(), 0.0, 1e-15);
}

namespace {

double column_moment(const CondDensityKernel& k, Eigen::Index j, int power, double center = 0.0) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < k.x_grid.size(); ++i)
    acc += k.x_weights(i) * k.K(i, j) * std::pow(k.x_grid(i) - center, power);
  return acc;
}

}  // namespace

TEST(CondDensity, DegenerateConditionalConcentrates) {
  const auto s = uniform_sample(5000, 15, [](double x) { return x; });
  const Vec xg = linspace(-0.2, 1.2, 141), zg = linspace(0.1, 0.9, 9);
  const double hx = 0.02;
  const auto k = fit_cond_density(s.y, s.x, xg, zg, hx, 0.02);
  for (Eigen::Index j = 0; j < zg.size(); ++j) {
    ASSERT_TRUE(k.valid[j]);
    double near = 0.0;
    for (Eigen::Index i = 0; i < xg.size(); ++i)
      if (std::abs(xg(i) - zg(j)) <= hx * kSupportPerSd + 0.02 * kSupportPerSd) near += k.x_weights(i) * k.K(i, j);
    EXPECT_GT(near, 0.999);
  }
}

TEST(CondDensity, GaussianConditionalMoments) {
  const auto model = example4_scm();
  const auto d = simulate_continuous(model, 100000, 16);
  std::vector<double> x(d.x().data(), d.x().data() + d.size()), z(d.z().data(), d.z().data() + d.size());
  const Vec xg = linspace(-2.5, 3.5, 151);
  const Vec zg = linspace(0.0, 1.0, 11);
  const auto k = fit_cond_density(x, z, xg, zg, 0.05, 0.03);
  ASSERT_TRUE(k.valid[0]);
  // X | Z = 0 ~ Normal(0, 0.5^2).
  const double mean = column_moment(k, 0, 1);
  EXPECT_NEAR(mean, 0.0, 0.05);
  EXPECT_NEAR(std::sqrt(column_moment(k, 0, 2, mean)), 0.5, 0.05);
  for (Eigen::Index j = 0; j < zg.size(); ++j) {
    if (!k.valid[j]) continue;
    EXPECT_NEAR(column_moment(k, j, 0), 1.0, 2e-2);
    EXPECT_GE(k.K.col(j).minCoeff(), 0.0);
  }
}

TEST(CondDensity, SparseColumnsAreMasked) {
  const auto s = uniform_sample(500, 17, [](double x) { return x; });
  const Vec zg = linspace(0.0, 3.0, 4);
  const auto k = fit_cond_density(s.y, s.x, linspace(0, 1, 21), zg, 0.05, 0.05);
  EXPECT_TRUE(k.valid[0]);
  EXPECT_FALSE(k.valid[2]);
  EXPECT_FALSE(k.valid[3]);
}

TEST(MultiLinear, ReproducesAffineSurfaces) {
  auto eng = make_engine(18);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Mat z(3000, 2), ys(3000, 1);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    z(i, 0) = unif(eng);
    z(i, 1) = unif(eng);
    ys(i, 0) = 1.0 + 2.0 * z(i, 0) - 3.0 * z(i, 1);
  }
  MultiLinearSmoother sm(z, ys);
  Vec h(2);
  h << 0.08, 0.08;
  Mat pts(2, 2);
  pts << 0.5, 0.5, 0.3, 0.7;
  const auto fit = sm.fit(h, pts);
  for (Eigen::Index p = 0; p < pts.rows(); ++p) {
    ASSERT_TRUE(fit.valid[p]);
    EXPECT_NEAR(fit.values(p, 0), 1.0 + 2.0 * pts(p, 0) - 3.0 * pts(p, 1), 1e-9);
    EXPECT_NEAR(fit.grads[p](0, 0), 2.0, 1e-8);
    EXPECT_NEAR(fit.grads[p](1, 0), -3.0, 1e-8);
  }
  EXPECT_EQ(default_tensor_grid(z).rows(), 441);
  EXPECT_THROW(default_tensor_grid(Mat::Zero(10, 3)), ValidationError);
}
