#include <gtest/gtest.h>

#include <sstream>

#include "ivcalc/dataset.hpp"
#include "ivcalc/scenarios.hpp"
#include "ivcalc/scm.hpp"
#include "support.hpp"

using namespace ivcalc;

namespace {

Dataset parse(const std::string& text, DatasetSchema schema = {}) {
  std::istringstream in(text);
  return parse_csv(in, schema);
}

DiscreteDataset four_points() {
  return DiscreteDataset({1, 3, 0, 2}, {1, 1, 0, 0}, {0, 1, 0, 1}, 1, 2);
}

}  // namespace

TEST(LoadCsv, ThreeRowDiscreteFile) {
  const auto data = parse("y,x,z\n1.5,0,0\n2.5,1,1\n-1,1,0\n");
  const auto& d = std::get<DiscreteDataset>(data);
  EXPECT_EQ(d.size(), 3u);
  EXPECT_EQ(d.n(), 1);
  EXPECT_EQ(d.m(), 2);
  EXPECT_DOUBLE_EQ(d.y()[2], -1.0);
  EXPECT_EQ(d.x()[1], 1);
}

TEST(LoadCsv, HeaderOnlyGivesEmptyDataset) {
  DatasetSchema schema;
  schema.n = 1;
  schema.m = 2;
  EXPECT_EQ(std::get<DiscreteDataset>(parse("y,x,z\n", schema)).size(), 0u);
  schema.kind = DatasetKind::Mixed;
  EXPECT_EQ(std::get<MixedDataset>(parse("y,x,z\n", schema)).size(), 0u);
}

TEST(LoadCsv, CodeAboveDeclaredLevelsNamesTheRow) {
  DatasetSchema schema;
  schema.n = 2;
  try {
    parse("y,x,z\n0,1,0\n0,5,1\n", schema);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
}

TEST(LoadCsv, RejectsMalformedRows) {
  EXPECT_THROW(parse("y,x,z\n1,0\n"), ValidationError);
  EXPECT_THROW(parse("y,x,z\n1,a,0\n"), ValidationError);
  EXPECT_THROW(parse("y,x,z\n,0,0\n"), ValidationError);  // missing values are not supported
  EXPECT_THROW(parse("a,b,c\n1,0,0\n"), ValidationError);
  DatasetSchema mixed;
  mixed.kind = DatasetKind::Mixed;
  EXPECT_THROW(parse("y,x,z\n1,0,1.5\n", mixed), ValidationError);
}

TEST(LoadCsv, ContinuousHeaderAndBounds) {
  DatasetSchema schema;
  schema.kind = DatasetKind::Continuous;
  const auto& d = std::get<ContinuousDataset>(parse("y,x1,x2,z1\n1,2,3,0.5\n4,5,6,0.25\n", schema));
  EXPECT_EQ(d.n(), 2);
  EXPECT_EQ(d.m(), 1);
  EXPECT_DOUBLE_EQ(d.x()(1, 1), 6.0);
  schema.z_bounds = std::vector<Interval>{{0.0, 0.3}};
  EXPECT_THROW(parse("y,x1,z1\n1,2,0.5\n", schema), ValidationError);
}

TEST(LoadCsv, WriteThenReadRoundTripsExactly) {
  const auto model = example1_scm(2.0, 1.0, {}, 0.5);
  const Dataset data = simulate_continuous(model, 50, 3);
  std::ostringstream out;
  write_csv(out, data);
  DatasetSchema schema;
  schema.kind = DatasetKind::Continuous;
  const auto back = std::get<ContinuousDataset>(parse(out.str(), schema));
  const auto& orig = std::get<ContinuousDataset>(data);
  EXPECT_EQ(back.y(), orig.y());
  EXPECT_EQ(back.x(), orig.x());
  EXPECT_EQ(back.z(), orig.z());
}

TEST(DatasetInvariants, ConstructorsRejectViolations) {
  EXPECT_THROW(DiscreteDataset({1, 2}, {0}, {0, 1}, 1, 2), ValidationError);
  EXPECT_THROW(DiscreteDataset({1}, {2}, {0}, 1, 2), ValidationError);
  EXPECT_THROW(DiscreteDataset({1}, {0}, {2}, 1, 2), ValidationError);
  EXPECT_THROW(DiscreteDataset({1}, {0}, {0}, 0, 2), ValidationError);
  EXPECT_THROW(DiscreteDataset({1}, {0}, {0}, 1, 1), ValidationError);
  EXPECT_THROW(MixedDataset({1}, {0}, {-0.1}, 1), ValidationError);
  EXPECT_NO_THROW(MixedDataset({1, 2}, {0, 1}, {0.0, 1.0}, 1));
  Vec y(1);
  y << 1;
  Mat x(1, 1), z(1, 1);
  x << 0.5;
  z << 2.0;
  EXPECT_THROW(ContinuousDataset(y, x, z, {{0, 1}}, {{0, 1}}), ValidationError);
  EXPECT_THROW(ContinuousDataset(y, x, x, {{0, 1}}, {{0, std::numeric_limits<double>::infinity()}}),
               ValidationError);
}

TEST(GroupStats, FourPointArithmetic) {
  const auto s = group_stats(four_points());
  EXPECT_DOUBLE_EQ(s.cond_mean_y(0), 0.5);
  EXPECT_DOUBLE_EQ(s.cond_mean_y(1), 2.5);
  EXPECT_DOUBLE_EQ(s.cond_prob_x(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(s.cond_prob_x(1, 1), 0.5);
  EXPECT_EQ(s.group_counts, (std::vector<std::size_t>{2, 2}));
  EXPECT_TRUE(s.empty_groups().empty());
}

TEST(GroupStats, SingleGroupFlagsTheOther) {
  const DiscreteDataset d({1, 2, 3}, {0, 1, 1}, {1, 1, 1}, 1, 3);
  const auto s = group_stats(d);
  EXPECT_EQ(s.empty_groups(), (std::vector<int>{0, 2}));
  EXPECT_TRUE(std::isnan(s.cond_mean_y(0)));
  EXPECT_DOUBLE_EQ(s.cond_mean_y(1), 2.0);
}

TEST(GroupStats, FrequenciesMatchModelConditionals) {
  // P(X = 1 | Z = code) follows from the compliance shares of the model.
  ComplianceSpec comp;
  comp.never = 0.2;
  comp.always = 0.1;
  comp.complier = 0.6;
  comp.defier = 0.1;
  OutcomeLaw law;
  law.noise_spread = 1.0;
  const auto model = example3_scm(comp, law);
  const auto d = simulate_discrete(model, 100000, 5);
  const auto s = group_stats(d);
  const double p1[2] = {comp.always + comp.defier, comp.always + comp.complier};
  for (int z = 0; z < 2; ++z) {
    const double nz = static_cast<double>(s.group_counts[z]);
    EXPECT_NEAR(s.cond_prob_x(z, 1), p1[z], 3.0 * std::sqrt(p1[z] * (1 - p1[z]) / nz));
  }
}

TEST(GroupStatsProperties, PermutationInvariantAndPooled) {
  const auto d = simulate_discrete(noncompliance_scm(), 5000, 9);
  const auto order = testing_support::shuffled_order(d.size(), 4);
  const DiscreteDataset p(testing_support::permute(d.y(), order), testing_support::permute(d.x(), order),
                          testing_support::permute(d.z(), order), d.n(), d.m());
  const auto a = group_stats(d), b = group_stats(p);
  EXPECT_EQ(a.group_counts, b.group_counts);
  EXPECT_LT((a.cond_mean_y - b.cond_mean_y).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.cond_prob_x - b.cond_prob_x).cwiseAbs().maxCoeff(), 1e-15);

  double total = 0.0, pooled = 0.0, ymax = 0.0;
  for (double v : d.y()) {
    total += v;
    ymax = std::max(ymax, std::abs(v));
  }
  std::size_t count = 0;
  for (int i = 0; i < d.m(); ++i) {
    pooled += static_cast<double>(a.group_counts[i]) * a.cond_mean_y(i);
    count += a.group_counts[i];
    EXPECT_NEAR(a.cond_prob_x.row(i).sum(), 1.0, 1e-12);
    EXPECT_GE(a.cond_prob_x.row(i).minCoeff(), 0.0);
  }
  EXPECT_EQ(count, d.size());
  EXPECT_LE(std::abs(pooled - total), 1e-9 * static_cast<double>(d.size()) * ymax);
}
