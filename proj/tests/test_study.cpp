#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ivcalc/study.hpp"

using namespace ivcalc;
namespace fs = std::filesystem;

namespace {

json study_cfg(const std::string& scenario, json estimators, json sizes, int reps, std::uint64_t seed = 11) {
  return {{"scenario", {{"name", scenario}}},
          {"estimators", std::move(estimators)},
          {"sample_sizes", std::move(sizes)},
          {"replications", reps},
          {"seed", seed}};
}

/// Path of the ConfigError raised by `f`, or "<none>".
template <class F>
std::string error_path(F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<none>";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const SummaryRow& row_of(const StudyResult& r, const std::string& est, std::size_t n, int comp = 1) {
  for (const auto& row : r.summary)
    if (row.estimator == est && row.sample_size == n && row.component == comp) return row;
  throw std::runtime_error("no summary row");
}

}  // namespace

TEST(Overrides, NestedArrayAndStringValues) {
  json cfg = {{"scenario", {{"name", "example1"}}}, {"estimators", json::array({"ratio", "ols"})}};
  config::apply_override(cfg, "scenario.params.beta=3.5");
  config::apply_override(cfg, "estimators.1=phi");
  config::apply_override(cfg, "outputs=out/dir");
  config::apply_override(cfg, "sample_sizes=[10,20]");
  EXPECT_EQ(cfg["scenario"]["params"]["beta"], 3.5);
  EXPECT_EQ(cfg["estimators"][1], "phi");
  EXPECT_EQ(cfg["outputs"], "out/dir");
  EXPECT_EQ(cfg["sample_sizes"], json::array({10, 20}));
}

TEST(Overrides, Malformed) {
  json cfg = {{"estimators", json::array({"ratio"})}, {"seed", 3}};
  EXPECT_THROW(config::apply_override(cfg, "seed"), ConfigError);
  EXPECT_THROW(config::apply_override(cfg, "=4"), ConfigError);
  EXPECT_THROW(config::apply_override(cfg, "a..b=1"), ConfigError);
  EXPECT_THROW(config::apply_override(cfg, "estimators.x=1"), ConfigError);
  EXPECT_THROW(config::apply_override(cfg, "estimators.4=1"), ConfigError);
  EXPECT_THROW(config::apply_override(cfg, "seed.inner=1"), ConfigError);
}

TEST(ParseStudy, ErrorsCarryFieldPaths) {
  const auto ok = study_cfg("example1", json::array({"ratio"}), json::array({100}), 2);
  EXPECT_NO_THROW(parse_study(ok));
  auto with = [&](const std::string& assignment) {
    json c = ok;
    config::apply_override(c, assignment);
    return error_path([&] { parse_study(c); });
  };
  EXPECT_EQ(with("scenario.name=nope"), "scenario.name");
  EXPECT_EQ(with("scenario.params.gamma=1"), "scenario.params.gamma");
  EXPECT_EQ(with("scenario.params.beta=\"two\""), "scenario.params.beta");
  EXPECT_EQ(with("estimators.0=nope"), "estimators.0.name");
  EXPECT_EQ(with("replications=0"), "replications");
  EXPECT_EQ(with("sample_sizes=[100,-5]"), "sample_sizes");
  EXPECT_EQ(with("sample_sizes=[]"), "sample_sizes");
  EXPECT_EQ(with("threads=-1"), "threads");
  EXPECT_EQ(with("colour=1"), "colour");
  json no_est = ok;
  no_est.erase("estimators");
  EXPECT_EQ(error_path([&] { parse_study(no_est); }), "estimators");
}

TEST(ParseStudy, UnknownScenarioListsRegistered) {
  try {
    build_model({{"scenario", {{"name", "nope"}}}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const auto& s : scenario_registry()) EXPECT_NE(msg.find(s.name), std::string::npos) << s.name;
  }
}

TEST(Registry, EveryScenarioSimulatesItsKind) {
  std::set<std::string> names;
  for (const auto& s : scenario_registry()) {
    EXPECT_TRUE(names.insert(s.name).second) << s.name;
    const auto model = build_model({{"scenario", {{"name", s.name}}}});
    EXPECT_EQ(kind_of(model), s.kind) << s.name;
    const auto data = simulate(model, 200, 1);
    EXPECT_EQ(static_cast<DatasetKind>(data.index()), s.kind) << s.name;
    EXPECT_TRUE(truth_json(model).is_object()) << s.name;
  }
  std::set<std::string> est;
  for (const auto& e : estimator_registry()) EXPECT_TRUE(est.insert(e.name).second) << e.name;
  EXPECT_THROW(find_estimator("nope"), ConfigError);
}

TEST(Registry, RegimeMismatch) {
  const auto data = simulate(build_model({{"scenario", {{"name", "example1"}}}}), 200, 1);
  EXPECT_THROW(run_estimator(find_estimator("discrete"), data, json::object(), 0), RegimeError);
  EXPECT_THROW(run_estimator(find_estimator("ratio"), data, {{"bogus", 1}}, 0), ConfigError);
}

TEST(RunStudy, SingleReplicationHasNoSd) {
  const auto res = run_study(parse_study(study_cfg("example1", json::array({"ratio", "ols"}), json::array({500}), 1)));
  ASSERT_EQ(res.summary.size(), 2u);
  for (const auto& row : res.summary) {
    EXPECT_EQ(row.replications, 1);
    EXPECT_EQ(row.failures, 0);
    EXPECT_FALSE(row.sd);
    ASSERT_TRUE(row.truth);
    EXPECT_EQ(*row.truth, 2.0);
    EXPECT_NEAR(*row.bias, row.mean - 2.0, 1e-15);
    EXPECT_NEAR(*row.rmse, std::abs(*row.bias), 1e-15);
  }
  EXPECT_EQ(res.records[0][0].size(), 1u);
}

TEST(RunStudy, DeterministicFiles) {
  auto cfg = study_cfg("perfect_compliance", json::array({"discrete", "group_difference"}), json::array({300, 600}), 4);
  cfg["estimators"][0] = {{"name", "discrete"}, {"options", {{"bootstrap", 30}}}};
  const auto sc = parse_study(cfg);
  const fs::path root = fs::temp_directory_path() / "ivcalc_study_det";
  fs::remove_all(root);
  write_study(run_study(sc), root / "a");
  write_study(run_study(sc), root / "b");
  for (const char* f : {"summary.csv", "summary.json", "replications.csv", "truth.json"}) {
    const auto a = slurp(root / "a" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, slurp(root / "b" / f)) << f;
  }
  cfg["seed"] = 12;
  write_study(run_study(parse_study(cfg)), root / "c");
  EXPECT_NE(slurp(root / "a" / "replications.csv"), slurp(root / "c" / "replications.csv"));
  fs::remove_all(root);
}

TEST(RunStudy, ThreadCountDoesNotChangeResults) {
  auto cfg = study_cfg("noncompliance", json::array({"discrete", "group_difference"}), json::array({400, 800}), 6);
  cfg["threads"] = 1;
  const auto one = run_study(parse_study(cfg));
  cfg["threads"] = 3;
  const auto three = run_study(parse_study(cfg));
  EXPECT_EQ(summary_json(one, false), summary_json(three, false));
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t e = 0; e < 2; ++e)
      for (std::size_t r = 0; r < 6; ++r) EXPECT_EQ(one.records[k][e][r].estimate, three.records[k][e][r].estimate);
}

TEST(RunStudy, FailuresAreRecorded) {
  const auto res = run_study(parse_study(study_cfg("example2", json::array({"smooth", "group_difference"}), json::array({10}), 3)));
  const auto& smooth = row_of(res, "smooth", 10);
  EXPECT_EQ(smooth.failures, 3);
  EXPECT_TRUE(std::isnan(smooth.mean));
  for (const auto& rec : res.records[0][0]) EXPECT_FALSE(rec.error.empty());
  EXPECT_EQ(row_of(res, "group_difference", 10).failures, 0);
}

TEST(RunStudy, RegimeMismatchIsFatal) {
  EXPECT_THROW(run_study(parse_study(study_cfg("example1", json::array({"discrete"}), json::array({100}), 2))),
               RegimeError);
}

TEST(RunStudy, CoverageWithBootstrap) {
  auto cfg = study_cfg("perfect_compliance", json::array({json{{"name", "discrete"}, {"options", {{"bootstrap", 50}}}}}),
                       json::array({2000}), 10);
  const auto res = run_study(parse_study(cfg));
  const auto& row = row_of(res, "discrete", 2000);
  ASSERT_TRUE(row.coverage);
  EXPECT_GE(*row.coverage, 0.5);
  EXPECT_LE(*row.coverage, 1.0);
  EXPECT_FALSE(row_of(run_study(parse_study(study_cfg("perfect_compliance",
                                                      json::array({json{{"name", "discrete"}, {"options", {{"bootstrap", 0}}}}}),
                                                      json::array({2000}), 2))),
                      "discrete", 2000)
                   .coverage);
}

TEST(RunStudy, LinearModelRatioVersusNaiveSlope) {
  // Ratio RMSE falls with N while the OLS bias stays near its limit
  // cov(X, Y) / var(X) - beta from the model's second moments.
  const auto res = run_study(parse_study(study_cfg("example1", json::array({"ratio", "ols"}),
                                                   json::array({1000, 10000, 100000}), 200)));
  const double var_latent = 1.0 / 12.0 + 0.25;
  const double limit = (2.0 * var_latent + 0.5 * 0.25) / (var_latent + 0.25);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t n : {1000u, 10000u, 100000u}) {
    const auto& r = row_of(res, "ratio", n);
    EXPECT_EQ(r.failures, 0);
    EXPECT_LT(*r.rmse, prev) << n;
    prev = *r.rmse;
    const auto& o = row_of(res, "ols", n);
    EXPECT_NEAR(*o.bias, limit - 2.0, 5.0 * *o.sd / std::sqrt(200.0) + 1e-3) << n;
  }
}
