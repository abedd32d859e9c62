#pragma once

// Config-driven simulation, estimation and Monte Carlo studies. Configs are
// JSON; see README.md for the grammar.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "json.hpp"

#include "ivcalc/continuous_iv.hpp"
#include "ivcalc/dataset.hpp"
#include "ivcalc/discrete_iv.hpp"
#include "ivcalc/error.hpp"
#include "ivcalc/scenarios.hpp"
#include "ivcalc/scm.hpp"
#include "ivcalc/smooth_iv.hpp"

namespace ivcalc {

using json = nlohmann::json;

/// Configuration problem; `path` is the dotted location of the bad field.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Dataset regime does not match the estimator.
class RegimeError : public Error {
 public:
  using Error::Error;
};

namespace config {

inline std::string join(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

inline double number(const json& obj, const std::string& key, double fallback, const std::string& path) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(join(path, key), "expected a number");
  return v.get<double>();
}

inline long long integer(const json& obj, const std::string& key, long long fallback, const std::string& path) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(join(path, key), "expected an integer");
  return v.get<long long>();
}

inline std::uint64_t seed(const json& obj, const std::string& key, std::uint64_t fallback, const std::string& path) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::uint64_t>(v.get<long long>());
  throw ConfigError(join(path, key), "expected a nonnegative integer");
}

inline bool boolean(const json& obj, const std::string& key, bool fallback, const std::string& path) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) throw ConfigError(join(path, key), "expected true or false");
  return v.get<bool>();
}

inline std::optional<double> optional_number(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  return number(obj, key, 0.0, path);
}

inline const json& object(const json& obj, const std::string& key, const std::string& path) {
  static const json empty = json::object();
  if (!obj.contains(key)) return empty;
  const auto& v = obj.at(key);
  if (!v.is_object()) throw ConfigError(join(path, key), "expected an object");
  return v;
}

/// Rejects keys outside `allowed`.
inline void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& path) {
  if (!obj.is_object()) throw ConfigError(path, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) {
      std::string list;
      for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
      throw ConfigError(join(path, key), "unknown key (expected one of: " + list + ")");
    }
  }
}

/// Applies `dotted.path=value`; the value is parsed as JSON when possible and
/// kept as a string otherwise. Numeric path segments index arrays.
inline void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("", "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(key, "empty path segment");
    const bool last = dot == std::string::npos;
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(part);
      } catch (const std::exception&) {
        throw ConfigError(key, "expected an array index, got '" + part + "'");
      }
      if (idx >= node->size()) throw ConfigError(key, "array index out of range");
      node = &(*node)[idx];
    } else {
      if (node->is_null()) *node = json::object();
      if (!node->is_object()) throw ConfigError(key, "cannot descend into a non-object");
      node = &(*node)[part];
    }
    if (last) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

inline json load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
  json j = json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("", "config file '" + path + "' is not valid JSON");
  if (!j.is_object()) throw ConfigError("", "config root must be an object");
  return j;
}

inline ScalarLaw scalar_law(const json& obj, const std::string& path) {
  check_keys(obj, {"law", "a", "b", "mean", "sd", "lo", "hi"}, path);
  const std::string law = obj.value("law", std::string("normal"));
  if (law == "normal") return ScalarLaw::normal(number(obj, "mean", 0.0, path), number(obj, "sd", 1.0, path));
  if (law == "uniform") return ScalarLaw::uniform(number(obj, "lo", -1.0, path), number(obj, "hi", 1.0, path));
  throw ConfigError(join(path, "law"), "expected 'normal' or 'uniform'");
}

}  // namespace config

// ---------------------------------------------------------------------------
// Scenarios.

using Model = std::variant<DiscreteScm, MixedScm, ContinuousScm>;

inline DatasetKind kind_of(const Model& m) {
  return static_cast<DatasetKind>(m.index());
}

struct Scenario {
  std::string name;
  std::string description;
  DatasetKind kind;
  std::function<Model(const json& params, const std::string& path)> build;
};

inline const std::vector<Scenario>& scenario_registry() {
  using namespace config;
  static const std::vector<Scenario> registry = {
      {"noncompliance",
       "binary assignment with never/always-takers; theta and cond_i_corr set by construction",
       DatasetKind::Discrete,
       [](const json& p, const std::string& path) -> Model {
         check_keys(p, {"theta", "cond_i_corr", "complier", "effect_spread", "noise_spread"}, path);
         return noncompliance_scm(number(p, "theta", 1.5, path), number(p, "cond_i_corr", 0.0, path),
                                  number(p, "complier", 0.6, path), number(p, "effect_spread", 1.0, path),
                                  number(p, "noise_spread", 1.0, path));
       }},
      {"perfect_compliance",
       "binary assignment, X = Z, homogeneous effect theta",
       DatasetKind::Discrete,
       [](const json& p, const std::string& path) -> Model {
         check_keys(p, {"theta", "p_assign", "noise_spread"}, path);
         ComplianceSpec comp;
         comp.p_assign = number(p, "p_assign", 0.5, path);
         OutcomeLaw law;
         law.effect = number(p, "theta", 1.5, path);
         law.noise_spread = number(p, "noise_spread", 1.0, path);
         return example3_scm(comp, law);
       }},
      {"example1",
       "linear model Y = beta X - beta U1 + U2, X = alpha Z + W + U1",
       DatasetKind::Continuous,
       [](const json& p, const std::string& path) -> Model {
         check_keys(p, {"beta", "alpha", "u1_sd", "u2_sd", "w_sd", "corr"}, path);
         Example1NoiseSds sds;
         sds.u1 = number(p, "u1_sd", 0.5, path);
         sds.u2 = number(p, "u2_sd", 0.5, path);
         sds.w = number(p, "w_sd", 0.5, path);
         return example1_scm(number(p, "beta", 2.0, path), number(p, "alpha", 1.0, path), sds,
                             number(p, "corr", 0.5, path));
       }},
      {"example2",
       "binary X = I(alpha0 + alpha1 Z + eps > 0), Y = beta0 + beta1 X + eta, copula-correlated noise",
       DatasetKind::Mixed,
       [](const json& p, const std::string& path) -> Model {
         check_keys(p, {"beta0", "beta1", "alpha0", "alpha1", "eps", "corr", "eta_sd"}, path);
         const ScalarLaw eps = p.contains("eps") ? scalar_law(object(p, "eps", path), join(path, "eps"))
                                                 : ScalarLaw::uniform(-1.0, 1.0);
         return example2_scm(number(p, "beta0", 1.0, path), number(p, "beta1", 2.0, path),
                             number(p, "alpha0", 0.0, path), number(p, "alpha1", 1.0, path), eps,
                             number(p, "corr", 0.5, path), number(p, "eta_sd", 1.0, path));
       }},
      {"three_level",
       "three-level X with multinomial-logit class curves",
       DatasetKind::Mixed,
       [](const json& p, const std::string& path) -> Model {
         check_keys(p, {"theta1", "theta2", "effect_rank_corr", "confounding"}, path);
         return three_level_mixed_scm(number(p, "theta1", 1.0, path), number(p, "theta2", -1.0, path),
                                      number(p, "effect_rank_corr", 0.0, path),
                                      number(p, "confounding", 0.5, path));
       }},
      {"example4",
       "additive model Y = X^2 + U1, X = Z + U2",
       DatasetKind::Continuous,
       [](const json& p, const std::string& path) -> Model {
         check_keys(p, {"u1_sd", "u2_sd", "corr"}, path);
         Example4Spec spec;
         spec.u1_sd = number(p, "u1_sd", 0.5, path);
         spec.u2_sd = number(p, "u2_sd", 0.5, path);
         spec.corr = number(p, "corr", 0.5, path);
         return example4_scm(spec);
       }},
      {"example5",
       "random coefficient Y = U1 X + U2, X = Z + U3",
       DatasetKind::Continuous,
       [](const json& p, const std::string& path) -> Model {
         check_keys(p, {"u1_mean", "u1_sd", "u2_sd", "u3_sd", "corr"}, path);
         Example5Spec spec;
         spec.u1 = ScalarLaw::normal(number(p, "u1_mean", 1.5, path), number(p, "u1_sd", 1.0, path));
         spec.u2_sd = number(p, "u2_sd", 0.5, path);
         spec.u3_sd = number(p, "u3_sd", 0.5, path);
         spec.corr = number(p, "corr", 0.5, path);
         return example5_scm(spec);
       }},
      {"linear_vector",
       "two instruments: X = Z1 + Z2 + U, Y = coef X + U'",
       DatasetKind::Continuous,
       [](const json& p, const std::string& path) -> Model {
         check_keys(p, {"coef", "u_sd", "corr"}, path);
         return linear_vector_scm(number(p, "coef", 3.0, path), number(p, "u_sd", 0.5, path),
                                  number(p, "corr", 0.5, path));
       }},
      {"shared_coefficient",
       "negative control: Y = U1 X + U2, X = U1 Z + U3",
       DatasetKind::Continuous,
       [](const json& p, const std::string& path) -> Model {
         check_keys(p, {"mean", "sd", "noise_sd"}, path);
         return shared_coefficient_scm(number(p, "mean", 1.0, path), number(p, "sd", 0.5, path),
                                       number(p, "noise_sd", 0.25, path));
       }},
  };
  return registry;
}

inline std::string scenario_names() {
  std::string out;
  for (const auto& s : scenario_registry()) out += (out.empty() ? "" : ", ") + s.name;
  return out;
}

inline const Scenario& find_scenario(const std::string& name) {
  for (const auto& s : scenario_registry())
    if (s.name == name) return s;
  throw ConfigError("scenario.name", "unknown scenario '" + name + "'; registered: " + scenario_names());
}

inline Model build_model(const json& cfg) {
  const auto& sc = config::object(cfg, "scenario", "");
  config::check_keys(sc, {"name", "params"}, "scenario");
  if (!sc.contains("name") || !sc.at("name").is_string()) throw ConfigError("scenario.name", "missing scenario name");
  const auto& scenario = find_scenario(sc.at("name").get<std::string>());
  try {
    return scenario.build(config::object(sc, "params", "scenario"), "scenario.params");
  } catch (const ValidationError& e) {
    throw ConfigError("scenario.params", e.what());
  }
}

inline Dataset simulate(const Model& model, std::size_t count, std::uint64_t seed) {
  return std::visit(
      [&](const auto& m) -> Dataset {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, DiscreteScm>) return simulate_discrete(m, count, seed);
        else if constexpr (std::is_same_v<T, MixedScm>) return simulate_mixed(m, count, seed);
        else return simulate_continuous(m, count, seed);
      },
      model);
}

namespace detail {

inline json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json mat_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

}  // namespace detail

/// Ground truth for the sidecar file, with a note on how each value is known.
inline json truth_json(const Model& model) {
  json t;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, DiscreteScm>) {
          const auto rep = exact_population_oracle(m, PairSet::all_pairs(m.m));
          t["regime"] = "discrete";
          t["theta_true"] = detail::vec_json(rep.theta_true);
          t["A_pop"] = detail::mat_json(rep.A_pop);
          t["b_pop"] = detail::vec_json(rep.b_pop);
          t["cond_i_corr"] = rep.cond_i_corr;
          t["identity_residual"] = rep.identity_residual;
          t["notes"] = "theta_true = E(U_j - U_0) and A_pop, b_pop computed by exact enumeration of the finite "
                       "latent distribution over all Z-level pairs";
        } else if constexpr (std::is_same_v<T, MixedScm>) {
          t["regime"] = "mixed";
          t["theta_true"] = detail::vec_json(m.theta());
          const Vec grid = linspace(0.0, 1.0, 101);
          json rows = json::array();
          for (Eigen::Index i = 0; i < grid.size(); ++i) {
            const Vec a = m.a_true(grid(i));
            rows.push_back({{"z", grid(i)}, {"a", detail::vec_json(a)}, {"b", m.b_identified(grid(i))}});
          }
          t["curves"] = rows;
          t["notes"] = "theta_true = class mean differences by construction; a(z) is the analytic derivative of the "
                       "class-probability curves and b(z) = theta . a(z)";
        } else {
          t["regime"] = "continuous";
          t["scenario"] = m.name;
          if (m.truth.theta) t["theta_true"] = detail::vec_json(*m.truth.theta);
          if (m.truth.naive_slope_limit) t["naive_slope_limit"] = *m.truth.naive_slope_limit;
          if (m.truth.phi && m.m == 1) {
            json rows = json::array();
            const Vec grid = linspace(m.z_bounds[0].lo, m.z_bounds[0].hi, 101);
            for (Eigen::Index i = 0; i < grid.size(); ++i)
              rows.push_back({{"z", grid(i)}, {"phi", detail::vec_json(m.truth.phi(Vec::Constant(1, grid(i))))}});
            t["phi_true"] = rows;
          }
          if (m.truth.sprime) {
            json rows = json::array();
            const Vec grid = linspace(m.x_bounds[0].lo, m.x_bounds[0].hi, 101);
            for (Eigen::Index i = 0; i < grid.size(); ++i)
              rows.push_back({{"x", grid(i)}, {"sprime", m.truth.sprime(grid(i))}});
            t["sprime_true"] = rows;
          }
          t["notes"] = "phi_true = E(df/dx | Z = z) from the structural maps (closed form or Gauss-Hermite "
                       "quadrature); theta_true where the effect is constant";
        }
      },
      model);
  return t;
}

// ---------------------------------------------------------------------------
// Estimators.

struct CurveTable {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

struct EstimatorOutput {
  json result;
  std::vector<CurveTable> curves;
  Vec estimate;                ///< theta, or a phi summary for curve estimators
  std::optional<Mat> ci;       ///< per-component percentile interval
};

struct Estimator {
  std::string name;
  std::string description;
  std::vector<DatasetKind> kinds;
  std::function<EstimatorOutput(const Dataset&, const json& options, std::uint64_t seed)> run;
};

namespace detail {

inline json theta_json(const ThetaEstimate& e) {
  json j;
  j["theta"] = vec_json(e.theta);
  j["rank"] = e.rank;
  j["cond_number"] = e.cond_number;
  j["residual_norm"] = e.residual_norm;
  j["residuals"] = vec_json(e.residuals);
  if (e.boot_ci) j["boot_ci"] = mat_json(*e.boot_ci);
  if (e.boot_se) j["boot_se"] = vec_json(*e.boot_se);
  j["boot_failures"] = e.boot_failures;
  j["warnings"] = e.warnings;
  return j;
}

inline EstimatorOutput from_theta(const ThetaEstimate& e) {
  EstimatorOutput out;
  out.result = theta_json(e);
  out.estimate = e.theta;
  if (e.boot_ci) out.ci = *e.boot_ci;
  return out;
}

inline PairSet pair_option(const json& opt, int m) {
  if (!opt.contains("pairs")) return PairSet::all_pairs(m);
  const auto& p = opt.at("pairs");
  if (p.is_string()) {
    if (p == "all") return PairSet::all_pairs(m);
    if (p == "spanning") return PairSet::spanning(m);
    throw ConfigError("options.pairs", "expected 'all', 'spanning' or a list of [i, k] pairs");
  }
  if (!p.is_array()) throw ConfigError("options.pairs", "expected 'all', 'spanning' or a list of [i, k] pairs");
  std::vector<std::pair<int, int>> pairs;
  for (const auto& e : p) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer())
      throw ConfigError("options.pairs", "each pair must be [i, k] with 1-based integer levels");
    pairs.emplace_back(e[0].get<int>(), e[1].get<int>());
  }
  try {
    PairSet s(pairs);
    s.validate_for(m);
    return s;
  } catch (const ValidationError& err) {
    throw ConfigError("options.pairs", err.what());
  }
}

inline ContinuousIvOptions continuous_options(const json& o) {
  using namespace config;
  ContinuousIvOptions opt;
  opt.degree = static_cast<int>(integer(o, "degree", opt.degree, "options"));
  opt.bandwidth_x = optional_number(o, "bandwidth_x", "options");
  opt.bandwidth_y = optional_number(o, "bandwidth_y", "options");
  opt.grid_points = static_cast<int>(integer(o, "grid_points", opt.grid_points, "options"));
  opt.trim = number(o, "trim", opt.trim, "options");
  opt.tensor_points = static_cast<int>(integer(o, "tensor_points", opt.tensor_points, "options"));
  opt.cv_folds = static_cast<int>(integer(o, "cv_folds", opt.cv_folds, "options"));
  opt.cv_seed = seed(o, "cv_seed", opt.cv_seed, "options");
  opt.denom_tol = number(o, "denom_tol", opt.denom_tol, "options");
  opt.rank_tol = number(o, "rank_tol", opt.rank_tol, "options");
  return opt;
}

inline constexpr std::initializer_list<const char*> kContinuousKeys = {
    "degree", "bandwidth_x", "bandwidth_y", "grid_points", "trim", "tensor_points",
    "cv_folds", "cv_seed", "denom_tol", "rank_tol"};

inline CurveTable phi_table(const PhiCurve& c) {
  CurveTable t;
  t.name = "phi";
  const auto m = c.grid.cols(), n = c.phi.cols();
  for (Eigen::Index i = 0; i < m; ++i) t.header.push_back(m == 1 ? "z" : "z" + std::to_string(i + 1));
  for (Eigen::Index j = 0; j < n; ++j) t.header.push_back(n == 1 ? "phi" : "phi" + std::to_string(j + 1));
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      t.header.push_back(m == 1 && n == 1 ? "a" : "a" + std::to_string(i + 1) + std::to_string(j + 1));
  for (Eigen::Index i = 0; i < m; ++i) t.header.push_back(m == 1 ? "b" : "b" + std::to_string(i + 1));
  t.header.push_back("valid");
  t.header.push_back("reason");
  for (Eigen::Index g = 0; g < c.grid.rows(); ++g) {
    std::vector<double> row;
    for (Eigen::Index i = 0; i < m; ++i) row.push_back(c.grid(g, i));
    for (Eigen::Index j = 0; j < n; ++j) row.push_back(c.phi(g, j));
    const auto& a = c.a_vals[static_cast<std::size_t>(g)];
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < n; ++j) row.push_back(a(i, j));
    for (Eigen::Index i = 0; i < m; ++i) row.push_back(c.b_vals(g, i));
    row.push_back(c.valid[static_cast<std::size_t>(g)] ? 1.0 : 0.0);
    row.push_back(static_cast<double>(c.reason[static_cast<std::size_t>(g)]));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline json phi_json(const PhiCurve& c) {
  json j;
  j["valid_points"] = c.valid_count();
  j["grid_points"] = c.grid.rows();
  j["bandwidth_x"] = c.bandwidth_x;
  j["bandwidth_y"] = c.bandwidth_y;
  std::map<std::string, int> reasons;
  for (auto r : c.reason)
    if (r != MaskReason::None) ++reasons[to_string(r)];
  j["masked"] = reasons;
  j["warnings"] = c.warnings;
  j["reason_codes"] = {{"0", "none"}, {"1", "weak-denominator"}, {"2", "rank-deficient"}, {"3", "boundary"}};
  return j;
}

/// Mean of phi over valid grid points, per component.
inline Vec phi_summary(const PhiCurve& c) {
  Vec s = Vec::Zero(c.phi.cols());
  double k = 0.0;
  for (Eigen::Index g = 0; g < c.grid.rows(); ++g)
    if (c.valid[static_cast<std::size_t>(g)]) {
      s += c.phi.row(g).transpose();
      k += 1.0;
    }
  return k > 0.0 ? Vec(s / k) : s;
}

template <class T>
const T& expect(const Dataset& d, const std::string& estimator) {
  if (const auto* p = std::get_if<T>(&d)) return *p;
  throw RegimeError("estimator '" + estimator + "' does not accept a " +
                    to_string(static_cast<DatasetKind>(d.index())) + " dataset");
}

}  // namespace detail

inline const std::vector<Estimator>& estimator_registry() {
  using namespace config;
  static const std::vector<Estimator> registry = {
      {"discrete",
       "contrast system over Z-level pairs, least-squares solve",
       {DatasetKind::Discrete},
       [](const Dataset& data, const json& o, std::uint64_t seed_value) {
         check_keys(o, {"pairs", "rank_tol", "weak_cond", "weighted", "bootstrap"}, "options");
         const auto& d = detail::expect<DiscreteDataset>(data, "discrete");
         DiscreteIvOptions opt;
         opt.pairs = detail::pair_option(o, d.m());
         opt.solve.rank_tol = number(o, "rank_tol", opt.solve.rank_tol, "options");
         opt.solve.weak_cond = number(o, "weak_cond", opt.solve.weak_cond, "options");
         opt.solve.weighted = boolean(o, "weighted", false, "options");
         opt.bootstrap = static_cast<int>(integer(o, "bootstrap", opt.bootstrap, "options"));
         opt.seed = seed_value;
         const auto est = estimate_discrete(d, opt);
         auto out = detail::from_theta(est);
         json labels = json::array();
         for (const auto& p : opt.pairs->pairs()) labels.push_back(PairSet::label(p));
         out.result["pairs"] = labels;
         return out;
       }},
      {"group_difference",
       "naive E(Y | X = x_j) - E(Y | X = x_0)",
       {DatasetKind::Discrete, DatasetKind::Mixed},
       [](const Dataset& data, const json& o, std::uint64_t) {
         check_keys(o, {}, "options");
         EstimatorOutput out;
         std::visit(
             [&](const auto& d) {
               using T = std::decay_t<decltype(d)>;
               if constexpr (std::is_same_v<T, ContinuousDataset>) {
                 throw RegimeError("estimator 'group_difference' does not accept a continuous dataset");
               } else {
                 out.estimate = naive_group_difference(d.y(), d.x(), d.n());
               }
             },
             data);
         out.result["theta"] = detail::vec_json(out.estimate);
         return out;
       }},
      {"smooth",
       "class-probability and mean derivatives on a grid, functional least squares",
       {DatasetKind::Mixed},
       [](const Dataset& data, const json& o, std::uint64_t seed_value) {
         check_keys(o, {"degree", "degree_probs", "bandwidth_probs", "bandwidth_mean", "grid_points", "trim", "density_weights",
                        "cv_folds", "cv_seed", "rank_tol", "bootstrap"},
                    "options");
         const auto& d = detail::expect<MixedDataset>(data, "smooth");
         SmoothIvOptions opt;
         opt.degree = static_cast<int>(integer(o, "degree", opt.degree, "options"));
         opt.degree_probs = static_cast<int>(integer(o, "degree_probs", opt.degree_probs, "options"));
         opt.bandwidth_probs = optional_number(o, "bandwidth_probs", "options");
         opt.bandwidth_mean = optional_number(o, "bandwidth_mean", "options");
         opt.grid_points = static_cast<int>(integer(o, "grid_points", opt.grid_points, "options"));
         opt.trim = number(o, "trim", opt.trim, "options");
         opt.density_weights = boolean(o, "density_weights", opt.density_weights, "options");
         opt.cv_folds = static_cast<int>(integer(o, "cv_folds", opt.cv_folds, "options"));
         opt.cv_seed = seed(o, "cv_seed", opt.cv_seed, "options");
         opt.rank_tol = number(o, "rank_tol", opt.rank_tol, "options");
         opt.bootstrap = static_cast<int>(integer(o, "bootstrap", 0, "options"));
         opt.seed = seed_value;
         const auto res = estimate_smooth(d, opt);
         auto out = detail::from_theta(res.estimate);
         const auto& sys = res.system;
         out.result["bandwidth_probs"] = sys.bandwidth_probs;
         out.result["bandwidth_mean"] = sys.bandwidth_mean;
         const auto info = check_linear_independence(sys, opt.rank_tol);
         out.result["effective_rank"] = info.effective_rank;
         out.result["gram_cond"] = info.gram_cond;
         CurveTable ab{"ab", {"z"}, {}}, q{"q", {"z"}, {}};
         for (int j = 1; j <= d.n(); ++j) ab.header.push_back("a" + std::to_string(j));
         ab.header.insert(ab.header.end(), {"b", "weight", "residual"});
         for (int j = 0; j <= d.n(); ++j) q.header.push_back("q" + std::to_string(j));
         q.header.push_back("mu");
         for (Eigen::Index g = 0; g < sys.grid.size(); ++g) {
           std::vector<double> r{sys.grid(g)}, s{sys.grid(g)};
           for (int j = 0; j < d.n(); ++j) r.push_back(sys.a_curves(g, j));
           r.insert(r.end(), {sys.b_curve(g), sys.weights(g), res.estimate.residuals(g)});
           for (int j = 0; j <= d.n(); ++j) s.push_back(sys.probs(g, j));
           s.push_back(sys.mu(g));
           ab.rows.push_back(std::move(r));
           q.rows.push_back(std::move(s));
         }
         out.curves = {std::move(ab), std::move(q)};
         return out;
       }},
      {"phi",
       "phi(z) = E(dY/dX | Z = z) from a(z) phi(z) = b(z); estimate reports its mean over valid points",
       {DatasetKind::Continuous},
       [](const Dataset& data, const json& o, std::uint64_t) {
         config::check_keys(o, detail::kContinuousKeys, "options");
         const auto& d = detail::expect<ContinuousDataset>(data, "phi");
         const auto opt = detail::continuous_options(o);
         const auto curve = d.n() == 1 && d.m() == 1 ? estimate_phi_scalar(d, opt) : estimate_phi_vector(d, opt);
         EstimatorOutput out;
         out.result = detail::phi_json(curve);
         out.estimate = detail::phi_summary(curve);
         out.result["phi_mean"] = detail::vec_json(out.estimate);
         out.curves.push_back(detail::phi_table(curve));
         return out;
       }},
      {"sprime",
       "s'(x) from E(s'(X) | Z = z) = phi(z) by Tikhonov regularization (additive models)",
       {DatasetKind::Continuous},
       [](const Dataset& data, const json& o, std::uint64_t) {
         json phi_opts = json::object(), rest = json::object();
         for (const auto& [k, v] : o.items()) {
           bool is_phi = false;
           for (const char* key : detail::kContinuousKeys) is_phi = is_phi || k == key;
           (is_phi ? phi_opts : rest)[k] = v;
         }
         check_keys(rest, {"x_points", "x_trim", "bandwidth_kx", "bandwidth_kz", "lambda", "lcurve_points"},
                    "options");
         const auto& d = detail::expect<ContinuousDataset>(data, "sprime");
         SprimeOptions opt;
         opt.phi = detail::continuous_options(phi_opts);
         opt.x_points = static_cast<int>(integer(rest, "x_points", opt.x_points, "options"));
         opt.x_trim = number(rest, "x_trim", opt.x_trim, "options");
         opt.bandwidth_kx = optional_number(rest, "bandwidth_kx", "options");
         opt.bandwidth_kz = optional_number(rest, "bandwidth_kz", "options");
         opt.lambda = optional_number(rest, "lambda", "options");
         opt.lcurve_points = static_cast<int>(integer(rest, "lcurve_points", opt.lcurve_points, "options"));
         const auto res = estimate_sprime(d, opt);
         EstimatorOutput out;
         out.result = detail::phi_json(res.phi);
         out.result["lambda"] = res.sprime.lambda;
         out.result["residual_norm"] = res.sprime.residual_norm;
         out.result["solution_norm"] = res.sprime.solution_norm;
         out.estimate = Vec::Constant(1, res.sprime.sprime.mean());
         out.result["sprime_mean"] = out.estimate(0);
         out.curves.push_back(detail::phi_table(res.phi));
         CurveTable s{"sprime", {"x", "sprime"}, {}};
         for (Eigen::Index i = 0; i < res.sprime.x_grid.size(); ++i)
           s.rows.push_back({res.sprime.x_grid(i), res.sprime.sprime(i)});
         out.curves.push_back(std::move(s));
         if (res.lcurve) {
           CurveTable l{"lcurve", {"lambda", "residual_norm", "solution_norm", "curvature"}, {}};
           for (Eigen::Index i = 0; i < res.lcurve->lambdas.size(); ++i)
             l.rows.push_back({res.lcurve->lambdas(i), res.lcurve->residual_norms(i), res.lcurve->solution_norms(i),
                               res.lcurve->curvature(i)});
           out.curves.push_back(std::move(l));
         }
         return out;
       }},
      {"constant_effect",
       "theta = E(phi(Z)) for models with a constant average effect",
       {DatasetKind::Continuous},
       [](const Dataset& data, const json& o, std::uint64_t seed_value) {
         json phi_opts = json::object(), rest = json::object();
         for (const auto& [k, v] : o.items()) {
           bool is_phi = false;
           for (const char* key : detail::kContinuousKeys) is_phi = is_phi || k == key;
           (is_phi ? phi_opts : rest)[k] = v;
         }
         check_keys(rest, {"bootstrap"}, "options");
         const auto& d = detail::expect<ContinuousDataset>(data, "constant_effect");
         const auto res = estimate_theta_constant(d, detail::continuous_options(phi_opts),
                                                  static_cast<int>(integer(rest, "bootstrap", 0, "options")),
                                                  seed_value);
         auto out = detail::from_theta(res.estimate);
         out.result["dropped_fraction"] = res.dropped_fraction;
         out.result["phi"] = detail::phi_json(res.phi);
         out.curves.push_back(detail::phi_table(res.phi));
         return out;
       }},
      {"ratio",
       "linear ratio estimator slope(Y on Z) / slope(X on Z)",
       {DatasetKind::Continuous},
       [](const Dataset& data, const json& o, std::uint64_t) {
         check_keys(o, {}, "options");
         const auto r = linear_iv_ratio(detail::expect<ContinuousDataset>(data, "ratio"));
         EstimatorOutput out;
         out.estimate = Vec::Constant(1, r.beta_hat);
         out.result = {{"theta", {r.beta_hat}}, {"slope_yz", r.slope_yz}, {"slope_xz", r.slope_xz}, {"se", r.se}};
         Mat ci(1, 2);
         ci << r.beta_hat - 1.959963984540054 * r.se, r.beta_hat + 1.959963984540054 * r.se;
         out.ci = ci;
         out.result["ci"] = detail::mat_json(ci);
         return out;
       }},
      {"ols",
       "naive least-squares slope of Y on X",
       {DatasetKind::Continuous},
       [](const Dataset& data, const json& o, std::uint64_t) {
         check_keys(o, {}, "options");
         EstimatorOutput out;
         out.estimate = Vec::Constant(1, naive_ols_slope(detail::expect<ContinuousDataset>(data, "ols")));
         out.result["theta"] = detail::vec_json(out.estimate);
         return out;
       }},
  };
  return registry;
}

inline std::string estimator_names() {
  std::string out;
  for (const auto& e : estimator_registry()) out += (out.empty() ? "" : ", ") + e.name;
  return out;
}

inline const Estimator& find_estimator(const std::string& name) {
  for (const auto& e : estimator_registry())
    if (e.name == name) return e;
  throw ConfigError("estimator", "unknown estimator '" + name + "'; registered: " + estimator_names());
}

/// Runs an estimator after checking the dataset regime.
inline EstimatorOutput run_estimator(const Estimator& est, const Dataset& data, const json& options,
                                     std::uint64_t seed) {
  const auto kind = static_cast<DatasetKind>(data.index());
  bool ok = false;
  for (auto k : est.kinds) ok = ok || k == kind;
  if (!ok) throw RegimeError("estimator '" + est.name + "' does not accept a " + to_string(kind) + " dataset");
  try {
    return est.run(data, options.is_null() ? json::object() : options, seed);
  } catch (const ValidationError& e) {
    // Option values the estimator rejects are configuration errors.
    throw ConfigError("options", e.what());
  }
}

// ---------------------------------------------------------------------------
// Dataset files.

/// Reads the header to tell continuous layouts (x1.., z1..) from y,x,z.
inline bool csv_is_continuous(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset file '" + path + "'");
  std::string header;
  std::getline(in, header);
  return header.find("x1") != std::string::npos;
}

/// Loads a dataset in the regime the estimator expects.
inline Dataset load_for(const Estimator& est, const std::string& path, const json& schema_cfg) {
  const bool continuous = csv_is_continuous(path);
  DatasetSchema schema;
  if (continuous) {
    schema.kind = DatasetKind::Continuous;
  } else {
    bool discrete = false, mixed = false;
    for (auto k : est.kinds) {
      discrete = discrete || k == DatasetKind::Discrete;
      mixed = mixed || k == DatasetKind::Mixed;
    }
    if (!discrete && !mixed)
      throw RegimeError("estimator '" + est.name + "' needs a continuous dataset (header y,x1..,z1..)");
    std::string kind = schema_cfg.value("kind", std::string());
    if (kind.empty()) kind = discrete ? "discrete" : "mixed";
    if (kind == "discrete") schema.kind = DatasetKind::Discrete;
    else if (kind == "mixed") schema.kind = DatasetKind::Mixed;
    else throw ConfigError("dataset.kind", "expected 'discrete' or 'mixed'");
  }
  if (schema_cfg.contains("n")) schema.n = static_cast<int>(config::integer(schema_cfg, "n", 1, "dataset"));
  if (schema_cfg.contains("m")) schema.m = static_cast<int>(config::integer(schema_cfg, "m", 2, "dataset"));
  try {
    return load_csv(path, schema);
  } catch (const ValidationError& e) {
    if (!continuous && schema.kind == DatasetKind::Discrete)
      throw RegimeError(std::string("dataset does not parse as discrete: ") + e.what());
    throw;
  }
}

inline void write_table(const std::filesystem::path& path, const CurveTable& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  for (std::size_t i = 0; i < t.header.size(); ++i) out << (i ? "," : "") << t.header[i];
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      if (std::isnan(row[i])) out << "nan";
      else out << detail::format_real(row[i]);
    }
    out << '\n';
  }
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Studies.

struct EstimatorSpec {
  std::string name;
  json options;
};

struct StudyConfig {
  json scenario;
  std::vector<EstimatorSpec> estimators;
  std::vector<std::size_t> sample_sizes;
  int replications = 1;
  std::uint64_t seed = 0;
  std::string outputs = "study_out";
  int threads = 0;  ///< 0: IVCALC_THREADS or hardware concurrency
};

inline StudyConfig parse_study(const json& cfg) {
  using namespace config;
  check_keys(cfg, {"scenario", "estimators", "sample_sizes", "sample_size", "replications", "seed", "outputs",
                   "threads", "dataset"},
             "");
  StudyConfig sc;
  sc.scenario = cfg.value("scenario", json::object());
  build_model(cfg);  // validates the scenario block
  if (!cfg.contains("estimators") || !cfg.at("estimators").is_array() || cfg.at("estimators").empty())
    throw ConfigError("estimators", "expected a nonempty list");
  for (std::size_t i = 0; i < cfg.at("estimators").size(); ++i) {
    const auto& e = cfg.at("estimators")[i];
    const std::string path = "estimators." + std::to_string(i);
    EstimatorSpec spec;
    if (e.is_string()) {
      spec.name = e.get<std::string>();
      spec.options = json::object();
    } else {
      check_keys(e, {"name", "options"}, path);
      if (!e.contains("name") || !e.at("name").is_string()) throw ConfigError(path + ".name", "missing name");
      spec.name = e.at("name").get<std::string>();
      spec.options = object(e, "options", path);
    }
    try {
      find_estimator(spec.name);
    } catch (const ConfigError& err) {
      throw ConfigError(path + ".name", err.what());
    }
    sc.estimators.push_back(std::move(spec));
  }
  if (!cfg.contains("sample_sizes") || !cfg.at("sample_sizes").is_array() || cfg.at("sample_sizes").empty())
    throw ConfigError("sample_sizes", "expected a nonempty list of positive integers");
  for (const auto& v : cfg.at("sample_sizes")) {
    if (!v.is_number_integer() || v.get<long long>() <= 0)
      throw ConfigError("sample_sizes", "expected a nonempty list of positive integers");
    sc.sample_sizes.push_back(static_cast<std::size_t>(v.get<long long>()));
  }
  sc.replications = static_cast<int>(integer(cfg, "replications", 1, ""));
  if (sc.replications < 1) throw ConfigError("replications", "must be at least 1");
  sc.seed = config::seed(cfg, "seed", 0, "");
  if (cfg.contains("outputs")) {
    if (!cfg.at("outputs").is_string()) throw ConfigError("outputs", "expected a directory path");
    sc.outputs = cfg.at("outputs").get<std::string>();
  }
  sc.threads = static_cast<int>(integer(cfg, "threads", 0, ""));
  if (sc.threads < 0) throw ConfigError("threads", "must be nonnegative");
  return sc;
}

inline int default_threads() {
  if (const char* env = std::getenv("IVCALC_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

/// Runs `count` independent tasks on `threads` workers. Each task writes only
/// its own slot, so results do not depend on scheduling.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& task) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (std::size_t w = 0; w < std::min(workers, count); ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct ReplicationRecord {
  bool ok = false;
  std::string error;
  Vec estimate;
  std::optional<Mat> ci;
};

struct SummaryRow {
  std::string estimator;
  std::size_t sample_size = 0;
  int component = 0;
  int replications = 0;
  int failures = 0;
  double mean = 0.0;
  std::optional<double> sd;
  std::optional<double> truth;
  std::optional<double> bias;
  std::optional<double> rmse;
  std::optional<double> coverage;
};

struct StudyResult {
  StudyConfig config;
  json truth;
  /// records[n][e][r]
  std::vector<std::vector<std::vector<ReplicationRecord>>> records;
  std::vector<SummaryRow> summary;
  double seconds = 0.0;
};

namespace detail {

/// Causal target an estimator is scored against, if the scenario has one.
/// Naive baselines are scored against it too, so their bias shows.
inline std::optional<Vec> study_truth(const Model& model, const std::string& estimator) {
  if (estimator == "sprime") return std::nullopt;
  return std::visit(
      [](const auto& m) -> std::optional<Vec> {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ContinuousScm>) {
          return m.truth.theta;
        } else {
          return m.theta();
        }
      },
      model);
}

}  // namespace detail

/// Replication r at sample-size index k draws its data from substream
/// (seed, k, r); estimator e bootstraps from substream (seed ^ e-tag, k, r).
inline StudyResult run_study(const StudyConfig& sc) {
  const auto t0 = std::chrono::steady_clock::now();
  const Model model = build_model(json{{"scenario", sc.scenario}});
  StudyResult res;
  res.config = sc;
  res.truth = truth_json(model);
  const auto n_sizes = sc.sample_sizes.size(), n_est = sc.estimators.size();
  const auto reps = static_cast<std::size_t>(sc.replications);
  res.records.assign(n_sizes, std::vector<std::vector<ReplicationRecord>>(n_est, std::vector<ReplicationRecord>(reps)));
  const int threads = sc.threads > 0 ? sc.threads : default_threads();
  parallel_for(n_sizes * reps, threads, [&](std::size_t task) {
    const auto k = task / reps, r = task % reps;
    std::optional<Dataset> data;
    std::string sim_error;
    try {
      data = simulate(model, sc.sample_sizes[k], substream_seed(sc.seed, k, r));
    } catch (const Error& e) {
      sim_error = std::string("simulation: ") + e.what();
    }
    for (std::size_t e = 0; e < n_est; ++e) {
      auto& rec = res.records[k][e][r];
      if (!data) {
        rec.error = sim_error;
        continue;
      }
      try {
        const auto& est = find_estimator(sc.estimators[e].name);
        const auto out = run_estimator(est, *data, sc.estimators[e].options,
                                       substream_seed(sc.seed ^ 0x5bd1e995ULL * (e + 1), k, r));
        rec.estimate = out.estimate;
        rec.ci = out.ci;
        rec.ok = rec.estimate.allFinite();
        if (!rec.ok) rec.error = "non-finite estimate";
      } catch (const ConfigError&) {
        throw;
      } catch (const RegimeError&) {
        throw;
      } catch (const Error& err) {
        rec.error = err.what();
      }
    }
  });
  for (std::size_t k = 0; k < n_sizes; ++k)
    for (std::size_t e = 0; e < n_est; ++e) {
      const auto& recs = res.records[k][e];
      const auto truth = detail::study_truth(model, sc.estimators[e].name);
      Eigen::Index comps = 0;
      for (const auto& rec : recs)
        if (rec.ok) comps = std::max(comps, rec.estimate.size());
      if (comps == 0) comps = truth ? truth->size() : 1;
      for (Eigen::Index c = 0; c < comps; ++c) {
        SummaryRow row;
        row.estimator = sc.estimators[e].name;
        row.sample_size = sc.sample_sizes[k];
        row.component = static_cast<int>(c) + 1;
        row.replications = sc.replications;
        std::vector<double> vals;
        int covered = 0, with_ci = 0;
        for (const auto& rec : recs) {
          if (!rec.ok || rec.estimate.size() <= c) {
            ++row.failures;
            continue;
          }
          vals.push_back(rec.estimate(c));
          if (rec.ci && truth && truth->size() > c) {
            ++with_ci;
            covered += (*rec.ci)(c, 0) <= (*truth)(c) && (*truth)(c) <= (*rec.ci)(c, 1);
          }
        }
        if (!vals.empty()) {
          const auto ms = mean_sd(vals);
          row.mean = ms.mean;
          if (vals.size() > 1) row.sd = ms.sd;
          if (truth && truth->size() > c) {
            row.truth = (*truth)(c);
            row.bias = ms.mean - *row.truth;
            double sq = 0.0;
            for (double v : vals) sq += (v - *row.truth) * (v - *row.truth);
            row.rmse = std::sqrt(sq / static_cast<double>(vals.size()));
          }
          if (with_ci > 0) row.coverage = static_cast<double>(covered) / with_ci;
        } else {
          row.mean = std::numeric_limits<double>::quiet_NaN();
        }
        res.summary.push_back(row);
      }
    }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline json summary_json(const StudyResult& res, bool include_timing = true) {
  json rows = json::array();
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  for (const auto& r : res.summary) {
    rows.push_back({{"estimator", r.estimator},
                    {"sample_size", r.sample_size},
                    {"component", r.component},
                    {"replications", r.replications},
                    {"failures", r.failures},
                    {"failure_rate", static_cast<double>(r.failures) / r.replications},
                    {"mean", std::isfinite(r.mean) ? json(r.mean) : json(nullptr)},
                    {"sd", opt(r.sd)},
                    {"truth", opt(r.truth)},
                    {"bias", opt(r.bias)},
                    {"rmse", opt(r.rmse)},
                    {"coverage", opt(r.coverage)}});
  }
  json j;
  j["scenario"] = res.config.scenario;
  j["seed"] = res.config.seed;
  j["replications"] = res.config.replications;
  j["rows"] = rows;
  j["truth"] = res.truth;
  if (include_timing) j["timing"] = {{"seconds", res.seconds}};
  return j;
}

namespace detail {

inline void write_cell(std::ostream& out, const std::optional<double>& v) {
  if (v && std::isfinite(*v)) out << format_real(*v);
}

}  // namespace detail

/// summary.csv, summary.json, replications.csv and truth.json under `dir`.
inline void write_study(const StudyResult& res, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "summary.csv", std::ios::binary);
    out << "estimator,sample_size,component,replications,failures,failure_rate,mean,sd,truth,bias,rmse,coverage\n";
    for (const auto& r : res.summary) {
      out << r.estimator << ',' << r.sample_size << ',' << r.component << ',' << r.replications << ','
          << r.failures << ',';
      out << detail::format_real(static_cast<double>(r.failures) / r.replications);
      out << ',';
      detail::write_cell(out, std::isfinite(r.mean) ? std::optional<double>(r.mean) : std::nullopt);
      for (const auto* v : {&r.sd, &r.truth, &r.bias, &r.rmse, &r.coverage}) {
        out << ',';
        detail::write_cell(out, *v);
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "replications.csv", std::ios::binary);
    out << "estimator,sample_size,replication,component,status,estimate,ci_lo,ci_hi,error\n";
    for (std::size_t k = 0; k < res.records.size(); ++k)
      for (std::size_t e = 0; e < res.records[k].size(); ++e)
        for (std::size_t r = 0; r < res.records[k][e].size(); ++r) {
          const auto& rec = res.records[k][e][r];
          const auto comps = std::max<Eigen::Index>(1, rec.estimate.size());
          for (Eigen::Index c = 0; c < comps; ++c) {
            out << res.config.estimators[e].name << ',' << res.config.sample_sizes[k] << ',' << r + 1 << ','
                << c + 1 << ',' << (rec.ok ? "ok" : "failed") << ',';
            if (rec.ok) out << detail::format_real(rec.estimate(c));
            out << ',';
            if (rec.ok && rec.ci) out << detail::format_real((*rec.ci)(c, 0));
            out << ',';
            if (rec.ok && rec.ci) out << detail::format_real((*rec.ci)(c, 1));
            std::string msg = rec.error;
            for (auto& ch : msg)
              if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
            out << ',' << msg << '\n';
          }
        }
  }
  write_json(dir / "summary.json", summary_json(res, false));
  write_json(dir / "timing.json", {{"seconds", res.seconds}});
  write_json(dir / "truth.json", res.truth);
}

}  // namespace ivcalc
