// ivcalc: simulate datasets, run estimators, run Monte Carlo studies.
//
// Exit codes: 0 success, 1 usage/config/input error, 2 estimation error.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ivcalc/ivcalc.hpp"

namespace fs = std::filesystem;
using ivcalc::json;

namespace {

json read_config(const std::string& path, const std::vector<std::string>& overrides) {
  json cfg = path.empty() ? json::object() : ivcalc::config::load_file(path);
  for (const auto& o : overrides) ivcalc::config::apply_override(cfg, o);
  return cfg;
}

/// `--out foo.csv` writes foo.csv and foo.truth.json; several sample sizes
/// get a `_N` suffix on the stem.
int cmd_simulate(const std::string& config_path, const std::vector<std::string>& overrides,
                 std::optional<std::uint64_t> seed, std::string out) {
  json cfg = read_config(config_path, overrides);
  if (seed) cfg["seed"] = *seed;
  ivcalc::config::check_keys(cfg, {"scenario", "seed", "sample_size", "sample_sizes", "outputs", "replications",
                                   "estimators", "threads", "dataset"},
                             "");
  const auto model = ivcalc::build_model(cfg);
  const auto root = ivcalc::config::seed(cfg, "seed", 0, "");
  std::vector<std::size_t> sizes;
  if (cfg.contains("sample_size")) {
    const auto n = ivcalc::config::integer(cfg, "sample_size", 0, "");
    if (n <= 0) throw ivcalc::ConfigError("sample_size", "must be positive");
    sizes.push_back(static_cast<std::size_t>(n));
  } else if (cfg.contains("sample_sizes") && cfg.at("sample_sizes").is_array()) {
    for (const auto& v : cfg.at("sample_sizes")) {
      if (!v.is_number_integer() || v.get<long long>() <= 0)
        throw ivcalc::ConfigError("sample_sizes", "expected positive integers");
      sizes.push_back(static_cast<std::size_t>(v.get<long long>()));
    }
  }
  if (sizes.empty()) throw ivcalc::ConfigError("sample_size", "missing (or give a nonempty sample_sizes list)");
  if (out.empty()) out = "data.csv";
  fs::path base(out);
  const fs::path dir = base.has_parent_path() ? base.parent_path() : fs::path(".");
  const std::string stem = base.extension() == ".csv" ? base.stem().string() : base.filename().string();
  fs::create_directories(dir);
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    const std::string name = sizes.size() == 1 ? stem : stem + "_" + std::to_string(sizes[k]);
    // A single file uses the root seed directly; a list uses one substream per size.
    const auto s = sizes.size() == 1 ? root : ivcalc::substream_seed(root, k);
    const auto data = ivcalc::simulate(model, sizes[k], s);
    ivcalc::write_csv((dir / (name + ".csv")).string(), data);
    std::cout << "wrote " << (dir / (name + ".csv")).string() << " (" << sizes[k] << " rows)\n";
  }
  json truth = ivcalc::truth_json(model);
  truth["scenario_config"] = cfg.at("scenario");
  truth["seed"] = root;
  ivcalc::write_json(dir / (stem + ".truth.json"), truth);
  return 0;
}

int cmd_estimate(const std::string& config_path, const std::vector<std::string>& overrides,
                 std::optional<std::uint64_t> seed, std::string data_path, std::string estimator,
                 std::string out) {
  json cfg = read_config(config_path, overrides);
  ivcalc::config::check_keys(cfg, {"estimator", "options", "dataset", "seed", "data"}, "");
  if (estimator.empty()) {
    if (!cfg.contains("estimator") || !cfg.at("estimator").is_string())
      throw ivcalc::ConfigError("estimator", "missing (pass --estimator or set it in the config)");
    estimator = cfg.at("estimator").get<std::string>();
  }
  if (data_path.empty()) {
    if (!cfg.contains("data") || !cfg.at("data").is_string())
      throw ivcalc::ConfigError("data", "missing (pass --data or set it in the config)");
    data_path = cfg.at("data").get<std::string>();
  }
  const auto& est = ivcalc::find_estimator(estimator);
  const json options = ivcalc::config::object(cfg, "options", "");
  const json schema = ivcalc::config::object(cfg, "dataset", "");
  ivcalc::config::check_keys(schema, {"kind", "n", "m"}, "dataset");
  const auto s = seed ? *seed : ivcalc::config::seed(cfg, "seed", 0, "");
  const auto data = ivcalc::load_for(est, data_path, schema);
  const auto result = ivcalc::run_estimator(est, data, options, s);
  if (out.empty()) out = "result";
  const fs::path dir(out);
  fs::create_directories(dir);
  json doc;
  doc["estimator"] = est.name;
  doc["data"] = data_path;
  doc["regime"] = ivcalc::to_string(static_cast<ivcalc::DatasetKind>(data.index()));
  doc["options"] = options;
  doc["seed"] = s;
  doc["result"] = result.result;
  json tables = json::array();
  for (const auto& t : result.curves) {
    ivcalc::write_table(dir / (t.name + ".csv"), t);
    tables.push_back(t.name + ".csv");
  }
  doc["tables"] = tables;
  ivcalc::write_json(dir / "result.json", doc);
  std::cout << est.name << ":";
  for (Eigen::Index i = 0; i < result.estimate.size(); ++i)
    std::cout << ' ' << ivcalc::detail::format_real(result.estimate(i));
  std::cout << "\nwrote " << (dir / "result.json").string() << '\n';
  return 0;
}

int cmd_study(const std::string& config_path, const std::vector<std::string>& overrides,
              std::optional<std::uint64_t> seed, const std::string& out, int threads) {
  json cfg = read_config(config_path, overrides);
  if (seed) cfg["seed"] = *seed;
  if (!out.empty()) cfg["outputs"] = out;
  if (threads > 0) cfg["threads"] = threads;
  const auto sc = ivcalc::parse_study(cfg);
  const auto res = ivcalc::run_study(sc);
  ivcalc::write_study(res, sc.outputs);
  std::cout << "estimator,N,component,mean,sd,bias,rmse,coverage,failure_rate\n";
  auto cell = [](const std::optional<double>& v) { return v ? ivcalc::detail::format_real(*v) : std::string(); };
  for (const auto& r : res.summary)
    std::cout << r.estimator << ',' << r.sample_size << ',' << r.component << ','
              << ivcalc::detail::format_real(r.mean) << ',' << cell(r.sd) << ',' << cell(r.bias) << ','
              << cell(r.rmse) << ',' << cell(r.coverage) << ','
              << ivcalc::detail::format_real(static_cast<double>(r.failures) / r.replications) << '\n';
  std::cout << "wrote " << sc.outputs << "/summary.csv (" << res.seconds << " s)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instrumental-variable estimation: simulate, estimate, study"};
  app.require_subcommand(1);

  std::string config_path, out, data_path, estimator;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int threads = 0;

  auto common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config,-c", config_path, "JSON config file");
    if (config_required) c->required()->check(CLI::ExistingFile);
    else c->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override a config field: dotted.key=value (repeatable)");
    sub->add_option("--seed", seed, "root seed (overrides the config)");
    sub->add_option("--out,-o", out, "output path");
  };

  auto* sim = app.add_subcommand("simulate", "draw a dataset from a registered scenario");
  common(sim, false);
  auto* est = app.add_subcommand("estimate", "run one estimator on a dataset CSV");
  common(est, false);
  est->add_option("--data,-d", data_path, "dataset CSV")->check(CLI::ExistingFile);
  est->add_option("--estimator,-e", estimator, "estimator name");
  auto* study = app.add_subcommand("study", "run a Monte Carlo study");
  common(study, true);
  study->add_option("--threads,-j", threads, "worker threads (default: IVCALC_THREADS or all cores)");

  app.footer("scenarios: " + ivcalc::scenario_names() + "\nestimators: " + ivcalc::estimator_names());

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*sim) return cmd_simulate(config_path, overrides, seed, out);
    if (*est) return cmd_estimate(config_path, overrides, seed, data_path, estimator, out);
    return cmd_study(config_path, overrides, seed, out, threads);
  } catch (const ivcalc::EstimationError& e) {
    std::cerr << "estimation error: " << e.what() << '\n';
    return 2;
  } catch (const ivcalc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const ivcalc::RegimeError& e) {
    std::cerr << "regime mismatch: " << e.what() << '\n';
    return 1;
  } catch (const ivcalc::ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
