#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ivcalc/scm.hpp"

namespace testing_support {

/// Kernel-weighted least squares at `g`, solved from scratch with a dense
/// QR: an oracle independent of the library's moment tables. The weight is
/// (1 - u^2)^2 on |u| < 1, u = (x - g) / half_width. Returns (value, slope).
inline std::pair<double, double> direct_local_poly(std::span<const double> x, std::span<const double> y,
                                                   int degree, double half_width, double g) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::abs(x[i] - g) < half_width) idx.push_back(i);
  const auto n = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd design(n, degree + 1);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double d = x[idx[r]] - g;
    const double u = d / half_width;
    const double w = std::sqrt((1 - u * u) * (1 - u * u));
    for (int p = 0; p <= degree; ++p) design(r, p) = w * std::pow(d, p);
    rhs(r) = w * y[idx[r]];
  }
  const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(rhs);
  return {coef(0), coef(1)};
}

inline std::vector<std::size_t> shuffled_order(std::size_t n, unsigned seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937 eng(seed);
  std::shuffle(order.begin(), order.end(), eng);
  return order;
}

template <class T>
std::vector<T> permute(std::span<const T> v, const std::vector<std::size_t>& order) {
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[order[i]];
  return out;
}

/// Finite model whose atoms are the product of an independent compliance
/// profile law and an outcome law, so U is independent of every V_i and the
/// zero-correlation condition holds exactly. Profiles are drawn until the
/// population contrast matrix over all pairs has full column rank.
inline ivcalc::DiscreteScm random_independent_model(std::mt19937_64& eng) {
  std::uniform_int_distribution<int> pick_n(1, 3);
  std::uniform_real_distribution<double> unit(0.05, 1.0), outcome(-3.0, 3.0);
  while (true) {
    ivcalc::DiscreteScm model;
    model.n = pick_n(eng);
    model.m = model.n + 1 + std::uniform_int_distribution<int>(0, 2)(eng);
    model.p_z = Eigen::VectorXd(model.m);
    for (int i = 0; i < model.m; ++i) model.p_z(i) = unit(eng);
    model.p_z /= model.p_z.sum();
    std::uniform_int_distribution<int> code(0, model.n);
    const int profiles = 2 + model.n + std::uniform_int_distribution<int>(0, 3)(eng);
    const int outcomes = 1 + std::uniform_int_distribution<int>(0, 3)(eng);
    std::vector<std::vector<int>> v(profiles, std::vector<int>(model.m));
    std::vector<double> pv(profiles), pu(outcomes);
    std::vector<Eigen::VectorXd> u(outcomes, Eigen::VectorXd(model.n + 1));
    for (auto& row : v)
      for (auto& c : row) c = code(eng);
    for (auto& w : pv) w = unit(eng);
    for (auto& w : pu) w = unit(eng);
    for (auto& vec : u)
      for (Eigen::Index j = 0; j <= model.n; ++j) vec(j) = outcome(eng);
    const double sv = std::accumulate(pv.begin(), pv.end(), 0.0), su = std::accumulate(pu.begin(), pu.end(), 0.0);
    for (int a = 0; a < profiles; ++a)
      for (int b = 0; b < outcomes; ++b) model.atoms.push_back({pv[a] / sv * pu[b] / su, u[b], v[a]});
    // Renormalize away rounding so the simplex check holds to 1e-12.
    double total = 0.0;
    for (const auto& atom : model.atoms) total += atom.weight;
    for (auto& atom : model.atoms) atom.weight /= total;
    // Full rank test on the exact contrasts.
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(model.m * (model.m - 1) / 2, model.n);
    int row = 0;
    for (int hi = 1; hi < model.m; ++hi)
      for (int lo = 0; lo < hi; ++lo, ++row)
        for (const auto& atom : model.atoms)
          for (int j = 1; j <= model.n; ++j)
            a(row, j - 1) += atom.weight * ((atom.v[hi] == j) - (atom.v[lo] == j));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
    const auto& sv_ = svd.singularValues();
    if (sv_(sv_.size() - 1) > 1e-3 * sv_(0)) return model;
  }
}

inline double sup_abs(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace testing_support
