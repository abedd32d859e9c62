#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ivcalc/error.hpp"
#include "ivcalc/linalg.hpp"

namespace ivcalc {

/// Observations of (Y, X, Z) with categorical X and Z. X code 0 is the
/// baseline level; codes run 0..n. Z codes run 0..m-1.
class DiscreteDataset {
 public:
  DiscreteDataset(std::vector<double> y, std::vector<int> x, std::vector<int> z, int n, int m)
      : y_(std::move(y)), x_(std::move(x)), z_(std::move(z)), n_(n), m_(m) {
    if (n_ < 1) throw ValidationError("discrete dataset needs n >= 1 non-baseline X levels");
    if (m_ < 2) throw ValidationError("discrete dataset needs m >= 2 instrument levels");
    if (y_.size() != x_.size() || y_.size() != z_.size())
      throw ValidationError("discrete dataset columns differ in length");
    for (std::size_t r = 0; r < y_.size(); ++r) {
      if (!std::isfinite(y_[r])) throw ValidationError("row " + std::to_string(r) + ": y is not finite");
      if (x_[r] < 0 || x_[r] > n_)
        throw ValidationError("row " + std::to_string(r) + ": x code " + std::to_string(x_[r]) +
                              " outside 0.." + std::to_string(n_));
      if (z_[r] < 0 || z_[r] >= m_)
        throw ValidationError("row " + std::to_string(r) + ": z code " + std::to_string(z_[r]) +
                              " outside 0.." + std::to_string(m_ - 1));
    }
  }

  std::size_t size() const noexcept { return y_.size(); }
  int n() const noexcept { return n_; }
  int m() const noexcept { return m_; }
  std::span<const double> y() const noexcept { return y_; }
  std::span<const int> x() const noexcept { return x_; }
  std::span<const int> z() const noexcept { return z_; }

 private:
  std::vector<double> y_;
  std::vector<int> x_;
  std::vector<int> z_;
  int n_;
  int m_;
};

/// Observations with categorical X (codes 0..n) and scalar Z in [0, 1].
class MixedDataset {
 public:
  MixedDataset(std::vector<double> y, std::vector<int> x, std::vector<double> z, int n)
      : y_(std::move(y)), x_(std::move(x)), z_(std::move(z)), n_(n) {
    if (n_ < 1) throw ValidationError("mixed dataset needs n >= 1 non-baseline X levels");
    if (y_.size() != x_.size() || y_.size() != z_.size())
      throw ValidationError("mixed dataset columns differ in length");
    for (std::size_t r = 0; r < y_.size(); ++r) {
      if (!std::isfinite(y_[r])) throw ValidationError("row " + std::to_string(r) + ": y is not finite");
      if (x_[r] < 0 || x_[r] > n_)
        throw ValidationError("row " + std::to_string(r) + ": x code " + std::to_string(x_[r]) +
                              " outside 0.." + std::to_string(n_));
      if (!(z_[r] >= 0.0 && z_[r] <= 1.0))
        throw ValidationError("row " + std::to_string(r) + ": z outside [0,1]");
    }
  }

  std::size_t size() const noexcept { return y_.size(); }
  int n() const noexcept { return n_; }
  std::span<const double> y() const noexcept { return y_; }
  std::span<const int> x() const noexcept { return x_; }
  std::span<const double> z() const noexcept { return z_; }

 private:
  std::vector<double> y_;
  std::vector<int> x_;
  std::vector<double> z_;
  int n_;
};

/// Observations with real-valued X in R^n and Z in R^m, each confined to a
/// declared bounded rectangle.
class ContinuousDataset {
 public:
  ContinuousDataset(Vec y, Mat x, Mat z, std::vector<Interval> x_bounds,
                    std::vector<Interval> z_bounds)
      : y_(std::move(y)),
        x_(std::move(x)),
        z_(std::move(z)),
        x_bounds_(std::move(x_bounds)),
        z_bounds_(std::move(z_bounds)) {
    if (x_.cols() < 1 || z_.cols() < 1) throw ValidationError("continuous dataset needs n, m >= 1");
    if (x_.rows() != y_.size() || z_.rows() != y_.size())
      throw ValidationError("continuous dataset row counts differ");
    if (static_cast<Eigen::Index>(x_bounds_.size()) != x_.cols() ||
        static_cast<Eigen::Index>(z_bounds_.size()) != z_.cols())
      throw ValidationError("one bound interval is required per X and Z component");
    for (const auto* bounds : {&x_bounds_, &z_bounds_})
      for (const auto& b : *bounds)
        if (!std::isfinite(b.lo) || !std::isfinite(b.hi) || b.lo > b.hi)
          throw ValidationError("bounds must be finite closed intervals");
    for (Eigen::Index r = 0; r < y_.size(); ++r) {
      if (!std::isfinite(y_(r))) throw ValidationError("row " + std::to_string(r) + ": y is not finite");
      for (Eigen::Index c = 0; c < x_.cols(); ++c)
        if (!x_bounds_[c].contains(x_(r, c)))
          throw ValidationError("row " + std::to_string(r) + ": x" + std::to_string(c + 1) +
                                " outside its declared bounds");
      for (Eigen::Index c = 0; c < z_.cols(); ++c)
        if (!z_bounds_[c].contains(z_(r, c)))
          throw ValidationError("row " + std::to_string(r) + ": z" + std::to_string(c + 1) +
                                " outside its declared bounds");
    }
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(y_.size()); }
  int n() const noexcept { return static_cast<int>(x_.cols()); }
  int m() const noexcept { return static_cast<int>(z_.cols()); }
  const Vec& y() const noexcept { return y_; }
  const Mat& x() const noexcept { return x_; }
  const Mat& z() const noexcept { return z_; }
  const std::vector<Interval>& x_bounds() const noexcept { return x_bounds_; }
  const std::vector<Interval>& z_bounds() const noexcept { return z_bounds_; }

 private:
  Vec y_;
  Mat x_;
  Mat z_;
  std::vector<Interval> x_bounds_;
  std::vector<Interval> z_bounds_;
};

using Dataset = std::variant<DiscreteDataset, MixedDataset, ContinuousDataset>;

/// Per-instrument-level summaries of a discrete dataset.
struct GroupStats {
  Vec cond_mean_y;                      ///< length m; NaN for empty groups
  Vec cond_var_y;                       ///< length m; within-group sample variance (0 if count < 2)
  Mat cond_prob_x;                      ///< m x (n+1); rows of empty groups are NaN
  std::vector<std::size_t> group_counts;

  std::vector<int> empty_groups() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < group_counts.size(); ++i)
      if (group_counts[i] == 0) out.push_back(static_cast<int>(i));
    return out;
  }
};

/// Conditional means of Y and frequencies of X within each Z level. Rows may
/// carry weights (bootstrap counts); pass an empty span for unit weights.
inline GroupStats group_stats(const DiscreteDataset& d, std::span<const double> weights = {}) {
  if (d.size() == 0) throw ValidationError("group_stats needs at least one observation");
  const int m = d.m();
  const int n = d.n();
  Vec wsum = Vec::Zero(m);
  Vec ysum = Vec::Zero(m);
  Mat xcount = Mat::Zero(m, n + 1);
  std::vector<std::size_t> counts(m, 0);
  const auto y = d.y();
  const auto x = d.x();
  const auto z = d.z();
  for (std::size_t r = 0; r < d.size(); ++r) {
    const double w = weights.empty() ? 1.0 : weights[r];
    if (w == 0.0) continue;
    wsum(z[r]) += w;
    ysum(z[r]) += w * y[r];
    xcount(z[r], x[r]) += w;
  }
  GroupStats out;
  out.cond_mean_y = Vec(m);
  out.cond_var_y = Vec::Zero(m);
  out.cond_prob_x = Mat(m, n + 1);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int i = 0; i < m; ++i) {
    counts[i] = static_cast<std::size_t>(std::llround(wsum(i)));
    if (wsum(i) > 0.0) {
      out.cond_mean_y(i) = ysum(i) / wsum(i);
      out.cond_prob_x.row(i) = xcount.row(i) / wsum(i);
    } else {
      out.cond_mean_y(i) = nan;
      out.cond_prob_x.row(i).setConstant(nan);
    }
  }
  Vec ss = Vec::Zero(m);
  for (std::size_t r = 0; r < d.size(); ++r) {
    const double w = weights.empty() ? 1.0 : weights[r];
    if (w == 0.0) continue;
    const double dev = y[r] - out.cond_mean_y(z[r]);
    ss(z[r]) += w * dev * dev;
  }
  for (int i = 0; i < m; ++i)
    if (wsum(i) > 1.0) out.cond_var_y(i) = ss(i) / (wsum(i) - 1.0);
  out.group_counts = std::move(counts);
  return out;
}

// ---------------------------------------------------------------------------
// CSV ingestion and emission.

enum class DatasetKind { Discrete, Mixed, Continuous };

inline std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::Discrete: return "discrete";
    case DatasetKind::Mixed: return "mixed";
    case DatasetKind::Continuous: return "continuous";
  }
  return "unknown";
}

/// What the caller expects a CSV file to contain. Unset level counts are
/// inferred from the data (largest code seen); unset continuous bounds are
/// inferred as the observed column ranges.
struct DatasetSchema {
  DatasetKind kind = DatasetKind::Discrete;
  std::optional<int> n;
  std::optional<int> m;
  std::optional<std::vector<Interval>> x_bounds;
  std::optional<std::vector<Interval>> z_bounds;
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_real(std::string_view cell, std::size_t row, std::string_view column) {
  cell = trim(cell);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v))
    throw ValidationError("row " + std::to_string(row) + ": cannot parse '" + std::string(cell) +
                          "' in column " + std::string(column) + " as a real number");
  return v;
}

inline int parse_code(std::string_view cell, std::size_t row, std::string_view column) {
  cell = trim(cell);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size())
    throw ValidationError("row " + std::to_string(row) + ": cannot parse '" + std::string(cell) +
                          "' in column " + std::string(column) + " as a category code");
  if (v < 0)
    throw ValidationError("row " + std::to_string(row) + ": negative code in column " +
                          std::string(column));
  return v;
}

inline std::string format_real(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parses CSV text. Row numbers in error messages count data rows from 1.
inline Dataset parse_csv(std::istream& in, const DatasetSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("missing header row");
  std::vector<std::string> header;
  for (auto cell : detail::split_commas(line)) header.emplace_back(detail::trim(cell));

  auto require_column = [&](std::size_t idx, const std::string& name) {
    if (idx >= header.size() || header[idx] != name)
      throw ValidationError("missing column '" + name + "' at position " + std::to_string(idx + 1) +
                            " of the header");
  };

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> cells;
    for (auto c : detail::split_commas(line)) cells.emplace_back(c);
    if (cells.size() != header.size())
      throw ValidationError("row " + std::to_string(rows.size() + 1) + ": expected " +
                            std::to_string(header.size()) + " cells, found " +
                            std::to_string(cells.size()));
    rows.push_back(std::move(cells));
  }

  if (schema.kind == DatasetKind::Discrete || schema.kind == DatasetKind::Mixed) {
    if (header.size() != 3) throw ValidationError("expected header y,x,z");
    require_column(0, "y");
    require_column(1, "x");
    require_column(2, "z");
    std::vector<double> y;
    std::vector<int> x;
    y.reserve(rows.size());
    x.reserve(rows.size());
    int max_x = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      y.push_back(detail::parse_real(rows[r][0], r + 1, "y"));
      x.push_back(detail::parse_code(rows[r][1], r + 1, "x"));
      if (schema.n && x.back() > *schema.n)
        throw ValidationError("row " + std::to_string(r + 1) + ": x code " + std::to_string(x.back()) +
                              " exceeds declared n = " + std::to_string(*schema.n));
      max_x = std::max(max_x, x.back());
    }
    const int n = schema.n.value_or(std::max(1, max_x));
    if (schema.kind == DatasetKind::Discrete) {
      std::vector<int> z;
      int max_z = 0;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        z.push_back(detail::parse_code(rows[r][2], r + 1, "z"));
        if (schema.m && z.back() >= *schema.m)
          throw ValidationError("row " + std::to_string(r + 1) + ": z code " + std::to_string(z.back()) +
                                " exceeds declared m - 1 = " + std::to_string(*schema.m - 1));
        max_z = std::max(max_z, z.back());
      }
      const int m = schema.m.value_or(std::max(2, max_z + 1));
      return DiscreteDataset(std::move(y), std::move(x), std::move(z), n, m);
    }
    std::vector<double> z;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      z.push_back(detail::parse_real(rows[r][2], r + 1, "z"));
      if (!(z.back() >= 0.0 && z.back() <= 1.0))
        throw ValidationError("row " + std::to_string(r + 1) + ": z outside [0,1]");
    }
    return MixedDataset(std::move(y), std::move(x), std::move(z), n);
  }

  // Continuous: y,x1..xn,z1..zm.
  if (header.empty() || header[0] != "y") throw ValidationError("missing column 'y' at position 1");
  int n = 0;
  int m = 0;
  std::size_t col = 1;
  while (col < header.size() && header[col] == "x" + std::to_string(n + 1)) {
    ++n;
    ++col;
  }
  while (col < header.size() && header[col] == "z" + std::to_string(m + 1)) {
    ++m;
    ++col;
  }
  if (n == 0) throw ValidationError("missing column 'x1'");
  if (m == 0) throw ValidationError("missing column 'z1'");
  if (col != header.size())
    throw ValidationError("unexpected column '" + header[col] + "' in continuous header");
  if (schema.n && *schema.n != n)
    throw ValidationError("header has " + std::to_string(n) + " X columns, schema declares " +
                          std::to_string(*schema.n));
  if (schema.m && *schema.m != m)
    throw ValidationError("header has " + std::to_string(m) + " Z columns, schema declares " +
                          std::to_string(*schema.m));
  const auto rows_n = static_cast<Eigen::Index>(rows.size());
  Vec y(rows_n);
  Mat x(rows_n, n);
  Mat z(rows_n, m);
  for (Eigen::Index r = 0; r < rows_n; ++r) {
    const auto& cells = rows[r];
    const auto row = static_cast<std::size_t>(r + 1);
    y(r) = detail::parse_real(cells[0], row, "y");
    for (int c = 0; c < n; ++c) x(r, c) = detail::parse_real(cells[1 + c], row, header[1 + c]);
    for (int c = 0; c < m; ++c) z(r, c) = detail::parse_real(cells[1 + n + c], row, header[1 + n + c]);
  }
  auto observed = [](const Mat& a) {
    std::vector<Interval> out;
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      out.push_back(a.rows() ? Interval{a.col(c).minCoeff(), a.col(c).maxCoeff()} : Interval{0.0, 0.0});
    return out;
  };
  auto xb = schema.x_bounds.value_or(observed(x));
  auto zb = schema.z_bounds.value_or(observed(z));
  return ContinuousDataset(std::move(y), std::move(x), std::move(z), std::move(xb), std::move(zb));
}

inline Dataset load_csv(const std::string& path, const DatasetSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset file '" + path + "'");
  return parse_csv(in, schema);
}

/// Writes the dataset in the format `parse_csv` reads. Reals use the shortest
/// representation that round-trips exactly.
inline void write_csv(std::ostream& out, const Dataset& data) {
  std::visit(
      [&out](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, ContinuousDataset>) {
          out << "y";
          for (int c = 0; c < d.n(); ++c) out << ",x" << c + 1;
          for (int c = 0; c < d.m(); ++c) out << ",z" << c + 1;
          out << '\n';
          for (Eigen::Index r = 0; r < d.y().size(); ++r) {
            out << detail::format_real(d.y()(r));
            for (int c = 0; c < d.n(); ++c) out << ',' << detail::format_real(d.x()(r, c));
            for (int c = 0; c < d.m(); ++c) out << ',' << detail::format_real(d.z()(r, c));
            out << '\n';
          }
        } else {
          out << "y,x,z\n";
          for (std::size_t r = 0; r < d.size(); ++r) {
            out << detail::format_real(d.y()[r]) << ',' << d.x()[r] << ',';
            if constexpr (std::is_same_v<T, DiscreteDataset>)
              out << d.z()[r];
            else
              out << detail::format_real(d.z()[r]);
            out << '\n';
          }
        }
      },
      data);
}

inline void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write dataset file '" + path + "'");
  write_csv(out, data);
}

}  // namespace ivcalc
