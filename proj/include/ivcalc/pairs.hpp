#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "ivcalc/error.hpp"

namespace ivcalc {

/// A set S_0 of unordered pairs of instrument levels, 1-based. Each pair is
/// stored as (higher, lower); its contrast row is "level higher minus level
/// lower".
class PairSet {
 public:
  PairSet() = default;

  explicit PairSet(std::vector<std::pair<int, int>> pairs) {
    for (auto [i, k] : pairs) {
      if (i == k) throw ValidationError("pair {" + std::to_string(i) + "," + std::to_string(k) +
                                        "} repeats a level");
      if (i < 1 || k < 1) throw ValidationError("pair levels are 1-based");
      const std::pair<int, int> p{std::max(i, k), std::min(i, k)};
      if (std::find(pairs_.begin(), pairs_.end(), p) != pairs_.end())
        throw ValidationError("duplicate pair {" + std::to_string(p.first) + "," +
                              std::to_string(p.second) + "}");
      pairs_.push_back(p);
    }
  }

  /// All m(m-1)/2 pairs.
  static PairSet all_pairs(int m) {
    std::vector<std::pair<int, int>> p;
    for (int hi = 2; hi <= m; ++hi)
      for (int lo = 1; lo < hi; ++lo) p.emplace_back(hi, lo);
    return PairSet(std::move(p));
  }

  /// The m-1 pairs {k, 1}: every level contrasted against level 1.
  static PairSet spanning(int m) {
    std::vector<std::pair<int, int>> p;
    for (int k = 2; k <= m; ++k) p.emplace_back(k, 1);
    return PairSet(std::move(p));
  }

  void validate_for(int m) const {
    if (pairs_.empty()) throw ValidationError("pair set is empty");
    for (auto [hi, lo] : pairs_)
      if (hi > m)
        throw ValidationError("pair {" + std::to_string(hi) + "," + std::to_string(lo) +
                              "} references a level above m = " + std::to_string(m));
  }

  const std::vector<std::pair<int, int>>& pairs() const noexcept { return pairs_; }
  std::size_t size() const noexcept { return pairs_.size(); }

  static std::string label(const std::pair<int, int>& p) {
    return "{" + std::to_string(p.first) + "," + std::to_string(p.second) + "}";
  }

 private:
  std::vector<std::pair<int, int>> pairs_;
};

}  // namespace ivcalc
