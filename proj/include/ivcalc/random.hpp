#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

namespace ivcalc {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer: a bijective 64-bit mix.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of substream `stream` under `root`. Depends only on the pair, never on
/// the order in which substreams are requested, so parallel replications
/// reproduce regardless of scheduling.
constexpr std::uint64_t substream_seed(std::uint64_t root, std::uint64_t stream) noexcept {
  return splitmix64(splitmix64(root) ^ splitmix64(stream + 0xD1B54A32D192ED03ULL));
}

/// Two-level split: (root, a, b) -> seed.
constexpr std::uint64_t substream_seed(std::uint64_t root, std::uint64_t a,
                                       std::uint64_t b) noexcept {
  return substream_seed(substream_seed(root, a), b);
}

inline Engine make_engine(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return Engine(seq);
}

/// Multinomial(N; 1/N, ..., 1/N) counts: the row weights of one nonparametric
/// bootstrap resample.
inline std::vector<double> bootstrap_counts(std::size_t n, Engine& eng) {
  std::vector<double> counts(n, 0.0);
  if (n == 0) return counts;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (std::size_t i = 0; i < n; ++i) counts[pick(eng)] += 1.0;
  return counts;
}

/// Random permutation fold labels 0..folds-1, balanced to within one.
inline std::vector<int> make_folds(std::size_t n, int folds, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  auto eng = make_engine(seed);
  std::shuffle(order.begin(), order.end(), eng);
  std::vector<int> label(n, 0);
  for (std::size_t r = 0; r < n; ++r) label[order[r]] = static_cast<int>(r % static_cast<std::size_t>(folds));
  return label;
}

}  // namespace ivcalc
