#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>

namespace abcd {

/// log(sum_i exp(v_i)); -inf entries are skipped, and an all -inf input
/// returns -inf.
inline double log_sum_exp(std::span<const double> values) {
  double max_value = -std::numeric_limits<double>::infinity();
  for (double v : values) max_value = std::max(max_value, v);
  if (!std::isfinite(max_value)) return max_value;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - max_value);
  return max_value + std::log(sum);
}

/// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent substream seed from a parent seed and a key.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) {
  return mix64(seed ^ mix64(key + 0x632be59bd9b4e019ULL));
}

template <typename... Keys>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key, Keys... rest) {
  return derive_seed(derive_seed(seed, key), static_cast<std::uint64_t>(rest)...);
}

/// Shortest decimal representation that round-trips to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

inline std::uint64_t seed_key(double x) { return std::bit_cast<std::uint64_t>(x); }

}  // namespace abcd
