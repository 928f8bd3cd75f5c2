#pragma once

// Counter-based random streams. Every stream is keyed by
// (global seed, worker id, iteration, message index, purpose), so any draw in a
// simulated schedule can be reproduced in isolation without replaying the run.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace shadowheart {

enum class StreamPurpose : std::uint32_t {
  Noise = 1,
  Compress = 2,
  Schedule = 3,
  Harness = 4,
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_key(std::uint64_t acc, std::uint64_t word) {
  acc ^= word + 0x9e3779b97f4a7c15ULL + (acc << 6) + (acc >> 2);
  std::uint64_t s = acc;
  return splitmix64(s);
}

}  // namespace detail

class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t worker, std::uint64_t iteration,
      std::uint64_t message, StreamPurpose purpose) {
    std::uint64_t k = detail::mix_key(0x243f6a8885a308d3ULL, seed);
    k = detail::mix_key(k, worker);
    k = detail::mix_key(k, iteration);
    k = detail::mix_key(k, message);
    k = detail::mix_key(k, static_cast<std::uint64_t>(purpose));
    state_ = k;
  }

  std::uint64_t next_u64() { return detail::splitmix64(state_); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    std::uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Uniform k-subset of {0, ..., d-1}, returned sorted ascending.
  // Partial Fisher-Yates with a sparse override map: O(k) state.
  std::vector<int> sample_without_replacement(int d, int k) {
    if (k < 0 || k > d) throw std::invalid_argument("sample_without_replacement: need 0 <= k <= d");
    std::unordered_map<int, int> override;
    override.reserve(static_cast<std::size_t>(2 * k));
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      int j = i + static_cast<int>(below(static_cast<std::uint64_t>(d - i)));
      auto it_j = override.find(j);
      int value_j = (it_j == override.end()) ? j : it_j->second;
      auto it_i = override.find(i);
      int value_i = (it_i == override.end()) ? i : it_i->second;
      out.push_back(value_j);
      override[j] = value_i;
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::uint64_t state_;
};

}  // namespace shadowheart
