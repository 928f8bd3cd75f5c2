#pragma once

// Sparsifying compressors used on worker-to-server (unbiased) and
// server-to-worker (contractive) links. Messages are index/value pairs; the
// wire cost of a message is the number of retained coordinates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"

namespace shadowheart {

enum class CompressorKind { Identity, RandK, TopK };

struct CompressorSpec {
  CompressorKind kind = CompressorKind::Identity;
  int k = 0;  // retained coordinates; ignored for Identity
  int d = 0;

  void validate() const {
    if (d <= 0) throw std::invalid_argument("CompressorSpec: d must be positive");
    if (kind != CompressorKind::Identity && (k < 1 || k > d))
      throw std::invalid_argument("CompressorSpec: need 1 <= k <= d");
  }

  int retained() const { return kind == CompressorKind::Identity ? d : k; }
};

// Sparse message. Indices are zero-based, strictly increasing.
struct CompressedVector {
  int d = 0;
  std::vector<int> indices;
  std::vector<double> values;

  std::vector<double> densify() const {
    std::vector<double> out(static_cast<std::size_t>(d), 0.0);
    for (std::size_t i = 0; i < indices.size(); ++i)
      out[static_cast<std::size_t>(indices[i])] = values[i];
    return out;
  }

  void add_to(std::span<double> acc, double scale) const {
    for (std::size_t i = 0; i < indices.size(); ++i)
      acc[static_cast<std::size_t>(indices[i])] += scale * values[i];
  }

  std::string serialize() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (i) os << ';';
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%d:%.17g", indices[i], values[i]);
      os << buf;
    }
    return os.str();
  }
};

// Variance parameter of an unbiased compressor: E||C(x) - x||^2 <= omega ||x||^2.
inline double omega_of(const CompressorSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case CompressorKind::Identity:
      return 0.0;
    case CompressorKind::RandK:
      return static_cast<double>(spec.d) / spec.k - 1.0;
    case CompressorKind::TopK:
      throw std::invalid_argument("omega_of: TopK is biased, has no omega");
  }
  throw std::logic_error("omega_of: unreachable");
}

// Contraction parameter of a biased compressor: E||C(x) - x||^2 <= (1 - alpha) ||x||^2.
inline double alpha_of(const CompressorSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case CompressorKind::Identity:
      return 1.0;
    case CompressorKind::TopK:
      return static_cast<double>(spec.k) / spec.d;
    case CompressorKind::RandK:
      throw std::invalid_argument("alpha_of: RandK is unbiased, use omega_of");
  }
  throw std::logic_error("alpha_of: unreachable");
}

inline int transmit_cost(const CompressorSpec& spec) {
  spec.validate();
  return spec.retained();
}

// Rand-K (or Identity): uniform k-subset, retained entries scaled by d/k.
inline CompressedVector compress_unbiased(const CompressorSpec& spec,
                                          std::span<const double> x, Rng& rng) {
  spec.validate();
  if (spec.kind == CompressorKind::TopK)
    throw std::invalid_argument("compress_unbiased: TopK is not unbiased");
  if (static_cast<int>(x.size()) != spec.d)
    throw std::invalid_argument("compress_unbiased: dimension mismatch");

  CompressedVector out;
  out.d = spec.d;
  if (spec.kind == CompressorKind::Identity) {
    out.indices.resize(static_cast<std::size_t>(spec.d));
    std::iota(out.indices.begin(), out.indices.end(), 0);
    out.values.assign(x.begin(), x.end());
    return out;
  }
  out.indices = rng.sample_without_replacement(spec.d, spec.k);
  double scale = static_cast<double>(spec.d) / spec.k;
  out.values.reserve(out.indices.size());
  for (int idx : out.indices) out.values.push_back(scale * x[static_cast<std::size_t>(idx)]);
  return out;
}

// Top-K (or Identity): k largest magnitudes, unscaled. Magnitude ties keep the
// smaller index.
inline CompressedVector compress_biased(const CompressorSpec& spec,
                                        std::span<const double> x) {
  spec.validate();
  if (spec.kind == CompressorKind::RandK)
    throw std::invalid_argument("compress_biased: RandK is not contractive");
  if (static_cast<int>(x.size()) != spec.d)
    throw std::invalid_argument("compress_biased: dimension mismatch");

  CompressedVector out;
  out.d = spec.d;
  if (spec.kind == CompressorKind::Identity) {
    out.indices.resize(static_cast<std::size_t>(spec.d));
    std::iota(out.indices.begin(), out.indices.end(), 0);
    out.values.assign(x.begin(), x.end());
    return out;
  }
  std::vector<int> order(static_cast<std::size_t>(spec.d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&x](int a, int b) {
    return std::abs(x[static_cast<std::size_t>(a)]) > std::abs(x[static_cast<std::size_t>(b)]);
  });
  order.resize(static_cast<std::size_t>(spec.k));
  std::sort(order.begin(), order.end());
  out.indices = std::move(order);
  out.values.reserve(out.indices.size());
  for (int idx : out.indices) out.values.push_back(x[static_cast<std::size_t>(idx)]);
  return out;
}

}  // namespace shadowheart
