#pragma once

// Synthetic test problem: a tridiagonal quadratic whose curvature is known in
// closed form, plus two stochastic-gradient oracles (multiplicative Bernoulli
// noise gated by the furthest nonzero coordinate, and additive Gaussian noise).

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "rng.hpp"

namespace shadowheart {

// f(x) = 1/2 x^T A x - b^T x with A = 1/4 tridiag(-1, 2, -1), b = 1/4 (-1, 0, ..., 0).
struct QuadraticProblem {
  int d = 0;

  explicit QuadraticProblem(int dim) : d(dim) {
    if (d <= 0) throw std::invalid_argument("QuadraticProblem: d must be positive");
  }

  double smoothness() const {
    return 0.5 * (1.0 + std::cos(3.14159265358979323846 / (d + 1)));
  }

  std::vector<double> apply_matrix(std::span<const double> x) const {
    check_dim(x);
    std::vector<double> y(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
      double v = 0.5 * x[static_cast<std::size_t>(i)];
      if (i > 0) v -= 0.25 * x[static_cast<std::size_t>(i - 1)];
      if (i + 1 < d) v -= 0.25 * x[static_cast<std::size_t>(i + 1)];
      y[static_cast<std::size_t>(i)] = v;
    }
    return y;
  }

  std::vector<double> linear_term() const {
    std::vector<double> b(static_cast<std::size_t>(d), 0.0);
    b[0] = -0.25;
    return b;
  }

  std::vector<double> full_grad(std::span<const double> x) const {
    auto g = apply_matrix(x);
    g[0] += 0.25;  // minus b
    return g;
  }

  double value(std::span<const double> x) const {
    auto ax = apply_matrix(x);
    double quad = 0.0;
    for (int i = 0; i < d; ++i) quad += x[static_cast<std::size_t>(i)] * ax[static_cast<std::size_t>(i)];
    return 0.5 * quad + 0.25 * x[0];
  }

  // Thomas algorithm; A is symmetric positive definite tridiagonal.
  std::vector<double> solve(std::span<const double> rhs) const {
    check_dim(rhs);
    std::vector<double> diag(static_cast<std::size_t>(d), 0.5);
    std::vector<double> r(rhs.begin(), rhs.end());
    for (int i = 1; i < d; ++i) {
      double m = -0.25 / diag[static_cast<std::size_t>(i - 1)];
      diag[static_cast<std::size_t>(i)] -= m * -0.25;
      r[static_cast<std::size_t>(i)] -= m * r[static_cast<std::size_t>(i - 1)];
    }
    std::vector<double> x(static_cast<std::size_t>(d));
    x[static_cast<std::size_t>(d - 1)] = r[static_cast<std::size_t>(d - 1)] / diag[static_cast<std::size_t>(d - 1)];
    for (int i = d - 2; i >= 0; --i)
      x[static_cast<std::size_t>(i)] =
          (r[static_cast<std::size_t>(i)] + 0.25 * x[static_cast<std::size_t>(i + 1)]) /
          diag[static_cast<std::size_t>(i)];
    return x;
  }

  std::vector<double> minimizer() const { return solve(linear_term()); }

  double min_value() const {
    auto xs = minimizer();
    return value(xs);
  }

  void check_dim(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != d)
      throw std::invalid_argument("QuadraticProblem: dimension mismatch");
  }
};

inline double grad_norm_sq(std::span<const double> g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return s;
}

enum class NoiseKind { None, Multiplicative, AdditiveGaussian };

struct NoiseModel {
  NoiseKind kind = NoiseKind::None;
  double p = 1.0;            // Bernoulli success probability (multiplicative)
  double sigma_coord = 0.0;  // per-coordinate std deviation (additive)

  void validate() const {
    if (kind == NoiseKind::Multiplicative && !(p > 0 && p <= 1))
      throw std::invalid_argument("NoiseModel: need p in (0, 1]");
    if (kind == NoiseKind::AdditiveGaussian && !(sigma_coord >= 0))
      throw std::invalid_argument("NoiseModel: sigma must be >= 0");
  }

  // Second moment of the full noise vector for the additive model.
  double aggregate_sigma_sq(int d) const {
    return kind == NoiseKind::AdditiveGaussian ? d * sigma_coord * sigma_coord : 0.0;
  }
};

// Index of the furthest nonzero coordinate, one-based; 0 for the zero vector.
inline int prog(std::span<const double> x) {
  for (int i = static_cast<int>(x.size()) - 1; i >= 0; --i)
    if (x[static_cast<std::size_t>(i)] != 0.0) return i + 1;
  return 0;
}

// One stochastic gradient. The multiplicative model draws a single Bernoulli
// per call and rescales coordinates beyond prog(x); the additive model adds
// independent N(0, sigma^2) per coordinate.
inline std::vector<double> stoch_grad(const QuadraticProblem& problem, const NoiseModel& noise,
                                      std::span<const double> x, Rng& rng) {
  noise.validate();
  auto g = problem.full_grad(x);
  switch (noise.kind) {
    case NoiseKind::None:
      break;
    case NoiseKind::Multiplicative: {
      double xi = rng.bernoulli(noise.p) ? 1.0 : 0.0;
      double factor = xi / noise.p;  // mean 1
      int cut = prog(x);
      for (int j = cut; j < problem.d; ++j) g[static_cast<std::size_t>(j)] *= factor;
      break;
    }
    case NoiseKind::AdditiveGaussian: {
      for (int j = 0; j < problem.d; ++j)
        g[static_cast<std::size_t>(j)] += noise.sigma_coord * rng.normal();
      break;
    }
  }
  return g;
}

// Sum of `batch` independent stochastic gradients at a fixed point, sampled
// in aggregate. Distribution matches summing stoch_grad `batch` times: the
// Bernoulli count is binomial and the Gaussian sum is N(batch mu, batch sigma^2).
inline void stoch_grad_sum(const QuadraticProblem& problem, const NoiseModel& noise,
                           std::span<const double> x, long long batch, Rng& rng,
                           std::vector<double>& out) {
  noise.validate();
  if (batch < 0) throw std::invalid_argument("stoch_grad_sum: batch must be >= 0");
  auto g = problem.full_grad(x);
  out.assign(static_cast<std::size_t>(problem.d), 0.0);
  if (batch == 0) return;
  double bf = static_cast<double>(batch);
  switch (noise.kind) {
    case NoiseKind::None: {
      for (int j = 0; j < problem.d; ++j) out[static_cast<std::size_t>(j)] = bf * g[static_cast<std::size_t>(j)];
      break;
    }
    case NoiseKind::Multiplicative: {
      long long successes = 0;
      for (long long l = 0; l < batch; ++l)
        if (rng.bernoulli(noise.p)) ++successes;
      double tail = static_cast<double>(successes) / noise.p;
      int cut = prog(x);
      for (int j = 0; j < cut; ++j) out[static_cast<std::size_t>(j)] = bf * g[static_cast<std::size_t>(j)];
      for (int j = cut; j < problem.d; ++j) out[static_cast<std::size_t>(j)] = tail * g[static_cast<std::size_t>(j)];
      break;
    }
    case NoiseKind::AdditiveGaussian: {
      double spread = noise.sigma_coord * std::sqrt(bf);
      for (int j = 0; j < problem.d; ++j)
        out[static_cast<std::size_t>(j)] = bf * g[static_cast<std::size_t>(j)] + spread * rng.normal();
      break;
    }
  }
}

}  // namespace shadowheart
