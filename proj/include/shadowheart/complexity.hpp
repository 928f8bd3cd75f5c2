#pragma once

// Closed-form time-complexity calculators for the simulated methods, in
// "units of L Delta / eps" by default (ld_eps = 1). The shadowheart entries
// reduce to equilibrium-time computations on transformed worker pools.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "equilibrium.hpp"
#include "rng.hpp"

namespace shadowheart {

struct ComplexityInputs {
  double d = 0;                  // model dimension
  std::vector<double> h;         // seconds per stochastic gradient
  std::vector<double> tau_dot;   // seconds per transmitted coordinate
  double noise_ratio = 0;        // sigma^2 / eps
  double ld_eps = 1;             // L Delta / eps multiplier

  void validate() const {
    if (!(d >= 1)) throw std::invalid_argument("ComplexityInputs: d must be >= 1");
    if (h.empty() || h.size() != tau_dot.size())
      throw std::invalid_argument("ComplexityInputs: h and tau_dot must have equal positive length");
    if (!(noise_ratio >= 0)) throw std::invalid_argument("ComplexityInputs: noise_ratio must be >= 0");
    if (!(ld_eps > 0)) throw std::invalid_argument("ComplexityInputs: ld_eps must be positive");
  }

  int n() const { return static_cast<int>(h.size()); }
};

// Synchronous full-vector averaging: every round waits for the slowest
// worker's gradient plus a dense upload.
inline double t_minibatch(const ComplexityInputs& in) {
  in.validate();
  double slowest = 0;
  for (int i = 0; i < in.n(); ++i)
    slowest = std::max(slowest, in.h[static_cast<std::size_t>(i)] +
                                    in.d * in.tau_dot[static_cast<std::size_t>(i)]);
  return slowest * (1.0 + in.noise_ratio / in.n()) * in.ld_eps;
}

// Synchronous Rand-1 compression: uploads cost one coordinate, but the
// compressor variance (omega = d - 1) inflates the iteration count.
inline double t_qsgd(const ComplexityInputs& in) {
  in.validate();
  double omega = in.d - 1.0;
  double slowest = 0;
  for (int i = 0; i < in.n(); ++i)
    slowest = std::max(slowest,
                       in.h[static_cast<std::size_t>(i)] + in.tau_dot[static_cast<std::size_t>(i)]);
  double iters = (omega / in.n() + 1.0) + (omega + 1.0) * in.noise_ratio / in.n();
  return slowest * iters * in.ld_eps;
}

// Uncompressed asynchronous batch collection, as an equilibrium time with no
// compressor variance and dense uploads.
inline double t_rennala_lower(const ComplexityInputs& in) {
  in.validate();
  EquilibriumQuery q;
  q.omega = 0;
  q.noise_ratio = in.noise_ratio;
  q.workers.resize(in.h.size());
  for (std::size_t i = 0; i < in.h.size(); ++i)
    q.workers[i] = {in.h[i], in.d * in.tau_dot[i]};
  return equilibrium_time_value(q) * in.ld_eps;
}

// Rand-1 equilibrium time. with_constants multiplies in the worst-case
// iteration constant of the convergence guarantee.
inline double t_shadowheart(const ComplexityInputs& in, bool with_constants = false) {
  in.validate();
  EquilibriumQuery q;
  q.omega = in.d - 1.0;
  q.noise_ratio = in.noise_ratio;
  q.workers.resize(in.h.size());
  for (std::size_t i = 0; i < in.h.size(); ++i) q.workers[i] = {in.h[i], in.tau_dot[i]};
  double t = equilibrium_time_value(q) * in.ld_eps;
  return with_constants ? 32.0 * t : t;
}

// Single fastest worker, no communication. Only meaningful in the
// noise-dominated regime.
inline double t_sgd_one(const ComplexityInputs& in) {
  in.validate();
  if (!(in.noise_ratio >= 1))
    throw std::invalid_argument("t_sgd_one: requires noise_ratio >= 1");
  double fastest = in.h[0];
  for (double v : in.h) fastest = std::min(fastest, v);
  return fastest * in.noise_ratio * in.ld_eps;
}

// Compressed broadcast on top of the equilibrium time; alpha is the server
// compressor's contraction parameter.
inline double t_bidirectional(const ComplexityInputs& in, double alpha, double tau_serv,
                              bool with_constants = false) {
  in.validate();
  if (!(alpha > 0 && alpha <= 1)) throw std::invalid_argument("t_bidirectional: alpha in (0, 1]");
  if (!(tau_serv >= 0)) throw std::invalid_argument("t_bidirectional: tau_serv must be >= 0");
  EquilibriumQuery q;
  q.omega = in.d - 1.0;
  q.noise_ratio = in.noise_ratio;
  q.workers.resize(in.h.size());
  for (std::size_t i = 0; i < in.h.size(); ++i) q.workers[i] = {in.h[i], in.tau_dot[i]};
  double t = equilibrium_time_value(q);
  double base = (tau_serv + 2.0 * t) / alpha * in.ld_eps;
  return with_constants ? 768.0 * base : base;
}

// Streaming variant: worker i overlaps computation and sending, shipping at
// least r_i messages per gradient. The pool transforms accordingly.
inline double t_adaptive(const ComplexityInputs& in, const std::vector<double>& ratios) {
  in.validate();
  if (ratios.size() != in.h.size())
    throw std::invalid_argument("t_adaptive: ratios size mismatch");
  EquilibriumQuery q;
  q.omega = in.d - 1.0;
  q.noise_ratio = in.noise_ratio;
  q.workers.resize(in.h.size());
  for (std::size_t i = 0; i < in.h.size(); ++i) {
    double slower = std::max(in.h[i], in.tau_dot[i]);
    q.workers[i] = {slower, std::min(in.tau_dot[i] * ratios[i], slower)};
  }
  return equilibrium_time_value(q) * in.ld_eps;
}

struct SpeedupTable {
  std::vector<double> noise_ratios;       // rows
  std::vector<double> minibatch_factor;   // t_minibatch / t_shadowheart
  std::vector<double> qsgd_factor;
  std::vector<double> rennala_factor;
};

// Speedup factors of the equilibrium method over the synchronous and
// uncompressed baselines at d = 1e6, n = 1e3, worker times uniform on
// [0.1, 1], averaged over seeds.
inline SpeedupTable speedup_factors(std::uint64_t seed, int num_seeds = 10,
                                    double d = 1e6, int n = 1000,
                                    std::vector<double> noise_ratios = {1.0, 1e3, 1e6}) {
  if (num_seeds < 1) throw std::invalid_argument("speedup_factors: num_seeds must be >= 1");
  SpeedupTable table;
  table.noise_ratios = noise_ratios;
  table.minibatch_factor.assign(noise_ratios.size(), 0.0);
  table.qsgd_factor.assign(noise_ratios.size(), 0.0);
  table.rennala_factor.assign(noise_ratios.size(), 0.0);
  for (int s = 0; s < num_seeds; ++s) {
    ComplexityInputs in;
    in.d = d;
    in.h.resize(static_cast<std::size_t>(n));
    in.tau_dot.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      Rng rng(seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(s), 0,
              StreamPurpose::Harness);
      in.h[static_cast<std::size_t>(i)] = rng.uniform(0.1, 1.0);
      in.tau_dot[static_cast<std::size_t>(i)] = rng.uniform(0.1, 1.0);
    }
    for (std::size_t r = 0; r < noise_ratios.size(); ++r) {
      in.noise_ratio = noise_ratios[r];
      double ts = t_shadowheart(in);
      table.minibatch_factor[r] += t_minibatch(in) / ts / num_seeds;
      table.qsgd_factor[r] += t_qsgd(in) / ts / num_seeds;
      table.rennala_factor[r] += t_rennala_lower(in) / ts / num_seeds;
    }
  }
  return table;
}

}  // namespace shadowheart
