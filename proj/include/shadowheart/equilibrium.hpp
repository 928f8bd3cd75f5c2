#pragma once

// Equilibrium time of a heterogeneous worker pool. Workers are sorted by
// max{h_i, tau_i}; for every prefix of length j the implicit equation
//
//   ( sum_{i<=j} 1 / (2 tau_i w + 4 tau_i h_i r w / s + 2 h_i r) )^{-1} = s
//
// (w = compressor variance, r = noise-to-target ratio) has a unique root
// because the left side is nonincreasing in s. The equilibrium time is the
// best prefix choice:  t* = min_j max{ max{h_j, tau_j}, s*(j) }.
//
// Arithmetic is on the extended half line [0, inf]: 1/0 = inf, 1/inf = 0, and
// a product with an exact-zero factor is 0.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace shadowheart {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct WorkerProfile {
  double h = 0;    // seconds per stochastic gradient
  double tau = 0;  // seconds per compressed message
};

struct EquilibriumQuery {
  double omega = 0;        // compressor variance parameter, >= 0
  double noise_ratio = 0;  // sigma^2 / eps, >= 0
  std::vector<WorkerProfile> workers;

  void validate() const {
    if (workers.empty()) throw std::invalid_argument("EquilibriumQuery: no workers");
    if (!(omega >= 0)) throw std::invalid_argument("EquilibriumQuery: omega must be >= 0");
    if (!(noise_ratio >= 0))
      throw std::invalid_argument("EquilibriumQuery: noise_ratio must be >= 0");
    for (const auto& w : workers)
      if (!(w.h >= 0) || !(w.tau >= 0))
        throw std::invalid_argument("EquilibriumQuery: worker times must be >= 0");
  }
};

struct EquilibriumResult {
  double t_star = kInf;
  int j_star = 0;                 // 1-based prefix length achieving the minimum
  std::vector<double> s_values;   // s*(j) for each prefix, in sorted order
  std::vector<int> permutation;   // sort order, indices into the query's worker list
};

struct IterationPlan {
  std::vector<long long> b;  // gradients per worker
  std::vector<long long> m;  // messages per worker
  std::vector<double> w;     // aggregation weights
  std::vector<int> active;   // workers with b > 0 and m > 0
};

namespace detail {

// Product on [0, inf] where an exact zero annihilates an infinity.
inline double pmul(double a, double b) {
  if (a == 0.0 || b == 0.0) return 0.0;
  return a * b;
}

inline double pinv(double a) {
  if (a == 0.0) return kInf;
  if (a == kInf) return 0.0;
  return 1.0 / a;
}

// Per-worker denominator coefficients: D_i(s) = A_i + C_i / s + B_i.
struct SCoeff {
  double A;  // 2 tau omega
  double B;  // 2 h noise_ratio
  double C;  // 4 tau h noise_ratio omega
};

inline SCoeff s_coeff(const WorkerProfile& wp, double omega, double noise_ratio) {
  SCoeff c;
  c.A = pmul(2.0 * wp.tau, omega);
  c.B = pmul(2.0 * wp.h, noise_ratio);
  c.C = pmul(pmul(4.0 * wp.tau, wp.h), pmul(noise_ratio, omega));
  return c;
}

// Harmonic-style left side of the prefix equation at a candidate s > 0.
inline double phi(const std::vector<SCoeff>& coeff, int j, double s) {
  double sum = 0.0;
  for (int i = 0; i < j; ++i) {
    const SCoeff& c = coeff[static_cast<std::size_t>(i)];
    double mid = (c.C == 0.0) ? 0.0 : c.C / s;  // C/inf = 0, C finite
    double denom = c.A + mid + c.B;
    sum += pinv(denom);
    if (sum == kInf) return 0.0;
  }
  return pinv(sum);
}

// Root of phi_j(s) = s on [0, inf]. hi_hint, if finite and valid, is a known
// upper bracket (s*(j) is nonincreasing in j).
inline double solve_prefix(const std::vector<SCoeff>& coeff, int j, double maxht,
                           double hi_hint) {
  // A worker whose denominator vanishes identically forces s* = 0.
  for (int i = 0; i < j; ++i) {
    const SCoeff& c = coeff[static_cast<std::size_t>(i)];
    if (c.A == 0.0 && c.B == 0.0 && c.C == 0.0) return 0.0;
  }

  double hi;
  if (std::isfinite(hi_hint) && hi_hint > 0 && phi(coeff, j, hi_hint) <= hi_hint) {
    hi = hi_hint;
  } else {
    hi = std::max(1.0, std::isfinite(maxht) ? maxht : 1.0);
    bool bracketed = false;
    for (int it = 0; it < 1100; ++it) {  // 2^1100 overflows double: inf is the answer
      if (phi(coeff, j, hi) <= hi) {
        bracketed = true;
        break;
      }
      hi *= 2.0;
      if (!std::isfinite(hi)) break;
    }
    if (!bracketed || !std::isfinite(hi)) return kInf;
  }

  double lo = 0.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (phi(coeff, j, mid) > mid)
      lo = mid;
    else
      hi = mid;
    if (hi - lo <= 1e-12 * hi) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

// Stable order by max{h, tau} ascending.
inline std::vector<int> sort_workers(const std::vector<WorkerProfile>& workers) {
  std::vector<int> perm(workers.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&workers](int a, int b) {
    return std::max(workers[static_cast<std::size_t>(a)].h, workers[static_cast<std::size_t>(a)].tau) <
           std::max(workers[static_cast<std::size_t>(b)].h, workers[static_cast<std::size_t>(b)].tau);
  });
  return perm;
}

// Root s*(j) of the prefix equation for the first j workers in sorted order.
inline double solve_s(const EquilibriumQuery& query, int j) {
  query.validate();
  if (j < 1 || j > static_cast<int>(query.workers.size()))
    throw std::invalid_argument("solve_s: prefix length out of range");
  auto perm = sort_workers(query.workers);
  std::vector<detail::SCoeff> coeff;
  coeff.reserve(static_cast<std::size_t>(j));
  double maxht = 0;
  for (int i = 0; i < j; ++i) {
    const auto& wp = query.workers[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    coeff.push_back(detail::s_coeff(wp, query.omega, query.noise_ratio));
    maxht = std::max(maxht, std::max(wp.h, wp.tau));
  }
  return detail::solve_prefix(coeff, j, maxht, kInf);
}

inline EquilibriumResult equilibrium_time(const EquilibriumQuery& query) {
  query.validate();
  const int n = static_cast<int>(query.workers.size());
  EquilibriumResult res;
  res.permutation = sort_workers(query.workers);
  res.s_values.resize(static_cast<std::size_t>(n));

  std::vector<detail::SCoeff> coeff;
  coeff.reserve(static_cast<std::size_t>(n));
  double maxht = 0;
  double prev_s = kInf;
  for (int j = 1; j <= n; ++j) {
    const auto& wp =
        query.workers[static_cast<std::size_t>(res.permutation[static_cast<std::size_t>(j - 1)])];
    coeff.push_back(detail::s_coeff(wp, query.omega, query.noise_ratio));
    maxht = std::max(maxht, std::max(wp.h, wp.tau));
    double s = detail::solve_prefix(coeff, j, maxht, prev_s);
    res.s_values[static_cast<std::size_t>(j - 1)] = s;
    prev_s = s;
    double cand = std::max(maxht, s);
    if (cand < res.t_star) {
      res.t_star = cand;
      res.j_star = j;
    }
  }
  if (res.j_star == 0) {  // all candidates infinite
    res.t_star = kInf;
    res.j_star = n;
  }
  return res;
}

// Value-only variant. The prefix objective max{maxht_j, s*(j)} is the max of a
// nondecreasing and a nonincreasing sequence, so the minimum sits where they
// cross; a bisection over j avoids solving every prefix.
inline double equilibrium_time_value(const EquilibriumQuery& query) {
  query.validate();
  const int n = static_cast<int>(query.workers.size());
  auto perm = sort_workers(query.workers);

  std::vector<detail::SCoeff> coeff(static_cast<std::size_t>(n));
  std::vector<double> maxht(static_cast<std::size_t>(n));
  double run = 0;
  for (int i = 0; i < n; ++i) {
    const auto& wp = query.workers[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    coeff[static_cast<std::size_t>(i)] = detail::s_coeff(wp, query.omega, query.noise_ratio);
    run = std::max(run, std::max(wp.h, wp.tau));
    maxht[static_cast<std::size_t>(i)] = run;
  }
  auto s_at = [&](int j) {
    return detail::solve_prefix(coeff, j, maxht[static_cast<std::size_t>(j - 1)], kInf);
  };

  // Smallest j with maxht_j >= s*(j); probe that j and its neighbor.
  int lo = 1, hi = n;
  while (lo < hi) {
    int mid = lo + (hi - lo) / 2;
    if (maxht[static_cast<std::size_t>(mid - 1)] >= s_at(mid))
      hi = mid;
    else
      lo = mid + 1;
  }
  double best = std::max(maxht[static_cast<std::size_t>(lo - 1)], s_at(lo));
  if (lo > 1) best = std::min(best, std::max(maxht[static_cast<std::size_t>(lo - 2)], s_at(lo - 1)));
  return best;
}

// Gradient and message counts a pool can deliver within a window of t_star
// seconds, with the aggregation weights used by the estimator.
inline IterationPlan plan_iteration(const EquilibriumQuery& query, double t_star) {
  query.validate();
  if (!(t_star >= 0)) throw std::invalid_argument("plan_iteration: t_star must be >= 0");
  const int n = static_cast<int>(query.workers.size());
  IterationPlan plan;
  plan.b.resize(static_cast<std::size_t>(n));
  plan.m.resize(static_cast<std::size_t>(n));
  plan.w.assign(static_cast<std::size_t>(n), 0.0);

  auto count = [t_star](double per_unit) -> long long {
    if (t_star == 0.0) return 0;
    if (per_unit == 0.0 || std::isinf(t_star)) return std::numeric_limits<long long>::max();
    double q = std::floor(t_star / per_unit);
    if (q >= 9.2e18) return std::numeric_limits<long long>::max();
    return static_cast<long long>(q);
  };

  const double w0 = query.omega;
  const double r = query.noise_ratio;
  for (int i = 0; i < n; ++i) {
    const auto& wp = query.workers[static_cast<std::size_t>(i)];
    long long b = count(wp.h);
    long long m = count(wp.tau);
    plan.b[static_cast<std::size_t>(i)] = b;
    plan.m[static_cast<std::size_t>(i)] = m;
    if (b > 0 && m > 0) {
      plan.active.push_back(i);
      if (w0 == 0.0 && r == 0.0) {
        plan.w[static_cast<std::size_t>(i)] = 1.0;
      } else {
        double denom = static_cast<double>(b) * w0 + w0 * r + static_cast<double>(m) * r;
        plan.w[static_cast<std::size_t>(i)] = 1.0 / denom;
      }
    }
  }
  return plan;
}

// Variance budget of a plan:
//   ( sum_{active i} b_i m_i / (b_i omega + omega r + m_i r) )^{-1}.
// For any plan derived from the equilibrium time this is at most 1.
inline double check_variance_budget(const EquilibriumQuery& query, const IterationPlan& plan) {
  query.validate();
  if (plan.b.size() != query.workers.size() || plan.m.size() != query.workers.size())
    throw std::invalid_argument("check_variance_budget: plan size mismatch");
  const double w0 = query.omega;
  const double r = query.noise_ratio;
  if (w0 == 0.0 && r == 0.0) return 0.0;
  double sum = 0.0;
  for (int i : plan.active) {
    double b = static_cast<double>(plan.b[static_cast<std::size_t>(i)]);
    double m = static_cast<double>(plan.m[static_cast<std::size_t>(i)]);
    double denom = b * w0 + w0 * r + m * r;
    sum += b * m / denom;
  }
  return detail::pinv(sum);
}

}  // namespace shadowheart
