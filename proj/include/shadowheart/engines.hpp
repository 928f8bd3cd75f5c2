#pragma once

// Discrete-event simulation of one training run. Every method advances a
// simulated wall clock; the trace records objective value and gradient norm
// against that clock, one record per server step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "compressors.hpp"
#include "equilibrium.hpp"
#include "problems.hpp"
#include "rng.hpp"

namespace shadowheart {

enum class Method {
  Shadowheart,
  AdaptiveShadowheart,
  BidirectionalShadowheart,
  Minibatch,
  Qsgd,
  Async,
  Rennala,
  SgdOne,
};

inline const char* method_name(Method m) {
  switch (m) {
    case Method::Shadowheart: return "shadowheart";
    case Method::AdaptiveShadowheart: return "adaptive-shadowheart";
    case Method::BidirectionalShadowheart: return "bidirectional-shadowheart";
    case Method::Minibatch: return "minibatch";
    case Method::Qsgd: return "qsgd";
    case Method::Async: return "async";
    case Method::Rennala: return "rennala";
    case Method::SgdOne: return "sgd-one";
  }
  return "?";
}

struct ScheduleDraw {
  std::vector<double> h;        // seconds per stochastic gradient
  std::vector<double> tau_dot;  // seconds per transmitted coordinate
};

struct ScheduleGenerator {
  enum class Kind { Uniform, SqrtI, SqrtIOverDPow } kind = Kind::Uniform;
  double a = 0.1, b = 1.0;  // Uniform bounds
  double p = 0.0;           // exponent for SqrtIOverDPow

  double eval(int worker_one_based, int dim, Rng& rng) const {
    switch (kind) {
      case Kind::Uniform: return rng.uniform(a, b);
      case Kind::SqrtI: return std::sqrt(static_cast<double>(worker_one_based));
      case Kind::SqrtIOverDPow:
        return std::sqrt(static_cast<double>(worker_one_based)) / std::pow(static_cast<double>(dim), p);
    }
    return 0.0;
  }

  bool random() const { return kind == Kind::Uniform; }
};

struct TimeSchedule {
  bool per_iteration = false;
  std::vector<double> h;        // static mode
  std::vector<double> tau_dot;  // static mode
  bool generated = false;
  int n_workers = 0;
  int dim = 0;  // for generators that reference the problem dimension
  ScheduleGenerator h_gen, tau_gen;
  double broadcast = 0.0;       // tau_serv: compressed server broadcast
  double broadcast_full = 0.0;  // tau_serv_full: dense server broadcast

  static TimeSchedule fixed(std::vector<double> h, std::vector<double> tau_dot) {
    if (h.size() != tau_dot.size() || h.empty())
      throw std::invalid_argument("TimeSchedule: h and tau_dot must have equal positive length");
    TimeSchedule s;
    s.n_workers = static_cast<int>(h.size());
    s.h = std::move(h);
    s.tau_dot = std::move(tau_dot);
    return s;
  }

  static TimeSchedule from_generators(int n, int dim, ScheduleGenerator h_gen,
                                      ScheduleGenerator tau_gen, bool per_iteration) {
    if (n <= 0) throw std::invalid_argument("TimeSchedule: n must be positive");
    TimeSchedule s;
    s.generated = true;
    s.n_workers = n;
    s.dim = dim;
    s.h_gen = h_gen;
    s.tau_gen = tau_gen;
    s.per_iteration = per_iteration;
    return s;
  }

  int n() const { return n_workers; }

  // One draw per (worker, iteration): h first, then tau_dot, from one stream.
  ScheduleDraw draw(std::uint64_t seed, std::uint64_t iteration) const {
    ScheduleDraw out;
    if (!generated) {
      out.h = h;
      out.tau_dot = tau_dot;
      return out;
    }
    std::uint64_t it = per_iteration ? iteration : 0;
    out.h.resize(static_cast<std::size_t>(n_workers));
    out.tau_dot.resize(static_cast<std::size_t>(n_workers));
    for (int i = 0; i < n_workers; ++i) {
      Rng rng(seed, static_cast<std::uint64_t>(i), it, 0, StreamPurpose::Schedule);
      out.h[static_cast<std::size_t>(i)] = h_gen.eval(i + 1, dim, rng);
      out.tau_dot[static_cast<std::size_t>(i)] = tau_gen.eval(i + 1, dim, rng);
    }
    return out;
  }

  bool varies_per_iteration() const {
    return generated && per_iteration && (h_gen.random() || tau_gen.random());
  }
};

struct EngineConfig {
  Method method = Method::Shadowheart;
  double gamma = 0.0;
  double noise_ratio = 0.0;  // sigma^2 / eps used for planning
  CompressorSpec compressor;
  CompressorSpec server_compressor;  // bidirectional only
  long long rennala_batch = 1;
  long long max_iterations = 1000;
  double time_budget = kInf;
  double grad_norm_threshold = 0.0;  // <= 0 disables the criterion

  void validate(int d) const {
    if (!(gamma > 0)) throw std::invalid_argument("EngineConfig: gamma must be positive");
    if (!(noise_ratio >= 0)) throw std::invalid_argument("EngineConfig: noise_ratio must be >= 0");
    if (max_iterations < 1 && !(time_budget < kInf) && !(grad_norm_threshold > 0))
      throw std::invalid_argument("EngineConfig: no stopping criterion");
    switch (method) {
      case Method::Shadowheart:
      case Method::AdaptiveShadowheart:
      case Method::Qsgd:
        if (compressor.kind == CompressorKind::TopK)
          throw std::invalid_argument("EngineConfig: this method needs an unbiased compressor");
        if (compressor.d != d) throw std::invalid_argument("EngineConfig: compressor dimension mismatch");
        break;
      case Method::BidirectionalShadowheart:
        if (compressor.kind == CompressorKind::TopK)
          throw std::invalid_argument("EngineConfig: worker compressor must be unbiased");
        if (server_compressor.kind == CompressorKind::RandK)
          throw std::invalid_argument("EngineConfig: server compressor must be contractive");
        if (compressor.d != d || server_compressor.d != d)
          throw std::invalid_argument("EngineConfig: compressor dimension mismatch");
        break;
      case Method::Rennala:
        if (rennala_batch < 1) throw std::invalid_argument("EngineConfig: rennala_batch must be >= 1");
        break;
      default:
        break;
    }
  }
};

struct TraceRecord {
  double t = 0.0;
  long long iteration = 0;
  double f = 0.0;
  double gnorm2 = 0.0;
  long long sum_b = 0;
  long long sum_m = 0;
  std::string note;
};

struct RunTrace {
  std::vector<TraceRecord> records;
  std::string stop_reason;

  // First simulated time at which gnorm2 fell to the threshold, inf if never.
  double time_to_threshold(double threshold) const {
    for (const auto& r : records)
      if (r.gnorm2 <= threshold) return r.t;
    return kInf;
  }
};

struct StepResult {
  std::vector<double> g;
  double elapsed = 0.0;
  long long sum_b = 0;
  long long sum_m = 0;
};

// ---------------------------------------------------------------------------
// Single steps
// ---------------------------------------------------------------------------

// One aggregation round: worker i accumulates plan.b[i] stochastic gradients
// at x and ships plan.m[i] compressed copies of the sum; the server combines
// them with the plan weights.
inline StepResult shadowheart_step(std::span<const double> x, const IterationPlan& plan,
                                   std::span<const double> h, std::span<const double> tau,
                                   const QuadraticProblem& problem, const NoiseModel& noise,
                                   const CompressorSpec& spec, double tau_serv_full,
                                   std::uint64_t seed, std::uint64_t iteration) {
  const int n = static_cast<int>(h.size());
  StepResult res;
  res.g.assign(static_cast<std::size_t>(problem.d), 0.0);
  double norm = 0.0;
  double busiest = 0.0;
  std::vector<double> grad_sum;
  for (int i : plan.active) {
    long long b = plan.b[static_cast<std::size_t>(i)];
    long long m = plan.m[static_cast<std::size_t>(i)];
    double wi = plan.w[static_cast<std::size_t>(i)];
    Rng noise_rng(seed, static_cast<std::uint64_t>(i), iteration, 0, StreamPurpose::Noise);
    stoch_grad_sum(problem, noise, x, b, noise_rng, grad_sum);
    for (long long j = 0; j < m; ++j) {
      Rng crng(seed, static_cast<std::uint64_t>(i), iteration, static_cast<std::uint64_t>(j),
               StreamPurpose::Compress);
      CompressedVector c = compress_unbiased(spec, grad_sum, crng);
      c.add_to(res.g, wi);
    }
    norm += wi * static_cast<double>(m) * static_cast<double>(b);
    busiest = std::max(busiest, h[static_cast<std::size_t>(i)] * static_cast<double>(b) +
                                    tau[static_cast<std::size_t>(i)] * static_cast<double>(m));
    res.sum_b += b;
    res.sum_m += m;
  }
  (void)n;
  if (norm <= 0.0) throw std::runtime_error("shadowheart_step: no active workers");
  for (double& v : res.g) v /= norm;
  res.elapsed = tau_serv_full + busiest;
  return res;
}

struct AdaptiveStepResult {
  std::vector<double> g;
  double elapsed = 0.0;
  std::vector<long long> levels;    // gradients folded in per worker
  long long messages = 0;           // total messages the server consumed
  double stop_value = 0.0;          // condition value at the stopping message
  double prev_stop_value = kInf;    // condition value one message earlier
};

// Time-free variant: workers stream compressions of their running gradient
// sums (at least one per gradient) and the server stops once the accumulated
// variance condition drops to 1/4.
inline AdaptiveStepResult adaptive_step(std::span<const double> x, std::span<const double> h,
                                        std::span<const double> tau, const QuadraticProblem& problem,
                                        const NoiseModel& noise, const CompressorSpec& spec,
                                        double omega, double noise_ratio, double tau_serv_full,
                                        std::uint64_t seed, std::uint64_t iteration) {
  const int n = static_cast<int>(h.size());
  if (n == 0) throw std::invalid_argument("adaptive_step: no workers");
  for (int i = 0; i < n; ++i)
    if (!(h[static_cast<std::size_t>(i)] > 0) || !(tau[static_cast<std::size_t>(i)] > 0))
      throw std::invalid_argument("adaptive_step: worker times must be positive");

  struct WorkerSim {
    long long level = 0;          // gradients currently in the partial sum
    long long sent_in_round = 0;  // messages completed at this level
    long long round_msgs = 0;     // messages this round will carry
    long long msg_counter = 0;    // global per-worker message id, for rng keys
    double next_time = 0.0;       // completion time of the next message
    std::vector<double> partial;
  };

  auto round_messages = [](double hi, double taui) {
    double q = std::ceil(hi / taui);
    return std::max(1LL, static_cast<long long>(q));
  };

  std::vector<WorkerSim> sim(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& s = sim[static_cast<std::size_t>(i)];
    Rng g1(seed, static_cast<std::uint64_t>(i), iteration, 1, StreamPurpose::Noise);
    s.partial = stoch_grad(problem, noise, x, g1);
    s.level = 1;
    s.round_msgs = round_messages(h[static_cast<std::size_t>(i)], tau[static_cast<std::size_t>(i)]);
    s.next_time = h[static_cast<std::size_t>(i)] + tau[static_cast<std::size_t>(i)];
  }

  struct Event {
    double time;
    int worker;
    bool operator>(const Event& o) const {
      if (time != o.time) return time > o.time;
      return worker > o.worker;
    }
  };
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue;
  for (int i = 0; i < n; ++i)
    queue.push({sim[static_cast<std::size_t>(i)].next_time, i});

  struct ServerSide {
    long long level = 0;
    long long m_current = 0;      // messages seen at the current level
    double sum_inv_m = 0.0;       // sum over levels of 1 / m_{i,j}
    std::vector<double> hat;      // compressions at the current level
    std::vector<double> bar;      // closed levels, each divided by its m
  };
  std::vector<ServerSide> srv(static_cast<std::size_t>(n));
  for (auto& s : srv) {
    s.hat.assign(static_cast<std::size_t>(problem.d), 0.0);
    s.bar.assign(static_cast<std::size_t>(problem.d), 0.0);
  }

  auto condition_value = [&]() {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto& s = srv[static_cast<std::size_t>(i)];
      if (s.level < 1) continue;
      double l = static_cast<double>(s.level);
      double inner = omega * s.sum_inv_m / (l * l) + omega * noise_ratio * s.sum_inv_m / (l * l * l) +
                     noise_ratio / l;
      sum += detail::pinv(inner);
      if (sum == kInf) return 0.0;
    }
    return detail::pinv(sum);
  };

  AdaptiveStepResult res;
  res.levels.assign(static_cast<std::size_t>(n), 0);
  double clock = 0.0;
  constexpr long long kEventCap = 50'000'000;
  for (long long events = 0;; ++events) {
    if (events >= kEventCap)
      throw std::runtime_error("adaptive_step: stopping condition not reached");
    Event ev = queue.top();
    queue.pop();
    clock = ev.time;
    auto& ws = sim[static_cast<std::size_t>(ev.worker)];
    auto& ss = srv[static_cast<std::size_t>(ev.worker)];

    // The message carries a compression of the worker's current partial sum.
    Rng crng(seed, static_cast<std::uint64_t>(ev.worker), iteration,
             static_cast<std::uint64_t>(ws.msg_counter++), StreamPurpose::Compress);
    CompressedVector c = compress_unbiased(spec, ws.partial, crng);
    if (ws.level > ss.level) {
      if (ss.level >= 1) {
        double inv = 1.0 / static_cast<double>(ss.m_current);
        for (int j = 0; j < problem.d; ++j) {
          ss.bar[static_cast<std::size_t>(j)] += ss.hat[static_cast<std::size_t>(j)] * inv;
          ss.hat[static_cast<std::size_t>(j)] = 0.0;
        }
      }
      ss.level = ws.level;
      ss.m_current = 1;
      ss.sum_inv_m += 1.0;
    } else {
      double prev = static_cast<double>(ss.m_current);
      ss.m_current += 1;
      ss.sum_inv_m += 1.0 / static_cast<double>(ss.m_current) - 1.0 / prev;
    }
    c.add_to(ss.hat, 1.0);
    ++res.messages;

    double value = condition_value();
    if (value <= 0.25) {
      res.stop_value = value;
      break;
    }
    res.prev_stop_value = value;

    // Schedule the worker's next message.
    ws.sent_in_round += 1;
    if (ws.sent_in_round >= ws.round_msgs) {
      Rng grng(seed, static_cast<std::uint64_t>(ev.worker), iteration,
               static_cast<std::uint64_t>(ws.level + 1), StreamPurpose::Noise);
      auto grad = stoch_grad(problem, noise, x, grng);
      for (int j = 0; j < problem.d; ++j)
        ws.partial[static_cast<std::size_t>(j)] += grad[static_cast<std::size_t>(j)];
      ws.level += 1;
      ws.sent_in_round = 0;
      ws.round_msgs = round_messages(h[static_cast<std::size_t>(ev.worker)],
                                     tau[static_cast<std::size_t>(ev.worker)]);
    }
    ws.next_time = clock + tau[static_cast<std::size_t>(ev.worker)];
    queue.push({ws.next_time, ev.worker});
  }

  // Final estimator.
  res.g.assign(static_cast<std::size_t>(problem.d), 0.0);
  double norm = 0.0;
  for (int i = 0; i < n; ++i) {
    auto& ss = srv[static_cast<std::size_t>(i)];
    res.levels[static_cast<std::size_t>(i)] = ss.level;
    if (ss.level < 1) continue;
    double inv = 1.0 / static_cast<double>(ss.m_current);
    for (int j = 0; j < problem.d; ++j)
      ss.bar[static_cast<std::size_t>(j)] += ss.hat[static_cast<std::size_t>(j)] * inv;
    double l = static_cast<double>(ss.level);
    double wi;
    if (omega == 0.0 && noise_ratio == 0.0) {
      wi = 1.0;
    } else {
      wi = 1.0 / (omega * ss.sum_inv_m + omega * noise_ratio * ss.sum_inv_m / l + l * noise_ratio);
    }
    for (int j = 0; j < problem.d; ++j)
      res.g[static_cast<std::size_t>(j)] += wi * ss.bar[static_cast<std::size_t>(j)];
    norm += wi * l * (l + 1.0) / 2.0;
  }
  if (norm <= 0.0) throw std::runtime_error("adaptive_step: empty estimator");
  for (double& v : res.g) v /= norm;
  res.elapsed = tau_serv_full + clock;
  return res;
}

struct BidirectionalStepResult {
  std::vector<double> x_next;
  std::vector<double> w_next;  // the model copy workers hold after the broadcast
  CompressedVector p;          // compressed server broadcast
  double elapsed = 0.0;
  long long sum_b = 0;
  long long sum_m = 0;
};

// Workers evaluate gradients at their shifted copy w; the server steps x and
// broadcasts a contractive compression of the displacement.
inline BidirectionalStepResult bidirectional_step(
    std::span<const double> x, std::span<const double> w_server, const IterationPlan& plan,
    std::span<const double> h, std::span<const double> tau, const QuadraticProblem& problem,
    const NoiseModel& noise, const CompressorSpec& worker_spec, const CompressorSpec& server_spec,
    double gamma, double tau_serv, std::uint64_t seed, std::uint64_t iteration) {
  StepResult inner = shadowheart_step(w_server, plan, h, tau, problem, noise, worker_spec, 0.0,
                                      seed, iteration);
  BidirectionalStepResult res;
  res.sum_b = inner.sum_b;
  res.sum_m = inner.sum_m;
  res.x_next.assign(x.begin(), x.end());
  for (int j = 0; j < problem.d; ++j)
    res.x_next[static_cast<std::size_t>(j)] -= gamma * inner.g[static_cast<std::size_t>(j)];

  std::vector<double> shift(static_cast<std::size_t>(problem.d));
  for (int j = 0; j < problem.d; ++j)
    shift[static_cast<std::size_t>(j)] = res.x_next[static_cast<std::size_t>(j)] -
                                         w_server[static_cast<std::size_t>(j)];
  res.p = compress_biased(server_spec, shift);
  if (server_spec.kind == CompressorKind::Identity) {
    // Identity broadcast hands workers the exact iterate.
    res.w_next = res.x_next;
  } else {
    res.w_next.assign(w_server.begin(), w_server.end());
    res.p.add_to(res.w_next, 1.0);
  }
  res.elapsed = tau_serv + inner.elapsed;
  return res;
}

inline StepResult minibatch_step(std::span<const double> x, const ScheduleDraw& times,
                                 const QuadraticProblem& problem, const NoiseModel& noise,
                                 std::uint64_t seed, std::uint64_t iteration) {
  const int n = static_cast<int>(times.h.size());
  StepResult res;
  res.g.assign(static_cast<std::size_t>(problem.d), 0.0);
  for (int i = 0; i < n; ++i) {
    Rng rng(seed, static_cast<std::uint64_t>(i), iteration, 0, StreamPurpose::Noise);
    auto gi = stoch_grad(problem, noise, x, rng);
    for (int j = 0; j < problem.d; ++j) res.g[static_cast<std::size_t>(j)] += gi[static_cast<std::size_t>(j)];
    res.elapsed = std::max(res.elapsed, times.h[static_cast<std::size_t>(i)] +
                                            problem.d * times.tau_dot[static_cast<std::size_t>(i)]);
  }
  for (double& v : res.g) v /= static_cast<double>(n);
  res.sum_b = n;
  res.sum_m = n;
  return res;
}

inline StepResult qsgd_step(std::span<const double> x, const ScheduleDraw& times,
                            const QuadraticProblem& problem, const NoiseModel& noise,
                            const CompressorSpec& spec, std::uint64_t seed,
                            std::uint64_t iteration) {
  const int n = static_cast<int>(times.h.size());
  const int k = transmit_cost(spec);
  StepResult res;
  res.g.assign(static_cast<std::size_t>(problem.d), 0.0);
  for (int i = 0; i < n; ++i) {
    Rng nrng(seed, static_cast<std::uint64_t>(i), iteration, 0, StreamPurpose::Noise);
    auto gi = stoch_grad(problem, noise, x, nrng);
    Rng crng(seed, static_cast<std::uint64_t>(i), iteration, 0, StreamPurpose::Compress);
    CompressedVector c = compress_unbiased(spec, gi, crng);
    c.add_to(res.g, 1.0);
    res.elapsed = std::max(res.elapsed, times.h[static_cast<std::size_t>(i)] +
                                            k * times.tau_dot[static_cast<std::size_t>(i)]);
  }
  for (double& v : res.g) v /= static_cast<double>(n);
  res.sum_b = n;
  res.sum_m = n;
  return res;
}

// Collect the first `batch` gradient arrivals at the current iterate. Worker i
// finishes its r-th gradient at r * h_i and the upload adds d * tau_dot_i.
inline StepResult rennala_step(std::span<const double> x, const ScheduleDraw& times,
                               const QuadraticProblem& problem, const NoiseModel& noise,
                               long long batch, std::uint64_t seed, std::uint64_t iteration) {
  const int n = static_cast<int>(times.h.size());
  struct Arrival {
    double time;
    int worker;
    long long r;
    bool operator>(const Arrival& o) const {
      if (time != o.time) return time > o.time;
      return worker > o.worker;
    }
  };
  std::priority_queue<Arrival, std::vector<Arrival>, std::greater<Arrival>> queue;
  auto arrival = [&](int i, long long r) {
    return static_cast<double>(r) * times.h[static_cast<std::size_t>(i)] +
           problem.d * times.tau_dot[static_cast<std::size_t>(i)];
  };
  for (int i = 0; i < n; ++i) queue.push({arrival(i, 1), i, 1});

  StepResult res;
  res.g.assign(static_cast<std::size_t>(problem.d), 0.0);
  for (long long taken = 0; taken < batch; ++taken) {
    Arrival a = queue.top();
    queue.pop();
    Rng rng(seed, static_cast<std::uint64_t>(a.worker), iteration,
            static_cast<std::uint64_t>(a.r), StreamPurpose::Noise);
    auto gi = stoch_grad(problem, noise, x, rng);
    for (int j = 0; j < problem.d; ++j) res.g[static_cast<std::size_t>(j)] += gi[static_cast<std::size_t>(j)];
    res.elapsed = a.time;
    queue.push({arrival(a.worker, a.r + 1), a.worker, a.r + 1});
  }
  for (double& v : res.g) v /= static_cast<double>(batch);
  res.sum_b = batch;
  res.sum_m = batch;
  return res;
}

inline StepResult sgd_one_step(std::span<const double> x, const ScheduleDraw& times,
                               const QuadraticProblem& problem, const NoiseModel& noise,
                               std::uint64_t seed, std::uint64_t iteration) {
  const int n = static_cast<int>(times.h.size());
  int fastest = 0;
  for (int i = 1; i < n; ++i)
    if (times.h[static_cast<std::size_t>(i)] < times.h[static_cast<std::size_t>(fastest)]) fastest = i;
  Rng rng(seed, static_cast<std::uint64_t>(fastest), iteration, 0, StreamPurpose::Noise);
  StepResult res;
  res.g = stoch_grad(problem, noise, x, rng);
  res.elapsed = times.h[static_cast<std::size_t>(fastest)] +
                problem.d * times.tau_dot[static_cast<std::size_t>(fastest)];
  res.sum_b = 1;
  res.sum_m = 1;
  return res;
}

// ---------------------------------------------------------------------------
// Full runs
// ---------------------------------------------------------------------------

namespace detail {

inline void record_state(RunTrace& trace, const QuadraticProblem& problem,
                         std::span<const double> x, double t, long long iteration,
                         long long sum_b, long long sum_m, std::string note) {
  auto g = problem.full_grad(x);
  TraceRecord rec;
  rec.t = t;
  rec.iteration = iteration;
  rec.f = problem.value(x);
  rec.gnorm2 = grad_norm_sq(g);
  rec.sum_b = sum_b;
  rec.sum_m = sum_m;
  rec.note = std::move(note);
  trace.records.push_back(std::move(rec));
}

inline bool should_stop(const EngineConfig& config, const RunTrace& trace, double clock,
                        long long iteration, std::string& reason) {
  if (config.grad_norm_threshold > 0 && !trace.records.empty() &&
      trace.records.back().gnorm2 <= config.grad_norm_threshold) {
    reason = "grad_norm_threshold";
    return true;
  }
  if (clock >= config.time_budget) {
    reason = "time_budget";
    return true;
  }
  if (config.max_iterations >= 0 && iteration >= config.max_iterations) {
    reason = "max_iterations";
    return true;
  }
  return false;
}

}  // namespace detail

inline RunTrace run(const EngineConfig& config, const QuadraticProblem& problem,
                    const NoiseModel& noise, const TimeSchedule& schedule,
                    std::span<const double> x0, std::uint64_t seed) {
  config.validate(problem.d);
  noise.validate();
  problem.check_dim(x0);
  if (schedule.n() <= 0) throw std::invalid_argument("run: schedule has no workers");

  std::vector<double> x(x0.begin(), x0.end());
  RunTrace trace;
  double clock = 0.0;
  detail::record_state(trace, problem, x, 0.0, 0, 0, 0, "init");

  // Static-schedule plans are computed once.
  const bool replan = schedule.varies_per_iteration();
  double omega = 0.0;
  if (config.method == Method::Shadowheart || config.method == Method::AdaptiveShadowheart ||
      config.method == Method::BidirectionalShadowheart || config.method == Method::Qsgd)
    omega = omega_of(config.compressor);

  auto make_plan = [&](const ScheduleDraw& times, std::vector<double>& tau_out) {
    const int k = transmit_cost(config.compressor);
    tau_out.resize(times.tau_dot.size());
    EquilibriumQuery q;
    q.omega = omega;
    q.noise_ratio = config.noise_ratio;
    q.workers.resize(times.h.size());
    for (std::size_t i = 0; i < times.h.size(); ++i) {
      tau_out[i] = k * times.tau_dot[i];
      q.workers[i] = {times.h[i], tau_out[i]};
    }
    double t_star = equilibrium_time_value(q);
    if (!(t_star > 0) || !std::isfinite(t_star))
      throw std::runtime_error("run: equilibrium time is not positive and finite");
    return plan_iteration(q, t_star);
  };

  // Async keeps cross-step worker state; everything else is one step at a time.
  if (config.method == Method::Async) {
    struct Pending {
      double time;
      int worker;
      std::uint64_t count;
      bool operator>(const Pending& o) const {
        if (time != o.time) return time > o.time;
        return worker > o.worker;
      }
    };
    std::priority_queue<Pending, std::vector<Pending>, std::greater<Pending>> queue;
    std::vector<std::vector<double>> basis(static_cast<std::size_t>(schedule.n()));
    for (int i = 0; i < schedule.n(); ++i) {
      ScheduleDraw times = schedule.draw(seed, 0);
      basis[static_cast<std::size_t>(i)] = x;
      queue.push({times.h[static_cast<std::size_t>(i)] +
                      problem.d * times.tau_dot[static_cast<std::size_t>(i)],
                  i, 0});
    }
    long long iteration = 0;
    std::string reason;
    while (!detail::should_stop(config, trace, clock, iteration, reason)) {
      Pending pend = queue.top();
      queue.pop();
      clock = pend.time;
      Rng rng(seed, static_cast<std::uint64_t>(pend.worker), pend.count, 0, StreamPurpose::Noise);
      auto g = stoch_grad(problem, noise, basis[static_cast<std::size_t>(pend.worker)], rng);
      for (int j = 0; j < problem.d; ++j)
        x[static_cast<std::size_t>(j)] -= config.gamma * g[static_cast<std::size_t>(j)];
      ++iteration;
      detail::record_state(trace, problem, x, clock, iteration, 1, 1, "");
      basis[static_cast<std::size_t>(pend.worker)] = x;
      ScheduleDraw times = schedule.draw(seed, pend.count + 1);
      queue.push({clock + times.h[static_cast<std::size_t>(pend.worker)] +
                      problem.d * times.tau_dot[static_cast<std::size_t>(pend.worker)],
                  pend.worker, pend.count + 1});
    }
    trace.stop_reason = reason;
    return trace;
  }

  ScheduleDraw times = schedule.draw(seed, 0);
  std::vector<double> tau;
  IterationPlan plan;
  if (config.method == Method::Shadowheart || config.method == Method::BidirectionalShadowheart)
    plan = make_plan(times, tau);
  if (config.method == Method::AdaptiveShadowheart) {
    const int k = transmit_cost(config.compressor);
    tau.resize(times.tau_dot.size());
    for (std::size_t i = 0; i < times.tau_dot.size(); ++i) tau[i] = k * times.tau_dot[i];
  }

  std::vector<double> w_server = x;  // bidirectional model copy, w^0 = x^0

  long long iteration = 0;
  std::string reason;
  while (!detail::should_stop(config, trace, clock, iteration, reason)) {
    std::uint64_t it = static_cast<std::uint64_t>(iteration);
    if (replan) {
      times = schedule.draw(seed, it);
      if (config.method == Method::Shadowheart || config.method == Method::BidirectionalShadowheart)
        plan = make_plan(times, tau);
      else if (config.method == Method::AdaptiveShadowheart) {
        const int k = transmit_cost(config.compressor);
        for (std::size_t i = 0; i < times.tau_dot.size(); ++i) tau[i] = k * times.tau_dot[i];
      }
    }

    StepResult step;
    switch (config.method) {
      case Method::Shadowheart:
        step = shadowheart_step(x, plan, times.h, tau, problem, noise, config.compressor,
                                schedule.broadcast_full, seed, it);
        break;
      case Method::AdaptiveShadowheart: {
        AdaptiveStepResult astep =
            adaptive_step(x, times.h, tau, problem, noise, config.compressor, omega,
                          config.noise_ratio, schedule.broadcast_full, seed, it);
        step.g = std::move(astep.g);
        step.elapsed = astep.elapsed;
        for (long long l : astep.levels) step.sum_b += l;
        step.sum_m = astep.messages;
        break;
      }
      case Method::BidirectionalShadowheart: {
        BidirectionalStepResult bstep =
            bidirectional_step(x, w_server, plan, times.h, tau, problem, noise, config.compressor,
                               config.server_compressor, config.gamma, schedule.broadcast, seed, it);
        x = bstep.x_next;
        w_server = bstep.w_next;
        clock += bstep.elapsed;
        ++iteration;
        detail::record_state(trace, problem, x, clock, iteration, bstep.sum_b, bstep.sum_m, "");
        continue;
      }
      case Method::Minibatch:
        step = minibatch_step(x, times, problem, noise, seed, it);
        break;
      case Method::Qsgd:
        step = qsgd_step(x, times, problem, noise, config.compressor, seed, it);
        break;
      case Method::Rennala:
        step = rennala_step(x, times, problem, noise, config.rennala_batch, seed, it);
        break;
      case Method::SgdOne:
        step = sgd_one_step(x, times, problem, noise, seed, it);
        break;
      case Method::Async:
        throw std::logic_error("run: async handled above");
    }

    for (int j = 0; j < problem.d; ++j)
      x[static_cast<std::size_t>(j)] -= config.gamma * step.g[static_cast<std::size_t>(j)];
    clock += step.elapsed;
    ++iteration;
    detail::record_state(trace, problem, x, clock, iteration, step.sum_b, step.sum_m, "");
  }
  trace.stop_reason = reason;
  return trace;
}

}  // namespace shadowheart
