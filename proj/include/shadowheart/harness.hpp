#pragma once

// Run configuration (versioned JSON), stepsize sweeps, experiment suites, and
// CSV emission. Everything here is deterministic in (config, seed): rerunning
// a subcommand reproduces its output byte for byte.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "complexity.hpp"
#include "engines.hpp"
#include "problems.hpp"

namespace shadowheart {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void expect_keys(const nlohmann::json& j, std::initializer_list<const char*> keys,
                        const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys)
      if (it.key() == k) known = true;
    if (!known) throw ConfigError(context + ": unknown key '" + it.key() + "'");
  }
}

inline const nlohmann::json& require(const nlohmann::json& j, const char* key,
                                     const std::string& context) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(context + ": missing key '" + key + "'");
  return *it;
}

inline double as_number(const nlohmann::json& j, const std::string& context) {
  if (!j.is_number()) throw ConfigError(context + ": expected a number");
  return j.get<double>();
}

inline std::string as_string(const nlohmann::json& j, const std::string& context) {
  if (!j.is_string()) throw ConfigError(context + ": expected a string");
  return j.get<std::string>();
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunSetup {
  int d = 0;
  NoiseModel noise;
  std::string start = "ones";
  EngineConfig config;
  TimeSchedule schedule;
  std::uint64_t seed = 1;
  std::string out;
  bool gamma_given = false;

  std::vector<double> start_point() const {
    std::vector<double> x(static_cast<std::size_t>(d), 0.0);
    if (start == "ones") {
      x.assign(static_cast<std::size_t>(d), 1.0);
    } else if (start == "sqrt_d_e1") {
      x[0] = std::sqrt(static_cast<double>(d));
    } else {
      throw ConfigError("problem.start: unknown start point '" + start + "'");
    }
    return x;
  }
};

inline Method parse_method_name(const std::string& name) {
  if (name == "shadowheart") return Method::Shadowheart;
  if (name == "adaptive-shadowheart") return Method::AdaptiveShadowheart;
  if (name == "bidirectional-shadowheart") return Method::BidirectionalShadowheart;
  if (name == "minibatch") return Method::Minibatch;
  if (name == "qsgd") return Method::Qsgd;
  if (name == "async") return Method::Async;
  if (name == "rennala") return Method::Rennala;
  if (name == "sgd-one") return Method::SgdOne;
  throw ConfigError("method.name: unknown method '" + name + "'");
}

inline CompressorSpec parse_compressor(const nlohmann::json& j, int d, const std::string& context) {
  detail::expect_keys(j, {"kind", "k"}, context);
  std::string kind = detail::as_string(detail::require(j, "kind", context), context + ".kind");
  CompressorSpec spec;
  spec.d = d;
  if (kind == "identity") {
    spec.kind = CompressorKind::Identity;
  } else if (kind == "rand_k") {
    spec.kind = CompressorKind::RandK;
  } else if (kind == "top_k") {
    spec.kind = CompressorKind::TopK;
  } else {
    throw ConfigError(context + ".kind: unknown compressor '" + kind + "'");
  }
  if (spec.kind != CompressorKind::Identity)
    spec.k = static_cast<int>(detail::as_number(detail::require(j, "k", context), context + ".k"));
  spec.validate();
  return spec;
}

inline ScheduleGenerator parse_generator(const std::string& name, const std::string& context) {
  ScheduleGenerator gen;
  double a = 0, b = 0, p = 0;
  if (std::sscanf(name.c_str(), "uniform(%lf,%lf)", &a, &b) == 2) {
    if (!(a >= 0 && b >= a)) throw ConfigError(context + ": bad uniform bounds in '" + name + "'");
    gen.kind = ScheduleGenerator::Kind::Uniform;
    gen.a = a;
    gen.b = b;
  } else if (name == "sqrt_i") {
    gen.kind = ScheduleGenerator::Kind::SqrtI;
  } else if (std::sscanf(name.c_str(), "sqrt_i_over_d_pow(%lf)", &p) == 1) {
    gen.kind = ScheduleGenerator::Kind::SqrtIOverDPow;
    gen.p = p;
  } else {
    throw ConfigError(context + ": unknown generator '" + name + "'");
  }
  return gen;
}

inline RunSetup parse_run_config(const nlohmann::json& j) {
  detail::expect_keys(j, {"version", "problem", "method", "schedule", "seed", "out"}, "config");
  double version = detail::as_number(detail::require(j, "version", "config"), "config.version");
  if (version != 1) throw ConfigError("config.version: unsupported version");

  RunSetup setup;

  const auto& prob = detail::require(j, "problem", "config");
  detail::expect_keys(prob, {"kind", "d", "noise", "start"}, "problem");
  if (detail::as_string(detail::require(prob, "kind", "problem"), "problem.kind") != "quadratic")
    throw ConfigError("problem.kind: only 'quadratic' is supported");
  setup.d = static_cast<int>(detail::as_number(detail::require(prob, "d", "problem"), "problem.d"));
  if (setup.d < 1) throw ConfigError("problem.d: must be >= 1");
  const auto& noise = detail::require(prob, "noise", "problem");
  detail::expect_keys(noise, {"kind", "p", "sigma"}, "problem.noise");
  std::string nkind =
      detail::as_string(detail::require(noise, "kind", "problem.noise"), "problem.noise.kind");
  if (nkind == "none") {
    setup.noise.kind = NoiseKind::None;
  } else if (nkind == "multiplicative") {
    setup.noise.kind = NoiseKind::Multiplicative;
    setup.noise.p =
        detail::as_number(detail::require(noise, "p", "problem.noise"), "problem.noise.p");
  } else if (nkind == "additive") {
    setup.noise.kind = NoiseKind::AdditiveGaussian;
    setup.noise.sigma_coord =
        detail::as_number(detail::require(noise, "sigma", "problem.noise"), "problem.noise.sigma");
  } else {
    throw ConfigError("problem.noise.kind: unknown noise kind '" + nkind + "'");
  }
  if (prob.contains("start"))
    setup.start = detail::as_string(prob.at("start"), "problem.start");

  const auto& method = detail::require(j, "method", "config");
  detail::expect_keys(method,
                      {"name", "gamma", "noise_ratio", "compressor", "server_compressor",
                       "rennala_batch", "max_iterations", "time_budget", "grad_norm_threshold"},
                      "method");
  setup.config.method = parse_method_name(
      detail::as_string(detail::require(method, "name", "method"), "method.name"));
  if (method.contains("gamma")) {
    setup.config.gamma = detail::as_number(method.at("gamma"), "method.gamma");
    setup.gamma_given = true;
  }
  if (method.contains("noise_ratio"))
    setup.config.noise_ratio = detail::as_number(method.at("noise_ratio"), "method.noise_ratio");
  if (method.contains("compressor"))
    setup.config.compressor = parse_compressor(method.at("compressor"), setup.d, "method.compressor");
  else
    setup.config.compressor = {CompressorKind::Identity, 0, setup.d};
  if (method.contains("server_compressor"))
    setup.config.server_compressor =
        parse_compressor(method.at("server_compressor"), setup.d, "method.server_compressor");
  else
    setup.config.server_compressor = {CompressorKind::Identity, 0, setup.d};
  if (method.contains("rennala_batch"))
    setup.config.rennala_batch =
        static_cast<long long>(detail::as_number(method.at("rennala_batch"), "method.rennala_batch"));
  if (method.contains("max_iterations"))
    setup.config.max_iterations =
        static_cast<long long>(detail::as_number(method.at("max_iterations"), "method.max_iterations"));
  if (method.contains("time_budget"))
    setup.config.time_budget = detail::as_number(method.at("time_budget"), "method.time_budget");
  if (method.contains("grad_norm_threshold"))
    setup.config.grad_norm_threshold =
        detail::as_number(method.at("grad_norm_threshold"), "method.grad_norm_threshold");

  const auto& sched = detail::require(j, "schedule", "config");
  detail::expect_keys(
      sched, {"type", "h", "tau_dot", "n", "per_iteration", "broadcast", "broadcast_full"},
      "schedule");
  std::string stype =
      detail::as_string(detail::require(sched, "type", "schedule"), "schedule.type");
  if (stype == "static") {
    std::vector<double> h, tau_dot;
    for (const auto& v : detail::require(sched, "h", "schedule"))
      h.push_back(detail::as_number(v, "schedule.h"));
    for (const auto& v : detail::require(sched, "tau_dot", "schedule"))
      tau_dot.push_back(detail::as_number(v, "schedule.tau_dot"));
    if (h.empty() || h.size() != tau_dot.size())
      throw ConfigError("schedule: h and tau_dot must have equal positive length");
    setup.schedule = TimeSchedule::fixed(std::move(h), std::move(tau_dot));
  } else if (stype == "generator") {
    int n = static_cast<int>(detail::as_number(detail::require(sched, "n", "schedule"), "schedule.n"));
    if (n < 1) throw ConfigError("schedule.n: must be >= 1");
    auto h_gen = parse_generator(
        detail::as_string(detail::require(sched, "h", "schedule"), "schedule.h"), "schedule.h");
    auto tau_gen = parse_generator(
        detail::as_string(detail::require(sched, "tau_dot", "schedule"), "schedule.tau_dot"),
        "schedule.tau_dot");
    bool per_iteration = false;
    if (sched.contains("per_iteration")) {
      if (!sched.at("per_iteration").is_boolean())
        throw ConfigError("schedule.per_iteration: expected a boolean");
      per_iteration = sched.at("per_iteration").get<bool>();
    }
    setup.schedule = TimeSchedule::from_generators(n, setup.d, h_gen, tau_gen, per_iteration);
  } else {
    throw ConfigError("schedule.type: unknown type '" + stype + "'");
  }
  if (sched.contains("broadcast"))
    setup.schedule.broadcast = detail::as_number(sched.at("broadcast"), "schedule.broadcast");
  if (sched.contains("broadcast_full"))
    setup.schedule.broadcast_full =
        detail::as_number(sched.at("broadcast_full"), "schedule.broadcast_full");

  if (j.contains("seed"))
    setup.seed = static_cast<std::uint64_t>(detail::as_number(j.at("seed"), "config.seed"));
  if (j.contains("out")) setup.out = detail::as_string(j.at("out"), "config.out");

  if (!setup.gamma_given) {
    QuadraticProblem problem(setup.d);
    double L = problem.smoothness();
    if (setup.config.method == Method::BidirectionalShadowheart) {
      double alpha = alpha_of(setup.config.server_compressor);
      setup.config.gamma = alpha / (16.0 * L);
    } else {
      setup.config.gamma = 1.0 / (2.0 * L);
    }
  }
  return setup;
}

inline RunTrace run_setup(const RunSetup& setup) {
  QuadraticProblem problem(setup.d);
  auto x0 = setup.start_point();
  return run(setup.config, problem, setup.noise, setup.schedule, x0, setup.seed);
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

inline std::string trace_to_csv(const RunTrace& trace) {
  std::string out = "t_seconds,iteration,f,grad_norm_sq,sum_b,sum_m,event_note\n";
  for (const auto& r : trace.records) {
    out += detail::fmt(r.t);
    out += ',';
    out += std::to_string(r.iteration);
    out += ',';
    out += detail::fmt(r.f);
    out += ',';
    out += detail::fmt(r.gnorm2);
    out += ',';
    out += std::to_string(r.sum_b);
    out += ',';
    out += std::to_string(r.sum_m);
    out += ',';
    out += r.note;
    out += '\n';
  }
  return out;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open output file: " + path);
  f << content;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepSpec {
  std::string parameter;      // gamma | noise_ratio | rennala_batch
  std::vector<double> grid;

  void validate() const {
    if (grid.empty()) throw ConfigError("sweep: empty grid");
    if (parameter != "gamma" && parameter != "noise_ratio" && parameter != "rennala_batch")
      throw ConfigError("sweep: unknown parameter '" + parameter + "'");
  }
};

struct SweepResult {
  double best_value = 0;
  std::vector<double> grid;           // sorted ascending
  std::vector<double> median_metric;  // simulated seconds to the threshold
};

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Metric: simulated seconds until gnorm2 reaches the config threshold,
// median over seeds; the winner is the argmin, ties to the smaller value.
inline SweepResult sweep(const RunSetup& base, const SweepSpec& spec,
                         const std::vector<std::uint64_t>& seeds) {
  spec.validate();
  if (seeds.empty()) throw ConfigError("sweep: empty seed list");
  if (!(base.config.grad_norm_threshold > 0))
    throw ConfigError("sweep: config needs a positive grad_norm_threshold metric");

  SweepResult result;
  result.grid = spec.grid;
  std::sort(result.grid.begin(), result.grid.end());
  for (double value : result.grid) {
    RunSetup setup = base;
    if (spec.parameter == "gamma")
      setup.config.gamma = value;
    else if (spec.parameter == "noise_ratio")
      setup.config.noise_ratio = value;
    else
      setup.config.rennala_batch = static_cast<long long>(value);
    std::vector<double> metrics;
    for (std::uint64_t seed : seeds) {
      setup.seed = seed;
      auto trace = run_setup(setup);
      metrics.push_back(trace.time_to_threshold(setup.config.grad_norm_threshold));
    }
    result.median_metric.push_back(median(std::move(metrics)));
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < result.grid.size(); ++i)
    if (result.median_metric[i] < result.median_metric[best]) best = i;
  result.best_value = result.grid[best];
  return result;
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

struct SuiteOptions {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string outdir = "suite_out";
  bool paper_scale = false;  // restore the paper's n (10^4); default desk scale
  int n_override = 0;
  int d_override = 0;
  long long max_iterations = 0;  // 0 keeps the suite default
};

struct SuiteRunSummary {
  std::string method;
  std::uint64_t seed = 0;
  double time_to_threshold = kInf;
  std::string stop_reason;
  std::string trace_file;
};

inline int suite_threads() {
  if (const char* env = std::getenv("SHADOWHEART_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

namespace detail {

struct SuiteJob {
  RunSetup setup;
  std::string method;
  std::uint64_t seed;
  std::string trace_file;
};

inline std::vector<SuiteRunSummary> execute_jobs(std::vector<SuiteJob>& jobs,
                                                 const std::string& outdir,
                                                 const std::string& suite_name,
                                                 double threshold) {
  std::vector<RunTrace> traces(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  int nthreads = std::min<int>(suite_threads(), static_cast<int>(jobs.size()));
  std::vector<std::thread> pool;
  for (int t = 0; t < nthreads; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        try {
          traces[i] = run_setup(jobs[i].setup);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::vector<SuiteRunSummary> summaries;
  std::string summary_csv = "method,seed,time_to_threshold,stop_reason,trace_file\n";
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    write_file(jobs[i].trace_file, trace_to_csv(traces[i]));
    SuiteRunSummary s;
    s.method = jobs[i].method;
    s.seed = jobs[i].seed;
    s.time_to_threshold = traces[i].time_to_threshold(threshold);
    s.stop_reason = traces[i].stop_reason;
    s.trace_file = jobs[i].trace_file;
    // Record the trace by name, not path, so the summary is location-independent.
    summary_csv += s.method + ',' + std::to_string(s.seed) + ',' + fmt(s.time_to_threshold) +
                   ',' + s.stop_reason + ',' +
                   std::filesystem::path(s.trace_file).filename().string() + '\n';
    summaries.push_back(std::move(s));
  }
  write_file(outdir + "/" + suite_name + "__summary.csv", summary_csv);
  return summaries;
}

}  // namespace detail

// Known suites:
//   additive-defaults      n=100, d=100, Rand-1, additive sigma=0.1, ratio 100
//   multiplicative-medium  h_i = sqrt(i), tau_dot_i = sqrt(i)/d^{3/4}, p = 1e-3
//   table1                 closed-form speedup factors, no simulation
inline std::vector<SuiteRunSummary> run_suite(const std::string& name,
                                              const SuiteOptions& options) {
  if (options.seeds.empty()) throw ConfigError("suite: empty seed list");

  if (name == "table1") {
    double d = options.d_override > 0 ? options.d_override : 1e6;
    int n = options.n_override > 0 ? options.n_override : 1000;
    auto table = speedup_factors(options.seeds.front(), static_cast<int>(options.seeds.size()),
                                 d, n);
    std::string csv = "noise_ratio,minibatch_factor,qsgd_factor,rennala_factor\n";
    for (std::size_t r = 0; r < table.noise_ratios.size(); ++r)
      csv += detail::fmt(table.noise_ratios[r]) + ',' + detail::fmt(table.minibatch_factor[r]) +
             ',' + detail::fmt(table.qsgd_factor[r]) + ',' + detail::fmt(table.rennala_factor[r]) +
             '\n';
    write_file(options.outdir + "/table1__summary.csv", csv);
    SuiteRunSummary s;
    s.method = "table1";
    s.seed = options.seeds.front();
    s.stop_reason = "completed";
    s.trace_file = options.outdir + "/table1__summary.csv";
    return {s};
  }

  RunSetup base;
  base.d = options.d_override > 0 ? options.d_override : 100;
  int n = options.n_override > 0 ? options.n_override : (options.paper_scale ? 10000 : 100);
  base.config.max_iterations = options.max_iterations > 0 ? options.max_iterations : 2000;
  base.config.grad_norm_threshold = 1e-4;

  if (name == "additive-defaults") {
    base.noise = {NoiseKind::AdditiveGaussian, 1.0, 0.1};
    base.start = "ones";
    base.config.noise_ratio = 100.0;  // sigma^2 / eps with sigma = 0.1, eps = 1e-4
    ScheduleGenerator uni;            // uniform(0.1, 1)
    base.schedule = TimeSchedule::from_generators(n, base.d, uni, uni, false);
  } else if (name == "multiplicative-medium") {
    base.noise = {NoiseKind::Multiplicative, 1e-3, 0.0};
    base.start = "sqrt_d_e1";
    base.config.noise_ratio = 10.0;
    ScheduleGenerator h_gen;
    h_gen.kind = ScheduleGenerator::Kind::SqrtI;
    ScheduleGenerator tau_gen;
    tau_gen.kind = ScheduleGenerator::Kind::SqrtIOverDPow;
    tau_gen.p = 0.75;
    base.schedule = TimeSchedule::from_generators(n, base.d, h_gen, tau_gen, false);
  } else {
    throw ConfigError("suite: unknown suite '" + name + "'");
  }

  QuadraticProblem problem(base.d);
  double default_gamma = 1.0 / (2.0 * problem.smoothness());

  std::vector<detail::SuiteJob> jobs;
  for (const char* method : {"shadowheart", "minibatch", "qsgd", "rennala", "sgd-one"}) {
    for (std::uint64_t seed : options.seeds) {
      detail::SuiteJob job;
      job.setup = base;
      job.setup.config.method = parse_method_name(method);
      job.setup.config.gamma = default_gamma;
      job.setup.config.compressor = {CompressorKind::RandK, 1, base.d};
      job.setup.config.rennala_batch = n;
      job.setup.seed = seed;
      job.method = method;
      job.seed = seed;
      job.trace_file = options.outdir + "/" + name + "__" + method + "__seed" +
                       std::to_string(seed) + ".csv";
      jobs.push_back(std::move(job));
    }
  }
  return detail::execute_jobs(jobs, options.outdir, name, base.config.grad_norm_threshold);
}

}  // namespace shadowheart
