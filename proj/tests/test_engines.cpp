#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <shadowheart/engines.hpp>

using namespace shadowheart;

namespace {

std::vector<double> random_point(int d, std::uint64_t seed) {
  Rng rng(seed, 0, 0, 0, StreamPurpose::Harness);
  std::vector<double> x(static_cast<std::size_t>(d));
  for (auto& v : x) v = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("aggregation step: counts, elapsed time, and exactness without noise") {
  QuadraticProblem problem(2);
  NoiseModel none;
  // One worker, h = tau = 1, Rand-1 on d = 2 (omega = 1), noise_ratio = 1.
  EquilibriumQuery q;
  q.omega = 1.0;
  q.noise_ratio = 1.0;
  q.workers = {{1.0, 1.0}};
  double t = equilibrium_time_value(q);
  CHECK(t == doctest::Approx(2.0 + 2.0 * std::sqrt(2.0)).epsilon(1e-9));
  auto plan = plan_iteration(q, t);
  CHECK(plan.b == std::vector<long long>{4});
  CHECK(plan.m == std::vector<long long>{4});

  std::vector<double> h = {1.0}, tau = {1.0};
  auto x = random_point(2, 3);
  CompressorSpec rand1{CompressorKind::RandK, 1, 2};
  auto step = shadowheart_step(x, plan, h, tau, problem, none, rand1, 0.5, 11, 0);
  CHECK(step.sum_b == 4);
  CHECK(step.sum_m == 4);
  // Window bound: elapsed <= tau_serv_full + 2 t*.
  CHECK(step.elapsed == doctest::Approx(0.5 + 8.0));
  CHECK(step.elapsed <= 0.5 + 2.0 * t);

  // Identity compressor and equal workers: the estimator is the exact mean.
  CompressorSpec ident{CompressorKind::Identity, 0, 2};
  EquilibriumQuery q0;
  q0.omega = 0.0;
  q0.noise_ratio = 0.0;
  q0.workers = {{1.0, 1.0}, {1.0, 1.0}};
  double t0 = equilibrium_time_value(q0);
  CHECK(t0 == doctest::Approx(1.0));
  auto plan0 = plan_iteration(q0, t0);
  std::vector<double> h0 = {1.0, 1.0}, tau0 = {1.0, 1.0};
  auto step0 = shadowheart_step(x, plan0, h0, tau0, problem, none, ident, 0.0, 5, 0);
  auto g = problem.full_grad(x);
  CHECK(step0.g[0] == g[0]);  // bitwise
  CHECK(step0.g[1] == g[1]);
}

TEST_CASE("aggregation step is unbiased under compression and noise") {
  const int d = 8;
  QuadraticProblem problem(d);
  NoiseModel noise{NoiseKind::AdditiveGaussian, 1.0, 0.2};
  EquilibriumQuery q;
  q.omega = 3.0;  // Rand-2 on d = 8
  q.noise_ratio = 5.0;
  q.workers = {{0.7, 0.4}, {1.3, 0.9}, {0.2, 1.1}};
  double t = equilibrium_time_value(q);
  auto plan = plan_iteration(q, t);
  std::vector<double> h, tau;
  for (auto& w : q.workers) {
    h.push_back(w.h);
    tau.push_back(w.tau);
  }
  CompressorSpec spec{CompressorKind::RandK, 2, d};
  auto x = random_point(d, 13);
  auto clean = problem.full_grad(x);

  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  const int N = 120000;
  for (int i = 0; i < N; ++i) {
    auto step = shadowheart_step(x, plan, h, tau, problem, noise, spec, 0.0, 77,
                                 static_cast<std::uint64_t>(i));
    for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += step.g[static_cast<std::size_t>(j)] / N;
  }
  for (int j = 0; j < d; ++j)
    CHECK(std::abs(mean[static_cast<std::size_t>(j)] - clean[static_cast<std::size_t>(j)]) < 0.02);
}

TEST_CASE("streaming step stops after four gradients in the canonical case") {
  // One worker, identity compressor (omega = 0), noise_ratio = 1: the stop
  // condition value is 1/l, which first reaches 1/4 at l = 4.
  QuadraticProblem problem(3);
  NoiseModel none;
  CompressorSpec ident{CompressorKind::Identity, 0, 3};
  std::vector<double> h = {1.0}, tau = {0.4};
  auto x = random_point(3, 9);
  auto res = adaptive_step(x, h, tau, problem, none, ident, 0.0, 1.0, 0.0, 21, 0);
  REQUIRE(res.levels.size() == 1);
  CHECK(res.levels[0] == 4);
  CHECK(res.stop_value == doctest::Approx(0.25));
  CHECK(res.prev_stop_value > 0.25);
  // Without simulated noise the estimator collapses to the exact gradient.
  auto g = problem.full_grad(x);
  for (int j = 0; j < 3; ++j)
    CHECK(res.g[static_cast<std::size_t>(j)] == doctest::Approx(g[static_cast<std::size_t>(j)]).epsilon(1e-12));
}

TEST_CASE("streaming step sends at least one message per gradient and tracks time") {
  QuadraticProblem problem(4);
  NoiseModel none;
  CompressorSpec ident{CompressorKind::Identity, 0, 4};
  // tau > h: one message per gradient, each round costs tau.
  std::vector<double> h = {0.3}, tau = {1.0};
  auto x = random_point(4, 2);
  auto res = adaptive_step(x, h, tau, problem, none, ident, 0.0, 1.0, 0.0, 4, 0);
  CHECK(res.levels[0] == 4);
  CHECK(res.messages == 4);
  // First message lands at h + tau, then one per tau.
  CHECK(res.elapsed == doctest::Approx(0.3 + 4 * 1.0));

  // h > tau: ceil(h / tau) messages per level.
  std::vector<double> h2 = {1.0}, tau2 = {0.4};
  auto res2 = adaptive_step(x, h2, tau2, problem, none, ident, 0.0, 1.0, 0.0, 4, 0);
  CHECK(res2.levels[0] == 4);
  CHECK(res2.messages == 1 + 3 * 3);  // stops on the first message of level 4
}

TEST_CASE("streaming step zero-variance config stops immediately") {
  QuadraticProblem problem(2);
  NoiseModel none;
  CompressorSpec ident{CompressorKind::Identity, 0, 2};
  std::vector<double> h = {0.5, 1.0}, tau = {0.5, 0.7};
  auto x = random_point(2, 6);
  auto res = adaptive_step(x, h, tau, problem, none, ident, 0.0, 0.0, 0.0, 1, 0);
  CHECK(res.messages == 1);
  CHECK(res.stop_value == 0.0);
}

TEST_CASE("streaming step is unbiased with compression and noise") {
  const int d = 6;
  QuadraticProblem problem(d);
  NoiseModel noise{NoiseKind::AdditiveGaussian, 1.0, 0.3};
  CompressorSpec spec{CompressorKind::RandK, 2, d};
  std::vector<double> h = {0.8, 1.7}, tau = {0.5, 0.3};
  auto x = random_point(d, 31);
  auto clean = problem.full_grad(x);
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  const int N = 60000;
  for (int i = 0; i < N; ++i) {
    auto res = adaptive_step(x, h, tau, problem, noise, spec, omega_of(spec), 2.0, 0.0, 55,
                             static_cast<std::uint64_t>(i));
    for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += res.g[static_cast<std::size_t>(j)] / N;
  }
  for (int j = 0; j < d; ++j)
    CHECK(std::abs(mean[static_cast<std::size_t>(j)] - clean[static_cast<std::size_t>(j)]) < 0.04);
}

TEST_CASE("server broadcast step keeps the model copy recursion exact") {
  const int d = 5;
  QuadraticProblem problem(d);
  NoiseModel none;
  CompressorSpec ident{CompressorKind::Identity, 0, d};
  CompressorSpec top2{CompressorKind::TopK, 2, d};
  EquilibriumQuery q;
  q.omega = 0.0;
  q.noise_ratio = 0.0;
  q.workers = {{1.0, 1.0}};
  auto plan = plan_iteration(q, equilibrium_time_value(q));
  std::vector<double> h = {1.0}, tau = {1.0};
  auto x = random_point(d, 40);
  auto w = random_point(d, 41);

  SUBCASE("identity broadcast hands over the iterate") {
    auto res = bidirectional_step(x, w, plan, h, tau, problem, none, ident, ident, 0.1, 0.25,
                                  3, 0);
    for (int j = 0; j < d; ++j) {
      CHECK(res.w_next[static_cast<std::size_t>(j)] == res.x_next[static_cast<std::size_t>(j)]);
      // w_next - w equals the broadcast content bitwise.
      CHECK(res.w_next[static_cast<std::size_t>(j)] - w[static_cast<std::size_t>(j)] ==
            res.p.values[static_cast<std::size_t>(j)]);
    }
    CHECK(res.elapsed == doctest::Approx(0.25 + 2.0));
  }

  SUBCASE("sparse broadcast applies exactly the sent coordinates") {
    auto res = bidirectional_step(x, w, plan, h, tau, problem, none, ident, top2, 0.1, 0.0,
                                  3, 0);
    std::vector<double> reconstructed = w;
    res.p.add_to(reconstructed, 1.0);
    for (int j = 0; j < d; ++j)
      CHECK(res.w_next[static_cast<std::size_t>(j)] == reconstructed[static_cast<std::size_t>(j)]);
    CHECK(res.p.indices.size() == 2);
  }
}

TEST_CASE("synchronous baselines: timing") {
  QuadraticProblem problem(3);
  NoiseModel none;
  ScheduleDraw times;
  times.h = {1.0, 2.0};
  times.tau_dot = {0.5, 0.1};
  auto x = random_point(3, 50);

  auto mb = minibatch_step(x, times, problem, none, 1, 0);
  CHECK(mb.elapsed == doctest::Approx(std::max(1.0 + 3 * 0.5, 2.0 + 3 * 0.1)));
  auto g = problem.full_grad(x);
  for (int j = 0; j < 3; ++j)
    CHECK(mb.g[static_cast<std::size_t>(j)] == doctest::Approx(g[static_cast<std::size_t>(j)]));

  CompressorSpec rand1{CompressorKind::RandK, 1, 3};
  auto qs = qsgd_step(x, times, problem, none, rand1, 1, 0);
  CHECK(qs.elapsed == doctest::Approx(std::max(1.0 + 0.5, 2.0 + 0.1)));
}

TEST_CASE("qsgd step is unbiased") {
  const int d = 4;
  QuadraticProblem problem(d);
  NoiseModel noise{NoiseKind::AdditiveGaussian, 1.0, 0.1};
  ScheduleDraw times;
  times.h = {1.0, 1.0, 1.0};
  times.tau_dot = {0.1, 0.1, 0.1};
  CompressorSpec rand1{CompressorKind::RandK, 1, d};
  auto x = random_point(d, 51);
  auto clean = problem.full_grad(x);
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  const int N = 150000;
  for (int i = 0; i < N; ++i) {
    auto step = qsgd_step(x, times, problem, noise, rand1, 9, static_cast<std::uint64_t>(i));
    for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += step.g[static_cast<std::size_t>(j)] / N;
  }
  for (int j = 0; j < d; ++j)
    CHECK(std::abs(mean[static_cast<std::size_t>(j)] - clean[static_cast<std::size_t>(j)]) < 0.02);
}

TEST_CASE("asynchronous batch collection orders arrivals") {
  QuadraticProblem problem(2);
  NoiseModel none;
  ScheduleDraw times;
  times.h = {1.0, 2.0};
  times.tau_dot = {0.0, 0.0};
  auto x = random_point(2, 60);
  // Arrivals: worker 0 at 1, 2, 3, ...; worker 1 at 2, 4, ...
  // First three: 1, 2, 2; the batch completes at time 2.
  auto step = rennala_step(x, times, problem, none, 3, 1, 0);
  CHECK(step.elapsed == doctest::Approx(2.0));
  auto g = problem.full_grad(x);
  for (int j = 0; j < 2; ++j)
    CHECK(step.g[static_cast<std::size_t>(j)] == doctest::Approx(g[static_cast<std::size_t>(j)]));
}

TEST_CASE("single-worker run solves a 1-d quadratic in two steps") {
  QuadraticProblem problem(1);
  NoiseModel none;
  EngineConfig config;
  config.method = Method::SgdOne;
  config.gamma = 1.0 / problem.smoothness();
  config.max_iterations = 2;
  config.grad_norm_threshold = 1e-20;
  auto schedule = TimeSchedule::fixed({2.0, 1.0}, {0.0, 0.0});
  std::vector<double> x0 = {5.0};
  auto trace = run(config, problem, none, schedule, x0, 7);
  CHECK(trace.records.back().gnorm2 <= 1e-20);
  CHECK(trace.stop_reason == "grad_norm_threshold");
  CHECK(trace.records.size() <= 3);  // init plus at most two steps
  // The fastest worker (h = 1) does the work.
  CHECK(trace.records[1].t == doctest::Approx(1.0));
}

TEST_CASE("delayed-gradient run on one worker matches plain descent") {
  QuadraticProblem problem(4);
  NoiseModel none;
  EngineConfig config;
  config.method = Method::Async;
  config.gamma = 0.8 / problem.smoothness();
  config.max_iterations = 20;
  auto schedule = TimeSchedule::fixed({1.0}, {0.25});
  auto x0 = random_point(4, 70);
  auto trace = run(config, problem, none, schedule, x0, 3);
  REQUIRE(trace.records.size() == 21);

  std::vector<double> x = x0;
  for (int k = 1; k <= 20; ++k) {
    auto g = problem.full_grad(x);
    for (int j = 0; j < 4; ++j) x[static_cast<std::size_t>(j)] -= config.gamma * g[static_cast<std::size_t>(j)];
    CHECK(trace.records[static_cast<std::size_t>(k)].f == doctest::Approx(problem.value(x)));
    // Arrival k happens at k * (h + d tau_dot) = 2k.
    CHECK(trace.records[static_cast<std::size_t>(k)].t == doctest::Approx(2.0 * k));
  }
}

TEST_CASE("delayed gradients are applied at stale points") {
  QuadraticProblem problem(1);
  NoiseModel none;
  EngineConfig config;
  config.method = Method::Async;
  config.gamma = 0.5;
  config.max_iterations = 3;
  auto schedule = TimeSchedule::fixed({1.0, 1.5}, {0.0, 0.0});
  std::vector<double> x0 = {4.0};
  auto trace = run(config, problem, none, schedule, x0, 1);
  // d = 1: grad(x) = x/2 - (-1/4) ... actually A = 1/2, b = -1/4: grad = x/2 + 1/4.
  // Worker 0 arrives at t=1 with grad(4) = 2.25: x = 4 - 1.125 = 2.875.
  // Worker 1 arrives at t=1.5 with grad(4) = 2.25 (stale): x = 1.75.
  // Worker 0 arrives at t=2 with grad(2.875) = 1.6875: x = 0.90625.
  CHECK(trace.records[1].t == doctest::Approx(1.0));
  CHECK(trace.records[2].t == doctest::Approx(1.5));
  CHECK(trace.records[3].t == doctest::Approx(2.0));
  double f_expected = problem.value(std::vector<double>{0.90625});
  CHECK(trace.records[3].f == doctest::Approx(f_expected));
}

TEST_CASE("full runs are deterministic in the seed") {
  QuadraticProblem problem(6);
  NoiseModel noise{NoiseKind::AdditiveGaussian, 1.0, 0.2};
  for (Method method : {Method::Shadowheart, Method::AdaptiveShadowheart, Method::Minibatch,
                        Method::Qsgd, Method::Async, Method::Rennala, Method::SgdOne,
                        Method::BidirectionalShadowheart}) {
    EngineConfig config;
    config.method = method;
    config.gamma = 0.2;
    config.noise_ratio = 2.0;
    config.compressor = {CompressorKind::RandK, 2, 6};
    config.server_compressor = {CompressorKind::TopK, 3, 6};
    config.rennala_batch = 4;
    config.max_iterations = 8;
    auto schedule = TimeSchedule::fixed({0.5, 1.2, 0.8}, {0.1, 0.3, 0.2});
    auto x0 = random_point(6, 80);
    auto t1 = run(config, problem, noise, schedule, x0, 42);
    auto t2 = run(config, problem, noise, schedule, x0, 42);
    REQUIRE(t1.records.size() == t2.records.size());
    for (std::size_t i = 0; i < t1.records.size(); ++i) {
      CHECK(t1.records[i].t == t2.records[i].t);
      CHECK(t1.records[i].f == t2.records[i].f);
      CHECK(t1.records[i].gnorm2 == t2.records[i].gnorm2);
    }
    auto t3 = run(config, problem, noise, schedule, x0, 43);
    bool differs = false;
    for (std::size_t i = 0; i < std::min(t1.records.size(), t3.records.size()); ++i)
      if (t1.records[i].f != t3.records[i].f) differs = true;
    CHECK(differs);
  }
}

TEST_CASE("per-iteration schedules consume one draw per worker and iteration") {
  ScheduleGenerator uni;  // uniform(0.1, 1)
  auto schedule = TimeSchedule::from_generators(3, 10, uni, uni, true);
  CHECK(schedule.varies_per_iteration());
  auto d0 = schedule.draw(5, 0);
  auto d0b = schedule.draw(5, 0);
  auto d1 = schedule.draw(5, 1);
  for (int i = 0; i < 3; ++i) {
    CHECK(d0.h[static_cast<std::size_t>(i)] == d0b.h[static_cast<std::size_t>(i)]);
    CHECK(d0.h[static_cast<std::size_t>(i)] != d1.h[static_cast<std::size_t>(i)]);
    CHECK(d0.h[static_cast<std::size_t>(i)] >= 0.1);
    CHECK(d0.h[static_cast<std::size_t>(i)] <= 1.0);
  }
  // Static mode never varies.
  auto fixed = TimeSchedule::fixed({1.0}, {1.0});
  CHECK(!fixed.varies_per_iteration());
  auto frozen = TimeSchedule::from_generators(3, 10, uni, uni, false);
  CHECK(!frozen.varies_per_iteration());
  auto f0 = frozen.draw(5, 0);
  auto f9 = frozen.draw(5, 9);
  CHECK(f0.h == f9.h);
}

TEST_CASE("runs converge on a small noisy problem") {
  QuadraticProblem problem(10);
  NoiseModel noise{NoiseKind::AdditiveGaussian, 1.0, 0.05};
  auto schedule = TimeSchedule::fixed({0.5, 1.0, 0.7, 0.3}, {0.1, 0.05, 0.2, 0.15});
  std::vector<double> x0(10, 1.0);
  double initial;
  {
    QuadraticProblem p0(10);
    initial = grad_norm_sq(p0.full_grad(x0));
  }
  for (Method method : {Method::Shadowheart, Method::AdaptiveShadowheart, Method::Minibatch,
                        Method::Rennala, Method::BidirectionalShadowheart}) {
    EngineConfig config;
    config.method = method;
    config.gamma = 0.5 / problem.smoothness();
    config.noise_ratio = 10.0;
    config.compressor = {CompressorKind::RandK, 1, 10};
    config.server_compressor = {CompressorKind::Identity, 0, 10};
    config.rennala_batch = 8;
    config.max_iterations = 400;
    auto trace = run(config, problem, noise, schedule, x0, 9);
    double best = kInf;
    for (const auto& r : trace.records) best = std::min(best, r.gnorm2);
    CHECK(best < 0.05 * initial);
    // Clock is strictly increasing.
    for (std::size_t i = 1; i < trace.records.size(); ++i)
      CHECK(trace.records[i].t > trace.records[i - 1].t);
  }
}

TEST_CASE("stop criteria fire with the right reason") {
  QuadraticProblem problem(3);
  NoiseModel none;
  auto schedule = TimeSchedule::fixed({1.0}, {0.1});
  std::vector<double> x0 = {1.0, 1.0, 1.0};

  EngineConfig config;
  config.method = Method::Minibatch;
  config.gamma = 0.1;

  config.max_iterations = 5;
  auto t1 = run(config, problem, none, schedule, x0, 1);
  CHECK(t1.stop_reason == "max_iterations");
  CHECK(t1.records.size() == 6);

  config.max_iterations = 1000000;
  config.time_budget = 6.0;
  auto t2 = run(config, problem, none, schedule, x0, 1);
  CHECK(t2.stop_reason == "time_budget");
  CHECK(t2.records.back().t >= 6.0);
  CHECK(t2.records.back().t <= 6.0 + 1.3 + 1e-9);

  config.time_budget = kInf;
  config.grad_norm_threshold = 1e-6;
  auto t3 = run(config, problem, none, schedule, x0, 1);
  CHECK(t3.stop_reason == "grad_norm_threshold");
  CHECK(t3.records.back().gnorm2 <= 1e-6);
  CHECK(t3.time_to_threshold(1e-6) == doctest::Approx(t3.records.back().t));
}

TEST_CASE("config validation rejects bad combinations") {
  QuadraticProblem problem(4);
  NoiseModel none;
  auto schedule = TimeSchedule::fixed({1.0}, {0.1});
  std::vector<double> x0(4, 1.0);

  EngineConfig config;
  config.method = Method::Shadowheart;
  config.gamma = 0.1;
  config.compressor = {CompressorKind::TopK, 2, 4};
  CHECK_THROWS_AS(run(config, problem, none, schedule, x0, 1), std::invalid_argument);

  config.compressor = {CompressorKind::RandK, 2, 5};  // wrong dimension
  CHECK_THROWS_AS(run(config, problem, none, schedule, x0, 1), std::invalid_argument);

  config.compressor = {CompressorKind::RandK, 2, 4};
  config.gamma = 0.0;
  CHECK_THROWS_AS(run(config, problem, none, schedule, x0, 1), std::invalid_argument);

  config.gamma = 0.1;
  config.method = Method::BidirectionalShadowheart;
  config.server_compressor = {CompressorKind::RandK, 2, 4};
  CHECK_THROWS_AS(run(config, problem, none, schedule, x0, 1), std::invalid_argument);

  config.method = Method::Rennala;
  config.rennala_batch = 0;
  CHECK_THROWS_AS(run(config, problem, none, schedule, x0, 1), std::invalid_argument);
}
