// Command-line front end: equilibrium solves, single simulations, closed-form
// method comparisons, stepsize sweeps, and experiment suites.
//
// Exit codes: 0 success, 2 malformed configuration, 3 numerical failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <shadowheart/harness.hpp>

using namespace shadowheart;
using nlohmann::json;

namespace {

json load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open input file: " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

int cmd_equilibrium(const std::string& input, bool json_only) {
  json j = load_json(input);
  detail::expect_keys(j, {"omega", "noise_ratio", "workers"}, "input");
  EquilibriumQuery query;
  query.omega = detail::as_number(detail::require(j, "omega", "input"), "input.omega");
  query.noise_ratio =
      detail::as_number(detail::require(j, "noise_ratio", "input"), "input.noise_ratio");
  for (const auto& w : detail::require(j, "workers", "input")) {
    detail::expect_keys(w, {"h", "tau"}, "input.workers");
    query.workers.push_back(
        {detail::as_number(detail::require(w, "h", "input.workers"), "input.workers.h"),
         detail::as_number(detail::require(w, "tau", "input.workers"), "input.workers.tau")});
  }
  try {
    query.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  auto result = equilibrium_time(query);
  auto plan = plan_iteration(query, result.t_star);

  json out;
  out["t_star"] = result.t_star;
  out["j_star"] = result.j_star;
  out["plan"]["b"] = plan.b;
  out["plan"]["m"] = plan.m;
  out["plan"]["w"] = plan.w;
  out["plan"]["active"] = plan.active;
  out["variance_budget"] = check_variance_budget(query, plan);

  if (!json_only) {
    std::printf("t* = %s  (prefix j* = %d of %d workers)\n", detail::fmt(result.t_star).c_str(),
                result.j_star, static_cast<int>(query.workers.size()));
    std::printf("%8s %12s %12s %12s %12s %12s %7s\n", "worker", "h", "tau", "b", "m", "w",
                "active");
    for (std::size_t i = 0; i < query.workers.size(); ++i) {
      bool active = std::find(plan.active.begin(), plan.active.end(), static_cast<int>(i)) !=
                    plan.active.end();
      std::printf("%8zu %12g %12g %12lld %12lld %12g %7s\n", i, query.workers[i].h,
                  query.workers[i].tau, plan.b[i], plan.m[i], plan.w[i], active ? "yes" : "no");
    }
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_simulate(const std::string& config_path, std::int64_t seed_override,
                 const std::string& out_override) {
  auto setup = parse_run_config(load_json(config_path));
  if (seed_override >= 0) setup.seed = static_cast<std::uint64_t>(seed_override);
  if (!out_override.empty()) setup.out = out_override;

  auto trace = run_setup(setup);
  if (!setup.out.empty()) write_file(setup.out, trace_to_csv(trace));

  const auto& last = trace.records.back();
  json summary;
  summary["stop_reason"] = trace.stop_reason;
  summary["iterations"] = last.iteration;
  summary["t_seconds"] = last.t;
  summary["final_f"] = last.f;
  summary["final_grad_norm_sq"] = last.gnorm2;
  if (setup.config.grad_norm_threshold > 0)
    summary["time_to_threshold"] = trace.time_to_threshold(setup.config.grad_norm_threshold);
  if (!setup.out.empty()) summary["trace"] = setup.out;
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_compare(const std::string& input, bool table1, int seeds) {
  if (table1) {
    if (seeds < 1) throw ConfigError("compare: --seeds must be >= 1");
    auto table = speedup_factors(1, seeds);
    std::printf("%12s %12s %12s %12s\n", "sigma^2/eps", "vs minibatch", "vs qsgd", "vs rennala");
    for (std::size_t r = 0; r < table.noise_ratios.size(); ++r)
      std::printf("%12g %12.3g %12.3g %12.3g\n", table.noise_ratios[r],
                  table.minibatch_factor[r], table.qsgd_factor[r], table.rennala_factor[r]);
    return 0;
  }

  json j = load_json(input);
  detail::expect_keys(
      j, {"d", "h", "tau_dot", "noise_ratio", "ld_eps", "alpha", "tau_serv", "ratios"}, "input");
  ComplexityInputs in;
  in.d = detail::as_number(detail::require(j, "d", "input"), "input.d");
  for (const auto& v : detail::require(j, "h", "input"))
    in.h.push_back(detail::as_number(v, "input.h"));
  for (const auto& v : detail::require(j, "tau_dot", "input"))
    in.tau_dot.push_back(detail::as_number(v, "input.tau_dot"));
  in.noise_ratio =
      detail::as_number(detail::require(j, "noise_ratio", "input"), "input.noise_ratio");
  if (j.contains("ld_eps")) in.ld_eps = detail::as_number(j.at("ld_eps"), "input.ld_eps");
  try {
    in.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  json out;
  out["t_minibatch"] = t_minibatch(in);
  out["t_qsgd"] = t_qsgd(in);
  out["t_rennala_lower"] = t_rennala_lower(in);
  out["t_shadowheart"] = t_shadowheart(in);
  if (in.noise_ratio >= 1.0) out["t_sgd_one"] = t_sgd_one(in);
  if (j.contains("alpha")) {
    double alpha = detail::as_number(j.at("alpha"), "input.alpha");
    double tau_serv =
        j.contains("tau_serv") ? detail::as_number(j.at("tau_serv"), "input.tau_serv") : 0.0;
    out["t_bidirectional"] = t_bidirectional(in, alpha, tau_serv);
  }
  if (j.contains("ratios")) {
    std::vector<double> ratios;
    for (const auto& v : j.at("ratios")) ratios.push_back(detail::as_number(v, "input.ratios"));
    out["t_adaptive"] = t_adaptive(in, ratios);
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& parameter,
              const std::vector<double>& grid, const std::vector<std::uint64_t>& seeds) {
  auto setup = parse_run_config(load_json(config_path));
  SweepSpec spec;
  spec.parameter = parameter;
  spec.grid = grid;
  auto result = sweep(setup, spec, seeds);
  json out;
  out["parameter"] = parameter;
  out["grid"] = result.grid;
  out["median_seconds_to_threshold"] = result.median_metric;
  out["best_value"] = result.best_value;
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_suite(const std::string& name, const SuiteOptions& options) {
  auto summaries = run_suite(name, options);
  std::printf("%-14s %6s %20s %20s\n", "method", "seed", "time_to_threshold", "stop_reason");
  for (const auto& s : summaries)
    std::printf("%-14s %6llu %20s %20s\n", s.method.c_str(),
                static_cast<unsigned long long>(s.seed), detail::fmt(s.time_to_threshold).c_str(),
                s.stop_reason.c_str());
  std::printf("wrote %zu trace file(s) under %s\n", summaries.size(), options.outdir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"asynchronous SGD simulator and complexity calculator"};
  app.require_subcommand(1);

  std::string eq_input;
  bool eq_json = false;
  auto* eq = app.add_subcommand("equilibrium", "solve for the equilibrium time and plan");
  eq->add_option("--input", eq_input, "JSON file with omega, noise_ratio, workers")->required();
  eq->add_flag("--json", eq_json, "print only the JSON result");

  std::string sim_config, sim_out;
  std::int64_t sim_seed = -1;
  auto* sim = app.add_subcommand("simulate", "run one method and emit a trace CSV");
  sim->add_option("--config", sim_config, "run configuration JSON")->required();
  sim->add_option("--seed", sim_seed, "override the config seed");
  sim->add_option("--out", sim_out, "trace CSV path (overrides the config)");

  std::string cmp_input;
  bool cmp_table1 = false;
  int cmp_seeds = 10;
  auto* cmp = app.add_subcommand("compare", "closed-form time complexities for one pool");
  cmp->add_option("--inputs", cmp_input, "JSON file with d, h, tau_dot, noise_ratio");
  cmp->add_flag("--table1", cmp_table1, "print the speedup-factor table instead");
  cmp->add_option("--seeds", cmp_seeds, "seeds to average for --table1");

  std::string sw_config, sw_param;
  std::vector<double> sw_grid;
  std::vector<std::uint64_t> sw_seeds = {1, 2, 3, 4, 5};
  auto* sw = app.add_subcommand("sweep", "tune one parameter by median time to threshold");
  sw->add_option("--config", sw_config, "run configuration JSON")->required();
  sw->add_option("--param", sw_param, "gamma | noise_ratio | rennala_batch")->required();
  sw->add_option("--grid", sw_grid, "candidate values")->required()->delimiter(',');
  sw->add_option("--seeds", sw_seeds, "seeds for the median")->delimiter(',');

  std::string suite_name;
  SuiteOptions suite_opts;
  auto* su = app.add_subcommand("suite", "run a named experiment suite");
  su->add_option("name", suite_name, "additive-defaults | multiplicative-medium | table1")
      ->required();
  su->add_option("--seeds", suite_opts.seeds, "seeds to run")->delimiter(',');
  su->add_option("--out", suite_opts.outdir, "output directory");
  su->add_flag("--paper-scale", suite_opts.paper_scale, "use the full-scale worker count");
  su->add_option("--n", suite_opts.n_override, "override the worker count");
  su->add_option("--d", suite_opts.d_override, "override the problem dimension");
  su->add_option("--max-iterations", suite_opts.max_iterations, "override the iteration cap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (eq->parsed()) return cmd_equilibrium(eq_input, eq_json);
    if (sim->parsed()) return cmd_simulate(sim_config, sim_seed, sim_out);
    if (cmp->parsed()) {
      if (!cmp_table1 && cmp_input.empty())
        throw ConfigError("compare: either --inputs or --table1 is required");
      return cmd_compare(cmp_input, cmp_table1, cmp_seeds);
    }
    if (sw->parsed()) return cmd_sweep(sw_config, sw_param, sw_grid, sw_seeds);
    if (su->parsed()) return cmd_suite(suite_name, suite_opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
