#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/cfg/helpers.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "abcd/commands.hpp"
#include "abcd/version.hpp"

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("abcd");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* level = std::getenv("ABCD_LOG")) spdlog::cfg::helpers::load_levels(level);

  CLI::App app{"Active Bayesian causal discovery"};
  app.set_version_flag("--version", abcd::kToolVersion);
  app.require_subcommand(1);

  abcd::SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Run a simulated episode against a ground-truth SCM");
  simulate->add_option("--config", sim.config, "Episode config (JSON)")->required();
  simulate->add_option("--out", sim.out, "Output run directory")->required();
  simulate->add_option("--seed", sim.seed, "Episode seed");
  simulate->add_option("--strategy", sim.strategy, "bo, random, round_robin or grid_eig");
  simulate->add_option("--steps", sim.steps, "Maximum number of interventions");
  simulate->add_option("--mc-samples", sim.mc_samples, "Monte-Carlo samples per graph");
  simulate->add_option("--beta", sim.beta, "UCB exploration weight");
  simulate->add_option("--bo-budget", sim.bo_budget, "Objective evaluations per target");

  int d = 0;
  bool list = false;
  auto* enumerate = app.add_subcommand("enumerate", "Count (and list) all DAGs over d nodes");
  enumerate->add_option("--d", d, "Number of nodes")->required();
  enumerate->add_flag("--list", list, "Print each graph as JSON");

  abcd::ServeOptions serve_opts;
  std::string state_dir;
  auto* serve = app.add_subcommand("serve", "Start the HTTP session service");
  serve->add_option("--port", serve_opts.port, "TCP port");
  serve->add_option("--host", serve_opts.host, "Bind address");
  serve->add_option("--state-dir", state_dir, "Directory for session event logs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : abcd::kExitUsage;
  }

  if (*simulate) return abcd::cmd_simulate(sim, std::cout, std::cerr);
  if (*enumerate) return abcd::cmd_enumerate(d, list, std::cout, std::cerr);
  if (!state_dir.empty()) serve_opts.state_dir = state_dir;
  return abcd::cmd_serve(serve_opts, std::cerr);
}
