#include "abcd/commands.hpp"

#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <thread>

#include <pthread.h>
#include <unistd.h>

#include "abcd/config.hpp"
#include "abcd/numeric.hpp"
#include "abcd/service.hpp"
#include "abcd/version.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include <httplib.h>
#include <spdlog/spdlog.h>

namespace abcd {
namespace {

namespace fs = std::filesystem;

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  out.close();
  if (!out) throw std::runtime_error("failed to write " + path.string());
}

std::string csv_number(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string summary_csv(const EpisodeResult& result) {
  std::string csv = "t,target,value,eig,entropy,p_true,expected_shd\n";
  auto row = [&](int t, std::optional<int> target, std::optional<double> value, std::optional<double> eig,
                 double entropy, std::optional<double> p_true, std::optional<double> shd) {
    csv += std::to_string(t) + "," + (target ? std::to_string(*target) : std::string()) + "," + csv_number(value) +
           "," + csv_number(eig) + "," + format_double(entropy) + "," + csv_number(p_true) + "," + csv_number(shd) +
           "\n";
  };
  std::optional<double> p0, shd0;
  if (result.initial_metrics) {
    p0 = result.initial_metrics->p_true;
    shd0 = result.initial_metrics->expected_shd;
  }
  row(0, std::nullopt, std::nullopt, std::nullopt, result.initial_entropy, p0, shd0);
  for (const StepRecord& r : result.steps) {
    row(r.t, r.chosen.target, r.chosen.value, r.eig, r.entropy, r.p_true, r.expected_shd);
  }
  return csv;
}

EpisodeConfig resolve_config(const SimulateOptions& options) {
  EpisodeConfig cfg = load_episode_config(options.config);
  if (options.seed) cfg.seed = *options.seed;
  if (options.strategy) {
    try {
      make_strategy(*options.strategy);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), std::nullopt, "strategy");
    }
    cfg.strategy = *options.strategy;
  }
  if (options.steps) {
    if (*options.steps < 1) throw ConfigError("--steps must be >= 1", std::nullopt, "max_steps");
    cfg.max_steps = *options.steps;
  }
  if (options.mc_samples) {
    if (*options.mc_samples < 1) throw ConfigError("--mc-samples must be >= 1", std::nullopt, "design.mc_samples");
    cfg.design.mc_samples = *options.mc_samples;
  }
  if (options.beta) {
    if (!(*options.beta >= 0.0)) throw ConfigError("--beta must be >= 0", std::nullopt, "design.beta");
    cfg.design.beta = *options.beta;
  }
  if (options.bo_budget) {
    if (*options.bo_budget < 3) throw ConfigError("--bo-budget must be >= 3", std::nullopt, "design.bo_budget");
    cfg.design.bo_budget = *options.bo_budget;
  }
  if (!cfg.scm) throw ConfigError(options.config.string() + ": simulate requires an \"scm\" section", std::nullopt, "scm");
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), std::nullopt, "");
  }
  return cfg;
}

}  // namespace

int cmd_simulate(const SimulateOptions& options, std::ostream& out, std::ostream& err) {
  EpisodeConfig cfg;
  try {
    cfg = resolve_config(options);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what();
    if (!e.field().empty()) err << " (field: " << e.field() << ")";
    err << '\n';
    return kExitUsage;
  }

  const fs::path target = options.out;
  if (fs::exists(target) && !(fs::is_directory(target) && fs::exists(target / "manifest.json"))) {
    err << "output path " << target << " exists and is not a previous run directory\n";
    return kExitUsage;
  }
  fs::path staging = target;
  staging += ".tmp-" + std::to_string(::getpid());
  try {
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::remove_all(staging);
    fs::create_directories(staging);

    const Json manifest{{"tool_version", kToolVersion},
                        {"timestamp", utc_timestamp()},
                        {"config_path", options.config.string()},
                        {"output_dir", target.string()},
                        {"episode", to_json(cfg)}};
    write_file(staging / "manifest.json", manifest.dump(2) + "\n");

    const EpisodeResult result = run_episode(cfg);

    std::string trace;
    std::string observational;
    Json diagnostics = Json::array();
    for (const StepRecord& r : result.steps) {
      trace += to_json(r).dump() + "\n";
      diagnostics.push_back(Json{{"t", r.t}, {"evaluations", to_json(r.diagnostics)}});
    }
    for (const Sample& s : result.observational) observational += to_json(s).dump() + "\n";
    write_file(staging / "trace.jsonl", trace);
    write_file(staging / "summary.csv", summary_csv(result));
    write_file(staging / "diagnostics.json", diagnostics.dump(2) + "\n");
    write_file(staging / "observational.jsonl", observational);

    fs::remove_all(target);
    fs::rename(staging, target);

    const auto& last = result.steps.empty() ? std::vector<double>(result.initial_posterior) : result.steps.back().posterior;
    out << "steps: " << result.steps.size() << "\n";
    if (!last.empty()) {
      const auto best = std::max_element(last.begin(), last.end()) - last.begin();
      out << "map graph: " << enumerate_dags(cfg.scm->num_nodes())[static_cast<std::size_t>(best)].to_string()
          << " (p=" << last[static_cast<std::size_t>(best)] << ")\n";
    }
    out << "output: " << target.string() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    err << "simulation failed: " << e.what() << '\n';
    return kExitFailure;
  }
}

int cmd_enumerate(int d, bool list, std::ostream& out, std::ostream& err) {
  if (d < 1 || d > kMaxEnumerableNodes) {
    err << "--d must lie in [1, " << kMaxEnumerableNodes << "], got " << d << '\n';
    return kExitUsage;
  }
  const std::vector<Dag> dags = enumerate_dags(d);
  out << dags.size() << '\n';
  if (list) {
    for (const Dag& g : dags) out << to_json(g).dump() << '\n';
  }
  return kExitOk;
}

int cmd_serve(const ServeOptions& options, std::ostream& err) {
  if (options.state_dir) {
    try {
      fs::create_directories(*options.state_dir);
      const fs::path probe = *options.state_dir / (".probe-" + std::to_string(::getpid()));
      write_file(probe, "ok");
      fs::remove(probe);
    } catch (const std::exception& e) {
      err << "state directory " << *options.state_dir << " is not writable: " << e.what() << '\n';
      return kExitFailure;
    }
  }

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  SessionManager manager(options.state_dir);
  try {
    manager.load();
  } catch (const std::exception& e) {
    err << "failed to restore sessions: " << e.what() << '\n';
    return kExitFailure;
  }

  httplib::Server server;
  register_routes(server, manager);
  if (!server.bind_to_port(options.host, options.port)) {
    err << "cannot bind " << options.host << ":" << options.port << '\n';
    return kExitFailure;
  }

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    spdlog::info("received signal {}, shutting down", sig);
    server.stop();
  });
  spdlog::info("listening on {}:{}", options.host, options.port);
  const bool ok = server.listen_after_bind();
  if (waiter.joinable()) {
    // listen returned without a signal (e.g. socket error): wake the waiter.
    if (server.is_running() || !ok) pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
  }
  spdlog::info("stopped; {} session(s) persisted", manager.session_count());
  return ok ? kExitOk : kExitFailure;
}

}  // namespace abcd
