// Acceptance checks. Run with a criterion number (1-8) or with no argument
// for all of them; prints one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <spdlog/spdlog.h>

#include "abcd/agent.hpp"
#include "abcd/belief.hpp"
#include "abcd/commands.hpp"
#include "abcd/config.hpp"
#include "abcd/dag.hpp"
#include "abcd/design.hpp"
#include "abcd/gp.hpp"
#include "abcd/numeric.hpp"
#include "abcd/service.hpp"
#include "oracles.hpp"

using namespace abcd;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

const std::string kConfigs = std::string(ABCD_SOURCE_DIR) + "/configs/";

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt_seconds(double s) {
  std::ostringstream out;
  out.precision(3);
  out << s << " s";
  return out.str();
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("abcd-acceptance-" + std::to_string(::getpid()) + "-" +
                                        std::to_string(Clock::now().time_since_epoch().count()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Ten alternating-target interventions on the tanh pair from five
// observational samples; success is P(X->Y) > 0.99 after the last one.
Outcome tanh_pair_convergence() {
  const auto start = Clock::now();
  std::string detail;
  int best = 0;
  const auto universe = enumerate_dags(2);
  for (const char* reading : {"tanh_pair_noise_var.json", "tanh_pair_noise_sd.json"}) {
    EpisodeConfig cfg = load_episode_config(kConfigs + reading);
    int successes = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      cfg.seed = seed;
      const EpisodeResult r = run_episode(cfg);
      const auto& final_posterior = r.steps.empty() ? r.initial_posterior : r.steps.back().posterior;
      if (r.steps.size() == 10u && metrics(final_posterior, cfg.scm->graph, universe).p_true > 0.99) ++successes;
    }
    best = std::max(best, successes);
    detail += std::string(reading) + " " + std::to_string(successes) + "/20; ";
  }
  const double elapsed = seconds_since(start);
  detail += fmt_seconds(elapsed);
  return {best >= 16 && elapsed < 120.0, detail};
}

// Interventions until entropy < 0.1 nats; runs that never get there count as
// max_steps + 1.
int interventions_to_confidence(const EpisodeResult& r, int max_steps) {
  if (r.initial_entropy < 0.1) return 0;
  for (const StepRecord& s : r.steps) {
    if (s.entropy < 0.1) return s.t;
  }
  return max_steps + 1;
}

Outcome active_beats_random() {
  const auto start = Clock::now();
  EpisodeConfig cfg = load_episode_config(kConfigs + "chain3.json");
  double sum_bo = 0.0, sum_random = 0.0;
  int wins = 0, losses = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    cfg.strategy = "bo";
    const int bo = interventions_to_confidence(run_episode(cfg), cfg.max_steps);
    cfg.strategy = "random";
    const int random = interventions_to_confidence(run_episode(cfg), cfg.max_steps);
    sum_bo += bo;
    sum_random += random;
    wins += bo < random;
    losses += bo > random;
  }
  // One-sided sign test over non-tied pairs: P(Binomial(n, 1/2) >= wins).
  const int n = wins + losses;
  double p = 0.0;
  for (int k = wins; k <= n; ++k) p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  const double elapsed = seconds_since(start);
  std::ostringstream detail;
  detail << "mean interventions bo " << sum_bo / 20.0 << " vs random " << sum_random / 20.0 << " (censored at "
         << cfg.max_steps + 1 << "); bo wins " << wins << ", random wins " << losses << ", sign test p = " << p << "; "
         << fmt_seconds(elapsed);
  return {sum_bo < sum_random && n > 0 && p < 0.05 && elapsed < 1200.0, detail.str()};
}

Outcome dag_counts() {
  const std::size_t expected[] = {1, 3, 25, 543};
  std::string detail;
  bool ok = true;
  for (int d = 1; d <= 4; ++d) {
    const auto dags = enumerate_dags(d);
    const auto brute = oracle::brute_force_dags(d);
    std::set<std::set<std::pair<int, int>>> mine;
    for (const Dag& g : dags) {
      const auto e = g.edges();
      mine.insert({e.begin(), e.end()});
    }
    const std::set<std::set<std::pair<int, int>>> theirs(brute.begin(), brute.end());
    ok = ok && dags.size() == expected[d - 1] && mine.size() == dags.size() && mine == theirs;
    detail += "d=" + std::to_string(d) + ": " + std::to_string(dags.size()) + " ";
  }
  return {ok, detail + "(brute force agrees: " + (ok ? "yes" : "no") + ")"};
}

Outcome gp_oracles() {
  std::mt19937_64 rng(20240531);
  std::uniform_int_distribution<int> size(1, 12), dim(1, 3);
  std::uniform_real_distribution<double> u(-2.5, 2.5);
  double worst_evidence = 0.0, worst_mean = 0.0, worst_var = 0.0;
  for (int instance = 0; instance < 100; ++instance) {
    const int n = size(rng), p = dim(rng);
    const GpDataset data = oracle::random_dataset(rng, n, p);
    const GpHyperparams h = oracle::random_hyperparams(rng, p);
    worst_evidence = std::max(worst_evidence, std::abs(log_marginal_likelihood(data, h) - oracle::gp_evidence(data, h)));
    Eigen::VectorXd x(p);
    std::vector<double> xs(static_cast<std::size_t>(p));
    for (int c = 0; c < p; ++c) xs[static_cast<std::size_t>(c)] = x[c] = u(rng);
    const GpPrediction mine = predictive(data, h, xs);
    const GpPrediction ref = oracle::partitioned_conditional(data, h, x);
    worst_mean = std::max(worst_mean, std::abs(mine.mean - ref.mean));
    worst_var = std::max(worst_var, std::abs(mine.variance_f - ref.variance_f));
  }
  std::ostringstream detail;
  detail << "max |evidence - dense MVN| = " << worst_evidence << ", max |mean diff| = " << worst_mean
         << ", max |variance diff| = " << worst_var;
  return {worst_evidence <= 1e-10 && worst_mean <= 1e-8 && worst_var <= 1e-8, detail.str()};
}

std::vector<Sample> pair_observations(int n, std::uint64_t seed) {
  const GroundTruthScm scm = tanh_pair_scm(0.1);
  std::vector<Sample> out;
  for (int k = 0; k < n; ++k) out.push_back(sample_truth(scm, InterventionSpec::observational(), derive_seed(seed, k)));
  return out;
}

Outcome eig_consistency() {
  const auto obs = pair_observations(6, 21);
  const BeliefState belief = initialize(obs, {});
  DesignConfig cfg;
  cfg.domains = default_domains(obs);
  cfg.mc_samples = 2000;
  cfg.seed = 5;
  int within = 0;
  double worst_z = 0.0;
  for (int j = 0; j < 2; ++j) {
    for (double x : linspace(cfg.domains[static_cast<std::size_t>(j)], 5)) {
      const EigEstimate mc = mc_expected_info_gain(belief, j, x, cfg);
      const double exact = oracle::eig_quadrature(belief, j, x);
      const double z = std::abs(mc.value - exact) / mc.std_error;
      worst_z = std::max(worst_z, z);
      within += z <= 3.0;
    }
  }
  BeliefOptions restricted;
  restricted.universe = {Dag(2), Dag::from_edges(2, {{1, 0}})};
  const BeliefState flat = initialize(obs, restricted);
  const EigEstimate none = mc_expected_info_gain(flat, 0, 0.3, cfg);
  const double gap = std::abs(none.value - utility(flat.log_posterior()));
  // Every draw is identical here, so the standard error is 0 and the only
  // admissible difference is the rounding of the Monte-Carlo average.
  const bool uninformative = gap <= 3.0 * none.std_error + 1e-12;
  std::ostringstream detail;
  detail << within << "/10 points within 3 SE (max |z| = " << worst_z << "); uninformative case |diff| = " << gap
         << ", SE = " << none.std_error;
  return {within == 10 && uninformative, detail.str()};
}

GroundTruthScm chain_scm() {
  GroundTruthScm scm{Dag::from_edges(3, {{0, 1}, {1, 2}}), {}};
  scm.equations.resize(3);
  scm.equations[1].mechanism = Expression::parse("2 * tanh(p0)");
  scm.equations[1].noise_sd = 0.1;
  scm.equations[2].mechanism = Expression::parse("2 * tanh(p0)");
  scm.equations[2].noise_sd = 0.1;
  return scm;
}

Outcome posterior_invariants() {
  const GroundTruthScm scm = chain_scm();
  std::vector<Sample> obs;
  for (int k = 0; k < 8; ++k) obs.push_back(sample_truth(scm, InterventionSpec::observational(), derive_seed(61, k)));
  BeliefOptions options;
  options.prior = GraphPrior::sparsity();
  BeliefState belief = initialize(obs, options);
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> kind(0, 3);
  std::uniform_real_distribution<double> value(-2.5, 2.5);
  double worst_norm = 0.0, worst_cache = 0.0;
  bool masking = true;
  for (int step = 0; step < 50; ++step) {
    const int k = kind(rng);
    const InterventionSpec spec = k == 3 ? InterventionSpec::observational() : InterventionSpec::perform(k, value(rng));
    const Sample s = sample_truth(scm, spec, derive_seed(62, step));
    BeliefState next = belief.updated(s);
    worst_norm = std::max(worst_norm, std::abs(log_sum_exp(next.log_posterior())));
    for (std::size_t key = 0; key < next.keys().size(); ++key) {
      const ModelKey& mk = next.keys()[key];
      const double scratch = node_log_evidence(mk.node, mk.parents, next.data(), next);
      worst_cache = std::max(worst_cache, std::abs(next.cached_log_evidence(key) - scratch));
      if (spec.targets(mk.node)) {
        const double before = belief.cached_log_evidence(key), after = next.cached_log_evidence(key);
        masking = masking && std::memcmp(&before, &after, sizeof(double)) == 0;
      }
    }
    const BeliefState rebuilt = next.rebuilt_from_scratch();
    for (std::size_t g = 0; g < next.num_graphs(); ++g) {
      worst_cache = std::max(worst_cache, std::abs(next.log_posterior()[g] - rebuilt.log_posterior()[g]));
    }
    belief = std::move(next);
  }
  std::ostringstream detail;
  detail << "50 updates: max |log-sum-exp| = " << worst_norm << ", max |cached - scratch| = " << worst_cache
         << ", masking bitwise: " << (masking ? "yes" : "no");
  return {worst_norm <= 1e-12 && worst_cache <= 1e-8 && masking, detail.str()};
}

Outcome ucb_sanity() {
  struct Problem {
    std::function<double(double)> f;
    Interval domain;
  };
  // Kinked optima: neighbouring grid cells differ by several noise sd, so
  // the noiseless argmax is well defined at grid resolution.
  const std::vector<Problem> problems = {
      {[](double x) { return -60.0 * std::abs(x - 0.6180); }, {0.0, 1.0}},
      {[](double x) { return x < 0.7071 ? -80.0 * (0.7071 - x) : -30.0 * (x - 0.7071); }, {-2.0, 3.0}},
      {[](double x) { return 4.0 * std::sin(2.0 * x) - 40.0 * std::abs(x - 0.3333); }, {-1.0, 2.0}},
  };
  constexpr double kNoiseSd = 0.05;
  std::vector<double> argmax;
  for (const Problem& p : problems) {
    constexpr int kDense = 200001;
    double best_x = p.domain.lo, best = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < kDense; ++k) {
      const double x = p.domain.lo + p.domain.width() * k / (kDense - 1);
      if (p.f(x) > best) {
        best = p.f(x);
        best_x = x;
      }
    }
    argmax.push_back(best_x);
  }
  int good_seeds = 0;
  std::vector<int> per_problem(problems.size(), 0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    int hits = 0;
    for (std::size_t p = 0; p < problems.size(); ++p) {
      DesignConfig cfg;
      cfg.domains = {problems[p].domain};
      cfg.bo_budget = 20;
      cfg.beta = 2.0;
      const auto objective = [&](int, double x) {
        std::mt19937_64 rng(derive_seed(seed, p, seed_key(x)));
        std::normal_distribution<double> noise(0.0, kNoiseSd);
        return EigEstimate{problems[p].f(x) + noise(rng), kNoiseSd};
      };
      const DesignResult r = optimize_objective(1, objective, cfg);
      const bool hit = std::abs(r.x - argmax[p]) <= problems[p].domain.width() / 512.0;
      hits += hit;
      per_problem[p] += hit;
    }
    good_seeds += hits >= 2;
  }
  std::ostringstream detail;
  detail << good_seeds << "/20 seeds with >= 2 of 3 hits (per problem: " << per_problem[0] << ", " << per_problem[1]
         << ", " << per_problem[2] << ")";
  return {good_seeds >= 16, detail.str()};
}

Outcome replay_determinism() {
  TempDir dir;
  bool traces_equal = true;
  for (const char* config : {"chain3.json", "tanh_pair_noise_sd.json"}) {
    std::string first;
    for (int run = 0; run < 2; ++run) {
      SimulateOptions options;
      options.config = kConfigs + config;
      options.out = dir.path / (std::string(config) + std::to_string(run));
      options.steps = 8;
      std::ostringstream out, err;
      if (cmd_simulate(options, out, err) != kExitOk) return {false, "simulate failed: " + err.str()};
      const std::string trace = slurp(options.out / "trace.jsonl");
      if (run == 0) first = trace;
      traces_equal = traces_equal && !trace.empty() && trace == first;
    }
  }

  // A library episode replayed through the session API.
  const EpisodeConfig cfg = load_episode_config(kConfigs + "tanh_pair_noise_sd.json");
  const EpisodeResult episode = run_episode(cfg);
  Json obs = Json::array();
  for (const Sample& s : episode.observational) obs.push_back(to_json(s));
  const Json cfg_json = to_json(cfg);
  const Json body{{"d", 2}, {"observational", obs}, {"seed", cfg.seed}, {"prior", cfg_json["prior"]}, {"fit", cfg_json["fit"]}};
  bool api_equal = true;
  std::string id;
  std::vector<std::vector<double>> live;
  {
    SessionManager manager(dir.path / "state");
    const ApiResult created = manager.create(body, std::nullopt);
    if (created.status != 201) return {false, "create failed: " + created.body.dump()};
    id = created.body["id"].get<std::string>();
    api_equal = same_bits(manager.belief(id)->posterior(), episode.initial_posterior);
    for (const StepRecord& step : episode.steps) {
      manager.recommend(id);
      if (manager.observe(id, to_json(step.outcomes.front())).status != 200) return {false, "observe failed"};
      live.push_back(manager.belief(id)->log_posterior());
      api_equal = api_equal && same_bits(manager.belief(id)->posterior(), step.posterior);
    }
  }
  // Restart from the event log: the rebuilt belief matches the library too.
  SessionManager restored(dir.path / "state");
  restored.load();
  const auto belief = restored.belief(id);
  const bool restored_equal = belief && !live.empty() && same_bits(belief->log_posterior(), live.back()) &&
                              same_bits(belief->posterior(), episode.steps.back().posterior);
  std::ostringstream detail;
  detail << "traces byte-identical: " << (traces_equal ? "yes" : "no") << "; API posteriors bitwise over "
         << episode.steps.size() << " steps: " << (api_equal ? "yes" : "no")
         << "; restart from event log bitwise: " << (restored_equal ? "yes" : "no");
  return {traces_equal && api_equal && restored_equal, detail.str()};
}

struct Criterion {
  const char* name;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {"tanh pair converges with >99% confidence", tanh_pair_convergence},
    {"active design beats random on the 3-node chain", active_beats_random},
    {"DAG counts match brute force", dag_counts},
    {"GP evidence and predictive match dense oracles", gp_oracles},
    {"Monte-Carlo EIG agrees with quadrature", eig_consistency},
    {"posterior invariants under a 50-step fuzz", posterior_invariants},
    {"GP-UCB locates kinked optima", ucb_sanity},
    {"replay determinism", replay_determinism},
};

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::err);
  int only = 0;
  if (argc > 1) only = std::atoi(argv[1]);
  if (only < 0 || only > 8) {
    std::cerr << "usage: acceptance [1-8]\n";
    return 2;
  }
  bool all_pass = true;
  for (int k = 1; k <= 8; ++k) {
    if (only != 0 && k != only) continue;
    Outcome o;
    try {
      o = kCriteria[k - 1].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << " (" << kCriteria[k - 1].name << "): " << o.detail
              << std::endl;
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
