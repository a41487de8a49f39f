#include "abcd/serialization.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace abcd {
namespace {

std::string join(const std::string& parent, const std::string& child) {
  return parent.empty() ? child : parent + "." + child;
}
std::string index(const std::string& parent, std::size_t k) { return parent + "[" + std::to_string(k) + "]"; }

void require_object(const Json& j, const std::string& field) {
  if (!j.is_object()) throw FieldError(field, "expected an object");
}

const Json& require(const Json& j, const char* key, const std::string& field) {
  require_object(j, field);
  auto it = j.find(key);
  if (it == j.end()) throw FieldError(join(field, key), "missing required field");
  return *it;
}

double number(const Json& j, const std::string& field) {
  if (!j.is_number()) throw FieldError(field, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw FieldError(field, "must be finite");
  return v;
}

int integer(const Json& j, const std::string& field) {
  if (!j.is_number_integer()) throw FieldError(field, "expected an integer");
  const auto v = j.get<std::int64_t>();
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw FieldError(field, "integer out of range");
  }
  return static_cast<int>(v);
}

std::uint64_t unsigned64(const Json& j, const std::string& field) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
    throw FieldError(field, "expected a nonnegative integer");
  }
  return j.get<std::uint64_t>();
}

const Json& array(const Json& j, const std::string& field) {
  if (!j.is_array()) throw FieldError(field, "expected an array");
  return j;
}

template <typename Fn>
void optional_field(const Json& j, const char* key, const std::string& field, Fn&& fn) {
  auto it = j.find(key);
  if (it != j.end() && !it->is_null()) fn(*it, join(field, key));
}

Json interval_json(const Interval& iv) { return Json::array({iv.lo, iv.hi}); }

Interval interval_from_json(const Json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 2) throw FieldError(field, "expected [lo, hi]");
  Interval iv{number(j[0], index(field, 0)), number(j[1], index(field, 1))};
  if (iv.lo > iv.hi) throw FieldError(field, "lo must not exceed hi");
  return iv;
}

}  // namespace

Json to_json(const Dag& g) {
  Json edges = Json::array();
  for (auto [p, i] : g.edges()) edges.push_back(Json::array({p, i}));
  return Json{{"d", g.num_nodes()}, {"edges", std::move(edges)}};
}

Dag dag_from_json(const Json& j, const std::string& field) {
  const int d = integer(require(j, "d", field), join(field, "d"));
  if (d < 1 || d > 31) throw FieldError(join(field, "d"), "node count must be in [1, 31]");
  std::vector<std::pair<int, int>> edges;
  const std::string edges_field = join(field, "edges");
  const Json& list = array(require(j, "edges", field), edges_field);
  for (std::size_t k = 0; k < list.size(); ++k) {
    const Json& e = list[k];
    if (!e.is_array() || e.size() != 2) throw FieldError(index(edges_field, k), "expected [from, to]");
    edges.emplace_back(integer(e[0], index(edges_field, k)), integer(e[1], index(edges_field, k)));
  }
  try {
    return Dag::from_edges(d, edges);
  } catch (const std::invalid_argument& e) {
    throw FieldError(field, e.what());
  }
}

Json to_json(const InterventionSpec& spec) {
  if (!spec.target) return nullptr;
  return Json{{"target", *spec.target}, {"value", spec.value}};
}

InterventionSpec intervention_from_json(const Json& j, const std::string& field) {
  if (j.is_null()) return InterventionSpec::observational();
  require_object(j, field);
  return InterventionSpec::perform(integer(require(j, "target", field), join(field, "target")),
                                   number(require(j, "value", field), join(field, "value")));
}

Json to_json(const Sample& s) { return Json{{"values", s.values}, {"intervention", to_json(s.intervention)}}; }

Sample sample_from_json(const Json& j, const std::string& field) {
  Sample s;
  const std::string values_field = join(field, "values");
  const Json& values = array(require(j, "values", field), values_field);
  for (std::size_t k = 0; k < values.size(); ++k) s.values.push_back(number(values[k], index(values_field, k)));
  auto it = j.find("intervention");
  if (it != j.end()) s.intervention = intervention_from_json(*it, join(field, "intervention"));
  try {
    s.validate(static_cast<int>(s.values.size()));
  } catch (const std::invalid_argument& e) {
    throw FieldError(field, e.what());
  }
  return s;
}

Json to_json(const GraphPrior& prior) {
  Json out{{"kind", to_string(prior.kind)}};
  if (prior.reference_graph) out["reference"] = to_json(*prior.reference_graph);
  if (prior.max_edges) out["max_edges"] = *prior.max_edges;
  if (prior.kind == GraphPrior::Kind::kExplicit) {
    Json table = Json::array();
    for (const auto& [g, w] : prior.explicit_table) table.push_back(Json{{"graph", to_json(g)}, {"p", w}});
    out["table"] = std::move(table);
  }
  return out;
}

GraphPrior prior_from_json(const Json& j, const std::string& field) {
  require_object(j, field);
  GraphPrior prior;
  auto kind_it = j.find("kind");
  if (kind_it != j.end()) {
    if (!kind_it->is_string()) throw FieldError(join(field, "kind"), "expected a string");
    try {
      prior.kind = prior_kind_from_string(kind_it->get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw FieldError(join(field, "kind"), e.what());
    }
  }
  optional_field(j, "reference", field, [&](const Json& v, const std::string& f) { prior.reference_graph = dag_from_json(v, f); });
  optional_field(j, "max_edges", field, [&](const Json& v, const std::string& f) {
    prior.max_edges = integer(v, f);
    if (*prior.max_edges < 0) throw FieldError(f, "must be >= 0");
  });
  optional_field(j, "table", field, [&](const Json& v, const std::string& f) {
    array(v, f);
    for (std::size_t k = 0; k < v.size(); ++k) {
      const std::string entry = index(f, k);
      prior.explicit_table.emplace_back(dag_from_json(require(v[k], "graph", entry), join(entry, "graph")),
                                        number(require(v[k], "p", entry), join(entry, "p")));
    }
  });
  if (prior.kind == GraphPrior::Kind::kReference && !prior.reference_graph) {
    throw FieldError(join(field, "reference"), "reference prior requires a reference graph");
  }
  if (prior.kind == GraphPrior::Kind::kExplicit && prior.explicit_table.empty()) {
    throw FieldError(join(field, "table"), "explicit prior requires a table");
  }
  return prior;
}

Json to_json(const RootModel& root) {
  return Json{{"mu0", root.mu0}, {"kappa0", root.kappa0}, {"alpha0", root.alpha0}, {"beta0", root.beta0}};
}

RootModel root_model_from_json(const Json& j, const std::string& field) {
  require_object(j, field);
  RootModel root;
  optional_field(j, "mu0", field, [&](const Json& v, const std::string& f) { root.mu0 = number(v, f); });
  optional_field(j, "kappa0", field, [&](const Json& v, const std::string& f) { root.kappa0 = number(v, f); });
  optional_field(j, "alpha0", field, [&](const Json& v, const std::string& f) { root.alpha0 = number(v, f); });
  optional_field(j, "beta0", field, [&](const Json& v, const std::string& f) { root.beta0 = number(v, f); });
  try {
    root.validate();
  } catch (const std::invalid_argument& e) {
    throw FieldError(field, e.what());
  }
  return root;
}

Json to_json(const DesignConfig& cfg) {
  Json out{{"mc_samples", cfg.mc_samples}, {"beta", cfg.beta}, {"bo_budget", cfg.bo_budget}, {"threads", cfg.threads}};
  if (!cfg.domains.empty()) {
    Json domains = Json::array();
    for (const Interval& iv : cfg.domains) domains.push_back(interval_json(iv));
    out["domains"] = std::move(domains);
  }
  if (cfg.time_budget) out["time_budget_ms"] = cfg.time_budget->count();
  return out;
}

DesignConfig design_from_json(const Json& j, const std::string& field) {
  require_object(j, field);
  DesignConfig cfg;
  optional_field(j, "mc_samples", field, [&](const Json& v, const std::string& f) {
    cfg.mc_samples = integer(v, f);
    if (cfg.mc_samples < 1) throw FieldError(f, "must be >= 1");
  });
  optional_field(j, "beta", field, [&](const Json& v, const std::string& f) {
    cfg.beta = number(v, f);
    if (cfg.beta < 0.0) throw FieldError(f, "must be >= 0");
  });
  optional_field(j, "bo_budget", field, [&](const Json& v, const std::string& f) {
    cfg.bo_budget = integer(v, f);
    if (cfg.bo_budget < 2) throw FieldError(f, "must be >= 2");
  });
  optional_field(j, "threads", field, [&](const Json& v, const std::string& f) {
    cfg.threads = integer(v, f);
    if (cfg.threads < 1) throw FieldError(f, "must be >= 1");
  });
  optional_field(j, "time_budget_ms", field, [&](const Json& v, const std::string& f) {
    const int ms = integer(v, f);
    if (ms < 1) throw FieldError(f, "must be >= 1");
    cfg.time_budget = std::chrono::milliseconds(ms);
  });
  optional_field(j, "domains", field, [&](const Json& v, const std::string& f) {
    array(v, f);
    for (std::size_t k = 0; k < v.size(); ++k) cfg.domains.push_back(interval_from_json(v[k], index(f, k)));
  });
  return cfg;
}

Json to_json(const std::vector<EigEvaluation>& diagnostics) {
  Json out = Json::array();
  for (const auto& e : diagnostics) {
    out.push_back(Json{{"target", e.target}, {"x", e.x}, {"eig", e.eig}, {"std_error", e.std_error}, {"order", e.order}});
  }
  return out;
}

Json to_json(const GroundTruthScm& scm) {
  Json mechanisms = Json::array();
  Json roots = Json::array();
  for (int i = 0; i < scm.num_nodes(); ++i) {
    const NodeEquation& eq = scm.equations[i];
    if (scm.graph.parent_mask(i) == 0) {
      roots.push_back(Json{{"node", i}, {"mean", eq.root_mean}, {"sd", eq.root_sd}});
    } else {
      mechanisms.push_back(Json{{"node", i}, {"expr", eq.mechanism->text()}, {"noise_sd", eq.noise_sd}});
    }
  }
  return Json{{"graph", to_json(scm.graph)}, {"mechanisms", std::move(mechanisms)}, {"roots", std::move(roots)}};
}

GroundTruthScm scm_from_json(const Json& j, const std::string& field) {
  GroundTruthScm scm;
  scm.graph = dag_from_json(require(j, "graph", field), join(field, "graph"));
  const int d = scm.graph.num_nodes();
  scm.equations.resize(d);
  std::vector<bool> seen(d, false);

  auto node_of = [&](const Json& entry, const std::string& f) {
    const int node = integer(require(entry, "node", f), join(f, "node"));
    if (node < 0 || node >= d) throw FieldError(join(f, "node"), "node " + std::to_string(node) + " out of range");
    if (seen[node]) throw FieldError(join(f, "node"), "node " + std::to_string(node) + " specified twice");
    seen[node] = true;
    return node;
  };

  const std::string mech_field = join(field, "mechanisms");
  const Json& mechanisms = array(require(j, "mechanisms", field), mech_field);
  for (std::size_t k = 0; k < mechanisms.size(); ++k) {
    const std::string f = index(mech_field, k);
    const int node = node_of(mechanisms[k], f);
    if (scm.graph.parent_mask(node) == 0) {
      throw FieldError(f, "node " + std::to_string(node) + " is a root; give it an entry under roots");
    }
    const Json& expr = require(mechanisms[k], "expr", f);
    if (!expr.is_string()) throw FieldError(join(f, "expr"), "expected a string");
    try {
      scm.equations[node].mechanism = Expression::parse(expr.get<std::string>());
    } catch (const ExpressionError& e) {
      throw FieldError(join(f, "expr"), e.what());
    }
    scm.equations[node].noise_sd = number(require(mechanisms[k], "noise_sd", f), join(f, "noise_sd"));
  }
  const std::string root_field = join(field, "roots");
  const Json& roots = array(require(j, "roots", field), root_field);
  for (std::size_t k = 0; k < roots.size(); ++k) {
    const std::string f = index(root_field, k);
    const int node = node_of(roots[k], f);
    if (scm.graph.parent_mask(node) != 0) {
      throw FieldError(f, "node " + std::to_string(node) + " has parents; give it an entry under mechanisms");
    }
    scm.equations[node].root_mean = number(require(roots[k], "mean", f), join(f, "mean"));
    scm.equations[node].root_sd = number(require(roots[k], "sd", f), join(f, "sd"));
  }
  for (int i = 0; i < d; ++i) {
    if (!seen[i]) {
      const bool root = scm.graph.parent_mask(i) == 0;
      throw FieldError(root ? root_field : mech_field,
                       std::string(root ? "missing root distribution" : "missing mechanism") + " for node " +
                           std::to_string(i));
    }
  }
  try {
    scm.validate();
  } catch (const std::invalid_argument& e) {
    throw FieldError(field, e.what());
  }
  return scm;
}

void fit_from_json(const Json& v, BeliefOptions& options, const std::string& f) {
  require_object(v, f);
  optional_field(v, "enabled", f, [&](const Json& e, const std::string& ef) {
    if (!e.is_boolean()) throw FieldError(ef, "expected a boolean");
    options.fit_hyperparams = e.get<bool>();
  });
  optional_field(v, "restarts", f, [&](const Json& e, const std::string& ef) {
    options.fit.restarts = integer(e, ef);
    if (options.fit.restarts < 0) throw FieldError(ef, "must be >= 0");
  });
  optional_field(v, "bounds", f, [&](const Json& b, const std::string& bf) {
    require_object(b, bf);
    HyperparamBounds& bounds = options.fit.bounds;
    optional_field(b, "signal_variance", bf, [&](const Json& iv, const std::string& f2) { bounds.signal_variance = interval_from_json(iv, f2); });
    optional_field(b, "inverse_lengthscale", bf, [&](const Json& iv, const std::string& f2) { bounds.inverse_lengthscale = interval_from_json(iv, f2); });
    optional_field(b, "noise_variance", bf, [&](const Json& iv, const std::string& f2) { bounds.noise_variance = interval_from_json(iv, f2); });
    try {
      bounds.validate();
    } catch (const std::invalid_argument& e) {
      throw FieldError(bf, e.what());
    }
  });
}

Json to_json(const StepRecord& r) {
  Json outcomes = Json::array();
  for (const Sample& s : r.outcomes) outcomes.push_back(to_json(s));
  Json out{{"t", r.t},
           {"chosen", to_json(r.chosen)},
           {"eig", r.eig ? Json(*r.eig) : Json(nullptr)},
           {"outcomes", std::move(outcomes)},
           {"posterior", r.posterior},
           {"entropy", r.entropy}};
  if (r.p_true) out["p_true"] = *r.p_true;
  if (r.expected_shd) out["expected_shd"] = *r.expected_shd;
  if (r.budget_exhausted) out["budget_exhausted"] = true;
  return out;
}

Json to_json(const EpisodeConfig& cfg) {
  Json out{{"schema", kSchemaVersion},
           {"n_obs", cfg.n_obs},
           {"max_steps", cfg.max_steps},
           {"confidence_stop", cfg.confidence_stop},
           {"strategy", cfg.strategy},
           {"samples_per_step", cfg.samples_per_step},
           {"seed", cfg.seed},
           {"n_min", cfg.belief.n_min},
           {"prior", to_json(cfg.belief.prior)},
           {"root_model", to_json(cfg.belief.root)},
           {"fit", Json{{"enabled", cfg.belief.fit_hyperparams},
                        {"restarts", cfg.belief.fit.restarts},
                        {"bounds", Json{{"signal_variance", interval_json(cfg.belief.fit.bounds.signal_variance)},
                                        {"inverse_lengthscale", interval_json(cfg.belief.fit.bounds.inverse_lengthscale)},
                                        {"noise_variance", interval_json(cfg.belief.fit.bounds.noise_variance)}}}}},
           {"design", to_json(cfg.design)}};
  if (cfg.scm) out["scm"] = to_json(*cfg.scm);
  return out;
}

EpisodeConfig episode_config_from_json(const Json& j) {
  require_object(j, "");
  const int schema = integer(require(j, "schema", ""), "schema");
  if (schema != kSchemaVersion) {
    throw FieldError("schema", "unsupported schema version " + std::to_string(schema) + " (expected " +
                                   std::to_string(kSchemaVersion) + ")");
  }
  EpisodeConfig cfg;
  optional_field(j, "scm", "", [&](const Json& v, const std::string& f) { cfg.scm = scm_from_json(v, f); });
  optional_field(j, "n_min", "", [&](const Json& v, const std::string& f) {
    cfg.belief.n_min = integer(v, f);
    if (cfg.belief.n_min < 1) throw FieldError(f, "must be >= 1");
  });
  optional_field(j, "n_obs", "", [&](const Json& v, const std::string& f) {
    cfg.n_obs = integer(v, f);
    if (cfg.n_obs < cfg.belief.n_min) {
      throw FieldError(f, "must be >= n_min=" + std::to_string(cfg.belief.n_min));
    }
  });
  optional_field(j, "max_steps", "", [&](const Json& v, const std::string& f) {
    cfg.max_steps = integer(v, f);
    if (cfg.max_steps < 1) throw FieldError(f, "must be >= 1");
  });
  optional_field(j, "confidence_stop", "", [&](const Json& v, const std::string& f) {
    cfg.confidence_stop = number(v, f);
    if (!(cfg.confidence_stop > 0.5 && cfg.confidence_stop <= 1.0)) throw FieldError(f, "must lie in (0.5, 1]");
  });
  optional_field(j, "strategy", "", [&](const Json& v, const std::string& f) {
    if (!v.is_string()) throw FieldError(f, "expected a string");
    cfg.strategy = v.get<std::string>();
    try {
      make_strategy(cfg.strategy);
    } catch (const std::invalid_argument& e) {
      throw FieldError(f, e.what());
    }
  });
  optional_field(j, "samples_per_step", "", [&](const Json& v, const std::string& f) {
    cfg.samples_per_step = integer(v, f);
    if (cfg.samples_per_step < 1) throw FieldError(f, "must be >= 1");
  });
  optional_field(j, "seed", "", [&](const Json& v, const std::string& f) { cfg.seed = unsigned64(v, f); });
  optional_field(j, "prior", "", [&](const Json& v, const std::string& f) { cfg.belief.prior = prior_from_json(v, f); });
  optional_field(j, "root_model", "", [&](const Json& v, const std::string& f) { cfg.belief.root = root_model_from_json(v, f); });
  optional_field(j, "fit", "", [&](const Json& v, const std::string& f) { fit_from_json(v, cfg.belief, f); });
  optional_field(j, "design", "", [&](const Json& v, const std::string& f) { cfg.design = design_from_json(v, f); });

  if (cfg.scm) {
    const int d = cfg.scm->num_nodes();
    if (!cfg.design.domains.empty() && static_cast<int>(cfg.design.domains.size()) != d) {
      throw FieldError("design.domains", "expected " + std::to_string(d) + " domains");
    }
    if (cfg.belief.prior.reference_graph && cfg.belief.prior.reference_graph->num_nodes() != d) {
      throw FieldError("prior.reference", "node count does not match the SCM");
    }
  }
  return cfg;
}

Json to_json(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace abcd
