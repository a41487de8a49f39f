#include "abcd/service.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "abcd/numeric.hpp"
#include "abcd/version.hpp"

namespace abcd {
namespace {

constexpr std::uint64_t kRecommendStream = 0x7265636f6d6dULL;

ApiResult error(int status, const std::string& code, const std::string& message, const std::string& field = "") {
  return {status, error_body(code, message, field)};
}

std::string new_session_id() {
  static std::mutex mutex;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mutex);
  std::ostringstream os;
  os << std::hex << rng() << rng();
  return os.str();
}

bool valid_session_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 &&
         id.find_first_not_of("0123456789abcdefABCDEF-") == std::string::npos;
}

Json graph_list(const BeliefState& belief) {
  Json out = Json::array();
  const auto& lp = belief.log_posterior();
  for (std::size_t g = 0; g < belief.num_graphs(); ++g) {
    out.push_back(Json{{"index", g}, {"graph", to_json(belief.universe()[g])}, {"probability", std::exp(lp[g])}});
  }
  return out;
}

}  // namespace

Json error_body(const std::string& code, const std::string& message, const std::string& field) {
  Json err{{"code", code}, {"message", message}};
  if (!field.empty()) err["field"] = field;
  return Json{{"error", std::move(err)}};
}

CurveData predict_curve(const BeliefState& belief, std::size_t graph, int node, Interval range, int points) {
  if (graph >= belief.num_graphs()) throw std::invalid_argument("graph index out of range");
  if (node < 0 || node >= belief.num_nodes()) throw std::invalid_argument("node index out of range");
  const Dag& g = belief.universe()[graph];
  const std::vector<int> parents = g.parents(node);
  if (parents.size() != 1) {
    throw std::invalid_argument("node " + std::to_string(node) + " has " + std::to_string(parents.size()) +
                                " parents in graph " + std::to_string(graph) + "; curves need exactly one");
  }
  const ModelKey key{node, g.parent_mask(node)};
  const double noise = belief.hyperparams(key).noise_variance;
  const double parent_offset = belief.centering()[parents.front()];
  const double node_offset = belief.centering()[node];
  CurveData out;
  out.grid = linspace(range, points);
  for (double x : out.grid) {
    const double input[] = {x - parent_offset};
    const GpPrediction p = belief.predict(key, input);
    out.mean.push_back(p.mean + node_offset);
    out.sd.push_back(std::sqrt(p.variance_f + noise));
  }
  return out;
}

struct SessionManager::Session {
  std::string id;
  Json create_body;
  std::optional<std::string> idempotency_key;
  DesignConfig design;
  std::uint64_t seed = 0;

  std::mutex writer;
  std::atomic<bool> recommending{false};
  std::mutex log_mutex;

  mutable std::shared_mutex state;
  std::shared_ptr<const BeliefState> belief;
  std::vector<Json> history;
  std::vector<double> entropy_history;
  std::optional<Json> pending;
  int revision = 0;
  int recommend_count = 0;

  Json view_locked() const {
    Json out{{"id", id},
             {"revision", revision},
             {"d", belief->num_nodes()},
             {"universe", graph_list(*belief)},
             {"posterior", belief->posterior()},
             {"edge_marginals", to_json(edge_marginals(*belief))},
             {"entropy", -utility(belief->log_posterior())},
             {"entropy_history", entropy_history},
             {"history", history},
             {"pending", pending ? *pending : Json(nullptr)}};
    Json domains = Json::array();
    for (const Interval& iv : design.domains) domains.push_back(Json::array({iv.lo, iv.hi}));
    out["domains"] = std::move(domains);
    return out;
  }
};

SessionManager::SessionManager(std::optional<std::filesystem::path> state_dir) : state_dir_(std::move(state_dir)) {
  if (state_dir_) std::filesystem::create_directories(*state_dir_);
}

SessionManager::~SessionManager() = default;

std::size_t SessionManager::session_count() const {
  std::lock_guard lock(sessions_mutex_);
  return sessions_.size();
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::shared_ptr<const BeliefState> SessionManager::belief(const std::string& id) const {
  auto session = find(id);
  if (!session) return nullptr;
  std::shared_lock lock(session->state);
  return session->belief;
}

void SessionManager::append_event(Session& session, const Json& event) const {
  if (!state_dir_) return;
  std::lock_guard lock(session.log_mutex);
  std::ofstream out(*state_dir_ / (session.id + ".jsonl"), std::ios::app);
  out << event.dump() << '\n';
  out.flush();
  if (!out) throw std::runtime_error("failed to append to the event log of session " + session.id);
}

std::shared_ptr<SessionManager::Session> SessionManager::build_session(const std::string& id,
                                                                       const Json& body) const {
  if (!body.is_object()) throw FieldError("", "request body must be a JSON object");
  auto it = body.find("d");
  if (it == body.end()) throw FieldError("d", "missing required field");
  if (!it->is_number_integer()) throw FieldError("d", "expected an integer");
  const int d = it->get<int>();
  if (d < 2 || d > kMaxEnumerableNodes) {
    throw FieldError("d", "must be between 2 and " + std::to_string(kMaxEnumerableNodes));
  }

  BeliefOptions options;
  if (auto f = body.find("n_min"); f != body.end()) {
    if (!f->is_number_integer() || f->get<int>() < 1) throw FieldError("n_min", "expected a positive integer");
    options.n_min = f->get<int>();
  }
  if (auto f = body.find("prior"); f != body.end() && !f->is_null()) options.prior = prior_from_json(*f, "prior");
  if (auto f = body.find("root_model"); f != body.end() && !f->is_null()) {
    options.root = root_model_from_json(*f, "root_model");
  }
  if (auto f = body.find("fit"); f != body.end() && !f->is_null()) fit_from_json(*f, options, "fit");
  std::uint64_t seed = 0;
  if (auto f = body.find("seed"); f != body.end()) {
    if (!f->is_number_unsigned()) throw FieldError("seed", "expected a nonnegative integer");
    seed = f->get<std::uint64_t>();
  }
  DesignConfig design;
  if (auto f = body.find("design"); f != body.end() && !f->is_null()) design = design_from_json(*f, "design");
  if (!design.time_budget) design.time_budget = kDefaultRecommendBudget;

  auto obs_it = body.find("observational");
  if (obs_it == body.end()) throw FieldError("observational", "missing required field");
  if (!obs_it->is_array()) throw FieldError("observational", "expected an array of samples");
  std::vector<Sample> observational;
  for (std::size_t k = 0; k < obs_it->size(); ++k) {
    const std::string field = "observational[" + std::to_string(k) + "]";
    const Json& entry = (*obs_it)[k];
    // Bare value arrays are accepted as observational samples.
    Sample s = entry.is_array() ? sample_from_json(Json{{"values", entry}}, field) : sample_from_json(entry, field);
    if (static_cast<int>(s.values.size()) != d) {
      throw FieldError(field, "expected " + std::to_string(d) + " values, got " + std::to_string(s.values.size()));
    }
    if (!s.intervention.is_observational()) throw FieldError(field, "initial samples must be observational");
    observational.push_back(std::move(s));
  }
  if (static_cast<int>(observational.size()) < options.n_min) {
    throw FieldError("observational", "at least n_min=" + std::to_string(options.n_min) +
                                          " observational samples are required, got " +
                                          std::to_string(observational.size()));
  }
  if (design.domains.empty()) design.domains = default_domains(observational);
  try {
    design.validate(d);
  } catch (const std::invalid_argument& e) {
    throw FieldError("design", e.what());
  }
  if (options.prior.reference_graph && options.prior.reference_graph->num_nodes() != d) {
    throw FieldError("prior.reference", "node count does not match d");
  }

  options.fit.seed = seeds::fit(seed);
  auto session = std::make_shared<Session>();
  session->id = id;
  session->create_body = body;
  session->design = std::move(design);
  session->seed = seed;
  session->belief = std::make_shared<const BeliefState>(initialize(observational, options));
  session->entropy_history.push_back(-utility(session->belief->log_posterior()));
  return session;
}

ApiResult SessionManager::create(const Json& body, const std::optional<std::string>& idempotency_key) {
  if (idempotency_key) {
    std::string existing;
    {
      std::lock_guard lock(sessions_mutex_);
      auto it = idempotency_.find(*idempotency_key);
      if (it != idempotency_.end()) existing = it->second;
    }
    if (!existing.empty()) {
      ApiResult replay = get_state(existing);
      replay.body["idempotent_replay"] = true;
      return replay;
    }
  }
  std::shared_ptr<Session> session;
  try {
    session = build_session(new_session_id(), body);
  } catch (const FieldError& e) {
    return error(422, "invalid_request", e.what(), e.field());
  } catch (const std::invalid_argument& e) {
    return error(422, "invalid_request", e.what());
  } catch (const std::exception& e) {
    return error(500, "initialization_failed", e.what());
  }
  session->idempotency_key = idempotency_key;
  std::optional<std::string> winner;
  {
    std::lock_guard lock(sessions_mutex_);
    if (idempotency_key) {
      // Another request with the same key may have won the race.
      auto [it, inserted] = idempotency_.emplace(*idempotency_key, session->id);
      if (!inserted) winner = it->second;
    }
    if (!winner) sessions_.emplace(session->id, session);
  }
  if (winner) {
    ApiResult replay = get_state(*winner);
    replay.body["idempotent_replay"] = true;
    return replay;
  }
  append_event(*session, Json{{"event", "created"},
                              {"id", session->id},
                              {"idempotency_key", idempotency_key ? Json(*idempotency_key) : Json(nullptr)},
                              {"body", body}});
  std::shared_lock lock(session->state);
  return {201, session->view_locked()};
}

ApiResult SessionManager::get_state(const std::string& id) const {
  auto session = find(id);
  if (!session) return error(404, "not_found", "unknown session '" + id + "'");
  std::shared_lock lock(session->state);
  return {200, session->view_locked()};
}

ApiResult SessionManager::recommend(const std::string& id) {
  auto session = find(id);
  if (!session) return error(404, "not_found", "unknown session '" + id + "'");
  bool expected = false;
  if (!session->recommending.compare_exchange_strong(expected, true)) {
    return error(409, "recommendation_in_progress", "a recommendation is already being computed for this session");
  }
  struct Reset {
    std::atomic<bool>& flag;
    ~Reset() { flag = false; }
  } reset{session->recommending};

  std::lock_guard writer(session->writer);
  std::shared_ptr<const BeliefState> belief;
  DesignConfig cfg = session->design;
  int count = 0;
  {
    std::shared_lock lock(session->state);
    belief = session->belief;
    count = session->recommend_count;
  }
  cfg.seed = derive_seed(session->seed, kRecommendStream, static_cast<std::uint64_t>(count));
  DesignResult result;
  try {
    result = optimize_intervention(*belief, cfg);
  } catch (const std::exception& e) {
    return error(500, "design_failed", e.what());
  }
  const bool converged = utility(belief->log_posterior()) > -1e-9;
  Json rec{{"target", result.target},
           {"x", result.x},
           {"eig", result.eig},
           {"diagnostics", to_json(result.diagnostics)},
           {"converged", converged},
           {"budget_exhausted", result.budget_exhausted},
           {"count", count}};
  {
    std::unique_lock lock(session->state);
    session->pending = rec;
    session->recommend_count = count + 1;
  }
  append_event(*session, Json{{"event", "recommended"}, {"result", rec}});
  Json body = rec;
  std::shared_lock lock(session->state);
  body["revision"] = session->revision;
  return {200, body};
}

void SessionManager::apply_observation(Session& session, const Sample& sample, const Json& recommended) {
  auto next = std::make_shared<const BeliefState>(session.belief->updated(sample));
  StepRecord record;
  record.t = static_cast<int>(session.history.size()) + 1;
  record.chosen = sample.intervention;
  record.outcomes = {sample};
  record.posterior = next->posterior();
  record.entropy = -utility(next->log_posterior());
  Json entry = to_json(record);
  entry["recommended"] = recommended;
  std::unique_lock lock(session.state);
  session.belief = std::move(next);
  session.history.push_back(std::move(entry));
  session.entropy_history.push_back(record.entropy);
  session.pending.reset();
  ++session.revision;
}

ApiResult SessionManager::observe(const std::string& id, const Json& body) {
  auto session = find(id);
  if (!session) return error(404, "not_found", "unknown session '" + id + "'");
  std::lock_guard writer(session->writer);
  Sample sample;
  const int d = session->belief->num_nodes();
  try {
    if (!body.is_object()) throw FieldError("", "request body must be a JSON object");
    sample = sample_from_json(body, "");
    if (static_cast<int>(sample.values.size()) != d) {
      throw FieldError("values", "expected " + std::to_string(d) + " values, got " + std::to_string(sample.values.size()));
    }
  } catch (const FieldError& e) {
    return error(422, "invalid_observation", e.what(), e.field().empty() ? "values" : e.field());
  } catch (const std::invalid_argument& e) {
    return error(422, "invalid_observation", e.what(), "values");
  }
  Json recommended;
  {
    std::shared_lock lock(session->state);
    recommended = session->pending ? *session->pending : Json(nullptr);
  }
  try {
    apply_observation(*session, sample, recommended);
  } catch (const std::exception& e) {
    return error(500, "update_failed", e.what());
  }
  append_event(*session, Json{{"event", "observed"}, {"sample", to_json(sample)}, {"recommended", recommended}});
  std::shared_lock lock(session->state);
  return {200, Json{{"id", id},
                    {"revision", session->revision},
                    {"posterior", session->belief->posterior()},
                    {"entropy", session->entropy_history.back()},
                    {"edge_marginals", to_json(edge_marginals(*session->belief))}}};
}

ApiResult SessionManager::curve(const std::string& id, const std::map<std::string, std::string>& query) const {
  auto session = find(id);
  if (!session) return error(404, "not_found", "unknown session '" + id + "'");
  auto param = [&](const std::string& name) -> std::optional<std::string> {
    auto it = query.find(name);
    if (it == query.end() || it->second.empty()) return std::nullopt;
    return it->second;
  };
  std::shared_ptr<const BeliefState> belief;
  int revision = 0;
  {
    std::shared_lock lock(session->state);
    belief = session->belief;
    revision = session->revision;
  }
  long long graph = 0;
  int node = 0;
  Interval range;
  try {
    auto g = param("graph");
    auto n = param("node");
    if (!g) return error(422, "invalid_query", "missing query parameter", "graph");
    if (!n) return error(422, "invalid_query", "missing query parameter", "node");
    graph = std::stoll(*g);
    node = std::stoi(*n);
    if (graph < 0 || graph >= static_cast<long long>(belief->num_graphs())) {
      return error(422, "invalid_query", "graph index out of range", "graph");
    }
    if (node < 0 || node >= belief->num_nodes()) return error(422, "invalid_query", "node index out of range", "node");
    const std::vector<int> parents = belief->universe()[static_cast<std::size_t>(graph)].parents(node);
    if (parents.size() != 1) {
      return error(422, "unsupported_node",
                   "node " + std::to_string(node) + " has " + std::to_string(parents.size()) +
                       " parents in this graph; curves need exactly one",
                   "node");
    }
    range = session->design.domains[parents.front()];
    if (auto lo = param("lo")) range.lo = std::stod(*lo);
    if (auto hi = param("hi")) range.hi = std::stod(*hi);
    if (!std::isfinite(range.lo) || !std::isfinite(range.hi) || range.lo > range.hi) {
      return error(422, "invalid_query", "lo/hi must be finite with lo <= hi", "lo");
    }
  } catch (const std::logic_error& e) {
    return error(422, "invalid_query", std::string("malformed query parameter: ") + e.what());
  }
  const CurveData c = predict_curve(*belief, static_cast<std::size_t>(graph), node, range);
  std::vector<double> lower, upper;
  for (std::size_t k = 0; k < c.grid.size(); ++k) {
    lower.push_back(c.mean[k] - 2.0 * c.sd[k]);
    upper.push_back(c.mean[k] + 2.0 * c.sd[k]);
  }
  return {200, Json{{"id", id},
                    {"revision", revision},
                    {"graph", graph},
                    {"node", node},
                    {"grid", c.grid},
                    {"mean", c.mean},
                    {"lower", lower},
                    {"upper", upper}}};
}

ApiResult SessionManager::health() { return {200, Json{{"status", "ok"}, {"version", kToolVersion}}}; }

void SessionManager::load() {
  if (!state_dir_) return;
  std::vector<std::filesystem::path> logs;
  for (const auto& entry : std::filesystem::directory_iterator(*state_dir_)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") logs.push_back(entry.path());
  }
  std::sort(logs.begin(), logs.end());
  for (const auto& path : logs) {
    std::ifstream in(path);
    std::string line;
    std::shared_ptr<Session> session;
    int line_no = 0;
    try {
      while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const Json event = Json::parse(line);
        const std::string kind = event.at("event").get<std::string>();
        if (kind == "created") {
          session = build_session(event.at("id").get<std::string>(), event.at("body"));
          if (event.contains("idempotency_key") && event["idempotency_key"].is_string()) {
            session->idempotency_key = event["idempotency_key"].get<std::string>();
          }
        } else if (!session) {
          throw std::runtime_error("event before 'created'");
        } else if (kind == "recommended") {
          session->pending = event.at("result");
          session->recommend_count = event["result"].value("count", session->recommend_count) + 1;
        } else if (kind == "observed") {
          apply_observation(*session, sample_from_json(event.at("sample")), event.value("recommended", Json(nullptr)));
        } else {
          throw std::runtime_error("unknown event '" + kind + "'");
        }
      }
    } catch (const std::exception& e) {
      spdlog::error("skipping session log {} (line {}): {}", path.string(), line_no, e.what());
      continue;
    }
    if (!session) continue;
    std::lock_guard lock(sessions_mutex_);
    if (session->idempotency_key) idempotency_[*session->idempotency_key] = session->id;
    sessions_[session->id] = session;
  }
  spdlog::info("restored {} session(s) from {}", session_count(), state_dir_->string());
}

void register_routes(httplib::Server& server, SessionManager& manager) {
  auto reply = [](httplib::Response& res, const ApiResult& result) {
    res.status = result.status;
    res.set_content(result.body.dump(), "application/json");
  };
  auto parse_body = [](const httplib::Request& req, Json& out) -> std::optional<ApiResult> {
    try {
      out = req.body.empty() ? Json::object() : Json::parse(req.body);
      return std::nullopt;
    } catch (const Json::parse_error& e) {
      return ApiResult{422, error_body("invalid_json", e.what())};
    }
  };
  auto id_or_404 = [](const httplib::Request& req, httplib::Response& res, std::string& id) {
    id = req.matches[1];
    if (valid_session_id(id)) return true;
    res.status = 404;
    res.set_content(error_body("not_found", "unknown session").dump(), "application/json");
    return false;
  };

  server.Get("/v1/healthz", [reply](const httplib::Request&, httplib::Response& res) { reply(res, SessionManager::health()); });

  server.Post("/v1/sessions", [&manager, reply, parse_body](const httplib::Request& req, httplib::Response& res) {
    Json body;
    if (auto err = parse_body(req, body)) return reply(res, *err);
    std::optional<std::string> key;
    if (req.has_header("Idempotency-Key")) key = req.get_header_value("Idempotency-Key");
    if (!key && body.is_object() && body.contains("idempotency_key") && body["idempotency_key"].is_string()) {
      key = body["idempotency_key"].get<std::string>();
    }
    reply(res, manager.create(body, key));
  });

  server.Get(R"(/v1/sessions/([^/]+))", [&manager, reply, id_or_404](const httplib::Request& req, httplib::Response& res) {
    std::string id;
    if (id_or_404(req, res, id)) reply(res, manager.get_state(id));
  });

  server.Post(R"(/v1/sessions/([^/]+)/recommend)",
              [&manager, reply, id_or_404](const httplib::Request& req, httplib::Response& res) {
                std::string id;
                if (id_or_404(req, res, id)) reply(res, manager.recommend(id));
              });

  server.Post(R"(/v1/sessions/([^/]+)/observe)",
              [&manager, reply, parse_body, id_or_404](const httplib::Request& req, httplib::Response& res) {
                std::string id;
                if (!id_or_404(req, res, id)) return;
                Json body;
                if (auto err = parse_body(req, body)) return reply(res, *err);
                reply(res, manager.observe(id, body));
              });

  server.Get(R"(/v1/sessions/([^/]+)/curve)", [&manager, reply, id_or_404](const httplib::Request& req, httplib::Response& res) {
    std::string id;
    if (!id_or_404(req, res, id)) return;
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query[k] = v;
    reply(res, manager.curve(id, query));
  });
}

}  // namespace abcd
