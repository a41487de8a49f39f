#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "abcd/serialization.hpp"

namespace httplib {
class Server;
}

namespace abcd {

inline constexpr int kCurvePoints = 200;
inline constexpr std::chrono::milliseconds kDefaultRecommendBudget{30000};

struct ApiResult {
  int status = 200;
  Json body;
};

/// Predictive mean and +-2 sd observation band of one single-parent node.
struct CurveData {
  std::vector<double> grid;
  std::vector<double> mean;
  std::vector<double> sd;  // sqrt(variance_f + noise_variance)
};

/// Curve of `node` against its single parent in universe graph `graph`,
/// in the original (uncentered) units. Throws std::invalid_argument if the
/// node does not have exactly one parent.
CurveData predict_curve(const BeliefState& belief, std::size_t graph, int node, Interval range,
                        int points = kCurvePoints);

/// Sessions for human-in-the-loop decision support.
///
/// Each session keeps an append-only JSON-lines event log in the state
/// directory (when one is given); snapshots are rebuilt from it on load.
/// Writers (observe, recommend) serialize per session; reads serve the last
/// committed snapshot.
class SessionManager {
 public:
  explicit SessionManager(std::optional<std::filesystem::path> state_dir = std::nullopt);
  ~SessionManager();

  /// Replays every event log found in the state directory.
  void load();
  std::size_t session_count() const;

  ApiResult create(const Json& body, const std::optional<std::string>& idempotency_key);
  ApiResult get_state(const std::string& id) const;
  ApiResult recommend(const std::string& id);
  ApiResult observe(const std::string& id, const Json& body);
  ApiResult curve(const std::string& id, const std::map<std::string, std::string>& query) const;
  static ApiResult health();

  /// Library-level view of a session's current belief, for audits.
  std::shared_ptr<const BeliefState> belief(const std::string& id) const;

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id) const;
  void append_event(Session& session, const Json& event) const;
  std::shared_ptr<Session> build_session(const std::string& id, const Json& create_body) const;
  static void apply_observation(Session& session, const Sample& sample, const Json& recommended);

  std::optional<std::filesystem::path> state_dir_;
  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::string> idempotency_;
};

/// Registers the /v1 routes on `server`.
void register_routes(httplib::Server& server, SessionManager& manager);

/// Error body {"error": {"code", "message", "field"?}}.
Json error_body(const std::string& code, const std::string& message, const std::string& field = "");

}  // namespace abcd
