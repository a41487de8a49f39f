#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "abcd/agent.hpp"
#include "abcd/belief.hpp"
#include "abcd/dag.hpp"
#include "abcd/design.hpp"
#include "abcd/scm.hpp"

namespace abcd {

using Json = nlohmann::json;

/// Schema error carrying the dotted path of the offending field.
class FieldError : public std::invalid_argument {
 public:
  FieldError(std::string field, const std::string& message)
      : std::invalid_argument(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Current config / API schema version.
inline constexpr int kSchemaVersion = 1;

// {"d": int, "edges": [[p, i], ...]} with edges sorted lexicographically.
Json to_json(const Dag& g);
Dag dag_from_json(const Json& j, const std::string& field = "graph");

// {"values": [...], "intervention": null | {"target": j, "value": x}}
Json to_json(const InterventionSpec& spec);
InterventionSpec intervention_from_json(const Json& j, const std::string& field = "intervention");
Json to_json(const Sample& s);
Sample sample_from_json(const Json& j, const std::string& field = "sample");

Json to_json(const GraphPrior& prior);
GraphPrior prior_from_json(const Json& j, const std::string& field = "prior");

Json to_json(const RootModel& root);
RootModel root_model_from_json(const Json& j, const std::string& field = "root_model");

/// {"enabled", "restarts", "bounds": {"signal_variance", "inverse_lengthscale",
/// "noise_variance"}}, every key optional; parsed into `options`.
void fit_from_json(const Json& j, BeliefOptions& options, const std::string& field = "fit");

/// Domains, when present, are [[lo, hi], ...].
Json to_json(const DesignConfig& cfg);
DesignConfig design_from_json(const Json& j, const std::string& field = "design");

// [{"target": j, "x": x, "eig": v, "order": k}, ...]
Json to_json(const std::vector<EigEvaluation>& diagnostics);

/// {"graph": Dag, "mechanisms": [{"node", "expr", "noise_sd"}], "roots": [{"node", "mean", "sd"}]}
Json to_json(const GroundTruthScm& scm);
GroundTruthScm scm_from_json(const Json& j, const std::string& field = "scm");

Json to_json(const StepRecord& record);
Json to_json(const EpisodeConfig& cfg);
/// Requires "schema" == kSchemaVersion.
EpisodeConfig episode_config_from_json(const Json& j);

Json to_json(const Eigen::MatrixXd& m);

}  // namespace abcd
