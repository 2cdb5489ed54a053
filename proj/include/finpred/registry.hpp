#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "finpred/ratios.hpp"
#include "finpred/regressors.hpp"

namespace finpred {

/// Every model id the grid, CLI and service accept.
const std::vector<std::string>& model_ids();
bool is_model_id(const std::string& id);

/// Canonical id for a name that may use hyphens or a short alias
/// ("fnn-deepwide", "ols", "rf"). Throws InvalidInput.
std::string canonical_model_id(std::string_view name);

/// A model id plus hyperparameter overrides. Unknown keys and out-of-range
/// values are rejected by validate().
struct ModelSpec {
  std::string id;
  nlohmann::json hyper = nlohmann::json::object();

  void validate() const;
  static ModelSpec parse(const std::string& text);  // "id" or "id:key=value,key=value"
  std::string label() const;
  nlohmann::ordered_json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

/// Hyperparameters the fit will use: overrides merged over the defaults.
nlohmann::ordered_json resolved_hyper(const ModelSpec& spec);

std::unique_ptr<Model> fit_model(const ModelSpec& spec, const Matrix& X, const Vector& y, std::uint64_t seed);

inline constexpr std::string_view kModelFormat = "finpred-model/1";

struct ModelArtifact {
  std::string name;
  ModelSpec spec;
  ScenarioId scenario = ScenarioId::Base;
  Task task = Task::ROA;
  std::uint64_t seed = 0;
  std::optional<std::size_t> fold;  // absent = trained on every row
  std::vector<std::string> feature_names;
  std::shared_ptr<const Model> model;

  nlohmann::ordered_json to_json() const;
  static ModelArtifact from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static ModelArtifact load(const std::string& path);
};

}  // namespace finpred
