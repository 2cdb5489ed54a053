#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "finpred/ingest.hpp"

namespace finpred {

// ---------------------------------------------------------------- discrete engine

struct DiscreteVariable {
  std::string name;
  std::size_t states = 0;
  std::vector<std::size_t> parents;  // indices of earlier variables
  /// P(child | parents). Child state varies fastest, then parents in order
  /// (first parent fastest among them).
  std::vector<double> cpt;
  std::vector<double> edges;  // states + 1 bin edges used for moments
};

class DiscreteNetwork {
 public:
  /// Parents must already exist, which keeps the graph acyclic. Empty
  /// `edges` means uniform bins on [0, 1].
  std::size_t add(std::string name, std::size_t states, std::vector<std::size_t> parents, std::vector<double> cpt,
                  std::vector<double> edges = {});

  std::size_t index_of(const std::string& name) const;  // throws UnknownNode
  std::optional<std::size_t> find(const std::string& name) const;
  const std::vector<DiscreteVariable>& variables() const { return vars_; }
  std::size_t size() const { return vars_.size(); }

 private:
  std::vector<DiscreteVariable> vars_;
  std::map<std::string, std::size_t> names_;
};

using StateEvidence = std::map<std::size_t, std::size_t>;  // variable -> observed state

struct Posterior {
  std::string node;
  std::vector<double> edges;
  std::vector<double> masses;
  double mean = 0.0;      // over bin midpoints
  double variance = 0.0;
};

Posterior make_posterior(const DiscreteVariable& v, std::vector<double> masses);

/// Exact variable elimination: evidence slicing, barren-node pruning,
/// greedy min-size elimination order. Throws ZeroProbabilityEvidence.
Posterior infer_posterior(const DiscreteNetwork& net, const StateEvidence& evidence, std::size_t query);

inline constexpr double kEnumerationLimit = 1e7;

/// Brute-force sum over every joint state. Throws TooLarge above 1e7 states.
Posterior enumerate_joint_oracle(const DiscreteNetwork& net, const StateEvidence& evidence, std::size_t query);

/// Normal(mean, variance) truncated to [edges.front(), edges.back()] and
/// integrated over each bin.
std::vector<double> tnormal_masses(double mean, double variance, std::span<const double> edges);

std::vector<double> uniform_edges(std::size_t bins);

// ---------------------------------------------------------------- financial network

inline constexpr std::array<std::string_view, 5> kMacroNodes = {"Employment", "GDPChange", "YieldCurve",
                                                                "InterestRate10Y", "ExpectedInflation"};
inline constexpr std::array<std::string_view, 5> kIndicatorNodes = {"ROA", "ROE", "CurrentRatio", "TotalAssetTurnover",
                                                                    "OCG"};
inline constexpr std::string_view kLatentNode = "CompanyPerformance";
inline constexpr std::string_view kTargetNode = "TargetNetMargin";

struct BnConfig {
  std::size_t bins = 50;  // continuous nodes
  std::size_t indicator_states = 7;
  std::size_t ocg_states = 9;
  std::array<int, 5> macro_weights{1, 1, 1, 1, 1};
  int performance_weight = 1;  // weight of CompanyPerformance in the target mean
  double performance_variance = 0.01;
  double indicator_noise = 0.02;  // uniform mixing weight in the indicator tables
  double variance_floor = 1e-4;
  double target_variance_scale = 1.0;  // > 1 widens the target

  void validate() const;
};

/// One observable node: raw-scale bounds plus normalized moments.
struct BnNodeStats {
  std::string name;
  std::string source;  // panel feature or target
  double raw_min = 0.0, raw_max = 1.0;
  double raw_mean = 0.0, raw_sd = 0.0;
  double mean = 0.5, variance = 0.0;  // normalized scale
  std::vector<double> histogram;      // indicators: panel shares per state
  double stretch_center = 0.0, stretch_k = 0.0;  // OCG only

  /// Raw value -> [0, 1] (OCG through the sigmoid stretch).
  double normalize(double raw) const;
  double unnormalize(double value) const;
  bool stretched() const { return stretch_k > 0.0; }
};

inline constexpr std::string_view kBnFormat = "finpred-bn/1";

struct BnSpec {
  BnConfig config;
  std::array<BnNodeStats, 5> macros;
  std::array<BnNodeStats, 5> indicators;
  BnNodeStats target;
  double target_shift = 0.0;
  std::size_t observations = 0;

  const BnNodeStats* stats(std::string_view node) const;
  nlohmann::ordered_json to_json() const;
  static BnSpec from_json(const nlohmann::json& j);
};

/// Statistics from the panel: macro nodes from the t-quarter macro values
/// (Employment = 100 - UNRATE), indicators from the t-quarter ratios, the
/// target from t+1 NetMargin. Throws DegenerateStatistics.
BnSpec build_bn_spec(const Panel& panel, const BnConfig& config = {});

/// Node discretization and tables derived from a spec.
DiscreteNetwork build_network(const BnSpec& spec);

/// Evidence on the normalized [0, 1] scale.
using Evidence = std::map<std::string, double>;

class BayesNet {
 public:
  explicit BayesNet(BnSpec spec);

  const BnSpec& spec() const { return spec_; }
  const DiscreteNetwork& network() const { return net_; }

  /// Throws UnknownNode, LatentEvidence, InvalidInput (value outside [0, 1]),
  /// ZeroProbabilityEvidence.
  Posterior query(const Evidence& evidence, const std::string& node) const;
  Posterior query_oracle(const Evidence& evidence, const std::string& node) const;

  StateEvidence to_states(const Evidence& evidence) const;
  /// Raw-scale evidence -> normalized (clamped to [0, 1]).
  Evidence normalize(const std::map<std::string, double>& raw) const;

  /// True when every given indicator lies within one panel sd of its mean.
  bool within_average_band(const std::map<std::string, double>& raw_indicators) const;

 private:
  BnSpec spec_;
  DiscreteNetwork net_;
};

struct ExpectedValue {
  double normalized = 0.0;
  double raw = 0.0;
};

/// Posterior mean and its min-max inversion.
ExpectedValue expected_net_margin(const Posterior& posterior, const Normalizer::Bounds& bounds);

nlohmann::ordered_json posterior_to_json(const Posterior& p, const BnNodeStats* stats = nullptr);

}  // namespace finpred
