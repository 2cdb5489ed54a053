#include "finpred/registry.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>

#include "finpred/error.hpp"
#include "finpred/fnn.hpp"
#include "finpred/text.hpp"
#include "finpred/version.hpp"

namespace finpred {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Defaults per id. A null lambda means "pick from the grid by inner CV".
const std::map<std::string, ordered_json>& default_table() {
  static const std::map<std::string, ordered_json> table = [] {
    std::map<std::string, ordered_json> t;
    t["linreg"] = ordered_json::object();
    t["lasso"] = {{"lambda", nullptr}};
    t["elasticnet"] = {{"lambda", nullptr}, {"l1_ratio", 0.5}};
    t["knn"] = {{"k", 5}};
    t["cart"] = {{"max_depth", 8}, {"min_leaf", 5}};
    t["svr_linear"] = {{"epsilon", 0.01}, {"C", 1.0}, {"iterations", 3000}};
    auto tree_ens = [](EnsembleMethod m) {
      const auto d = EnsembleSpec::defaults(m);
      ordered_json j = {{"n_estimators", d.n_estimators},
                        {"learning_rate", d.learning_rate},
                        {"max_depth", d.tree.max_depth},
                        {"min_leaf", d.tree.min_leaf}};
      if (m == EnsembleMethod::HistGradientBoost) j["histogram_bins"] = d.histogram_bins;
      if (m == EnsembleMethod::RandomForest || m == EnsembleMethod::ExtraTrees) {
        j.erase("learning_rate");
        j["max_features"] = 0;
      }
      if (m == EnsembleMethod::RandomForest) j["bootstrap"] = true;
      return j;
    };
    for (auto m : {EnsembleMethod::AdaBoostR2, EnsembleMethod::GradientBoost, EnsembleMethod::HistGradientBoost,
                   EnsembleMethod::RandomForest, EnsembleMethod::ExtraTrees})
      t[std::string(ensemble_name(m))] = tree_ens(m);
    t["voting"] = ordered_json::object();
    const ordered_json fnn = {{"epochs", 200}, {"batch", 64}, {"learning_rate", 1e-3}, {"init_scale", 0.0}};
    for (auto v : {"fnn_base", "fnn_deep", "fnn_wide", "fnn_deep_wide"}) t[v] = fnn;
    return t;
  }();
  return table;
}

std::optional<EnsembleMethod> ensemble_id(const std::string& id) {
  for (auto m : {EnsembleMethod::AdaBoostR2, EnsembleMethod::GradientBoost, EnsembleMethod::HistGradientBoost,
                 EnsembleMethod::RandomForest, EnsembleMethod::ExtraTrees})
    if (ensemble_name(m) == id) return m;
  return std::nullopt;
}

double num(const ordered_json& h, const char* key) { return h.at(key).get<double>(); }

std::size_t count(const ordered_json& h, const char* key) {
  const double v = num(h, key);
  return static_cast<std::size_t>(v);
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidInput, key + " " + what, {key});
}

bool is_whole(double v) { return std::isfinite(v) && v >= 0 && v == std::floor(v); }

}  // namespace

const std::vector<std::string>& model_ids() {
  static const std::vector<std::string> ids = {
      "linreg",         "lasso",         "elasticnet",  "knn",      "cart",     "svr_linear",
      "adaboost_r2",    "gradient_boost", "hist_gradient_boost",   "random_forest", "extra_trees",
      "voting",         "fnn_base",      "fnn_deep",    "fnn_wide", "fnn_deep_wide"};
  return ids;
}

bool is_model_id(const std::string& id) { return default_table().count(id) > 0; }

std::string canonical_model_id(std::string_view name) {
  std::string id(trim(name));
  std::replace(id.begin(), id.end(), '-', '_');
  for (auto& c : id) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  static const std::map<std::string, std::string> aliases = {
      {"ols", "linreg"},           {"linear", "linreg"},       {"svr", "svr_linear"},
      {"adaboost", "adaboost_r2"}, {"gradb", "gradient_boost"}, {"gradboost", "gradient_boost"},
      {"histgb", "hist_gradient_boost"}, {"rf", "random_forest"}, {"et", "extra_trees"},
      {"vote", "voting"},          {"fnn_deepwide", "fnn_deep_wide"}};
  if (const auto it = aliases.find(id); it != aliases.end()) id = it->second;
  if (!is_model_id(id)) throw Error(ErrorCode::InvalidInput, "unknown model id '" + std::string(name) + "'", {"model"});
  return id;
}

nlohmann::ordered_json resolved_hyper(const ModelSpec& spec) {
  spec.validate();
  ordered_json h = default_table().at(spec.id);
  for (const auto& [k, v] : spec.hyper.items()) h[k] = v;
  return h;
}

void ModelSpec::validate() const {
  const auto it = default_table().find(id);
  if (it == default_table().end()) throw Error(ErrorCode::InvalidInput, "unknown model id '" + id + "'", {"model"});
  if (!hyper.is_object()) throw Error(ErrorCode::InvalidInput, "hyperparameters must be an object", {"hyper"});
  const auto& defaults = it->second;
  for (const auto& [k, v] : hyper.items()) {
    if (!defaults.contains(k)) throw Error(ErrorCode::InvalidInput, "'" + k + "' is not a " + id + " hyperparameter", {k});
    if (k == "bootstrap") {
      require(v.is_boolean(), k, "must be true or false");
      continue;
    }
    if (k == "lambda" && v.is_null()) continue;
    require(v.is_number(), k, "must be a number");
    const double d = v.get<double>();
    if (k == "k" || k == "n_estimators" || k == "min_leaf" || k == "epochs" || k == "batch" || k == "iterations" ||
        k == "max_features" || k == "histogram_bins" || k == "max_depth")
      require(is_whole(d), k, "must be a non-negative integer");
    if (k == "k" || k == "min_leaf" || k == "batch") require(d >= 1, k, "must be >= 1");
    if (k == "lambda" || k == "epsilon" || k == "init_scale") require(d >= 0, k, "must be >= 0");
    if (k == "C" || k == "learning_rate") require(d > 0, k, "must be > 0");
    if (k == "l1_ratio") require(d >= 0 && d <= 1, k, "must lie in [0, 1]");
    if (k == "histogram_bins") require(d >= 2 && d <= 256, k, "must lie in [2, 256]");
  }
}

ModelSpec ModelSpec::parse(const std::string& text) {
  ModelSpec spec;
  const auto colon = text.find(':');
  spec.id = canonical_model_id(text.substr(0, colon));
  if (colon != std::string::npos) {
    for (const auto& item : split(text.substr(colon + 1), ',')) {
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::InvalidInput, "expected key=value in '" + item + "'", {"model"});
      const std::string key(trim(item.substr(0, eq))), value(trim(item.substr(eq + 1)));
      if (value == "true" || value == "false")
        spec.hyper[key] = value == "true";
      else if (value == "null" || value == "cv")
        spec.hyper[key] = nullptr;
      else
        spec.hyper[key] = parse_double(value, key);
    }
  }
  spec.validate();
  return spec;
}

std::string ModelSpec::label() const {
  if (hyper.empty()) return id;
  std::string out = id + ":";
  bool first = true;
  for (const auto& [k, v] : hyper.items()) {
    if (!first) out += ",";
    first = false;
    out += k + "=" + (v.is_number() ? format_double(v.get<double>()) : v.dump());
  }
  return out;
}

nlohmann::ordered_json ModelSpec::to_json() const {
  ordered_json j;
  j["id"] = id;
  j["hyper"] = hyper;
  return j;
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  ModelSpec s{j.at("id").get<std::string>(), j.value("hyper", json::object())};
  s.validate();
  return s;
}

std::unique_ptr<Model> fit_model(const ModelSpec& spec, const Matrix& X, const Vector& y, std::uint64_t seed) {
  const auto h = resolved_hyper(spec);
  const auto& id = spec.id;
  if (id == "linreg") return std::make_unique<LinearModel>(fit_ols(X, y));
  if (id == "lasso" || id == "elasticnet") {
    const double ratio = id == "lasso" ? 1.0 : num(h, "l1_ratio");
    if (h.at("lambda").is_null()) return std::make_unique<LinearModel>(fit_elasticnet_cv(X, y, ratio, seed));
    const double lambda = num(h, "lambda");
    auto m = fit_elasticnet(X, y, lambda * ratio, lambda * (1 - ratio));
    m.variant = id;
    return std::make_unique<LinearModel>(std::move(m));
  }
  if (id == "knn") return std::make_unique<KnnModel>(fit_knn(X, y, count(h, "k")));
  if (id == "cart") {
    CartOptions opt;
    opt.max_depth = static_cast<int>(num(h, "max_depth"));
    opt.min_leaf = count(h, "min_leaf");
    return std::make_unique<RegressionTree>(fit_cart(X, y, opt));
  }
  if (id == "svr_linear") {
    SvrOptions opt;
    opt.iterations = count(h, "iterations");
    return std::make_unique<LinearModel>(fit_svr_linear(X, y, num(h, "epsilon"), num(h, "C"), opt));
  }
  if (const auto m = ensemble_id(id)) {
    auto es = EnsembleSpec::defaults(*m);
    es.seed = seed;
    es.n_estimators = count(h, "n_estimators");
    if (h.contains("learning_rate")) es.learning_rate = num(h, "learning_rate");
    es.tree.max_depth = static_cast<int>(num(h, "max_depth"));
    es.tree.min_leaf = count(h, "min_leaf");
    if (h.contains("histogram_bins")) es.histogram_bins = count(h, "histogram_bins");
    if (h.contains("max_features")) es.max_features = count(h, "max_features");
    if (h.contains("bootstrap")) es.bootstrap = h.at("bootstrap").get<bool>();
    return std::make_unique<TreeEnsemble>(fit_ensemble(es, X, y));
  }
  if (id == "voting") return std::make_unique<VotingModel>(fit_voting(X, y, seed));
  if (id.starts_with("fnn_")) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.epochs = count(h, "epochs");
    cfg.batch = count(h, "batch");
    cfg.learning_rate = num(h, "learning_rate");
    cfg.init_scale = num(h, "init_scale");
    return std::make_unique<FnnModel>(train_fnn(fnn_variant_from_name(id.substr(4)), X, y, cfg));
  }
  throw Error(ErrorCode::InvalidInput, "unknown model id '" + id + "'", {"model"});
}

std::unique_ptr<Model> model_from_json(const nlohmann::json& j) {
  const auto family = j.at("family").get<std::string>();
  if (family == "linear") return std::make_unique<LinearModel>(LinearModel::from_json(j));
  if (family == "knn") return std::make_unique<KnnModel>(KnnModel::from_json(j));
  if (family == "cart") return std::make_unique<RegressionTree>(RegressionTree::from_json(j));
  if (family == "fnn") return std::make_unique<FnnModel>(FnnModel::from_json(j));
  if (family == "voting") {
    std::vector<std::unique_ptr<Model>> members;
    for (const auto& m : j.at("members")) members.push_back(model_from_json(m));
    return std::make_unique<VotingModel>(std::move(members));
  }
  if (ensemble_id(family)) return std::make_unique<TreeEnsemble>(TreeEnsemble::from_json(j));
  throw Error(ErrorCode::ParseError, "unknown model family '" + family + "'", {"family"});
}

nlohmann::ordered_json ModelArtifact::to_json() const {
  ordered_json j;
  j["format"] = kModelFormat;
  j["tool_version"] = kToolVersion;
  j["name"] = name;
  j["model_id"] = spec.id;
  j["hyper"] = resolved_hyper(spec);
  j["overrides"] = spec.hyper;
  j["scenario"] = scenario_name(scenario);
  j["task"] = task_name(task);
  j["seed"] = seed;
  j["fold"] = fold ? ordered_json(*fold) : ordered_json();
  j["feature_names"] = feature_names;
  j["parameter_count"] = model->parameter_count();
  j["model"] = model->to_json();
  return j;
}

ModelArtifact ModelArtifact::from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != kModelFormat)
    throw Error(ErrorCode::ParseError, "not a " + std::string(kModelFormat) + " artifact", {"format"});
  ModelArtifact a;
  a.name = j.value("name", std::string());
  a.spec = ModelSpec{j.at("model_id").get<std::string>(), j.value("overrides", json::object())};
  a.spec.validate();
  const auto sc = scenario_from_name(j.at("scenario").get<std::string>());
  const auto tk = task_from_name(j.at("task").get<std::string>());
  if (!sc || !tk) throw Error(ErrorCode::ParseError, "artifact names an unknown scenario or task", {"scenario", "task"});
  a.scenario = *sc;
  a.task = *tk;
  a.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("fold") && !j["fold"].is_null()) a.fold = j["fold"].get<std::size_t>();
  a.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  a.model = model_from_json(j.at("model"));
  if (a.model->input_dim() != a.feature_names.size())
    throw Error(ErrorCode::ParseError, "artifact feature list does not match model width", {"feature_names"});
  return a;
}

void ModelArtifact::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidInput, "cannot write " + path);
  out << to_json().dump(1) << '\n';
}

ModelArtifact ModelArtifact::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidInput, "cannot read " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace finpred
