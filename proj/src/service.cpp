#include "finpred/service.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <httplib.h>

#include "finpred/error.hpp"
#include "finpred/version.hpp"

namespace finpred {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

nlohmann::ordered_json error_body(const std::string& code, const std::string& message,
                                  const std::vector<std::string>& fields) {
  return {{"error", {{"code", code}, {"message", message}, {"fields", fields}}}};
}

ArtifactSet ArtifactSet::load_directory(const std::string& dir) {
  ArtifactSet set;
  set.source = dir;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::InvalidInput, "artifact directory " + dir + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    const auto name = p.filename().string();
    if (name.size() > 11 && name.ends_with(".model.json")) {
      auto a = std::make_shared<ModelArtifact>(ModelArtifact::load(p.string()));
      const std::string key = a->name.empty() ? name.substr(0, name.size() - 11) : a->name;
      if (set.models.count(key)) throw Error(ErrorCode::InvalidInput, "two artifacts named '" + key + "'", {key});
      set.models.emplace(key, std::move(a));
    } else if (name == "bn.json") {
      std::ifstream in(p);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, p.string() + ": " + e.what());
      }
      set.bn = std::make_shared<BayesNet>(BnSpec::from_json(j));
    }
  }
  return set;
}

Service::Service(ArtifactSet artifacts) : artifacts_(std::make_shared<const ArtifactSet>(std::move(artifacts))) {}

void Service::reload(ArtifactSet artifacts) {
  auto next = std::make_shared<const ArtifactSet>(std::move(artifacts));
  std::lock_guard lock(mutex_);
  artifacts_ = std::move(next);
}

std::shared_ptr<const ArtifactSet> Service::snapshot() const {
  std::lock_guard lock(mutex_);
  return artifacts_;
}

namespace {

HttpResult fail(int status, const std::string& code, const std::string& message, std::vector<std::string> fields = {}) {
  return {status, error_body(code, message, fields)};
}

int status_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::ParseError: return 400;
    default: return 422;
  }
}

// Request bodies are read into name -> number maps; anything else is a 422.
std::map<std::string, double> number_map(const json& j, const std::string& field) {
  std::map<std::string, double> out;
  if (j.is_null()) return out;
  if (!j.is_object()) throw Error(ErrorCode::InvalidInput, field + " must be an object", {field});
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) throw Error(ErrorCode::InvalidInput, field + "." + k + " must be a number", {k});
    out[k] = v.get<double>();
  }
  return out;
}

bool known_input_name(const std::string& name) { return feature_from_name(name).has_value(); }

std::vector<double> feature_row(const ModelArtifact& a, const std::map<std::string, double>& values,
                                bool reject_extra) {
  std::vector<std::string> missing, extra;
  std::vector<double> row;
  for (const auto& f : a.feature_names) {
    const auto it = values.find(f);
    if (it == values.end())
      missing.push_back(f);
    else
      row.push_back(it->second);
  }
  if (reject_extra)
    for (const auto& [k, v] : values)
      if (std::find(a.feature_names.begin(), a.feature_names.end(), k) == a.feature_names.end()) extra.push_back(k);
  if (!missing.empty()) throw Error(ErrorCode::MissingFeature, "missing features for " + a.name, missing);
  if (!extra.empty()) throw Error(ErrorCode::InvalidInput, "features not used by " + a.name, extra);
  return row;
}

const std::array<std::pair<std::string_view, Feature>, 5> kMacroEvidence = {{
    {"Employment", Feature::UNRATE},
    {"GDPChange", Feature::GDP_change},
    {"YieldCurve", Feature::T10Y3M},
    {"InterestRate10Y", Feature::DGS10},
    {"ExpectedInflation", Feature::T5YIE},
}};

ordered_json bn_summary(const BayesNet& bn, const Posterior& p) {
  ordered_json j = posterior_to_json(p, bn.spec().stats(p.node));
  if (p.node == kTargetNode) {
    const auto& t = bn.spec().target;
    const auto ev = expected_net_margin(p, {t.raw_min, t.raw_max});
    j["expected_normalized"] = ev.normalized;
    j["expected_raw"] = ev.raw;
  }
  return j;
}

Evidence parse_evidence(const BayesNet& bn, const json& req) {
  const auto values = number_map(req.value("evidence", json::object()), "evidence");
  const std::string scale = req.value("scale", std::string("normalized"));
  if (scale == "raw") return bn.normalize(values);
  if (scale != "normalized") throw Error(ErrorCode::InvalidInput, "scale must be normalized or raw", {"scale"});
  return Evidence(values.begin(), values.end());
}

}  // namespace

HttpResult Service::models() const {
  const auto set = snapshot();
  ordered_json list = ordered_json::array();
  for (const auto& [name, a] : set->models)
    list.push_back({{"name", name},
                    {"model_id", a->spec.id},
                    {"task", task_name(a->task)},
                    {"scenario", scenario_name(a->scenario)},
                    {"seed", a->seed},
                    {"parameter_count", a->model->parameter_count()},
                    {"feature_names", a->feature_names}});
  ordered_json bn = {{"loaded", static_cast<bool>(set->bn)}};
  if (set->bn) {
    ordered_json nodes = ordered_json::array();
    for (auto n : kMacroNodes) nodes.push_back(n);
    for (auto n : kIndicatorNodes) nodes.push_back(n);
    nodes.push_back(kTargetNode);
    bn["observable_nodes"] = std::move(nodes);
    bn["latent_nodes"] = {kLatentNode};
    const auto& t = set->bn->spec().target;
    bn["target_bounds"] = {t.raw_min, t.raw_max};
  }
  return {200, {{"tool_version", kToolVersion}, {"models", std::move(list)}, {"bn", std::move(bn)}}};
}

HttpResult Service::predict(const json& req) const {
  const auto set = snapshot();
  const std::string name = req.value("model", std::string());
  const auto it = set->models.find(name);
  if (it == set->models.end()) return fail(404, "UnknownModel", "no model named '" + name + "'", {"model"});
  const auto& a = *it->second;
  const auto row = feature_row(a, number_map(req.value("features", json::object()), "features"), true);
  ordered_json out;
  out["model"] = name;
  out["model_id"] = a.spec.id;
  out["task"] = task_name(a.task);
  out["scenario"] = scenario_name(a.scenario);
  out["prediction"] = a.model->predict_one(row);
  return {200, std::move(out)};
}

HttpResult Service::whatif(const json& req) const {
  const auto set = snapshot();
  const std::string id = req.value("model", std::string());
  const bool include_bn = req.value("include_bn", false);
  if (include_bn && !set->bn) return fail(409, "NoBayesNet", "BN requested but no spec is loaded", {"include_bn"});

  // One artifact per task: exact name first, else every artifact of that model id.
  std::map<Task, std::pair<std::string, std::shared_ptr<const ModelArtifact>>> chosen;
  if (const auto it = set->models.find(id); it != set->models.end()) {
    chosen[it->second->task] = {it->first, it->second};
  } else {
    std::string canon;
    try {
      canon = canonical_model_id(id);
    } catch (const Error&) {
    }
    for (const auto& [name, a] : set->models)
      if (a->spec.id == canon && !chosen.count(a->task)) chosen[a->task] = {name, a};
  }
  if (chosen.empty()) return fail(404, "UnknownModel", "no loaded model matches '" + id + "'", {"model"});

  auto base = number_map(req.value("features", json::object()), "features");
  for (const auto& [k, v] : number_map(req.value("macro", json::object()), "macro")) {
    if (base.count(k)) throw Error(ErrorCode::InvalidInput, k + " given in both features and macro", {k});
    base[k] = v;
  }
  std::vector<std::string> unknown;
  for (const auto& [k, v] : base)
    if (!known_input_name(k)) unknown.push_back(k);
  if (!unknown.empty()) throw Error(ErrorCode::InvalidInput, "unknown feature names", unknown);

  std::set<std::string> usable;
  for (const auto& [t, na] : chosen) usable.insert(na.second->feature_names.begin(), na.second->feature_names.end());

  std::vector<std::pair<std::string, double>> overrides;
  const json ov = req.value("overrides", json::array());
  if (!ov.is_array()) throw Error(ErrorCode::InvalidInput, "overrides must be a list", {"overrides"});
  std::vector<std::string> bad;
  for (const auto& o : ov) {
    if (!o.is_object() || !o.contains("feature") || !o["feature"].is_string() || !o.contains("value") ||
        !o["value"].is_number())
      throw Error(ErrorCode::InvalidInput, "each override needs a feature name and a numeric value", {"overrides"});
    const auto f = o["feature"].get<std::string>();
    if (!usable.count(f)) bad.push_back(f);
    overrides.emplace_back(f, o["value"].get<double>());
  }
  if (!bad.empty()) throw Error(ErrorCode::InvalidInput, "overrides outside the model feature set", bad);

  auto evaluate = [&](const std::map<std::string, double>& values) {
    std::map<Task, double> out;
    for (const auto& [t, na] : chosen) out[t] = na.second->model->predict_one(feature_row(*na.second, values, false));
    return out;
  };
  const auto baseline = evaluate(base);

  ordered_json res;
  res["model"] = id;
  ordered_json used = ordered_json::object();
  for (const auto& [t, na] : chosen) used[std::string(task_name(t))] = na.first;
  res["artifacts"] = std::move(used);
  ordered_json b = ordered_json::object();
  for (const auto& [t, v] : baseline) b[std::string(task_name(t))] = v;
  res["baseline"] = std::move(b);
  ordered_json rows = ordered_json::array();
  for (const auto& [f, v] : overrides) {
    auto values = base;
    values[f] = v;
    const auto pred = evaluate(values);
    ordered_json p = ordered_json::object(), d = ordered_json::object();
    for (const auto& [t, x] : pred) {
      p[std::string(task_name(t))] = x;
      d[std::string(task_name(t))] = x - baseline.at(t);
    }
    rows.push_back({{"feature", f}, {"value", v}, {"predictions", std::move(p)}, {"deltas", std::move(d)}});
  }
  res["overrides"] = std::move(rows);

  if (set->bn) {
    const auto& bn = *set->bn;
    std::map<std::string, double> indicators;
    std::vector<std::string> missing;
    for (auto n : kIndicatorNodes) {
      const auto it = base.find(std::string(n));
      if (it == base.end())
        missing.push_back(std::string(n));
      else
        indicators[std::string(n)] = it->second;
    }
    ordered_json gate;
    gate["band_sd"] = 1.0;
    ordered_json detail = ordered_json::object();
    bool within = missing.empty();
    for (const auto& ind : bn.spec().indicators) {
      const auto it = indicators.find(ind.name);
      if (it == indicators.end()) continue;
      const bool in = std::abs(it->second - ind.raw_mean) <= ind.raw_sd;
      within = within && in;
      detail[ind.name] = {{"value", it->second}, {"mean", ind.raw_mean}, {"sd", ind.raw_sd}, {"within", in}};
    }
    gate["within_band"] = within;
    gate["indicators"] = std::move(detail);
    gate["missing"] = missing;
    res["gate"] = std::move(gate);
    if (include_bn && within) {
      std::map<std::string, double> raw = indicators;
      for (const auto& [node, feat] : kMacroEvidence) {
        const auto it = base.find(std::string(feature_name(feat)));
        if (it == base.end()) continue;
        raw[std::string(node)] = feat == Feature::UNRATE ? employment_rate(it->second) : it->second;
      }
      res["bn"] = bn_summary(bn, bn.query(bn.normalize(raw), std::string(kTargetNode)));
    }
  }
  return {200, std::move(res)};
}

HttpResult Service::bn_query(const json& req) const {
  const auto set = snapshot();
  if (!set->bn) return fail(409, "NoBayesNet", "no BN spec is loaded");
  const auto& bn = *set->bn;
  const std::string node = req.value("query", std::string(kTargetNode));
  return {200, bn_summary(bn, bn.query(parse_evidence(bn, req), node))};
}

HttpResult Service::bn_batch(const json& req) const {
  const auto set = snapshot();
  if (!set->bn) return fail(409, "NoBayesNet", "no BN spec is loaded");
  const auto& bn = *set->bn;
  const json cases = req.value("cases", json());
  if (!cases.is_array()) throw Error(ErrorCode::InvalidInput, "cases must be a list", {"cases"});
  ordered_json results = ordered_json::array();
  for (std::size_t i = 0; i < cases.size(); ++i) {
    try {
      json c = cases[i];
      if (!c.is_object()) throw Error(ErrorCode::InvalidInput, "case must be an object");
      if (!c.contains("scale") && req.contains("scale")) c["scale"] = req["scale"];
      const std::string node = c.value("query", req.value("query", std::string(kTargetNode)));
      results.push_back(bn_summary(bn, bn.query(parse_evidence(bn, c), node)));
    } catch (const Error& e) {
      std::vector<std::string> fields;
      for (const auto& f : e.fields()) fields.push_back("cases[" + std::to_string(i) + "]." + f);
      if (fields.empty()) fields.push_back("cases[" + std::to_string(i) + "]");
      throw Error(e.code(), "case " + std::to_string(i) + ": " + e.what(), fields);
    }
  }
  return {200, {{"results", std::move(results)}}};
}

HttpResult Service::handle(const std::string& method, const std::string& path, const std::string& body) const {
  try {
    if (path == "/v1/models") {
      if (method != "GET") return fail(405, "MethodNotAllowed", "use GET", {});
      return models();
    }
    using Handler = HttpResult (Service::*)(const json&) const;
    static const std::map<std::string, Handler> posts = {{"/v1/predict", &Service::predict},
                                                         {"/v1/whatif", &Service::whatif},
                                                         {"/v1/bn/query", &Service::bn_query},
                                                         {"/v1/bn/batch", &Service::bn_batch}};
    const auto it = posts.find(path);
    if (it == posts.end()) return fail(404, "NotFound", "no endpoint " + path, {});
    if (method != "POST") return fail(405, "MethodNotAllowed", "use POST", {});
    json req;
    try {
      req = json::parse(body.empty() ? std::string("{}") : body);
    } catch (const json::exception& e) {
      return fail(400, "ParseError", std::string("request body is not valid JSON: ") + e.what(), {});
    }
    if (!req.is_object()) return fail(400, "ParseError", "request body must be an object", {});
    return (this->*(it->second))(req);
  } catch (const Error& e) {
    return fail(status_for(e.code()), std::string(to_string(e.code())), e.what(), e.fields());
  } catch (const json::exception& e) {
    return fail(422, "InvalidInput", e.what(), {});
  }
}

bool Service::serve(const std::string& host, int port) {
  httplib::Server server;
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body.dump(), "application/json");
  };
  for (const char* p : {"/v1/models"}) server.Get(p, route);
  for (const char* p : {"/v1/predict", "/v1/whatif", "/v1/bn/query", "/v1/bn/batch"}) server.Post(p, route);
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    res.set_content(error_body("NotFound", "no endpoint " + req.path).dump(), "application/json");
  });
  if (!server.bind_to_port(host, port)) return false;
  {
    std::lock_guard lock(mutex_);
    server_ = &server;
  }
  const bool ok = server.listen_after_bind();
  std::lock_guard lock(mutex_);
  server_ = nullptr;
  return ok;
}

void Service::stop() {
  std::lock_guard lock(mutex_);
  if (server_) server_->stop();
}

}  // namespace finpred
