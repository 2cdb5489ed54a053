#include <doctest.h>

#include <chrono>
#include <fstream>
#include <cmath>
#include <numeric>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "finpred/evalharness.hpp"
#include "finpred/service.hpp"
#include "support.hpp"

// after Eigen: resolv.h defines _res
#include <httplib.h>

using namespace finpred;
using nlohmann::json;

namespace {

std::shared_ptr<const ModelArtifact> artifact(const std::string& name, const std::string& id, Task task) {
  const auto& panel = testing::small_panel();
  auto a = std::make_shared<ModelArtifact>();
  a->name = name;
  a->spec = ModelSpec::parse(id);
  a->task = task;
  a->scenario = ScenarioId::AllVariables;
  a->seed = 5;
  a->feature_names = scenario_feature_names(a->scenario);
  a->model = fit_model(a->spec, scenario_matrix(panel, a->scenario), task_vector(panel, task), 5);
  return a;
}

ArtifactSet artifacts(bool with_bn = true) {
  ArtifactSet s;
  s.models["roa"] = artifact("roa", "linreg", Task::ROA);
  s.models["nm"] = artifact("nm", "linreg", Task::NetMargin);
  s.models["roa-cart"] = artifact("roa-cart", "cart", Task::ROA);
  if (with_bn) s.bn = std::make_shared<BayesNet>(build_bn_spec(testing::small_panel()));
  return s;
}

const Service& service() {
  static const Service svc(artifacts());
  return svc;
}

// Panel means: inside the average band by construction.
json average_features() {
  const auto& panel = testing::small_panel();
  json f = json::object();
  for (std::size_t k = 0; k < kFeatureCount; ++k) {
    double m = 0;
    for (const auto& o : panel.observations) m += *o.features[k];
    f[std::string(feature_name(static_cast<Feature>(k)))] = m / static_cast<double>(panel.observations.size());
  }
  return f;
}

json post(const std::string& path, const json& body, int expect) {
  const auto r = service().handle("POST", path, body.dump());
  INFO(path << " -> " << r.body.dump());
  CHECK(r.status == expect);
  return json::parse(r.body.dump());
}

// Ask the kernel for an unused port, then release it.
int free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) return -1;
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  socklen_t len = sizeof addr;
  int port = -1;
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0 &&
      ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) == 0)
    port = ntohs(addr.sin_port);
  ::close(fd);
  return port;
}

}  // namespace

TEST_CASE("models endpoint lists artifacts and BN nodes") {
  const auto r = service().handle("GET", "/v1/models", "");
  CHECK(r.status == 200);
  CHECK(r.body["models"].size() == 3);
  CHECK(r.body["bn"]["loaded"] == true);
  CHECK(r.body["bn"]["latent_nodes"][0] == std::string(kLatentNode));
}

TEST_CASE("routing errors") {
  CHECK(service().handle("GET", "/v1/nothing", "").status == 404);
  CHECK(service().handle("GET", "/v1/predict", "").status == 405);
  CHECK(service().handle("POST", "/v1/models", "").status == 405);
  const auto bad = service().handle("POST", "/v1/predict", "{not json");
  CHECK(bad.status == 400);
  CHECK(bad.body["error"]["code"] == "ParseError");
  CHECK(service().handle("POST", "/v1/predict", "[1,2]").status == 400);
}

TEST_CASE("predict equals the model") {
  const auto f = average_features();
  const auto r = post("/v1/predict", {{"model", "roa"}, {"features", f}}, 200);
  const auto a = service().snapshot()->models.at("roa");
  std::vector<double> row;
  for (const auto& n : a->feature_names) row.push_back(f[n].get<double>());
  CHECK(r["prediction"].get<double>() == a->model->predict_one(row));
  CHECK(r["task"] == "ROA");
}

TEST_CASE("predict validation") {
  auto f = average_features();
  f.erase("ROA");
  const auto missing = post("/v1/predict", {{"model", "roa"}, {"features", f}}, 422);
  CHECK(missing["error"]["code"] == "MissingFeature");
  CHECK(missing["error"]["fields"] == json::array({"ROA"}));
  auto g = average_features();
  g["Bogus"] = 1.0;
  const auto extra = post("/v1/predict", {{"model", "roa"}, {"features", g}}, 422);
  CHECK(extra["error"]["fields"] == json::array({"Bogus"}));
  post("/v1/predict", {{"model", "nope"}, {"features", average_features()}}, 404);
  auto h = average_features();
  h["ROA"] = "high";
  post("/v1/predict", {{"model", "roa"}, {"features", h}}, 422);
}

TEST_CASE("whatif deltas are consistent") {
  const auto f = average_features();
  const double roa = f["ROA"].get<double>();
  const json req = {{"model", "linreg"},
                    {"features", f},
                    {"overrides", {{{"feature", "ROA"}, {"value", roa * 1.1}}, {{"feature", "ROA"}, {"value", roa * 1.2}}}},
                    {"include_bn", true}};
  const auto r = post("/v1/whatif", req, 200);
  CHECK(r["artifacts"]["ROA"] == "roa");
  CHECK(r["artifacts"]["NetMargin"] == "nm");
  const auto& rows = r["overrides"];
  REQUIRE(rows.size() == 2);
  for (const auto& task : {"ROA", "NetMargin"}) {
    const double base = r["baseline"][task];
    const double b = rows[0]["predictions"][task], c = rows[1]["predictions"][task];
    CHECK(rows[0]["deltas"][task].get<double>() == doctest::Approx(b - base));
    // delta(A,C) = delta(A,B) + delta(B,C)
    CHECK(rows[1]["deltas"][task].get<double>() == doctest::Approx(rows[0]["deltas"][task].get<double>() + (c - b)));
  }
  CHECK(r["gate"]["within_band"] == true);
  REQUIRE(r.contains("bn"));
  const auto masses = r["bn"]["masses"].get<std::vector<double>>();
  CHECK(std::abs(std::accumulate(masses.begin(), masses.end(), 0.0) - 1.0) < 1e-9);
  CHECK(r["bn"].contains("expected_raw"));
}

TEST_CASE("whatif gate closes far from the panel means") {
  auto f = average_features();
  f["ROA"] = f["ROA"].get<double>() + 100.0;
  const auto r = post("/v1/whatif", {{"model", "roa"}, {"features", f}, {"include_bn", true}}, 200);
  CHECK(r["gate"]["within_band"] == false);
  CHECK_FALSE(r.contains("bn"));
  CHECK(r["artifacts"].size() == 1);
}

TEST_CASE("whatif validation") {
  const auto f = average_features();
  post("/v1/whatif", {{"model", "svr_linear"}, {"features", f}}, 404);
  post("/v1/whatif", {{"model", "roa"}, {"features", f}, {"overrides", {{{"feature", "Nope"}, {"value", 1}}}}}, 422);
  post("/v1/whatif", {{"model", "roa"}, {"features", f}, {"overrides", {{{"feature", "ROA"}}}}}, 422);
  const Service no_bn(artifacts(false));
  const auto r = no_bn.handle("POST", "/v1/whatif", json{{"model", "roa"}, {"features", f}, {"include_bn", true}}.dump());
  CHECK(r.status == 409);
}

TEST_CASE("bn query and batch") {
  const auto one = post("/v1/bn/query", {{"evidence", {{"ROA", 0.7}}}}, 200);
  CHECK(one["node"] == std::string(kTargetNode));
  const auto direct = service().snapshot()->bn->query({{"ROA", 0.7}}, std::string(kTargetNode));
  CHECK(one["expected_value"].get<double>() == direct.mean);
  const auto batch = post("/v1/bn/batch", {{"cases", {{{"evidence", {{"ROA", 0.7}}}}, {{"evidence", {{"ROE", 0.2}}}, {"query", "ROA"}}}}}, 200);
  REQUIRE(batch["results"].size() == 2);
  CHECK(batch["results"][0] == one);
  CHECK(batch["results"][1]["node"] == "ROA");
  const auto bad = post("/v1/bn/batch", {{"cases", {{{"evidence", {{"ROA", 0.7}}}}, {{"evidence", {{"ROA", 7}}}}}}}, 422);
  CHECK(bad["error"]["fields"][0].get<std::string>().rfind("cases[1]", 0) == 0);
  const auto latent = post("/v1/bn/query", {{"evidence", {{std::string(kLatentNode), 0.5}}}}, 422);
  CHECK(latent["error"]["code"] == "LatentEvidence");
  post("/v1/bn/query", {{"evidence", {{"ROA", 0.5}}}, {"scale", "weird"}}, 422);
}

TEST_CASE("reload swaps the artifact set") {
  Service svc(artifacts(false));
  const auto before = svc.snapshot();
  svc.reload(ArtifactSet{});
  CHECK(svc.snapshot()->models.empty());
  CHECK(before->models.size() == 3);  // old snapshot stays valid
}

TEST_CASE("artifact directory loading") {
  const auto dir = testing::scratch_dir("artifacts");
  const auto set = artifacts();
  set.models.at("roa")->save((dir / "roa.model.json").string());
  {
    std::ofstream out(dir / "bn.json");
    out << set.bn->spec().to_json().dump();
  }
  const auto loaded = ArtifactSet::load_directory(dir.string());
  CHECK(loaded.models.size() == 1);
  CHECK(loaded.bn != nullptr);
  CHECK_THROWS(ArtifactSet::load_directory((dir / "missing").string()));
}

TEST_CASE("live http round trip") {
  Service svc(artifacts());
  const int port = free_port();
  REQUIRE(port > 0);
  std::thread th;
  th = std::thread([&] { svc.serve("127.0.0.1", port); });
  struct Join {
    Service& s;
    std::thread& t;
    ~Join() {
      s.stop();
      if (t.joinable()) t.join();
    }
  } join{svc, th};
  httplib::Client cli("127.0.0.1", port);
  httplib::Result res;
  for (int i = 0; i < 100 && !res; ++i) {
    res = cli.Get("/v1/models");
    if (!res) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  const auto q = cli.Post("/v1/bn/query", std::string(R"({"evidence":{"ROA":0.5}})"), std::string("application/json"));
  INFO(httplib::to_string(q.error()));
  REQUIRE(q);
  CHECK(q->status == 200);
  const auto miss = cli.Get("/v1/elsewhere");
  REQUIRE(miss);
  CHECK(miss->status == 404);
}
