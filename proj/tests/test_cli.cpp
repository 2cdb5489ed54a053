#include <doctest.h>

#include <fstream>
#include <sstream>

#include "finpred/bayesnet.hpp"
#include "finpred/cli.hpp"
#include "finpred/evalharness.hpp"
#include "support.hpp"

using namespace finpred;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "finpred");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("cli pipeline end to end") {
  const auto d = testing::scratch_dir("cli");
  auto p = [&](const char* name) { return (d / name).string(); };
  auto ok = [](const Run& r) {
    INFO(r.out << r.err);
    CHECK(r.code == 0);
  };
  ok(cli({"synth", "--companies", "25", "--quarters", "6", "--seed", "3", "--cumulative", "--filings", p("f.jsonl"),
          "--macro", p("m.csv"), "--truth", p("t.jsonl")}));
  ok(cli({"ingest", "--filings", p("f.jsonl"), "--out", p("s.jsonl")}));
  // cumulative synth round trips to the ground truth file
  const auto ingested = read_statement_archive(p("s.jsonl")), truth = read_statement_archive(p("t.jsonl"));
  REQUIRE(ingested.size() == truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) CHECK(ingested[i].values == truth[i].values);

  ok(cli({"featurize", "--statements", p("s.jsonl"), "--macro", p("m.csv"), "--out", p("p.jsonl"), "--features-csv",
          p("x.csv"), "--targets-csv", p("y.csv"), "--scenario", "new_vars"}));
  CHECK(slurp(d / "x.csv").rfind("company_id,period,NCG,", 0) == 0);
  const auto g = cli({"grid", "--panel", p("p.jsonl"), "--models", "linreg,knn:k=3,cart:max_depth=3,min_leaf=2",
                      "--tasks", "ROA,OCG", "--scenarios", "base,new_vars", "--folds", "4", "--seed", "8", "--out",
                      p("r.tsv"), "--boxplot", p("box.csv"), "--scatter", p("sc.csv")});
  ok(g);
  const auto report = parse_report_tsv(slurp(d / "r.tsv"));
  CHECK(report.cells.size() == 2 * 2 * 3);
  CHECK(report.find(Task::ROA, ScenarioId::Base, "cart:max_depth=3,min_leaf=2") != nullptr);
  CHECK(report.meta["seed"] == 8);
  CHECK(g.out.find("digest " + p("r.tsv") + " " + sha256_hex(slurp(d / "r.tsv"))) != std::string::npos);

  ok(cli({"report", "--in", p("r.tsv"), "--index", "base", "--out", p("i.tsv")}));
  CHECK(slurp(d / "i.tsv").rfind("# finpred-indexed v1", 0) == 0);
  const auto table = cli({"report", "--in", p("r.tsv")});
  ok(table);
  CHECK(table.out.rfind("task\tmodel", 0) == 0);

  ok(cli({"train", "--panel", p("p.jsonl"), "--model", "ols", "--task", "NetMargin", "--scenario", "base", "--seed",
          "4", "--out", p("a.model.json")}));
  const auto art = ModelArtifact::load(p("a.model.json"));
  CHECK(art.spec.id == "linreg");
  CHECK(art.seed == 4);
  CHECK(art.model->parameter_count() == 25);
  const auto pr = cli({"predict", "--model", p("a.model.json"), "--panel", p("p.jsonl")});
  ok(pr);
  CHECK(pr.out.rfind("company,period,actual,predicted\n", 0) == 0);

  ok(cli({"bn-build", "--panel", p("p.jsonl"), "--out", p("bn.json"), "--seed", "2"}));
  const auto q = cli({"bn-query", "--spec", p("bn.json"), "--evidence", "ROA=0.6,YieldCurve=0.4"});
  ok(q);
  const auto post = nlohmann::json::parse(q.out);
  CHECK(post["node"] == std::string(kTargetNode));
  CHECK(post.contains("expected_raw"));
  const auto latent = cli({"bn-query", "--spec", p("bn.json"), "--evidence", "CompanyPerformance=0.5"});
  CHECK(latent.code == 1);
  CHECK(latent.err.find("LatentEvidence") != std::string::npos);
}

TEST_CASE("cli usage errors") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"nope"}).code == 2);
  CHECK(cli({"grid"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
  const auto v = cli({"--version"});
  CHECK(v.code == 0);
  CHECK(v.out.find("finpred") != std::string::npos);
  CHECK(cli({"ingest", "--filings", "/nonexistent/x", "--out", "/tmp/y"}).code == 2);
}

TEST_CASE("cli runtime errors exit 1") {
  const auto d = testing::scratch_dir("cli-err");
  const auto panel = (d / "p.jsonl").string();
  write_panel(panel, testing::small_panel());
  const auto r = cli({"grid", "--panel", panel, "--models", "nosuchmodel", "--out", (d / "r.tsv").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("nosuchmodel") != std::string::npos);
  const auto t = cli({"train", "--panel", panel, "--model", "linreg", "--task", "Bogus", "--out", (d / "a").string()});
  CHECK(t.code == 1);
}
