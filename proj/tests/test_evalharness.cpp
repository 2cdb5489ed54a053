#include <doctest.h>

#include <atomic>
#include <cmath>
#include <mutex>
#include <set>

#include "finpred/error.hpp"
#include "finpred/evalharness.hpp"
#include "finpred/random.hpp"
#include "support.hpp"

using namespace finpred;

namespace {

GridConfig small_grid() {
  GridConfig g;
  g.tasks = {Task::ROA, Task::OCG};
  g.scenarios = {ScenarioId::Base, ScenarioId::NewVars};
  g.models = {ModelSpec::parse("linreg"), ModelSpec::parse("knn:k=3"), ModelSpec::parse("cart")};
  g.folds = 5;
  g.seed = 17;
  return g;
}

}  // namespace

TEST_CASE("published squared errors aggregate to 0.024") {
  const std::vector<double> se{0.043, 0.002, 0.014, 0.051, 0.009, 0.018, 0.004, 0.004, 0.018, 0.007, 0.091};
  std::vector<double> pred(se.size()), truth(se.size(), 0.0);
  for (std::size_t i = 0; i < se.size(); ++i) pred[i] = std::sqrt(se[i]);
  CHECK(std::abs(mse(truth, pred) - 0.024) <= 0.0005);
}

TEST_CASE("mse and variance basics") {
  const std::vector<double> a{1, 2, 3}, b{1, 2, 5};
  CHECK(mse(a, b) == doctest::Approx(4.0 / 3.0));
  CHECK_THROWS_AS(mse(a, std::vector<double>{1, 2}), Error);
  CHECK_THROWS_AS(mse(std::vector<double>{}, std::vector<double>{}), Error);
  CHECK(sample_variance(std::vector<double>{1, 2, 3, 4}) == doctest::Approx(5.0 / 3.0));
  CHECK(sample_variance(std::vector<double>{7}) == 0.0);
}

TEST_CASE("sha256 known vector") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("grid fits only on training rows and covers every row once") {
  const auto& panel = testing::small_panel();
  std::mutex mu;
  std::size_t calls = 0;
  std::vector<int> tested(panel.observations.size(), 0);
  auto cfg = small_grid();
  cfg.tasks = {Task::ROA};
  cfg.scenarios = {ScenarioId::Base};
  cfg.models = {ModelSpec::parse("linreg")};
  const auto report = run_grid(panel, cfg, [&](const GridCell&, std::size_t, std::span<const std::size_t> train,
                                               std::span<const std::size_t> test, const Model&) {
    std::lock_guard lock(mu);
    ++calls;
    std::set<std::size_t> tr(train.begin(), train.end());
    for (auto i : test) {
      CHECK_FALSE(tr.count(i));
      tested[i]++;
    }
    CHECK(train.size() + test.size() == panel.observations.size());
  });
  CHECK(calls == 5);
  for (int t : tested) CHECK(t == 1);
  REQUIRE(report.cells.size() == 1);
  const auto& c = report.cells[0];
  CHECK(c.ok());
  REQUIRE(c.fold_mse.size() == 5);
  double m = 0;
  for (double v : c.fold_mse) m += v / 5;
  CHECK(c.mean_mse == doctest::Approx(m).epsilon(1e-14));
  CHECK(c.var_mse == doctest::Approx(sample_variance(c.fold_mse)).epsilon(1e-12));
}

TEST_CASE("grid fold mse equals the mse of a manual refit") {
  const auto& panel = testing::small_panel();
  auto cfg = small_grid();
  cfg.tasks = {Task::ROA};
  cfg.scenarios = {ScenarioId::Base};
  cfg.models = {ModelSpec::parse("linreg")};
  const auto report = run_grid(panel, cfg);
  const auto plan = kfold_split(panel.observations.size(), 5, cfg.seed);
  const Matrix X = scenario_matrix(panel, ScenarioId::Base);
  const Vector y = task_vector(panel, Task::ROA);
  for (std::size_t f = 0; f < 5; ++f) {
    const auto tr = plan.train_rows(f), te = plan.test_rows(f);
    const auto m = fit_ols(take_rows(X, tr), take_rows(y, tr));
    const Vector p = m.predict(take_rows(X, te));
    const Vector yt = take_rows(y, te);
    CHECK(report.cells[0].fold_mse[f] == doctest::Approx(mse({yt.data(), (size_t)yt.size()}, {p.data(), (size_t)p.size()})).epsilon(1e-12));
  }
}

TEST_CASE("grid output is identical serial and parallel") {
  const auto& panel = testing::small_panel();
  auto cfg = small_grid();
  const auto a = run_grid(panel, cfg);
  cfg.exec = Exec::Parallel;
  const auto b = run_grid(panel, cfg);
  CHECK(report_tsv(a) == report_tsv(b));
  CHECK(a.cells.size() == 2 * 2 * 3);
}

TEST_CASE("a failing cell is recorded and the grid continues") {
  const auto& panel = testing::small_panel();
  auto cfg = small_grid();
  cfg.models = {ModelSpec::parse("linreg"), ModelSpec::parse("knn:k=100000")};
  const auto r = run_grid(panel, cfg);
  for (const auto& c : r.cells) {
    if (c.model == "linreg")
      CHECK(c.ok());
    else {
      CHECK_FALSE(c.ok());
      CHECK(c.error.find("InvalidK") != std::string::npos);
      CHECK(c.error.find('\t') == std::string::npos);
    }
  }
}

TEST_CASE("report tsv round trip and digest") {
  const auto& panel = testing::small_panel();
  const auto r = run_grid(panel, small_grid());
  const auto text = report_tsv(r);
  CHECK(text.rfind("# finpred-report v1\n", 0) == 0);
  const auto back = parse_report_tsv(text);
  CHECK(report_tsv(back) == text);
  CHECK(report_digest(back) == sha256_hex(text));
  CHECK(r.meta["seed"] == 17);
  CHECK(r.meta["dataset_sha256"] == panel_digest(panel));
  CHECK_THROWS_AS(parse_report_tsv("garbage"), Error);
}

TEST_CASE("index report scales by the baseline cell") {
  const auto& panel = testing::small_panel();
  const auto r = run_grid(panel, small_grid());
  const auto idx = index_report(r, ScenarioId::Base);
  for (const auto& c : idx.cells) {
    const auto* orig = r.find(c.task, c.scenario, c.model);
    const auto* base = r.find(c.task, ScenarioId::Base, c.model);
    REQUIRE(orig);
    REQUIRE(base);
    if (c.scenario == ScenarioId::Base) CHECK(c.mean_mse == 100.0);
    const double f = 100.0 / base->mean_mse;
    CHECK(c.mean_mse == doctest::Approx(orig->mean_mse * f).epsilon(1e-12));
    CHECK(c.var_mse == doctest::Approx(orig->var_mse * f * f).epsilon(1e-12));
  }
  CHECK_THROWS_AS(index_report(r, ScenarioId::FinSt), Error);
}

TEST_CASE("box statistics") {
  const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 100};
  const auto b = box_stats(v);
  CHECK(b.min == 1);
  CHECK(b.max == 100);
  CHECK(b.median == 5.5);
  CHECK(b.q1 == doctest::Approx(3.25));
  CHECK(b.q3 == doctest::Approx(7.75));
  CHECK(b.whisker_low == 1);
  CHECK(b.whisker_high == 9);
}

TEST_CASE("correlation matrix matches a direct computation") {
  Rng rng(3);
  Matrix X = testing::random_matrix(rng, 50, 5);
  X.col(4).setConstant(2.0);
  X.col(3) = -2 * X.col(0) + X.col(1) * 0.1;
  const auto c = correlation_matrix(X);
  const auto cp = correlation_matrix(X, Exec::Parallel);
  CHECK(c.r == cp.r);
  CHECK(c.constant == std::vector<bool>{false, false, false, false, true});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const Eigen::VectorXd a = X.col(i).array() - X.col(i).mean(), b = X.col(j).array() - X.col(j).mean();
      CHECK(c.r(i, j) == doctest::Approx(a.dot(b) / std::sqrt(a.squaredNorm() * b.squaredNorm())).epsilon(1e-12));
    }
  CHECK(c.r(4, 4) == 1.0);
  CHECK(c.r(0, 4) == 0.0);
}

TEST_CASE("scatter csv needs kept predictions") {
  const auto& panel = testing::small_panel();
  auto cfg = small_grid();
  cfg.keep_predictions = true;
  const auto r = run_grid(panel, cfg);
  const auto csv = scatter_csv(r, panel);
  std::size_t lines = 0;
  for (char ch : csv) lines += ch == '\n';
  CHECK(lines == 1 + r.cells.size() * panel.observations.size());
  for (const auto& c : r.cells) CHECK(c.predictions.size() == panel.observations.size());
}
