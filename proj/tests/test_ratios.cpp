#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "finpred/error.hpp"
#include "finpred/ingest.hpp"
#include "finpred/random.hpp"
#include "finpred/ratios.hpp"

using namespace finpred;

TEST_CASE("scenario cardinalities") {
  CHECK(scenario_features(ScenarioId::Base).size() == 24);
  CHECK(scenario_features(ScenarioId::AllVariables).size() == 43);
  CHECK(scenario_features(ScenarioId::FinSt).size() == 33);
  CHECK(scenario_features(ScenarioId::NewVars).size() == 9);
}

TEST_CASE("scenario feature sets are nested and ordered") {
  for (auto s : kAllScenarios) {
    const auto f = scenario_features(s);
    for (std::size_t i = 1; i < f.size(); ++i) CHECK(static_cast<int>(f[i - 1]) < static_cast<int>(f[i]));
  }
  const auto all = scenario_features(ScenarioId::AllVariables);
  const std::set<Feature> all_set(all.begin(), all.end());
  for (auto s : {ScenarioId::Base, ScenarioId::FinSt, ScenarioId::NewVars})
    for (auto f : scenario_features(s)) CHECK(all_set.count(f));
  // new_vars = the 9 cash-flow and macro-related ratios
  const auto nv = scenario_features(ScenarioId::NewVars);
  CHECK(nv.front() == Feature::NCG);
  CHECK(nv.back() == Feature::ROA2bond);
}

TEST_CASE("names round trip") {
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    const auto f = static_cast<Feature>(i);
    CHECK(feature_from_name(feature_name(f)) == f);
  }
  for (auto t : kAllTasks) CHECK(task_from_name(task_name(t)) == t);
  for (auto s : kAllScenarios) CHECK(scenario_from_name(scenario_name(s)) == s);
}

TEST_CASE("LYCA worked example") {
  const auto v = liabilities_yield_curve_alignment(0.8, 0.2, -1.0);
  REQUIRE(v.has_value());
  CHECK(*v == 0.006);
  CHECK(*liabilities_yield_curve_alignment(80.0, 20.0, -1.0) == 0.006);
  CHECK(*liabilities_yield_curve_alignment(0.5, 0.5, 2.0) == 0.0);
  CHECK_FALSE(liabilities_yield_curve_alignment(0.0, 0.0, 1.0).has_value());
}

TEST_CASE("QPT anchors") {
  CHECK(quality_of_payment_terms(30) == 1.0);
  CHECK(quality_of_payment_terms(60) == 0.0);
  CHECK(quality_of_payment_terms(90) == -1.0);
  CHECK(quality_of_payment_terms(120) == -1.0);
  CHECK(quality_of_payment_terms(0) == 1.0);
  CHECK(quality_of_payment_terms(45) == doctest::Approx(0.5));
}

TEST_CASE("QPT is non-increasing in DSO") {
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(0, 200), b = rng.uniform(0, 200);
    const double lo = std::min(a, b), hi = std::max(a, b);
    CHECK(quality_of_payment_terms(lo) >= quality_of_payment_terms(hi));
    CHECK(std::abs(quality_of_payment_terms(a)) <= 1.0);
  }
}

TEST_CASE("QOFFUR scoring") {
  CHECK(*quality_of_op_to_fin(10, -5) == 1.0);
  CHECK(*quality_of_op_to_fin(-10, -5) == -1.0);
  CHECK(*quality_of_op_to_fin(30, 10) == doctest::Approx(0.75));
  CHECK(*quality_of_op_to_fin(-30, 10) == doctest::Approx(-0.75));
  CHECK_FALSE(quality_of_op_to_fin(0, 0).has_value());
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const auto v = quality_of_op_to_fin(rng.normal(), rng.normal());
    REQUIRE(v.has_value());
    CHECK(std::abs(*v) <= 1.0);
  }
}

TEST_CASE("MRFS helpers") {
  CHECK(*inflation_adjusted_inventory_cost(0, 0, 2, std::nullopt) == 0.0);
  CHECK(*inflation_adjusted_inventory_cost(10, 100, 2, 73.0) == doctest::Approx(0.1 * 0.02 * 0.2));
  CHECK_FALSE(inflation_adjusted_inventory_cost(10, 100, 2, std::nullopt).has_value());
  CHECK(*roa_to_bond(0.01, 2.0, 3.0) == doctest::Approx(0.8));
  CHECK_FALSE(roa_to_bond(0.01, 0.0, 0.0).has_value());
}

TEST_CASE("ratios of a synthetic statement") {
  SynthConfig cfg;
  cfg.companies = 3;
  cfg.quarters = 4;
  const auto c = generate_synthetic(cfg, 1);
  const auto& s = c.truth.front();
  const auto f = compute_features(s, c.macro.front());
  const auto at = [&](Feature x) { return f[static_cast<std::size_t>(x)]; };
  const double assets = *s.get(Account::AssetsTotal);
  REQUIRE(at(Feature::ROA).has_value());
  CHECK(*at(Feature::ROA) == doctest::Approx(*s.get(Account::Net_Income) / assets));
  CHECK(*at(Feature::CurrentRatio) ==
        doctest::Approx(*s.get(Account::AssetsCurrentTotal) / *s.get(Account::LiabilitiesCurrentTotal)));
  CHECK(*at(Feature::TotalAssetTurnover) == doctest::Approx(*s.get(Account::Net_Revenues) / assets));
  // macro block is copied through
  CHECK(*at(Feature::UNRATE) == c.macro.front().UNRATE);
  CHECK(*at(Feature::DGS10) == c.macro.front().DGS10);
  // days ratios are consistent with turnovers
  CHECK(*at(Feature::DSO) * *at(Feature::ARTurnover) == doctest::Approx(kQuarterDays));
}

TEST_CASE("zero denominators leave ratios absent") {
  StandardStatement s;
  s.company_id = "X";
  s.period = {2020, 1};
  s.set(Account::Net_Income, 5);
  s = fill_calculated_totals(s);
  MacroSnapshot m;
  const auto f = compute_features(s, m);
  CHECK_FALSE(f[static_cast<std::size_t>(Feature::ROA)].has_value());
  CHECK_THROWS_AS(select_features(f, ScenarioId::Base), Error);
  try {
    select_features(f, ScenarioId::Base);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingFeature);
    CHECK_FALSE(e.fields().empty());
  }
}

TEST_CASE("normalizer maps to the unit interval and inverts") {
  const std::vector<double> data{1, 10, 3, 20, 5, 30};  // 3 rows x 2 cols
  const auto n = Normalizer::fit(data, 2);
  const std::vector<double> x{3, 20};
  const auto y = n.apply(x);
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[1] == doctest::Approx(0.5));
  const auto back = n.invert(y);
  CHECK(back[0] == doctest::Approx(3));
  bool clamped = false;
  const std::vector<double> out{100, -100};
  const auto c = n.apply(out, &clamped);
  CHECK(clamped);
  CHECK(c[0] == 1.0);
  CHECK(c[1] == 0.0);
  const std::vector<double> flat{1, 2, 1, 3};
  CHECK_THROWS_AS(Normalizer::fit(flat, 2), Error);
}

TEST_CASE("sigmoid stretch") {
  CHECK(sigmoid_stretch(0.3, 0.3, 2.0) == 0.5);
  const double k = default_stretch_steepness(0.1);
  CHECK(sigmoid_stretch(0.4, 0.3, k) == doctest::Approx(0.73));
  CHECK(sigmoid_stretch(0.2, 0.3, k) == doctest::Approx(0.27));
  CHECK_THROWS_AS(sigmoid_stretch(0, 0, 0), Error);
  CHECK(employment_rate(4.0) == 96.0);
}

TEST_CASE("macro csv round trip") {
  const auto rows = generate_macro_series({2015, 1}, 8, 4);
  const auto path = (std::filesystem::temp_directory_path() / "finpred-macro-test.csv").string();
  write_macro_csv(path, rows, "seed=4");
  const auto back = read_macro_csv(path);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].quarter == rows[i].quarter);
    CHECK(back[i].values() == rows[i].values());
  }
}
