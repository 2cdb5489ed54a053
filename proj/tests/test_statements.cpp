#include <doctest.h>

#include <algorithm>

#include "finpred/error.hpp"
#include "finpred/ingest.hpp"
#include "finpred/statements.hpp"
#include "finpred/text.hpp"
#include "support.hpp"

using namespace finpred;

namespace {

const SynthCorpus& corpus() {
  static const SynthCorpus c = [] {
    SynthConfig cfg;
    cfg.companies = 12;
    cfg.quarters = 8;
    return generate_synthetic(cfg, 3);
  }();
  return c;
}

}  // namespace

TEST_CASE("account names round trip") {
  for (Account a : all_accounts()) {
    const auto back = account_from_name(account_name(a));
    REQUIRE(back.has_value());
    CHECK(*back == a);
  }
  CHECK_FALSE(account_from_name("NotAnAccount").has_value());
  CHECK(calc_from_name("AssetsTotal_CALC") == CalcTotal::AssetsTotal_CALC);
}

TEST_CASE("fiscal period ordering and labels") {
  const FiscalPeriod q{2019, 4};
  CHECK(q.next() == FiscalPeriod{2020, 1});
  CHECK(q.next().ordinal() == q.ordinal() + 1);
  CHECK(q.label() == "2019Q4");
  CHECK(FiscalPeriod::parse("2019Q4") == q);
  CHECK_FALSE(FiscalPeriod::parse("2019Q5").has_value());
  CHECK_FALSE(FiscalPeriod::parse("garbage").has_value());
}

TEST_CASE("ground-truth statements pass every checkpoint") {
  for (const auto& s : corpus().truth) {
    const auto r = validate_checkpoints(s);
    INFO(s.company_id << " " << s.period.label() << " failed " << join(r.failed_ids(), ","));
    CHECK(r.all_passed());
    CHECK(r.passed_count() == 12);
  }
}

TEST_CASE("a 1% AssetsTotal imbalance fails exactly chk02 and chk07") {
  for (const auto& truth : corpus().truth) {
    StandardStatement s = truth;
    s.set(Account::AssetsTotal, *s.get(Account::AssetsTotal) * 1.01);
    s = fill_calculated_totals(s);
    const auto r = validate_checkpoints(s, 1e-4);
    CHECK(r.failed_ids() == std::vector<std::string>{"chk02", "chk07"});
  }
}

TEST_CASE("checkpoint tolerance is relative") {
  StandardStatement s = corpus().truth.front();
  const double total = *s.get(Account::AssetsTotal);
  s.set(Account::AssetsTotal, total * (1 + 5e-5));
  s = fill_calculated_totals(s);
  CHECK(validate_checkpoints(s, 1e-4).all_passed());
  CHECK_FALSE(validate_checkpoints(s, 1e-5).all_passed());
}

TEST_CASE("calculated totals are exact sums of their children") {
  const auto& s = corpus().truth.front();
  const auto filled = fill_calculated_totals(s);
  for (const auto& rule : calc_rules()) {
    double sum = 0.0;
    for (std::size_t i = 0; i < rule.children.size(); ++i) {
      auto v = filled.get(rule.children[i]);
      if (!v && i < rule.subtotal_fallback.size()) v = filled.get(rule.subtotal_fallback[i]);
      sum += v.value_or(0.0);
    }
    CHECK(*filled.get(rule.target) == doctest::Approx(sum).epsilon(1e-15));
  }
}

TEST_CASE("polarity normalization flips contradicting signs only") {
  StandardStatement s = corpus().truth.front();
  const double cash = *s.get(Account::Cash);
  s.set(Account::Cash, -cash);
  s.set(Account::TreasuryStock, 500.0);
  const auto n = normalize_polarity(s, PolarityPolicy::standard());
  CHECK(*n.get(Account::Cash) == cash);
  CHECK(*n.get(Account::TreasuryStock) == -500.0);
  CHECK(std::any_of(n.notes.begin(), n.notes.end(), [](const std::string& x) { return x.find("chk05") != x.npos; }));
  // idempotent
  const auto again = normalize_polarity(n, PolarityPolicy::standard());
  CHECK(again.values == n.values);
}

TEST_CASE("polarity policy must cover present accounts") {
  PolarityPolicy p = PolarityPolicy::standard();
  p.canonical.erase(Account::Cash);
  CHECK_THROWS_AS(normalize_polarity(corpus().truth.front(), p), Error);
}

TEST_CASE("decumulation inverts year-to-date sums exactly") {
  const auto& truth = corpus().truth;
  std::vector<StandardStatement> year(truth.begin(), truth.begin() + 4);
  REQUIRE(year.front().period.quarter == 1);
  std::vector<StandardStatement> ytd = year;
  for (std::size_t i = 1; i < ytd.size(); ++i)
    for (Account a : all_accounts())
      if (is_flow(a) && ytd[i].get(a)) ytd[i].set(a, *ytd[i - 1].get(a) + *year[i].get(a));
  for (auto& s : ytd) s.basis = Basis::Cumulative;
  auto back = decumulate_quarters(ytd);
  REQUIRE(back.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    back[i] = fill_calculated_totals(back[i]);
    CHECK(back[i].values == year[i].values);
  }
}

TEST_CASE("decumulation rejects gaps and quarterly input") {
  const auto& truth = corpus().truth;
  std::vector<StandardStatement> gap{truth[0], truth[2]};
  for (auto& s : gap) s.basis = Basis::Cumulative;
  CHECK_THROWS_AS(decumulate_quarters(gap), Error);
  std::vector<StandardStatement> q{truth[0]};
  CHECK_THROWS_AS(decumulate_quarters(q), Error);
}

TEST_CASE("statement archive round trip") {
  const auto dir = testing::scratch_dir("archive");
  const auto path = (dir / "s.jsonl").string();
  const std::vector<StandardStatement> in(corpus().truth.begin(), corpus().truth.begin() + 10);
  write_statement_archive(path, in, {{"seed", 3}});
  const auto out = read_statement_archive(path);
  REQUIRE(out.size() == in.size());
  for (std::size_t i = 0; i < in.size(); ++i) CHECK(same_values(in[i], out[i]));
}

TEST_CASE("statement json rejects unknown fields") {
  auto j = statement_to_json(corpus().truth.front());
  j["Bogus"] = 1.0;
  CHECK_THROWS_AS(statement_from_json(j), Error);
}

TEST_CASE("cash begin follows from net cash flow") {
  const auto& s = corpus().truth.front();
  const auto b = s.cash_begin();
  REQUIRE(b.has_value());
  CHECK(*b == doctest::Approx(*s.get(Account::Cash) - *s.get(Account::CF_Net_Total)));
}
