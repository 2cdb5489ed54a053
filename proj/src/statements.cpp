#include "finpred/statements.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "finpred/error.hpp"

namespace finpred {

namespace {

constexpr std::array<std::string_view, kAccountCount> kAccountNames = {
    "Cash",
    "Inventory",
    "Acc_Receivable",
    "AssetsCurrent_Other",
    "AssetsCurrentTotal",
    "Property",
    "Intangibles",
    "AssetsNonCurrent_Other",
    "AssetsTotal",
    "AccPayable",
    "NotesIntConvDebt",
    "OtherAccruedLiab",
    "LiabilitiesCurrent_Other",
    "LiabilitiesCurrentTotal",
    "LiabilitiesNonCurrentOther",
    "LiabilitiesCurrNonCurrOther",
    "LiabilitiesTotal",
    "PaidInCapital",
    "RetEarnings",
    "TreasuryStock",
    "Equity_Other",
    "EquityTotal",
    "EquityOther_Minority",
    "EquityMinorityTotal",
    "LiabilitiesAndEquityTotal",
    "Net_Revenues",
    "Op_Income",
    "Net_Income",
    "NetIncome_CF",
    "BS_adjust",
    "IS_adjust",
    "CF_Op_Total",
    "CF_Inv",
    "CF_Inv_Total",
    "CF_Fin",
    "CF_Fin_Total",
    "CF_Other",
    "CF_Net_Total",
};

constexpr std::array<std::string_view, kCalcCount> kCalcNames = {
    "AssetsCurrentTotal_CALC",
    "AssetsTotal_CALC",
    "LiabilitiesCurrentTotal_CALC",
    "LiabilitiesTotal_CALC",
    "EquityTotal_CALC",
    "EquityMinorityTotal_CALC",
    "LiabilitiesAndEquityTotal_CALC",
    "CF_Op_Total_CALC",
    "CF_Net_Total_CALC",
};

std::size_t idx(Account a) { return static_cast<std::size_t>(a); }
std::size_t idx(CalcTotal c) { return static_cast<std::size_t>(c); }

bool is_equity_component(Account a) {
  return a == Account::PaidInCapital || a == Account::RetEarnings || a == Account::TreasuryStock ||
         a == Account::Equity_Other;
}

}  // namespace

std::string_view account_name(Account a) { return kAccountNames[idx(a)]; }
std::string_view calc_name(CalcTotal c) { return kCalcNames[idx(c)]; }

std::optional<Account> account_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kAccountCount; ++i)
    if (kAccountNames[i] == name) return static_cast<Account>(i);
  return std::nullopt;
}

std::optional<CalcTotal> calc_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kCalcCount; ++i)
    if (kCalcNames[i] == name) return static_cast<CalcTotal>(i);
  return std::nullopt;
}

Section section_of(Account a) {
  if (a <= Account::LiabilitiesAndEquityTotal) return Section::BalanceSheet;
  if (a <= Account::Net_Income) return Section::IncomeStatement;
  return Section::CashFlow;
}

std::string_view form_name(Form f) { return f == Form::K10 ? "10K" : "10Q"; }

std::optional<Form> form_from_name(std::string_view name) {
  if (name == "10Q" || name == "10-Q") return Form::Q10;
  if (name == "10K" || name == "10-K") return Form::K10;
  return std::nullopt;
}

std::string FiscalPeriod::label() const { return std::to_string(year) + "Q" + std::to_string(quarter); }

std::optional<FiscalPeriod> FiscalPeriod::parse(std::string_view label) {
  const auto q = label.find('Q');
  if (q == std::string_view::npos || q + 2 != label.size()) return std::nullopt;
  try {
    FiscalPeriod p{std::stoi(std::string(label.substr(0, q))), label[q + 1] - '0'};
    if (p.quarter < 1 || p.quarter > 4) return std::nullopt;
    return p;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<double> StandardStatement::total(Account reported, CalcTotal calculated) const {
  if (auto v = get(reported)) return v;
  return get(calculated);
}

std::optional<double> StandardStatement::cash_begin() const {
  const auto cash = get(Account::Cash);
  const auto net = total(Account::CF_Net_Total, CalcTotal::CF_Net_Total_CALC);
  if (!cash || !net) return std::nullopt;
  return *cash - *net;
}

void StandardStatement::validate() const {
  if (period.quarter < 1 || period.quarter > 4)
    throw Error(ErrorCode::InvalidInput, company_id + ": quarter out of range", {"quarter"});
  if (form == Form::K10 && period.quarter != 4)
    throw Error(ErrorCode::InvalidInput, company_id + ": 10K filing must be Q4", {"form"});
  for (Account a : {Account::AssetsTotal, Account::LiabilitiesTotal, Account::EquityTotal}) {
    if (auto v = get(a); v && !std::isfinite(*v))
      throw Error(ErrorCode::InvalidInput, company_id + ": non-finite total", {std::string(account_name(a))});
  }
}

bool same_values(const StandardStatement& a, const StandardStatement& b) {
  return a.company_id == b.company_id && a.period == b.period && a.form == b.form && a.basis == b.basis &&
         a.values == b.values && a.calc == b.calc;
}

// ---------------------------------------------------------------- polarity

PolarityPolicy PolarityPolicy::standard() {
  PolarityPolicy p;
  for (Account a : all_accounts()) p.canonical[a] = Sign::Free;
  for (Account a : {Account::Cash, Account::Inventory, Account::Acc_Receivable, Account::AssetsCurrent_Other,
                    Account::AssetsCurrentTotal, Account::Property, Account::Intangibles,
                    Account::AssetsNonCurrent_Other, Account::AssetsTotal, Account::AccPayable,
                    Account::NotesIntConvDebt, Account::OtherAccruedLiab, Account::LiabilitiesCurrent_Other,
                    Account::LiabilitiesCurrentTotal, Account::LiabilitiesNonCurrentOther,
                    Account::LiabilitiesCurrNonCurrOther, Account::LiabilitiesTotal, Account::PaidInCapital,
                    Account::Net_Revenues})
    p.canonical[a] = Sign::Positive;
  p.canonical[Account::TreasuryStock] = Sign::Negative;
  return p;
}

StandardStatement normalize_polarity(const StandardStatement& stmt, const PolarityPolicy& policy) {
  StandardStatement out = stmt;
  bool equity_touched = false;
  for (Account a : all_accounts()) {
    auto& slot = out.values[idx(a)];
    if (!slot) continue;
    auto it = policy.canonical.find(a);
    if (it == policy.canonical.end())
      throw Error(ErrorCode::UnknownAccount, "no polarity rule for account", {std::string(account_name(a))});
    const double v = *slot;
    const bool flip = (it->second == Sign::Positive && v < 0.0) || (it->second == Sign::Negative && v > 0.0);
    if (!flip) continue;
    slot = -v;
    out.notes.push_back("polarity: flipped " + std::string(account_name(a)));
    equity_touched = equity_touched || is_equity_component(a);
  }
  if (equity_touched) {
    // Totals derived from the flipped components are stale.
    out.calc.fill(std::nullopt);
    out.notes.emplace_back("revalidate chk05");
  }
  return out;
}

// ---------------------------------------------------------------- totals

const std::vector<CalcRule>& calc_rules() {
  using A = Account;
  using C = CalcTotal;
  static const std::vector<CalcRule> rules = {
      {C::AssetsCurrentTotal_CALC, A::AssetsCurrentTotal,
       {A::Cash, A::Inventory, A::Acc_Receivable, A::AssetsCurrent_Other},
       {}},
      {C::AssetsTotal_CALC, A::AssetsTotal,
       {A::AssetsCurrentTotal, A::Property, A::Intangibles, A::AssetsNonCurrent_Other},
       {C::AssetsCurrentTotal_CALC}},
      {C::LiabilitiesCurrentTotal_CALC, A::LiabilitiesCurrentTotal,
       {A::AccPayable, A::NotesIntConvDebt, A::OtherAccruedLiab, A::LiabilitiesCurrent_Other},
       {}},
      {C::LiabilitiesTotal_CALC, A::LiabilitiesTotal,
       {A::LiabilitiesCurrentTotal, A::LiabilitiesNonCurrentOther, A::LiabilitiesCurrNonCurrOther},
       {C::LiabilitiesCurrentTotal_CALC}},
      {C::EquityTotal_CALC, A::EquityTotal, {A::PaidInCapital, A::RetEarnings, A::TreasuryStock, A::Equity_Other},
       {}},
      {C::EquityMinorityTotal_CALC, A::EquityMinorityTotal, {A::EquityTotal, A::EquityOther_Minority},
       {C::EquityTotal_CALC}},
      {C::LiabilitiesAndEquityTotal_CALC, A::LiabilitiesAndEquityTotal, {A::LiabilitiesTotal, A::EquityMinorityTotal},
       {C::LiabilitiesTotal_CALC, C::EquityMinorityTotal_CALC}},
      {C::CF_Op_Total_CALC, A::CF_Op_Total, {A::NetIncome_CF, A::BS_adjust, A::IS_adjust}, {}},
      {C::CF_Net_Total_CALC, A::CF_Net_Total, {A::CF_Op_Total, A::CF_Inv_Total, A::CF_Fin_Total, A::CF_Other},
       {C::CF_Op_Total_CALC}},
  };
  return rules;
}

StandardStatement fill_calculated_totals(const StandardStatement& stmt) {
  StandardStatement out = stmt;
  for (const CalcRule& rule : calc_rules()) {
    double sum = 0.0;
    for (std::size_t i = 0; i < rule.children.size(); ++i) {
      const Account child = rule.children[i];
      if (auto v = out.get(child)) {
        sum += *v;
        continue;
      }
      // Subtotal children are listed first, so the fallback index matches.
      if (i < rule.subtotal_fallback.size()) {
        if (auto c = out.get(rule.subtotal_fallback[i])) {
          sum += *c;
          out.notes.push_back(std::string(calc_name(rule.target)) + ": " + std::string(account_name(child)) +
                              " from " + std::string(calc_name(rule.subtotal_fallback[i])));
          continue;
        }
      }
      out.notes.push_back(std::string(calc_name(rule.target)) + ": imputed 0 for " +
                          std::string(account_name(child)));
    }
    out.calc[idx(rule.target)] = sum;
  }
  return out;
}

// ---------------------------------------------------------------- checks

double CheckResult::relative_deviation() const {
  return std::abs(reported - calculated) / std::max(1.0, std::abs(reported));
}

bool CheckReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::size_t CheckReport::passed_count() const {
  return static_cast<std::size_t>(
      std::count_if(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; }));
}

std::vector<std::string> CheckReport::failed_ids() const {
  std::vector<std::string> out;
  for (const auto& c : checks)
    if (!c.passed) out.push_back(c.id);
  return out;
}

double CheckReport::max_relative_deviation() const {
  double m = 0.0;
  for (const auto& c : checks) m = std::max(m, c.relative_deviation());
  return m;
}

CheckReport validate_checkpoints(const StandardStatement& stmt, double tolerance) {
  using A = Account;
  using C = CalcTotal;
  CheckReport report;
  report.tolerance = tolerance;

  auto reported = [&](A a) { return stmt.value_or_zero(a); };
  auto calculated = [&](C c) { return stmt.get(c).value_or(0.0); };

  const std::array<std::pair<double, double>, 12> pairs = {{
      {reported(A::AssetsCurrentTotal), calculated(C::AssetsCurrentTotal_CALC)},
      {reported(A::AssetsTotal), calculated(C::AssetsTotal_CALC)},
      {reported(A::LiabilitiesCurrentTotal), calculated(C::LiabilitiesCurrentTotal_CALC)},
      {reported(A::LiabilitiesTotal), calculated(C::LiabilitiesTotal_CALC)},
      {reported(A::EquityTotal), calculated(C::EquityTotal_CALC)},
      {reported(A::EquityMinorityTotal), calculated(C::EquityMinorityTotal_CALC)},
      {reported(A::AssetsTotal), calculated(C::LiabilitiesAndEquityTotal_CALC)},
      {reported(A::CF_Op_Total), calculated(C::CF_Op_Total_CALC)},
      {reported(A::CF_Inv_Total), reported(A::CF_Inv)},
      {reported(A::CF_Fin_Total), reported(A::CF_Fin)},
      {reported(A::CF_Net_Total), calculated(C::CF_Net_Total_CALC)},
      {reported(A::Net_Income), reported(A::NetIncome_CF)},
  }};

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CheckResult& r = report.checks[i];
    r.id = (i + 1 < 10 ? "chk0" : "chk1") + std::to_string((i + 1) % 10);
    r.reported = pairs[i].first;
    r.calculated = pairs[i].second;
    r.passed = std::abs(r.reported - r.calculated) <= tolerance * std::max(1.0, std::abs(r.reported));
  }
  return report;
}

// ---------------------------------------------------------------- periods

std::vector<StandardStatement> decumulate_quarters(std::span<const StandardStatement> year_series) {
  std::vector<StandardStatement> out;
  if (year_series.empty()) return out;
  const auto& first = year_series.front();
  for (std::size_t i = 0; i < year_series.size(); ++i) {
    const auto& s = year_series[i];
    if (s.company_id != first.company_id || s.period.year != first.period.year ||
        s.period.quarter != static_cast<int>(i) + 1)
      throw Error(ErrorCode::NonMonotonePeriods,
                  first.company_id + " " + std::to_string(first.period.year) +
                      ": expected consecutive quarters starting at Q1",
                  {s.period.label()});
    if (s.basis != Basis::Cumulative)
      throw Error(ErrorCode::InvalidInput, s.company_id + " " + s.period.label() + " is not cumulative", {"basis"});
  }

  out.reserve(year_series.size());
  for (std::size_t i = 0; i < year_series.size(); ++i) {
    StandardStatement q = year_series[i];
    q.basis = Basis::Quarterly;
    q.calc.fill(std::nullopt);
    if (i > 0) {
      const auto& prev = year_series[i - 1];
      for (Account a : all_accounts()) {
        if (!is_flow(a)) continue;
        const auto cur = year_series[i].get(a);
        if (!cur) continue;
        if (auto p = prev.get(a)) {
          q.set(a, *cur - *p);
        } else {
          q.clear(a);
          q.notes.push_back("decumulate: " + std::string(account_name(a)) + " missing in prior quarter");
        }
      }
    }
    out.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------- archive I/O

nlohmann::ordered_json statement_to_json(const StandardStatement& stmt) {
  nlohmann::ordered_json j;
  j["company_id"] = stmt.company_id;
  j["year"] = stmt.period.year;
  j["quarter"] = stmt.period.quarter;
  j["form"] = form_name(stmt.form);
  j["basis"] = stmt.basis == Basis::Cumulative ? "cumulative" : "quarterly";
  for (Account a : all_accounts())
    if (auto v = stmt.get(a)) j[std::string(account_name(a))] = *v;
  for (std::size_t i = 0; i < kCalcCount; ++i)
    if (stmt.calc[i]) j[std::string(kCalcNames[i])] = *stmt.calc[i];
  return j;
}

StandardStatement statement_from_json(const nlohmann::json& record) {
  if (!record.is_object()) throw Error(ErrorCode::ParseError, "statement record must be an object");
  StandardStatement s;
  std::vector<std::string> unknown;
  try {
    for (const auto& [key, value] : record.items()) {
      if (key == "company_id") {
        s.company_id = value.get<std::string>();
      } else if (key == "year") {
        s.period.year = value.get<int>();
      } else if (key == "quarter") {
        s.period.quarter = value.get<int>();
      } else if (key == "form") {
        auto f = form_from_name(value.get<std::string>());
        if (!f) throw Error(ErrorCode::ParseError, "bad form", {"form"});
        s.form = *f;
      } else if (key == "basis") {
        const auto b = value.get<std::string>();
        if (b != "quarterly" && b != "cumulative") throw Error(ErrorCode::ParseError, "bad basis", {"basis"});
        s.basis = b == "cumulative" ? Basis::Cumulative : Basis::Quarterly;
      } else if (auto a = account_from_name(key)) {
        if (!value.is_null()) s.set(*a, value.get<double>());
      } else if (auto c = calc_from_name(key)) {
        if (!value.is_null()) s.calc[idx(*c)] = value.get<double>();
      } else {
        unknown.push_back(key);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  if (!unknown.empty()) throw Error(ErrorCode::ParseError, "unknown statement fields", unknown);
  if (s.company_id.empty()) throw Error(ErrorCode::ParseError, "missing company_id", {"company_id"});
  s.validate();
  return s;
}

std::vector<StandardStatement> read_statement_archive(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidInput, "cannot open " + path);
  std::vector<StandardStatement> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (j.contains("_meta")) continue;
    out.push_back(statement_from_json(j));
  }
  return out;
}

void write_statement_archive(const std::string& path, std::span<const StandardStatement> stmts,
                             const nlohmann::json& meta) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidInput, "cannot write " + path);
  if (!meta.is_null()) out << nlohmann::json{{"_meta", meta}}.dump() << '\n';
  for (const auto& s : stmts) out << statement_to_json(s).dump() << '\n';
}

}  // namespace finpred
