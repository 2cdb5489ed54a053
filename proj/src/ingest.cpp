#include "finpred/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "finpred/error.hpp"
#include "finpred/random.hpp"
#include "finpred/text.hpp"

namespace finpred {

namespace {

std::size_t ai(Account a) { return static_cast<std::size_t>(a); }

struct TagName {
  Account account;
  const char* primary;
  const char* alternate;  // may be null
  double alternate_sign;
};

// Primary and secondary tag for each template account.
constexpr TagName kTags[] = {
    {Account::Cash, "CashAndCashEquivalentsAtCarryingValue", "Cash", 1.0},
    {Account::Inventory, "InventoryNet", nullptr, 1.0},
    {Account::Acc_Receivable, "AccountsReceivableNetCurrent", nullptr, 1.0},
    {Account::AssetsCurrent_Other, "OtherAssetsCurrent", nullptr, 1.0},
    {Account::AssetsCurrentTotal, "AssetsCurrent", nullptr, 1.0},
    {Account::Property, "PropertyPlantAndEquipmentNet", nullptr, 1.0},
    {Account::Intangibles, "IntangibleAssetsNetIncludingGoodwill", nullptr, 1.0},
    {Account::AssetsNonCurrent_Other, "OtherAssetsNoncurrent", nullptr, 1.0},
    {Account::AssetsTotal, "Assets", nullptr, 1.0},
    {Account::AccPayable, "AccountsPayableCurrent", nullptr, 1.0},
    {Account::NotesIntConvDebt, "DebtCurrent", nullptr, 1.0},
    {Account::OtherAccruedLiab, "AccruedLiabilitiesCurrent", nullptr, 1.0},
    {Account::LiabilitiesCurrent_Other, "OtherLiabilitiesCurrent", nullptr, 1.0},
    {Account::LiabilitiesCurrentTotal, "LiabilitiesCurrent", nullptr, 1.0},
    {Account::LiabilitiesNonCurrentOther, "LongTermDebtNoncurrent", nullptr, 1.0},
    {Account::LiabilitiesCurrNonCurrOther, "OtherLiabilitiesNoncurrent", nullptr, 1.0},
    {Account::LiabilitiesTotal, "Liabilities", nullptr, 1.0},
    {Account::PaidInCapital, "CommonStockValueAndAdditionalPaidInCapital", nullptr, 1.0},
    {Account::RetEarnings, "RetainedEarningsAccumulatedDeficit", nullptr, 1.0},
    {Account::TreasuryStock, "TreasuryStockValue", nullptr, 1.0},
    {Account::Equity_Other, "AccumulatedOtherComprehensiveIncomeLossNetOfTax", nullptr, 1.0},
    {Account::EquityTotal, "StockholdersEquity", nullptr, 1.0},
    {Account::EquityOther_Minority, "MinorityInterest", nullptr, 1.0},
    {Account::EquityMinorityTotal, "StockholdersEquityIncludingPortionAttributableToNoncontrollingInterest", nullptr,
     1.0},
    {Account::LiabilitiesAndEquityTotal, "LiabilitiesAndStockholdersEquity", nullptr, 1.0},
    {Account::Net_Revenues, "Revenues", "SalesRevenueNet", 1.0},
    {Account::Op_Income, "OperatingIncomeLoss", nullptr, 1.0},
    {Account::Net_Income, "NetIncomeLoss", nullptr, 1.0},
    {Account::NetIncome_CF, "ProfitLoss", nullptr, 1.0},
    {Account::BS_adjust, "IncreaseDecreaseInOperatingCapital", nullptr, 1.0},
    {Account::IS_adjust, "OtherNoncashIncomeExpense", nullptr, 1.0},
    {Account::CF_Op_Total, "NetCashProvidedByUsedInOperatingActivities", nullptr, 1.0},
    {Account::CF_Inv, "InvestingCashFlowItems", "PaymentsToAcquireProductiveAssets", -1.0},
    {Account::CF_Inv_Total, "NetCashProvidedByUsedInInvestingActivities", nullptr, 1.0},
    {Account::CF_Fin, "FinancingCashFlowItems", nullptr, 1.0},
    {Account::CF_Fin_Total, "NetCashProvidedByUsedInFinancingActivities", nullptr, 1.0},
    {Account::CF_Other, "EffectOfExchangeRateOnCashAndCashEquivalents", nullptr, 1.0},
    {Account::CF_Net_Total, "CashAndCashEquivalentsPeriodIncreaseDecrease", nullptr, 1.0},
};

const TagName& tag_for(Account a) {
  for (const auto& t : kTags)
    if (t.account == a) return t;
  throw Error(ErrorCode::UnknownAccount, "no tag for account", {std::string(account_name(a))});
}

double round2(double x) { return std::round(x * 100.0) / 100.0; }

}  // namespace

// ---------------------------------------------------------------- raw filings

void RawFiling::validate() const {
  if (company_id.empty()) throw Error(ErrorCode::InvalidInput, "filing without company_id", {"company_id"});
  if (period.quarter < 1 || period.quarter > 4) throw Error(ErrorCode::InvalidInput, "quarter out of range", {"quarter"});
  for (const auto& e : entries) {
    if (e.tag.empty()) throw Error(ErrorCode::InvalidInput, company_id + " " + period.label() + ": empty tag", {"tag"});
    if (!std::isfinite(e.value))
      throw Error(ErrorCode::InvalidInput, company_id + " " + period.label() + ": non-finite value", {e.tag});
  }
}

std::vector<RawFiling> read_raw_filings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidInput, "cannot open " + path);
  std::map<std::tuple<std::string, int, int, int>, RawFiling> filings;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, where + ": " + e.what());
    }
    if (j.contains("_meta")) continue;
    RawFiling f;
    RawEntry e;
    try {
      std::vector<std::string> unknown;
      for (const auto& [key, value] : j.items())
        if (key != "company_id" && key != "year" && key != "quarter" && key != "form" && key != "tag" &&
            key != "value" && key != "unit")
          unknown.push_back(key);
      if (!unknown.empty()) throw Error(ErrorCode::ParseError, where + ": unknown fields", unknown);
      f.company_id = j.at("company_id").get<std::string>();
      f.period = {j.at("year").get<int>(), j.at("quarter").get<int>()};
      auto form = form_from_name(j.at("form").get<std::string>());
      if (!form) throw Error(ErrorCode::ParseError, where + ": bad form", {"form"});
      f.form = *form;
      e.tag = j.at("tag").get<std::string>();
      e.value = j.at("value").get<double>();
      e.unit = j.value("unit", std::string("USD"));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::ParseError, where + ": " + ex.what());
    }
    auto key = std::make_tuple(f.company_id, f.period.year, f.period.quarter, static_cast<int>(f.form));
    auto [it, inserted] = filings.try_emplace(key, std::move(f));
    it->second.entries.push_back(std::move(e));
  }
  std::vector<RawFiling> out;
  out.reserve(filings.size());
  for (auto& [key, f] : filings) {
    f.validate();
    out.push_back(std::move(f));
  }
  return out;
}

void write_raw_filings(const std::string& path, std::span<const RawFiling> filings, const nlohmann::json& meta) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidInput, "cannot write " + path);
  if (!meta.is_null()) out << nlohmann::json{{"_meta", meta}}.dump() << '\n';
  for (const auto& f : filings)
    for (const auto& e : f.entries) {
      nlohmann::ordered_json j;
      j["company_id"] = f.company_id;
      j["year"] = f.period.year;
      j["quarter"] = f.period.quarter;
      j["form"] = form_name(f.form);
      j["tag"] = e.tag;
      j["value"] = e.value;
      j["unit"] = e.unit;
      out << j.dump() << '\n';
    }
}

// ---------------------------------------------------------------- tag map

TagMap::TagMap(std::vector<TagRule> rules) : rules_(std::move(rules)) {
  compiled_.reserve(rules_.size());
  for (const auto& r : rules_) {
    try {
      compiled_.emplace_back(r.pattern, std::regex::ECMAScript | std::regex::optimize);
    } catch (const std::regex_error& e) {
      throw Error(ErrorCode::InvalidInput, "bad tag pattern '" + r.pattern + "': " + e.what(), {r.pattern});
    }
  }
}

TagMap TagMap::standard() {
  std::vector<TagRule> rules;
  for (const auto& t : kTags) {
    rules.push_back({t.primary, t.account, 1.0, 1});
    if (t.alternate) rules.push_back({t.alternate, t.account, t.alternate_sign, 2});
  }
  rules.push_back({"RevenueFromContractWithCustomer\\w*", Account::Net_Revenues, 1.0, 3});
  return TagMap(std::move(rules));
}

TagMap TagMap::from_json(const nlohmann::json& j) {
  std::vector<TagRule> rules;
  try {
    for (const auto& r : j.at("rules")) {
      TagRule rule;
      rule.pattern = r.at("pattern").get<std::string>();
      const auto name = r.at("account").get<std::string>();
      auto a = account_from_name(name);
      if (!a) throw Error(ErrorCode::UnknownAccount, "tag map names an unknown account", {name});
      rule.account = *a;
      rule.sign = r.value("sign", 1.0);
      rule.priority = r.value("priority", 1);
      rules.push_back(std::move(rule));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("tag map: ") + e.what());
  }
  return TagMap(std::move(rules));
}

nlohmann::ordered_json TagMap::to_json() const {
  nlohmann::ordered_json rules = nlohmann::ordered_json::array();
  for (const auto& r : rules_) {
    nlohmann::ordered_json j;
    j["pattern"] = r.pattern;
    j["account"] = account_name(r.account);
    j["sign"] = r.sign;
    j["priority"] = r.priority;
    rules.push_back(std::move(j));
  }
  return {{"rules", rules}};
}

void TagMap::validate(bool require_coverage) const {
  std::set<std::pair<Account, int>> seen;
  std::vector<std::string> duplicate;
  for (const auto& r : rules_) {
    if (r.sign != 1.0 && r.sign != -1.0)
      throw Error(ErrorCode::InvalidInput, "tag rule sign must be +1 or -1", {r.pattern});
    if (!seen.emplace(r.account, r.priority).second) duplicate.emplace_back(account_name(r.account));
  }
  if (!duplicate.empty()) throw Error(ErrorCode::InvalidInput, "tag rule priorities repeat for an account", duplicate);
  if (!require_coverage) return;
  std::vector<std::string> unreachable;
  for (Account a : all_accounts()) {
    const bool any = std::any_of(rules_.begin(), rules_.end(), [a](const TagRule& r) { return r.account == a; });
    if (!any) unreachable.emplace_back(account_name(a));
  }
  if (!unreachable.empty()) throw Error(ErrorCode::InvalidInput, "accounts without a tag rule", unreachable);
}

int TagMap::match(const std::string& tag) const {
  int best = -1;
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    if (best >= 0 && rules_[i].priority >= rules_[static_cast<std::size_t>(best)].priority) continue;
    if (std::regex_match(tag, compiled_[i])) best = static_cast<int>(i);
  }
  return best;
}

StandardStatement map_tags(const RawFiling& raw, const TagMap& tagmap, MappingStats* stats,
                           const PolarityPolicy& policy) {
  raw.validate();
  MappingStats local;
  MappingStats& st = stats ? *stats : local;

  StandardStatement s;
  s.company_id = raw.company_id;
  s.period = raw.period;
  s.form = raw.form;
  int months = raw.form == Form::K10 ? 12 : 3;

  std::array<int, kAccountCount> winner_priority;
  winner_priority.fill(-1);
  for (const auto& e : raw.entries) {
    if (e.tag == kPeriodMonthsTag) {
      months = static_cast<int>(e.value);
      continue;
    }
    const int r = tagmap.match(e.tag);
    if (r < 0) {
      ++st.unmatched;
      ++st.unmatched_tags[e.tag];
      continue;
    }
    const auto& rule = tagmap.rules()[static_cast<std::size_t>(r)];
    ++st.routed;
    auto& best = winner_priority[ai(rule.account)];
    if (best >= 0) {
      ++st.conflicts;
      if (rule.priority >= best) continue;
    }
    best = rule.priority;
    s.set(rule.account, rule.sign * e.value);
  }
  if (std::none_of(winner_priority.begin(), winner_priority.end(), [](int p) { return p >= 0; }))
    throw Error(ErrorCode::EmptyStatement, raw.company_id + " " + raw.period.label() + ": no entry matched a rule");

  if (months == 3) {
    s.basis = Basis::Quarterly;
  } else if (months == 3 * raw.period.quarter) {
    s.basis = Basis::Cumulative;
  } else {
    throw Error(ErrorCode::InvalidInput,
                raw.company_id + " " + raw.period.label() + ": reporting window of " + std::to_string(months) +
                    " months does not fit the quarter",
                {std::string(kPeriodMonthsTag)});
  }
  if (raw.period.quarter == 1) s.basis = Basis::Quarterly;
  s.validate();
  return fill_calculated_totals(normalize_polarity(s, policy));
}

// ---------------------------------------------------------------- ingest

std::size_t Provenance::get(const std::string& key) const {
  auto it = counts.find(key);
  return it == counts.end() ? 0 : it->second;
}

nlohmann::ordered_json Provenance::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : counts) j[k] = v;
  return j;
}

IngestResult ingest_filings(std::span<const RawFiling> filings, const TagMap& tagmap) {
  IngestResult result;
  auto& prov = result.provenance;
  MappingStats stats;

  std::map<std::pair<std::string, int>, std::map<int, StandardStatement>> by_year;
  for (const auto& f : filings) {
    prov.add("filings");
    StandardStatement s;
    try {
      s = map_tags(f, tagmap, &stats);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyStatement) throw;
      prov.add("dropped_empty_statement");
      continue;
    }
    auto& year = by_year[{s.company_id, s.period.year}];
    if (!year.emplace(s.period.quarter, std::move(s)).second) prov.add("dropped_duplicate_filing");
  }
  prov.add("entries_routed", stats.routed);
  prov.add("entries_unmatched", stats.unmatched);
  prov.add("tag_conflicts", stats.conflicts);

  for (auto& [key, quarters] : by_year) {
    std::vector<StandardStatement> chain;  // cumulative view of Q1..q while no gap
    bool contiguous = true;
    int expected = 1;
    for (auto& [q, s] : quarters) {
      if (q != expected) contiguous = false;
      expected = q + 1;
      StandardStatement out;
      if (s.basis == Basis::Cumulative) {
        if (!contiguous) {
          prov.add("dropped_cumulative_without_prior_quarters");
          continue;
        }
        chain.push_back(s);
        out = decumulate_quarters(chain).back();
        prov.add("decumulated");
      } else {
        out = s;
        if (contiguous) {
          StandardStatement cum = s;
          cum.basis = Basis::Cumulative;
          if (!chain.empty()) {
            const auto& prev = chain.back();
            for (Account a : all_accounts()) {
              if (!is_flow(a)) continue;
              const auto cur = s.get(a), before = prev.get(a);
              if (cur && before) {
                cum.set(a, *before + *cur);
              } else {
                cum.clear(a);
              }
            }
          }
          chain.push_back(std::move(cum));
        }
      }
      out.basis = Basis::Quarterly;
      out.calc.fill(std::nullopt);
      result.statements.push_back(fill_calculated_totals(out));
    }
  }
  prov.add("statements", result.statements.size());
  std::sort(result.statements.begin(), result.statements.end(), [](const auto& a, const auto& b) {
    return std::tie(a.company_id, a.period) < std::tie(b.company_id, b.period);
  });
  return result;
}

// ---------------------------------------------------------------- synthetic corpus

std::vector<MacroSnapshot> generate_macro_series(FiscalPeriod first, std::size_t quarters, std::uint64_t seed) {
  auto rng = Rng::stream(seed, "synth/macro");
  std::vector<MacroSnapshot> out;
  double dgs10 = 2.5, dff = 1.2, t5yie = 1.8, unrate = 5.0, gdp = 2.3, cs = 170.0;
  FiscalPeriod q = first;
  for (std::size_t i = 0; i < quarters; ++i, q = q.next()) {
    dgs10 = std::clamp(2.5 + 0.8 * (dgs10 - 2.5) + rng.normal(0.0, 0.25), 0.5, 6.0);
    dff = std::clamp(1.2 + 0.8 * (dff - 1.2) + rng.normal(0.0, 0.3), 0.05, 5.0);
    t5yie = std::clamp(1.8 + 0.7 * (t5yie - 1.8) + rng.normal(0.0, 0.15), 0.5, 3.0);
    unrate = std::clamp(5.0 + 0.85 * (unrate - 5.0) + rng.normal(0.0, 0.3), 3.0, 10.0);
    gdp = 2.3 + 0.3 * (gdp - 2.3) + rng.normal(0.0, 0.8);
    cs *= 1.01 + rng.normal(0.0, 0.005);

    MacroSnapshot m;
    m.quarter = q;
    m.DGS10 = round2(dgs10);
    m.DFF = round2(dff);
    m.T10YFF = round2(m.DGS10 - m.DFF);
    m.T10Y3M = round2(m.DGS10 - dff - rng.normal(0.1, 0.1));
    m.BAAFF = round2(m.DGS10 + 2.0 - m.DFF + rng.normal(0.0, 0.2));
    m.T5YIE = round2(t5yie);
    m.UNRATE = round2(unrate);
    m.GDP_change = round2(gdp);
    m.CSUSHPINSA = std::round(cs * 1000.0) / 1000.0;
    m.MORTGAGE30US = round2(m.DGS10 + 1.7 + rng.normal(0.0, 0.1));
    out.push_back(m);
  }
  return out;
}

namespace {

struct CompanyProfile {
  double scale, revenue_share, margin, gdp_beta;
  double r_inv, r_ar, r_aco, r_prop, r_intang, r_anco;
  double r_ap, r_notes, r_accrued, r_lco, r_ltd, r_lcnco, r_minority;
  double r_isadj, r_capex;
  bool alternate_tags;
};

CompanyProfile draw_profile(Rng& rng, bool allow_alternate) {
  CompanyProfile p{};
  p.scale = std::exp(rng.uniform(std::log(5e6), std::log(5e8)));
  p.revenue_share = rng.uniform(0.15, 0.4);
  p.margin = rng.uniform(-0.02, 0.2);
  p.gdp_beta = rng.uniform(0.5, 1.5);
  p.r_inv = rng.uniform(0.3, 0.7);
  p.r_ar = rng.uniform(0.3, 0.9);
  p.r_aco = rng.uniform(0.02, 0.15);
  p.r_prop = rng.uniform(0.5, 1.0);
  p.r_intang = rng.uniform(0.0, 0.2);
  p.r_anco = rng.uniform(0.01, 0.1);
  p.r_ap = rng.uniform(0.2, 0.5);
  p.r_notes = rng.uniform(0.01, 0.06);
  p.r_accrued = rng.uniform(0.05, 0.15);
  p.r_lco = rng.uniform(0.01, 0.05);
  p.r_ltd = rng.uniform(0.05, 0.35);
  p.r_lcnco = rng.uniform(0.0, 0.02);
  p.r_minority = rng.uniform(0.0, 0.03);
  p.r_isadj = rng.uniform(0.01, 0.05);
  p.r_capex = rng.uniform(0.02, 0.1);
  p.alternate_tags = allow_alternate && rng.uniform() < 0.5;
  return p;
}

// One company's consistent quarterly statements.
std::vector<StandardStatement> simulate_company(const std::string& id, const CompanyProfile& p,
                                                std::span<const MacroSnapshot> macro, Rng& rng) {
  using A = Account;
  auto whole = [](double x) { return std::round(x); };
  auto jitter = [&rng](double sd) { return 1.0 + rng.normal(0.0, sd); };

  double revenue = p.scale * p.revenue_share;
  double margin = p.margin;
  double cash = whole(revenue * rng.uniform(0.1, 0.8));
  double retained = whole(p.scale * rng.uniform(0.05, 0.5));
  const double paid_in = whole(p.scale * rng.uniform(0.1, 0.4));
  const double treasury = -std::max(1.0, whole(p.scale * rng.uniform(0.0, 0.05)));
  double prev_ar = whole(revenue * p.r_ar), prev_inv = whole(revenue * p.r_inv), prev_ap = whole(revenue * p.r_ap);

  std::vector<StandardStatement> out;
  for (const auto& m : macro) {
    revenue = std::max(1e3, revenue * (1.0 + 0.005 * (m.GDP_change - 2.0) * p.gdp_beta + rng.normal(0.0, 0.03)));
    margin = 0.6 * margin + 0.4 * p.margin + 0.004 * (m.GDP_change - 2.0) - 0.003 * (m.UNRATE - 5.0) +
             rng.normal(0.0, 0.01);

    StandardStatement s;
    s.company_id = id;
    s.period = m.quarter;
    s.form = m.quarter.quarter == 4 ? Form::K10 : Form::Q10;
    const double sales = whole(revenue);
    const double ltd = whole(p.scale * p.r_ltd * jitter(0.05));
    const double op_income = whole(sales * margin);
    const double net_income = whole(0.78 * op_income - ltd * (m.BAAFF + m.DFF) / 400.0);

    const double inv = whole(sales * p.r_inv * jitter(0.05));
    const double ar = whole(sales * p.r_ar * jitter(0.05));
    const double ap = whole(sales * p.r_ap * jitter(0.05));
    const double is_adj = whole(sales * p.r_isadj);
    const double bs_adj = -(ar - prev_ar) - (inv - prev_inv) + (ap - prev_ap);
    const double cf_op = net_income + bs_adj + is_adj;
    const double cf_inv = -whole(sales * p.r_capex * jitter(0.2));
    const double cf_other = whole(sales * rng.normal(0.0, 0.002));
    double cf_fin = whole(sales * rng.normal(-0.01, 0.03));
    const double floor = whole(sales * 0.05);
    if (cash + cf_op + cf_inv + cf_other + cf_fin < floor)
      cf_fin = floor - (cash + cf_op + cf_inv + cf_other) + whole(sales * rng.uniform(0.0, 0.1));
    const double cf_net = cf_op + cf_inv + cf_fin + cf_other;
    cash += cf_net;
    retained += net_income;
    prev_ar = ar;
    prev_inv = inv;
    prev_ap = ap;

    s.set(A::Cash, cash);
    s.set(A::Inventory, inv);
    s.set(A::Acc_Receivable, ar);
    s.set(A::AssetsCurrent_Other, whole(sales * p.r_aco * jitter(0.05)));
    s.set(A::Property, whole(p.scale * p.r_prop * jitter(0.02)));
    s.set(A::Intangibles, whole(p.scale * p.r_intang));
    s.set(A::AssetsNonCurrent_Other, whole(p.scale * p.r_anco * jitter(0.05)));
    s.set(A::AccPayable, ap);
    s.set(A::NotesIntConvDebt, whole(p.scale * p.r_notes * jitter(0.05)));
    s.set(A::OtherAccruedLiab, whole(sales * p.r_accrued * jitter(0.05)));
    s.set(A::LiabilitiesCurrent_Other, whole(sales * p.r_lco * jitter(0.05)));
    s.set(A::LiabilitiesNonCurrentOther, ltd);
    s.set(A::LiabilitiesCurrNonCurrOther, whole(p.scale * p.r_lcnco));
    s.set(A::PaidInCapital, paid_in);
    s.set(A::RetEarnings, retained);
    s.set(A::TreasuryStock, treasury);
    s.set(A::EquityOther_Minority, whole(p.scale * p.r_minority));
    s.set(A::Net_Revenues, sales);
    s.set(A::Op_Income, op_income);
    s.set(A::Net_Income, net_income);
    s.set(A::NetIncome_CF, net_income);
    s.set(A::BS_adjust, bs_adj);
    s.set(A::IS_adjust, is_adj);
    s.set(A::CF_Inv, cf_inv);
    s.set(A::CF_Inv_Total, cf_inv);
    s.set(A::CF_Fin, cf_fin);
    s.set(A::CF_Fin_Total, cf_fin);
    s.set(A::CF_Other, cf_other);

    auto sum = [&s](std::initializer_list<A> parts) {
      double t = 0.0;
      for (A a : parts) t += s.value_or_zero(a);
      return t;
    };
    s.set(A::AssetsCurrentTotal, sum({A::Cash, A::Inventory, A::Acc_Receivable, A::AssetsCurrent_Other}));
    s.set(A::AssetsTotal, sum({A::AssetsCurrentTotal, A::Property, A::Intangibles, A::AssetsNonCurrent_Other}));
    s.set(A::LiabilitiesCurrentTotal,
          sum({A::AccPayable, A::NotesIntConvDebt, A::OtherAccruedLiab, A::LiabilitiesCurrent_Other}));
    s.set(A::LiabilitiesTotal,
          sum({A::LiabilitiesCurrentTotal, A::LiabilitiesNonCurrentOther, A::LiabilitiesCurrNonCurrOther}));
    // Equity_Other closes the balance sheet.
    s.set(A::Equity_Other, s.value_or_zero(A::AssetsTotal) - s.value_or_zero(A::LiabilitiesTotal) -
                               s.value_or_zero(A::EquityOther_Minority) -
                               sum({A::PaidInCapital, A::RetEarnings, A::TreasuryStock}));
    s.set(A::EquityTotal, sum({A::PaidInCapital, A::RetEarnings, A::TreasuryStock, A::Equity_Other}));
    s.set(A::EquityMinorityTotal, sum({A::EquityTotal, A::EquityOther_Minority}));
    s.set(A::LiabilitiesAndEquityTotal, sum({A::LiabilitiesTotal, A::EquityMinorityTotal}));
    s.set(A::CF_Op_Total, cf_op);
    s.set(A::CF_Net_Total, cf_net);
    out.push_back(fill_calculated_totals(s));
  }
  return out;
}

RawFiling emit_filing(const StandardStatement& truth, const StandardStatement* ytd_flows, const CompanyProfile& p,
                      const SynthConfig& cfg, Rng& rng) {
  RawFiling f;
  f.company_id = truth.company_id;
  f.period = truth.period;
  f.form = truth.form;
  const bool ytd = ytd_flows != nullptr;
  if (ytd && truth.form == Form::Q10) f.entries.push_back({std::string(kPeriodMonthsTag), 3.0 * truth.period.quarter, "months"});
  for (Account a : all_accounts()) {
    const auto v = (ytd && is_flow(a)) ? ytd_flows->get(a) : truth.get(a);
    if (!v) continue;
    const auto& tag = tag_for(a);
    double value = *v;
    std::string name = tag.primary;
    if (p.alternate_tags && tag.alternate) {
      name = tag.alternate;
      value *= tag.alternate_sign;
    }
    if (a == Account::TreasuryStock && cfg.invert_polarity) value = -value;
    if (cfg.noise > 0.0) value = std::round(value * (1.0 + cfg.noise * rng.normal()));
    f.entries.push_back({name, value, "USD"});
  }
  if (cfg.unmapped_tags)
    f.entries.push_back({"EntityCommonStockSharesOutstanding", std::round(p.scale / 20.0), "shares"});
  return f;
}

}  // namespace

SynthCorpus generate_synthetic(const SynthConfig& config, std::uint64_t seed) {
  if (config.quarters == 0 || config.companies == 0)
    throw Error(ErrorCode::InvalidInput, "synthetic corpus needs companies and quarters");
  SynthCorpus corpus;
  corpus.macro = generate_macro_series({config.start_year, 1}, config.quarters, seed);

  for (std::size_t c = 0; c < config.companies; ++c) {
    auto rng = Rng::stream(seed, "synth/company", c);
    char id[16];
    std::snprintf(id, sizeof id, "C%05zu", c);
    const auto profile = draw_profile(rng, config.alternate_tags);
    auto quarters = simulate_company(id, profile, corpus.macro, rng);

    auto noise_rng = Rng::stream(seed, "synth/noise", c);
    StandardStatement ytd;
    for (std::size_t i = 0; i < quarters.size(); ++i) {
      const auto& q = quarters[i];
      // Year-to-date flows: needed for 10-Ks always, for 10-Qs in cumulative mode.
      if (q.period.quarter == 1) {
        ytd = q;
      } else {
        for (Account a : all_accounts())
          if (is_flow(a)) ytd.set(a, ytd.value_or_zero(a) + q.value_or_zero(a));
      }
      const bool report_ytd = q.form == Form::K10 || (config.cumulative && q.period.quarter > 1);
      corpus.filings.push_back(emit_filing(q, report_ytd ? &ytd : nullptr, profile, config, noise_rng));
    }
    for (auto& q : quarters) corpus.truth.push_back(std::move(q));
  }
  return corpus;
}

// ---------------------------------------------------------------- panel

Panel assemble_panel(std::span<const StandardStatement> stmts, std::span<const MacroSnapshot> macro, Exec exec) {
  std::map<int, const MacroSnapshot*> by_quarter;
  for (const auto& m : macro) by_quarter[m.quarter.ordinal()] = &m;

  std::vector<const StandardStatement*> sorted;
  sorted.reserve(stmts.size());
  std::set<std::string> missing;
  for (const auto& s : stmts) {
    sorted.push_back(&s);
    if (!by_quarter.count(s.period.ordinal())) missing.insert(s.period.label());
  }
  if (!missing.empty())
    throw Error(ErrorCode::MissingMacro, "no macro snapshot for statement quarters",
                std::vector<std::string>(missing.begin(), missing.end()));
  std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
    return std::tie(a->company_id, a->period) < std::tie(b->company_id, b->period);
  });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i]->company_id == sorted[i - 1]->company_id && sorted[i]->period == sorted[i - 1]->period)
      throw Error(ErrorCode::InvalidInput, "duplicate statement",
                  {sorted[i]->company_id + " " + sorted[i]->period.label()});

  const std::size_t n = sorted.size();
  std::vector<FeatureValues> features(n);
  std::vector<double> deviation(n);
  auto featurize = [&](std::size_t i) {
    const auto& s = *sorted[i];
    features[i] = compute_features(s, *by_quarter.at(s.period.ordinal()));
    deviation[i] = validate_checkpoints(s).max_relative_deviation();
  };
  if (exec == Exec::Parallel) {
    const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) featurize(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) featurize(i);
  }

  Panel panel;
  panel.macro.assign(macro.begin(), macro.end());
  std::sort(panel.macro.begin(), panel.macro.end(),
            [](const auto& a, const auto& b) { return a.quarter < b.quarter; });
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const auto& a = *sorted[i];
    const auto& b = *sorted[i + 1];
    if (a.company_id != b.company_id || a.period.next() != b.period) continue;
    Observation obs;
    obs.company_id = a.company_id;
    obs.period = a.period;
    obs.features = features[i];
    bool complete = true;
    for (std::size_t t = 0; t < kTaskCount; ++t) {
      const auto v = features[i + 1][static_cast<std::size_t>(task_feature(kAllTasks[t]))];
      if (!v) {
        complete = false;
        break;
      }
      obs.targets[t] = *v;
    }
    if (!complete) {
      panel.provenance.add("skipped_absent_target");
      continue;
    }
    obs.check_deviation = std::max(deviation[i], deviation[i + 1]);
    panel.observations.push_back(std::move(obs));
  }
  panel.provenance.add("statements", n);
  panel.provenance.add("observations", panel.observations.size());
  return panel;
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorCode::EmptyResult, "percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Panel filter_outliers(const Panel& panel, const OutlierPolicy& policy) {
  if (!(policy.lower_percentile <= policy.upper_percentile))
    throw Error(ErrorCode::InvalidInput, "lower percentile above upper", {"lower_percentile"});
  std::array<double, kFeatureCount> lo{}, hi{};
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    std::vector<double> col;
    col.reserve(panel.observations.size());
    for (const auto& o : panel.observations)
      if (o.features[f] && std::isfinite(*o.features[f])) col.push_back(*o.features[f]);
    if (col.empty()) {
      lo[f] = hi[f] = 0.0;
      continue;
    }
    lo[f] = percentile(col, policy.lower_percentile);
    hi[f] = percentile(col, policy.upper_percentile);
  }

  Panel out;
  out.macro = panel.macro;
  out.provenance = panel.provenance;
  for (const auto& o : panel.observations) {
    if (o.check_deviation > policy.check_tolerance) {
      out.provenance.add("dropped_checkpoint");
      continue;
    }
    bool absent = false, outside = false;
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      const auto& v = o.features[f];
      if (!v || !std::isfinite(*v)) {
        absent = true;
        break;
      }
      if (*v < lo[f] || *v > hi[f]) outside = true;
    }
    if (absent) {
      out.provenance.add("dropped_absent_feature");
      continue;
    }
    if (outside) {
      out.provenance.add("dropped_outlier");
      continue;
    }
    out.observations.push_back(o);
  }
  if (out.observations.empty()) throw Error(ErrorCode::EmptyResult, "outlier filter dropped every observation");
  out.provenance.counts["observations"] = out.observations.size();
  return out;
}

nlohmann::ordered_json observation_to_json(const Observation& obs) {
  nlohmann::ordered_json j;
  j["company_id"] = obs.company_id;
  j["year"] = obs.period.year;
  j["quarter"] = obs.period.quarter;
  nlohmann::ordered_json f = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    const auto name = std::string(feature_name(static_cast<Feature>(i)));
    if (obs.features[i] && std::isfinite(*obs.features[i])) {
      f[name] = *obs.features[i];
    } else {
      f[name] = nullptr;
    }
  }
  j["features"] = std::move(f);
  nlohmann::ordered_json t = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < kTargetCount; ++i) t[std::string(task_name(kAllTasks[i]))] = obs.targets[i];
  j["targets"] = std::move(t);
  j["check_deviation"] = obs.check_deviation;
  return j;
}

Observation observation_from_json(const nlohmann::json& j) {
  Observation o;
  try {
    o.company_id = j.at("company_id").get<std::string>();
    o.period = {j.at("year").get<int>(), j.at("quarter").get<int>()};
    for (const auto& [name, value] : j.at("features").items()) {
      auto f = feature_from_name(name);
      if (!f) throw Error(ErrorCode::ParseError, "unknown feature in panel", {name});
      if (!value.is_null()) o.features[static_cast<std::size_t>(*f)] = value.get<double>();
    }
    for (const auto& [name, value] : j.at("targets").items()) {
      auto t = task_from_name(name);
      if (!t) throw Error(ErrorCode::ParseError, "unknown target in panel", {name});
      o.targets[static_cast<std::size_t>(*t)] = value.get<double>();
    }
    o.check_deviation = j.value("check_deviation", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("panel record: ") + e.what());
  }
  return o;
}

void write_panel(const std::string& path, const Panel& panel, const nlohmann::json& meta) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidInput, "cannot write " + path);
  nlohmann::ordered_json m;
  m["format"] = "finpred-panel/1";
  if (meta.is_object())
    for (const auto& [k, v] : meta.items()) m[k] = v;
  m["provenance"] = panel.provenance.to_json();
  nlohmann::ordered_json macro = nlohmann::ordered_json::array();
  for (const auto& s : panel.macro) {
    nlohmann::ordered_json row;
    row["period"] = s.quarter.label();
    const auto v = s.values();
    for (std::size_t i = 0; i < kMacroCount; ++i) row[std::string(kMacroMnemonics[i])] = v[i];
    macro.push_back(std::move(row));
  }
  m["macro"] = std::move(macro);
  nlohmann::ordered_json head;
  head["_meta"] = std::move(m);
  out << head.dump() << '\n';
  for (const auto& o : panel.observations) out << observation_to_json(o).dump() << '\n';
}

Panel read_panel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidInput, "cannot open " + path);
  Panel panel;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (j.contains("_meta")) {
      const auto& m = j["_meta"];
      if (m.contains("provenance"))
        for (const auto& [k, v] : m["provenance"].items()) panel.provenance.counts[k] = v.get<std::size_t>();
      if (m.contains("macro"))
        for (const auto& row : m["macro"]) {
          auto q = FiscalPeriod::parse(row.at("period").get<std::string>());
          if (!q) throw Error(ErrorCode::ParseError, "bad macro period in panel header", {"period"});
          std::array<double, kMacroCount> v{};
          for (std::size_t i = 0; i < kMacroCount; ++i) v[i] = row.at(std::string(kMacroMnemonics[i])).get<double>();
          panel.macro.push_back(MacroSnapshot::from_values(*q, v));
        }
      continue;
    }
    panel.observations.push_back(observation_from_json(j));
  }
  return panel;
}

void write_feature_matrix(const std::string& features_path, const std::string& targets_path, const Panel& panel,
                          ScenarioId scenario) {
  std::ofstream fx(features_path), ty(targets_path);
  if (!fx) throw Error(ErrorCode::InvalidInput, "cannot write " + features_path);
  if (!ty) throw Error(ErrorCode::InvalidInput, "cannot write " + targets_path);
  fx << "company_id,period," << join(scenario_feature_names(scenario), ",") << '\n';
  ty << "company_id,period";
  for (Task t : kAllTasks) ty << ',' << task_name(t);
  ty << '\n';
  for (const auto& o : panel.observations) {
    const auto row = select_features(o.features, scenario);
    fx << o.company_id << ',' << o.period.label();
    for (double v : row) fx << ',' << format_double(v);
    fx << '\n';
    ty << o.company_id << ',' << o.period.label();
    for (double v : o.targets) ty << ',' << format_double(v);
    ty << '\n';
  }
}

}  // namespace finpred
