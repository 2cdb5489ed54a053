#include "finpred/ratios.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "finpred/error.hpp"
#include "finpred/text.hpp"

namespace finpred {

namespace {

constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "CurrentRatio", "QuickRatio",     "CashRatio",         "TotalAssetTurnover",
    "FixedAssetTurnover", "TangibleAssetTurnover", "PPETurnover", "DSO",
    "ARTurnover",   "ADP",            "APTurnover",        "InventoryTurnover",
    "ADI",          "WorkingCapitalTurnover", "CashCycle",  "ROA",
    "ROE",          "NetProfitMargin", "GrossProfitMargin", "OperatingProfitMargin",
    "BasicEarningPower", "DebtRatio", "LTDebtRatio",       "DebtToEquity",
    "NCG",          "OCG",            "CLCC",              "OCS",
    "QPT",          "QOFFUR",         "LYCA",              "IAICOC",
    "ROA2bond",     "DGS10",          "T10YFF",            "T10Y3M",
    "DFF",          "BAAFF",          "T5YIE",             "UNRATE",
    "GDP_change",   "CSUSHPINSA",     "MORTGAGE30US",
};

const std::array<Feature, kFeatureCount>& all_features() {
  static const auto all = [] {
    std::array<Feature, kFeatureCount> a{};
    for (std::size_t i = 0; i < kFeatureCount; ++i) a[i] = static_cast<Feature>(i);
    return a;
  }();
  return all;
}

std::size_t fi(Feature f) { return static_cast<std::size_t>(f); }

std::optional<double> ratio(std::optional<double> num, std::optional<double> den) {
  if (!num || !den || *den == 0.0) return std::nullopt;
  return *num / *den;
}

}  // namespace

std::string_view feature_name(Feature f) { return kFeatureNames[fi(f)]; }

std::optional<Feature> feature_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kFeatureCount; ++i)
    if (kFeatureNames[i] == name) return static_cast<Feature>(i);
  return std::nullopt;
}

std::string_view task_name(Task t) {
  switch (t) {
    case Task::ROA: return "ROA";
    case Task::ROE: return "ROE";
    case Task::NetMargin: return "NetMargin";
    case Task::OpMargin: return "OpMargin";
    case Task::CashRatio: return "CashRatio";
    case Task::OCG: return "OCG";
  }
  return "?";
}

std::optional<Task> task_from_name(std::string_view name) {
  for (Task t : kAllTasks)
    if (task_name(t) == name) return t;
  return std::nullopt;
}

Feature task_feature(Task t) {
  switch (t) {
    case Task::ROA: return Feature::ROA;
    case Task::ROE: return Feature::ROE;
    case Task::NetMargin: return Feature::NetProfitMargin;
    case Task::OpMargin: return Feature::OperatingProfitMargin;
    case Task::CashRatio: return Feature::CashRatio;
    case Task::OCG: return Feature::OCG;
  }
  return Feature::ROA;
}

std::string_view scenario_name(ScenarioId s) {
  switch (s) {
    case ScenarioId::Base: return "base";
    case ScenarioId::AllVariables: return "all_variables";
    case ScenarioId::FinSt: return "fin_st";
    case ScenarioId::NewVars: return "new_vars";
  }
  return "?";
}

std::optional<ScenarioId> scenario_from_name(std::string_view name) {
  if (name == "base") return ScenarioId::Base;
  if (name == "all_variables" || name == "all-vars" || name == "all_vars") return ScenarioId::AllVariables;
  if (name == "fin_st" || name == "fin-st") return ScenarioId::FinSt;
  if (name == "new_vars" || name == "new-vars" || name == "new") return ScenarioId::NewVars;
  return std::nullopt;
}

std::span<const Feature> scenario_features(ScenarioId s) {
  std::span<const Feature> all(all_features());
  switch (s) {
    case ScenarioId::Base: return all.subspan(0, kStandardRatioCount);
    case ScenarioId::AllVariables: return all;
    case ScenarioId::FinSt: return all.subspan(0, kRatioCount);
    case ScenarioId::NewVars: return all.subspan(kStandardRatioCount, kCashFlowRatioCount + kMrfsRatioCount);
  }
  return all;
}

std::vector<std::string> scenario_feature_names(ScenarioId s) {
  std::vector<std::string> out;
  for (Feature f : scenario_features(s)) out.emplace_back(feature_name(f));
  return out;
}

// ---------------------------------------------------------------- macro

std::array<double, kMacroCount> MacroSnapshot::values() const {
  return {DGS10, T10YFF, T10Y3M, DFF, BAAFF, T5YIE, UNRATE, GDP_change, CSUSHPINSA, MORTGAGE30US};
}

MacroSnapshot MacroSnapshot::from_values(FiscalPeriod q, std::span<const double> v) {
  if (v.size() != kMacroCount) throw Error(ErrorCode::DimensionMismatch, "macro snapshot needs 10 values");
  MacroSnapshot m;
  m.quarter = q;
  m.DGS10 = v[0];
  m.T10YFF = v[1];
  m.T10Y3M = v[2];
  m.DFF = v[3];
  m.BAAFF = v[4];
  m.T5YIE = v[5];
  m.UNRATE = v[6];
  m.GDP_change = v[7];
  m.CSUSHPINSA = v[8];
  m.MORTGAGE30US = v[9];
  return m;
}

void MacroSnapshot::validate() const {
  const auto v = values();
  std::vector<std::string> bad;
  for (std::size_t i = 0; i < kMacroCount; ++i)
    if (!std::isfinite(v[i])) bad.emplace_back(kMacroMnemonics[i]);
  if (!bad.empty()) throw Error(ErrorCode::InvalidInput, "non-finite macro values for " + quarter.label(), bad);
}

std::vector<MacroSnapshot> read_macro_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidInput, "cannot open " + path);
  std::vector<MacroSnapshot> out;
  std::string line;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line, ',');
    if (!header_seen) {
      std::vector<std::string> expected{"period"};
      for (auto m : kMacroMnemonics) expected.emplace_back(m);
      if (cells != expected) {
        std::vector<std::string> unexpected;
        for (const auto& c : cells)
          if (std::find(expected.begin(), expected.end(), c) == expected.end()) unexpected.push_back(c);
        throw Error(ErrorCode::ParseError, path + ": macro header must be period + the 10 series mnemonics",
                    unexpected);
      }
      header_seen = true;
      continue;
    }
    if (cells.size() != kMacroCount + 1)
      throw Error(ErrorCode::ParseError, path + ":" + std::to_string(line_no) + ": expected 11 columns");
    auto q = FiscalPeriod::parse(cells[0]);
    if (!q) throw Error(ErrorCode::ParseError, path + ":" + std::to_string(line_no) + ": bad period", {"period"});
    std::array<double, kMacroCount> v{};
    for (std::size_t i = 0; i < kMacroCount; ++i) v[i] = parse_double(cells[i + 1], std::string(kMacroMnemonics[i]));
    auto snap = MacroSnapshot::from_values(*q, v);
    snap.validate();
    out.push_back(snap);
  }
  return out;
}

void write_macro_csv(const std::string& path, std::span<const MacroSnapshot> rows, const std::string& comment) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidInput, "cannot write " + path);
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "period";
  for (auto m : kMacroMnemonics) out << ',' << m;
  out << '\n';
  for (const auto& r : rows) {
    out << r.quarter.label();
    for (double v : r.values()) out << ',' << format_double(v);
    out << '\n';
  }
}

// ---------------------------------------------------------------- ratios

void compute_standard_ratios(const StandardStatement& s, RatioVector& out) {
  using A = Account;
  using C = CalcTotal;
  const auto ca = s.total(A::AssetsCurrentTotal, C::AssetsCurrentTotal_CALC);
  const auto cl = s.total(A::LiabilitiesCurrentTotal, C::LiabilitiesCurrentTotal_CALC);
  const auto assets = s.total(A::AssetsTotal, C::AssetsTotal_CALC);
  const auto liabilities = s.total(A::LiabilitiesTotal, C::LiabilitiesTotal_CALC);
  const auto equity = s.total(A::EquityTotal, C::EquityTotal_CALC);
  const double cash = s.value_or_zero(A::Cash);
  const double inventory = s.value_or_zero(A::Inventory);
  const double ar = s.value_or_zero(A::Acc_Receivable);
  const double ap = s.value_or_zero(A::AccPayable);
  const double sales = s.value_or_zero(A::Net_Revenues);
  const double op_income = s.value_or_zero(A::Op_Income);
  const double net_income = s.value_or_zero(A::Net_Income);
  const double non_cash_is = s.value_or_zero(A::IS_adjust);

  std::optional<double> fixed_assets, tangible, working_capital, lt_liabilities;
  if (assets && ca) fixed_assets = *assets - *ca;
  if (fixed_assets) tangible = *fixed_assets - s.value_or_zero(A::Intangibles);
  if (ca && cl) working_capital = *ca - *cl;
  if (liabilities && cl) lt_liabilities = *liabilities - *cl;
  const std::optional<double> daily_sales = sales != 0.0 ? std::optional(sales / kQuarterDays) : std::nullopt;

  auto set = [&](Feature f, std::optional<double> v) { out[fi(f)] = v; };
  set(Feature::CurrentRatio, ratio(ca, cl));
  set(Feature::QuickRatio, ca ? ratio(*ca - inventory, cl) : std::nullopt);
  set(Feature::CashRatio, ratio(cash, cl));
  set(Feature::TotalAssetTurnover, ratio(sales, assets));
  set(Feature::FixedAssetTurnover, ratio(sales, fixed_assets));
  set(Feature::TangibleAssetTurnover, ratio(sales, tangible));
  set(Feature::PPETurnover, ratio(sales, s.value_or_zero(A::Property)));
  set(Feature::DSO, ratio(ar, daily_sales));
  set(Feature::ARTurnover, ratio(sales, ar));
  set(Feature::ADP, ratio(ap, daily_sales));
  set(Feature::APTurnover, ratio(sales, ap));
  set(Feature::InventoryTurnover, ratio(sales, inventory));
  set(Feature::ADI, ratio(inventory, daily_sales));
  set(Feature::WorkingCapitalTurnover, ratio(sales, working_capital));
  const auto adi = out[fi(Feature::ADI)], dso = out[fi(Feature::DSO)], adp = out[fi(Feature::ADP)];
  set(Feature::CashCycle, adi && dso && adp ? std::optional(*adi + *dso - *adp) : std::nullopt);
  set(Feature::ROA, ratio(net_income, assets));
  set(Feature::ROE, ratio(net_income, equity));
  set(Feature::NetProfitMargin, ratio(net_income, sales));
  // No cost-of-revenue line in the template: operating income plus non-cash
  // income-statement charges stands in for gross profit.
  set(Feature::GrossProfitMargin, ratio(op_income + non_cash_is, sales));
  set(Feature::OperatingProfitMargin, ratio(op_income, sales));
  set(Feature::BasicEarningPower, ratio(op_income, assets));
  set(Feature::DebtRatio, ratio(liabilities, assets));
  set(Feature::LTDebtRatio, ratio(lt_liabilities, assets));
  set(Feature::DebtToEquity, ratio(lt_liabilities, equity));
}

double quality_of_payment_terms(double dso_days) {
  if (dso_days <= 30.0) return 1.0;
  if (dso_days >= 90.0) return -1.0;
  return 1.0 - (dso_days - 30.0) / 30.0;
}

std::optional<double> quality_of_op_to_fin(double cf_op, double cf_fin) {
  const double scale = std::abs(cf_op) + std::abs(cf_fin);
  if (scale == 0.0) return std::nullopt;
  if (cf_fin < 0.0) return cf_op > 0.0 ? 1.0 : (cf_op < 0.0 ? -1.0 : 0.0);
  return cf_op / scale;
}

void compute_cf_ratios(const StandardStatement& s, RatioVector& out) {
  using A = Account;
  using C = CalcTotal;
  const double cash = s.value_or_zero(A::Cash);
  const auto cf_op = s.total(A::CF_Op_Total, C::CF_Op_Total_CALC);
  const auto cf_net = s.total(A::CF_Net_Total, C::CF_Net_Total_CALC);
  const auto cf_fin = s.get(A::CF_Fin_Total) ? s.get(A::CF_Fin_Total) : s.get(A::CF_Fin);
  const auto cl = s.total(A::LiabilitiesCurrentTotal, C::LiabilitiesCurrentTotal_CALC);
  const double sales = s.value_or_zero(A::Net_Revenues);

  out[fi(Feature::NCG)] = ratio(cf_net, cash);
  out[fi(Feature::OCG)] = ratio(cf_op, cash);
  out[fi(Feature::CLCC)] = ratio(cf_op, cl);
  out[fi(Feature::OCS)] = ratio(cf_op, sales);
  const auto dso = out[fi(Feature::DSO)];
  out[fi(Feature::QPT)] = dso ? std::optional(quality_of_payment_terms(*dso)) : std::nullopt;
  out[fi(Feature::QOFFUR)] = cf_op ? quality_of_op_to_fin(*cf_op, cf_fin.value_or(0.0)) : std::nullopt;
}

std::optional<double> liabilities_yield_curve_alignment(double lt_debt, double st_debt, double yield_curve_pct) {
  const long double total = static_cast<long double>(lt_debt) + st_debt;
  if (total == 0.0L) return std::nullopt;
  // Extended precision keeps the share difference from picking up a
  // rounding error before the final rounding to double.
  const long double spread = static_cast<long double>(lt_debt) - st_debt;
  const long double value = spread * (-static_cast<long double>(yield_curve_pct)) / (100.0L * total);
  return static_cast<double>(value);
}

std::optional<double> inflation_adjusted_inventory_cost(double inventory, double assets, double inflation_pct,
                                                        std::optional<double> adi_days) {
  if (inventory == 0.0) return 0.0;
  if (assets == 0.0 || !adi_days) return std::nullopt;
  return (inventory / assets) * (inflation_pct / 100.0) * (*adi_days / 365.0);
}

std::optional<double> roa_to_bond(double quarterly_roa, double baa_spread_pct, double fed_funds_pct) {
  const double baa_rate = (baa_spread_pct + fed_funds_pct) / 100.0;
  if (baa_rate == 0.0) return std::nullopt;
  return 4.0 * quarterly_roa / baa_rate;
}

void compute_mrfs_ratios(const StandardStatement& s, const MacroSnapshot& macro, RatioVector& out) {
  using A = Account;
  using C = CalcTotal;
  const auto cl = s.total(A::LiabilitiesCurrentTotal, C::LiabilitiesCurrentTotal_CALC);
  const auto liabilities = s.total(A::LiabilitiesTotal, C::LiabilitiesTotal_CALC);
  const auto assets = s.total(A::AssetsTotal, C::AssetsTotal_CALC);

  out[fi(Feature::LYCA)] = (cl && liabilities)
                               ? liabilities_yield_curve_alignment(*liabilities - *cl, *cl, macro.T10Y3M)
                               : std::nullopt;
  out[fi(Feature::IAICOC)] = inflation_adjusted_inventory_cost(s.value_or_zero(A::Inventory), assets.value_or(0.0),
                                                               macro.T5YIE, out[fi(Feature::ADI)]);
  const auto roa = out[fi(Feature::ROA)];
  out[fi(Feature::ROA2bond)] = roa ? roa_to_bond(*roa, macro.BAAFF, macro.DFF) : std::nullopt;
}

RatioVector compute_all_ratios(const StandardStatement& stmt, const MacroSnapshot& macro) {
  RatioVector out{};
  compute_standard_ratios(stmt, out);
  compute_cf_ratios(stmt, out);
  compute_mrfs_ratios(stmt, macro, out);
  return out;
}

FeatureValues compute_features(const StandardStatement& stmt, const MacroSnapshot& macro) {
  FeatureValues out{};
  const auto r = compute_all_ratios(stmt, macro);
  std::copy(r.begin(), r.end(), out.begin());
  const auto m = macro.values();
  for (std::size_t i = 0; i < kMacroCount; ++i) out[kRatioCount + i] = m[i];
  return out;
}

std::vector<double> select_features(const FeatureValues& features, ScenarioId scenario) {
  std::vector<double> out;
  std::vector<std::string> missing;
  for (Feature f : scenario_features(scenario)) {
    const auto& v = features[fi(f)];
    if (!v || !std::isfinite(*v)) {
      missing.emplace_back(feature_name(f));
      continue;
    }
    out.push_back(*v);
  }
  if (!missing.empty()) throw Error(ErrorCode::MissingFeature, "absent features for scenario", missing);
  return out;
}

// ---------------------------------------------------------------- transforms

Normalizer::Normalizer(std::vector<Bounds> bounds) : bounds_(std::move(bounds)) {
  for (const auto& b : bounds_)
    if (!(b.max >= b.min)) throw Error(ErrorCode::InvalidInput, "normalizer bounds must satisfy max >= min");
}

Normalizer Normalizer::fit(std::span<const double> data, std::size_t cols, std::span<const std::string> names) {
  if (cols == 0 || data.size() % cols != 0)
    throw Error(ErrorCode::DimensionMismatch, "data size is not a multiple of the column count");
  const std::size_t rows = data.size() / cols;
  std::vector<Bounds> bounds(cols, Bounds{std::numeric_limits<double>::infinity(),
                                          -std::numeric_limits<double>::infinity()});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = data[r * cols + c];
      bounds[c].min = std::min(bounds[c].min, v);
      bounds[c].max = std::max(bounds[c].max, v);
    }
  std::vector<std::string> degenerate;
  for (std::size_t c = 0; c < cols; ++c)
    if (!(bounds[c].max > bounds[c].min))
      degenerate.push_back(c < names.size() ? names[c] : "column " + std::to_string(c));
  if (!degenerate.empty()) throw Error(ErrorCode::DegenerateFeature, "min == max at fit time", degenerate);
  return Normalizer(std::move(bounds));
}

double Normalizer::apply_one(std::size_t col, double x, bool* clamped) const {
  const auto& b = bounds_.at(col);
  if (b.max == b.min) return 0.0;
  double y = (x - b.min) / (b.max - b.min);
  if (y < 0.0 || y > 1.0) {
    y = std::clamp(y, 0.0, 1.0);
    if (clamped) *clamped = true;
  }
  return y;
}

double Normalizer::invert_one(std::size_t col, double y) const {
  const auto& b = bounds_.at(col);
  return b.min + y * (b.max - b.min);
}

std::vector<double> Normalizer::apply(std::span<const double> x, bool* clamped) const {
  std::vector<double> out(x.begin(), x.end());
  apply_in_place(out, clamped);
  return out;
}

void Normalizer::apply_in_place(std::span<double> x, bool* clamped) const {
  if (x.size() % bounds_.size() != 0) throw Error(ErrorCode::DimensionMismatch, "normalizer width mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = apply_one(i % bounds_.size(), x[i], clamped);
}

std::vector<double> Normalizer::invert(std::span<const double> y) const {
  if (y.size() % bounds_.size() != 0) throw Error(ErrorCode::DimensionMismatch, "normalizer width mismatch");
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = invert_one(i % bounds_.size(), y[i]);
  return out;
}

double sigmoid_stretch(double x, double center, double k) {
  if (!(k > 0.0)) throw Error(ErrorCode::InvalidInput, "sigmoid steepness must be positive", {"k"});
  return 1.0 / (1.0 + std::exp(-k * (x - center)));
}

double default_stretch_steepness(double sd) {
  if (!(sd > 0.0)) throw Error(ErrorCode::DegenerateStatistics, "stretch needs a positive spread", {"OCG"});
  return std::log(0.73 / 0.27) / sd;
}

}  // namespace finpred
