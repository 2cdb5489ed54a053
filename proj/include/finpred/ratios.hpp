#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "finpred/statements.hpp"

namespace finpred {

/// The 43 model variables in canonical order: 24 balance-sheet/income
/// ratios, 6 cash-flow ratios, 3 macro-related ratios, 10 macro series.
enum class Feature : std::uint8_t {
  CurrentRatio,
  QuickRatio,
  CashRatio,
  TotalAssetTurnover,
  FixedAssetTurnover,
  TangibleAssetTurnover,
  PPETurnover,
  DSO,
  ARTurnover,
  ADP,
  APTurnover,
  InventoryTurnover,
  ADI,
  WorkingCapitalTurnover,
  CashCycle,
  ROA,
  ROE,
  NetProfitMargin,
  GrossProfitMargin,
  OperatingProfitMargin,
  BasicEarningPower,
  DebtRatio,
  LTDebtRatio,
  DebtToEquity,
  // cash-flow quality
  NCG,
  OCG,
  CLCC,
  OCS,
  QPT,
  QOFFUR,
  // macro-related statement ratios
  LYCA,
  IAICOC,
  ROA2bond,
  // macro series
  DGS10,
  T10YFF,
  T10Y3M,
  DFF,
  BAAFF,
  T5YIE,
  UNRATE,
  GDP_change,
  CSUSHPINSA,
  MORTGAGE30US,
};
inline constexpr std::size_t kFeatureCount = 43;
inline constexpr std::size_t kStandardRatioCount = 24;
inline constexpr std::size_t kCashFlowRatioCount = 6;
inline constexpr std::size_t kMrfsRatioCount = 3;
inline constexpr std::size_t kRatioCount = 33;
inline constexpr std::size_t kMacroCount = 10;

std::string_view feature_name(Feature f);
std::optional<Feature> feature_from_name(std::string_view name);

/// Next-quarter prediction targets.
enum class Task : std::uint8_t { ROA, ROE, NetMargin, OpMargin, CashRatio, OCG };
inline constexpr std::size_t kTaskCount = 6;
inline constexpr std::array<Task, kTaskCount> kAllTasks = {Task::ROA,      Task::ROE,       Task::NetMargin,
                                                           Task::OpMargin, Task::CashRatio, Task::OCG};
std::string_view task_name(Task t);
std::optional<Task> task_from_name(std::string_view name);
/// The ratio a task reads from the t+1 statement.
Feature task_feature(Task t);

enum class ScenarioId : std::uint8_t { Base, AllVariables, FinSt, NewVars };
inline constexpr std::array<ScenarioId, 4> kAllScenarios = {ScenarioId::AllVariables, ScenarioId::Base,
                                                            ScenarioId::FinSt, ScenarioId::NewVars};
std::string_view scenario_name(ScenarioId s);  // base / all_variables / fin_st / new_vars
std::optional<ScenarioId> scenario_from_name(std::string_view name);
/// Features of a scenario in canonical order.
std::span<const Feature> scenario_features(ScenarioId s);
std::vector<std::string> scenario_feature_names(ScenarioId s);

// ---------------------------------------------------------------- macro

struct MacroSnapshot {
  FiscalPeriod quarter;
  double DGS10 = 0;         // %
  double T10YFF = 0;        // %
  double T10Y3M = 0;        // %
  double DFF = 0;           // %
  double BAAFF = 0;         // %
  double T5YIE = 0;         // %
  double UNRATE = 0;        // %
  double GDP_change = 0;    // %, annualized
  double CSUSHPINSA = 0;    // index
  double MORTGAGE30US = 0;  // %

  std::array<double, kMacroCount> values() const;
  static MacroSnapshot from_values(FiscalPeriod q, std::span<const double> v);
  void validate() const;
};

inline constexpr std::array<std::string_view, kMacroCount> kMacroMnemonics = {
    "DGS10", "T10YFF", "T10Y3M", "DFF", "BAAFF", "T5YIE", "UNRATE", "GDP_change", "CSUSHPINSA", "MORTGAGE30US"};

/// Macro table: a `period` key column followed by the 10 series mnemonics.
std::vector<MacroSnapshot> read_macro_csv(const std::string& path);
void write_macro_csv(const std::string& path, std::span<const MacroSnapshot> rows, const std::string& comment = {});

// ---------------------------------------------------------------- ratios

using RatioVector = std::array<std::optional<double>, kRatioCount>;
using FeatureValues = std::array<std::optional<double>, kFeatureCount>;

inline constexpr double kQuarterDays = 365.0 / 4.0;

/// Table A1 ratios (entries 0..23). Zero denominators leave the entry absent.
void compute_standard_ratios(const StandardStatement& stmt, RatioVector& out);
/// Cash-flow quality ratios (entries 24..29). Needs DSO from the standard pass.
void compute_cf_ratios(const StandardStatement& stmt, RatioVector& out);
/// Macro-related ratios (entries 30..32). Needs ROA and ADI from the standard pass.
void compute_mrfs_ratios(const StandardStatement& stmt, const MacroSnapshot& macro, RatioVector& out);

RatioVector compute_all_ratios(const StandardStatement& stmt, const MacroSnapshot& macro);
FeatureValues compute_features(const StandardStatement& stmt, const MacroSnapshot& macro);

/// DSO -> score: +1 at or below 30 days, 0 at 60, -1 at or above 90,
/// linear in between.
double quality_of_payment_terms(double dso_days);

/// Operating vs financing cash flow quality score in [-1, 1]. Repaying
/// financing (cf_fin < 0) scores sgn(cf_op); otherwise the operating share
/// cf_op / (|cf_op| + |cf_fin|). Absent when both are zero.
std::optional<double> quality_of_op_to_fin(double cf_op, double cf_fin);

/// Debt-structure alignment with the yield curve (percent points).
/// Absent when total debt is zero.
std::optional<double> liabilities_yield_curve_alignment(double lt_debt, double st_debt, double yield_curve_pct);

/// Inventory carrying cost under expected inflation (positive = cost).
std::optional<double> inflation_adjusted_inventory_cost(double inventory, double assets, double inflation_pct,
                                                        std::optional<double> adi_days);

/// Annualized quarterly ROA over the BAA bond rate (BAAFF + DFF).
std::optional<double> roa_to_bond(double quarterly_roa, double baa_spread_pct, double fed_funds_pct);

// ---------------------------------------------------------------- selection

/// Ordered feature vector for a scenario. Throws MissingFeature naming the
/// absent entries.
std::vector<double> select_features(const FeatureValues& features, ScenarioId scenario);

// ---------------------------------------------------------------- transforms

/// Per-feature min-max scaling.
class Normalizer {
 public:
  struct Bounds {
    double min = 0.0;
    double max = 1.0;
  };

  Normalizer() = default;
  explicit Normalizer(std::vector<Bounds> bounds);

  /// Column-wise fit over row-major data (rows x cols). Throws
  /// DegenerateFeature when a column has min == max.
  static Normalizer fit(std::span<const double> data, std::size_t cols,
                        std::span<const std::string> names = {});

  std::size_t size() const { return bounds_.size(); }
  const std::vector<Bounds>& bounds() const { return bounds_; }

  /// Maps min -> 0, max -> 1; values outside clamp to [0, 1]. `clamped` (if
  /// given) is set when any value was clamped.
  std::vector<double> apply(std::span<const double> x, bool* clamped = nullptr) const;
  void apply_in_place(std::span<double> x, bool* clamped = nullptr) const;
  std::vector<double> invert(std::span<const double> y) const;

  double apply_one(std::size_t col, double x, bool* clamped = nullptr) const;
  double invert_one(std::size_t col, double y) const;

 private:
  std::vector<Bounds> bounds_;
};

/// Unemployment percent -> employment percent (values closer to 100 are better).
inline double employment_rate(double unemployment_pct) { return 100.0 - unemployment_pct; }

/// 1 / (1 + exp(-k (x - center))). Requires k > 0.
double sigmoid_stretch(double x, double center, double k);

/// Steepness that maps center +/- sd to (0.27, 0.73).
double default_stretch_steepness(double sd);

}  // namespace finpred
