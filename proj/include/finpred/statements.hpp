#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace finpred {

// Template accounts extracted from filings. *_CALC totals live in a
// separate array (CalcTotal) so extracted values are never overwritten.
enum class Account : std::uint8_t {
  // balance sheet: assets
  Cash,
  Inventory,
  Acc_Receivable,
  AssetsCurrent_Other,
  AssetsCurrentTotal,
  Property,
  Intangibles,
  AssetsNonCurrent_Other,
  AssetsTotal,
  // liabilities
  AccPayable,
  NotesIntConvDebt,
  OtherAccruedLiab,
  LiabilitiesCurrent_Other,
  LiabilitiesCurrentTotal,
  LiabilitiesNonCurrentOther,
  LiabilitiesCurrNonCurrOther,
  LiabilitiesTotal,
  // equity
  PaidInCapital,
  RetEarnings,
  TreasuryStock,
  Equity_Other,
  EquityTotal,
  EquityOther_Minority,
  EquityMinorityTotal,
  LiabilitiesAndEquityTotal,
  // income statement
  Net_Revenues,
  Op_Income,
  Net_Income,
  // cash flows
  NetIncome_CF,
  BS_adjust,
  IS_adjust,
  CF_Op_Total,
  CF_Inv,
  CF_Inv_Total,
  CF_Fin,
  CF_Fin_Total,
  CF_Other,
  CF_Net_Total,
};
inline constexpr std::size_t kAccountCount = static_cast<std::size_t>(Account::CF_Net_Total) + 1;

enum class CalcTotal : std::uint8_t {
  AssetsCurrentTotal_CALC,
  AssetsTotal_CALC,
  LiabilitiesCurrentTotal_CALC,
  LiabilitiesTotal_CALC,
  EquityTotal_CALC,
  EquityMinorityTotal_CALC,
  LiabilitiesAndEquityTotal_CALC,
  CF_Op_Total_CALC,
  CF_Net_Total_CALC,
};
inline constexpr std::size_t kCalcCount = static_cast<std::size_t>(CalcTotal::CF_Net_Total_CALC) + 1;

enum class Section : std::uint8_t { BalanceSheet, IncomeStatement, CashFlow };
enum class Form : std::uint8_t { Q10, K10 };
enum class Basis : std::uint8_t { Quarterly, Cumulative };

std::string_view account_name(Account a);
std::string_view calc_name(CalcTotal c);
std::optional<Account> account_from_name(std::string_view name);
std::optional<CalcTotal> calc_from_name(std::string_view name);
Section section_of(Account a);
/// Income-statement and cash-flow accounts are period flows; balance sheet
/// accounts are point-in-time.
inline bool is_flow(Account a) { return section_of(a) != Section::BalanceSheet; }
std::string_view form_name(Form f);
std::optional<Form> form_from_name(std::string_view name);

inline constexpr std::array<Account, kAccountCount> all_accounts() {
  std::array<Account, kAccountCount> out{};
  for (std::size_t i = 0; i < kAccountCount; ++i) out[i] = static_cast<Account>(i);
  return out;
}

struct FiscalPeriod {
  int year = 0;
  int quarter = 1;  // 1..4

  /// Ordinal on the fiscal sequence; consecutive quarters differ by one.
  int ordinal() const { return year * 4 + (quarter - 1); }
  FiscalPeriod next() const { return quarter == 4 ? FiscalPeriod{year + 1, 1} : FiscalPeriod{year, quarter + 1}; }
  std::string label() const;  // "2019Q2"
  static std::optional<FiscalPeriod> parse(std::string_view label);
  auto operator<=>(const FiscalPeriod&) const = default;
};

struct StandardStatement {
  std::string company_id;
  FiscalPeriod period;
  Form form = Form::Q10;
  Basis basis = Basis::Quarterly;
  std::array<std::optional<double>, kAccountCount> values{};
  std::array<std::optional<double>, kCalcCount> calc{};
  /// Provenance: imputations, polarity flips, re-validation flags.
  std::vector<std::string> notes;

  std::optional<double> get(Account a) const { return values[static_cast<std::size_t>(a)]; }
  double value_or_zero(Account a) const { return get(a).value_or(0.0); }
  void set(Account a, double v) { values[static_cast<std::size_t>(a)] = v; }
  void clear(Account a) { values[static_cast<std::size_t>(a)].reset(); }
  std::optional<double> get(CalcTotal c) const { return calc[static_cast<std::size_t>(c)]; }

  /// Reported total if present, otherwise the calculated one.
  std::optional<double> total(Account reported, CalcTotal calculated) const;

  /// Cash at the start of the period: end-of-period Cash minus CF_Net_Total.
  std::optional<double> cash_begin() const;

  /// Structural invariants: quarter range, 10-K implies Q4, finite totals.
  void validate() const;
};

bool same_values(const StandardStatement& a, const StandardStatement& b);

// ---------------------------------------------------------------- polarity

enum class Sign : std::uint8_t { Positive, Negative, Free };

struct PolarityPolicy {
  std::map<Account, Sign> canonical;

  /// Assets, liabilities and revenues positive; TreasuryStock negative;
  /// earnings, equity residuals and cash-flow lines free.
  static PolarityPolicy standard();
};

/// Flip any account whose sign contradicts the policy. Magnitudes are kept.
/// A flip touching an equity component adds a "revalidate chk05" note.
/// Throws UnknownAccount if a present account has no policy entry.
StandardStatement normalize_polarity(const StandardStatement& stmt, const PolarityPolicy& policy);

// ---------------------------------------------------------------- totals

struct CalcRule {
  CalcTotal target;
  Account reported;
  std::vector<Account> children;  // leaf or reported-subtotal accounts
  std::vector<CalcTotal> subtotal_fallback;  // parallel to children; used when a subtotal child is absent
};

/// The template's roll-up hierarchy, in evaluation order.
const std::vector<CalcRule>& calc_rules();

/// Populate every *_CALC total as the exact sum of its children. Missing
/// children count as zero and leave a note; a missing reported subtotal
/// child falls back to its own _CALC value.
StandardStatement fill_calculated_totals(const StandardStatement& stmt);

// ---------------------------------------------------------------- checks

inline constexpr double kDefaultCheckTolerance = 1e-4;

struct CheckResult {
  std::string id;  // "chk01".."chk12"
  double reported = 0.0;
  double calculated = 0.0;
  bool passed = false;
  /// |reported - calculated| / max(1, |reported|)
  double relative_deviation() const;
};

struct CheckReport {
  std::array<CheckResult, 12> checks;
  double tolerance = kDefaultCheckTolerance;

  bool all_passed() const;
  std::size_t passed_count() const;
  std::vector<std::string> failed_ids() const;
  double max_relative_deviation() const;
};

/// Evaluate the 12 checkpoints. Requires fill_calculated_totals first.
/// chk07 compares reported AssetsTotal with LiabilitiesAndEquityTotal_CALC;
/// chk12 compares Net_Income with NetIncome_CF.
CheckReport validate_checkpoints(const StandardStatement& stmt, double tolerance = kDefaultCheckTolerance);

// ---------------------------------------------------------------- periods

/// Turn one fiscal year of cumulative (year-to-date) statements into
/// quarterly ones. Balance-sheet accounts are untouched. Input must start at
/// Q1 and be consecutive for a single company and fiscal year.
std::vector<StandardStatement> decumulate_quarters(std::span<const StandardStatement> year_series);

// ---------------------------------------------------------------- archive I/O

/// One statement per line; keys are exactly the template field names plus
/// company_id / year / quarter / form / basis.
nlohmann::ordered_json statement_to_json(const StandardStatement& stmt);
StandardStatement statement_from_json(const nlohmann::json& record);

std::vector<StandardStatement> read_statement_archive(const std::string& path);
void write_statement_archive(const std::string& path, std::span<const StandardStatement> stmts,
                             const nlohmann::json& meta = nullptr);

}  // namespace finpred
