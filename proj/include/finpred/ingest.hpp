#pragma once

#include <cstdint>
#include <map>
#include <regex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "finpred/exec.hpp"
#include "finpred/ratios.hpp"
#include "finpred/statements.hpp"

namespace finpred {

// ---------------------------------------------------------------- raw filings

struct RawEntry {
  std::string tag;
  double value = 0.0;
  std::string unit = "USD";
};

struct RawFiling {
  std::string company_id;
  FiscalPeriod period;
  Form form = Form::Q10;
  std::vector<RawEntry> entries;

  void validate() const;
};

/// Reserved tag giving the length of the reporting window in months
/// (3 = one quarter; 6/9/12 = year-to-date). Without it a 10-Q covers one
/// quarter and a 10-K the whole fiscal year.
inline constexpr std::string_view kPeriodMonthsTag = "PeriodMonths";

/// Line-delimited records (company_id, year, quarter, form, tag, value, unit),
/// one per entry. Lines holding a "_meta" object are skipped.
std::vector<RawFiling> read_raw_filings(const std::string& path);
void write_raw_filings(const std::string& path, std::span<const RawFiling> filings,
                       const nlohmann::json& meta = nullptr);

// ---------------------------------------------------------------- tag map

struct TagRule {
  std::string pattern;  // ECMAScript regex, full match
  Account account = Account::Cash;
  double sign = 1.0;  // multiplier applied to the raw value
  int priority = 1;   // lower wins
};

class TagMap {
 public:
  TagMap() = default;
  explicit TagMap(std::vector<TagRule> rules);

  /// Built-in map covering every template account with US-GAAP style tags.
  static TagMap standard();
  static TagMap from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;

  /// Priorities unique per account; with `require_coverage`, every template
  /// account must be reachable. Throws InvalidInput.
  void validate(bool require_coverage = true) const;

  /// Index of the best matching rule (lowest priority number, then rule
  /// order), or -1.
  int match(const std::string& tag) const;

  const std::vector<TagRule>& rules() const { return rules_; }

 private:
  std::vector<TagRule> rules_;
  std::vector<std::regex> compiled_;
};

struct MappingStats {
  std::size_t routed = 0;
  std::size_t unmatched = 0;
  std::size_t conflicts = 0;
  std::map<std::string, std::size_t> unmatched_tags;
};

/// Route raw entries into a statement, then normalize polarity and fill the
/// calculated totals. When two entries land on one account, the one from the
/// higher-priority rule wins and a conflict is counted. Throws EmptyStatement
/// if nothing routes.
StandardStatement map_tags(const RawFiling& raw, const TagMap& tagmap, MappingStats* stats = nullptr,
                           const PolarityPolicy& policy = PolarityPolicy::standard());

struct Provenance {
  std::map<std::string, std::size_t> counts;
  void add(const std::string& key, std::size_t n = 1) { counts[key] += n; }
  std::size_t get(const std::string& key) const;
  nlohmann::ordered_json to_json() const;
};

struct IngestResult {
  std::vector<StandardStatement> statements;  // quarterly basis, sorted by (company, period)
  Provenance provenance;
};

/// map_tags for every filing, then bring every statement to quarterly basis.
/// Year-to-date statements are de-cumulated against the earlier quarters of
/// the same fiscal year; ones whose earlier quarters are missing are dropped.
IngestResult ingest_filings(std::span<const RawFiling> filings, const TagMap& tagmap);

// ---------------------------------------------------------------- synthetic corpus

struct SynthConfig {
  std::size_t companies = 100;
  std::size_t quarters = 8;
  int start_year = 2015;
  double noise = 0.0;  // relative per-entry perturbation after consistency
  bool cumulative = false;       // 10-Qs report year-to-date flows
  bool invert_polarity = false;  // TreasuryStock reported as a positive amount
  bool alternate_tags = false;   // some companies use secondary tags
  bool unmapped_tags = true;     // add a tag the standard map does not know
};

struct SynthCorpus {
  std::vector<RawFiling> filings;
  std::vector<StandardStatement> truth;  // quarterly, totals filled
  std::vector<MacroSnapshot> macro;
};

/// Deterministic for a fixed seed. Amounts are whole currency units. Every
/// company starts at Q1 of `start_year`; Q4 is filed as a 10-K with
/// full-year flows.
SynthCorpus generate_synthetic(const SynthConfig& config, std::uint64_t seed);

std::vector<MacroSnapshot> generate_macro_series(FiscalPeriod first, std::size_t quarters, std::uint64_t seed);

// ---------------------------------------------------------------- panel

inline constexpr std::size_t kTargetCount = kTaskCount;

struct Observation {
  std::string company_id;
  FiscalPeriod period;  // features at t, targets at t+1
  FeatureValues features{};
  std::array<double, kTargetCount> targets{};
  /// Largest checkpoint relative deviation over the t and t+1 statements.
  double check_deviation = 0.0;

  double target(Task t) const { return targets[static_cast<std::size_t>(t)]; }
};

struct Panel {
  std::vector<Observation> observations;
  std::vector<MacroSnapshot> macro;
  Provenance provenance;
};

/// Consecutive fiscal quarters (t, t+1) of one company give one observation.
/// Pairs whose t+1 statement lacks a target ratio are skipped and counted.
/// Throws MissingMacro if any statement quarter has no snapshot, and
/// InvalidInput on duplicate (company, period).
Panel assemble_panel(std::span<const StandardStatement> stmts, std::span<const MacroSnapshot> macro,
                     Exec exec = Exec::Serial);

struct OutlierPolicy {
  double check_tolerance = kDefaultCheckTolerance;
  double lower_percentile = 0.5;
  double upper_percentile = 99.5;
};

/// Linear-interpolation percentile of a sample (p in [0, 100]).
double percentile(std::vector<double> values, double p);

/// Drops observations that fail a checkpoint at the policy tolerance, have an
/// absent feature, or have a feature strictly outside its percentile band
/// (bands computed on the incoming panel). Throws EmptyResult if nothing is
/// left.
Panel filter_outliers(const Panel& panel, const OutlierPolicy& policy);

nlohmann::ordered_json observation_to_json(const Observation& obs);
Observation observation_from_json(const nlohmann::json& j);

/// Stable field order; the first line carries "_meta" (given fields plus
/// provenance and macro table).
void write_panel(const std::string& path, const Panel& panel, const nlohmann::json& meta = nullptr);
Panel read_panel(const std::string& path);

/// Feature matrix (header of scenario feature names, one row per
/// observation) and a parallel targets file keyed by (company, period).
void write_feature_matrix(const std::string& features_path, const std::string& targets_path, const Panel& panel,
                          ScenarioId scenario);

}  // namespace finpred
