#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "finpred/folds.hpp"
#include "finpred/ingest.hpp"
#include "finpred/registry.hpp"

namespace finpred {

/// Mean of squared residuals. Throws LengthMismatch on unequal or empty input.
double mse(std::span<const double> y_true, std::span<const double> y_pred);

/// Sample variance (n - 1 denominator); 0 for fewer than two values.
double sample_variance(std::span<const double> v);

std::string sha256_hex(std::string_view data);

struct GridConfig {
  std::vector<Task> tasks;
  std::vector<ScenarioId> scenarios;
  std::vector<ModelSpec> models;
  std::size_t folds = 10;
  std::uint64_t seed = 0;
  bool grouped = false;  // whole companies per fold
  Exec exec = Exec::Serial;
  bool keep_predictions = false;
};

struct GridCell {
  Task task = Task::ROA;
  ScenarioId scenario = ScenarioId::Base;
  std::string model;  // ModelSpec label
  std::vector<double> fold_mse;
  double mean_mse = 0.0;
  double var_mse = 0.0;
  std::string error;  // empty on success
  std::vector<double> predictions;  // out-of-fold, one per observation, when kept

  bool ok() const { return error.empty(); }
};

struct EvalReport {
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  std::size_t folds = 0;
  std::vector<GridCell> cells;  // task, scenario, model order of the config

  const GridCell* find(Task t, ScenarioId s, const std::string& model) const;
};

/// Digest of the observations a grid trains on.
std::string panel_digest(const Panel& panel);

/// Called once per fitted fold (from the worker that ran it).
using FoldObserver = std::function<void(const GridCell& cell, std::size_t fold, std::span<const std::size_t> train,
                                        std::span<const std::size_t> test, const Model& model)>;

/// Every (task, scenario, model) cell is k-fold cross-validated on one shared
/// fold plan. Each fit sees only its training rows; scaling statistics are
/// fitted inside the model. A failing cell records its error and the grid
/// goes on. Cells run in parallel under Exec::Parallel with identical output.
EvalReport run_grid(const Panel& panel, const GridConfig& config, const FoldObserver& observer = {});

/// Design matrix of one scenario (rows in panel order).
Matrix scenario_matrix(const Panel& panel, ScenarioId scenario);
Vector task_vector(const Panel& panel, Task task);

// ---------------------------------------------------------------- report files

inline constexpr std::string_view kReportHeader = "# finpred-report v1";
inline constexpr std::string_view kIndexedHeader = "# finpred-indexed v1";

/// Tab-separated: task, scenario, model, mean_mse, var_mse, fold_1..fold_k,
/// error. Numbers are printed round-trippable. No timestamps.
std::string report_tsv(const EvalReport& report, std::string_view header = kReportHeader);
EvalReport parse_report_tsv(const std::string& text);

/// SHA-256 of report_tsv.
std::string report_digest(const EvalReport& report);

/// Every cell scaled by 100 / (mean MSE of the baseline scenario's cell with
/// the same task and model); variances by the square of that factor.
/// Baseline cells come out exactly 100. Throws MissingBaseline.
EvalReport index_report(const EvalReport& report, ScenarioId baseline);

struct BoxStats {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
  double whisker_low = 0, whisker_high = 0;  // furthest points within 1.5 IQR
};

BoxStats box_stats(std::span<const double> values);

/// task, scenario, model, min, whisker_low, q1, median, q3, whisker_high, max
std::string boxplot_csv(const EvalReport& report);

/// company, period, task, scenario, model, actual, predicted (kept predictions only)
std::string scatter_csv(const EvalReport& report, const Panel& panel);

// ---------------------------------------------------------------- correlation

struct CorrelationResult {
  Eigen::MatrixXd r;
  std::vector<bool> constant;  // per column
};

/// Pearson matrix over columns. Constant columns: 1 on the diagonal, 0
/// elsewhere, flagged. Needs at least two rows.
CorrelationResult correlation_matrix(const Matrix& X, Exec exec = Exec::Serial);

std::string correlation_csv(const CorrelationResult& c, std::span<const std::string> names);

}  // namespace finpred
