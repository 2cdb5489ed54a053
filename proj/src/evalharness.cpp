#include "finpred/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <openssl/evp.h>

#include "finpred/error.hpp"
#include "finpred/random.hpp"
#include "finpred/text.hpp"
#include "finpred/version.hpp"

namespace finpred {

double mse(std::span<const double> y_true, std::span<const double> y_pred) {
  if (y_true.size() != y_pred.size() || y_true.empty())
    throw Error(ErrorCode::LengthMismatch, "mse needs equal non-empty inputs (" + std::to_string(y_true.size()) +
                                               " vs " + std::to_string(y_pred.size()) + ")");
  double s = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double r = y_pred[i] - y_true[i];
    s += r * r;
  }
  return s / static_cast<double>(y_true.size());
}

double sample_variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::InvalidInput, "sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

const GridCell* EvalReport::find(Task t, ScenarioId s, const std::string& model) const {
  for (const auto& c : cells)
    if (c.task == t && c.scenario == s && c.model == model) return &c;
  return nullptr;
}

std::string panel_digest(const Panel& panel) {
  std::string text;
  for (const auto& o : panel.observations) {
    text += observation_to_json(o).dump();
    text += '\n';
  }
  return sha256_hex(text);
}

Matrix scenario_matrix(const Panel& panel, ScenarioId scenario) {
  const auto cols = scenario_features(scenario).size();
  Matrix X(static_cast<Eigen::Index>(panel.observations.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < panel.observations.size(); ++i) {
    const auto row = select_features(panel.observations[i].features, scenario);
    std::copy(row.begin(), row.end(), X.row(static_cast<Eigen::Index>(i)).data());
  }
  return X;
}

Vector task_vector(const Panel& panel, Task task) {
  Vector y(static_cast<Eigen::Index>(panel.observations.size()));
  for (std::size_t i = 0; i < panel.observations.size(); ++i) y[static_cast<Eigen::Index>(i)] = panel.observations[i].target(task);
  return y;
}

namespace {

std::string describe(const std::exception& e) { return e.what(); }

std::string clean_error(std::string s) {
  for (auto& c : s)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

EvalReport run_grid(const Panel& panel, const GridConfig& config, const FoldObserver& observer) {
  if (config.tasks.empty() || config.scenarios.empty() || config.models.empty())
    throw Error(ErrorCode::InvalidInput, "grid needs at least one task, scenario and model");
  for (const auto& m : config.models) m.validate();
  const std::size_t n = panel.observations.size();

  FoldPlan plan;
  if (config.grouped) {
    std::vector<std::string> groups;
    for (const auto& o : panel.observations) groups.push_back(o.company_id);
    plan = kfold_split_grouped(groups, config.folds, config.seed);
  } else {
    plan = kfold_split(n, config.folds, config.seed);
  }
  std::vector<std::vector<std::size_t>> train(plan.k), test(plan.k);
  for (std::size_t f = 0; f < plan.k; ++f) {
    train[f] = plan.train_rows(f);
    test[f] = plan.test_rows(f);
  }

  // Design matrices per scenario, built once; a scenario that cannot be
  // assembled fails all of its cells.
  std::vector<Matrix> designs(config.scenarios.size());
  std::vector<std::string> design_errors(config.scenarios.size());
  for (std::size_t s = 0; s < config.scenarios.size(); ++s) {
    try {
      designs[s] = scenario_matrix(panel, config.scenarios[s]);
    } catch (const std::exception& e) {
      design_errors[s] = describe(e);
    }
  }
  std::vector<Vector> targets;
  for (auto t : config.tasks) targets.push_back(task_vector(panel, t));

  EvalReport report;
  report.folds = plan.k;
  struct Job {
    std::size_t t, s, m;
  };
  std::vector<Job> jobs;
  for (std::size_t t = 0; t < config.tasks.size(); ++t)
    for (std::size_t s = 0; s < config.scenarios.size(); ++s)
      for (std::size_t m = 0; m < config.models.size(); ++m) {
        jobs.push_back({t, s, m});
        GridCell c;
        c.task = config.tasks[t];
        c.scenario = config.scenarios[s];
        c.model = config.models[m].label();
        report.cells.push_back(std::move(c));
      }

  auto run_cell = [&](std::size_t j) {
    const auto [t, s, m] = jobs[j];
    GridCell& cell = report.cells[j];
    if (!design_errors[s].empty()) {
      cell.error = design_errors[s];
      return;
    }
    const Matrix& X = designs[s];
    const Vector& y = targets[t];
    if (config.keep_predictions) cell.predictions.assign(n, std::numeric_limits<double>::quiet_NaN());
    try {
      for (std::size_t f = 0; f < plan.k; ++f) {
        const std::string key =
            std::string(task_name(cell.task)) + "/" + std::string(scenario_name(cell.scenario)) + "/" + cell.model;
        const std::uint64_t fit_seed = Rng::stream(config.seed, key, f).next();
        const auto model = fit_model(config.models[m], take_rows(X, train[f]), take_rows(y, train[f]), fit_seed);
        const Vector pred = model->predict(take_rows(X, test[f]));
        const Vector truth = take_rows(y, test[f]);
        cell.fold_mse.push_back(mse({truth.data(), static_cast<std::size_t>(truth.size())},
                                    {pred.data(), static_cast<std::size_t>(pred.size())}));
        if (config.keep_predictions)
          for (std::size_t i = 0; i < test[f].size(); ++i) cell.predictions[test[f][i]] = pred[static_cast<Eigen::Index>(i)];
        if (observer) observer(cell, f, train[f], test[f], *model);
      }
      double sum = 0.0;
      for (double v : cell.fold_mse) sum += v;
      cell.mean_mse = sum / static_cast<double>(cell.fold_mse.size());
      cell.var_mse = sample_variance(cell.fold_mse);
      if (!std::isfinite(cell.mean_mse)) throw Error(ErrorCode::DivergedLoss, "non-finite fold error");
    } catch (const std::exception& e) {
      cell.error = clean_error(describe(e));
      cell.fold_mse.clear();
      cell.mean_mse = cell.var_mse = 0.0;
      cell.predictions.clear();
    }
  };

  const auto jobs_n = static_cast<std::int64_t>(jobs.size());
  if (config.exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t j = 0; j < jobs_n; ++j) run_cell(static_cast<std::size_t>(j));
  } else {
    for (std::int64_t j = 0; j < jobs_n; ++j) run_cell(static_cast<std::size_t>(j));
  }

  auto& meta = report.meta;
  meta["tool_version"] = kToolVersion;
  meta["seed"] = config.seed;
  meta["folds"] = plan.k;
  meta["grouped"] = config.grouped;
  meta["observations"] = n;
  meta["dataset_sha256"] = panel_digest(panel);
  nlohmann::ordered_json models = nlohmann::ordered_json::array();
  for (const auto& m : config.models) models.push_back({{"model", m.label()}, {"hyper", resolved_hyper(m)}});
  meta["models"] = std::move(models);
  return report;
}

// ---------------------------------------------------------------- report files

std::string report_tsv(const EvalReport& report, std::string_view header) {
  std::ostringstream out;
  out << header << '\n';
  out << "# meta " << report.meta.dump() << '\n';
  out << "task\tscenario\tmodel\tmean_mse\tvar_mse";
  for (std::size_t f = 0; f < report.folds; ++f) out << "\tfold_" << f + 1;
  out << "\terror\n";
  for (const auto& c : report.cells) {
    out << task_name(c.task) << '\t' << scenario_name(c.scenario) << '\t' << c.model << '\t';
    if (c.ok()) {
      out << format_double(c.mean_mse) << '\t' << format_double(c.var_mse);
      for (std::size_t f = 0; f < report.folds; ++f) out << '\t' << (f < c.fold_mse.size() ? format_double(c.fold_mse[f]) : "");
      out << '\t' << '\n';
    } else {
      out << '\t';
      for (std::size_t f = 0; f < report.folds; ++f) out << '\t';
      out << '\t' << c.error << '\n';
    }
  }
  return out.str();
}

EvalReport parse_report_tsv(const std::string& text) {
  EvalReport report;
  std::istringstream in(text);
  std::string line;
  bool header_seen = false, columns_seen = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line.starts_with("# finpred-")) {
      header_seen = true;
      continue;
    }
    if (line.starts_with("# meta ")) {
      try {
        report.meta = nlohmann::ordered_json::parse(line.substr(7));
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, "report meta line: " + std::string(e.what()));
      }
      continue;
    }
    if (line.starts_with("#")) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
      if (i == line.size() || line[i] == '\t') {
        cols.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    if (!columns_seen) {
      if (cols.size() < 7 || cols[0] != "task" || cols.back() != "error")
        throw Error(ErrorCode::ParseError, "report column header not found at line " + std::to_string(line_no));
      report.folds = cols.size() - 6;
      columns_seen = true;
      continue;
    }
    if (cols.size() != report.folds + 6)
      throw Error(ErrorCode::ParseError, "report line " + std::to_string(line_no) + " has the wrong column count");
    GridCell c;
    const auto task = task_from_name(cols[0]);
    const auto scen = scenario_from_name(cols[1]);
    if (!task || !scen) throw Error(ErrorCode::ParseError, "report line " + std::to_string(line_no) + ": unknown task or scenario");
    c.task = *task;
    c.scenario = *scen;
    c.model = cols[2];
    c.error = cols.back();
    if (c.ok()) {
      c.mean_mse = parse_double(cols[3], "mean_mse");
      c.var_mse = parse_double(cols[4], "var_mse");
      for (std::size_t f = 0; f < report.folds; ++f) c.fold_mse.push_back(parse_double(cols[5 + f], "fold"));
    }
    report.cells.push_back(std::move(c));
  }
  if (!header_seen || !columns_seen) throw Error(ErrorCode::ParseError, "not a finpred report");
  return report;
}

std::string report_digest(const EvalReport& report) { return sha256_hex(report_tsv(report)); }

EvalReport index_report(const EvalReport& report, ScenarioId baseline) {
  EvalReport out = report;
  out.meta["indexed_to"] = scenario_name(baseline);
  for (auto& c : out.cells) {
    const GridCell* base = report.find(c.task, baseline, c.model);
    if (!base || !base->ok() || !(base->mean_mse > 0.0))
      throw Error(ErrorCode::MissingBaseline,
                  "no usable " + std::string(scenario_name(baseline)) + " cell for " + std::string(task_name(c.task)) +
                      " / " + c.model,
                  {std::string(task_name(c.task)), c.model});
    if (!c.ok()) continue;
    if (c.scenario == baseline) {
      const double factor = 100.0 / c.mean_mse;
      for (auto& v : c.fold_mse) v *= factor;
      c.var_mse *= factor * factor;
      c.mean_mse = 100.0;
      continue;
    }
    const double factor = 100.0 / base->mean_mse;
    for (auto& v : c.fold_mse) v *= factor;
    c.mean_mse *= factor;
    c.var_mse *= factor * factor;
  }
  return out;
}

namespace {

double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

}  // namespace

BoxStats box_stats(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::EmptyResult, "box statistics of an empty sample");
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  BoxStats b;
  b.min = s.front();
  b.max = s.back();
  b.q1 = quantile_sorted(s, 0.25);
  b.median = quantile_sorted(s, 0.5);
  b.q3 = quantile_sorted(s, 0.75);
  const double iqr = b.q3 - b.q1;
  b.whisker_low = b.max;
  b.whisker_high = b.min;
  for (double v : s) {
    if (v >= b.q1 - 1.5 * iqr) b.whisker_low = std::min(b.whisker_low, v);
    if (v <= b.q3 + 1.5 * iqr) b.whisker_high = std::max(b.whisker_high, v);
  }
  return b;
}

std::string boxplot_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "task,scenario,model,min,whisker_low,q1,median,q3,whisker_high,max\n";
  for (const auto& c : report.cells) {
    if (!c.ok() || c.fold_mse.empty()) continue;
    const auto b = box_stats(c.fold_mse);
    out << task_name(c.task) << ',' << scenario_name(c.scenario) << ",\"" << c.model << "\"";
    for (double v : {b.min, b.whisker_low, b.q1, b.median, b.q3, b.whisker_high, b.max}) out << ',' << format_double(v);
    out << '\n';
  }
  return out.str();
}

std::string scatter_csv(const EvalReport& report, const Panel& panel) {
  std::ostringstream out;
  out << "company,period,task,scenario,model,actual,predicted\n";
  for (const auto& c : report.cells) {
    if (!c.ok() || c.predictions.size() != panel.observations.size()) continue;
    for (std::size_t i = 0; i < panel.observations.size(); ++i) {
      const auto& o = panel.observations[i];
      out << o.company_id << ',' << o.period.label() << ',' << task_name(c.task) << ',' << scenario_name(c.scenario)
          << ",\"" << c.model << "\"," << format_double(o.target(c.task)) << ',' << format_double(c.predictions[i])
          << '\n';
    }
  }
  return out.str();
}

// ---------------------------------------------------------------- correlation

CorrelationResult correlation_matrix(const Matrix& X, Exec exec) {
  if (X.rows() < 2) throw Error(ErrorCode::InvalidInput, "correlation needs at least two rows");
  const Eigen::Index n = X.rows(), p = X.cols();
  // Column-major centered copy; each entry is a plain dot product, so the
  // serial and parallel paths add in the same order.
  Eigen::MatrixXd Z = X;
  for (Eigen::Index j = 0; j < p; ++j) {
    double mean = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) mean += Z(i, j);
    mean /= static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) Z(i, j) -= mean;
  }
  std::vector<double> ss(static_cast<std::size_t>(p));
  CorrelationResult out;
  out.constant.assign(static_cast<std::size_t>(p), false);
  for (Eigen::Index j = 0; j < p; ++j) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += Z(i, j) * Z(i, j);
    ss[static_cast<std::size_t>(j)] = s;
    double scale = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) scale = std::max(scale, std::abs(X(i, j)));
    out.constant[static_cast<std::size_t>(j)] = !(s > 0.0) || std::sqrt(s / static_cast<double>(n)) <= 1e-14 * std::max(1.0, scale);
  }
  out.r = Eigen::MatrixXd::Identity(p, p);
  auto fill_column = [&](Eigen::Index a) {
    for (Eigen::Index b = a + 1; b < p; ++b) {
      double v = 0.0;
      if (!out.constant[static_cast<std::size_t>(a)] && !out.constant[static_cast<std::size_t>(b)]) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) s += Z(i, a) * Z(i, b);
        v = s / std::sqrt(ss[static_cast<std::size_t>(a)] * ss[static_cast<std::size_t>(b)]);
        v = std::clamp(v, -1.0, 1.0);
      }
      out.r(a, b) = v;
      out.r(b, a) = v;
    }
  };
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (Eigen::Index a = 0; a < p; ++a) fill_column(a);
  } else {
    for (Eigen::Index a = 0; a < p; ++a) fill_column(a);
  }
  return out;
}

std::string correlation_csv(const CorrelationResult& c, std::span<const std::string> names) {
  const auto p = static_cast<std::size_t>(c.r.rows());
  if (names.size() != p) throw Error(ErrorCode::LengthMismatch, "correlation names do not match matrix size");
  std::ostringstream out;
  out << "feature";
  for (const auto& n : names) out << ',' << n;
  out << ",constant\n";
  for (std::size_t a = 0; a < p; ++a) {
    out << names[a];
    for (std::size_t b = 0; b < p; ++b) out << ',' << format_double(c.r(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
    out << ',' << (c.constant[a] ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace finpred
