#include "finpred/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "finpred/bayesnet.hpp"
#include "finpred/error.hpp"
#include "finpred/evalharness.hpp"
#include "finpred/ingest.hpp"
#include "finpred/registry.hpp"
#include "finpred/service.hpp"
#include "finpred/text.hpp"
#include "finpred/version.hpp"

namespace finpred {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidInput, "cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidInput, "cannot write " + path);
  out << text;
}

std::string file_digest(const std::string& path) { return sha256_hex(read_file(path)); }

ordered_json base_meta(std::uint64_t seed) { return {{"tool_version", kToolVersion}, {"seed", seed}}; }

std::vector<Task> parse_tasks(const std::vector<std::string>& names) {
  std::vector<Task> out;
  for (const auto& n : names) {
    if (n == "all") return {kAllTasks.begin(), kAllTasks.end()};
    const auto t = task_from_name(n);
    if (!t) throw Error(ErrorCode::InvalidInput, "unknown task '" + n + "'", {"tasks"});
    out.push_back(*t);
  }
  return out;
}

std::vector<ScenarioId> parse_scenarios(const std::vector<std::string>& names) {
  std::vector<ScenarioId> out;
  for (const auto& n : names) {
    if (n == "all") return {kAllScenarios.begin(), kAllScenarios.end()};
    const auto s = scenario_from_name(n);
    if (!s) throw Error(ErrorCode::InvalidInput, "unknown scenario '" + n + "'", {"scenarios"});
    out.push_back(*s);
  }
  return out;
}

// "knn:k=3,min_leaf=2,linreg" -> {"knn:k=3,min_leaf=2", "linreg"}
std::vector<ModelSpec> parse_models(const std::vector<std::string>& tokens) {
  std::vector<std::string> specs;
  for (const auto& t : tokens) {
    for (const auto& piece : split(t, ',')) {
      if (piece.empty()) continue;
      if (piece.find('=') != std::string::npos && piece.find(':') == std::string::npos && !specs.empty())
        specs.back() += "," + piece;
      else
        specs.push_back(piece);
    }
  }
  std::vector<ModelSpec> out;
  for (const auto& s : specs) out.push_back(ModelSpec::parse(s));
  if (out.empty()) throw Error(ErrorCode::InvalidInput, "no models given", {"models"});
  return out;
}

std::map<std::string, double> parse_assignments(const std::string& text, const std::string& field) {
  std::map<std::string, double> out;
  for (const auto& item : split(text, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidInput, "expected name=value in '" + item + "'", {field});
    const std::string key(trim(item.substr(0, eq)));
    out[key] = parse_double(trim(item.substr(eq + 1)), key);
  }
  return out;
}

struct Options {
  std::uint64_t seed = 0;
  int verbosity = 0;

  // synth
  SynthConfig synth;
  std::string filings, macro, truth;
  // ingest
  std::string tagmap, statements;
  // featurize
  std::string out, features_csv, targets_csv, scenario = "all_variables";
  bool no_filter = false, parallel = false;
  OutlierPolicy outliers;
  // train / grid
  std::string panel, model, task = "ROA";
  std::vector<std::string> tasks{"all"}, scenarios{"all"}, models;
  std::size_t folds = 10;
  bool grouped = false;
  std::string scatter, boxplot, name;
  // report
  std::string input, index;
  // bn
  BnConfig bn;
  std::string spec, evidence, query = std::string(kTargetNode);
  bool raw = false;
  // predict
  std::string features;
  // serve
  std::string artifacts, host = "127.0.0.1";
  int port = 8080;
};

int do_synth(const Options& o, std::ostream& out) {
  const auto corpus = generate_synthetic(o.synth, o.seed);
  auto meta = base_meta(o.seed);
  meta["kind"] = "raw-filings";
  meta["config"] = {{"companies", o.synth.companies},     {"quarters", o.synth.quarters},
                    {"start_year", o.synth.start_year},   {"noise", o.synth.noise},
                    {"cumulative", o.synth.cumulative},   {"invert_polarity", o.synth.invert_polarity},
                    {"alternate_tags", o.synth.alternate_tags}, {"unmapped_tags", o.synth.unmapped_tags}};
  write_raw_filings(o.filings, corpus.filings, meta);
  write_macro_csv(o.macro, corpus.macro, "seed=" + std::to_string(o.seed) + " " + std::string(kToolVersion));
  out << "filings " << corpus.filings.size() << " -> " << o.filings << "\n";
  out << "digest " << o.filings << " " << file_digest(o.filings) << "\n";
  out << "digest " << o.macro << " " << file_digest(o.macro) << "\n";
  if (!o.truth.empty()) {
    auto tm = base_meta(o.seed);
    tm["kind"] = "ground-truth";
    write_statement_archive(o.truth, corpus.truth, tm);
    out << "digest " << o.truth << " " << file_digest(o.truth) << "\n";
  }
  return 0;
}

int do_ingest(const Options& o, std::ostream& out) {
  const auto filings = read_raw_filings(o.filings);
  TagMap map = TagMap::standard();
  if (!o.tagmap.empty()) {
    try {
      map = TagMap::from_json(json::parse(read_file(o.tagmap)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, o.tagmap + ": " + e.what());
    }
    map.validate(false);
  }
  const auto result = ingest_filings(filings, map);
  auto meta = base_meta(o.seed);
  meta["kind"] = "statements";
  meta["source"] = o.filings;
  meta["provenance"] = result.provenance.to_json();
  write_statement_archive(o.out, result.statements, meta);
  out << "statements " << result.statements.size() << " -> " << o.out << "\n";
  for (const auto& [k, v] : result.provenance.counts) out << "  " << k << " " << v << "\n";
  out << "digest " << o.out << " " << file_digest(o.out) << "\n";
  return 0;
}

int do_featurize(const Options& o, std::ostream& out) {
  const auto stmts = read_statement_archive(o.statements);
  const auto macro = read_macro_csv(o.macro);
  Panel panel = assemble_panel(stmts, macro, o.parallel ? Exec::Parallel : Exec::Serial);
  const std::size_t before = panel.observations.size();
  if (!o.no_filter) panel = filter_outliers(panel, o.outliers);
  auto meta = base_meta(o.seed);
  meta["kind"] = "panel";
  meta["statements"] = o.statements;
  meta["macro"] = o.macro;
  meta["filter"] = o.no_filter ? ordered_json(nullptr)
                               : ordered_json{{"check_tolerance", o.outliers.check_tolerance},
                                              {"lower_percentile", o.outliers.lower_percentile},
                                              {"upper_percentile", o.outliers.upper_percentile}};
  write_panel(o.out, panel, meta);
  out << "observations " << panel.observations.size() << " (of " << before << ") -> " << o.out << "\n";
  if (!o.features_csv.empty() || !o.targets_csv.empty()) {
    const auto sc = scenario_from_name(o.scenario);
    if (!sc) throw Error(ErrorCode::InvalidInput, "unknown scenario '" + o.scenario + "'", {"scenario"});
    if (o.features_csv.empty() || o.targets_csv.empty())
      throw Error(ErrorCode::InvalidInput, "--features-csv and --targets-csv go together", {"features-csv"});
    write_feature_matrix(o.features_csv, o.targets_csv, panel, *sc);
  }
  out << "digest " << o.out << " " << file_digest(o.out) << "\n";
  return 0;
}

int do_train(const Options& o, std::ostream& out) {
  const Panel panel = read_panel(o.panel);
  const auto spec = parse_models({o.model});
  if (spec.size() != 1) throw Error(ErrorCode::InvalidInput, "train takes one model", {"model"});
  const auto task = task_from_name(o.task);
  const auto sc = scenario_from_name(o.scenario);
  if (!task) throw Error(ErrorCode::InvalidInput, "unknown task '" + o.task + "'", {"task"});
  if (!sc) throw Error(ErrorCode::InvalidInput, "unknown scenario '" + o.scenario + "'", {"scenario"});
  ModelArtifact a;
  a.spec = spec[0];
  a.scenario = *sc;
  a.task = *task;
  a.seed = o.seed;
  a.feature_names = scenario_feature_names(*sc);
  a.name = o.name.empty() ? spec[0].id + "-" + std::string(task_name(*task)) + "-" + std::string(scenario_name(*sc)) : o.name;
  a.model = fit_model(a.spec, scenario_matrix(panel, *sc), task_vector(panel, *task), o.seed);
  a.save(o.out);
  out << "model " << a.name << " parameters " << a.model->parameter_count() << " -> " << o.out << "\n";
  out << "digest " << o.out << " " << file_digest(o.out) << "\n";
  return 0;
}

int do_grid(const Options& o, std::ostream& out) {
  const Panel panel = read_panel(o.panel);
  GridConfig cfg;
  cfg.tasks = parse_tasks(o.tasks);
  cfg.scenarios = parse_scenarios(o.scenarios);
  cfg.models = parse_models(o.models);
  cfg.folds = o.folds;
  cfg.seed = o.seed;
  cfg.grouped = o.grouped;
  cfg.exec = o.parallel ? Exec::Parallel : Exec::Serial;
  cfg.keep_predictions = !o.scatter.empty();
  const auto report = run_grid(panel, cfg);
  const auto tsv = report_tsv(report);
  write_file(o.out, tsv);
  if (!o.scatter.empty()) write_file(o.scatter, scatter_csv(report, panel));
  if (!o.boxplot.empty()) write_file(o.boxplot, boxplot_csv(report));
  std::size_t failed = 0;
  for (const auto& c : report.cells) failed += c.ok() ? 0 : 1;
  out << "cells " << report.cells.size() << " failed " << failed << " -> " << o.out << "\n";
  if (o.verbosity > 0)
    for (const auto& c : report.cells)
      if (!c.ok()) out << "  " << task_name(c.task) << "/" << scenario_name(c.scenario) << "/" << c.model << ": " << c.error << "\n";
  out << "digest " << o.out << " " << sha256_hex(tsv) << "\n";
  return 0;
}

int do_report(const Options& o, std::ostream& out) {
  const auto report = parse_report_tsv(read_file(o.input));
  if (!o.index.empty()) {
    const auto sc = scenario_from_name(o.index);
    if (!sc) throw Error(ErrorCode::InvalidInput, "unknown scenario '" + o.index + "'", {"index"});
    const auto indexed = index_report(report, *sc);
    if (o.out.empty()) throw Error(ErrorCode::InvalidInput, "--index needs --out", {"out"});
    write_file(o.out, report_tsv(indexed, kIndexedHeader));
    out << "indexed " << indexed.cells.size() << " cells to " << o.index << " -> " << o.out << "\n";
  }
  if (!o.boxplot.empty()) {
    write_file(o.boxplot, boxplot_csv(report));
    out << "boxplot -> " << o.boxplot << "\n";
  }
  if (o.index.empty() && o.boxplot.empty()) {
    // Table layout: mean MSE per (task, model) across scenarios.
    out << "task\tmodel";
    for (auto s : kAllScenarios) out << '\t' << scenario_name(s);
    out << '\n';
    std::vector<std::pair<Task, std::string>> rows;
    for (const auto& c : report.cells)
      if (std::find(rows.begin(), rows.end(), std::make_pair(c.task, c.model)) == rows.end()) rows.emplace_back(c.task, c.model);
    for (const auto& [t, m] : rows) {
      out << task_name(t) << '\t' << m;
      for (auto s : kAllScenarios) {
        const auto* c = report.find(t, s, m);
        out << '\t' << (c && c->ok() ? format_double(c->mean_mse) : (c ? "error" : "-"));
      }
      out << '\n';
    }
  }
  return 0;
}

int do_bn_build(const Options& o, std::ostream& out) {
  const Panel panel = read_panel(o.panel);
  const auto spec = build_bn_spec(panel, o.bn);
  auto j = spec.to_json();
  j["seed"] = o.seed;
  j["panel"] = o.panel;
  write_file(o.out, j.dump(1) + "\n");
  out << "bn spec from " << spec.observations << " observations, target shift " << format_double(spec.target_shift)
      << " -> " << o.out << "\n";
  out << "digest " << o.out << " " << file_digest(o.out) << "\n";
  return 0;
}

int do_bn_query(const Options& o, std::ostream& out) {
  json j;
  try {
    j = json::parse(read_file(o.spec));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, o.spec + ": " + e.what());
  }
  const BayesNet bn(BnSpec::from_json(j));
  const auto values = parse_assignments(o.evidence, "evidence");
  const Evidence ev = o.raw ? bn.normalize(values) : Evidence(values.begin(), values.end());
  const auto post = bn.query(ev, o.query);
  auto res = posterior_to_json(post, bn.spec().stats(post.node));
  if (post.node == kTargetNode) {
    const auto& t = bn.spec().target;
    const auto e = expected_net_margin(post, {t.raw_min, t.raw_max});
    res["expected_normalized"] = e.normalized;
    res["expected_raw"] = e.raw;
  }
  const auto text = res.dump(1) + "\n";
  if (o.out.empty())
    out << text;
  else
    write_file(o.out, text);
  return 0;
}

int do_predict(const Options& o, std::ostream& out) {
  const auto a = ModelArtifact::load(o.model);
  std::ostringstream text;
  if (!o.panel.empty()) {
    const Panel panel = read_panel(o.panel);
    const auto pred = a.model->predict(scenario_matrix(panel, a.scenario));
    text << "company,period,actual,predicted\n";
    for (std::size_t i = 0; i < panel.observations.size(); ++i) {
      const auto& ob = panel.observations[i];
      text << ob.company_id << ',' << ob.period.label() << ',' << format_double(ob.target(a.task)) << ','
           << format_double(pred[static_cast<Eigen::Index>(i)]) << '\n';
    }
  } else {
    const auto values = parse_assignments(o.features, "features");
    std::vector<double> row;
    std::vector<std::string> missing;
    for (const auto& f : a.feature_names) {
      const auto it = values.find(f);
      if (it == values.end())
        missing.push_back(f);
      else
        row.push_back(it->second);
    }
    if (!missing.empty()) throw Error(ErrorCode::MissingFeature, "missing features", missing);
    for (const auto& [k, v] : values)
      if (std::find(a.feature_names.begin(), a.feature_names.end(), k) == a.feature_names.end())
        throw Error(ErrorCode::InvalidInput, "feature '" + k + "' is not used by this model", {k});
    text << format_double(a.model->predict_one(row)) << '\n';
  }
  if (o.out.empty())
    out << text.str();
  else
    write_file(o.out, text.str());
  return 0;
}

int do_serve(const Options& o, std::ostream& out) {
  std::string dir = o.artifacts;
  if (dir.empty())
    if (const char* env = std::getenv("FINPRED_ARTIFACTS")) dir = env;
  if (dir.empty()) throw Error(ErrorCode::InvalidInput, "no artifact directory (--artifacts or FINPRED_ARTIFACTS)", {"artifacts"});
  Service service(ArtifactSet::load_directory(dir));
  const auto snap = service.snapshot();
  out << "serving " << snap->models.size() << " models" << (snap->bn ? " and a BN spec" : "") << " on " << o.host
      << ":" << o.port << std::endl;
  if (!service.serve(o.host, o.port)) throw Error(ErrorCode::InvalidInput, "cannot bind " + o.host + ":" + std::to_string(o.port));
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"finpred: financial statement ratios, regression grids and a Bayesian network"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1, 1);
  Options o;
  if (const char* p = std::getenv("FINPRED_PORT")) o.port = std::atoi(p);

  auto seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Master seed")->capture_default_str(); };
  auto verbose = [&](CLI::App* c) { c->add_flag("-v,--verbose", o.verbosity, "More output"); };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic filing corpus and macro table");
  synth->add_option("--companies", o.synth.companies)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--quarters", o.synth.quarters)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--start-year", o.synth.start_year)->capture_default_str();
  synth->add_option("--noise", o.synth.noise, "Relative per-entry noise")->capture_default_str()->check(CLI::NonNegativeNumber);
  synth->add_flag("--cumulative", o.synth.cumulative, "10-Qs report year-to-date flows");
  synth->add_flag("--invert-polarity", o.synth.invert_polarity);
  synth->add_flag("--alternate-tags", o.synth.alternate_tags);
  synth->add_flag("--no-unmapped{false}", o.synth.unmapped_tags, "Leave out tags the standard map ignores");
  synth->add_option("--filings", o.filings, "Output raw filings (JSONL)")->required();
  synth->add_option("--macro", o.macro, "Output macro table (CSV)")->required();
  synth->add_option("--truth", o.truth, "Output ground-truth statements (JSONL)");
  seed(synth);

  auto* ingest = app.add_subcommand("ingest", "Map raw filings onto standardized quarterly statements");
  ingest->add_option("--filings", o.filings)->required()->check(CLI::ExistingFile);
  ingest->add_option("--tagmap", o.tagmap, "Tag map JSON (default: built-in)")->check(CLI::ExistingFile);
  ingest->add_option("--out", o.out)->required();
  seed(ingest);

  auto* feat = app.add_subcommand("featurize", "Ratios, macro join and t -> t+1 panel with outlier filter");
  feat->add_option("--statements", o.statements)->required()->check(CLI::ExistingFile);
  feat->add_option("--macro", o.macro)->required()->check(CLI::ExistingFile);
  feat->add_option("--out", o.out)->required();
  feat->add_flag("--no-filter", o.no_filter, "Keep every observation");
  feat->add_option("--check-tol", o.outliers.check_tolerance)->capture_default_str();
  feat->add_option("--lower", o.outliers.lower_percentile)->capture_default_str();
  feat->add_option("--upper", o.outliers.upper_percentile)->capture_default_str();
  feat->add_option("--features-csv", o.features_csv);
  feat->add_option("--targets-csv", o.targets_csv);
  feat->add_option("--scenario", o.scenario)->capture_default_str();
  feat->add_flag("--parallel", o.parallel);
  seed(feat);

  auto* train = app.add_subcommand("train", "Fit one model on a whole panel");
  train->add_option("--panel", o.panel)->required()->check(CLI::ExistingFile);
  train->add_option("--model", o.model, "Model id, optionally id:key=value,...")->required();
  train->add_option("--task", o.task)->capture_default_str();
  train->add_option("--scenario", o.scenario)->capture_default_str();
  train->add_option("--name", o.name);
  train->add_option("--out", o.out)->required();
  seed(train);

  auto* grid = app.add_subcommand("grid", "Cross-validated task x scenario x model grid");
  grid->add_option("--panel", o.panel)->required()->check(CLI::ExistingFile);
  grid->add_option("--tasks", o.tasks)->delimiter(',')->capture_default_str();
  grid->add_option("--scenarios", o.scenarios)->delimiter(',')->capture_default_str();
  grid->add_option("--models", o.models)->required();
  grid->add_option("--folds", o.folds)->capture_default_str();
  grid->add_flag("--grouped", o.grouped, "Keep each company inside one fold");
  grid->add_flag("--parallel", o.parallel);
  grid->add_option("--out", o.out)->required();
  grid->add_option("--scatter", o.scatter, "Out-of-fold predictions CSV");
  grid->add_option("--boxplot", o.boxplot, "Fold quartiles CSV");
  seed(grid);
  verbose(grid);

  auto* report = app.add_subcommand("report", "Index or summarize a grid report");
  report->add_option("--in", o.input)->required()->check(CLI::ExistingFile);
  report->add_option("--index", o.index, "Baseline scenario, e.g. base");
  report->add_option("--out", o.out);
  report->add_option("--boxplot", o.boxplot);

  auto* bnb = app.add_subcommand("bn-build", "Derive the network spec from a panel");
  bnb->add_option("--panel", o.panel)->required()->check(CLI::ExistingFile);
  bnb->add_option("--out", o.out)->required();
  bnb->add_option("--bins", o.bn.bins)->capture_default_str();
  bnb->add_option("--indicator-states", o.bn.indicator_states)->capture_default_str();
  bnb->add_option("--ocg-states", o.bn.ocg_states)->capture_default_str();
  bnb->add_option("--macro-weights", o.bn.macro_weights)->expected(5)->delimiter(',');
  bnb->add_option("--performance-weight", o.bn.performance_weight)->capture_default_str();
  bnb->add_option("--target-variance-scale", o.bn.target_variance_scale)->capture_default_str();
  seed(bnb);

  auto* bnq = app.add_subcommand("bn-query", "Posterior of one node given evidence");
  bnq->add_option("--spec", o.spec)->required()->check(CLI::ExistingFile);
  bnq->add_option("--evidence", o.evidence, "name=value,...");
  bnq->add_flag("--raw", o.raw, "Evidence on the raw scale");
  bnq->add_option("--query", o.query)->capture_default_str();
  bnq->add_option("--out", o.out);

  auto* pred = app.add_subcommand("predict", "Apply a model artifact");
  pred->add_option("--model", o.model)->required()->check(CLI::ExistingFile);
  auto* pf = pred->add_option("--features", o.features, "name=value,...");
  auto* pp = pred->add_option("--panel", o.panel)->check(CLI::ExistingFile);
  pf->excludes(pp);
  pred->add_option("--out", o.out);

  auto* serve = app.add_subcommand("serve", "HTTP service over an artifact directory");
  serve->add_option("--artifacts", o.artifacts, "Directory with *.model.json and bn.json");
  serve->add_option("--host", o.host)->capture_default_str();
  serve->add_option("--port", o.port)->capture_default_str()->check(CLI::Range(1, 65535));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return do_synth(o, out);
    if (ingest->parsed()) return do_ingest(o, out);
    if (feat->parsed()) return do_featurize(o, out);
    if (train->parsed()) return do_train(o, out);
    if (grid->parsed()) return do_grid(o, out);
    if (report->parsed()) return do_report(o, out);
    if (bnb->parsed()) return do_bn_build(o, out);
    if (bnq->parsed()) return do_bn_query(o, out);
    if (pred->parsed()) return do_predict(o, out);
    if (serve->parsed()) return do_serve(o, out);
  } catch (const Error& e) {
    err << "error: " << e.what();
    if (!e.fields().empty()) err << " [" << join(e.fields(), ", ") << "]";
    err << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace finpred
