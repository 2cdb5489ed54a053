#include "finpred/regressors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "finpred/error.hpp"
#include "finpred/folds.hpp"
#include "finpred/random.hpp"

namespace finpred {

namespace {

using ColMatrix = Eigen::MatrixXd;

std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_vec(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void check_xy(const Matrix& X, const Vector& y) {
  if (X.rows() != y.size())
    throw Error(ErrorCode::DimensionMismatch, "X has " + std::to_string(X.rows()) + " rows, y has " +
                                                  std::to_string(y.size()));
  if (X.rows() == 0) throw Error(ErrorCode::InvalidInput, "no training rows");
  if (!X.allFinite() || !y.allFinite()) throw Error(ErrorCode::InvalidInput, "non-finite training data");
}

}  // namespace

Matrix take_rows(const Matrix& X, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

Vector take_rows(const Vector& y, std::span<const std::size_t> rows) {
  Vector out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = y[static_cast<Eigen::Index>(rows[i])];
  return out;
}

// ---------------------------------------------------------------- Model

void Model::check_dim(std::size_t got) const {
  if (got != input_dim())
    throw Error(ErrorCode::DimensionMismatch,
                family() + " expects " + std::to_string(input_dim()) + " features, got " + std::to_string(got));
}

Vector Model::predict(const Matrix& X, Exec exec) const {
  check_dim(static_cast<std::size_t>(X.cols()));
  Vector out(X.rows());
  const auto n = static_cast<std::int64_t>(X.rows());
  const auto p = static_cast<std::size_t>(X.cols());
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) out[i] = predict_one({X.row(i).data(), p});
  } else {
    for (std::int64_t i = 0; i < n; ++i) out[i] = predict_one({X.row(i).data(), p});
  }
  return out;
}

// ---------------------------------------------------------------- Standardizer

Standardizer Standardizer::fit(const Matrix& X) {
  Standardizer s;
  const auto n = static_cast<double>(X.rows());
  s.mean = X.colwise().mean().transpose();
  s.sd = Vector::Zero(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double var = (X.col(j).array() - s.mean[j]).square().sum() / n;
    const double sd = std::sqrt(var);
    s.sd[j] = sd > 1e-12 * std::max(1.0, std::abs(s.mean[j])) ? sd : 0.0;
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& X) const {
  Matrix out(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    apply_row({X.row(i).data(), static_cast<std::size_t>(X.cols())}, {out.row(i).data(), static_cast<std::size_t>(X.cols())});
  return out;
}

void Standardizer::apply_row(std::span<const double> x, std::span<double> out) const {
  for (std::size_t j = 0; j < x.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    out[j] = sd[jj] > 0.0 ? (x[j] - mean[jj]) / sd[jj] : 0.0;
  }
}

nlohmann::ordered_json Standardizer::to_json() const { return {{"mean", to_vec(mean)}, {"sd", to_vec(sd)}}; }

Standardizer Standardizer::from_json(const nlohmann::json& j) {
  return {from_vec(j.at("mean").get<std::vector<double>>()), from_vec(j.at("sd").get<std::vector<double>>())};
}

// ---------------------------------------------------------------- linear

double LinearModel::predict_one(std::span<const double> x) const {
  check_dim(x.size());
  double acc = intercept_;
  for (std::size_t j = 0; j < x.size(); ++j) acc += coef_[static_cast<Eigen::Index>(j)] * x[j];
  return acc;
}

Vector LinearModel::predict(const Matrix& X, Exec exec) const { return Model::predict(X, exec); }

nlohmann::ordered_json LinearModel::to_json() const {
  nlohmann::ordered_json j;
  j["family"] = family();
  j["variant"] = variant;
  j["intercept"] = intercept_;
  j["coef"] = to_vec(coef_);
  j["degenerate"] = degenerate;
  j["condition_number"] = std::isfinite(condition_number) ? nlohmann::ordered_json(condition_number) : nlohmann::ordered_json();
  j["lambda1"] = lambda1;
  j["lambda2"] = lambda2;
  j["epsilon"] = epsilon;
  j["C"] = C;
  j["sweeps"] = sweeps;
  return j;
}

LinearModel LinearModel::from_json(const nlohmann::json& j) {
  LinearModel m(j.at("intercept").get<double>(), from_vec(j.at("coef").get<std::vector<double>>()));
  m.variant = j.value("variant", std::string("ols"));
  m.degenerate = j.value("degenerate", false);
  m.condition_number = j.contains("condition_number") && j["condition_number"].is_number()
                           ? j["condition_number"].get<double>()
                           : std::numeric_limits<double>::infinity();
  m.lambda1 = j.value("lambda1", 0.0);
  m.lambda2 = j.value("lambda2", 0.0);
  m.epsilon = j.value("epsilon", 0.0);
  m.C = j.value("C", 0.0);
  m.sweeps = j.value("sweeps", std::size_t{0});
  return m;
}

LinearModel fit_ols(const Matrix& X, const Vector& y) {
  check_xy(X, y);
  const Eigen::Index n = X.rows(), p = X.cols();
  ColMatrix A(n, p + 1);
  A.col(0).setOnes();
  A.rightCols(p) = X;
  Eigen::BDCSVD<ColMatrix> svd(A);
  const auto& sv = svd.singularValues();
  const double cond = sv.minCoeff() > 0.0 ? sv.maxCoeff() / sv.minCoeff() : std::numeric_limits<double>::infinity();
  const Eigen::CompleteOrthogonalDecomposition<ColMatrix> cod(A);
  const Vector beta = cod.solve(y);
  LinearModel m(beta[0], beta.tail(p));
  m.condition_number = cond;
  m.degenerate = !(cond <= kDegenerateCondition);
  return m;
}

LinearModel fit_elasticnet(const Matrix& X, const Vector& y, double l1, double l2, const ElasticNetOptions& opt) {
  check_xy(X, y);
  if (!(l1 >= 0.0) || !(l2 >= 0.0)) throw Error(ErrorCode::InvalidInput, "penalties must be >= 0", {"lambda"});
  const Eigen::Index n = X.rows(), p = X.cols();
  const auto scaler = Standardizer::fit(X);
  const ColMatrix Z = scaler.apply(X);
  const double y_mean = y.mean();
  Vector r = y.array() - y_mean;
  Vector w = Vector::Zero(p);
  Vector col_sq(p);
  for (Eigen::Index j = 0; j < p; ++j) col_sq[j] = Z.col(j).squaredNorm() / static_cast<double>(n);

  std::size_t sweep = 0;
  double max_delta = std::numeric_limits<double>::infinity();
  while (sweep < opt.max_sweeps) {
    ++sweep;
    max_delta = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (col_sq[j] == 0.0) continue;
      const double rho = Z.col(j).dot(r) / static_cast<double>(n) + col_sq[j] * w[j];
      const double shrunk = std::copysign(std::max(std::abs(rho) - l1, 0.0), rho);
      const double next = shrunk / (col_sq[j] + l2);
      const double delta = next - w[j];
      if (delta != 0.0) {
        r.noalias() -= delta * Z.col(j);
        w[j] = next;
        max_delta = std::max(max_delta, std::abs(delta));
      }
    }
    if (!std::isfinite(max_delta)) break;
    if (max_delta < opt.tolerance) break;
  }
  if (!(max_delta < opt.tolerance))
    throw Error(ErrorCode::NotConverged, "coordinate descent stopped after " + std::to_string(sweep) +
                                             " sweeps, last max change " + std::to_string(max_delta));

  Vector coef(p);
  double intercept = y_mean;
  for (Eigen::Index j = 0; j < p; ++j) {
    coef[j] = scaler.sd[j] > 0.0 ? w[j] / scaler.sd[j] : 0.0;
    intercept -= coef[j] * scaler.mean[j];
  }
  LinearModel m(intercept, coef);
  m.variant = l1 > 0.0 && l2 == 0.0 ? "lasso" : (l1 == 0.0 && l2 == 0.0 ? "ols" : "elasticnet");
  m.lambda1 = l1;
  m.lambda2 = l2;
  m.sweeps = sweep;
  return m;
}

LinearModel fit_elasticnet_cv(const Matrix& X, const Vector& y, double l1_ratio, std::uint64_t seed) {
  check_xy(X, y);
  if (!(l1_ratio >= 0.0 && l1_ratio <= 1.0)) throw Error(ErrorCode::InvalidInput, "l1_ratio must lie in [0,1]");
  double best_lambda = kPenaltyGrid.front();
  if (X.rows() >= 6) {
    const auto plan = kfold_split(static_cast<std::size_t>(X.rows()), 3, seed);
    double best = std::numeric_limits<double>::infinity();
    for (double lambda : kPenaltyGrid) {
      double total = 0.0;
      for (std::size_t f = 0; f < 3 && std::isfinite(total); ++f) {
        const auto tr = plan.train_rows(f), te = plan.test_rows(f);
        try {
          const auto m = fit_elasticnet(take_rows(X, tr), take_rows(y, tr), lambda * l1_ratio, lambda * (1 - l1_ratio));
          total += (m.predict(take_rows(X, te)) - take_rows(y, te)).squaredNorm() / static_cast<double>(te.size());
        } catch (const Error& e) {
          if (e.code() != ErrorCode::NotConverged) throw;
          total = std::numeric_limits<double>::infinity();
        }
      }
      if (total < best) {
        best = total;
        best_lambda = lambda;
      }
    }
  }
  auto m = fit_elasticnet(X, y, best_lambda * l1_ratio, best_lambda * (1 - l1_ratio));
  m.variant = l1_ratio == 1.0 ? "lasso" : "elasticnet";
  return m;
}

namespace {

// Minimizer of sum_i max(0, |d_i - b| - eps); midpoint of the optimal interval.
double best_tube_offset(std::vector<double> d, double eps) {
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  // slope just right of b: #(d_i + eps <= b) - #(d_i - eps > b)
  auto right_slope = [&](double b) {
    const auto hi = static_cast<long>(std::upper_bound(d.begin(), d.end(), b - eps) - d.begin());
    const auto lo = static_cast<long>(d.end() - std::upper_bound(d.begin(), d.end(), b + eps));
    return hi - lo;
  };
  // slope just left of b: #(d_i + eps < b) - #(d_i - eps >= b)
  auto left_slope = [&](double b) {
    const auto hi = static_cast<long>(std::lower_bound(d.begin(), d.end(), b - eps) - d.begin());
    const auto lo = static_cast<long>(d.end() - std::lower_bound(d.begin(), d.end(), b + eps));
    return hi - lo;
  };
  std::vector<double> breaks;
  breaks.reserve(2 * n);
  for (double v : d) {
    breaks.push_back(v - eps);
    breaks.push_back(v + eps);
  }
  std::sort(breaks.begin(), breaks.end());
  const auto first = std::partition_point(breaks.begin(), breaks.end(), [&](double b) { return right_slope(b) < 0; });
  const auto last = std::partition_point(breaks.begin(), breaks.end(), [&](double b) { return left_slope(b) <= 0; });
  const double lo = first == breaks.end() ? breaks.back() : *first;
  const double hi = last == breaks.begin() ? breaks.front() : *(last - 1);
  return 0.5 * (lo + std::max(lo, hi));
}

}  // namespace

double svr_objective(const LinearModel& m, const Matrix& X, const Vector& y, double epsilon, double C) {
  const Vector r = m.predict(X) - y;
  const double hinge = (r.array().abs() - epsilon).max(0.0).sum();
  return C * hinge + 0.5 * m.coef().squaredNorm();
}

LinearModel fit_svr_linear(const Matrix& X, const Vector& y, double epsilon, double C, const SvrOptions& opt) {
  check_xy(X, y);
  if (!(epsilon >= 0.0)) throw Error(ErrorCode::InvalidInput, "epsilon must be >= 0", {"epsilon"});
  if (!(C > 0.0)) throw Error(ErrorCode::InvalidInput, "C must be > 0", {"C"});
  const Eigen::Index n = X.rows(), p = X.cols();
  const double nd = static_cast<double>(n);
  const auto scaler = Standardizer::fit(X);
  const ColMatrix Z = scaler.apply(X);
  const double reg = 1.0 / (nd * C);

  // Works on the objective divided by nC:
  //   (1/n) sum max(0, |r_i| - eps) + (reg/2) ||w||^2
  Vector w = Vector::Zero(p);
  double b = 0.5 * (y.maxCoeff() + y.minCoeff());
  Vector best_w = w;
  double best_obj = std::numeric_limits<double>::infinity();
  Vector s(n);
  std::size_t t = 0;
  for (; t <= opt.iterations; ++t) {
    const Vector r = (Z * w).array() + b - y.array();
    const double obj = (r.array().abs() - epsilon).max(0.0).sum() / nd + 0.5 * reg * w.squaredNorm();
    if (!std::isfinite(obj))
      throw Error(ErrorCode::NotConverged, "subgradient iterate diverged at step " + std::to_string(t));
    if (obj < best_obj) {
      best_obj = obj;
      best_w = w;
    }
    if (t == opt.iterations) break;
    for (Eigen::Index i = 0; i < n; ++i) s[i] = r[i] > epsilon ? 1.0 : (r[i] < -epsilon ? -1.0 : 0.0);
    const Vector gw = Z.transpose() * s / nd;
    const double gb = s.sum() / nd;
    if (gb == 0.0 && gw.isZero(0.0) && w.isZero(0.0)) break;  // inside the tube at w = 0: optimal
    const double eta = opt.step / std::sqrt(static_cast<double>(t + 1));
    w = (w - eta * gw) / (1.0 + eta * reg);
    b -= eta * gb;
  }

  const Vector fitted = Z * best_w;
  std::vector<double> d(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d[static_cast<std::size_t>(i)] = y[i] - fitted[i];
  const double b_exact = best_tube_offset(std::move(d), epsilon);

  Vector coef(p);
  double intercept = b_exact;
  for (Eigen::Index j = 0; j < p; ++j) {
    coef[j] = scaler.sd[j] > 0.0 ? best_w[j] / scaler.sd[j] : 0.0;
    intercept -= coef[j] * scaler.mean[j];
  }
  LinearModel m(intercept, coef);
  m.variant = "svr";
  m.epsilon = epsilon;
  m.C = C;
  m.sweeps = t;
  return m;
}

// ---------------------------------------------------------------- knn

double knn_mean(const Matrix& train, const Vector& y, std::span<const double> query, std::size_t k) {
  const auto n = static_cast<std::size_t>(train.rows());
  const auto p = static_cast<std::size_t>(train.cols());
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = train.row(static_cast<Eigen::Index>(i)).data();
    double d = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const double diff = row[j] - query[j];
      d += diff * diff;
    }
    dist[i] = {d, i};
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += y[static_cast<Eigen::Index>(dist[i].second)];
  return sum / static_cast<double>(k);
}

KnnModel::KnnModel(std::size_t k, Standardizer scaler, Matrix X_std, Vector y)
    : k_(k), scaler_(std::move(scaler)), X_(std::move(X_std)), y_(std::move(y)) {}

double KnnModel::predict_one(std::span<const double> x) const {
  check_dim(x.size());
  std::vector<double> z(x.size());
  scaler_.apply_row(x, z);
  return knn_mean(X_, y_, z, k_);
}

Vector KnnModel::predict(const Matrix& X, Exec exec) const { return Model::predict(X, exec); }

nlohmann::ordered_json KnnModel::to_json() const {
  nlohmann::ordered_json j;
  j["family"] = family();
  j["k"] = k_;
  j["scaler"] = scaler_.to_json();
  j["rows"] = X_.rows();
  j["cols"] = X_.cols();
  j["X"] = std::vector<double>(X_.data(), X_.data() + X_.size());
  j["y"] = to_vec(y_);
  return j;
}

KnnModel KnnModel::from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
  const auto flat = j.at("X").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols)
    throw Error(ErrorCode::ParseError, "knn artifact: X size mismatch");
  Matrix X = Eigen::Map<const Matrix>(flat.data(), rows, cols);
  return KnnModel(j.at("k").get<std::size_t>(), Standardizer::from_json(j.at("scaler")), std::move(X),
                  from_vec(j.at("y").get<std::vector<double>>()));
}

KnnModel fit_knn(const Matrix& X, const Vector& y, std::size_t k) {
  check_xy(X, y);
  if (k < 1 || k > static_cast<std::size_t>(X.rows()))
    throw Error(ErrorCode::InvalidK, "knn needs 1 <= k <= n", {"k"});
  auto scaler = Standardizer::fit(X);
  Matrix Z = scaler.apply(X);
  return KnnModel(k, std::move(scaler), std::move(Z), y);
}

// ---------------------------------------------------------------- trees

namespace {

// Dense per-feature value ranks (equal values share a rank). Sorting rows by
// rank with a stable counting sort equals a stable sort by value, so
// ensembles compute ranks once and reuse them for every tree.
struct ValueRanks {
  std::vector<std::vector<std::uint32_t>> rank;  // [feature][row]
  std::vector<std::uint32_t> distinct;           // per feature
};

ValueRanks value_ranks(const Matrix& X) {
  ValueRanks r;
  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<std::size_t> order(n);
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return X(static_cast<Eigen::Index>(a), j) < X(static_cast<Eigen::Index>(b), j);
    });
    std::vector<std::uint32_t> rk(n);
    std::uint32_t next = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k > 0 && X(static_cast<Eigen::Index>(order[k]), j) != X(static_cast<Eigen::Index>(order[k - 1]), j)) ++next;
      rk[order[k]] = next;
    }
    r.rank.push_back(std::move(rk));
    r.distinct.push_back(n ? next + 1 : 0);
  }
  return r;
}

ValueRanks take_ranks(const ValueRanks& r, std::span<const std::size_t> rows) {
  ValueRanks out;
  out.distinct = r.distinct;
  for (const auto& col : r.rank) {
    std::vector<std::uint32_t> c(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) c[i] = col[rows[i]];
    out.rank.push_back(std::move(c));
  }
  return out;
}

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& X, const Vector& y, const CartOptions& opt, Rng* rng, const ValueRanks* ranks = nullptr)
      : X_(X), y_(y), opt_(opt), rng_(rng), ranks_(ranks), p_(static_cast<std::size_t>(X.cols())) {
    if (opt.min_leaf < 1) throw Error(ErrorCode::InvalidInput, "min_leaf must be >= 1", {"min_leaf"});
    const bool subset = opt.max_features > 0 && opt.max_features < p_;
    if ((subset || opt.random_thresholds) && !rng)
      throw Error(ErrorCode::InvalidInput, "randomized tree options need a random stream");
  }

  std::vector<TreeNode> build() {
    const std::size_t n = static_cast<std::size_t>(X_.rows());
    rows_.resize(n);
    std::iota(rows_.begin(), rows_.end(), std::size_t{0});
    // Each feature is sorted once by (value, row); nodes own the same
    // [begin, end) range in every list and splits partition stably, so a
    // node sees exactly the order a per-node stable sort would produce.
    if (!opt_.random_thresholds && ranks_) {
      sorted_.assign(p_, std::vector<std::size_t>(n));
      std::vector<std::size_t> start;
      for (std::size_t f = 0; f < p_; ++f) {
        const auto& rk = ranks_->rank[f];
        start.assign(ranks_->distinct[f] + 1, 0);
        for (std::size_t i = 0; i < n; ++i) ++start[rk[i] + 1];
        std::partial_sum(start.begin(), start.end(), start.begin());
        for (std::size_t i = 0; i < n; ++i) sorted_[f][start[rk[i]]++] = i;
      }
    } else if (!opt_.random_thresholds) {
      sorted_.assign(p_, rows_);
      for (std::size_t f = 0; f < p_; ++f) {
        const auto fi = static_cast<Eigen::Index>(f);
        std::stable_sort(sorted_[f].begin(), sorted_[f].end(), [&](std::size_t a, std::size_t b) {
          return X_(static_cast<Eigen::Index>(a), fi) < X_(static_cast<Eigen::Index>(b), fi);
        });
      }
    }
    goes_left_.assign(n, 0);
    scratch_.resize(n);
    grow(0, n, 0);
    return std::move(nodes_);
  }

 private:
  struct Candidate {
    int feature = -1;
    double threshold = 0.0;
    double sse = std::numeric_limits<double>::infinity();
  };

  // Stable partition of list[begin, end) by goes_left_; returns the cut.
  std::size_t partition(std::vector<std::size_t>& list, std::size_t begin, std::size_t end) {
    std::size_t l = begin, r = 0;
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = list[i];
      if (goes_left_[row])
        list[l++] = row;
      else
        scratch_[r++] = row;
    }
    std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(r), list.begin() + static_cast<std::ptrdiff_t>(l));
    return l;
  }

  int grow(std::size_t begin, std::size_t end, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    const std::size_t m = end - begin;
    double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t k = begin; k < end; ++k) {
      const double v = y_[static_cast<Eigen::Index>(rows_[k])];
      sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double mean = sum / static_cast<double>(m);
    nodes_[static_cast<std::size_t>(id)].value = mean;
    nodes_[static_cast<std::size_t>(id)].samples = m;
    if (depth >= opt_.max_depth || m < 2 * opt_.min_leaf || lo == hi) return id;

    double parent = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const double z = y_[static_cast<Eigen::Index>(rows_[k])] - mean;
      parent += z * z;
    }
    const Candidate best = search(begin, end, mean);
    if (best.feature < 0 || !(best.sse < parent * (1.0 - 1e-12))) return id;

    std::size_t nl = 0;
    for (std::size_t k = begin; k < end; ++k) {
      const auto row = rows_[k];
      goes_left_[row] = X_(static_cast<Eigen::Index>(row), best.feature) <= best.threshold;
      nl += goes_left_[row];
    }
    if (nl == 0 || nl == m) return id;
    const std::size_t cut = partition(rows_, begin, end);
    for (auto& list : sorted_) partition(list, begin, end);
    const int l = grow(begin, cut, depth + 1);
    const int r = grow(cut, end, depth + 1);
    auto& node = nodes_[static_cast<std::size_t>(id)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  std::vector<std::size_t> features_to_try() {
    std::vector<std::size_t> f(p_);
    std::iota(f.begin(), f.end(), std::size_t{0});
    if (opt_.max_features == 0 || opt_.max_features >= p_) return f;
    for (std::size_t i = 0; i < opt_.max_features; ++i) {
      const auto j = i + static_cast<std::size_t>(rng_->below(p_ - i));
      std::swap(f[i], f[j]);
    }
    f.resize(opt_.max_features);
    std::sort(f.begin(), f.end());
    return f;
  }

  Candidate search(std::size_t begin, std::size_t end, double mean) {
    Candidate best;
    const std::size_t m = end - begin;
    std::vector<std::pair<double, double>> xz(m);  // (x, y - mean)
    for (std::size_t f : features_to_try()) {
      const auto fi = static_cast<Eigen::Index>(f);
      const auto& order = opt_.random_thresholds ? rows_ : sorted_[f];
      for (std::size_t i = 0; i < m; ++i) {
        const auto row = static_cast<Eigen::Index>(order[begin + i]);
        xz[i] = {X_(row, fi), y_[row] - mean};
      }
      if (opt_.random_thresholds) {
        double lo = xz[0].first, hi = lo;
        for (const auto& [x, z] : xz) {
          lo = std::min(lo, x);
          hi = std::max(hi, x);
        }
        if (lo == hi) continue;
        double thr = rng_->uniform(lo, hi);
        if (thr >= hi) thr = lo;
        double sl = 0, s2l = 0, sr = 0, s2r = 0;
        std::size_t nl = 0;
        for (const auto& [x, z] : xz) {
          if (x <= thr) {
            sl += z;
            s2l += z * z;
            ++nl;
          } else {
            sr += z;
            s2r += z * z;
          }
        }
        const std::size_t nr = m - nl;
        if (nl < opt_.min_leaf || nr < opt_.min_leaf) continue;
        const double sse = (s2l - sl * sl / static_cast<double>(nl)) + (s2r - sr * sr / static_cast<double>(nr));
        if (sse < best.sse) best = {static_cast<int>(f), thr, sse};
        continue;
      }
      double total = 0, total2 = 0;
      for (const auto& [x, z] : xz) {
        total += z;
        total2 += z * z;
      }
      double sl = 0, s2l = 0;
      for (std::size_t i = 1; i < m; ++i) {
        sl += xz[i - 1].second;
        s2l += xz[i - 1].second * xz[i - 1].second;
        if (xz[i - 1].first == xz[i].first) continue;
        if (i < opt_.min_leaf || m - i < opt_.min_leaf) continue;
        const double nl = static_cast<double>(i), nr = static_cast<double>(m - i);
        const double sr = total - sl, s2r = total2 - s2l;
        const double sse = (s2l - sl * sl / nl) + (s2r - sr * sr / nr);
        if (sse < best.sse) {
          const double a = xz[i - 1].first, b = xz[i].first;
          double thr = a + (b - a) / 2.0;
          if (thr >= b) thr = a;
          best = {static_cast<int>(f), thr, sse};
        }
      }
    }
    return best;
  }

  std::vector<std::size_t> rows_;                 // node ranges, row order
  std::vector<std::vector<std::size_t>> sorted_;  // per feature, value order
  std::vector<char> goes_left_;
  std::vector<std::size_t> scratch_;
  const Matrix& X_;
  const Vector& y_;
  CartOptions opt_;
  Rng* rng_;
  const ValueRanks* ranks_;
  std::size_t p_;
  std::vector<TreeNode> nodes_;
};

RegressionTree fit_ranked(const Matrix& X, const Vector& y, const CartOptions& opt, Rng* rng, const ValueRanks& ranks) {
  TreeBuilder builder(X, y, opt, rng, opt.random_thresholds ? nullptr : &ranks);
  return RegressionTree(builder.build(), static_cast<std::size_t>(X.cols()));
}

}  // namespace

RegressionTree fit_cart(const Matrix& X, const Vector& y, const CartOptions& opt, Rng* rng) {
  check_xy(X, y);
  TreeBuilder builder(X, y, opt, rng);
  return RegressionTree(builder.build(), static_cast<std::size_t>(X.cols()));
}

std::size_t RegressionTree::parameter_count() const {
  std::size_t count = 0;
  for (const auto& n : nodes_) count += n.feature < 0 ? 1 : 2;
  return count;
}

double RegressionTree::predict_one(std::span<const double> x) const {
  check_dim(x.size());
  std::size_t i = 0;
  while (nodes_[i].feature >= 0)
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(nodes_[i].feature)] <= nodes_[i].threshold ? nodes_[i].left
                                                                                                         : nodes_[i].right);
  return nodes_[i].value;
}

int RegressionTree::depth() const {
  std::vector<int> d(nodes_.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    deepest = std::max(deepest, d[i]);
    if (nodes_[i].feature >= 0) {
      d[static_cast<std::size_t>(nodes_[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes_[i].right)] = d[i] + 1;
    }
  }
  return deepest;
}

nlohmann::ordered_json RegressionTree::to_json() const {
  nlohmann::ordered_json j;
  j["family"] = family();
  j["input_dim"] = input_dim_;
  nlohmann::ordered_json nodes = nlohmann::ordered_json::array();
  for (const auto& n : nodes_) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value, n.samples});
  j["nodes"] = std::move(nodes);
  return j;
}

RegressionTree RegressionTree::from_json(const nlohmann::json& j) {
  std::vector<TreeNode> nodes;
  for (const auto& a : j.at("nodes")) {
    TreeNode n;
    n.feature = a.at(0).get<int>();
    n.threshold = a.at(1).get<double>();
    n.left = a.at(2).get<int>();
    n.right = a.at(3).get<int>();
    n.value = a.at(4).get<double>();
    n.samples = a.at(5).get<std::size_t>();
    nodes.push_back(n);
  }
  const auto count = static_cast<int>(nodes.size());
  for (const auto& n : nodes)
    if (n.feature >= 0 && (n.left <= 0 || n.right <= 0 || n.left >= count || n.right >= count))
      throw Error(ErrorCode::ParseError, "tree artifact: child index out of range");
  if (nodes.empty()) throw Error(ErrorCode::ParseError, "tree artifact without nodes");
  return RegressionTree(std::move(nodes), j.at("input_dim").get<std::size_t>());
}

// ---------------------------------------------------------------- ensembles

std::string_view ensemble_name(EnsembleMethod m) {
  switch (m) {
    case EnsembleMethod::AdaBoostR2: return "adaboost_r2";
    case EnsembleMethod::GradientBoost: return "gradient_boost";
    case EnsembleMethod::HistGradientBoost: return "hist_gradient_boost";
    case EnsembleMethod::RandomForest: return "random_forest";
    case EnsembleMethod::ExtraTrees: return "extra_trees";
  }
  return "?";
}

namespace {

std::optional<EnsembleMethod> ensemble_from_name(std::string_view name) {
  for (auto m : {EnsembleMethod::AdaBoostR2, EnsembleMethod::GradientBoost, EnsembleMethod::HistGradientBoost,
                 EnsembleMethod::RandomForest, EnsembleMethod::ExtraTrees})
    if (ensemble_name(m) == name) return m;
  return std::nullopt;
}

bool is_boosting(EnsembleMethod m) {
  return m == EnsembleMethod::GradientBoost || m == EnsembleMethod::HistGradientBoost;
}

}  // namespace

EnsembleSpec EnsembleSpec::defaults(EnsembleMethod m) {
  EnsembleSpec s;
  s.method = m;
  switch (m) {
    case EnsembleMethod::AdaBoostR2:
      s.n_estimators = 50;
      s.learning_rate = 1.0;
      s.tree = {3, 1, 0, false};
      break;
    case EnsembleMethod::GradientBoost:
    case EnsembleMethod::HistGradientBoost:
      s.n_estimators = 100;
      s.learning_rate = 0.1;
      s.tree = {3, 1, 0, false};
      break;
    case EnsembleMethod::RandomForest:
      s.n_estimators = 100;
      s.learning_rate = 1.0;
      s.tree = {16, 1, 0, false};
      s.bootstrap = true;
      break;
    case EnsembleMethod::ExtraTrees:
      s.n_estimators = 100;
      s.learning_rate = 1.0;
      s.tree = {16, 1, 0, true};
      s.bootstrap = false;
      break;
  }
  return s;
}

void EnsembleSpec::validate() const {
  // Boosting with zero rounds is the constant mean predictor; forests need a tree.
  if (n_estimators == 0 && !is_boosting(method))
    throw Error(ErrorCode::InvalidInput, "n_estimators must be >= 1", {"n_estimators"});
  if (histogram_bins < 2 || histogram_bins > 256)
    throw Error(ErrorCode::InvalidInput, "histogram_bins must lie in [2, 256]", {"histogram_bins"});
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidInput, "learning_rate must be > 0", {"learning_rate"});
  if (tree.min_leaf < 1) throw Error(ErrorCode::InvalidInput, "min_leaf must be >= 1", {"min_leaf"});
}

std::vector<double> histogram_edges(std::span<const double> column, std::size_t bins) {
  std::vector<double> sorted(column.begin(), column.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> edges;
  const std::size_t n = sorted.size();
  for (std::size_t k = 1; k < bins; ++k) {
    const std::size_t pos = k * n / bins;
    if (pos == 0) continue;
    const double e = sorted[pos - 1];
    if (e >= sorted.back()) break;
    if (edges.empty() || e > edges.back()) edges.push_back(e);
  }
  return edges;
}

std::size_t TreeEnsemble::parameter_count() const {
  std::size_t count = 1 + weights.size();
  for (const auto& t : trees) count += t.parameter_count();
  return count;
}

double TreeEnsemble::predict_one(std::span<const double> x) const {
  check_dim(x.size());
  switch (method) {
    case EnsembleMethod::GradientBoost:
    case EnsembleMethod::HistGradientBoost: {
      double f = init;
      for (const auto& t : trees) f += learning_rate * t.predict_one(x);
      return f;
    }
    case EnsembleMethod::RandomForest:
    case EnsembleMethod::ExtraTrees: {
      double s = 0.0;
      for (const auto& t : trees) s += t.predict_one(x);
      return s / static_cast<double>(trees.size());
    }
    case EnsembleMethod::AdaBoostR2: {
      std::vector<std::pair<double, double>> pw(trees.size());
      double total = 0.0;
      for (std::size_t i = 0; i < trees.size(); ++i) {
        pw[i] = {trees[i].predict_one(x), weights[i]};
        total += weights[i];
      }
      std::stable_sort(pw.begin(), pw.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      double acc = 0.0;
      for (const auto& [pred, w] : pw) {
        acc += w;
        if (acc >= 0.5 * total) return pred;
      }
      return pw.back().first;
    }
  }
  return init;
}

nlohmann::ordered_json TreeEnsemble::to_json() const {
  nlohmann::ordered_json j;
  j["family"] = family();
  j["input_dim"] = input_dim_;
  j["init"] = init;
  j["learning_rate"] = learning_rate;
  j["weights"] = weights;
  nlohmann::ordered_json ts = nlohmann::ordered_json::array();
  for (const auto& t : trees) ts.push_back(t.to_json());
  j["trees"] = std::move(ts);
  return j;
}

TreeEnsemble TreeEnsemble::from_json(const nlohmann::json& j) {
  TreeEnsemble e;
  auto m = ensemble_from_name(j.at("family").get<std::string>());
  if (!m) throw Error(ErrorCode::ParseError, "unknown ensemble family", {"family"});
  e.method = *m;
  e.input_dim_ = j.at("input_dim").get<std::size_t>();
  e.init = j.at("init").get<double>();
  e.learning_rate = j.at("learning_rate").get<double>();
  e.weights = j.at("weights").get<std::vector<double>>();
  for (const auto& t : j.at("trees")) e.trees.push_back(RegressionTree::from_json(t));
  if (e.method == EnsembleMethod::AdaBoostR2 && e.weights.size() != e.trees.size())
    throw Error(ErrorCode::ParseError, "adaboost artifact: weight count mismatch");
  if ((e.method == EnsembleMethod::RandomForest || e.method == EnsembleMethod::ExtraTrees) && e.trees.empty())
    throw Error(ErrorCode::ParseError, "forest artifact without trees");
  return e;
}

namespace {

TreeEnsemble fit_boosting(const EnsembleSpec& spec, const Matrix& X, const Vector& y) {
  TreeEnsemble e;
  e.method = spec.method;
  e.input_dim_ = static_cast<std::size_t>(X.cols());
  e.learning_rate = spec.learning_rate;
  e.init = y.mean();
  Vector F = Vector::Constant(y.size(), e.init);

  const bool hist = spec.method == EnsembleMethod::HistGradientBoost;
  std::vector<std::vector<double>> edges;
  Matrix design = X;
  if (hist) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const Vector col = X.col(j);
      edges.push_back(histogram_edges({col.data(), static_cast<std::size_t>(col.size())}, spec.histogram_bins));
      const auto& ej = edges.back();
      for (Eigen::Index i = 0; i < X.rows(); ++i)
        design(i, j) = static_cast<double>(std::lower_bound(ej.begin(), ej.end(), X(i, j)) - ej.begin());
    }
  }
  const ValueRanks ranks = value_ranks(design);
  for (std::size_t m = 0; m < spec.n_estimators; ++m) {
    const Vector residual = y - F;
    RegressionTree tree = fit_ranked(design, residual, spec.tree, nullptr, ranks);
    F += spec.learning_rate * tree.predict(design);
    if (hist) {
      // Thresholds between bin indices become the upper edge of the lower bin.
      auto nodes = tree.nodes();
      for (auto& n : nodes)
        if (n.feature >= 0) {
          const auto& ej = edges[static_cast<std::size_t>(n.feature)];
          n.threshold = ej[static_cast<std::size_t>(std::floor(n.threshold))];
        }
      tree = RegressionTree(std::move(nodes), e.input_dim_);
    }
    e.trees.push_back(std::move(tree));
  }
  return e;
}

TreeEnsemble fit_forest(const EnsembleSpec& spec, const Matrix& X, const Vector& y) {
  TreeEnsemble e;
  e.method = spec.method;
  e.input_dim_ = static_cast<std::size_t>(X.cols());
  const auto p = static_cast<std::size_t>(X.cols());
  const auto n = static_cast<std::size_t>(X.rows());
  CartOptions opt = spec.tree;
  if (spec.method == EnsembleMethod::RandomForest) {
    opt.max_features = spec.max_features > 0 ? spec.max_features : (p + 2) / 3;
  } else {
    opt.max_features = spec.max_features > 0 ? spec.max_features : p;
    opt.random_thresholds = true;
  }
  const bool bootstrap = spec.method == EnsembleMethod::RandomForest && spec.bootstrap;
  const ValueRanks ranks = opt.random_thresholds ? ValueRanks{} : value_ranks(X);
  for (std::size_t t = 0; t < spec.n_estimators; ++t) {
    auto rng = Rng::stream(spec.seed, ensemble_name(spec.method), t);
    if (bootstrap) {
      std::vector<std::size_t> rows(n);
      for (auto& r : rows) r = static_cast<std::size_t>(rng.below(n));
      e.trees.push_back(fit_ranked(take_rows(X, rows), take_rows(y, rows), opt, &rng, opt.random_thresholds ? ranks : take_ranks(ranks, rows)));
    } else {
      e.trees.push_back(fit_ranked(X, y, opt, &rng, ranks));
    }
  }
  return e;
}

TreeEnsemble fit_adaboost(const EnsembleSpec& spec, const Matrix& X, const Vector& y) {
  TreeEnsemble e;
  e.method = spec.method;
  e.input_dim_ = static_cast<std::size_t>(X.cols());
  e.learning_rate = spec.learning_rate;
  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<double> w(n, 1.0 / static_cast<double>(n));
  auto rng = Rng::stream(spec.seed, "adaboost_r2");
  const ValueRanks ranks = value_ranks(X);
  for (std::size_t m = 0; m < spec.n_estimators; ++m) {
    std::vector<double> cdf(n);
    std::partial_sum(w.begin(), w.end(), cdf.begin());
    std::vector<std::size_t> rows(n);
    for (auto& r : rows) {
      const double u = rng.uniform() * cdf.back();
      r = std::min(n - 1, static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()));
    }
    RegressionTree tree = fit_ranked(take_rows(X, rows), take_rows(y, rows), spec.tree, nullptr, take_ranks(ranks, rows));
    const Vector err = (tree.predict(X) - y).cwiseAbs();
    const double emax = err.maxCoeff();
    if (emax == 0.0) {
      e.trees.push_back(std::move(tree));
      e.weights.push_back(1.0);
      break;
    }
    double avg = 0.0;
    for (std::size_t i = 0; i < n; ++i) avg += w[i] * err[static_cast<Eigen::Index>(i)] / emax;
    if (avg >= 0.5) {
      if (e.trees.empty()) {
        e.trees.push_back(std::move(tree));
        e.weights.push_back(1.0);
      }
      break;
    }
    const double beta = avg / (1.0 - avg);
    e.trees.push_back(std::move(tree));
    e.weights.push_back(spec.learning_rate * std::log(1.0 / beta));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] *= std::pow(beta, (1.0 - err[static_cast<Eigen::Index>(i)] / emax) * spec.learning_rate);
      total += w[i];
    }
    for (auto& v : w) v /= total;
  }
  return e;
}

}  // namespace

TreeEnsemble fit_ensemble(const EnsembleSpec& spec, const Matrix& X, const Vector& y) {
  check_xy(X, y);
  spec.validate();
  switch (spec.method) {
    case EnsembleMethod::GradientBoost:
    case EnsembleMethod::HistGradientBoost: return fit_boosting(spec, X, y);
    case EnsembleMethod::RandomForest:
    case EnsembleMethod::ExtraTrees: return fit_forest(spec, X, y);
    case EnsembleMethod::AdaBoostR2: return fit_adaboost(spec, X, y);
  }
  throw Error(ErrorCode::InvalidInput, "unknown ensemble method");
}

// ---------------------------------------------------------------- voting

VotingModel::VotingModel(std::vector<std::unique_ptr<Model>> members) : members_(std::move(members)) {
  if (members_.empty()) throw Error(ErrorCode::InvalidInput, "voting needs members");
  for (const auto& m : members_)
    if (m->input_dim() != members_.front()->input_dim())
      throw Error(ErrorCode::DimensionMismatch, "voting members disagree on input width");
}

std::size_t VotingModel::parameter_count() const {
  std::size_t c = 0;
  for (const auto& m : members_) c += m->parameter_count();
  return c;
}

double VotingModel::predict_one(std::span<const double> x) const {
  check_dim(x.size());
  double s = 0.0;
  for (const auto& m : members_) s += m->predict_one(x);
  return s / static_cast<double>(members_.size());
}

nlohmann::ordered_json VotingModel::to_json() const {
  nlohmann::ordered_json j;
  j["family"] = family();
  nlohmann::ordered_json ms = nlohmann::ordered_json::array();
  for (const auto& m : members_) ms.push_back(m->to_json());
  j["members"] = std::move(ms);
  return j;
}

VotingModel fit_voting(const Matrix& X, const Vector& y, std::uint64_t seed) {
  std::vector<std::unique_ptr<Model>> members;
  members.push_back(std::make_unique<LinearModel>(fit_ols(X, y)));
  auto rf = EnsembleSpec::defaults(EnsembleMethod::RandomForest);
  rf.seed = seed;
  members.push_back(std::make_unique<TreeEnsemble>(fit_ensemble(rf, X, y)));
  members.push_back(std::make_unique<KnnModel>(fit_knn(X, y, std::min<std::size_t>(5, static_cast<std::size_t>(X.rows())))));
  return VotingModel(std::move(members));
}

}  // namespace finpred
