#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "finpred/exec.hpp"

namespace finpred {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Rows of X selected by index.
Matrix take_rows(const Matrix& X, std::span<const std::size_t> rows);
Vector take_rows(const Vector& y, std::span<const std::size_t> rows);

/// A fitted predictor. Immutable after fit; predict is deterministic.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string family() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t parameter_count() const = 0;
  virtual double predict_one(std::span<const double> x) const = 0;
  virtual Vector predict(const Matrix& X, Exec exec = Exec::Serial) const;

  /// Learned parameters; the inverse is model_from_json.
  virtual nlohmann::ordered_json to_json() const = 0;

 protected:
  void check_dim(std::size_t got) const;
};

std::unique_ptr<Model> model_from_json(const nlohmann::json& j);

/// Column means and population standard deviations. Zero-spread columns get
/// sd = 0 and are left at 0 by `standardize`.
struct Standardizer {
  Vector mean;
  Vector sd;

  static Standardizer fit(const Matrix& X);
  Matrix apply(const Matrix& X) const;
  void apply_row(std::span<const double> x, std::span<double> out) const;
  nlohmann::ordered_json to_json() const;
  static Standardizer from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------- linear family

class LinearModel final : public Model {
 public:
  LinearModel() = default;
  LinearModel(double intercept, Vector coef) : intercept_(intercept), coef_(std::move(coef)) {}

  std::string family() const override { return "linear"; }
  std::size_t input_dim() const override { return static_cast<std::size_t>(coef_.size()); }
  std::size_t parameter_count() const override { return input_dim() + 1; }
  double predict_one(std::span<const double> x) const override;
  Vector predict(const Matrix& X, Exec exec = Exec::Serial) const override;
  nlohmann::ordered_json to_json() const override;
  static LinearModel from_json(const nlohmann::json& j);

  double intercept() const { return intercept_; }
  const Vector& coef() const { return coef_; }

  std::string variant = "ols";  // ols / lasso / elasticnet / svr
  bool degenerate = false;  // ill-conditioned design; minimum-norm solution used
  double condition_number = 0.0;
  double lambda1 = 0.0, lambda2 = 0.0;
  std::size_t sweeps = 0;  // coordinate descent sweeps or subgradient iterations
  double epsilon = 0.0, C = 0.0;

 private:
  double intercept_ = 0.0;
  Vector coef_;
};

inline constexpr double kDegenerateCondition = 1e12;

/// Least squares with intercept. Rank deficiency is resolved by the
/// minimum-norm solution (complete orthogonal decomposition); the model is
/// flagged degenerate when the condition number exceeds 1e12.
LinearModel fit_ols(const Matrix& X, const Vector& y);

struct ElasticNetOptions {
  double tolerance = 1e-8;
  std::size_t max_sweeps = 10000;
};

/// Coordinate descent on standardized features for
///   (1/2n) ||y - b - Xw||^2 + l1 ||w||_1 + (l2/2) ||w||^2
/// with coefficients mapped back to the raw scale. Throws NotConverged.
LinearModel fit_elasticnet(const Matrix& X, const Vector& y, double l1, double l2,
                           const ElasticNetOptions& opt = {});

inline constexpr std::array<double, 4> kPenaltyGrid = {1e-4, 1e-3, 1e-2, 1e-1};

/// Penalty chosen from kPenaltyGrid by inner 3-fold CV, then refit on all
/// rows. l1_ratio = 1 gives the lasso.
LinearModel fit_elasticnet_cv(const Matrix& X, const Vector& y, double l1_ratio, std::uint64_t seed);

struct SvrOptions {
  std::size_t iterations = 3000;
  double step = 1.0;  // step_t = step / sqrt(t)
};

/// Linear epsilon-insensitive regression:
///   C * sum max(0, |r_i| - eps) + 1/2 ||w||^2
/// Proximal subgradient steps on standardized features with the best iterate
/// kept, then an exact one-dimensional refit of the intercept.
LinearModel fit_svr_linear(const Matrix& X, const Vector& y, double epsilon, double C, const SvrOptions& opt = {});

/// Objective value of a linear model under the epsilon-insensitive loss.
double svr_objective(const LinearModel& m, const Matrix& X, const Vector& y, double epsilon, double C);

// ---------------------------------------------------------------- knn

class KnnModel final : public Model {
 public:
  KnnModel() = default;
  KnnModel(std::size_t k, Standardizer scaler, Matrix X_std, Vector y);

  std::string family() const override { return "knn"; }
  std::size_t input_dim() const override { return static_cast<std::size_t>(X_.cols()); }
  std::size_t parameter_count() const override { return static_cast<std::size_t>(X_.size() + y_.size()); }
  double predict_one(std::span<const double> x) const override;
  Vector predict(const Matrix& X, Exec exec = Exec::Serial) const override;
  nlohmann::ordered_json to_json() const override;
  static KnnModel from_json(const nlohmann::json& j);

  std::size_t k() const { return k_; }

 private:
  std::size_t k_ = 5;
  Standardizer scaler_;
  Matrix X_;  // standardized training rows
  Vector y_;
};

/// Stores the standardized training set. Throws InvalidK unless 1 <= k <= n.
KnnModel fit_knn(const Matrix& X, const Vector& y, std::size_t k = 5);

/// Mean target of the k rows of `train` nearest to `query` (squared
/// Euclidean distance; ties go to the lower row index).
double knn_mean(const Matrix& train, const Vector& y, std::span<const double> query, std::size_t k);

// ---------------------------------------------------------------- trees

struct TreeNode {
  int feature = -1;  // -1 = leaf
  double threshold = 0.0;
  int left = -1, right = -1;
  double value = 0.0;
  std::size_t samples = 0;
};

class Rng;

struct CartOptions {
  int max_depth = 8;
  std::size_t min_leaf = 5;
  std::size_t max_features = 0;  // features tried per split; 0 = all
  bool random_thresholds = false;  // extra-trees style: one uniform threshold per feature
};

class RegressionTree final : public Model {
 public:
  RegressionTree() = default;
  RegressionTree(std::vector<TreeNode> nodes, std::size_t input_dim)
      : nodes_(std::move(nodes)), input_dim_(input_dim) {}

  std::string family() const override { return "cart"; }
  std::size_t input_dim() const override { return input_dim_; }
  std::size_t parameter_count() const override;
  double predict_one(std::span<const double> x) const override;
  nlohmann::ordered_json to_json() const override;
  static RegressionTree from_json(const nlohmann::json& j);

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  int depth() const;

 private:
  std::vector<TreeNode> nodes_;
  std::size_t input_dim_ = 0;
};

/// Greedy binary tree minimizing the children's summed squared error.
/// Candidate thresholds are midpoints of consecutive distinct values; a
/// split must strictly improve, so ties keep the lowest feature index and
/// then the smallest threshold. `rng` is required when max_features or
/// random_thresholds is set.
RegressionTree fit_cart(const Matrix& X, const Vector& y, const CartOptions& opt = {}, Rng* rng = nullptr);

// ---------------------------------------------------------------- ensembles

enum class EnsembleMethod { AdaBoostR2, GradientBoost, HistGradientBoost, RandomForest, ExtraTrees };

std::string_view ensemble_name(EnsembleMethod m);

struct EnsembleSpec {
  EnsembleMethod method = EnsembleMethod::GradientBoost;
  std::size_t n_estimators = 100;
  double learning_rate = 0.1;
  CartOptions tree{3, 1, 0, false};
  std::size_t histogram_bins = 64;
  bool bootstrap = true;          // random forest only
  std::size_t max_features = 0;   // forests; 0 = ceil(p/3) for RF, p for ET
  std::uint64_t seed = 0;

  void validate() const;
  static EnsembleSpec defaults(EnsembleMethod m);
};

class TreeEnsemble final : public Model {
 public:
  std::string family() const override { return std::string(ensemble_name(method)); }
  std::size_t input_dim() const override { return input_dim_; }
  std::size_t parameter_count() const override;
  double predict_one(std::span<const double> x) const override;
  nlohmann::ordered_json to_json() const override;
  static TreeEnsemble from_json(const nlohmann::json& j);

  EnsembleMethod method = EnsembleMethod::GradientBoost;
  double init = 0.0;  // boosting: F0
  double learning_rate = 1.0;
  std::vector<RegressionTree> trees;
  std::vector<double> weights;  // AdaBoost estimator weights
  std::size_t input_dim_ = 0;
};

TreeEnsemble fit_ensemble(const EnsembleSpec& spec, const Matrix& X, const Vector& y);

/// Equal-frequency bin edges for one column (at most `bins` - 1 edges).
std::vector<double> histogram_edges(std::span<const double> column, std::size_t bins);

class VotingModel final : public Model {
 public:
  VotingModel(std::vector<std::unique_ptr<Model>> members);

  std::string family() const override { return "voting"; }
  std::size_t input_dim() const override { return members_.front()->input_dim(); }
  std::size_t parameter_count() const override;
  double predict_one(std::span<const double> x) const override;
  nlohmann::ordered_json to_json() const override;

  const std::vector<std::unique_ptr<Model>>& members() const { return members_; }

 private:
  std::vector<std::unique_ptr<Model>> members_;
};

/// Unweighted mean of OLS, random forest and KNN (k = 5).
VotingModel fit_voting(const Matrix& X, const Vector& y, std::uint64_t seed);

}  // namespace finpred
