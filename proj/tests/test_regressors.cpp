#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "finpred/error.hpp"
#include "finpred/random.hpp"
#include "finpred/registry.hpp"
#include "finpred/regressors.hpp"
#include "support.hpp"

using namespace finpred;
using testing::random_matrix;
using testing::random_vector;

namespace {

// Intercept-augmented normal equations, solved by LLT.
Vector normal_equations(const Matrix& X, const Vector& y) {
  Eigen::MatrixXd A(X.rows(), X.cols() + 1);
  A.col(0).setOnes();
  A.rightCols(X.cols()) = X;
  return (A.transpose() * A).llt().solve(A.transpose() * y);
}

struct Split {
  double threshold;
  double sse;
};

// Every midpoint between consecutive distinct sorted values.
Split exhaustive_root_split(const std::vector<double>& x, const std::vector<double>& y, std::size_t min_leaf) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  Split best{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity()};
  for (std::size_t cut = min_leaf; cut + min_leaf <= x.size(); ++cut) {
    if (x[idx[cut - 1]] == x[idx[cut]]) continue;
    auto sse = [&](std::size_t lo, std::size_t hi) {
      double m = 0;
      for (std::size_t i = lo; i < hi; ++i) m += y[idx[i]];
      m /= static_cast<double>(hi - lo);
      double s = 0;
      for (std::size_t i = lo; i < hi; ++i) s += (y[idx[i]] - m) * (y[idx[i]] - m);
      return s;
    };
    const double total = sse(0, cut) + sse(cut, x.size());
    if (total < best.sse) best = {0.5 * (x[idx[cut - 1]] + x[idx[cut]]), total};
  }
  return best;
}

double brute_knn(const Matrix& X, const Vector& y, std::span<const double> q, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> d;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double s = 0;
    for (Eigen::Index j = 0; j < X.cols(); ++j) s += (X(i, j) - q[j]) * (X(i, j) - q[j]);
    d.emplace_back(s, static_cast<std::size_t>(i));
  }
  std::sort(d.begin(), d.end());
  double m = 0;
  for (std::size_t i = 0; i < k; ++i) m += y[static_cast<Eigen::Index>(d[i].second)];
  return m / static_cast<double>(k);
}

Vector linear_target(Rng& rng, const Matrix& X, double noise) {
  Vector w = random_vector(rng, static_cast<std::size_t>(X.cols()));
  return (X * w).array() + 0.7 + noise * random_vector(rng, static_cast<std::size_t>(X.rows())).array();
}

}  // namespace

TEST_CASE("OLS matches the normal-equations oracle") {
  Rng rng(100);
  for (int t = 0; t < 20; ++t) {
    const Matrix X = random_matrix(rng, 200, 10);
    const Vector y = linear_target(rng, X, 0.3);
    const auto m = fit_ols(X, y);
    const Vector ref = normal_equations(X, y);
    CHECK(std::abs(m.intercept() - ref[0]) < 1e-8);
    CHECK((m.coef() - ref.tail(10)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK_FALSE(m.degenerate);
    CHECK(m.parameter_count() == 11);
  }
}

TEST_CASE("OLS parameter count on 33 features") {
  Rng rng(1);
  const Matrix X = random_matrix(rng, 100, 33);
  CHECK(fit_ols(X, linear_target(rng, X, 0.1)).parameter_count() == 34);
}

TEST_CASE("OLS flags a rank-deficient design and stays finite") {
  Rng rng(2);
  Matrix X = random_matrix(rng, 50, 4);
  X.col(3) = 2.0 * X.col(1);
  const Vector y = linear_target(rng, X, 0.1);
  const auto m = fit_ols(X, y);
  CHECK(m.degenerate);
  CHECK(m.coef().allFinite());
  CHECK(std::isfinite(m.intercept()));
}

TEST_CASE("elastic net at zero penalty equals OLS") {
  Rng rng(200);
  for (int t = 0; t < 10; ++t) {
    const Matrix X = random_matrix(rng, 200, 10);
    const Vector y = linear_target(rng, X, 0.5);
    const auto ols = fit_ols(X, y);
    const auto en = fit_elasticnet(X, y, 0.0, 0.0);
    CHECK(std::abs(en.intercept() - ols.intercept()) < 1e-4);
    CHECK((en.coef() - ols.coef()).cwiseAbs().maxCoeff() < 1e-4);
  }
}

TEST_CASE("elastic net satisfies KKT conditions") {
  Rng rng(300);
  for (int t = 0; t < 10; ++t) {
    const Matrix X = random_matrix(rng, 200, 10);
    const Vector y = linear_target(rng, X, 1.0);
    const double l1 = 0.05 + 0.2 * rng.uniform(), l2 = t % 2 ? 0.0 : 0.1;
    const auto m = fit_elasticnet(X, y, l1, l2);
    const auto sc = Standardizer::fit(X);
    const Matrix Z = sc.apply(X);
    const Vector w = m.coef().cwiseProduct(sc.sd);
    const Vector r = (y.array() - y.mean()).matrix() - Z * w;
    const double n = static_cast<double>(X.rows());
    double worst = 0;
    for (Eigen::Index j = 0; j < Z.cols(); ++j) {
      const double g = -Z.col(j).dot(r) / n + l2 * w[j];
      worst = std::max(worst, w[j] != 0.0 ? std::abs(g + l1 * (w[j] > 0 ? 1 : -1)) : std::max(0.0, std::abs(g) - l1));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("lasso zeroes coefficients of pure-noise features") {
  Rng rng(4);
  const Matrix X = random_matrix(rng, 300, 6);
  const Vector y = 3.0 * X.col(0) + 0.01 * random_vector(rng, 300);
  const auto m = fit_elasticnet(X, y, 0.2, 0.0);
  CHECK(m.variant == "lasso");
  CHECK(m.coef()[0] > 2.0);
  for (int j = 1; j < 6; ++j) CHECK(m.coef()[j] == 0.0);
}

TEST_CASE("cross-validated elastic net picks a grid penalty") {
  Rng rng(5);
  const Matrix X = random_matrix(rng, 120, 5);
  const Vector y = linear_target(rng, X, 0.2);
  const auto m = fit_elasticnet_cv(X, y, 0.5, 1);
  const double total = m.lambda1 + m.lambda2;
  CHECK(std::any_of(kPenaltyGrid.begin(), kPenaltyGrid.end(), [&](double g) { return std::abs(g - total) < 1e-15; }));
  CHECK(m.lambda1 == doctest::Approx(0.5 * total));
}

TEST_CASE("CART root split matches exhaustive search") {
  Rng rng(400);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 10 + rng.below(60);
    std::vector<double> x(n), y(n);
    Matrix X(n, 1);
    Vector Y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.uniform(-5, 5);
      y[i] = (x[i] > 0.3 ? 2.0 : 0.0) + rng.normal();
      X(i, 0) = x[i];
      Y[i] = y[i];
    }
    const std::size_t min_leaf = 1 + t % 3;
    const auto tree = fit_cart(X, Y, {1, min_leaf, 0, false});
    const auto ref = exhaustive_root_split(x, y, min_leaf);
    REQUIRE(tree.nodes().size() == 3);
    CHECK(tree.nodes()[0].feature == 0);
    CHECK(tree.nodes()[0].threshold == ref.threshold);
  }
}

TEST_CASE("CART respects depth and leaf size") {
  Rng rng(6);
  const Matrix X = random_matrix(rng, 300, 4);
  const Vector y = random_vector(rng, 300);
  const auto tree = fit_cart(X, y, {4, 10, 0, false});
  CHECK(tree.depth() <= 4);
  for (const auto& nd : tree.nodes())
    if (nd.feature < 0) CHECK(nd.samples >= 10);
  std::size_t leaves = 0, internal = 0;
  for (const auto& nd : tree.nodes()) (nd.feature < 0 ? leaves : internal)++;
  CHECK(tree.parameter_count() == 2 * internal + leaves);
  CHECK(leaves == internal + 1);
}

TEST_CASE("CART leaves predict training means") {
  Matrix X(6, 1);
  X << 1, 2, 3, 10, 11, 12;
  Vector y(6);
  y << 1, 1, 1, 5, 5, 5;
  const auto tree = fit_cart(X, y, {3, 1, 0, false});
  const std::vector<double> lo{2.0}, hi{11.0};
  CHECK(tree.predict_one(lo) == 1.0);
  CHECK(tree.predict_one(hi) == 5.0);
  CHECK(tree.nodes()[0].threshold == 6.5);
}

TEST_CASE("randomized trees need an rng") {
  Rng rng(7);
  const Matrix X = random_matrix(rng, 30, 3);
  const Vector y = random_vector(rng, 30);
  CHECK_THROWS_AS(fit_cart(X, y, {3, 1, 2, false}), Error);
  CHECK_NOTHROW(fit_cart(X, y, {3, 1, 2, false}, &rng));
}

TEST_CASE("KNN matches brute force") {
  Rng rng(500);
  const Matrix X = random_matrix(rng, 80, 3);
  const Vector y = random_vector(rng, 80);
  for (std::size_t k : {1, 3, 7}) {
    for (int q = 0; q < 20; ++q) {
      std::vector<double> p{rng.normal(), rng.normal(), rng.normal()};
      CHECK(knn_mean(X, y, p, k) == doctest::Approx(brute_knn(X, y, p, k)).epsilon(1e-14));
    }
  }
  CHECK_THROWS_AS(fit_knn(X, y, 0), Error);
  CHECK_THROWS_AS(fit_knn(X, y, 81), Error);
}

TEST_CASE("KNN with k = n predicts the mean") {
  Rng rng(8);
  const Matrix X = random_matrix(rng, 20, 2);
  const Vector y = random_vector(rng, 20);
  const auto m = fit_knn(X, y, 20);
  const std::vector<double> q{0.1, 0.2};
  CHECK(m.predict_one(q) == doctest::Approx(y.mean()));
}

TEST_CASE("linear SVR fits inside the tube and beats perturbations") {
  Rng rng(9);
  const Matrix X = random_matrix(rng, 150, 3);
  const Vector y = linear_target(rng, X, 0.05);
  const double eps = 0.05, C = 10.0;
  const auto m = fit_svr_linear(X, y, eps, C);
  const double obj = svr_objective(m, X, y, eps, C);
  CHECK(std::isfinite(obj));
  // the intercept is refit exactly, so shifting it cannot help
  for (double d : {-1e-3, 1e-3}) {
    LinearModel shifted(m.intercept() + d, m.coef());
    CHECK(svr_objective(shifted, X, y, eps, C) >= obj - 1e-9);
  }
  const Vector r = y - m.predict(X);
  CHECK(r.cwiseAbs().mean() < 0.2);
}

TEST_CASE("SVR on a constant target stays at w = 0") {
  Rng rng(10);
  const Matrix X = random_matrix(rng, 40, 2);
  const Vector y = Vector::Constant(40, 3.0);
  const auto m = fit_svr_linear(X, y, 0.01, 1.0);
  CHECK(m.coef().cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::abs(m.intercept() - 3.0) <= 0.01);
}

TEST_CASE("standardizer handles constant columns") {
  Matrix X(4, 2);
  X << 1, 5, 2, 5, 3, 5, 4, 5;
  const auto s = Standardizer::fit(X);
  CHECK(s.sd[1] == 0.0);
  const Matrix Z = s.apply(X);
  CHECK(Z.col(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(Z.col(0).mean() == doctest::Approx(0.0));
  CHECK((Z.col(0).array().square().mean()) == doctest::Approx(1.0));
}

TEST_CASE("ensembles learn a step function") {
  Rng rng(11);
  const Matrix X = random_matrix(rng, 200, 3);
  Vector y(200);
  for (int i = 0; i < 200; ++i) y[i] = X(i, 0) > 0 ? 1.0 : -1.0;
  for (auto method : {EnsembleMethod::AdaBoostR2, EnsembleMethod::GradientBoost, EnsembleMethod::HistGradientBoost,
                      EnsembleMethod::RandomForest, EnsembleMethod::ExtraTrees}) {
    INFO(ensemble_name(method));
    auto spec = EnsembleSpec::defaults(method);
    spec.n_estimators = 30;
    spec.seed = 3;
    const auto m = fit_ensemble(spec, X, y);
    const Vector p = m.predict(X);
    CHECK((p - y).squaredNorm() / 200.0 < 0.2);
    // deterministic for a seed, identical in parallel
    const auto again = fit_ensemble(spec, X, y);
    CHECK(again.to_json() == m.to_json());
    CHECK(m.predict(X, Exec::Parallel) == p);
  }
}

TEST_CASE("zero boosting rounds predict the initial value") {
  Rng rng(12);
  const Matrix X = random_matrix(rng, 30, 2);
  const Vector y = random_vector(rng, 30);
  auto spec = EnsembleSpec::defaults(EnsembleMethod::GradientBoost);
  spec.n_estimators = 0;
  const auto m = fit_ensemble(spec, X, y);
  const std::vector<double> q{0, 0};
  CHECK(m.predict_one(q) == doctest::Approx(y.mean()));
  auto rf = EnsembleSpec::defaults(EnsembleMethod::RandomForest);
  rf.n_estimators = 0;
  CHECK_THROWS_AS(rf.validate(), Error);
}

TEST_CASE("histogram edges are equal frequency") {
  std::vector<double> col(1000);
  std::iota(col.begin(), col.end(), 0.0);
  const auto e = histogram_edges(col, 4);
  REQUIRE(e.size() == 3);
  CHECK(e[0] == doctest::Approx(250).epsilon(0.01));
  CHECK(e[1] == doctest::Approx(500).epsilon(0.01));
  std::vector<double> flat(10, 1.0);
  CHECK(histogram_edges(flat, 8).empty());
}

TEST_CASE("every registry model round trips through json") {
  Rng rng(13);
  const Matrix X = random_matrix(rng, 60, 4);
  const Vector y = linear_target(rng, X, 0.3);
  const Matrix Q = random_matrix(rng, 10, 4);
  for (const auto& id : model_ids()) {
    INFO(id);
    ModelSpec spec{id, nlohmann::json::object()};
    if (id.rfind("fnn", 0) == 0) spec.hyper["epochs"] = 5;
    const auto m = fit_model(spec, X, y, 1);
    const auto back = model_from_json(nlohmann::json::parse(m->to_json().dump()));
    CHECK(back->predict(Q) == m->predict(Q));
    CHECK(back->parameter_count() == m->parameter_count());
  }
}

TEST_CASE("registry aliases and spec parsing") {
  CHECK(canonical_model_id("OLS") == "linreg");
  CHECK(canonical_model_id("fnn-deepwide") == "fnn_deep_wide");
  CHECK(canonical_model_id("rf") == "random_forest");
  CHECK_THROWS_AS(canonical_model_id("nope"), Error);
  const auto s = ModelSpec::parse("knn:k=3");
  CHECK(s.id == "knn");
  CHECK(s.hyper["k"] == 3);
  CHECK(s.label() == "knn:k=3");
  CHECK_THROWS_AS(ModelSpec::parse("knn:bogus=1"), Error);
  CHECK_THROWS_AS(ModelSpec::parse("knn:k=0"), Error);
  CHECK(ModelSpec::parse("lasso:lambda=cv").hyper["lambda"].is_null());
  CHECK(resolved_hyper(ModelSpec::parse("cart"))["max_depth"] == 8);
}

TEST_CASE("model artifact save and load") {
  Rng rng(14);
  const Matrix X = random_matrix(rng, 40, 24);
  const Vector y = random_vector(rng, 40);
  ModelArtifact a;
  a.name = "t";
  a.spec = ModelSpec::parse("linreg");
  a.task = Task::ROE;
  a.scenario = ScenarioId::Base;
  a.seed = 42;
  a.feature_names = scenario_feature_names(ScenarioId::Base);
  a.model = fit_model(a.spec, X, y, 42);
  const auto dir = testing::scratch_dir("artifact");
  const auto path = (dir / "t.model.json").string();
  a.save(path);
  const auto b = ModelArtifact::load(path);
  CHECK(b.name == "t");
  CHECK(b.task == Task::ROE);
  CHECK(b.seed == 42);
  CHECK(b.feature_names == a.feature_names);
  CHECK(b.model->predict(X) == a.model->predict(X));
  CHECK(b.to_json()["parameter_count"] == 25);
}

TEST_CASE("dimension mismatch is reported") {
  Rng rng(15);
  const Matrix X = random_matrix(rng, 20, 3);
  const auto m = fit_ols(X, random_vector(rng, 20));
  const std::vector<double> bad{1, 2};
  CHECK_THROWS_AS(m.predict_one(bad), Error);
}
