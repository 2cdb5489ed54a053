#include <doctest.h>

#include <cmath>

#include "finpred/error.hpp"
#include "finpred/fnn.hpp"
#include "finpred/random.hpp"
#include "support.hpp"

using namespace finpred;
using testing::random_matrix;
using testing::random_vector;

namespace {

std::size_t dense_count(const std::vector<std::size_t>& sizes) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) n += (sizes[i] + 1) * sizes[i + 1];
  return n;
}

// Relative error of backprop against central differences, norm-wise.
double gradient_error(const FnnArchitecture& arch, std::vector<double> params, const Matrix& X, const Vector& y) {
  std::vector<double> g(params.size());
  fnn_gradients(arch, params, X, y, g);
  const double h = 1e-6;
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = fnn_loss(arch, params, X, y);
    params[i] = keep - h;
    const double down = fnn_loss(arch, params, X, y);
    params[i] = keep;
    const double fd = (up - down) / (2 * h);
    diff += (fd - g[i]) * (fd - g[i]);
    scale += std::max(fd * fd, g[i] * g[i]);
  }
  return std::sqrt(diff) / std::max(std::sqrt(scale), 1e-12);
}

}  // namespace

TEST_CASE("parameter counts") {
  CHECK(param_count(FnnArchitecture::make(FnnVariant::DeepWide, 33)) == 5441);
  CHECK(param_count(FnnArchitecture::make(FnnVariant::DeepWide, 24)) == 4541);
  for (auto v : {FnnVariant::Base, FnnVariant::Deep, FnnVariant::Wide, FnnVariant::DeepWide})
    for (std::size_t in : {9, 24, 33, 43}) {
      const auto a = FnnArchitecture::make(v, in);
      CHECK(a.parameter_count() == dense_count(a.sizes));
      CHECK(a.sizes.back() == 1);
      CHECK(a.input_dim() == in);
    }
  CHECK(FnnArchitecture::make(FnnVariant::Wide, 33).sizes == std::vector<std::size_t>{33, 100, 1});
  CHECK_THROWS_AS(FnnArchitecture::custom({3, 4}), Error);
}

TEST_CASE("trained model reports the architecture count") {
  Rng rng(1);
  const Matrix X = random_matrix(rng, 30, 33);
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK(train_fnn(FnnVariant::DeepWide, X, random_vector(rng, 30), cfg).parameter_count() == 5441);
}

TEST_CASE("backprop matches central differences") {
  Rng rng(77);
  for (auto v : {FnnVariant::Base, FnnVariant::Deep, FnnVariant::Wide, FnnVariant::DeepWide}) {
    const auto arch = FnnArchitecture::make(v, 6);
    const Matrix X = random_matrix(rng, 8, 6);
    const Vector y = random_vector(rng, 8);
    for (int point = 0; point < 5; ++point) {
      std::vector<double> p(arch.parameter_count());
      for (auto& w : p) w = rng.uniform(-1, 1);
      const double err = gradient_error(arch, p, X, y);
      INFO(fnn_variant_name(v) << " point " << point);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("layer offsets tile the parameter vector") {
  const auto a = FnnArchitecture::make(FnnVariant::DeepWide, 5);
  std::size_t expect = 0;
  for (std::size_t l = 0; l < a.layers(); ++l) {
    CHECK(a.weight_offset(l) == expect);
    expect = a.bias_offset(l) + a.sizes[l + 1];
  }
  CHECK(expect == a.parameter_count());
}

TEST_CASE("forward pass of a hand-built network") {
  // 1 -> 1 -> 1: out = w2 * sigmoid(w1 x + b1) + b2
  const auto a = FnnArchitecture::custom({1, 1, 1});
  const std::vector<double> p{2.0, -1.0, 3.0, 0.5};
  const std::vector<double> x{0.5};
  CHECK(fnn_forward(a, p, x) == doctest::Approx(3.0 * 0.5 + 0.5));
}

TEST_CASE("batch forward is identical serial and parallel") {
  Rng rng(3);
  const auto a = FnnArchitecture::make(FnnVariant::Wide, 10);
  const Matrix X = random_matrix(rng, 200, 10);
  TrainConfig cfg;
  const auto p = fnn_initialize(a, cfg);
  CHECK(fnn_forward_batch(a, p, X, Exec::Serial) == fnn_forward_batch(a, p, X, Exec::Parallel));
}

TEST_CASE("initialization is seeded and bounded") {
  const auto a = FnnArchitecture::make(FnnVariant::Deep, 16);
  TrainConfig c1, c2;
  c2.seed = 1;
  const auto p1 = fnn_initialize(a, c1), p1b = fnn_initialize(a, c1), p2 = fnn_initialize(a, c2);
  CHECK(p1 == p1b);
  CHECK(p1 != p2);
  for (std::size_t l = 0; l < a.layers(); ++l) {
    const double s = 1.0 / std::sqrt(static_cast<double>(a.sizes[l]));
    for (std::size_t i = a.weight_offset(l); i < a.bias_offset(l) + a.sizes[l + 1]; ++i) CHECK(std::abs(p1[i]) <= s);
  }
}

TEST_CASE("Adam minimizes a quadratic") {
  std::vector<double> x{3.0, -2.0};
  AdamState st(2, {0.05});
  for (int i = 0; i < 2000; ++i) {
    const std::vector<double> g{2 * x[0], 2 * x[1]};
    st.step(x, g);
  }
  CHECK(std::abs(x[0]) < 1e-2);
  CHECK(std::abs(x[1]) < 1e-2);
}

TEST_CASE("training lowers the loss and is reproducible") {
  Rng rng(4);
  const Matrix X = random_matrix(rng, 256, 4);
  const Vector y = X.col(0) * 0.5 - X.col(1) * 0.2;
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch = 32;
  cfg.learning_rate = 1e-2;
  cfg.seed = 9;
  const auto m = train_fnn(FnnVariant::Base, X, y, cfg);
  REQUIRE(m.loss_trace().size() == 60);
  CHECK(m.loss_trace().back() < 0.5 * m.loss_trace().front());
  const auto again = train_fnn(FnnVariant::Base, X, y, cfg);
  CHECK(again.params() == m.params());
}

TEST_CASE("zero epochs keep the initialization") {
  Rng rng(5);
  const Matrix X = random_matrix(rng, 20, 3);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto m = train_fnn(FnnVariant::Base, X, random_vector(rng, 20), cfg);
  CHECK(m.params() == fnn_initialize(m.architecture(), cfg));
  CHECK(m.loss_trace().empty());
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.batch = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.learning_rate = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("divergence is detected") {
  Rng rng(6);
  const Matrix X = random_matrix(rng, 64, 3) * 1e3;
  const Vector y = random_vector(rng, 64) * 1e200;
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.learning_rate = 1e3;
  CHECK_THROWS_AS(train_fnn_raw(FnnArchitecture::make(FnnVariant::Base, 3), X, y, cfg), Error);
}
