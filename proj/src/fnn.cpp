#include "finpred/fnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "finpred/error.hpp"
#include "finpred/random.hpp"

namespace finpred {

namespace {

using ConstMat = Eigen::Map<const Matrix>;
using ConstVec = Eigen::Map<const Vector>;

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

constexpr std::array<std::pair<FnnVariant, std::string_view>, 5> kVariantNames = {{
    {FnnVariant::Base, "base"},
    {FnnVariant::Deep, "deep"},
    {FnnVariant::Wide, "wide"},
    {FnnVariant::DeepWide, "deep_wide"},
    {FnnVariant::Custom, "custom"},
}};

}  // namespace

std::string_view fnn_variant_name(FnnVariant v) {
  for (const auto& [k, name] : kVariantNames)
    if (k == v) return name;
  return "?";
}

FnnVariant fnn_variant_from_name(std::string_view name) {
  for (const auto& [k, n] : kVariantNames)
    if (n == name) return k;
  throw Error(ErrorCode::InvalidInput, "unknown network variant '" + std::string(name) + "'", {"variant"});
}

FnnArchitecture FnnArchitecture::make(FnnVariant v, std::size_t input_dim) {
  if (input_dim == 0) throw Error(ErrorCode::InvalidInput, "network needs at least one input", {"input_dim"});
  FnnArchitecture a;
  a.variant = v;
  switch (v) {
    case FnnVariant::Base: a.sizes = {input_dim, input_dim, 1}; break;
    case FnnVariant::Deep: a.sizes = {input_dim, input_dim, 20, 1}; break;
    case FnnVariant::Wide: a.sizes = {input_dim, 100, 1}; break;
    case FnnVariant::DeepWide: a.sizes = {input_dim, 100, 20, 1}; break;
    case FnnVariant::Custom: throw Error(ErrorCode::InvalidInput, "custom networks need explicit sizes");
  }
  return a;
}

FnnArchitecture FnnArchitecture::custom(std::vector<std::size_t> sizes) {
  if (sizes.size() < 2 || sizes.back() != 1 || std::find(sizes.begin(), sizes.end(), 0) != sizes.end())
    throw Error(ErrorCode::InvalidInput, "layer sizes must be positive and end in 1", {"sizes"});
  return {FnnVariant::Custom, std::move(sizes)};
}

std::size_t FnnArchitecture::parameter_count() const { return weight_offset(layers()); }

std::size_t FnnArchitecture::weight_offset(std::size_t l) const {
  std::size_t off = 0;
  for (std::size_t i = 0; i < l; ++i) off += (sizes[i] + 1) * sizes[i + 1];
  return off;
}

std::size_t param_count(const FnnArchitecture& arch) { return arch.parameter_count(); }

double fnn_forward(const FnnArchitecture& arch, std::span<const double> params, std::span<const double> x) {
  if (x.size() != arch.input_dim())
    throw Error(ErrorCode::DimensionMismatch,
                "network expects " + std::to_string(arch.input_dim()) + " inputs, got " + std::to_string(x.size()));
  if (params.size() != arch.parameter_count())
    throw Error(ErrorCode::DimensionMismatch, "parameter vector has the wrong length");
  Vector a = ConstVec(x.data(), static_cast<Eigen::Index>(x.size()));
  for (std::size_t l = 0; l < arch.layers(); ++l) {
    const auto n_in = static_cast<Eigen::Index>(arch.sizes[l]), n_out = static_cast<Eigen::Index>(arch.sizes[l + 1]);
    ConstMat W(params.data() + arch.weight_offset(l), n_out, n_in);
    ConstVec b(params.data() + arch.bias_offset(l), n_out);
    Vector z = W * a + b;
    if (l + 1 < arch.layers()) z = z.unaryExpr(&sigmoid);
    a = std::move(z);
  }
  return a[0];
}

Vector fnn_forward_batch(const FnnArchitecture& arch, std::span<const double> params, const Matrix& X, Exec exec) {
  if (static_cast<std::size_t>(X.cols()) != arch.input_dim())
    throw Error(ErrorCode::DimensionMismatch, "batch width does not match network input");
  const auto n = static_cast<std::int64_t>(X.rows());
  const auto p = static_cast<std::size_t>(X.cols());
  Vector out(X.rows());
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) out[i] = fnn_forward(arch, params, {X.row(i).data(), p});
  } else {
    for (std::int64_t i = 0; i < n; ++i) out[i] = fnn_forward(arch, params, {X.row(i).data(), p});
  }
  return out;
}

double fnn_loss(const FnnArchitecture& arch, std::span<const double> params, const Matrix& X, const Vector& y) {
  if (X.rows() != y.size() || X.rows() == 0) throw Error(ErrorCode::DimensionMismatch, "batch and targets disagree");
  return (fnn_forward_batch(arch, params, X) - y).squaredNorm() / static_cast<double>(y.size());
}

double fnn_gradients(const FnnArchitecture& arch, std::span<const double> params, const Matrix& X, const Vector& y,
                     std::span<double> grad) {
  if (X.rows() != y.size() || X.rows() == 0) throw Error(ErrorCode::DimensionMismatch, "batch and targets disagree");
  if (static_cast<std::size_t>(X.cols()) != arch.input_dim())
    throw Error(ErrorCode::DimensionMismatch, "batch width does not match network input");
  if (params.size() != arch.parameter_count() || grad.size() != params.size())
    throw Error(ErrorCode::DimensionMismatch, "parameter or gradient vector has the wrong length");
  const std::size_t L = arch.layers();
  const double m = static_cast<double>(X.rows());

  // activations[l] is rows x sizes[l]
  std::vector<Eigen::MatrixXd> act(L + 1);
  act[0] = X;
  for (std::size_t l = 0; l < L; ++l) {
    const auto n_in = static_cast<Eigen::Index>(arch.sizes[l]), n_out = static_cast<Eigen::Index>(arch.sizes[l + 1]);
    ConstMat W(params.data() + arch.weight_offset(l), n_out, n_in);
    ConstVec b(params.data() + arch.bias_offset(l), n_out);
    Eigen::MatrixXd z = act[l] * W.transpose();
    z.rowwise() += b.transpose();
    if (l + 1 < L) z = z.unaryExpr(&sigmoid);
    act[l + 1] = std::move(z);
  }
  const Vector r = act[L].col(0) - y;
  const double loss = r.squaredNorm() / m;

  Eigen::MatrixXd delta = (2.0 / m) * r;  // rows x 1
  for (std::size_t l = L; l-- > 0;) {
    const auto n_in = static_cast<Eigen::Index>(arch.sizes[l]), n_out = static_cast<Eigen::Index>(arch.sizes[l + 1]);
    Eigen::Map<Matrix> gW(grad.data() + arch.weight_offset(l), n_out, n_in);
    Eigen::Map<Vector> gb(grad.data() + arch.bias_offset(l), n_out);
    gW = delta.transpose() * act[l];
    gb = delta.colwise().sum().transpose();
    if (l == 0) break;
    ConstMat W(params.data() + arch.weight_offset(l), n_out, n_in);
    Eigen::MatrixXd back = delta * W;
    delta = back.array() * act[l].array() * (1.0 - act[l].array());
  }
  return loss;
}

void AdamState::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m.size() || grad.size() != m.size())
    throw Error(ErrorCode::DimensionMismatch, "optimizer state does not match parameter count");
  ++t;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * grad[i];
    v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
    params[i] -= hyper.alpha * (m[i] / c1) / (std::sqrt(v[i] / c2) + hyper.eps);
  }
}

void TrainConfig::validate() const {
  if (batch < 1) throw Error(ErrorCode::InvalidInput, "batch must be >= 1", {"batch"});
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidInput, "learning_rate must be > 0", {"learning_rate"});
  if (!(init_scale >= 0.0)) throw Error(ErrorCode::InvalidInput, "init_scale must be >= 0", {"init_scale"});
}

std::vector<double> fnn_initialize(const FnnArchitecture& arch, const TrainConfig& config) {
  std::vector<double> params(arch.parameter_count());
  auto rng = Rng::stream(config.seed, "fnn/init");
  for (std::size_t l = 0; l < arch.layers(); ++l) {
    const double s = config.init_scale > 0.0 ? config.init_scale : 1.0 / std::sqrt(static_cast<double>(arch.sizes[l]));
    for (std::size_t i = arch.weight_offset(l); i < arch.weight_offset(l + 1); ++i) params[i] = rng.uniform(-s, s);
  }
  return params;
}

FnnTrainResult train_fnn_raw(const FnnArchitecture& arch, const Matrix& X, const Vector& y, const TrainConfig& config) {
  config.validate();
  if (X.rows() != y.size() || X.rows() == 0) throw Error(ErrorCode::DimensionMismatch, "training rows and targets disagree");
  if (static_cast<std::size_t>(X.cols()) != arch.input_dim())
    throw Error(ErrorCode::DimensionMismatch, "training width does not match network input");
  FnnTrainResult result;
  result.params = fnn_initialize(arch, config);
  AdamState adam(result.params.size(), AdamHyper{config.learning_rate});
  std::vector<double> grad(result.params.size());
  auto rng = Rng::stream(config.seed, "fnn/shuffle");
  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(config.batch, n - start));
      const double loss = fnn_gradients(arch, result.params, take_rows(X, rows), take_rows(y, rows), grad);
      if (!std::isfinite(loss))
        throw Error(ErrorCode::DivergedLoss, "loss became non-finite in epoch " + std::to_string(epoch + 1));
      adam.step(result.params, grad);
      total += loss;
      ++batches;
    }
    result.loss_trace.push_back(total / static_cast<double>(batches));
  }
  return result;
}

FnnModel::FnnModel(FnnArchitecture arch, Normalizer scaler, std::vector<double> params, std::vector<double> loss_trace,
                   TrainConfig config)
    : arch_(std::move(arch)),
      scaler_(std::move(scaler)),
      params_(std::move(params)),
      loss_trace_(std::move(loss_trace)),
      config_(config) {
  if (params_.size() != arch_.parameter_count())
    throw Error(ErrorCode::DimensionMismatch, "parameter blob does not match the architecture");
  if (scaler_.size() != arch_.input_dim())
    throw Error(ErrorCode::DimensionMismatch, "scaler width does not match the architecture");
}

double FnnModel::predict_one(std::span<const double> x) const {
  check_dim(x.size());
  const auto z = scaler_.apply(x);
  return fnn_forward(arch_, params_, z);
}

Vector FnnModel::predict(const Matrix& X, Exec exec) const {
  check_dim(static_cast<std::size_t>(X.cols()));
  Matrix Z(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto z = scaler_.apply({X.row(i).data(), static_cast<std::size_t>(X.cols())});
    std::copy(z.begin(), z.end(), Z.row(i).data());
  }
  return fnn_forward_batch(arch_, params_, Z, exec);
}

nlohmann::ordered_json FnnModel::to_json() const {
  nlohmann::ordered_json j;
  j["family"] = family();
  j["architecture"] = fnn_variant_name(arch_.variant);
  j["sizes"] = arch_.sizes;
  nlohmann::ordered_json bounds = nlohmann::ordered_json::array();
  for (const auto& b : scaler_.bounds()) bounds.push_back({b.min, b.max});
  j["scaler"] = std::move(bounds);
  j["train"] = {{"epochs", config_.epochs},
                {"batch", config_.batch},
                {"seed", config_.seed},
                {"learning_rate", config_.learning_rate},
                {"init_scale", config_.init_scale},
                {"beta1", AdamHyper{}.beta1},
                {"beta2", AdamHyper{}.beta2},
                {"eps_adam", AdamHyper{}.eps}};
  j["params"] = params_;
  j["loss_trace"] = loss_trace_;
  return j;
}

FnnModel FnnModel::from_json(const nlohmann::json& j) {
  FnnArchitecture arch;
  arch.sizes = j.at("sizes").get<std::vector<std::size_t>>();
  arch.variant = fnn_variant_from_name(j.at("architecture").get<std::string>());
  if (arch.sizes.size() < 2) throw Error(ErrorCode::ParseError, "network artifact: bad sizes");
  std::vector<Normalizer::Bounds> bounds;
  for (const auto& b : j.at("scaler")) bounds.push_back({b.at(0).get<double>(), b.at(1).get<double>()});
  TrainConfig cfg;
  const auto& t = j.at("train");
  cfg.epochs = t.at("epochs").get<std::size_t>();
  cfg.batch = t.at("batch").get<std::size_t>();
  cfg.seed = t.at("seed").get<std::uint64_t>();
  cfg.learning_rate = t.at("learning_rate").get<double>();
  cfg.init_scale = t.at("init_scale").get<double>();
  return FnnModel(std::move(arch), Normalizer(std::move(bounds)), j.at("params").get<std::vector<double>>(),
                  j.at("loss_trace").get<std::vector<double>>(), cfg);
}

FnnModel train_fnn(FnnVariant variant, const Matrix& X, const Vector& y, const TrainConfig& config) {
  if (X.rows() == 0) throw Error(ErrorCode::InvalidInput, "no training rows");
  if (!X.allFinite() || !y.allFinite()) throw Error(ErrorCode::InvalidInput, "non-finite training data");
  const auto arch = FnnArchitecture::make(variant, static_cast<std::size_t>(X.cols()));
  std::vector<Normalizer::Bounds> bounds(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index j = 0; j < X.cols(); ++j) bounds[static_cast<std::size_t>(j)] = {X.col(j).minCoeff(), X.col(j).maxCoeff()};
  Normalizer scaler(std::move(bounds));
  Matrix Z(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto z = scaler.apply({X.row(i).data(), static_cast<std::size_t>(X.cols())});
    std::copy(z.begin(), z.end(), Z.row(i).data());
  }
  auto trained = train_fnn_raw(arch, Z, y, config);
  return FnnModel(arch, std::move(scaler), std::move(trained.params), std::move(trained.loss_trace), config);
}

}  // namespace finpred
