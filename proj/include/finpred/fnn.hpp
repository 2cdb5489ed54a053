#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "finpred/ratios.hpp"
#include "finpred/regressors.hpp"

namespace finpred {

enum class FnnVariant { Base, Deep, Wide, DeepWide, Custom };

std::string_view fnn_variant_name(FnnVariant v);
FnnVariant fnn_variant_from_name(std::string_view name);

/// Layer widths from input to the single linear output.
struct FnnArchitecture {
  FnnVariant variant = FnnVariant::Base;
  std::vector<std::size_t> sizes;

  static FnnArchitecture make(FnnVariant v, std::size_t input_dim);
  static FnnArchitecture custom(std::vector<std::size_t> sizes);

  std::size_t input_dim() const { return sizes.front(); }
  std::size_t layers() const { return sizes.size() - 1; }
  /// Sum over consecutive widths of (n_in + 1) * n_out.
  std::size_t parameter_count() const;
  /// Offset of layer l's weight block (row-major n_out x n_in, then n_out biases).
  std::size_t weight_offset(std::size_t l) const;
  std::size_t bias_offset(std::size_t l) const { return weight_offset(l) + sizes[l] * sizes[l + 1]; }
};

std::size_t param_count(const FnnArchitecture& arch);

/// Sigmoid hidden layers, affine output.
double fnn_forward(const FnnArchitecture& arch, std::span<const double> params, std::span<const double> x);
Vector fnn_forward_batch(const FnnArchitecture& arch, std::span<const double> params, const Matrix& X,
                         Exec exec = Exec::Serial);

/// (1/m) sum (f(x_i) - y_i)^2
double fnn_loss(const FnnArchitecture& arch, std::span<const double> params, const Matrix& X, const Vector& y);

/// Backpropagated gradient of fnn_loss; returns the loss.
double fnn_gradients(const FnnArchitecture& arch, std::span<const double> params, const Matrix& X, const Vector& y,
                     std::span<double> grad);

struct AdamHyper {
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  std::vector<double> m, v;
  std::uint64_t t = 0;

  explicit AdamState(std::size_t n, AdamHyper h = {}) : hyper(h), m(n, 0.0), v(n, 0.0) {}
  void step(std::span<double> params, std::span<const double> grad);
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  double init_scale = 0.0;  // 0 = 1/sqrt(n_in) per layer

  void validate() const;
};

/// Uniform(-s, s) initialization from the seed's "fnn/init" stream.
std::vector<double> fnn_initialize(const FnnArchitecture& arch, const TrainConfig& config);

struct FnnTrainResult {
  std::vector<double> params;
  std::vector<double> loss_trace;  // mean batch loss per epoch
};

/// Mini-batch Adam on already-scaled inputs. Throws DivergedLoss.
FnnTrainResult train_fnn_raw(const FnnArchitecture& arch, const Matrix& X, const Vector& y, const TrainConfig& config);

class FnnModel final : public Model {
 public:
  FnnModel(FnnArchitecture arch, Normalizer scaler, std::vector<double> params, std::vector<double> loss_trace,
           TrainConfig config);

  std::string family() const override { return "fnn"; }
  std::size_t input_dim() const override { return arch_.input_dim(); }
  std::size_t parameter_count() const override { return params_.size(); }
  double predict_one(std::span<const double> x) const override;
  Vector predict(const Matrix& X, Exec exec = Exec::Serial) const override;
  nlohmann::ordered_json to_json() const override;
  static FnnModel from_json(const nlohmann::json& j);

  const FnnArchitecture& architecture() const { return arch_; }
  const std::vector<double>& params() const { return params_; }
  const std::vector<double>& loss_trace() const { return loss_trace_; }

 private:
  FnnArchitecture arch_;
  Normalizer scaler_;
  std::vector<double> params_;
  std::vector<double> loss_trace_;
  TrainConfig config_;
};

/// Min-max scales X with a normalizer fitted on these rows (constant
/// columns map to 0), then trains.
FnnModel train_fnn(FnnVariant variant, const Matrix& X, const Vector& y, const TrainConfig& config);

}  // namespace finpred
