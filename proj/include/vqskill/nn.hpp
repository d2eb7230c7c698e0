#pragma once

// Small fully connected networks with hand-written reverse mode, the
// Gaussian likelihood head and the optimizer used to train them.
//
// Batched calls take one sample per column.

#include "vqskill/dataset.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace vqskill::nn {

enum class Activation { relu, identity };

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation activation = Activation::relu;
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  [[nodiscard]] int in_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
  [[nodiscard]] int out_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }
  /// Throws ShapeError unless consecutive layer shapes chain.
  void check() const;
  [[nodiscard]] std::size_t parameter_count() const;
};

/// Same layout as MlpParams: weight and bias gradients per layer.
struct MlpGradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;

  static MlpGradients zeros_like(const MlpParams& p);
};

struct MlpCache {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> pre_activations;
};

struct MlpForward {
  Eigen::MatrixXd output;
  MlpCache cache;
};

struct MlpBackward {
  MlpGradients grads;
  Eigen::MatrixXd dx;
};

/// Builds a network with the given layer widths. Hidden layers use `hidden`,
/// the last layer uses `output`. Relu layers are He-uniform; identity layers
/// are LeCun-uniform times `output_gain`. Biases start at zero.
MlpParams make_mlp(std::span<const int> widths, Activation hidden, Activation output, Rng& rng,
                   double output_gain = 1.0);

MlpForward mlp_forward(const MlpParams& p, const Eigen::MatrixXd& x);
Eigen::VectorXd mlp_apply(const MlpParams& p, const Eigen::VectorXd& x);

/// Reverse pass. Parameter gradients are summed over the batch columns.
/// With `want_param_grads` false only dx is computed.
MlpBackward mlp_backward(const MlpParams& p, const MlpCache& cache, const Eigen::MatrixXd& dy,
                         bool want_param_grads = true);

struct GaussianPrediction {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;
};

struct NllResult {
  double loss = 0.0;
  Eigen::VectorXd dmu;
  Eigen::VectorXd dsigma;
};

/// Negative log density of `target` under N(mu, diag(sigma^2)), summed over
/// channels, with analytic gradients.
NllResult gaussian_nll(const GaussianPrediction& pred, const Eigen::VectorXd& target);

inline constexpr double kSigmaFloor = 1e-6;

/// log(1 + exp(raw)) + 1e-6, computed without overflow.
Eigen::ArrayXXd softplus_positive(const Eigen::ArrayXXd& raw);
/// d softplus / d raw, i.e. the logistic sigmoid.
Eigen::ArrayXXd softplus_derivative(const Eigen::ArrayXXd& raw);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;

  static AdamState for_blocks(std::span<const std::span<double>> params);
};

/// One bias-corrected Adam update over matching parameter/gradient blocks.
void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               AdamState& st, const AdamConfig& cfg);

/// Rescales all blocks jointly when their global L2 norm exceeds max_norm.
/// Returns the norm measured before clipping.
double clip_global_norm(std::span<const std::span<double>> grads, double max_norm);

std::vector<std::span<double>> parameter_blocks(MlpParams& p);
std::vector<std::span<double>> gradient_blocks(MlpGradients& g);

}  // namespace vqskill::nn
