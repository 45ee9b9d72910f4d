#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace lpimpute::nn {

enum class Activation { None, Relu, Sigmoid };
enum class Mode { Train, Infer };

/// Stride-1 convolution with same-padding, followed by optional batch norm,
/// an activation, and optional (inverted) dropout, in that order.
struct ConvLayerSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  Activation activation = Activation::Relu;
  bool use_batchnorm = false;
  double dropout_rate = 0.0;

  std::size_t fan_in() const { return in_channels * kernel_h * kernel_w; }
  bool operator==(const ConvLayerSpec&) const = default;
};

struct NetSpec {
  std::size_t input_channels = 1;
  std::vector<ConvLayerSpec> hidden;
  ConvLayerSpec output;
  std::size_t rows = 1;  // N (questions)
  std::size_t cols = 1;  // M (attempts)

  /// hidden followed by output.
  std::vector<ConvLayerSpec> layers() const;
  /// Throws std::invalid_argument on an inconsistent channel chain or an
  /// output layer that is not single-channel sigmoid.
  void validate() const;

  /// Five 3x3 hidden layers (16, 32, 32, 16, 16 channels) with batch norm,
  /// ReLU and dropout, then a 1x1 sigmoid output layer.
  static NetSpec standard(std::size_t input_channels, std::size_t rows, std::size_t cols,
                          double dropout_rate = 0.1);

  bool operator==(const NetSpec&) const = default;
};

struct LayerParams {
  Eigen::MatrixXd weight;  // out x (in * kh * kw), column index (ic * kh + ky) * kw + kx
  Eigen::VectorXd bias;
  Eigen::VectorXd bn_scale;  // empty when the layer has no batch norm
  Eigen::VectorXd bn_shift;
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;

  bool operator==(const LayerParams& o) const;
};

struct NetParams {
  std::vector<LayerParams> layers;

  bool operator==(const NetParams&) const = default;
};

/// Weights ~ Normal(0, 1/fan_in), zero biases, unit batch-norm scale, zero shift.
NetParams init_params(const NetSpec& spec, std::uint64_t seed);

/// Same shapes as `params`, all zeros (running statistics included).
NetParams zeros_like(const NetParams& params);

/// Trainable arrays (weight, bias, bn_scale, bn_shift per layer) as flat spans.
std::vector<std::span<double>> trainable_arrays(NetParams& params);
std::vector<std::span<const double>> trainable_arrays(const NetParams& params);

/// batch x channels x rows x cols, row-major.
struct Batch {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Batch() = default;
  Batch(std::size_t b, std::size_t c, std::size_t r, std::size_t w, double fill = 0.0)
      : batch(b), channels(c), rows(r), cols(w), data(b * c * r * w, fill) {}

  std::size_t index(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return ((b * channels + c) * rows + y) * cols + x;
  }
  double& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) { return data[index(b, c, y, x)]; }
  double at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const { return data[index(b, c, y, x)]; }
};

struct LayerTape {
  Eigen::MatrixXd columns;     // im2col of the layer input
  Eigen::MatrixXd normalized;  // batch-norm x-hat (train mode, BN layers)
  Eigen::VectorXd inv_std;
  Eigen::VectorXd batch_mean;
  Eigen::VectorXd batch_var;
  Eigen::MatrixXd pre_activation;
  Eigen::MatrixXd activated;
  Eigen::MatrixXd dropout_mask;  // already scaled by 1/(1-rate); empty if no dropout
};

struct Tape {
  Mode mode = Mode::Infer;
  std::size_t batch = 0;
  std::vector<LayerTape> layers;
};

struct ForwardResult {
  Batch output;  // batch x 1 x rows x cols, values in (0,1)
  Tape tape;
};

/// Run the network. Train mode uses batch statistics and draws dropout masks
/// from `dropout_seed`; infer mode uses running statistics and no dropout.
/// Never mutates `params`. Throws NumericalError naming the layer if an
/// activation becomes non-finite.
ForwardResult forward(const NetSpec& spec, const NetParams& params, const Batch& input, Mode mode,
                      std::uint64_t dropout_seed = 0);

struct Gradients {
  NetParams params;  // running statistics entries are zero
  Batch input;       // d loss / d input
};

/// Reverse pass through a train-mode tape given d loss / d output
/// (batch x 1 x rows x cols).
Gradients backward(const NetSpec& spec, const NetParams& params, const Tape& tape, const Batch& output_grad);

/// Exponential moving update of batch-norm running statistics from a
/// train-mode tape (unbiased batch variance).
void update_running_stats(const NetSpec& spec, NetParams& params, const Tape& tape, double momentum = 0.1);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  NetParams first_moment;
  NetParams second_moment;

  static AdamState init(const NetParams& params, AdamConfig config);
};

/// One bias-corrected Adam update of every trainable array.
void adam_step(NetParams& params, const NetParams& grads, AdamState& state);

}  // namespace lpimpute::nn
