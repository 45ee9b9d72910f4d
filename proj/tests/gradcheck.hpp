#pragma once

// Central-difference gradient checks of the conv network against its tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lpimpute/neural.hpp"
#include "lpimpute/random.hpp"

namespace lpimpute::check {

enum class LayerKind { Conv, Relu, Sigmoid, BatchNorm, Dropout, Standard };

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Standard: return "standard-net";
  }
  return "?";
}

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // ReLU inputs that crossed zero inside the stencil
  double max_rel_error = 0.0;
};

/// |a - n| / max(|a|, |n|), with the denominator floored at `floor` so that
/// gradients that are zero analytically compare against rounding noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradInstance {
  nn::NetSpec spec;
  nn::NetParams params;
  nn::Batch input;
  nn::Batch weights;  // loss = sum(weights * output)
  std::uint64_t dropout_seed = 0;
};

/// One random instance: the layer under test followed by a 1x1 sigmoid output
/// layer, or the full standard network.
inline GradInstance make_instance(LayerKind kind, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> small(2, 4);
  std::uniform_int_distribution<std::size_t> chans(1, 3);
  std::normal_distribution<double> normal(0.0, 1.0);

  GradInstance g;
  const std::size_t batch = small(rng), rows = small(rng), cols = small(rng), in = chans(rng);
  if (kind == LayerKind::Standard) {
    g.spec = nn::NetSpec::standard(in, rows, cols, 0.2);
  } else {
    nn::ConvLayerSpec layer;
    layer.in_channels = in;
    layer.out_channels = chans(rng);
    const bool wide = rng() % 2 == 0;
    layer.kernel_h = wide ? 3 : 1;
    layer.kernel_w = wide ? 3 : 1;
    layer.activation = kind == LayerKind::Relu      ? nn::Activation::Relu
                       : kind == LayerKind::Sigmoid ? nn::Activation::Sigmoid
                                                    : nn::Activation::None;
    layer.use_batchnorm = kind == LayerKind::BatchNorm;
    layer.dropout_rate = kind == LayerKind::Dropout ? 0.3 : 0.0;
    g.spec.input_channels = in;
    g.spec.rows = rows;
    g.spec.cols = cols;
    g.spec.hidden = {layer};
    g.spec.output = nn::ConvLayerSpec{layer.out_channels, 1, 1, 1, nn::Activation::Sigmoid, false, 0.0};
  }
  g.params = nn::init_params(g.spec, derive_seed(seed, 1));
  for (auto& l : g.params.layers) {
    for (auto& b : l.bias) b = 0.3 * normal(rng);
    for (auto& s : l.bn_scale) s = 1.0 + 0.3 * normal(rng);
    for (auto& s : l.bn_shift) s = 0.3 * normal(rng);
  }
  g.input = nn::Batch(batch, in, rows, cols);
  for (auto& v : g.input.data) v = normal(rng);
  g.weights = nn::Batch(batch, 1, rows, cols);
  for (auto& v : g.weights.data) v = normal(rng);
  g.dropout_seed = derive_seed(seed, 2);
  return g;
}

inline double instance_loss(const GradInstance& g, const nn::ForwardResult& f) {
  double s = 0.0;
  for (std::size_t k = 0; k < f.output.data.size(); ++k) s += g.weights.data[k] * f.output.data[k];
  return s;
}

/// True when any ReLU unit is on a different side of zero than in `base`.
inline bool relu_pattern_changed(const nn::NetSpec& spec, const nn::Tape& base, const nn::Tape& other) {
  const auto layers = spec.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].activation != nn::Activation::Relu) continue;
    const auto& a = base.layers[l].pre_activation;
    const auto& b = other.layers[l].pre_activation;
    for (Eigen::Index k = 0; k < a.size(); ++k)
      if ((a.data()[k] > 0.0) != (b.data()[k] > 0.0)) return true;
  }
  return false;
}

/// Compare every parameter and input gradient with central differences.
inline GradCheckResult check_instance(const GradInstance& inst, double step = 1e-3) {
  GradCheckResult r;
  auto g = inst;
  const auto base = nn::forward(g.spec, g.params, g.input, nn::Mode::Train, g.dropout_seed);
  const auto grads = nn::backward(g.spec, g.params, base.tape, g.weights);

  // Five-point central stencil: (f(-2h) - 8 f(-h) + 8 f(h) - f(2h)) / 12h.
  auto probe = [&](double& slot, double analytic) {
    const double saved = slot;
    double f[4];
    bool kink = false;
    const double offsets[4] = {-2.0, -1.0, 1.0, 2.0};
    for (int k = 0; k < 4; ++k) {
      slot = saved + offsets[k] * step;
      const auto run = nn::forward(g.spec, g.params, g.input, nn::Mode::Train, g.dropout_seed);
      kink = kink || relu_pattern_changed(g.spec, base.tape, run.tape);
      f[k] = instance_loss(g, run);
    }
    slot = saved;
    if (kink) {
      ++r.skipped_kinks;
      return;
    }
    const double numeric = (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * step);
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric));
    ++r.checked;
  };

  auto params = nn::trainable_arrays(g.params);
  const auto analytic = nn::trainable_arrays(grads.params);
  for (std::size_t a = 0; a < params.size(); ++a)
    for (std::size_t k = 0; k < params[a].size(); ++k) probe(params[a][k], analytic[a][k]);
  for (std::size_t k = 0; k < g.input.data.size(); ++k) probe(g.input.data[k], grads.input.data[k]);
  return r;
}

}  // namespace lpimpute::check
