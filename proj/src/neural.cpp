#include "lpimpute/neural.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "lpimpute/error.hpp"
#include "lpimpute/random.hpp"

namespace lpimpute::nn {

namespace {

constexpr double kBatchNormEps = 1e-5;

// Activations are held as (pixels x channels) matrices, pixel index
// p = (b * rows + y) * cols + x, so each channel is one contiguous column.
using Activations = Eigen::MatrixXd;

Activations to_activations(const Batch& in) {
  const auto pixels = in.batch * in.rows * in.cols;
  Activations a(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(in.channels));
  const auto hw = in.rows * in.cols;
  for (std::size_t b = 0; b < in.batch; ++b)
    for (std::size_t c = 0; c < in.channels; ++c)
      for (std::size_t k = 0; k < hw; ++k)
        a(static_cast<Eigen::Index>(b * hw + k), static_cast<Eigen::Index>(c)) = in.data[(b * in.channels + c) * hw + k];
  return a;
}

Batch from_activations(const Activations& a, std::size_t batch, std::size_t rows, std::size_t cols) {
  Batch out(batch, static_cast<std::size_t>(a.cols()), rows, cols);
  const auto hw = rows * cols;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < out.channels; ++c)
      for (std::size_t k = 0; k < hw; ++k)
        out.data[(b * out.channels + c) * hw + k] = a(static_cast<Eigen::Index>(b * hw + k), static_cast<Eigen::Index>(c));
  return out;
}

struct Geometry {
  std::size_t batch, rows, cols;
  std::size_t pixels() const { return batch * rows * cols; }
};

// (pixels x in*kh*kw); column (c*kh + ky)*kw + kx holds input channel c shifted by (ky,kx).
Eigen::MatrixXd im2col(const Activations& act, const Geometry& g, const ConvLayerSpec& layer) {
  const auto kh = layer.kernel_h, kw = layer.kernel_w;
  const auto ph = static_cast<long>((kh - 1) / 2), pw = static_cast<long>((kw - 1) / 2);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g.pixels()),
                                              static_cast<Eigen::Index>(layer.fan_in()));
  const long rows = static_cast<long>(g.rows), cols = static_cast<long>(g.cols);
  for (std::size_t c = 0; c < layer.in_channels; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const auto col = static_cast<Eigen::Index>((c * kh + ky) * kw + kx);
        const long dy = static_cast<long>(ky) - ph, dx = static_cast<long>(kx) - pw;
        const double* src = act.col(static_cast<Eigen::Index>(c)).data();
        double* dst = out.col(col).data();
        for (long b = 0; b < static_cast<long>(g.batch); ++b)
          for (long y = 0; y < rows; ++y) {
            const long sy = y + dy;
            if (sy < 0 || sy >= rows) continue;
            const long x0 = std::max(0L, -dx), x1 = std::min(cols, cols - dx);
            const long dst_base = (b * rows + y) * cols;
            const long src_base = (b * rows + sy) * cols + dx;
            for (long x = x0; x < x1; ++x) dst[dst_base + x] = src[src_base + x];
          }
      }
  return out;
}

Activations col2im(const Eigen::MatrixXd& dcols, const Geometry& g, const ConvLayerSpec& layer) {
  const auto kh = layer.kernel_h, kw = layer.kernel_w;
  const auto ph = static_cast<long>((kh - 1) / 2), pw = static_cast<long>((kw - 1) / 2);
  Activations out = Activations::Zero(static_cast<Eigen::Index>(g.pixels()),
                                      static_cast<Eigen::Index>(layer.in_channels));
  const long rows = static_cast<long>(g.rows), cols = static_cast<long>(g.cols);
  for (std::size_t c = 0; c < layer.in_channels; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const auto col = static_cast<Eigen::Index>((c * kh + ky) * kw + kx);
        const long dy = static_cast<long>(ky) - ph, dx = static_cast<long>(kx) - pw;
        const double* src = dcols.col(col).data();
        double* dst = out.col(static_cast<Eigen::Index>(c)).data();
        for (long b = 0; b < static_cast<long>(g.batch); ++b)
          for (long y = 0; y < rows; ++y) {
            const long sy = y + dy;
            if (sy < 0 || sy >= rows) continue;
            const long x0 = std::max(0L, -dx), x1 = std::min(cols, cols - dx);
            const long src_base = (b * rows + y) * cols;
            const long dst_base = (b * rows + sy) * cols + dx;
            for (long x = x0; x < x1; ++x) dst[dst_base + x] += src[src_base + x];
          }
      }
  return out;
}

void check_layer_params(const ConvLayerSpec& s, const LayerParams& p, std::size_t l) {
  const bool ok = p.weight.rows() == static_cast<Eigen::Index>(s.out_channels) &&
                  p.weight.cols() == static_cast<Eigen::Index>(s.fan_in()) &&
                  p.bias.size() == static_cast<Eigen::Index>(s.out_channels) &&
                  (!s.use_batchnorm || (p.bn_scale.size() == static_cast<Eigen::Index>(s.out_channels) &&
                                        p.bn_shift.size() == p.bn_scale.size() &&
                                        p.running_mean.size() == p.bn_scale.size() &&
                                        p.running_var.size() == p.bn_scale.size()));
  if (!ok) throw std::invalid_argument("parameter shapes do not match spec at layer " + std::to_string(l));
}

}  // namespace

bool LayerParams::operator==(const LayerParams& o) const {
  auto same = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
  };
  return same(weight, o.weight) && same(bias, o.bias) && same(bn_scale, o.bn_scale) &&
         same(bn_shift, o.bn_shift) && same(running_mean, o.running_mean) && same(running_var, o.running_var);
}

std::vector<ConvLayerSpec> NetSpec::layers() const {
  auto out = hidden;
  out.push_back(output);
  return out;
}

void NetSpec::validate() const {
  if (input_channels == 0 || rows == 0 || cols == 0) throw std::invalid_argument("NetSpec: zero-sized input");
  std::size_t channels = input_channels;
  std::size_t l = 0;
  for (const auto& layer : layers()) {
    if (layer.in_channels != channels) {
      throw std::invalid_argument("NetSpec: channel chain broken at layer " + std::to_string(l));
    }
    if (layer.out_channels == 0 || layer.kernel_h == 0 || layer.kernel_w == 0) {
      throw std::invalid_argument("NetSpec: zero-sized layer " + std::to_string(l));
    }
    if (!(layer.dropout_rate >= 0.0 && layer.dropout_rate < 1.0)) {
      throw std::invalid_argument("NetSpec: dropout rate must lie in [0,1)");
    }
    channels = layer.out_channels;
    ++l;
  }
  if (output.out_channels != 1 || output.activation != Activation::Sigmoid) {
    throw std::invalid_argument("NetSpec: output layer must be single-channel sigmoid");
  }
}

NetSpec NetSpec::standard(std::size_t input_channels, std::size_t rows, std::size_t cols, double dropout_rate) {
  NetSpec spec;
  spec.input_channels = input_channels;
  spec.rows = rows;
  spec.cols = cols;
  std::size_t in = input_channels;
  for (std::size_t width : {16, 32, 32, 16, 16}) {
    spec.hidden.push_back({in, width, 3, 3, Activation::Relu, true, dropout_rate});
    in = width;
  }
  spec.output = {in, 1, 1, 1, Activation::Sigmoid, false, 0.0};
  spec.validate();
  return spec;
}

NetParams init_params(const NetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  NetParams params;
  for (const auto& layer : spec.layers()) {
    LayerParams p;
    const double scale = 1.0 / std::sqrt(static_cast<double>(layer.fan_in()));
    p.weight.resize(static_cast<Eigen::Index>(layer.out_channels), static_cast<Eigen::Index>(layer.fan_in()));
    for (Eigen::Index r = 0; r < p.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < p.weight.cols(); ++c) p.weight(r, c) = scale * normal(rng);
    const auto oc = static_cast<Eigen::Index>(layer.out_channels);
    p.bias = Eigen::VectorXd::Zero(oc);
    if (layer.use_batchnorm) {
      p.bn_scale = Eigen::VectorXd::Ones(oc);
      p.bn_shift = Eigen::VectorXd::Zero(oc);
      p.running_mean = Eigen::VectorXd::Zero(oc);
      p.running_var = Eigen::VectorXd::Ones(oc);
    }
    params.layers.push_back(std::move(p));
  }
  return params;
}

NetParams zeros_like(const NetParams& params) {
  NetParams out = params;
  for (auto& p : out.layers) {
    p.weight.setZero();
    p.bias.setZero();
    p.bn_scale.setZero();
    p.bn_shift.setZero();
    p.running_mean.setZero();
    p.running_var.setZero();
  }
  return out;
}

std::vector<std::span<double>> trainable_arrays(NetParams& params) {
  std::vector<std::span<double>> out;
  for (auto& p : params.layers) {
    for (auto* a : {&p.weight}) out.emplace_back(a->data(), static_cast<std::size_t>(a->size()));
    for (auto* v : {&p.bias, &p.bn_scale, &p.bn_shift}) out.emplace_back(v->data(), static_cast<std::size_t>(v->size()));
  }
  return out;
}

std::vector<std::span<const double>> trainable_arrays(const NetParams& params) {
  std::vector<std::span<const double>> out;
  for (const auto& p : params.layers) {
    out.emplace_back(p.weight.data(), static_cast<std::size_t>(p.weight.size()));
    for (const auto* v : {&p.bias, &p.bn_scale, &p.bn_shift}) {
      out.emplace_back(v->data(), static_cast<std::size_t>(v->size()));
    }
  }
  return out;
}

ForwardResult forward(const NetSpec& spec, const NetParams& params, const Batch& input, Mode mode,
                      std::uint64_t dropout_seed) {
  const auto layers = spec.layers();
  if (params.layers.size() != layers.size()) throw std::invalid_argument("forward: layer count mismatch");
  if (input.channels != spec.input_channels || input.rows != spec.rows || input.cols != spec.cols ||
      input.batch == 0 || input.data.size() != input.batch * input.channels * input.rows * input.cols) {
    throw std::invalid_argument("forward: input shape does not match network spec");
  }
  for (double v : input.data) {
    if (!std::isfinite(v)) throw std::invalid_argument("forward: non-finite input value");
  }

  const Geometry g{input.batch, input.rows, input.cols};
  const double n = static_cast<double>(g.pixels());
  ForwardResult result;
  result.tape.mode = mode;
  result.tape.batch = input.batch;
  result.tape.layers.resize(layers.size());

  Activations act = to_activations(input);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& spec_l = layers[l];
    const auto& p = params.layers[l];
    check_layer_params(spec_l, p, l);
    auto& t = result.tape.layers[l];

    t.columns = im2col(act, g, spec_l);
    Activations z = t.columns * p.weight.transpose();
    z.rowwise() += p.bias.transpose();

    if (spec_l.use_batchnorm) {
      Activations xhat(z.rows(), z.cols());
      if (mode == Mode::Train) {
        t.batch_mean = z.colwise().mean().transpose();
        t.batch_var.resize(z.cols());
        t.inv_std.resize(z.cols());
        for (Eigen::Index c = 0; c < z.cols(); ++c) {
          const double var = (z.col(c).array() - t.batch_mean(c)).square().sum() / n;
          t.batch_var(c) = var;
          t.inv_std(c) = 1.0 / std::sqrt(var + kBatchNormEps);
          xhat.col(c) = (z.col(c).array() - t.batch_mean(c)) * t.inv_std(c);
        }
        t.normalized = xhat;
      } else {
        for (Eigen::Index c = 0; c < z.cols(); ++c) {
          xhat.col(c) = (z.col(c).array() - p.running_mean(c)) / std::sqrt(p.running_var(c) + kBatchNormEps);
        }
      }
      for (Eigen::Index c = 0; c < z.cols(); ++c) z.col(c) = xhat.col(c) * p.bn_scale(c) + Eigen::VectorXd::Constant(z.rows(), p.bn_shift(c));
    }

    t.pre_activation = z;
    switch (spec_l.activation) {
      case Activation::Relu: act = z.cwiseMax(0.0); break;
      case Activation::Sigmoid: act = (1.0 + (-z.array()).exp()).inverse().matrix(); break;
      case Activation::None: act = z; break;
    }
    t.activated = act;

    if (mode == Mode::Train && spec_l.dropout_rate > 0.0) {
      Rng rng(derive_seed(dropout_seed, l));
      std::bernoulli_distribution keep(1.0 - spec_l.dropout_rate);
      const double scale = 1.0 / (1.0 - spec_l.dropout_rate);
      t.dropout_mask.resize(act.rows(), act.cols());
      for (Eigen::Index c = 0; c < act.cols(); ++c)
        for (Eigen::Index r = 0; r < act.rows(); ++r) t.dropout_mask(r, c) = keep(rng) ? scale : 0.0;
      act = act.cwiseProduct(t.dropout_mask);
    }

    if (!act.allFinite()) {
      throw NumericalError("non-finite activation at layer " + std::to_string(l));
    }
    if (mode == Mode::Infer) t = LayerTape{};
  }

  result.output = from_activations(act, g.batch, g.rows, g.cols);
  return result;
}

Gradients backward(const NetSpec& spec, const NetParams& params, const Tape& tape, const Batch& output_grad) {
  if (tape.mode != Mode::Train) throw std::invalid_argument("backward: tape was not recorded in train mode");
  const auto layers = spec.layers();
  if (tape.layers.size() != layers.size() || params.layers.size() != layers.size()) {
    throw std::invalid_argument("backward: tape/parameter layer count mismatch");
  }
  if (output_grad.batch != tape.batch || output_grad.channels != 1 || output_grad.rows != spec.rows ||
      output_grad.cols != spec.cols) {
    throw std::invalid_argument("backward: gradient shape does not match tape");
  }

  const Geometry g{tape.batch, spec.rows, spec.cols};
  const double n = static_cast<double>(g.pixels());
  Gradients grads;
  grads.params = zeros_like(params);

  Activations grad = to_activations(output_grad);
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& spec_l = layers[l];
    const auto& p = params.layers[l];
    const auto& t = tape.layers[l];
    auto& gp = grads.params.layers[l];

    if (t.dropout_mask.size() > 0) grad = grad.cwiseProduct(t.dropout_mask);

    switch (spec_l.activation) {
      case Activation::Relu:
        grad = (t.pre_activation.array() > 0.0).select(grad, 0.0);
        break;
      case Activation::Sigmoid:
        grad = grad.cwiseProduct((t.activated.array() * (1.0 - t.activated.array())).matrix());
        break;
      case Activation::None: break;
    }

    if (spec_l.use_batchnorm) {
      for (Eigen::Index c = 0; c < grad.cols(); ++c) {
        const auto xhat = t.normalized.col(c).array();
        const auto gy = grad.col(c).array();
        gp.bn_scale(c) = (gy * xhat).sum();
        gp.bn_shift(c) = gy.sum();
        const Eigen::ArrayXd dxhat = gy * p.bn_scale(c);
        const double sum_d = dxhat.sum();
        const double sum_dx = (dxhat * xhat).sum();
        grad.col(c) = ((n * dxhat - sum_d - xhat * sum_dx) * (t.inv_std(c) / n)).matrix();
      }
    }

    gp.weight = grad.transpose() * t.columns;
    gp.bias = grad.colwise().sum().transpose();
    const Eigen::MatrixXd dcols = grad * p.weight;
    grad = col2im(dcols, g, spec_l);
  }
  grads.input = from_activations(grad, g.batch, g.rows, g.cols);
  return grads;
}

void update_running_stats(const NetSpec& spec, NetParams& params, const Tape& tape, double momentum) {
  if (tape.mode != Mode::Train) return;
  const auto layers = spec.layers();
  const double n = static_cast<double>(tape.batch * spec.rows * spec.cols);
  const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (!layers[l].use_batchnorm) continue;
    auto& p = params.layers[l];
    const auto& t = tape.layers[l];
    p.running_mean = (1.0 - momentum) * p.running_mean + momentum * t.batch_mean;
    p.running_var = (1.0 - momentum) * p.running_var + momentum * unbias * t.batch_var;
  }
}

AdamState AdamState::init(const NetParams& params, AdamConfig config) {
  AdamState s;
  s.config = config;
  s.first_moment = zeros_like(params);
  s.second_moment = zeros_like(params);
  return s;
}

void adam_step(NetParams& params, const NetParams& grads, AdamState& state) {
  auto p_arrays = trainable_arrays(params);
  const auto g_arrays = trainable_arrays(grads);
  auto m_arrays = trainable_arrays(state.first_moment);
  auto v_arrays = trainable_arrays(state.second_moment);
  if (g_arrays.size() != p_arrays.size() || m_arrays.size() != p_arrays.size() ||
      v_arrays.size() != p_arrays.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient structure mismatch");
  }
  for (std::size_t a = 0; a < p_arrays.size(); ++a) {
    if (g_arrays[a].size() != p_arrays[a].size() || m_arrays[a].size() != p_arrays[a].size() ||
        v_arrays[a].size() != p_arrays[a].size()) {
      throw std::invalid_argument("adam_step: shape mismatch in array " + std::to_string(a));
    }
    for (double g : g_arrays[a]) {
      if (!std::isfinite(g)) throw NumericalError("adam_step: non-finite gradient");
    }
  }

  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t a = 0; a < p_arrays.size(); ++a) {
    auto p = p_arrays[a];
    const auto g = g_arrays[a];
    auto m = m_arrays[a];
    auto v = v_arrays[a];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace lpimpute::nn
