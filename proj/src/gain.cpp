#include "lpimpute/gain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>

#include "adversarial_common.hpp"
#include "lpimpute/checkpoint.hpp"
#include "lpimpute/error.hpp"
#include "lpimpute/random.hpp"

namespace lpimpute::gain {

namespace {

constexpr std::uint64_t kTrainStream = 0x7472;
constexpr std::uint64_t kEvalStream = 0x6576;
constexpr std::uint64_t kImputeStream = 0x696d;
constexpr std::uint64_t kInitG = 0x4721;
constexpr std::uint64_t kInitD = 0x4422;

nn::Batch run_generator(const GainModel& model, std::span<const LearnerMatrix> batch,
                        std::span<const Eigen::MatrixXd> noise, nn::Mode mode, std::uint64_t dropout_seed,
                        nn::Tape* tape = nullptr) {
  auto fr = nn::forward(model.generator_spec, model.generator, generator_input(batch, noise), mode, dropout_seed);
  if (tape) *tape = std::move(fr.tape);
  return std::move(fr.output);
}

std::vector<Eigen::MatrixXd> noise_for(std::size_t count, std::size_t rows, std::size_t cols, double scale,
                                       Rng& rng) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(make_noise(rows, cols, scale, rng()));
  return out;
}

nn::Batch hint_batch(const nn::Batch& mask, double hint_rate, Rng& rng) {
  nn::Batch out = mask;
  const auto hw = mask.rows * mask.cols;
  for (std::size_t b = 0; b < mask.batch; ++b) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(mask.rows), static_cast<Eigen::Index>(mask.cols));
    for (std::size_t k = 0; k < hw; ++k) m(static_cast<Eigen::Index>(k / mask.cols), static_cast<Eigen::Index>(k % mask.cols)) = mask.data[b * hw + k];
    const auto h = make_hint(m, hint_rate, rng());
    for (std::size_t k = 0; k < hw; ++k) out.data[b * hw + k] = h(static_cast<Eigen::Index>(k / mask.cols), static_cast<Eigen::Index>(k % mask.cols));
  }
  return out;
}

/// 1 where the hint withholds the mask, 0 where it reveals it.
nn::Batch hidden_entries(const nn::Batch& hint) {
  nn::Batch out = hint;
  for (auto& v : out.data) v = v == 0.5 ? 1.0 : 0.0;
  return out;
}

nn::Batch discriminator_input(const nn::Batch& imputed, const nn::Batch& hint) {
  const nn::Batch* parts[] = {&imputed, &hint};
  return detail::concat_channels(parts);
}

double reconstruction_curve_value(const GainModel& model, const std::vector<LearnerMatrix>& slices,
                                  std::size_t batch_size, std::uint64_t seed) {
  detail::SquaredError se;
  for (std::size_t start = 0; start < slices.size(); start += batch_size) {
    const auto end = std::min(slices.size(), start + batch_size);
    std::span<const LearnerMatrix> batch(slices.data() + start, end - start);
    const auto gen = generator_forward(model, batch, derive_seed(seed, start));
    se.add(gen, detail::values_batch(batch, 0.0), detail::mask_batch(batch));
  }
  return se.rmse();
}

}  // namespace

void GainConfig::validate() const {
  if (!(hint_rate > 0.0 && hint_rate <= 1.0)) throw ConfigError("hint_rate must lie in (0,1]");
  if (!(noise_scale > 0.0) || !std::isfinite(noise_scale)) throw ConfigError("noise_scale must be > 0");
  if (!(recon_weight > 0.0) || !std::isfinite(recon_weight)) throw ConfigError("recon_weight must be > 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (max_iterations == 0) throw ConfigError("max_iterations must be positive");
  if (!(early_stop_rmse > 0.0)) throw ConfigError("early_stop_rmse must be > 0");
  if (d_steps_per_g_step == 0) throw ConfigError("d_steps_per_g_step must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0,1)");
}

std::size_t GainConfig::effective_batch_size(std::size_t learners) const {
  return batch_size == 0 ? std::min<std::size_t>(learners, 64) : std::min(batch_size, learners);
}

Eigen::MatrixXd make_noise(std::size_t rows, std::size_t cols, double scale, std::uint64_t seed) {
  if (!(scale > 0.0)) throw std::invalid_argument("make_noise: scale must be > 0");
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(0.0, scale);
  Eigen::MatrixXd z(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index m = 0; m < z.cols(); ++m) z(i, m) = dist(rng);
  return z;
}

Eigen::MatrixXd make_hint(const Eigen::MatrixXd& mask, double hint_rate, std::uint64_t seed) {
  if (!(hint_rate > 0.0 && hint_rate <= 1.0)) throw std::invalid_argument("make_hint: hint_rate must lie in (0,1]");
  Rng rng(seed);
  std::bernoulli_distribution reveal(hint_rate);
  Eigen::MatrixXd h(mask.rows(), mask.cols());
  for (Eigen::Index i = 0; i < h.rows(); ++i)
    for (Eigen::Index m = 0; m < h.cols(); ++m) h(i, m) = reveal(rng) ? mask(i, m) : 0.5;
  return h;
}

Loss discriminator_loss(const nn::Batch& d_out, const nn::Batch& mask) {
  nn::Batch ones = mask;
  std::fill(ones.data.begin(), ones.data.end(), 1.0);
  return discriminator_loss(d_out, mask, ones);
}

Loss discriminator_loss(const nn::Batch& d_out, const nn::Batch& mask, const nn::Batch& weights) {
  if (d_out.data.size() != mask.data.size() || d_out.data.size() != weights.data.size()) {
    throw std::invalid_argument("discriminator_loss: shape mismatch");
  }
  Loss loss{0.0, nn::Batch(d_out.batch, d_out.channels, d_out.rows, d_out.cols)};
  double count = 0.0;
  for (double w : weights.data) count += w;
  if (count == 0.0) return loss;
  for (std::size_t k = 0; k < d_out.data.size(); ++k) {
    const double w = weights.data[k];
    if (w == 0.0) continue;
    const double d = std::clamp(d_out.data[k], kLogClamp, 1.0 - kLogClamp);
    const double m = mask.data[k];
    loss.value -= w * (m * std::log(d) + (1.0 - m) * std::log(1.0 - d));
    loss.grad.data[k] = -w * (m / d - (1.0 - m) / (1.0 - d)) / count;
  }
  loss.value /= count;
  return loss;
}

Loss fooling_loss(const nn::Batch& d_out, const nn::Batch& weights) {
  if (d_out.data.size() != weights.data.size()) throw std::invalid_argument("fooling_loss: shape mismatch");
  Loss loss{0.0, nn::Batch(d_out.batch, d_out.channels, d_out.rows, d_out.cols)};
  double count = 0.0;
  for (double w : weights.data) count += w;
  if (count == 0.0) return loss;
  for (std::size_t k = 0; k < d_out.data.size(); ++k) {
    if (weights.data[k] == 0.0) continue;
    const double d = std::clamp(d_out.data[k], kLogClamp, 1.0 - kLogClamp);
    loss.value -= weights.data[k] * std::log(d);
    loss.grad.data[k] = -weights.data[k] / (d * count);
  }
  loss.value /= count;
  return loss;
}

Loss reconstruction_rmse(const nn::Batch& generated, const nn::Batch& observed, const nn::Batch& mask) {
  if (generated.data.size() != observed.data.size() || generated.data.size() != mask.data.size()) {
    throw std::invalid_argument("reconstruction_rmse: shape mismatch");
  }
  Loss loss{0.0, nn::Batch(generated.batch, generated.channels, generated.rows, generated.cols)};
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < generated.data.size(); ++k) {
    if (mask.data[k] == 0.0) continue;
    const double e = generated.data[k] - observed.data[k];
    sum += e * e;
    ++n;
  }
  if (n == 0) throw std::domain_error("reconstruction_rmse: batch has no observed entries");
  const double nd = static_cast<double>(n);
  loss.value = std::sqrt(sum / nd);
  const bool tiny = loss.value < 1e-8;
  for (std::size_t k = 0; k < generated.data.size(); ++k) {
    if (mask.data[k] == 0.0) continue;
    const double e = generated.data[k] - observed.data[k];
    loss.grad.data[k] = tiny ? 2.0 * e / nd : e / (nd * loss.value);
  }
  return loss;
}

GeneratorLoss generator_loss(const nn::Batch& d_out, const nn::Batch& mask, const nn::Batch& generated,
                             const nn::Batch& observed, double recon_weight) {
  nn::Batch missing = mask;
  for (auto& v : missing.data) v = 1.0 - v;
  auto adv = fooling_loss(d_out, missing);
  auto rec = reconstruction_rmse(generated, observed, mask);
  GeneratorLoss out;
  out.adversarial = adv.value;
  out.reconstruction = rec.value;
  out.value = adv.value + recon_weight * rec.value;
  out.grad_d_out = std::move(adv.grad);
  out.grad_generated = std::move(rec.grad);
  for (auto& g : out.grad_generated.data) g *= recon_weight;
  return out;
}

GainModel make_model(std::size_t rows, std::size_t cols, const GainConfig& cfg) {
  cfg.validate();
  GainModel model;
  model.config = cfg;
  model.generator_spec = nn::NetSpec::standard(3, rows, cols, cfg.dropout_rate);
  model.discriminator_spec = nn::NetSpec::standard(2, rows, cols, cfg.dropout_rate);
  model.generator = nn::init_params(model.generator_spec, derive_seed(cfg.seed, kInitG));
  model.discriminator = nn::init_params(model.discriminator_spec, derive_seed(cfg.seed, kInitD));
  return model;
}

nn::Batch generator_input(std::span<const LearnerMatrix> batch, std::span<const Eigen::MatrixXd> noise) {
  if (batch.empty() || noise.size() != batch.size()) {
    throw std::invalid_argument("generator_input: need one noise matrix per learner matrix");
  }
  const auto rows = batch.front().rows, cols = batch.front().cols;
  nn::Batch in(batch.size(), 3, rows, cols);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& lm = batch[b];
    if (lm.rows != rows || lm.cols != cols || noise[b].rows() != static_cast<Eigen::Index>(rows) ||
        noise[b].cols() != static_cast<Eigen::Index>(cols)) {
      throw std::invalid_argument("generator_input: inconsistent learner matrix shapes");
    }
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t m = 0; m < cols; ++m) {
        const double z = noise[b](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m));
        const bool obs = lm.observed(i, m) != 0;
        in.at(b, 0, i, m) = obs ? *lm.value(i, m) : z;
        in.at(b, 1, i, m) = obs ? 1.0 : 0.0;
        in.at(b, 2, i, m) = obs ? 0.0 : z;
      }
  }
  return in;
}

nn::Batch generator_forward(const GainModel& model, std::span<const LearnerMatrix> batch, std::uint64_t noise_seed,
                            nn::Mode mode) {
  if (batch.empty()) throw std::invalid_argument("generator_forward: empty batch");
  const auto& spec = model.generator_spec;
  for (const auto& lm : batch) {
    if (lm.rows != spec.rows || lm.cols != spec.cols) {
      throw std::invalid_argument("generator_forward: learner matrix shape does not match model");
    }
  }
  std::vector<Eigen::MatrixXd> noise;
  noise.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    noise.push_back(make_noise(spec.rows, spec.cols, model.config.noise_scale, derive_seed(noise_seed, b)));
  }
  return run_generator(model, batch, noise, mode, derive_seed(noise_seed, 0xd0));
}

GainModel train(const PerfTensor& t, const GainConfig& cfg, const IterationObserver& observer) {
  const auto& dims = t.dims();
  if (t.observed_count() == 0) throw DataError("cannot train on a tensor without observed cells");
  GainModel model = make_model(dims.questions, dims.attempts, cfg);
  const auto slices = detail::all_slices(t);
  const auto bs = cfg.effective_batch_size(dims.learners);
  const nn::AdamConfig adam{cfg.learning_rate, 0.9, 0.999, 1e-8};
  auto g_opt = nn::AdamState::init(model.generator, adam);
  auto d_opt = nn::AdamState::init(model.discriminator, adam);

  Rng rng(derive_seed(cfg.seed, kTrainStream));
  std::vector<std::size_t> order(dims.learners);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const auto end = std::min(order.size(), start + bs);
      const auto batch = detail::gather(slices, std::span(order).subspan(start, end - start));
      const auto observed = detail::values_batch(batch, 0.0);
      const auto mask = detail::mask_batch(batch);
      if (!detail::any_observed(mask)) {
        ++model.skipped_batches;
        continue;
      }

      for (std::size_t s = 0; s < cfg.d_steps_per_g_step; ++s) {
        const auto noise = noise_for(batch.size(), dims.questions, dims.attempts, cfg.noise_scale, rng);
        const auto generated = run_generator(model, batch, noise, nn::Mode::Train, rng());
        const auto imputed = detail::merge(observed, mask, generated);
        const auto hint = hint_batch(mask, cfg.hint_rate, rng);
        auto df = nn::forward(model.discriminator_spec, model.discriminator, discriminator_input(imputed, hint),
                              nn::Mode::Train, rng());
        const auto loss = cfg.d_loss_hidden_only ? discriminator_loss(df.output, mask, hidden_entries(hint))
                                                 : discriminator_loss(df.output, mask);
        detail::require_finite(loss.value, "discriminator loss", it);
        const auto grads = nn::backward(model.discriminator_spec, model.discriminator, df.tape, loss.grad);
        nn::adam_step(model.discriminator, grads.params, d_opt);
        nn::update_running_stats(model.discriminator_spec, model.discriminator, df.tape);
      }

      const auto noise = noise_for(batch.size(), dims.questions, dims.attempts, cfg.noise_scale, rng);
      nn::Tape g_tape;
      const auto generated = run_generator(model, batch, noise, nn::Mode::Train, rng(), &g_tape);
      const auto imputed = detail::merge(observed, mask, generated);
      const auto hint = hint_batch(mask, cfg.hint_rate, rng);
      auto df = nn::forward(model.discriminator_spec, model.discriminator, discriminator_input(imputed, hint),
                            nn::Mode::Train, rng());
      auto gl = generator_loss(df.output, mask, generated, observed, cfg.recon_weight);
      detail::require_finite(gl.value, "generator loss", it);
      const auto d_grads = nn::backward(model.discriminator_spec, model.discriminator, df.tape, gl.grad_d_out);
      // Only missing entries of the imputed channel depend on G.
      const auto d_imputed = detail::channel(d_grads.input, 0);
      for (std::size_t k = 0; k < gl.grad_generated.data.size(); ++k) {
        gl.grad_generated.data[k] += (1.0 - mask.data[k]) * d_imputed.data[k];
      }
      const auto g_grads = nn::backward(model.generator_spec, model.generator, g_tape, gl.grad_generated);
      nn::adam_step(model.generator, g_grads.params, g_opt);
      nn::update_running_stats(model.generator_spec, model.generator, g_tape);
    }

    const double rmse = reconstruction_curve_value(model, slices, bs, derive_seed(cfg.seed, kEvalStream, it));
    detail::require_finite(rmse, "reconstruction RMSE", it);
    model.training_curve.push_back({it, rmse});
    if (observer) observer(model);
    if (rmse <= cfg.early_stop_rmse) break;
  }
  return model;
}

DenseTensor impute(const GainModel& model, const PerfTensor& t) {
  const auto& dims = t.dims();
  if (dims.questions != model.generator_spec.rows || dims.attempts != model.generator_spec.cols) {
    throw std::invalid_argument("impute: tensor " + to_string(dims) + " does not match model shape");
  }
  const auto slices = detail::all_slices(t);
  const auto bs = model.config.effective_batch_size(dims.learners);
  DenseTensor out(dims);
  for (std::size_t start = 0; start < slices.size(); start += bs) {
    const auto end = std::min(slices.size(), start + bs);
    std::span<const LearnerMatrix> batch(slices.data() + start, end - start);
    std::vector<Eigen::MatrixXd> noise;
    for (std::size_t u = start; u < end; ++u) {
      noise.push_back(make_noise(dims.questions, dims.attempts, model.config.noise_scale,
                                 derive_seed(model.config.seed, kImputeStream, u)));
    }
    const auto generated = run_generator(model, batch, noise, nn::Mode::Infer, 0);
    const auto hw = dims.slice_size();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      Eigen::MatrixXd g(static_cast<Eigen::Index>(dims.questions), static_cast<Eigen::Index>(dims.attempts));
      for (std::size_t k = 0; k < hw; ++k) {
        g(static_cast<Eigen::Index>(k / dims.attempts), static_cast<Eigen::Index>(k % dims.attempts)) =
            generated.data[b * hw + k];
      }
      const auto merged = merge_imputed(batch[b], g);
      for (std::size_t i = 0; i < dims.questions; ++i)
        for (std::size_t m = 0; m < dims.attempts; ++m)
          out.at(start + b, i, m) = merged(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m));
    }
  }
  return out;
}

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <class T>
void expect_key(std::istream& in, const char* key, T& value) {
  std::string k;
  if (!(in >> k) || k != key || !(in >> value)) throw DataError(std::string("checkpoint: expected '") + key + "'");
}

}  // namespace

void save_model(std::ostream& out, const GainModel& model) {
  const auto& c = model.config;
  out << "lpimpute-gain 1\n"
      << "hint_rate " << g17(c.hint_rate) << '\n'
      << "noise_scale " << g17(c.noise_scale) << '\n'
      << "recon_weight " << g17(c.recon_weight) << '\n'
      << "learning_rate " << g17(c.learning_rate) << '\n'
      << "max_iterations " << c.max_iterations << '\n'
      << "early_stop_rmse " << g17(c.early_stop_rmse) << '\n'
      << "d_steps_per_g_step " << c.d_steps_per_g_step << '\n'
      << "batch_size " << c.batch_size << '\n'
      << "dropout_rate " << g17(c.dropout_rate) << '\n'
      << "seed " << c.seed << '\n'
      << "d_loss_hidden_only " << (c.d_loss_hidden_only ? 1 : 0) << '\n'
      << "skipped_batches " << model.skipped_batches << '\n'
      << "curve " << model.training_curve.size() << '\n';
  for (const auto& p : model.training_curve) out << p.iteration << ' ' << g17(p.rmse) << '\n';
  nn::save_spec(out, model.generator_spec);
  nn::save_params(out, model.generator_spec, model.generator);
  nn::save_spec(out, model.discriminator_spec);
  nn::save_params(out, model.discriminator_spec, model.discriminator);
}

GainModel load_model(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "lpimpute-gain" || version != 1) {
    throw DataError("not a GAIN checkpoint");
  }
  GainModel model;
  auto& c = model.config;
  expect_key(in, "hint_rate", c.hint_rate);
  expect_key(in, "noise_scale", c.noise_scale);
  expect_key(in, "recon_weight", c.recon_weight);
  expect_key(in, "learning_rate", c.learning_rate);
  expect_key(in, "max_iterations", c.max_iterations);
  expect_key(in, "early_stop_rmse", c.early_stop_rmse);
  expect_key(in, "d_steps_per_g_step", c.d_steps_per_g_step);
  expect_key(in, "batch_size", c.batch_size);
  expect_key(in, "dropout_rate", c.dropout_rate);
  expect_key(in, "seed", c.seed);
  int hidden_only = 0;
  expect_key(in, "d_loss_hidden_only", hidden_only);
  c.d_loss_hidden_only = hidden_only != 0;
  expect_key(in, "skipped_batches", model.skipped_batches);
  std::size_t n = 0;
  expect_key(in, "curve", n);
  model.training_curve.resize(n);
  for (auto& p : model.training_curve) {
    if (!(in >> p.iteration >> p.rmse)) throw DataError("checkpoint: truncated curve");
  }
  model.generator_spec = nn::load_spec(in);
  model.generator = nn::load_params(in, model.generator_spec);
  model.discriminator_spec = nn::load_spec(in);
  model.discriminator = nn::load_params(in, model.discriminator_spec);
  return model;
}

}  // namespace lpimpute::gain
