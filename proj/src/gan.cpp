#include "lpimpute/gan.hpp"

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
#include "lpimpute/gain.hpp"
#include "lpimpute/random.hpp"

namespace lpimpute::gan {

namespace {

constexpr std::uint64_t kTrainStream = 0x7472;
constexpr std::uint64_t kEvalStream = 0x6576;
constexpr std::uint64_t kImputeStream = 0x696d;
constexpr std::uint64_t kInitG = 0x4731;
constexpr std::uint64_t kInitD = 0x4432;

nn::Batch noise_batch(std::size_t count, std::size_t rows, std::size_t cols, double scale,
                      std::uint64_t seed_base, std::uint64_t offset) {
  nn::Batch in(count, 1, rows, cols);
  const auto hw = rows * cols;
  for (std::size_t b = 0; b < count; ++b) {
    const auto z = gain::make_noise(rows, cols, scale, derive_seed(seed_base, offset + b));
    for (std::size_t k = 0; k < hw; ++k) {
      in.data[b * hw + k] = z(static_cast<Eigen::Index>(k / cols), static_cast<Eigen::Index>(k % cols));
    }
  }
  return in;
}

double observed_mean(const PerfTensor& t) {
  double sum = 0.0;
  std::size_t n = 0;
  for (auto c : t.cells()) {
    if (auto v = numeric(c)) {
      sum += *v;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.5;
}

}  // namespace

void GanConfig::validate() const {
  gain::GainConfig g;
  g.noise_scale = noise_scale;
  g.recon_weight = recon_weight;
  g.learning_rate = learning_rate;
  g.max_iterations = max_iterations;
  g.early_stop_rmse = early_stop_rmse;
  g.d_steps_per_g_step = d_steps_per_g_step;
  g.batch_size = batch_size;
  g.dropout_rate = dropout_rate;
  g.validate();
}

std::size_t GanConfig::effective_batch_size(std::size_t learners) const {
  return batch_size == 0 ? std::min<std::size_t>(learners, 64) : std::min(batch_size, learners);
}

GanModel make_model(std::size_t rows, std::size_t cols, const GanConfig& cfg) {
  cfg.validate();
  GanModel model;
  model.config = cfg;
  model.generator_spec = nn::NetSpec::standard(1, rows, cols, cfg.dropout_rate);
  model.discriminator_spec = nn::NetSpec::standard(1, rows, cols, cfg.dropout_rate);
  model.generator = nn::init_params(model.generator_spec, derive_seed(cfg.seed, kInitG));
  model.discriminator = nn::init_params(model.discriminator_spec, derive_seed(cfg.seed, kInitD));
  return model;
}

nn::Batch generate(const GanModel& model, std::size_t count, std::uint64_t noise_seed, nn::Mode mode) {
  if (count == 0) throw std::invalid_argument("generate: count must be positive");
  const auto& s = model.generator_spec;
  const auto z = noise_batch(count, s.rows, s.cols, model.config.noise_scale, noise_seed, 0);
  return nn::forward(s, model.generator, z, mode, derive_seed(noise_seed, 0xd0)).output;
}

GanModel gan_train(const PerfTensor& t, const GanConfig& cfg) {
  const auto& dims = t.dims();
  if (t.observed_count() == 0) throw DataError("cannot train on a tensor without observed cells");
  GanModel model = make_model(dims.questions, dims.attempts, cfg);
  model.fill_value = observed_mean(t);
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
      const auto real = detail::values_batch(batch, model.fill_value);
      const nn::Batch ones(batch.size(), 1, dims.questions, dims.attempts, 1.0);
      const nn::Batch zeros(batch.size(), 1, dims.questions, dims.attempts, 0.0);

      for (std::size_t s = 0; s < cfg.d_steps_per_g_step; ++s) {
        const auto z = noise_batch(batch.size(), dims.questions, dims.attempts, cfg.noise_scale, rng(), 0);
        const auto fake = nn::forward(model.generator_spec, model.generator, z, nn::Mode::Train, rng()).output;

        auto dr = nn::forward(model.discriminator_spec, model.discriminator, real, nn::Mode::Train, rng());
        const auto lr = gain::discriminator_loss(dr.output, ones);
        auto grads = nn::backward(model.discriminator_spec, model.discriminator, dr.tape, lr.grad).params;

        auto df = nn::forward(model.discriminator_spec, model.discriminator, fake, nn::Mode::Train, rng());
        const auto lf = gain::discriminator_loss(df.output, zeros);
        detail::require_finite(lr.value + lf.value, "discriminator loss", it);
        const auto gf = nn::backward(model.discriminator_spec, model.discriminator, df.tape, lf.grad).params;

        auto acc = nn::trainable_arrays(grads);
        const auto add = nn::trainable_arrays(gf);
        for (std::size_t a = 0; a < acc.size(); ++a)
          for (std::size_t k = 0; k < acc[a].size(); ++k) acc[a][k] += add[a][k];
        nn::adam_step(model.discriminator, grads, d_opt);
        nn::update_running_stats(model.discriminator_spec, model.discriminator, dr.tape);
        nn::update_running_stats(model.discriminator_spec, model.discriminator, df.tape);
      }

      const auto z = noise_batch(batch.size(), dims.questions, dims.attempts, cfg.noise_scale, rng(), 0);
      auto gf = nn::forward(model.generator_spec, model.generator, z, nn::Mode::Train, rng());
      auto df = nn::forward(model.discriminator_spec, model.discriminator, gf.output, nn::Mode::Train, rng());
      const auto adv = gain::fooling_loss(df.output, ones);
      auto rec = gain::reconstruction_rmse(gf.output, observed, mask);
      detail::require_finite(adv.value + cfg.recon_weight * rec.value, "generator loss", it);
      const auto d_grads = nn::backward(model.discriminator_spec, model.discriminator, df.tape, adv.grad);
      for (std::size_t k = 0; k < rec.grad.data.size(); ++k) {
        rec.grad.data[k] = cfg.recon_weight * rec.grad.data[k] + d_grads.input.data[k];
      }
      const auto g_grads = nn::backward(model.generator_spec, model.generator, gf.tape, rec.grad);
      nn::adam_step(model.generator, g_grads.params, g_opt);
      nn::update_running_stats(model.generator_spec, model.generator, gf.tape);
    }

    detail::SquaredError se;
    const auto eval_seed = derive_seed(cfg.seed, kEvalStream, it);
    for (std::size_t start = 0; start < slices.size(); start += bs) {
      const auto end = std::min(slices.size(), start + bs);
      std::span<const LearnerMatrix> batch(slices.data() + start, end - start);
      const auto z = noise_batch(batch.size(), dims.questions, dims.attempts, cfg.noise_scale, eval_seed, start);
      const auto gen = nn::forward(model.generator_spec, model.generator, z, nn::Mode::Infer).output;
      se.add(gen, detail::values_batch(batch, 0.0), detail::mask_batch(batch));
    }
    const double rmse = se.rmse();
    detail::require_finite(rmse, "reconstruction RMSE", it);
    model.training_curve.push_back({it, rmse});
    if (rmse <= cfg.early_stop_rmse) break;
  }
  return model;
}

DenseTensor gan_impute(const GanModel& model, const PerfTensor& t) {
  const auto& dims = t.dims();
  if (dims.questions != model.generator_spec.rows || dims.attempts != model.generator_spec.cols) {
    throw std::invalid_argument("gan_impute: tensor " + to_string(dims) + " does not match model shape");
  }
  const auto bs = model.config.effective_batch_size(dims.learners);
  const auto seed = derive_seed(model.config.seed, kImputeStream);
  DenseTensor out(dims);
  const auto hw = dims.slice_size();
  for (std::size_t start = 0; start < dims.learners; start += bs) {
    const auto end = std::min(dims.learners, start + bs);
    const auto z = noise_batch(end - start, dims.questions, dims.attempts, model.config.noise_scale, seed, start);
    const auto gen = nn::forward(model.generator_spec, model.generator, z, nn::Mode::Infer).output;
    for (std::size_t u = start; u < end; ++u) {
      const auto lm = slice_learner(t, u);
      Eigen::MatrixXd g(static_cast<Eigen::Index>(dims.questions), static_cast<Eigen::Index>(dims.attempts));
      for (std::size_t k = 0; k < hw; ++k) {
        g(static_cast<Eigen::Index>(k / dims.attempts), static_cast<Eigen::Index>(k % dims.attempts)) =
            gen.data[(u - start) * hw + k];
      }
      const auto merged = merge_imputed(lm, g);
      for (std::size_t i = 0; i < dims.questions; ++i)
        for (std::size_t m = 0; m < dims.attempts; ++m)
          out.at(u, i, m) = merged(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m));
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

void save_model(std::ostream& out, const GanModel& model) {
  const auto& c = model.config;
  out << "lpimpute-gan 1\n"
      << "noise_scale " << g17(c.noise_scale) << '\n'
      << "recon_weight " << g17(c.recon_weight) << '\n'
      << "learning_rate " << g17(c.learning_rate) << '\n'
      << "max_iterations " << c.max_iterations << '\n'
      << "early_stop_rmse " << g17(c.early_stop_rmse) << '\n'
      << "d_steps_per_g_step " << c.d_steps_per_g_step << '\n'
      << "batch_size " << c.batch_size << '\n'
      << "dropout_rate " << g17(c.dropout_rate) << '\n'
      << "seed " << c.seed << '\n'
      << "fill_value " << g17(model.fill_value) << '\n'
      << "skipped_batches " << model.skipped_batches << '\n'
      << "curve " << model.training_curve.size() << '\n';
  for (const auto& p : model.training_curve) out << p.iteration << ' ' << g17(p.rmse) << '\n';
  nn::save_spec(out, model.generator_spec);
  nn::save_params(out, model.generator_spec, model.generator);
  nn::save_spec(out, model.discriminator_spec);
  nn::save_params(out, model.discriminator_spec, model.discriminator);
}

GanModel load_model(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "lpimpute-gan" || version != 1) throw DataError("not a GAN checkpoint");
  GanModel model;
  auto& c = model.config;
  expect_key(in, "noise_scale", c.noise_scale);
  expect_key(in, "recon_weight", c.recon_weight);
  expect_key(in, "learning_rate", c.learning_rate);
  expect_key(in, "max_iterations", c.max_iterations);
  expect_key(in, "early_stop_rmse", c.early_stop_rmse);
  expect_key(in, "d_steps_per_g_step", c.d_steps_per_g_step);
  expect_key(in, "batch_size", c.batch_size);
  expect_key(in, "dropout_rate", c.dropout_rate);
  expect_key(in, "seed", c.seed);
  expect_key(in, "fill_value", model.fill_value);
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

}  // namespace lpimpute::gan
