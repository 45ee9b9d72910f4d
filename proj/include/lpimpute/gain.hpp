#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "lpimpute/curve.hpp"
#include "lpimpute/neural.hpp"
#include "lpimpute/tensor.hpp"

namespace lpimpute::gain {

struct GainConfig {
  double hint_rate = 0.9;
  double noise_scale = 0.01;
  double recon_weight = 10.0;  // alpha
  double learning_rate = 1e-4;
  std::size_t max_iterations = 100;
  double early_stop_rmse = 0.1;
  std::size_t d_steps_per_g_step = 1;
  std::size_t batch_size = 0;  // 0 selects min(U, 64)
  double dropout_rate = 0.1;
  std::uint64_t seed = 1;
  /// Average the discriminator loss only over entries whose hint is 0.5.
  bool d_loss_hidden_only = false;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
  std::size_t effective_batch_size(std::size_t learners) const;
};

/// Uniform [0, scale] entries, deterministic per seed.
Eigen::MatrixXd make_noise(std::size_t rows, std::size_t cols, double scale, std::uint64_t seed);

/// hint = b * mask + 0.5 * (1 - b), b ~ Bernoulli(hint_rate) per entry.
Eigen::MatrixXd make_hint(const Eigen::MatrixXd& mask, double hint_rate, std::uint64_t seed);

/// A scalar loss together with its gradient with respect to one batch.
struct Loss {
  double value = 0.0;
  nn::Batch grad;
};

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kLogClamp = 1e-7;

/// -mean[ mask * log(d) + (1 - mask) * log(1 - d) ] over every entry of the batch.
Loss discriminator_loss(const nn::Batch& d_out, const nn::Batch& mask);

/// Same loss averaged over entries with weight 1 (zero when there are none).
Loss discriminator_loss(const nn::Batch& d_out, const nn::Batch& mask, const nn::Batch& weights);

/// -mean of log(d) over entries with weight 1 (zero when there are none).
Loss fooling_loss(const nn::Batch& d_out, const nn::Batch& weights);

/// RMSE between generated and observed restricted to mask = 1. When the RMSE
/// falls below 1e-8 the gradient uses MSE scaling (2 e / n). Throws
/// std::domain_error when the mask has no observed entries.
Loss reconstruction_rmse(const nn::Batch& generated, const nn::Batch& observed, const nn::Batch& mask);

struct GeneratorLoss {
  double value = 0.0;
  double adversarial = 0.0;
  double reconstruction = 0.0;
  nn::Batch grad_d_out;
  nn::Batch grad_generated;
};

/// fooling loss over missing entries + recon_weight * reconstruction RMSE on observed ones.
GeneratorLoss generator_loss(const nn::Batch& d_out, const nn::Batch& mask, const nn::Batch& generated,
                             const nn::Batch& observed, double recon_weight);

struct GainModel {
  nn::NetSpec generator_spec;
  nn::NetParams generator;
  nn::NetSpec discriminator_spec;
  nn::NetParams discriminator;
  GainConfig config;
  std::vector<CurvePoint> training_curve;
  std::size_t skipped_batches = 0;
};

/// Fresh (untrained) model for N x M learner images.
GainModel make_model(std::size_t rows, std::size_t cols, const GainConfig& cfg);

/// Generator input for a batch: channel 0 = observed values with missing
/// entries filled by noise, channel 1 = mask, channel 2 = (1 - mask) * noise.
nn::Batch generator_input(std::span<const LearnerMatrix> batch, std::span<const Eigen::MatrixXd> noise);

/// G(data, mask, (1 - mask) * noise) for each learner matrix, noise drawn from
/// `noise_seed`. Output is batch x 1 x N x M in (0,1).
nn::Batch generator_forward(const GainModel& model, std::span<const LearnerMatrix> batch, std::uint64_t noise_seed,
                            nn::Mode mode = nn::Mode::Infer);

/// Adversarial training on the learner images of `t`. One iteration is a full
/// pass over all learner batches. Stops after max_iterations or at the first
/// iteration whose observed-reconstruction RMSE is <= early_stop_rmse.
/// Throws NumericalError naming the iteration on a non-finite loss.
/// `observer`, when set, is called after each iteration's curve entry is recorded.
using IterationObserver = std::function<void(const GainModel&)>;
GainModel train(const PerfTensor& t, const GainConfig& cfg, const IterationObserver& observer = {});

/// Observed cells keep their exact value; missing cells take the generator output.
DenseTensor impute(const GainModel& model, const PerfTensor& t);

/// Config block followed by the two network containers; round-trips exactly.
void save_model(std::ostream& out, const GainModel& model);
GainModel load_model(std::istream& in);

}  // namespace lpimpute::gain
