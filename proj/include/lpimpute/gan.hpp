#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "lpimpute/curve.hpp"
#include "lpimpute/neural.hpp"
#include "lpimpute/tensor.hpp"

namespace lpimpute::gan {

struct GanConfig {
  double noise_scale = 1.0;
  double recon_weight = 10.0;
  double learning_rate = 1e-4;
  std::size_t max_iterations = 100;
  double early_stop_rmse = 0.1;
  std::size_t d_steps_per_g_step = 1;
  std::size_t batch_size = 0;  // 0 selects min(U, 64)
  double dropout_rate = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t effective_batch_size(std::size_t learners) const;
};

struct GanModel {
  nn::NetSpec generator_spec;  // one noise channel in
  nn::NetParams generator;
  nn::NetSpec discriminator_spec;  // one data channel in
  nn::NetParams discriminator;
  GanConfig config;
  double fill_value = 0.5;  // observed mean used for missing cells of real images
  std::vector<CurvePoint> training_curve;
  std::size_t skipped_batches = 0;
};

GanModel make_model(std::size_t rows, std::size_t cols, const GanConfig& cfg);

/// Generator output for `count` noise images drawn from derive_seed(noise_seed, k).
nn::Batch generate(const GanModel& model, std::size_t count, std::uint64_t noise_seed,
                   nn::Mode mode = nn::Mode::Infer);

GanModel gan_train(const PerfTensor& t, const GanConfig& cfg);

/// Learner u's image comes from noise seeded by (config.seed, u); observed
/// cells keep their exact value.
DenseTensor gan_impute(const GanModel& model, const PerfTensor& t);

void save_model(std::ostream& out, const GanModel& model);
GanModel load_model(std::istream& in);

}  // namespace lpimpute::gan
