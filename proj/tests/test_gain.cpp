#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "gradcheck.hpp"
#include "lpimpute/error.hpp"
#include "lpimpute/gain.hpp"
#include "lpimpute/ingest.hpp"

using namespace lpimpute;
using namespace lpimpute::gain;

namespace {

nn::Batch batch_of(std::initializer_list<double> v, std::size_t rows, std::size_t cols) {
  nn::Batch b(v.size() / (rows * cols), 1, rows, cols);
  std::copy(v.begin(), v.end(), b.data.begin());
  return b;
}

GainConfig quick(std::size_t iterations = 3) {
  GainConfig c;
  c.max_iterations = iterations;
  c.early_stop_rmse = 1e-12;
  c.seed = 4;
  return c;
}

PerfTensor synth(std::size_t u, std::size_t n, std::size_t m, std::uint64_t seed = 1) {
  SynthConfig c;
  c.learners = u;
  c.questions = n;
  c.attempts = m;
  c.seed = seed;
  return synth_generate(c).observed;
}

void expect_preserves_observed(const PerfTensor& t, const DenseTensor& out) {
  ASSERT_EQ(out.dims(), t.dims());
  for (std::size_t k = 0; k < t.cells().size(); ++k) {
    if (auto v = numeric(t.cells()[k])) {
      ASSERT_EQ(out.values()[k], *v) << "cell " << k;
    } else {
      ASSERT_GT(out.values()[k], 0.0);
      ASSERT_LT(out.values()[k], 1.0);
    }
  }
}

}  // namespace

TEST(Noise, RangeDeterminismMean) {
  const auto a = make_noise(9, 9, 0.01, 3);
  EXPECT_GE(a.minCoeff(), 0.0);
  EXPECT_LE(a.maxCoeff(), 0.01);
  EXPECT_EQ(a, make_noise(9, 9, 0.01, 3));
  const auto big = make_noise(400, 250, 0.01, 5);
  EXPECT_NEAR(big.mean(), 0.005, 0.05 * 0.005);
}

TEST(Hint, FullRateEqualsMask) {
  Eigen::MatrixXd mask(2, 3);
  mask << 1, 0, 1, 0, 0, 1;
  EXPECT_EQ(make_hint(mask, 1.0, 1), mask);
}

TEST(Hint, UnrevealedEntriesAreHalf) {
  Eigen::MatrixXd mask = Eigen::MatrixXd::Ones(400, 250);
  const auto h = make_hint(mask, 0.9, 2);
  std::size_t revealed = 0;
  for (Eigen::Index k = 0; k < h.size(); ++k) {
    const double v = h.data()[k];
    ASSERT_TRUE(v == 1.0 || v == 0.5);
    revealed += v == 1.0;
  }
  EXPECT_NEAR(static_cast<double>(revealed) / static_cast<double>(h.size()), 0.9, 0.02);
}

TEST(DiscriminatorLoss, AnalyticValues) {
  const auto mask = batch_of({1, 0, 0, 1}, 2, 2);
  EXPECT_NEAR(discriminator_loss(batch_of({0.5, 0.5, 0.5, 0.5}, 2, 2), mask).value, std::log(2.0), 1e-15);
  EXPECT_NEAR(discriminator_loss(mask, mask).value, -std::log(1.0 - kLogClamp), 1e-15);
}

TEST(DiscriminatorLoss, HandCase) {
  const auto d = batch_of({0.9, 0.2, 0.4, 0.7}, 2, 2);
  const auto mask = batch_of({1, 0, 1, 0}, 2, 2);
  const double expected = -(std::log(0.9) + std::log(0.8) + std::log(0.4) + std::log(0.3)) / 4.0;
  const auto l = discriminator_loss(d, mask);
  EXPECT_NEAR(l.value, expected, 1e-15);
  EXPECT_NEAR(l.grad.data[0], -1.0 / (0.9 * 4.0), 1e-15);
  EXPECT_NEAR(l.grad.data[1], 1.0 / (0.8 * 4.0), 1e-15);
}

TEST(DiscriminatorLoss, WeightedMatchesSubset) {
  const auto d = batch_of({0.9, 0.2, 0.4, 0.7}, 2, 2);
  const auto mask = batch_of({1, 0, 1, 0}, 2, 2);
  const auto w = batch_of({0, 1, 1, 0}, 2, 2);
  const auto l = discriminator_loss(d, mask, w);
  EXPECT_NEAR(l.value, -(std::log(0.8) + std::log(0.4)) / 2.0, 1e-15);
  EXPECT_EQ(l.grad.data[0], 0.0);
  EXPECT_NEAR(l.grad.data[1], 1.0 / (0.8 * 2.0), 1e-15);
  EXPECT_NEAR(l.grad.data[2], -1.0 / (0.4 * 2.0), 1e-15);
  EXPECT_EQ(discriminator_loss(d, mask, batch_of({0, 0, 0, 0}, 2, 2)).value, 0.0);
  const auto all = discriminator_loss(d, mask, batch_of({1, 1, 1, 1}, 2, 2));
  EXPECT_EQ(all.value, discriminator_loss(d, mask).value);
}

TEST(GeneratorLoss, HandCase) {
  const auto d = batch_of({0.9, 0.2, 0.4, 0.7}, 2, 2);
  const auto mask = batch_of({1, 0, 1, 0}, 2, 2);
  const auto gen = batch_of({0.8, 0.5, 0.3, 0.6}, 2, 2);
  const auto obs = batch_of({1, 0, 0, 0}, 2, 2);
  const double adv = -(std::log(0.2) + std::log(0.7)) / 2.0;
  const double rec = std::sqrt((0.04 + 0.09) / 2.0);
  const auto l = generator_loss(d, mask, gen, obs, 10.0);
  EXPECT_NEAR(l.adversarial, adv, 1e-15);
  EXPECT_NEAR(l.reconstruction, rec, 1e-15);
  EXPECT_NEAR(l.value, adv + 10.0 * rec, 1e-13);
}

TEST(GeneratorLoss, PerfectFitAndFullMask) {
  const auto d = batch_of({0.9, 0.2, 0.4, 0.7}, 2, 2);
  const auto ones = batch_of({1, 1, 1, 1}, 2, 2);
  const auto obs = batch_of({1, 0, 0, 1}, 2, 2);
  const auto l = generator_loss(d, ones, obs, obs, 10.0);
  EXPECT_EQ(l.reconstruction, 0.0);
  EXPECT_EQ(l.adversarial, 0.0);
  const auto gen = batch_of({0.5, 0.5, 0.5, 0.5}, 2, 2);
  const auto l2 = generator_loss(d, ones, gen, obs, 3.0);
  EXPECT_NEAR(l2.value, 3.0 * 0.5, 1e-15);
}

TEST(ReconstructionLoss, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    nn::Batch gen(2, 1, 3, 4), obs(2, 1, 3, 4), mask(2, 1, 3, 4);
    for (std::size_t k = 0; k < gen.data.size(); ++k) {
      gen.data[k] = unit(rng);
      obs.data[k] = unit(rng) < 0.5 ? 1.0 : 0.0;
      mask.data[k] = unit(rng) < 0.6 ? 1.0 : 0.0;
    }
    mask.data[0] = 1.0;
    const auto l = reconstruction_rmse(gen, obs, mask);
    for (std::size_t k = 0; k < gen.data.size(); ++k) {
      auto p = gen, m = gen;
      p.data[k] += 1e-3;
      m.data[k] -= 1e-3;
      const double fd = (reconstruction_rmse(p, obs, mask).value - reconstruction_rmse(m, obs, mask).value) / 2e-3;
      EXPECT_LE(check::relative_error(l.grad.data[k], fd), 1e-4);
    }
  }
}

TEST(ReconstructionLoss, NoObservedEntries) {
  const auto zeros = batch_of({0, 0, 0, 0}, 2, 2);
  EXPECT_THROW(reconstruction_rmse(zeros, zeros, zeros), std::domain_error);
}

TEST(GeneratorForward, ShapesAndRangeForLessonShapes) {
  for (auto [u, n, m] : {std::tuple{118u, 9u, 9u}, {392u, 20u, 4u}, {500u, 6u, 4u}, {50u, 64u, 4u}}) {
    const auto t = synth(u, n, m);
    const auto model = make_model(n, m, quick());
    std::vector<LearnerMatrix> b{slice_learner(t, 0), slice_learner(t, 1)};
    const auto out = generator_forward(model, b, 9);
    EXPECT_EQ(out.rows, n);
    EXPECT_EQ(out.cols, m);
    for (double v : out.data) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    EXPECT_EQ(out.data, generator_forward(model, b, 9).data);
  }
}

TEST(GeneratorInput, Channels) {
  const auto t = synth(3, 4, 3);
  std::vector<LearnerMatrix> b{slice_learner(t, 2)};
  std::vector<Eigen::MatrixXd> noise{make_noise(4, 3, 0.01, 1)};
  const auto in = generator_input(b, noise);
  ASSERT_EQ(in.channels, 3u);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t m = 0; m < 3; ++m) {
      const bool obs = b[0].observed(i, m);
      EXPECT_EQ(in.at(0, 0, i, m), obs ? *b[0].value(i, m) : noise[0](i, m));
      EXPECT_EQ(in.at(0, 1, i, m), obs ? 1.0 : 0.0);
      EXPECT_EQ(in.at(0, 2, i, m), obs ? 0.0 : noise[0](i, m));
    }
}

TEST(GainConfig, Validation) {
  GainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.hint_rate = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.learning_rate = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.noise_scale = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(GainConfig{}.effective_batch_size(10), 10u);
  EXPECT_EQ(GainConfig{}.effective_batch_size(500), 64u);
}

TEST(Train, CurveLengthAndDeterminism) {
  const auto t = synth(40, 6, 4, 3);
  auto cfg = quick(4);
  cfg.early_stop_rmse = 1e-12;
  const auto a = train(t, cfg);
  const auto b = train(t, cfg);
  ASSERT_EQ(a.training_curve.size(), 4u);
  EXPECT_EQ(a.training_curve, b.training_curve);
  EXPECT_EQ(a.generator, b.generator);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(a.training_curve[k].iteration, k + 1);
}

TEST(Train, DefaultCapIsHundred) {
  EXPECT_EQ(GainConfig{}.max_iterations, 100u);
}

TEST(Train, EarlyStopAtFirstQualifyingIteration) {
  const auto t = synth(40, 6, 4, 3);
  auto cfg = quick(6);
  cfg.early_stop_rmse = 1e-12;
  const auto full = train(t, cfg);
  // Threshold equal to the third value: training must end right there.
  cfg.early_stop_rmse = full.training_curve[2].rmse;
  const auto stopped = train(t, cfg);
  std::size_t first = 0;
  while (full.training_curve[first].rmse > cfg.early_stop_rmse) ++first;
  ASSERT_EQ(stopped.training_curve.size(), first + 1);
  for (std::size_t k = 0; k < first; ++k) EXPECT_GT(stopped.training_curve[k].rmse, cfg.early_stop_rmse);
  EXPECT_LE(stopped.training_curve.back().rmse, cfg.early_stop_rmse);
}

TEST(Train, ObserverSeesEveryIteration) {
  const auto t = synth(20, 5, 3, 3);
  std::size_t calls = 0;
  train(t, quick(3), [&](const GainModel& m) { EXPECT_EQ(m.training_curve.size(), ++calls); });
  EXPECT_EQ(calls, 3u);
}

TEST(Train, ReducesObservedErrorOnRankOneData) {
  // Noiseless rank-1 binary pattern: learner u knows question i from attempt u % M on.
  const Dims d{48, 6, 4};
  std::vector<Cell> cells(d.size());
  for (std::size_t u = 0; u < d.learners; ++u)
    for (std::size_t i = 0; i < d.questions; ++i)
      for (std::size_t m = 0; m < d.attempts; ++m)
        cells[d.index(u, i, m)] = (u + i) % 3 == 0 || m >= u % d.attempts ? Cell::Correct : Cell::Incorrect;
  auto t = PerfTensor::filled(d, Cell::Missing).with_cells(cells);
  t = holdout_mask(t, 0.3, 2).train;
  auto cfg = quick(15);
  cfg.learning_rate = 1e-3;
  const auto model = train(t, cfg);
  EXPECT_LT(model.training_curve.back().rmse, model.training_curve.front().rmse);
}

TEST(Impute, PreservesObservedCellsForLessonShapes) {
  for (auto [u, n, m] : {std::tuple{118u, 9u, 9u}, {392u, 20u, 4u}, {500u, 6u, 4u}}) {
    const auto t = synth(u, n, m, 5);
    auto cfg = quick(1);
    const auto model = train(t, cfg);
    expect_preserves_observed(t, impute(model, t));
  }
}

TEST(Impute, ShapeMismatch) {
  const auto t = synth(10, 5, 3);
  const auto model = make_model(5, 4, quick());
  EXPECT_THROW(impute(model, t), std::invalid_argument);
}

TEST(Train, AllMissingIsDataError) {
  EXPECT_THROW(train(PerfTensor::filled({4, 3, 2}, Cell::Missing), quick()), DataError);
}

TEST(Train, HiddenOnlyDiscriminatorLossChangesTraining) {
  const auto t = synth(30, 5, 3, 2);
  auto cfg = quick(3);
  const auto a = train(t, cfg);
  cfg.d_loss_hidden_only = true;
  const auto b = train(t, cfg);
  const auto c = train(t, cfg);
  EXPECT_EQ(b.training_curve, c.training_curve);
  EXPECT_NE(a.discriminator, b.discriminator);
}

TEST(Checkpoint, SaveLoadRoundTrip) {
  const auto t = synth(30, 5, 3, 2);
  const auto model = train(t, quick(2));
  std::stringstream s;
  save_model(s, model);
  const auto back = load_model(s);
  EXPECT_EQ(back.generator, model.generator);
  EXPECT_EQ(back.discriminator, model.discriminator);
  EXPECT_EQ(back.training_curve, model.training_curve);
  EXPECT_EQ(back.generator_spec, model.generator_spec);
  EXPECT_FALSE(back.config.d_loss_hidden_only);
  EXPECT_EQ(impute(back, t), impute(model, t));
  auto flagged = model;
  flagged.config.d_loss_hidden_only = true;
  std::stringstream f;
  save_model(f, flagged);
  EXPECT_TRUE(load_model(f).config.d_loss_hidden_only);
  std::stringstream junk("lpimpute-gain 7\n");
  EXPECT_THROW(load_model(junk), DataError);
}
