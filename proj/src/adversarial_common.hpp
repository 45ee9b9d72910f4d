#pragma once

// Helpers shared by the GAIN and GAN trainers.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lpimpute/error.hpp"
#include "lpimpute/neural.hpp"
#include "lpimpute/tensor.hpp"

namespace lpimpute::detail {

inline std::vector<LearnerMatrix> all_slices(const PerfTensor& t) {
  std::vector<LearnerMatrix> out;
  out.reserve(t.dims().learners);
  for (std::size_t u = 0; u < t.dims().learners; ++u) out.push_back(slice_learner(t, u));
  return out;
}

/// Observed values with missing entries set to `fill` (1 channel).
inline nn::Batch values_batch(std::span<const LearnerMatrix> batch, double fill) {
  const auto rows = batch.front().rows, cols = batch.front().cols;
  nn::Batch out(batch.size(), 1, rows, cols);
  for (std::size_t b = 0; b < batch.size(); ++b)
    for (std::size_t k = 0; k < rows * cols; ++k) out.data[b * rows * cols + k] = batch[b].values[k].value_or(fill);
  return out;
}

inline nn::Batch mask_batch(std::span<const LearnerMatrix> batch) {
  const auto rows = batch.front().rows, cols = batch.front().cols;
  nn::Batch out(batch.size(), 1, rows, cols);
  for (std::size_t b = 0; b < batch.size(); ++b)
    for (std::size_t k = 0; k < rows * cols; ++k) out.data[b * rows * cols + k] = batch[b].mask[k];
  return out;
}

/// Stack single-channel batches along the channel axis.
inline nn::Batch concat_channels(std::span<const nn::Batch* const> parts) {
  const auto& first = *parts.front();
  nn::Batch out(first.batch, parts.size(), first.rows, first.cols);
  const auto hw = first.rows * first.cols;
  for (std::size_t b = 0; b < first.batch; ++b)
    for (std::size_t c = 0; c < parts.size(); ++c)
      for (std::size_t k = 0; k < hw; ++k) out.data[(b * parts.size() + c) * hw + k] = parts[c]->data[b * hw + k];
  return out;
}

/// Channel `c` of a multi-channel batch as a single-channel batch.
inline nn::Batch channel(const nn::Batch& in, std::size_t c) {
  nn::Batch out(in.batch, 1, in.rows, in.cols);
  const auto hw = in.rows * in.cols;
  for (std::size_t b = 0; b < in.batch; ++b)
    for (std::size_t k = 0; k < hw; ++k) out.data[b * hw + k] = in.data[(b * in.channels + c) * hw + k];
  return out;
}

/// mask * observed + (1 - mask) * generated.
inline nn::Batch merge(const nn::Batch& observed, const nn::Batch& mask, const nn::Batch& generated) {
  nn::Batch out = generated;
  for (std::size_t k = 0; k < out.data.size(); ++k) {
    if (mask.data[k] != 0.0) out.data[k] = observed.data[k];
  }
  return out;
}

inline bool any_observed(const nn::Batch& mask) {
  for (double v : mask.data)
    if (v != 0.0) return true;
  return false;
}

inline std::vector<LearnerMatrix> gather(const std::vector<LearnerMatrix>& slices, std::span<const std::size_t> idx) {
  std::vector<LearnerMatrix> out;
  out.reserve(idx.size());
  for (auto k : idx) out.push_back(slices[k]);
  return out;
}

/// Running sum of squared errors over observed cells.
struct SquaredError {
  double sum = 0.0;
  std::size_t count = 0;

  void add(const nn::Batch& generated, const nn::Batch& observed, const nn::Batch& mask) {
    for (std::size_t k = 0; k < generated.data.size(); ++k) {
      if (mask.data[k] == 0.0) continue;
      const double e = generated.data[k] - observed.data[k];
      sum += e * e;
      ++count;
    }
  }
  double rmse() const { return count ? std::sqrt(sum / static_cast<double>(count)) : 0.0; }
};

inline void require_finite(double v, const char* what, std::size_t iteration) {
  if (!std::isfinite(v)) {
    throw NumericalError(std::string("non-finite ") + what + " at iteration " + std::to_string(iteration));
  }
}

}  // namespace lpimpute::detail
