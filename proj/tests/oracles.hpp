#pragma once

// Brute-force reference computations used as independent oracles.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lpimpute/eval.hpp"
#include "lpimpute/tensor.hpp"

namespace lpimpute::check {

/// Rank of each value: 1 + #smaller + (#equal - 1) / 2, by direct counting.
inline std::vector<double> brute_ranks(std::span<const double> xs) {
  std::vector<double> r(xs.size());
  for (std::size_t a = 0; a < xs.size(); ++a) {
    double less = 0.0, equal = 0.0;
    for (double x : xs) {
      less += x < xs[a];
      equal += x == xs[a];
    }
    r[a] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

inline double brute_pearson(std::span<const double> xs, std::span<const double> ys) {
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    mx += xs[k];
    my += ys[k];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    sxy += (xs[k] - mx) * (ys[k] - my);
    sxx += (xs[k] - mx) * (xs[k] - mx);
    syy += (ys[k] - my) * (ys[k] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline double brute_spearman(std::span<const double> xs, std::span<const double> ys) {
  const auto rx = brute_ranks(xs);
  const auto ry = brute_ranks(ys);
  return brute_pearson(rx, ry);
}

/// Missing cells over all cells, by a direct scan.
inline double brute_sparsity(const PerfTensor& t) {
  std::size_t missing = 0;
  const auto& d = t.dims();
  for (std::size_t u = 0; u < d.learners; ++u)
    for (std::size_t i = 0; i < d.questions; ++i)
      for (std::size_t m = 0; m < d.attempts; ++m) missing += t.at(u, i, m) == Cell::Missing;
  return static_cast<double>(missing) / static_cast<double>(d.size());
}

/// Predicts |truth - offset * M| for every cell: held-out RMSE is exactly
/// offset * M, so it rises strictly with the number of attempts.
class DriftingImputer final : public eval::Imputer {
 public:
  DriftingImputer(PerfTensor truth, double offset) : truth_(std::move(truth)), offset_(offset) {}
  std::string name() const override { return "drifting"; }
  eval::FitOutput fit_impute(const PerfTensor& train, std::uint64_t) const override {
    const auto& d = train.dims();
    DenseTensor out(d);
    const double e = offset_ * static_cast<double>(d.attempts);
    for (std::size_t u = 0; u < d.learners; ++u)
      for (std::size_t i = 0; i < d.questions; ++i)
        for (std::size_t m = 0; m < d.attempts; ++m) out.at(u, i, m) = std::abs(*numeric(truth_.at(u, i, m)) - e);
    return {std::move(out), {}};
  }

 private:
  PerfTensor truth_;
  double offset_;
};

}  // namespace lpimpute::check
