#include "lpimpute/eval.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

#include "lpimpute/error.hpp"
#include "lpimpute/random.hpp"

namespace lpimpute::eval {

namespace {

constexpr std::uint64_t kMethodStream = 0x6d65;

/// Run `f`, re-throwing any failure as the same error category with `ctx` prepended.
template <class F>
auto with_context(const std::string& ctx, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(ctx + e.what());
  } catch (const DataError& e) {
    throw DataError(ctx + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(ctx + e.what());
  } catch (const std::out_of_range& e) {
    throw std::out_of_range(ctx + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(ctx + e.what());
  } catch (const std::domain_error& e) {
    throw std::domain_error(ctx + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(ctx + e.what());
  }
}

std::string kind_of(const std::exception_ptr& p) {
  try {
    std::rethrow_exception(p);
  } catch (const ConfigError&) {
    return "config";
  } catch (const DataError&) {
    return "data";
  } catch (const NumericalError&) {
    return "numerical";
  } catch (...) {
    return "other";
  }
}

std::string message_of(const std::exception_ptr& p) {
  try {
    std::rethrow_exception(p);
  } catch (const std::exception& e) {
    return e.what();
  } catch (...) {
    return "unknown error";
  }
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
  if (n == 0) throw DataError("no observed cells to average");
  return sum / static_cast<double>(n);
}

}  // namespace

void CvPlan::validate() const {
  if (cycles == 0) throw ConfigError("cv cycles must be positive");
  if (folds < 2) throw ConfigError("cv folds must be at least 2");
}

std::uint64_t CvPlan::method_seed(std::size_t cycle, std::size_t fold) const {
  return derive_seed(derive_seed(base_seed, kMethodStream), cycle, fold);
}

std::vector<Coord> FoldAssignment::fold(std::size_t f) const {
  if (f >= folds) throw std::out_of_range("fold index out of range");
  std::vector<Coord> out;
  for (std::size_t k = 0; k < cells.size(); ++k)
    if (fold_of[k] == f) out.push_back(cells[k]);
  return out;
}

std::vector<std::size_t> FoldAssignment::sizes() const {
  std::vector<std::size_t> out(folds, 0);
  for (auto f : fold_of) ++out[f];
  return out;
}

FoldAssignment make_folds(const MaskTensor& mask, std::size_t folds, std::uint64_t seed) {
  if (folds == 0) throw std::invalid_argument("make_folds: folds must be positive");
  const auto& d = mask.dims();
  FoldAssignment a;
  a.folds = folds;
  for (std::size_t u = 0; u < d.learners; ++u)
    for (std::size_t i = 0; i < d.questions; ++i)
      for (std::size_t m = 0; m < d.attempts; ++m)
        if (mask.at(u, i, m)) a.cells.push_back({u, i, m});
  if (a.cells.size() < folds) {
    throw DataError("make_folds: " + std::to_string(a.cells.size()) + " observed cells cannot fill " +
                    std::to_string(folds) + " folds");
  }
  Rng rng(seed);
  std::shuffle(a.cells.begin(), a.cells.end(), rng);
  a.fold_of.resize(a.cells.size());
  for (std::size_t k = 0; k < a.cells.size(); ++k) a.fold_of[k] = k % folds;
  return a;
}

double rmse(const DenseTensor& pred, std::span<const CellValue> truth) {
  if (truth.empty()) throw std::invalid_argument("rmse: empty cell list");
  const auto& d = pred.dims();
  double sum = 0.0;
  for (const auto& cv : truth) {
    if (cv.coord.u >= d.learners || cv.coord.i >= d.questions || cv.coord.m >= d.attempts) {
      throw std::out_of_range("rmse: coordinate outside " + to_string(d));
    }
    const double e = pred.at(cv.coord) - cv.value;
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(truth.size()));
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t lo = 0; lo < order.size();) {
    std::size_t hi = lo;
    while (hi + 1 < order.size() && xs[order[hi + 1]] == xs[order[lo]]) ++hi;
    const double r = 0.5 * static_cast<double>(lo + hi) + 1.0;
    for (std::size_t k = lo; k <= hi; ++k) ranks[order[k]] = r;
    lo = hi + 1;
  }
  return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("spearman: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("spearman: need at least two values");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < rx.size(); ++k) {
    sxy += (rx[k] - mx) * (ry[k] - my);
    sxx += (rx[k] - mx) * (rx[k] - mx);
    syy += (ry[k] - my) * (ry[k] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("spearman: undefined for all-equal input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

FitOutput MeanImputer::fit_impute(const PerfTensor& train, std::uint64_t) const {
  return {DenseTensor(train.dims(), observed_mean(train)), {}};
}

FitOutput ConstantImputer::fit_impute(const PerfTensor& train, std::uint64_t) const {
  return {DenseTensor(train.dims(), value_), {}};
}

FitOutput OracleImputer::fit_impute(const PerfTensor& train, std::uint64_t) const {
  const auto& d = train.dims();
  const auto& td = truth_.dims();
  if (d.learners != td.learners || d.questions != td.questions || d.attempts > td.attempts) {
    throw std::invalid_argument("oracle truth " + to_string(td) + " does not cover " + to_string(d));
  }
  DenseTensor out(d);
  for (std::size_t u = 0; u < d.learners; ++u)
    for (std::size_t i = 0; i < d.questions; ++i)
      for (std::size_t m = 0; m < d.attempts; ++m) out.at(u, i, m) = truth_.at(u, i, m);
  return {std::move(out), {}};
}

FitOutput GainImputer::fit_impute(const PerfTensor& train, std::uint64_t seed) const {
  auto cfg = cfg_;
  cfg.seed = seed;
  auto model = gain::train(train, cfg);
  return {gain::impute(model, train), std::move(model.training_curve)};
}

FitOutput GanImputer::fit_impute(const PerfTensor& train, std::uint64_t seed) const {
  auto cfg = cfg_;
  cfg.seed = seed;
  auto model = gan::gan_train(train, cfg);
  return {gan::gan_impute(model, train), std::move(model.training_curve)};
}

FitOutput TfImputer::fit_impute(const PerfTensor& train, std::uint64_t seed) const {
  auto opts = opts_;
  opts.seed = seed;
  auto model = factor::tf_fit(train, opts);
  return {factor::predict(model, train.dims()), std::move(model.trace.curve)};
}

FitOutput CpdImputer::fit_impute(const PerfTensor& train, std::uint64_t seed) const {
  auto opts = opts_;
  opts.seed = seed;
  auto model = factor::cpd_fit(train, opts);
  return {factor::predict(model, train.dims()), std::move(model.trace.curve)};
}

FitOutput BptfImputer::fit_impute(const PerfTensor& train, std::uint64_t seed) const {
  auto opts = opts_;
  opts.seed = seed;
  const auto model = factor::bptf_fit(train, opts);
  return {factor::predict(model, train.dims()), {}};
}

FoldResult run_fold(const PerfTensor& t, const FoldAssignment& folds, std::size_t fold, const Imputer& method,
                    std::uint64_t seed, std::size_t cycle) {
  const std::string ctx = "cycle " + std::to_string(cycle) + ", fold " + std::to_string(fold) + ": ";
  return with_context(ctx, [&] {
    const auto hidden = folds.fold(fold);
    const auto train = t.with_missing(hidden);
    auto out = method.fit_impute(train, seed);
    if (!(out.prediction.dims() == t.dims())) {
      throw std::invalid_argument(method.name() + " returned dims " + to_string(out.prediction.dims()));
    }
    std::vector<CellValue> truth;
    truth.reserve(hidden.size());
    for (const auto& c : hidden) truth.push_back({c, *numeric(t.at(c))});
    return FoldResult{rmse(out.prediction, truth), std::move(out.curve)};
  });
}

CvResult run_cv_detailed(const PerfTensor& t, const Imputer& method, const CvPlan& plan) {
  plan.validate();
  const auto mask = mask_of(t);
  CvResult res;
  for (std::size_t c = 0; c < plan.cycles; ++c) {
    const auto folds = make_folds(mask, plan.folds, plan.partition_seed(c));
    for (std::size_t f = 0; f < plan.folds; ++f) {
      auto r = run_fold(t, folds, f, method, plan.method_seed(c, f), c);
      res.rmse.push_back(r.rmse);
      if (c == 0 && f == 0) res.first_curve = std::move(r.curve);
    }
  }
  return res;
}

std::vector<double> run_cv(const PerfTensor& t, const Imputer& method, const CvPlan& plan) {
  return run_cv_detailed(t, method, plan).rmse;
}

std::pair<double, double> mean_std(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean_std: empty input");
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

BenchmarkReport run_benchmark(std::span<const Dataset> datasets, std::span<const Method> methods,
                              std::span<const std::size_t> attempts, const CvPlan& plan,
                              const BenchmarkOptions& options) {
  plan.validate();
  if (datasets.empty()) throw ConfigError("benchmark needs at least one dataset");
  if (methods.empty()) throw ConfigError("benchmark needs at least one method");
  if (attempts.empty()) throw ConfigError("benchmark needs at least one max_attempts value");
  for (const auto& m : methods)
    if (!m.imputer) throw ConfigError("method '" + m.name + "' has no imputer");
  for (const auto& ds : datasets)
    for (auto a : attempts)
      if (a == 0 || a > ds.tensor.dims().attempts) {
        throw ConfigError("max_attempts " + std::to_string(a) + " outside [1, " +
                          std::to_string(ds.tensor.dims().attempts) + "] for dataset '" + ds.name + "'");
      }

  BenchmarkReport report;
  report.plan = plan;
  report.attempts.assign(attempts.begin(), attempts.end());
  const std::size_t largest = *std::max_element(attempts.begin(), attempts.end());

  // Truncations and fold partitions are cheap; build them up front.
  struct Slice {
    PerfTensor tensor;
    std::vector<FoldAssignment> partitions;  // per cycle
  };
  std::vector<Slice> slices;  // dataset-major, then attempts
  for (const auto& ds : datasets) {
    for (auto a : attempts) {
      auto t = truncate_attempts(ds.tensor, a);
      report.sparsity.push_back({ds.name, a, sparsity_level(t)});
      const auto mask = mask_of(t);
      std::vector<FoldAssignment> parts;
      const std::string ctx = "dataset '" + ds.name + "', max_attempts " + std::to_string(a) + ": ";
      for (std::size_t c = 0; c < plan.cycles; ++c) {
        parts.push_back(with_context(ctx, [&] { return make_folds(mask, plan.folds, plan.partition_seed(c)); }));
      }
      slices.push_back({std::move(t), std::move(parts)});
    }
  }

  const std::size_t runs = plan.cycles * plan.folds;
  const std::size_t total = slices.size() * methods.size() * runs;
  std::vector<FoldResult> results(total);
  std::vector<std::exception_ptr> errors(total);

  // Task index -> (slice, method, cycle, fold), slice-major.
  const auto decode = [&](std::size_t k) {
    const std::size_t run = k % runs;
    const std::size_t method = (k / runs) % methods.size();
    const std::size_t slice = k / (runs * methods.size());
    return std::array<std::size_t, 4>{slice, method, run / plan.folds, run % plan.folds};
  };

  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  const auto worker = [&] {
    for (std::size_t k = next++; k < total && !stop; k = next++) {
      const auto [s, m, c, f] = decode(k);
      try {
        results[k] = run_fold(slices[s].tensor, slices[s].partitions[c], f, *methods[m].imputer,
                              plan.method_seed(c, f), c);
      } catch (...) {
        errors[k] = std::current_exception();
        if (!options.continue_on_error) stop = true;
      }
    }
  };
  std::size_t jobs = options.jobs ? options.jobs : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, total);
  {
    std::vector<std::jthread> pool;
    for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
  }

  for (std::size_t k = 0; k < total; ++k) {
    if (!errors[k]) continue;
    const auto [s, m, c, f] = decode(k);
    const auto& ds = datasets[s / attempts.size()];
    const auto a = attempts[s % attempts.size()];
    const std::string ctx =
        "dataset '" + ds.name + "', method '" + methods[m].name + "', max_attempts " + std::to_string(a) + ", ";
    if (!options.continue_on_error) {
      with_context(ctx, [&] { std::rethrow_exception(errors[k]); });
    }
    report.failures.push_back({ds.name, methods[m].name, a, c, f, kind_of(errors[k]), ctx + message_of(errors[k])});
  }

  for (std::size_t d = 0; d < datasets.size(); ++d) {
    for (std::size_t m = 0; m < methods.size(); ++m) {
      std::vector<double> xs, ys;
      bool complete = true;
      bool have_curve = false;
      for (std::size_t ai = 0; ai < attempts.size(); ++ai) {
        const std::size_t s = d * attempts.size() + ai;
        const std::size_t base = (s * methods.size() + m) * runs;
        std::vector<double> vals;
        for (std::size_t r = 0; r < runs; ++r)
          if (!errors[base + r]) vals.push_back(results[base + r].rmse);
        if (vals.size() != runs) {
          complete = false;
          continue;
        }
        const auto [mean, sd] = mean_std(vals);
        report.rmse.push_back({datasets[d].name, methods[m].name, attempts[ai], mean, sd, runs});
        xs.push_back(static_cast<double>(attempts[ai]));
        ys.push_back(mean);
        if (attempts[ai] == largest && !have_curve) {
          report.curves.push_back({datasets[d].name, methods[m].name, results[base].curve});
          have_curve = true;
        }
      }
      std::optional<double> rho;
      if (complete && xs.size() >= 2) {
        try {
          rho = spearman(xs, ys);
        } catch (const std::invalid_argument&) {
        }
      }
      report.spearman.push_back({datasets[d].name, methods[m].name, rho});
    }
  }
  return report;
}

}  // namespace lpimpute::eval
