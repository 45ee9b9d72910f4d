#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lpimpute/curve.hpp"
#include "lpimpute/factorization.hpp"
#include "lpimpute/gain.hpp"
#include "lpimpute/gan.hpp"
#include "lpimpute/tensor.hpp"

namespace lpimpute::eval {

struct CvPlan {
  std::size_t cycles = 5;
  std::size_t folds = 5;
  std::uint64_t base_seed = 1;

  void validate() const;
  /// Seed of cycle c's fold partition: base_seed + c.
  std::uint64_t partition_seed(std::size_t cycle) const { return base_seed + cycle; }
  /// Seed handed to the method for one (cycle, fold) fit.
  std::uint64_t method_seed(std::size_t cycle, std::size_t fold) const;
};

struct FoldAssignment {
  std::size_t folds = 0;
  std::vector<Coord> cells;         // every observed cell, in shuffled order
  std::vector<std::size_t> fold_of;  // parallel to `cells`

  std::vector<Coord> fold(std::size_t f) const;
  std::vector<std::size_t> sizes() const;
};

/// Seeded uniform shuffle of the observed coordinates dealt round-robin.
/// Throws DataError when there are fewer observed cells than folds.
FoldAssignment make_folds(const MaskTensor& mask, std::size_t folds, std::uint64_t seed);

struct CellValue {
  Coord coord;
  double value = 0.0;
};

/// Throws std::invalid_argument on an empty list, std::out_of_range on a bad coordinate.
double rmse(const DenseTensor& pred, std::span<const CellValue> truth);

/// Ranks 1..n with ties sharing the mean of their rank range.
std::vector<double> average_ranks(std::span<const double> xs);

/// Pearson correlation of average ranks, clamped to [-1, 1]. Throws
/// std::invalid_argument on a length mismatch, fewer than two values, or a
/// side whose values are all equal.
double spearman(std::span<const double> xs, std::span<const double> ys);

struct FitOutput {
  DenseTensor prediction;
  std::vector<CurvePoint> curve;  // empty for methods without training
};

/// Anything that can be trained on a tensor and impute every cell.
class Imputer {
 public:
  virtual ~Imputer() = default;
  virtual std::string name() const = 0;
  virtual FitOutput fit_impute(const PerfTensor& train, std::uint64_t seed) const = 0;
};

/// Global mean of the observed cells everywhere.
class MeanImputer final : public Imputer {
 public:
  std::string name() const override { return "mean"; }
  FitOutput fit_impute(const PerfTensor& train, std::uint64_t seed) const override;
};

class ConstantImputer final : public Imputer {
 public:
  explicit ConstantImputer(double value) : value_(value) {}
  std::string name() const override { return "constant"; }
  FitOutput fit_impute(const PerfTensor& train, std::uint64_t seed) const override;

 private:
  double value_;
};

/// Returns known truth values (truncated to the training tensor's attempts).
class OracleImputer final : public Imputer {
 public:
  explicit OracleImputer(DenseTensor truth) : truth_(std::move(truth)) {}
  std::string name() const override { return "oracle"; }
  FitOutput fit_impute(const PerfTensor& train, std::uint64_t seed) const override;

 private:
  DenseTensor truth_;
};

class GainImputer final : public Imputer {
 public:
  explicit GainImputer(gain::GainConfig cfg) : cfg_(cfg) {}
  std::string name() const override { return "gain"; }
  FitOutput fit_impute(const PerfTensor& train, std::uint64_t seed) const override;

 private:
  gain::GainConfig cfg_;
};

class GanImputer final : public Imputer {
 public:
  explicit GanImputer(gan::GanConfig cfg) : cfg_(cfg) {}
  std::string name() const override { return "gan"; }
  FitOutput fit_impute(const PerfTensor& train, std::uint64_t seed) const override;

 private:
  gan::GanConfig cfg_;
};

class TfImputer final : public Imputer {
 public:
  explicit TfImputer(factor::FitOptions opts) : opts_(opts) {}
  std::string name() const override { return "tf"; }
  FitOutput fit_impute(const PerfTensor& train, std::uint64_t seed) const override;

 private:
  factor::FitOptions opts_;
};

class CpdImputer final : public Imputer {
 public:
  explicit CpdImputer(factor::FitOptions opts) : opts_(opts) {}
  std::string name() const override { return "cpd"; }
  FitOutput fit_impute(const PerfTensor& train, std::uint64_t seed) const override;

 private:
  factor::FitOptions opts_;
};

class BptfImputer final : public Imputer {
 public:
  explicit BptfImputer(factor::BptfOptions opts) : opts_(opts) {}
  std::string name() const override { return "bptf"; }
  FitOutput fit_impute(const PerfTensor& train, std::uint64_t seed) const override;

 private:
  factor::BptfOptions opts_;
};

/// Hide one fold, fit on the rest and score the hidden cells against their
/// 0/1 values. Errors keep their type and gain a "cycle c, fold f" prefix.
struct FoldResult {
  double rmse = 0.0;
  std::vector<CurvePoint> curve;
};
FoldResult run_fold(const PerfTensor& t, const FoldAssignment& folds, std::size_t fold, const Imputer& method,
                    std::uint64_t seed, std::size_t cycle);

struct CvResult {
  std::vector<double> rmse;             // cycle-major, cycles x folds
  std::vector<CurvePoint> first_curve;  // curve of (cycle 0, fold 0)
};
CvResult run_cv_detailed(const PerfTensor& t, const Imputer& method, const CvPlan& plan);
std::vector<double> run_cv(const PerfTensor& t, const Imputer& method, const CvPlan& plan);

/// Sample mean and sample standard deviation (0 for a single value).
std::pair<double, double> mean_std(std::span<const double> xs);

struct Dataset {
  std::string name;
  PerfTensor tensor;
};

struct Method {
  std::string name;
  std::shared_ptr<const Imputer> imputer;
};

struct BenchmarkOptions {
  std::size_t jobs = 0;  // 0 selects the hardware concurrency
  bool continue_on_error = false;
};

struct RmseRow {
  std::string dataset;
  std::string method;
  std::size_t max_attempts = 0;
  double rmse_mean = 0.0;
  double rmse_std = 0.0;  // sample std over cycles x folds
  std::size_t runs = 0;
};

struct SpearmanRow {
  std::string dataset;
  std::string method;
  std::optional<double> rho;  // empty when undefined (ties on one side, < 2 points, failures)
};

struct SparsityRow {
  std::string dataset;
  std::size_t max_attempts = 0;
  double sparsity = 0.0;
};

struct CurveRow {
  std::string dataset;
  std::string method;
  std::vector<CurvePoint> curve;  // from (largest max_attempts, cycle 0, fold 0)
};

struct Failure {
  std::string dataset;
  std::string method;
  std::size_t max_attempts = 0;
  std::size_t cycle = 0;
  std::size_t fold = 0;
  std::string kind;  // config, data, numerical, other
  std::string message;
};

struct BenchmarkReport {
  CvPlan plan;
  std::vector<std::size_t> attempts;
  std::vector<RmseRow> rmse;
  std::vector<SpearmanRow> spearman;
  std::vector<SparsityRow> sparsity;
  std::vector<CurveRow> curves;
  std::vector<Failure> failures;
};

/// Full grid: every dataset x max_attempts truncation x method x cycle x fold.
/// Grid cells run on a worker pool; results are assembled by grid position so
/// the report does not depend on scheduling. Without continue_on_error the
/// first failure (in grid order) is rethrown with its context.
BenchmarkReport run_benchmark(std::span<const Dataset> datasets, std::span<const Method> methods,
                              std::span<const std::size_t> attempts, const CvPlan& plan,
                              const BenchmarkOptions& options = {});

}  // namespace lpimpute::eval
