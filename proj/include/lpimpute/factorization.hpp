#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "lpimpute/curve.hpp"
#include "lpimpute/tensor.hpp"

namespace lpimpute::factor {

/// Settings shared by tf_fit and cpd_fit.
struct FitOptions {
  std::size_t rank = 3;
  double mono_weight = 0.1;  // lambda on the attempt-monotonicity hinge
  double learning_rate = 1.0;  // initial step, adapted per factor block
  std::size_t iterations = 100;
  std::uint64_t seed = 1;

  /// Throws ConfigError.
  void validate() const;
};

/// Per-iteration record of a gradient-descent fit.
struct FitTrace {
  std::vector<double> loss;         // objective after each iteration
  std::vector<CurvePoint> curve;    // observed-cell RMSE after each iteration
  std::size_t rejected_steps = 0;   // steps undone because the loss rose
};

struct TfModel {
  Dims dims;
  std::size_t rank = 0;
  double mono_weight = 0.0;
  Eigen::MatrixXd learner_factors;  // U x d
  Eigen::MatrixXd knowledge;        // d x (N*M), column i*M + m
  FitTrace trace;

  double raw(std::size_t u, std::size_t i, std::size_t m) const;
};

struct CpdModel {
  Dims dims;
  std::size_t rank = 0;
  Eigen::MatrixXd learners;   // A: U x d
  Eigen::MatrixXd questions;  // B: N x d
  Eigen::MatrixXd attempts;   // C: M x d
  Eigen::VectorXd weights;    // lambda_k
  FitTrace trace;

  double raw(std::size_t u, std::size_t i, std::size_t m) const;
};

/// Starting factors for cpd_fit (weights are taken as 1).
struct CpdInit {
  Eigen::MatrixXd learners;
  Eigen::MatrixXd questions;
  Eigen::MatrixXd attempts;
};

struct BptfOptions {
  std::size_t rank = 3;
  std::size_t burn_in = 50;
  std::size_t samples = 50;
  double beta0 = 1.0;         // Gaussian-Wishart mean confidence; mu0 = 0, W0 = I
  double nu0_extra = 1.0;     // nu0 = rank + nu0_extra
  double alpha_shape = 2.0;   // Gamma prior on the observation precision
  std::uint64_t seed = 1;

  void validate() const;
};

struct BptfSample {
  Eigen::MatrixXd learners;   // d x U
  Eigen::MatrixXd questions;  // d x N
  Eigen::MatrixXd attempts;   // d x M
  double precision = 1.0;
};

struct BptfModel {
  Dims dims;
  BptfOptions options;
  std::vector<BptfSample> samples;
  std::size_t regularizations = 0;  // conditionals that needed eps*I to factor

  double raw(std::size_t u, std::size_t i, std::size_t m) const;  // mean over samples
};

/// Minimise (sum_obs (T - tau)^2 + lambda * sum hinge(T[m] - T[m+1])^2) / n_obs
/// by block gradient descent. Each block's step is halved and the step undone
/// whenever the loss would rise, and grown by 1.2 after an accepted step, so
/// trace.loss never increases. Throws NumericalError if the loss turns
/// non-finite, ConfigError on bad options, DataError without observed cells.
TfModel tf_fit(const Observations& obs, const FitOptions& opts);
TfModel tf_fit(const PerfTensor& t, const FitOptions& opts);

/// Same objective with T = sum_k A[u,k] B[i,k] C[m,k]. Weights stay at 1
/// during optimisation; columns are normalised into them afterwards.
CpdModel cpd_fit(const Observations& obs, const FitOptions& opts, const CpdInit* init = nullptr);
CpdModel cpd_fit(const PerfTensor& t, const FitOptions& opts, const CpdInit* init = nullptr);

/// Gibbs sampler conditioned on observed cells only.
BptfModel bptf_fit(const Observations& obs, const BptfOptions& opts);
BptfModel bptf_fit(const PerfTensor& t, const BptfOptions& opts);

/// Unclamped reconstruction over every cell.
DenseTensor reconstruct(const TfModel& model);
DenseTensor reconstruct(const CpdModel& model);
DenseTensor reconstruct(const BptfModel& model);
DenseTensor reconstruct(const BptfSample& sample, const Dims& dims);

/// Reconstruction clamped to [0,1]. Throws std::invalid_argument if `dims`
/// differ from the model's.
DenseTensor predict(const TfModel& model, const Dims& dims);
DenseTensor predict(const CpdModel& model, const Dims& dims);
DenseTensor predict(const BptfModel& model, const Dims& dims);

/// Variance of the sampled reconstructions plus the mean noise variance 1/alpha.
DenseTensor bptf_predictive_variance(const BptfModel& model);

/// sum over (u,i,m<M-1) of max(0, T[u,i,m] - T[u,i,m+1])^2.
double monotonicity_penalty(const DenseTensor& t);

/// `# shape R C` followed by R comma-separated rows (%.17g).
void write_matrix(std::ostream& out, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix(std::istream& in);

}  // namespace lpimpute::factor
