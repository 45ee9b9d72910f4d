#include "lpimpute/factorization.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "lpimpute/error.hpp"
#include "lpimpute/random.hpp"

namespace lpimpute::factor {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kGrow = 1.2;
constexpr double kMinStep = 1e-14;

/// Observed values and weights as U x (N*M) matrices.
struct Target {
  Dims dims;
  Eigen::MatrixXd values;  // 0 where missing
  Eigen::MatrixXd weight;  // 1 observed, 0 missing
  double n_obs = 0.0;
};

Target make_target(const Observations& obs) {
  const auto& d = obs.dims;
  if (obs.values.size() != d.size() || obs.mask.size() != d.size()) {
    throw std::invalid_argument("observations do not match their dims");
  }
  Target t{d, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d.learners), static_cast<Eigen::Index>(d.slice_size())),
           Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d.learners), static_cast<Eigen::Index>(d.slice_size())), 0.0};
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (!obs.mask[k]) continue;
    const auto r = static_cast<Eigen::Index>(k / d.slice_size());
    const auto c = static_cast<Eigen::Index>(k % d.slice_size());
    t.values(r, c) = obs.values[k];
    t.weight(r, c) = 1.0;
    t.n_obs += 1.0;
  }
  if (t.n_obs == 0.0) throw DataError("cannot fit a tensor with no observed cells");
  return t;
}

struct Objective {
  double loss = 0.0;
  double rmse = 0.0;
};

/// Loss of prediction P (U x N*M); fills `grad` with d loss / d P when given.
Objective evaluate(const Target& t, double lambda, const Eigen::MatrixXd& p, Eigen::MatrixXd* grad) {
  const Eigen::MatrixXd r = (p - t.values).cwiseProduct(t.weight);
  const double sq = r.squaredNorm();
  double hinge = 0.0;
  if (grad) *grad = 2.0 * r;
  const auto M = t.dims.attempts;
  if (lambda > 0.0 && M > 1) {
    for (Eigen::Index u = 0; u < p.rows(); ++u)
      for (std::size_t i = 0; i < t.dims.questions; ++i)
        for (std::size_t m = 0; m + 1 < M; ++m) {
          const auto c = static_cast<Eigen::Index>(i * M + m);
          const double h = p(u, c) - p(u, c + 1);
          if (h <= 0.0) continue;
          hinge += h * h;
          if (grad) {
            (*grad)(u, c) += 2.0 * lambda * h;
            (*grad)(u, c + 1) -= 2.0 * lambda * h;
          }
        }
  }
  if (grad) *grad /= t.n_obs;
  return {(sq + lambda * hinge) / t.n_obs, std::sqrt(sq / t.n_obs)};
}

struct Block {
  Eigen::MatrixXd* x;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd& grad_p)> grad;
  double step;
};

/// Safeguarded block gradient descent shared by TF and CPD.
FitTrace descend(const Target& t, const FitOptions& opts, std::vector<Block>& blocks,
                 const std::function<Eigen::MatrixXd()>& prediction) {
  FitTrace trace;
  Eigen::MatrixXd grad_p;
  auto current = evaluate(t, opts.mono_weight, prediction(), nullptr);
  if (!std::isfinite(current.loss)) throw NumericalError("non-finite loss at iteration 0");
  for (std::size_t it = 1; it <= opts.iterations; ++it) {
    for (auto& b : blocks) {
      evaluate(t, opts.mono_weight, prediction(), &grad_p);
      const Eigen::MatrixXd g = b.grad(grad_p);
      if (!g.allFinite()) throw NumericalError("non-finite gradient at iteration " + std::to_string(it));
      while (b.step >= kMinStep) {
        const Eigen::MatrixXd saved = *b.x;
        *b.x -= b.step * g;
        const auto trial = evaluate(t, opts.mono_weight, prediction(), nullptr);
        if (std::isfinite(trial.loss) && trial.loss <= current.loss) {
          current = trial;
          b.step *= kGrow;
          break;
        }
        *b.x = saved;
        b.step *= 0.5;
        ++trace.rejected_steps;
      }
    }
    if (!std::isfinite(current.loss)) throw NumericalError("non-finite loss at iteration " + std::to_string(it));
    trace.loss.push_back(current.loss);
    trace.curve.push_back({it, current.rmse});
  }
  return trace;
}

Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, double sd, Rng& rng) {
  std::normal_distribution<double> dist(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

/// Rows i*M + m hold B.row(i) .* C.row(m).
Eigen::MatrixXd khatri_rao(const Eigen::MatrixXd& b, const Eigen::MatrixXd& c) {
  Eigen::MatrixXd kr(b.rows() * c.rows(), b.cols());
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index m = 0; m < c.rows(); ++m) kr.row(i * c.rows() + m) = b.row(i).cwiseProduct(c.row(m));
  return kr;
}

DenseTensor from_matrix(const Dims& dims, const Eigen::MatrixXd& p) {
  std::vector<double> v(dims.size());
  Eigen::Map<RowMajor>(v.data(), p.rows(), p.cols()) = p;
  return DenseTensor(dims, std::move(v));
}

void require_dims(const Dims& model, const Dims& dims) {
  if (!(model == dims)) {
    throw std::invalid_argument("model dims " + to_string(model) + " do not match tensor dims " + to_string(dims));
  }
}

DenseTensor clamped(DenseTensor t) { return clamp01(t); }

}  // namespace

void FitOptions::validate() const {
  if (rank == 0) throw ConfigError("rank must be at least 1");
  if (!(mono_weight >= 0.0) || !std::isfinite(mono_weight)) throw ConfigError("mono_weight must be >= 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (iterations == 0) throw ConfigError("iterations must be positive");
}

void BptfOptions::validate() const {
  if (rank == 0) throw ConfigError("rank must be at least 1");
  if (samples == 0) throw ConfigError("samples must be at least 1");
  if (!(beta0 > 0.0)) throw ConfigError("beta0 must be > 0");
  if (!(nu0_extra > 0.0)) throw ConfigError("nu0_extra must be > 0");
  if (!(alpha_shape > 0.0)) throw ConfigError("alpha_shape must be > 0");
}

double TfModel::raw(std::size_t u, std::size_t i, std::size_t m) const {
  return learner_factors.row(static_cast<Eigen::Index>(u))
      .dot(knowledge.col(static_cast<Eigen::Index>(i * dims.attempts + m)));
}

double CpdModel::raw(std::size_t u, std::size_t i, std::size_t m) const {
  double s = 0.0;
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    s += weights(k) * learners(static_cast<Eigen::Index>(u), k) * questions(static_cast<Eigen::Index>(i), k) *
         attempts(static_cast<Eigen::Index>(m), k);
  }
  return s;
}

double BptfModel::raw(std::size_t u, std::size_t i, std::size_t m) const {
  double s = 0.0;
  for (const auto& smp : samples) {
    s += smp.learners.col(static_cast<Eigen::Index>(u))
             .cwiseProduct(smp.questions.col(static_cast<Eigen::Index>(i)))
             .dot(smp.attempts.col(static_cast<Eigen::Index>(m)));
  }
  return s / static_cast<double>(samples.size());
}

TfModel tf_fit(const Observations& obs, const FitOptions& opts) {
  opts.validate();
  const auto target = make_target(obs);
  const auto d = static_cast<Eigen::Index>(opts.rank);
  const auto& dims = obs.dims;
  Rng rng(opts.seed);
  const double sd = 1.0 / std::sqrt(static_cast<double>(opts.rank));

  TfModel model;
  model.dims = dims;
  model.rank = opts.rank;
  model.mono_weight = opts.mono_weight;
  model.learner_factors = normal_matrix(static_cast<Eigen::Index>(dims.learners), d, sd, rng);
  model.knowledge = normal_matrix(d, static_cast<Eigen::Index>(dims.slice_size()), sd, rng);

  auto& s = model.learner_factors;
  auto& k = model.knowledge;
  std::vector<Block> blocks{
      {&s, [&](const Eigen::MatrixXd& g) -> Eigen::MatrixXd { return g * k.transpose(); }, opts.learning_rate},
      {&k, [&](const Eigen::MatrixXd& g) -> Eigen::MatrixXd { return s.transpose() * g; }, opts.learning_rate},
  };
  model.trace = descend(target, opts, blocks, [&] { return Eigen::MatrixXd(s * k); });
  return model;
}

TfModel tf_fit(const PerfTensor& t, const FitOptions& opts) { return tf_fit(Observations::from(t), opts); }

CpdModel cpd_fit(const Observations& obs, const FitOptions& opts, const CpdInit* init) {
  opts.validate();
  const auto target = make_target(obs);
  const auto d = static_cast<Eigen::Index>(opts.rank);
  const auto& dims = obs.dims;
  const auto U = static_cast<Eigen::Index>(dims.learners);
  const auto N = static_cast<Eigen::Index>(dims.questions);
  const auto M = static_cast<Eigen::Index>(dims.attempts);

  CpdModel model;
  model.dims = dims;
  model.rank = opts.rank;
  if (init) {
    if (init->learners.rows() != U || init->questions.rows() != N || init->attempts.rows() != M ||
        init->learners.cols() != d || init->questions.cols() != d || init->attempts.cols() != d) {
      throw std::invalid_argument("cpd_fit: initial factors do not match dims and rank");
    }
    model.learners = init->learners;
    model.questions = init->questions;
    model.attempts = init->attempts;
  } else {
    Rng rng(opts.seed);
    const double sd = 1.0 / std::sqrt(static_cast<double>(opts.rank));
    model.learners = normal_matrix(U, d, sd, rng);
    model.questions = normal_matrix(N, d, sd, rng);
    model.attempts = normal_matrix(M, d, sd, rng);
  }

  auto& a = model.learners;
  auto& b = model.questions;
  auto& c = model.attempts;
  const auto grad_b = [&](const Eigen::MatrixXd& g) -> Eigen::MatrixXd {
    const Eigen::MatrixXd h = g.transpose() * a;  // (N*M) x d
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(N, d);
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index m = 0; m < M; ++m) out.row(i) += h.row(i * M + m).cwiseProduct(c.row(m));
    return out;
  };
  const auto grad_c = [&](const Eigen::MatrixXd& g) -> Eigen::MatrixXd {
    const Eigen::MatrixXd h = g.transpose() * a;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(M, d);
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index m = 0; m < M; ++m) out.row(m) += h.row(i * M + m).cwiseProduct(b.row(i));
    return out;
  };
  std::vector<Block> blocks{
      {&a, [&](const Eigen::MatrixXd& g) -> Eigen::MatrixXd { return g * khatri_rao(b, c); }, opts.learning_rate},
      {&b, grad_b, opts.learning_rate},
      {&c, grad_c, opts.learning_rate},
  };
  model.trace = descend(target, opts, blocks, [&] { return Eigen::MatrixXd(a * khatri_rao(b, c).transpose()); });

  model.weights = Eigen::VectorXd::Ones(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    for (auto* f : {&a, &b, &c}) {
      const double n = f->col(k).norm();
      if (n > 0.0) {
        model.weights(k) *= n;
        f->col(k) /= n;
      } else {
        model.weights(k) = 0.0;
      }
    }
  }
  return model;
}

CpdModel cpd_fit(const PerfTensor& t, const FitOptions& opts, const CpdInit* init) {
  return cpd_fit(Observations::from(t), opts, init);
}

namespace {

struct Entry {
  std::size_t u, i, m;
  double value;
};

/// Draw from Wishart(scale, dof) by the Bartlett decomposition.
Eigen::MatrixXd sample_wishart(const Eigen::MatrixXd& scale, double dof, Rng& rng) {
  const auto d = scale.rows();
  const Eigen::MatrixXd l = scale.llt().matrixL();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < d; ++i) {
    std::chi_squared_distribution<double> chi2(dof - static_cast<double>(i));
    a(i, i) = std::sqrt(chi2(rng));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = normal(rng);
  }
  const Eigen::MatrixXd la = l * a;
  return la * la.transpose();
}

/// Sample x ~ N(precision^-1 * b, precision^-1). Adds eps*I until the
/// precision factors, counting each such repair.
Eigen::VectorXd sample_gaussian(Eigen::MatrixXd precision, const Eigen::VectorXd& b, Rng& rng,
                                std::size_t& repairs) {
  const auto d = precision.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  double eps = 1e-10 * std::max(1.0, precision.diagonal().cwiseAbs().maxCoeff());
  while (llt.info() != Eigen::Success) {
    precision.diagonal().array() += eps;
    eps *= 10.0;
    ++repairs;
    llt.compute(precision);
    if (!std::isfinite(eps)) throw NumericalError("conditional precision cannot be regularised");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(d);
  for (Eigen::Index k = 0; k < d; ++k) z(k) = normal(rng);
  const Eigen::VectorXd mean = llt.solve(b);
  return mean + llt.matrixU().solve(z);
}

struct Hyper {
  Eigen::VectorXd mu;
  Eigen::MatrixXd lambda;
};

Hyper sample_hyper(const Eigen::MatrixXd& x, const BptfOptions& o, Rng& rng, std::size_t& repairs) {
  const auto d = x.rows();
  const double n = static_cast<double>(x.cols());
  const Eigen::VectorXd mean = x.rowwise().mean();
  const Eigen::MatrixXd centered = x.colwise() - mean;
  const Eigen::MatrixXd s = centered * centered.transpose() / n;
  const double beta = o.beta0 + n;
  const double nu = static_cast<double>(d) + o.nu0_extra + n;
  const Eigen::VectorXd mu_star = n * mean / beta;  // mu0 = 0
  const Eigen::MatrixXd w_inv = Eigen::MatrixXd::Identity(d, d) + n * s + (o.beta0 * n / beta) * mean * mean.transpose();
  Eigen::MatrixXd w = w_inv.llt().solve(Eigen::MatrixXd::Identity(d, d));
  w = 0.5 * (w + w.transpose());
  Hyper h;
  h.lambda = sample_wishart(w, nu, rng);
  h.mu = sample_gaussian(beta * h.lambda, beta * h.lambda * mu_star, rng, repairs);
  return h;
}

}  // namespace

BptfModel bptf_fit(const Observations& obs, const BptfOptions& opts) {
  opts.validate();
  const auto& dims = obs.dims;
  if (obs.values.size() != dims.size() || obs.mask.size() != dims.size()) {
    throw std::invalid_argument("observations do not match their dims");
  }
  std::vector<Entry> entries;
  for (std::size_t u = 0; u < dims.learners; ++u)
    for (std::size_t i = 0; i < dims.questions; ++i)
      for (std::size_t m = 0; m < dims.attempts; ++m) {
        const auto k = dims.index(u, i, m);
        if (obs.mask[k]) entries.push_back({u, i, m, obs.values[k]});
      }
  if (entries.empty()) throw DataError("cannot fit a tensor with no observed cells");

  // Per-mode lists of entry indices.
  std::array<std::vector<std::vector<std::size_t>>, 3> by_mode{
      std::vector<std::vector<std::size_t>>(dims.learners), std::vector<std::vector<std::size_t>>(dims.questions),
      std::vector<std::vector<std::size_t>>(dims.attempts)};
  double mean = 0.0;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    by_mode[0][entries[e].u].push_back(e);
    by_mode[1][entries[e].i].push_back(e);
    by_mode[2][entries[e].m].push_back(e);
    mean += entries[e].value;
  }
  const double n = static_cast<double>(entries.size());
  mean /= n;
  double var = 0.0;
  for (const auto& e : entries) var += (e.value - mean) * (e.value - mean);
  var /= n;
  const double alpha_rate0 = 2.0 * std::max(var, 1e-4);

  const auto d = static_cast<Eigen::Index>(opts.rank);
  Rng rng(opts.seed);
  const double sd = 1.0 / std::sqrt(static_cast<double>(opts.rank));
  std::array<Eigen::MatrixXd, 3> f{normal_matrix(d, static_cast<Eigen::Index>(dims.learners), sd, rng),
                                   normal_matrix(d, static_cast<Eigen::Index>(dims.questions), sd, rng),
                                   normal_matrix(d, static_cast<Eigen::Index>(dims.attempts), sd, rng)};
  const auto coord = [](const Entry& e, int mode) { return mode == 0 ? e.u : mode == 1 ? e.i : e.m; };

  BptfModel model;
  model.dims = dims;
  model.options = opts;
  double alpha = 1.0;
  const std::size_t total = opts.burn_in + opts.samples;
  for (std::size_t sweep = 0; sweep < total; ++sweep) {
    double sq = 0.0;
    for (const auto& e : entries) {
      const double p = f[0].col(static_cast<Eigen::Index>(e.u))
                           .cwiseProduct(f[1].col(static_cast<Eigen::Index>(e.i)))
                           .dot(f[2].col(static_cast<Eigen::Index>(e.m)));
      sq += (p - e.value) * (p - e.value);
    }
    std::gamma_distribution<double> gamma(opts.alpha_shape + 0.5 * n, 1.0 / (alpha_rate0 + 0.5 * sq));
    alpha = gamma(rng);
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
      throw NumericalError("invalid precision sample at sweep " + std::to_string(sweep));
    }

    for (int mode = 0; mode < 3; ++mode) {
      const auto hyper = sample_hyper(f[mode], opts, rng, model.regularizations);
      const Eigen::VectorXd prior_b = hyper.lambda * hyper.mu;
      const int o1 = (mode + 1) % 3, o2 = (mode + 2) % 3;
      for (std::size_t r = 0; r < by_mode[mode].size(); ++r) {
        Eigen::MatrixXd prec = hyper.lambda;
        Eigen::VectorXd b = prior_b;
        for (auto e : by_mode[mode][r]) {
          const auto& en = entries[e];
          const Eigen::VectorXd q = f[o1].col(static_cast<Eigen::Index>(coord(en, o1)))
                                        .cwiseProduct(f[o2].col(static_cast<Eigen::Index>(coord(en, o2))));
          prec.noalias() += alpha * q * q.transpose();
          b.noalias() += alpha * en.value * q;
        }
        f[mode].col(static_cast<Eigen::Index>(r)) = sample_gaussian(prec, b, rng, model.regularizations);
      }
      if (!f[mode].allFinite()) throw NumericalError("non-finite factor sample at sweep " + std::to_string(sweep));
    }
    if (sweep >= opts.burn_in) model.samples.push_back({f[0], f[1], f[2], alpha});
  }
  return model;
}

BptfModel bptf_fit(const PerfTensor& t, const BptfOptions& opts) { return bptf_fit(Observations::from(t), opts); }

DenseTensor reconstruct(const TfModel& model) {
  return from_matrix(model.dims, model.learner_factors * model.knowledge);
}

DenseTensor reconstruct(const CpdModel& model) {
  const Eigen::MatrixXd weighted = model.learners * model.weights.asDiagonal();
  return from_matrix(model.dims, weighted * khatri_rao(model.questions, model.attempts).transpose());
}

DenseTensor reconstruct(const BptfSample& s, const Dims& dims) {
  return from_matrix(dims, s.learners.transpose() *
                               khatri_rao(s.questions.transpose(), s.attempts.transpose()).transpose());
}

DenseTensor reconstruct(const BptfModel& model) {
  if (model.samples.empty()) throw std::invalid_argument("BPTF model has no samples");
  DenseTensor sum(model.dims, 0.0);
  for (const auto& s : model.samples) {
    const auto r = reconstruct(s, model.dims);
    for (std::size_t k = 0; k < r.values().size(); ++k) sum.values()[k] += r.values()[k];
  }
  for (auto& v : sum.values()) v /= static_cast<double>(model.samples.size());
  return sum;
}

DenseTensor predict(const TfModel& model, const Dims& dims) {
  require_dims(model.dims, dims);
  return clamped(reconstruct(model));
}

DenseTensor predict(const CpdModel& model, const Dims& dims) {
  require_dims(model.dims, dims);
  return clamped(reconstruct(model));
}

DenseTensor predict(const BptfModel& model, const Dims& dims) {
  require_dims(model.dims, dims);
  return clamped(reconstruct(model));
}

DenseTensor bptf_predictive_variance(const BptfModel& model) {
  if (model.samples.empty()) throw std::invalid_argument("BPTF model has no samples");
  const double s = static_cast<double>(model.samples.size());
  const auto mean = reconstruct(model);
  DenseTensor out(model.dims, 0.0);
  double noise = 0.0;
  for (const auto& smp : model.samples) {
    const auto r = reconstruct(smp, model.dims);
    for (std::size_t k = 0; k < r.values().size(); ++k) {
      const double e = r.values()[k] - mean.values()[k];
      out.values()[k] += e * e;
    }
    noise += 1.0 / smp.precision;
  }
  for (auto& v : out.values()) v = v / s + noise / s;
  return out;
}

double monotonicity_penalty(const DenseTensor& t) {
  const auto& d = t.dims();
  double s = 0.0;
  for (std::size_t u = 0; u < d.learners; ++u)
    for (std::size_t i = 0; i < d.questions; ++i)
      for (std::size_t m = 0; m + 1 < d.attempts; ++m) {
        const double h = t.at(u, i, m) - t.at(u, i, m + 1);
        if (h > 0.0) s += h * h;
      }
  return s;
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  out << "# shape " << m.rows() << ' ' << m.cols() << '\n';
  char buf[40];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(r, c));
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
}

Eigen::MatrixXd read_matrix(std::istream& in) {
  std::string hash, tag;
  Eigen::Index rows = 0, cols = 0;
  if (!(in >> hash >> tag >> rows >> cols) || hash != "#" || tag != "shape" || rows < 0 || cols < 0) {
    throw DataError("matrix file lacks a '# shape R C' header");
  }
  Eigen::MatrixXd m(rows, cols);
  std::string line;
  std::getline(in, line);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!std::getline(in, line)) throw DataError("matrix file truncated at row " + std::to_string(r));
    std::istringstream ls(line);
    std::string cell;
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!std::getline(ls, cell, ',')) throw DataError("matrix row " + std::to_string(r) + " is short");
      const auto* end = cell.data() + cell.size();
      auto [ptr, ec] = std::from_chars(cell.data(), end, m(r, c));
      if (ec != std::errc{} || ptr != end) {
        throw DataError("bad number '" + cell + "' in matrix row " + std::to_string(r));
      }
    }
  }
  return m;
}

}  // namespace lpimpute::factor
