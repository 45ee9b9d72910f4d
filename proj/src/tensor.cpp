#include "lpimpute/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace lpimpute {

std::string to_string(const Dims& d) {
  return "(" + std::to_string(d.learners) + "," + std::to_string(d.questions) + "," +
         std::to_string(d.attempts) + ")";
}

namespace {

void check_dims(const Dims& dims) {
  if (dims.learners == 0 || dims.questions == 0 || dims.attempts == 0) {
    throw std::invalid_argument("tensor dims must be positive, got " + to_string(dims));
  }
}

void check_unique(const std::vector<std::string>& labels, const char* what) {
  std::unordered_set<std::string> seen;
  for (const auto& l : labels) {
    if (!seen.insert(l).second) {
      throw std::invalid_argument(std::string("duplicate ") + what + " label '" + l + "'");
    }
  }
}

std::vector<std::string> numbered(const char* prefix, std::size_t n) {
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(prefix + std::to_string(k));
  return out;
}

}  // namespace

PerfTensor::PerfTensor(Dims dims, std::vector<Cell> cells, std::vector<std::string> learner_ids,
                       std::vector<std::string> question_ids)
    : dims_(dims),
      cells_(std::move(cells)),
      learner_ids_(std::move(learner_ids)),
      question_ids_(std::move(question_ids)) {
  check_dims(dims_);
  if (cells_.size() != dims_.size()) {
    throw std::invalid_argument("cell count " + std::to_string(cells_.size()) + " does not match dims " +
                                to_string(dims_));
  }
  if (learner_ids_.size() != dims_.learners || question_ids_.size() != dims_.questions) {
    throw std::invalid_argument("label list lengths do not match dims " + to_string(dims_));
  }
  check_unique(learner_ids_, "learner");
  check_unique(question_ids_, "question");
  for (Cell c : cells_) {
    if (c != Cell::Correct && c != Cell::Incorrect && c != Cell::Missing) {
      throw std::invalid_argument("invalid cell state");
    }
  }
}

PerfTensor PerfTensor::filled(Dims dims, Cell fill) {
  check_dims(dims);
  return PerfTensor(dims, std::vector<Cell>(dims.size(), fill), numbered("L", dims.learners),
                    numbered("Q", dims.questions));
}

std::size_t PerfTensor::observed_count() const {
  return static_cast<std::size_t>(std::count_if(cells_.begin(), cells_.end(), is_observed));
}

std::vector<Coord> PerfTensor::observed_coords() const {
  std::vector<Coord> out;
  for (std::size_t u = 0; u < dims_.learners; ++u)
    for (std::size_t i = 0; i < dims_.questions; ++i)
      for (std::size_t m = 0; m < dims_.attempts; ++m)
        if (is_observed(at(u, i, m))) out.push_back({u, i, m});
  return out;
}

PerfTensor PerfTensor::with_cells(std::vector<Cell> cells) const {
  return PerfTensor(dims_, std::move(cells), learner_ids_, question_ids_);
}

PerfTensor PerfTensor::with_missing(std::span<const Coord> coords) const {
  std::vector<Cell> cells = cells_;
  for (const auto& c : coords) {
    if (c.u >= dims_.learners || c.i >= dims_.questions || c.m >= dims_.attempts) {
      throw std::out_of_range("coordinate outside tensor " + to_string(dims_));
    }
    cells[dims_.index(c.u, c.i, c.m)] = Cell::Missing;
  }
  return with_cells(std::move(cells));
}

MaskTensor::MaskTensor(Dims dims, std::vector<std::uint8_t> bits) : dims_(dims), bits_(std::move(bits)) {
  if (bits_.size() != dims_.size()) throw std::invalid_argument("mask size does not match dims");
}

std::size_t MaskTensor::observed_count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

DenseTensor::DenseTensor(Dims dims, std::vector<double> values) : dims_(dims), values_(std::move(values)) {
  if (values_.size() != dims_.size()) throw std::invalid_argument("value count does not match dims");
}

DenseTensor::DenseTensor(Dims dims, double fill) : dims_(dims), values_(dims.size(), fill) {}

Observations Observations::from(const PerfTensor& t) {
  Observations o;
  o.dims = t.dims();
  o.values.resize(o.dims.size());
  o.mask.resize(o.dims.size());
  const auto cells = t.cells();
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto v = numeric(cells[k]);
    o.mask[k] = v ? 1 : 0;
    o.values[k] = v.value_or(std::numeric_limits<double>::quiet_NaN());
  }
  return o;
}

std::size_t Observations::observed_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

MaskTensor mask_of(const PerfTensor& t) {
  std::vector<std::uint8_t> bits(t.dims().size());
  const auto cells = t.cells();
  std::transform(cells.begin(), cells.end(), bits.begin(),
                 [](Cell c) { return static_cast<std::uint8_t>(is_observed(c) ? 1 : 0); });
  return MaskTensor(t.dims(), std::move(bits));
}

double sparsity_level(const PerfTensor& t) {
  const auto missing = t.dims().size() - t.observed_count();
  return static_cast<double>(missing) / static_cast<double>(t.dims().size());
}

LearnerMatrix slice_learner(const PerfTensor& t, std::size_t u) {
  const auto& d = t.dims();
  if (u >= d.learners) {
    throw std::out_of_range("learner index " + std::to_string(u) + " out of range [0," +
                            std::to_string(d.learners) + ")");
  }
  LearnerMatrix lm;
  lm.learner = u;
  lm.rows = d.questions;
  lm.cols = d.attempts;
  lm.values.resize(d.slice_size());
  lm.mask.resize(d.slice_size());
  const auto base = d.index(u, 0, 0);
  for (std::size_t k = 0; k < d.slice_size(); ++k) {
    const Cell c = t.cells()[base + k];
    lm.values[k] = numeric(c);
    lm.mask[k] = is_observed(c) ? 1 : 0;
  }
  return lm;
}

PerfTensor truncate_attempts(const PerfTensor& t, std::size_t m_max) {
  const auto& d = t.dims();
  if (m_max < 1 || m_max > d.attempts) {
    throw std::out_of_range("max attempts " + std::to_string(m_max) + " outside [1," +
                            std::to_string(d.attempts) + "]");
  }
  Dims out{d.learners, d.questions, m_max};
  std::vector<Cell> cells(out.size());
  for (std::size_t u = 0; u < d.learners; ++u)
    for (std::size_t i = 0; i < d.questions; ++i)
      for (std::size_t m = 0; m < m_max; ++m) cells[out.index(u, i, m)] = t.at(u, i, m);
  return PerfTensor(out, std::move(cells), t.learner_ids(), t.question_ids());
}

Eigen::MatrixXd merge_imputed(const LearnerMatrix& observed, const Eigen::MatrixXd& generated) {
  if (static_cast<std::size_t>(generated.rows()) != observed.rows ||
      static_cast<std::size_t>(generated.cols()) != observed.cols) {
    throw std::invalid_argument("merge_imputed: generated matrix shape does not match learner matrix");
  }
  Eigen::MatrixXd out(generated.rows(), generated.cols());
  for (std::size_t i = 0; i < observed.rows; ++i) {
    for (std::size_t m = 0; m < observed.cols; ++m) {
      const double g = generated(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m));
      if (!std::isfinite(g)) throw std::invalid_argument("merge_imputed: non-finite generated value");
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) =
          observed.observed(i, m) ? *observed.value(i, m) : g;
    }
  }
  return out;
}

DenseTensor clamp01(const DenseTensor& t) {
  std::vector<double> out(t.values().begin(), t.values().end());
  for (double& v : out) {
    if (!std::isfinite(v)) throw std::invalid_argument("clamp01: non-finite value");
    v = std::clamp(v, 0.0, 1.0);
  }
  return DenseTensor(t.dims(), std::move(out));
}

}  // namespace lpimpute
