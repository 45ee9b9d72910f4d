#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lpimpute {

/// Outcome of one (learner, question, attempt) cell.
enum class Cell : std::uint8_t { Incorrect = 0, Correct = 1, Missing = 2 };

inline bool is_observed(Cell c) { return c != Cell::Missing; }

/// 1.0 for Correct, 0.0 for Incorrect, nothing for Missing.
inline std::optional<double> numeric(Cell c) {
  switch (c) {
    case Cell::Correct: return 1.0;
    case Cell::Incorrect: return 0.0;
    case Cell::Missing: break;
  }
  return std::nullopt;
}

struct Dims {
  std::size_t learners = 0;
  std::size_t questions = 0;
  std::size_t attempts = 0;

  std::size_t size() const { return learners * questions * attempts; }
  std::size_t slice_size() const { return questions * attempts; }
  std::size_t index(std::size_t u, std::size_t i, std::size_t m) const {
    return (u * questions + i) * attempts + m;
  }
  bool operator==(const Dims&) const = default;
};

struct Coord {
  std::size_t u = 0;
  std::size_t i = 0;
  std::size_t m = 0;
  bool operator==(const Coord&) const = default;
  auto operator<=>(const Coord&) const = default;
};

std::string to_string(const Dims& d);

/// Learner x question x attempt performance tensor. Immutable once built.
class PerfTensor {
 public:
  PerfTensor(Dims dims, std::vector<Cell> cells, std::vector<std::string> learner_ids,
             std::vector<std::string> question_ids);

  /// Tensor with every cell set to `fill` and generated labels L0.. / Q0..
  static PerfTensor filled(Dims dims, Cell fill);

  const Dims& dims() const { return dims_; }
  Cell at(std::size_t u, std::size_t i, std::size_t m) const { return cells_[dims_.index(u, i, m)]; }
  Cell at(const Coord& c) const { return at(c.u, c.i, c.m); }
  std::span<const Cell> cells() const { return cells_; }
  const std::vector<std::string>& learner_ids() const { return learner_ids_; }
  const std::vector<std::string>& question_ids() const { return question_ids_; }

  std::size_t observed_count() const;
  std::vector<Coord> observed_coords() const;

  /// Copy with different cell contents and identical labels.
  PerfTensor with_cells(std::vector<Cell> cells) const;
  /// Copy with the given coordinates set to Missing.
  PerfTensor with_missing(std::span<const Coord> coords) const;

  bool operator==(const PerfTensor&) const = default;

 private:
  Dims dims_;
  std::vector<Cell> cells_;
  std::vector<std::string> learner_ids_;
  std::vector<std::string> question_ids_;
};

class MaskTensor {
 public:
  MaskTensor(Dims dims, std::vector<std::uint8_t> bits);

  const Dims& dims() const { return dims_; }
  std::uint8_t at(std::size_t u, std::size_t i, std::size_t m) const { return bits_[dims_.index(u, i, m)]; }
  std::span<const std::uint8_t> bits() const { return bits_; }
  std::size_t observed_count() const;

 private:
  Dims dims_;
  std::vector<std::uint8_t> bits_;
};

/// Dense real-valued tensor (predictions, probabilities).
class DenseTensor {
 public:
  DenseTensor(Dims dims, std::vector<double> values);
  explicit DenseTensor(Dims dims, double fill = 0.0);

  const Dims& dims() const { return dims_; }
  double at(std::size_t u, std::size_t i, std::size_t m) const { return values_[dims_.index(u, i, m)]; }
  double at(const Coord& c) const { return at(c.u, c.i, c.m); }
  double& at(std::size_t u, std::size_t i, std::size_t m) { return values_[dims_.index(u, i, m)]; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  bool operator==(const DenseTensor&) const = default;

 private:
  Dims dims_;
  std::vector<double> values_;
};

/// One learner's question x attempt slice ("learner image").
struct LearnerMatrix {
  std::size_t learner = 0;
  std::size_t rows = 0;  // questions
  std::size_t cols = 0;  // attempts
  std::vector<std::optional<double>> values;
  std::vector<std::uint8_t> mask;

  std::optional<double> value(std::size_t i, std::size_t m) const { return values[i * cols + m]; }
  std::uint8_t observed(std::size_t i, std::size_t m) const { return mask[i * cols + m]; }
};

/// Numeric view of a PerfTensor used by the fitting code: observed values with
/// their mask. Entries with mask 0 hold NaN and are never read.
struct Observations {
  Dims dims;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;

  static Observations from(const PerfTensor& t);
  std::size_t observed_count() const;
};

MaskTensor mask_of(const PerfTensor& t);

/// Fraction of Missing cells over all U*N*M cells.
double sparsity_level(const PerfTensor& t);

LearnerMatrix slice_learner(const PerfTensor& t, std::size_t u);

/// Keep attempts [0, m_max). Labels are preserved.
PerfTensor truncate_attempts(const PerfTensor& t, std::size_t m_max);

/// mask * observed + (1 - mask) * generated, elementwise on an N x M grid.
Eigen::MatrixXd merge_imputed(const LearnerMatrix& observed, const Eigen::MatrixXd& generated);

/// Map each value to [0, 1]. Throws on non-finite input.
DenseTensor clamp01(const DenseTensor& t);

}  // namespace lpimpute
