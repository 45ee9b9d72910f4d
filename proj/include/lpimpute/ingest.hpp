#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lpimpute/tensor.hpp"

namespace lpimpute {

/// One logged response. `attempt` is 1-based as in tutoring-system exports.
struct InteractionRecord {
  std::string learner_id;
  std::string question_id;
  int attempt = 1;
  int outcome = 0;

  bool operator==(const InteractionRecord&) const = default;
};

/// Delimited text with a header row `learner_id,question_id,attempt,outcome`.
struct DelimitedFormat {
  char delimiter = ',';
};

/// Parse one record per data row, in file order. Throws DataError naming the
/// offending line (the header is line 1) on a bad column count, a non-integer
/// or non-positive attempt, or an outcome outside {0,1}. Blank lines are skipped.
std::vector<InteractionRecord> parse_records(std::istream& in, const DelimitedFormat& format = {});

struct BuildResult {
  PerfTensor tensor;
  /// Duplicate (learner, question, attempt) rows whose outcome disagreed with
  /// the first occurrence; the first occurrence wins.
  std::size_t conflicting_duplicates = 0;
};

/// Assemble the performance tensor. Learner and question ids are ordered by
/// first appearance; M is the largest attempt seen.
BuildResult build_tensor(std::span<const InteractionRecord> records);

/// parse_records + build_tensor on a file.
BuildResult load_dataset(const std::filesystem::path& path, const DelimitedFormat& format = {});

/// Serialize the observed cells of `t` as records (attempts written 1-based),
/// in (learner, question, attempt) order.
void write_records(std::ostream& out, const PerfTensor& t, const DelimitedFormat& format = {});

struct SynthConfig {
  std::size_t learners = 100;
  std::size_t questions = 10;
  std::size_t attempts = 5;
  double ability_spread = 1.0;
  double difficulty_spread = 1.0;
  double learning_rate_mean = 0.3;
  double learning_rate_spread = 0.1;
  double base_dropout = 0.2;
  double dropout_growth = 0.1;
  std::uint64_t seed = 1;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// Probability that attempt `m` (0-based) is dropped.
double dropout_probability(const SynthConfig& cfg, std::size_t m);

struct SynthDataset {
  DenseTensor truth_prob;
  PerfTensor truth_binary;
  PerfTensor observed;
};

/// Logistic response model with a per-learner practice slope:
///   p[u][i][m] = logistic(ability_u - difficulty_i + slope_u * m)
/// Each cell is then dropped independently with dropout_probability(cfg, m).
SynthDataset synth_generate(const SynthConfig& cfg);

/// Cell-per-row sidecar `u,i,m,prob` with 0-based indices.
void write_cell_values(std::ostream& out, const DenseTensor& t, const char* value_header = "value");

struct Holdout {
  PerfTensor train;
  std::vector<Coord> eval_cells;
};

/// Hide round(fraction * observed) uniformly chosen observed cells.
Holdout holdout_mask(const PerfTensor& t, double fraction, std::uint64_t seed);

}  // namespace lpimpute
