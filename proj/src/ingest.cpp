#include "lpimpute/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <string_view>
#include <tuple>
#include <unordered_map>

#include "lpimpute/error.hpp"
#include "lpimpute/format.hpp"
#include "lpimpute/random.hpp"

namespace lpimpute {

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void fail_line(std::size_t line, const std::string& what) {
  throw DataError("line " + std::to_string(line) + ": " + what);
}

int parse_int(std::string_view s, std::size_t line, const char* field) {
  int v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc{} || ptr != end) {
    fail_line(line, std::string(field) + " '" + std::string(s) + "' is not an integer");
  }
  return v;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::vector<InteractionRecord> parse_records(std::istream& in, const DelimitedFormat& format) {
  std::vector<InteractionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line, format.delimiter);
    if (fields.size() != 4) {
      fail_line(line_no, "expected 4 columns, found " + std::to_string(fields.size()));
    }
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    InteractionRecord r;
    r.learner_id = std::string(fields[0]);
    r.question_id = std::string(fields[1]);
    if (r.learner_id.empty() || r.question_id.empty()) fail_line(line_no, "empty identifier");
    r.attempt = parse_int(fields[2], line_no, "attempt");
    if (r.attempt < 1) fail_line(line_no, "attempt must be >= 1, got " + std::to_string(r.attempt));
    r.outcome = parse_int(fields[3], line_no, "outcome");
    if (r.outcome != 0 && r.outcome != 1) {
      fail_line(line_no, "outcome must be 0 or 1, got " + std::string(fields[3]));
    }
    records.push_back(std::move(r));
  }
  return records;
}

BuildResult build_tensor(std::span<const InteractionRecord> records) {
  if (records.empty()) throw DataError("cannot build a tensor from zero records");

  std::unordered_map<std::string, std::size_t> learner_index;
  std::unordered_map<std::string, std::size_t> question_index;
  std::vector<std::string> learners;
  std::vector<std::string> questions;
  int max_attempt = 0;
  for (const auto& r : records) {
    if (r.attempt < 1) throw DataError("record with attempt < 1 for learner '" + r.learner_id + "'");
    if (r.outcome != 0 && r.outcome != 1) throw DataError("record with outcome outside {0,1}");
    if (learner_index.emplace(r.learner_id, learners.size()).second) learners.push_back(r.learner_id);
    if (question_index.emplace(r.question_id, questions.size()).second) questions.push_back(r.question_id);
    max_attempt = std::max(max_attempt, r.attempt);
  }

  const Dims dims{learners.size(), questions.size(), static_cast<std::size_t>(max_attempt)};
  std::vector<Cell> cells(dims.size(), Cell::Missing);
  std::size_t conflicts = 0;
  for (const auto& r : records) {
    const auto k = dims.index(learner_index.at(r.learner_id), question_index.at(r.question_id),
                              static_cast<std::size_t>(r.attempt - 1));
    const Cell c = r.outcome == 1 ? Cell::Correct : Cell::Incorrect;
    if (cells[k] == Cell::Missing) {
      cells[k] = c;
    } else if (cells[k] != c) {
      ++conflicts;
    }
  }
  return {PerfTensor(dims, std::move(cells), std::move(learners), std::move(questions)), conflicts};
}

BuildResult load_dataset(const std::filesystem::path& path, const DelimitedFormat& format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
  try {
    const auto records = parse_records(in, format);
    return build_tensor(records);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_records(std::ostream& out, const PerfTensor& t, const DelimitedFormat& format) {
  const char d = format.delimiter;
  out << "learner_id" << d << "question_id" << d << "attempt" << d << "outcome\n";
  const auto& dims = t.dims();
  for (std::size_t u = 0; u < dims.learners; ++u)
    for (std::size_t i = 0; i < dims.questions; ++i)
      for (std::size_t m = 0; m < dims.attempts; ++m) {
        const auto v = numeric(t.at(u, i, m));
        if (!v) continue;
        out << t.learner_ids()[u] << d << t.question_ids()[i] << d << (m + 1) << d << static_cast<int>(*v)
            << '\n';
      }
}

void SynthConfig::validate() const {
  if (learners == 0 || questions == 0 || attempts == 0) {
    throw ConfigError("synthetic dataset dimensions must be positive");
  }
  if (!(base_dropout >= 0.0 && base_dropout < 1.0)) throw ConfigError("base_dropout must lie in [0,1)");
  if (!(dropout_growth >= 0.0) || !std::isfinite(dropout_growth)) {
    throw ConfigError("dropout_growth must be finite and >= 0");
  }
  for (double v : {ability_spread, difficulty_spread, learning_rate_spread}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("spreads must be finite and >= 0");
  }
  if (!std::isfinite(learning_rate_mean)) throw ConfigError("learning_rate_mean must be finite");
}

double dropout_probability(const SynthConfig& cfg, std::size_t m) {
  return std::min(0.95, cfg.base_dropout + cfg.dropout_growth * static_cast<double>(m));
}

SynthDataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<double> ability(cfg.learners), difficulty(cfg.questions), slope(cfg.learners);
  for (auto& a : ability) a = cfg.ability_spread * normal(rng);
  for (auto& b : difficulty) b = cfg.difficulty_spread * normal(rng);
  for (auto& g : slope) g = cfg.learning_rate_mean + cfg.learning_rate_spread * normal(rng);

  const Dims dims{cfg.learners, cfg.questions, cfg.attempts};
  std::vector<double> prob(dims.size());
  std::vector<Cell> truth(dims.size());
  std::vector<Cell> observed(dims.size());
  for (std::size_t u = 0; u < dims.learners; ++u)
    for (std::size_t i = 0; i < dims.questions; ++i)
      for (std::size_t m = 0; m < dims.attempts; ++m) {
        const auto k = dims.index(u, i, m);
        prob[k] = logistic(ability[u] - difficulty[i] + slope[u] * static_cast<double>(m));
        truth[k] = unit(rng) < prob[k] ? Cell::Correct : Cell::Incorrect;
        const bool dropped = unit(rng) < dropout_probability(cfg, m);
        observed[k] = dropped ? Cell::Missing : truth[k];
      }

  auto truth_binary = PerfTensor::filled(dims, Cell::Missing).with_cells(std::move(truth));
  auto observed_t = truth_binary.with_cells(std::move(observed));
  return {DenseTensor(dims, std::move(prob)), std::move(truth_binary), std::move(observed_t)};
}

void write_cell_values(std::ostream& out, const DenseTensor& t, const char* value_header) {
  out << "u,i,m," << value_header << '\n';
  const auto& d = t.dims();
  for (std::size_t u = 0; u < d.learners; ++u)
    for (std::size_t i = 0; i < d.questions; ++i)
      for (std::size_t m = 0; m < d.attempts; ++m)
        out << u << ',' << i << ',' << m << ',' << format_double(t.at(u, i, m)) << '\n';
}

Holdout holdout_mask(const PerfTensor& t, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("holdout fraction must lie in (0,1)");
  }
  auto coords = t.observed_coords();
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(coords.size())));
  if (k == 0 || k > coords.size()) {
    throw DataError("too few observed cells (" + std::to_string(coords.size()) + ") for holdout fraction");
  }
  Rng rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(k);
  auto train = t.with_missing(coords);
  return {std::move(train), std::move(coords)};
}

}  // namespace lpimpute
