#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpimpute/eval.hpp"
#include "lpimpute/factorization.hpp"
#include "lpimpute/gain.hpp"
#include "lpimpute/gan.hpp"
#include "lpimpute/ingest.hpp"

namespace lpimpute::cli {

inline constexpr const char* kOutputDirEnv = "LPIMPUTE_OUTPUT_DIR";

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct MethodEntry {
  std::string method;  // gain, gan, tf, cpd, bptf
  gain::GainConfig gain;
  gan::GanConfig gan;
  factor::FitOptions fit;
  factor::BptfOptions bptf;
};

struct DatasetEntry {
  std::string name;
  std::optional<std::filesystem::path> path;
  char delimiter = ',';
  std::optional<SynthConfig> synth;
};

struct RunConfig {
  std::vector<DatasetEntry> datasets;
  std::vector<MethodEntry> methods;
  eval::CvPlan cv;
  std::vector<std::size_t> attempts;  // empty: 1..smallest M
  std::filesystem::path output_dir;
  std::uint64_t seed = 1;
  std::size_t jobs = 0;
  bool continue_on_error = false;
};

/// Flag values that override the config file when present.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<std::size_t> max_iters;
  std::optional<double> lr;
  std::optional<std::string> output_dir;
};

/// Strict parsing: unknown keys, wrong types and invalid values raise ConfigError.
/// Relative dataset paths are resolved against `base_dir`.
MethodEntry parse_method(const nlohmann::ordered_json& j);
SynthConfig parse_synth(const nlohmann::ordered_json& j);
RunConfig parse_run_config(const nlohmann::ordered_json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& file);

void apply_overrides(MethodEntry& m, const Overrides& o);
void apply_overrides(RunConfig& cfg, const Overrides& o);

nlohmann::ordered_json to_json(const MethodEntry& m);
nlohmann::ordered_json to_json(const SynthConfig& s);
nlohmann::ordered_json to_json(const RunConfig& cfg);

/// Accepts "3", "1-5" or "1,2,4". Throws ConfigError.
std::vector<std::size_t> parse_attempts(const std::string& text);

std::shared_ptr<const eval::Imputer> make_imputer(const MethodEntry& m);

/// Entry point shared by the executable and the tests. Returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lpimpute::cli
