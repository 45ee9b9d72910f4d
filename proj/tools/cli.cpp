#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <type_traits>

#include <CLI11.hpp>

#include "lpimpute/error.hpp"
#include "lpimpute/format.hpp"
#include "lpimpute/report_io.hpp"

namespace lpimpute::cli {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

/// Reads keys from one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const ordered_json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <class T>
  bool get(const std::string& key, T& out) {
    if (!j_.contains(key)) return false;
    used_.insert(key);
    const auto& v = j_.at(key);
    const std::string at = where_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(at + ": expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(at + ": expected a non-negative integer");
      out = static_cast<T>(v.get<std::uint64_t>());
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(at + ": expected a number");
      out = v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(at + ": expected a string");
      out = v.get<std::string>();
    } else {
      static_assert(std::is_same_v<T, ordered_json>);
      out = v;
    }
    return true;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const ordered_json& j_;
  std::string where_;
  std::set<std::string> used_;
};

const std::set<std::string> kMethods{"gain", "gan", "tf", "cpd", "bptf"};

int exit_code_for_kind(const std::string& kind) {
  if (kind == "data") return kData;
  if (kind == "numerical") return kNumerical;
  return kUsage;
}

PerfTensor load_entry(const DatasetEntry& d, std::ostream& err) {
  if (d.synth) return synth_generate(*d.synth).observed;
  auto res = load_dataset(*d.path, DelimitedFormat{d.delimiter});
  if (res.conflicting_duplicates) {
    err << "warning: dataset '" << d.name << "' has " << res.conflicting_duplicates
        << " conflicting duplicate rows; kept first occurrences\n";
  }
  return std::move(res.tensor);
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  f << content;
  if (!f) throw DataError("failed writing '" + path.string() + "'");
}

template <class F>
std::string render(F&& f) {
  std::ostringstream s;
  f(s);
  return s.str();
}

fs::path resolve_output_dir(const std::optional<std::string>& flag, const fs::path& from_config) {
  if (flag) return *flag;
  if (!from_config.empty()) return from_config;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return "lpimpute-out";
}

double observed_rmse(const DenseTensor& pred, const PerfTensor& t) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : t.observed_coords()) {
    const double e = pred.at(c) - *numeric(t.at(c));
    sum += e * e;
    ++n;
  }
  return n ? std::sqrt(sum / static_cast<double>(n)) : 0.0;
}

}  // namespace

std::vector<std::size_t> parse_attempts(const std::string& text) {
  const auto number = [&](const std::string& s) -> std::size_t {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (s.empty() || pos != s.size() || s.front() == '-' || v == 0) {
      throw ConfigError("bad attempts value '" + s + "' in '" + text + "'");
    }
    return static_cast<std::size_t>(v);
  };
  std::vector<std::size_t> out;
  if (const auto dash = text.find('-'); dash != std::string::npos && text.find(',') == std::string::npos) {
    const auto lo = number(text.substr(0, dash)), hi = number(text.substr(dash + 1));
    if (lo > hi) throw ConfigError("empty attempts range '" + text + "'");
    for (auto a = lo; a <= hi; ++a) out.push_back(a);
    return out;
  }
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(number(part));
  if (out.empty()) throw ConfigError("empty attempts list");
  return out;
}

MethodEntry parse_method(const ordered_json& j) {
  MethodEntry m;
  const std::string where = "method";
  if (!j.is_object() || !j.contains("method") || !j.at("method").is_string()) {
    throw ConfigError("each method block needs a string 'method' field");
  }
  m.method = j.at("method").get<std::string>();
  if (!kMethods.count(m.method)) {
    throw ConfigError("unknown method '" + m.method + "' (expected gain, gan, tf, cpd or bptf)");
  }
  ObjectReader r(j, where + "[" + m.method + "]");
  std::string ignored;
  r.get("method", ignored);
  if (m.method == "gain") {
    auto& c = m.gain;
    r.get("hint_rate", c.hint_rate);
    r.get("noise_scale", c.noise_scale);
    r.get("recon_weight", c.recon_weight);
    r.get("learning_rate", c.learning_rate);
    r.get("max_iterations", c.max_iterations);
    r.get("early_stop_rmse", c.early_stop_rmse);
    r.get("d_steps_per_g_step", c.d_steps_per_g_step);
    r.get("batch_size", c.batch_size);
    r.get("dropout_rate", c.dropout_rate);
    r.get("seed", c.seed);
    r.get("d_loss_hidden_only", c.d_loss_hidden_only);
    r.finish();
    try {
      c.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("gain: " + std::string(e.what()));
    }
  } else if (m.method == "gan") {
    auto& c = m.gan;
    r.get("noise_scale", c.noise_scale);
    r.get("recon_weight", c.recon_weight);
    r.get("learning_rate", c.learning_rate);
    r.get("max_iterations", c.max_iterations);
    r.get("early_stop_rmse", c.early_stop_rmse);
    r.get("d_steps_per_g_step", c.d_steps_per_g_step);
    r.get("batch_size", c.batch_size);
    r.get("dropout_rate", c.dropout_rate);
    r.get("seed", c.seed);
    r.finish();
    try {
      c.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("gan: " + std::string(e.what()));
    }
  } else if (m.method == "tf" || m.method == "cpd") {
    auto& c = m.fit;
    r.get("rank", c.rank);
    r.get("mono_weight", c.mono_weight);
    r.get("learning_rate", c.learning_rate);
    r.get("iterations", c.iterations);
    r.get("seed", c.seed);
    r.finish();
    try {
      c.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(m.method + ": " + e.what());
    }
  } else {
    auto& c = m.bptf;
    r.get("rank", c.rank);
    r.get("burn_in", c.burn_in);
    r.get("samples", c.samples);
    r.get("beta0", c.beta0);
    r.get("nu0_extra", c.nu0_extra);
    r.get("alpha_shape", c.alpha_shape);
    r.get("seed", c.seed);
    r.finish();
    try {
      c.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("bptf: " + std::string(e.what()));
    }
  }
  return m;
}

SynthConfig parse_synth(const ordered_json& j) {
  SynthConfig s;
  ObjectReader r(j, "synth");
  r.get("learners", s.learners);
  r.get("questions", s.questions);
  r.get("attempts", s.attempts);
  r.get("ability_spread", s.ability_spread);
  r.get("difficulty_spread", s.difficulty_spread);
  r.get("learning_rate_mean", s.learning_rate_mean);
  r.get("learning_rate_spread", s.learning_rate_spread);
  r.get("base_dropout", s.base_dropout);
  r.get("dropout_growth", s.dropout_growth);
  r.get("seed", s.seed);
  r.finish();
  s.validate();
  return s;
}

RunConfig parse_run_config(const ordered_json& j, const fs::path& base_dir) {
  RunConfig cfg;
  ObjectReader r(j, "config");
  r.get("seed", cfg.seed);
  r.get("jobs", cfg.jobs);
  r.get("continue_on_error", cfg.continue_on_error);
  std::string out_dir;
  if (r.get("output_dir", out_dir)) cfg.output_dir = out_dir;

  ordered_json cv;
  if (r.get("cv", cv)) {
    ObjectReader cr(cv, "config.cv");
    cr.get("cycles", cfg.cv.cycles);
    cr.get("folds", cfg.cv.folds);
    cr.finish();
  }
  cfg.cv.validate();

  ordered_json attempts;
  if (r.get("attempts", attempts)) {
    if (attempts.is_string()) {
      cfg.attempts = parse_attempts(attempts.get<std::string>());
    } else if (attempts.is_array()) {
      for (const auto& a : attempts) {
        if (!a.is_number_unsigned() || a.get<std::uint64_t>() == 0) {
          throw ConfigError("config.attempts: entries must be positive integers");
        }
        cfg.attempts.push_back(a.get<std::size_t>());
      }
      if (cfg.attempts.empty()) throw ConfigError("config.attempts: empty list");
    } else {
      throw ConfigError("config.attempts: expected a list or a range string");
    }
  }

  ordered_json datasets;
  if (!r.get("datasets", datasets) || !datasets.is_array() || datasets.empty()) {
    throw ConfigError("config.datasets: expected a non-empty list");
  }
  std::set<std::string> names;
  for (const auto& dj : datasets) {
    DatasetEntry d;
    ObjectReader dr(dj, "config.datasets[]");
    if (!dr.get("name", d.name) || d.name.empty()) throw ConfigError("every dataset needs a name");
    if (!names.insert(d.name).second) throw ConfigError("duplicate dataset name '" + d.name + "'");
    std::string path, delim;
    ordered_json synth;
    const bool has_path = dr.get("path", path);
    const bool has_synth = dr.get("synth", synth);
    if (dr.get("delimiter", delim)) {
      if (delim.size() != 1) throw ConfigError("dataset '" + d.name + "': delimiter must be one character");
      d.delimiter = delim[0];
    }
    dr.finish();
    if (has_path == has_synth) throw ConfigError("dataset '" + d.name + "' needs exactly one of path or synth");
    if (has_path) {
      fs::path p(path);
      d.path = p.is_relative() ? base_dir / p : p;
    } else {
      d.synth = parse_synth(synth);
    }
    cfg.datasets.push_back(std::move(d));
  }

  ordered_json methods;
  if (!r.get("methods", methods) || !methods.is_array() || methods.empty()) {
    throw ConfigError("config.methods: expected a non-empty list");
  }
  std::set<std::string> seen;
  for (const auto& mj : methods) {
    auto m = parse_method(mj);
    if (!seen.insert(m.method).second) throw ConfigError("method '" + m.method + "' listed twice");
    cfg.methods.push_back(std::move(m));
  }
  r.finish();
  cfg.cv.base_seed = cfg.seed;
  return cfg;
}

RunConfig load_run_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config '" + file.string() + "'");
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  return parse_run_config(j, file.parent_path());
}

void apply_overrides(MethodEntry& m, const Overrides& o) {
  if (o.max_iters) {
    m.gain.max_iterations = *o.max_iters;
    m.gan.max_iterations = *o.max_iters;
    m.fit.iterations = *o.max_iters;
  }
  if (o.lr) {
    m.gain.learning_rate = *o.lr;
    m.gan.learning_rate = *o.lr;
    m.fit.learning_rate = *o.lr;
  }
  if (o.seed) {
    m.gain.seed = *o.seed;
    m.gan.seed = *o.seed;
    m.fit.seed = *o.seed;
    m.bptf.seed = *o.seed;
  }
  m.gain.validate();
  m.gan.validate();
  m.fit.validate();
  m.bptf.validate();
}

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.cv.base_seed = *o.seed;
  }
  if (o.jobs) cfg.jobs = *o.jobs;
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  Overrides per_method = o;
  per_method.seed.reset();  // benchmark fits take seeds from the CV plan
  for (auto& m : cfg.methods) apply_overrides(m, per_method);
}

ordered_json to_json(const MethodEntry& m) {
  ordered_json j{{"method", m.method}};
  if (m.method == "gain") {
    const auto& c = m.gain;
    j.update(ordered_json{{"hint_rate", c.hint_rate},
                          {"noise_scale", c.noise_scale},
                          {"recon_weight", c.recon_weight},
                          {"learning_rate", c.learning_rate},
                          {"max_iterations", c.max_iterations},
                          {"early_stop_rmse", c.early_stop_rmse},
                          {"d_steps_per_g_step", c.d_steps_per_g_step},
                          {"batch_size", c.batch_size},
                          {"dropout_rate", c.dropout_rate},
                          {"seed", c.seed},
                          {"d_loss_hidden_only", c.d_loss_hidden_only}});
  } else if (m.method == "gan") {
    const auto& c = m.gan;
    j.update(ordered_json{{"noise_scale", c.noise_scale},
                          {"recon_weight", c.recon_weight},
                          {"learning_rate", c.learning_rate},
                          {"max_iterations", c.max_iterations},
                          {"early_stop_rmse", c.early_stop_rmse},
                          {"d_steps_per_g_step", c.d_steps_per_g_step},
                          {"batch_size", c.batch_size},
                          {"dropout_rate", c.dropout_rate},
                          {"seed", c.seed}});
  } else if (m.method == "tf" || m.method == "cpd") {
    const auto& c = m.fit;
    j.update(ordered_json{{"rank", c.rank},
                          {"mono_weight", c.mono_weight},
                          {"learning_rate", c.learning_rate},
                          {"iterations", c.iterations},
                          {"seed", c.seed}});
  } else {
    const auto& c = m.bptf;
    j.update(ordered_json{{"rank", c.rank},
                          {"burn_in", c.burn_in},
                          {"samples", c.samples},
                          {"beta0", c.beta0},
                          {"nu0_extra", c.nu0_extra},
                          {"alpha_shape", c.alpha_shape},
                          {"seed", c.seed}});
  }
  return j;
}

ordered_json to_json(const SynthConfig& s) {
  return {{"learners", s.learners},
          {"questions", s.questions},
          {"attempts", s.attempts},
          {"ability_spread", s.ability_spread},
          {"difficulty_spread", s.difficulty_spread},
          {"learning_rate_mean", s.learning_rate_mean},
          {"learning_rate_spread", s.learning_rate_spread},
          {"base_dropout", s.base_dropout},
          {"dropout_growth", s.dropout_growth},
          {"seed", s.seed}};
}

ordered_json to_json(const RunConfig& cfg) {
  ordered_json j;
  j["seed"] = cfg.seed;
  j["jobs"] = cfg.jobs;
  j["continue_on_error"] = cfg.continue_on_error;
  j["output_dir"] = cfg.output_dir.string();
  j["cv"] = {{"cycles", cfg.cv.cycles}, {"folds", cfg.cv.folds}, {"base_seed", cfg.cv.base_seed}};
  j["attempts"] = cfg.attempts;
  auto& ds = j["datasets"] = ordered_json::array();
  for (const auto& d : cfg.datasets) {
    ordered_json e{{"name", d.name}};
    if (d.path) {
      e["path"] = d.path->string();
      e["delimiter"] = std::string(1, d.delimiter);
    } else {
      e["synth"] = to_json(*d.synth);
    }
    ds.push_back(std::move(e));
  }
  auto& ms = j["methods"] = ordered_json::array();
  for (const auto& m : cfg.methods) ms.push_back(to_json(m));
  return j;
}

std::shared_ptr<const eval::Imputer> make_imputer(const MethodEntry& m) {
  if (m.method == "gain") return std::make_shared<eval::GainImputer>(m.gain);
  if (m.method == "gan") return std::make_shared<eval::GanImputer>(m.gan);
  if (m.method == "tf") return std::make_shared<eval::TfImputer>(m.fit);
  if (m.method == "cpd") return std::make_shared<eval::CpdImputer>(m.fit);
  if (m.method == "bptf") return std::make_shared<eval::BptfImputer>(m.bptf);
  throw ConfigError("unknown method '" + m.method + "'");
}

namespace {

void add_common(CLI::App* cmd, Overrides& o, bool with_jobs) {
  cmd->add_option("--seed", o.seed, "Global seed");
  if (with_jobs) cmd->add_option("--jobs", o.jobs, "Worker threads (0 = all cores)");
  cmd->add_option("--max-iters", o.max_iters, "Training iterations for gain/gan/tf/cpd")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", o.lr, "Learning rate for gain/gan/tf/cpd")->check(CLI::PositiveNumber);
}

int cmd_synth(const SynthConfig& s, const fs::path& out_path, std::optional<std::string> truth_path,
              std::ostream& out) {
  const auto ds = synth_generate(s);
  write_file(out_path, render([&](std::ostream& o) { write_records(o, ds.observed); }));
  const fs::path truth = truth_path ? fs::path(*truth_path) : fs::path(out_path.string() + ".truth.csv");
  write_file(truth, render([&](std::ostream& o) { write_cell_values(o, ds.truth_prob, "prob"); }));
  out << "dims " << to_string(ds.observed.dims()) << '\n';
  out << "sparsity " << format_double(sparsity_level(ds.observed)) << '\n';
  return kOk;
}

int cmd_sparsity(const fs::path& input, char delim, const std::optional<std::string>& range,
                 const std::optional<std::string>& csv, std::ostream& out) {
  const auto t = load_dataset(input, DelimitedFormat{delim}).tensor;
  const auto M = t.dims().attempts;
  std::vector<std::size_t> attempts;
  if (range) {
    attempts = parse_attempts(*range);
  } else {
    for (std::size_t a = 1; a <= M; ++a) attempts.push_back(a);
  }
  for (auto a : attempts) {
    if (a > M) throw ConfigError("max_attempts " + std::to_string(a) + " exceeds the dataset's " + std::to_string(M));
  }
  std::ostringstream table;
  table << "max_attempts,sparsity\n";
  out << "max_attempts  sparsity(%)\n";
  for (auto a : attempts) {
    const double s = sparsity_level(truncate_attempts(t, a));
    table << a << ',' << format_double(s) << '\n';
    std::ostringstream pct;
    pct << std::fixed << std::setprecision(2) << 100.0 * s;
    out << std::setw(12) << a << "  " << std::setw(11) << pct.str() << '\n';
  }
  if (csv) write_file(*csv, table.str());
  return kOk;
}

int cmd_impute(const fs::path& input, char delim, MethodEntry m, const Overrides& o, const fs::path& out_path,
               std::ostream& out) {
  apply_overrides(m, o);
  const auto t = load_dataset(input, DelimitedFormat{delim}).tensor;
  const std::uint64_t seed = m.method == "gain"  ? m.gain.seed
                             : m.method == "gan" ? m.gan.seed
                             : m.method == "bptf" ? m.bptf.seed
                                                  : m.fit.seed;
  auto fit = make_imputer(m)->fit_impute(t, seed);
  write_file(out_path, render([&](std::ostream& os) { write_cell_values(os, fit.prediction, "value"); }));
  write_file(out_path.string() + ".config.json", to_json(m).dump(2) + "\n");
  std::size_t iterations = fit.curve.size();
  double final_rmse = fit.curve.empty() ? observed_rmse(fit.prediction, t) : fit.curve.back().rmse;
  if (m.method == "bptf") iterations = m.bptf.burn_in + m.bptf.samples;
  out << "method=" << m.method << " iterations=" << iterations
      << " final_observed_rmse=" << format_double(final_rmse) << '\n';
  return kOk;
}

int cmd_benchmark(const fs::path& config_path, const Overrides& o, bool continue_flag, std::ostream& out,
                  std::ostream& err) {
  auto cfg = load_run_config(config_path);
  apply_overrides(cfg, o);
  if (continue_flag) cfg.continue_on_error = true;
  cfg.output_dir = resolve_output_dir(o.output_dir, cfg.output_dir);

  std::vector<eval::Dataset> datasets;
  for (const auto& d : cfg.datasets) datasets.push_back({d.name, load_entry(d, err)});
  if (cfg.attempts.empty()) {
    std::size_t m_min = datasets.front().tensor.dims().attempts;
    for (const auto& d : datasets) m_min = std::min(m_min, d.tensor.dims().attempts);
    for (std::size_t a = 1; a <= m_min; ++a) cfg.attempts.push_back(a);
  }
  std::vector<eval::Method> methods;
  for (const auto& m : cfg.methods) methods.push_back({m.method, make_imputer(m)});

  fs::create_directories(cfg.output_dir);
  write_file(cfg.output_dir / "effective_config.json", to_json(cfg).dump(2) + "\n");

  const auto report = eval::run_benchmark(datasets, methods, cfg.attempts, cfg.cv,
                                          eval::BenchmarkOptions{cfg.jobs, cfg.continue_on_error});
  const auto& dir = cfg.output_dir;
  write_file(dir / "rmse.csv", render([&](std::ostream& s) { eval::write_rmse_csv(s, report); }));
  write_file(dir / "spearman.csv", render([&](std::ostream& s) { eval::write_spearman_csv(s, report); }));
  write_file(dir / "sparsity.csv", render([&](std::ostream& s) { eval::write_sparsity_csv(s, report); }));
  write_file(dir / "curves.csv", render([&](std::ostream& s) { eval::write_curves_csv(s, report); }));
  write_file(dir / "report.json", render([&](std::ostream& s) { eval::write_report_json(s, report); }));

  for (const auto& d : datasets) {
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& m : methods) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& row : report.rmse)
        if (row.dataset == d.name && row.method == m.name) {
          sum += row.rmse_mean;
          ++n;
        }
      if (n) ranked.emplace_back(sum / static_cast<double>(n), m.name);
    }
    std::sort(ranked.begin(), ranked.end());
    out << "dataset " << d.name << " (mean RMSE over max_attempts):\n";
    for (std::size_t k = 0; k < ranked.size(); ++k) {
      std::ostringstream v;
      v << std::fixed << std::setprecision(4) << ranked[k].first;
      out << "  " << k + 1 << ". " << ranked[k].second << "  " << v.str() << '\n';
    }
  }
  out << "wrote " << dir.string() << '\n';
  if (!report.failures.empty()) {
    for (const auto& f : report.failures) err << "failed: " << f.message << '\n';
    return exit_code_for_kind(report.failures.front().kind);
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Imputation of sparse learner x question x attempt performance tensors"};
  app.require_subcommand(1);
  Overrides o;

  SynthConfig synth;
  std::string synth_out;
  std::optional<std::string> truth_out;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset and its truth probabilities");
  s->add_option("--learners", synth.learners)->capture_default_str();
  s->add_option("--questions", synth.questions)->capture_default_str();
  s->add_option("--attempts", synth.attempts)->capture_default_str();
  s->add_option("--ability-spread", synth.ability_spread)->capture_default_str();
  s->add_option("--difficulty-spread", synth.difficulty_spread)->capture_default_str();
  s->add_option("--learning-rate-mean", synth.learning_rate_mean)->capture_default_str();
  s->add_option("--learning-rate-spread", synth.learning_rate_spread)->capture_default_str();
  s->add_option("--base-dropout", synth.base_dropout)->capture_default_str();
  s->add_option("--dropout-growth", synth.dropout_growth)->capture_default_str();
  s->add_option("--seed", synth.seed)->capture_default_str();
  s->add_option("-o,--out", synth_out, "Dataset file")->required();
  s->add_option("--truth", truth_out, "Truth sidecar (default <out>.truth.csv)");

  std::string sp_input, sp_delim = ",";
  std::optional<std::string> sp_range, sp_csv;
  auto* sp = app.add_subcommand("sparsity", "Sparsity level per max_attempts truncation");
  sp->add_option("input", sp_input)->required();
  sp->add_option("--attempts", sp_range, "Range such as 1-5 or list 1,3,5 (default 1..M)");
  sp->add_option("--delimiter", sp_delim)->capture_default_str();
  sp->add_option("--csv", sp_csv, "Also write the table as CSV");

  std::string im_input, im_method = "gain", im_out, im_delim = ",";
  std::optional<std::string> im_config;
  auto* im = app.add_subcommand("impute", "Fit one method and write the completed tensor");
  im->add_option("input", im_input)->required();
  im->add_option("-m,--method", im_method)->capture_default_str();
  im->add_option("-c,--config", im_config, "JSON method block, e.g. {\"method\": \"gain\", ...}");
  im->add_option("-o,--out", im_out, "Completed tensor, one u,i,m,value row per cell")->required();
  im->add_option("--delimiter", im_delim)->capture_default_str();
  add_common(im, o, false);

  std::string bm_config;
  bool bm_continue = false;
  auto* bm = app.add_subcommand("benchmark", "Cross-validated benchmark over datasets, methods and truncations");
  bm->add_option("config", bm_config, "JSON run configuration")->required();
  bm->add_option("--output-dir", o.output_dir, std::string("Output directory (default from config, then $") +
                                                   kOutputDirEnv + ")");
  bm->add_flag("--continue-on-error", bm_continue, "Record failed grid cells and keep going");
  add_common(bm, o, true);

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? kOk : kUsage;
    }
    const auto delim = [](const std::string& d) {
      if (d.size() != 1) throw ConfigError("delimiter must be a single character");
      return d[0];
    };
    if (*s) return cmd_synth(synth, synth_out, truth_out, out);
    if (*sp) return cmd_sparsity(sp_input, delim(sp_delim), sp_range, sp_csv, out);
    if (*im) {
      MethodEntry m;
      if (im_config) {
        std::ifstream in(*im_config);
        if (!in) throw ConfigError("cannot open config '" + *im_config + "'");
        ordered_json j;
        try {
          j = ordered_json::parse(in);
        } catch (const nlohmann::json::exception& e) {
          throw ConfigError(*im_config + ": " + e.what());
        }
        if (!j.contains("method")) j["method"] = im_method;
        m = parse_method(j);
        if (im->count("--method") && m.method != im_method) {
          throw ConfigError("--method " + im_method + " conflicts with config method " + m.method);
        }
      } else {
        m = parse_method(ordered_json{{"method", im_method}});
      }
      return cmd_impute(im_input, delim(im_delim), m, o, im_out, out);
    }
    if (*bm) return cmd_benchmark(bm_config, o, bm_continue, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace lpimpute::cli
