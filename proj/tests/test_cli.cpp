#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "lpimpute/error.hpp"
#include "lpimpute/ingest.hpp"

using namespace lpimpute;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "lpimpute");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("lpimpute-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& content) {
    const auto p = dir_ / name;
    std::ofstream(p) << content;
    return p;
  }

  fs::path synth(const std::string& name, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"synth", "--learners", "30", "--questions", "5", "--attempts", "4",
                                  "-o", (dir_ / name).string()};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = run(args);
    EXPECT_EQ(r.code, 0) << r.err;
    return dir_ / name;
  }

  fs::path dir_;
};

}  // namespace

TEST(ParseAttempts, Forms) {
  EXPECT_EQ(cli::parse_attempts("3"), (std::vector<std::size_t>{3}));
  EXPECT_EQ(cli::parse_attempts("1-4"), (std::vector<std::size_t>{1, 2, 3, 4}));
  EXPECT_EQ(cli::parse_attempts("1,2,4"), (std::vector<std::size_t>{1, 2, 4}));
  EXPECT_THROW(cli::parse_attempts("0"), ConfigError);
  EXPECT_THROW(cli::parse_attempts("4-2"), ConfigError);
  EXPECT_THROW(cli::parse_attempts("x"), ConfigError);
}

TEST(ParseMethod, StrictKeys) {
  EXPECT_EQ(cli::parse_method({{"method", "gain"}, {"hint_rate", 0.5}}).gain.hint_rate, 0.5);
  EXPECT_THROW(cli::parse_method({{"method", "gain"}, {"hint", 0.5}}), ConfigError);
  EXPECT_THROW(cli::parse_method({{"method", "svd"}}), ConfigError);
  EXPECT_THROW(cli::parse_method({{"method", "tf"}, {"rank", 0}}), ConfigError);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run({"impute", "x.csv"}).code, cli::kUsage);
  EXPECT_EQ(run({"--help"}).code, cli::kOk);
}

TEST_F(CliTest, SynthWritesDatasetAndTruth) {
  const auto data = synth("d.csv", {"--seed", "5"});
  const auto t = load_dataset(data).tensor;
  EXPECT_EQ(t.dims().learners, 30u);
  EXPECT_EQ(t.dims().questions, 5u);
  const auto truth = slurp(data.string() + ".truth.csv");
  EXPECT_EQ(truth.rfind("u,i,m,prob\n", 0), 0u);
  EXPECT_EQ(count_lines(truth), 1u + 30u * 5u * 4u);
  const auto again = synth("e.csv", {"--seed", "5"});
  EXPECT_EQ(slurp(data), slurp(again));
}

TEST_F(CliTest, SparsityOfDenseDataIsZero) {
  const auto data = synth("dense.csv", {"--base-dropout", "0", "--dropout-growth", "0"});
  const auto r = run({"sparsity", data.string(), "--csv", (dir_ / "s.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(dir_ / "s.csv");
  EXPECT_EQ(csv, "max_attempts,sparsity\n1,0\n2,0\n3,0\n4,0\n");
  EXPECT_EQ(run({"sparsity", data.string(), "--attempts", "1-9"}).code, cli::kUsage);
}

TEST_F(CliTest, DataErrors) {
  EXPECT_EQ(run({"sparsity", (dir_ / "missing.csv").string()}).code, cli::kData);
  const auto bad = write("bad.csv", "learner_id,question_id,attempt,outcome\nL,Q,1,7\n");
  const auto r = run({"sparsity", bad.string()});
  EXPECT_EQ(r.code, cli::kData);
  EXPECT_NE(r.err.find("line 2"), std::string::npos);
}

TEST_F(CliTest, ImputeWritesEveryCell) {
  const auto data = synth("d.csv");
  const auto out = dir_ / "out.csv";
  const auto r = run({"impute", data.string(), "-m", "cpd", "-o", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("method=cpd iterations=100 final_observed_rmse=", 0), 0u);
  std::ifstream in(out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "u,i,m,value");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const double v = std::stod(line.substr(line.rfind(',') + 1));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    ++rows;
  }
  EXPECT_EQ(rows, 30u * 5u * 4u);
  EXPECT_TRUE(fs::exists(out.string() + ".config.json"));
}

TEST_F(CliTest, ImputeIsDeterministicAndHonoursFlags) {
  const auto data = synth("d.csv");
  const auto cfg = write("gain.json", R"({"method": "gain", "batch_size": 8})");
  const auto a = run({"impute", data.string(), "-c", cfg.string(), "--max-iters", "2", "-o", (dir_ / "a.csv").string()});
  const auto b = run({"impute", data.string(), "-c", cfg.string(), "--max-iters", "2", "-o", (dir_ / "b.csv").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(slurp(dir_ / "a.csv"), slurp(dir_ / "b.csv"));
  EXPECT_NE(a.out.find("iterations=2"), std::string::npos);
  EXPECT_NE(slurp(dir_ / "a.csv.config.json").find("\"batch_size\": 8"), std::string::npos);
  EXPECT_EQ(run({"impute", data.string(), "-m", "gan", "-c", cfg.string(), "-o", (dir_ / "c.csv").string()}).code,
            cli::kUsage);
}

TEST_F(CliTest, BenchmarkTables) {
  const auto cfg = write("run.json", R"({
    "seed": 3,
    "jobs": 2,
    "cv": {"cycles": 1, "folds": 2},
    "attempts": "1-3",
    "datasets": [{"name": "toy", "synth": {"learners": 30, "questions": 5, "attempts": 4}}],
    "methods": [{"method": "tf", "iterations": 20}, {"method": "cpd", "iterations": 20}]
  })");
  const auto out = dir_ / "bench";
  const auto r = run({"benchmark", cfg.string(), "--output-dir", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rmse = slurp(out / "rmse.csv");
  EXPECT_EQ(count_lines(rmse), 1u + 2u * 3u);
  EXPECT_EQ(count_lines(slurp(out / "spearman.csv")), 1u + 2u);
  EXPECT_EQ(count_lines(slurp(out / "sparsity.csv")), 1u + 3u);
  EXPECT_TRUE(fs::exists(out / "curves.csv"));
  EXPECT_TRUE(fs::exists(out / "report.json"));
  EXPECT_NE(slurp(out / "effective_config.json").find("\"mono_weight\""), std::string::npos);
  EXPECT_NE(r.out.find("toy"), std::string::npos);
}

TEST_F(CliTest, BenchmarkConfigErrors) {
  const auto unknown = write("u.json", R"({"datasets": [], "methods": [], "bogus": 1})");
  EXPECT_EQ(run({"benchmark", unknown.string()}).code, cli::kUsage);
  const auto missing = write("m.json", R"({"datasets": [{"name": "x", "path": "nope.csv"}],
                                           "methods": [{"method": "tf"}]})");
  EXPECT_EQ(run({"benchmark", missing.string(), "--output-dir", (dir_ / "o").string()}).code, cli::kData);
  EXPECT_EQ(run({"benchmark", (dir_ / "absent.json").string()}).code, cli::kUsage);
}

TEST_F(CliTest, RelativeDatasetPathsResolveAgainstConfig) {
  synth("rel.csv");
  const auto cfg = write("r.json", R"({"cv": {"cycles": 1, "folds": 2}, "attempts": [1],
    "datasets": [{"name": "rel", "path": "rel.csv"}], "methods": [{"method": "tf", "iterations": 5}]})");
  const auto parsed = cli::load_run_config(cfg);
  ASSERT_TRUE(parsed.datasets[0].path.has_value());
  EXPECT_EQ(*parsed.datasets[0].path, dir_ / "rel.csv");
  EXPECT_EQ(run({"benchmark", cfg.string(), "--output-dir", (dir_ / "o").string()}).code, 0);
}
