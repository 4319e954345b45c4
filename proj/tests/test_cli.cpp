#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  static fs::path dir() { return fs::temp_directory_path() / "tokmerge_cli_test"; }

  // Small but complete run: default n_init (16) plus one BO step.
  static void SetUpTestSuite() {
    fs::remove_all(dir());
    fs::create_directories(dir());
    std::ofstream(dir() / "small.cfg") << "seed.dataset = 7\nseed.weights = 100\nseed.channel = 11\nseed.bo = 0\n"
                                          "dataset.calib_per_class = 8\ndataset.eval_per_class = 16\n"
                                          "bo.budget = 17\nbo.restarts = 2\nbo.eval_subset = 64\n"
                                          "bo.acquisition_samples = 64\nsweep.random_baselines = 2\n"
                                          "output_dir = out\n";
  }

  static RunResult run(const std::string& args) {
    const auto out = dir() / "stdout.txt", err = dir() / "stderr.txt";
    const std::string cmd = std::string(TOKMERGE_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  static std::string cfg() { return "-c " + (dir() / "small.cfg").string(); }

  static void write_front(const fs::path& p) {
    std::ofstream(p) << R"({"reference_point": {"accuracy": 0.0, "flops": 10e9},
      "points": [
        {"schedule": [0.3, 0.3, 0.3, 0.3], "accuracy": 0.685, "flops": 6000000000},
        {"schedule": [0.2, 0.1, 0.2, 0.1], "accuracy": 0.75, "flops": 7300000000},
        {"schedule": [0.0, 0.0, 0.1, 0.0], "accuracy": 0.79, "flops": 9900000000}]})";
  }
};

}  // namespace

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("optimize").code, 2);  // missing --config
  EXPECT_EQ(run("frobnicate").code, 2);
}

TEST_F(CliTest, ConfigErrorsNameKeyOrPath) {
  std::ofstream(dir() / "badkey.cfg") << "seed.dataset = 1\nseed.weights = 1\nseed.channel = 1\nseed.bo = 1\nbo.budgte = 3\n";
  auto r = run("optimize -c " + (dir() / "badkey.cfg").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bo.budgte"), std::string::npos) << r.err;

  std::ofstream(dir() / "noweights.cfg") << "seed.dataset = 1\nseed.weights = 1\nseed.channel = 1\nseed.bo = 1\n"
                                            "model.weights_file = missing/weights.bin\n";
  r = run("optimize -c " + (dir() / "noweights.cfg").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find((dir() / "missing/weights.bin").string()), std::string::npos) << r.err;

  r = run("optimize -c " + (dir() / "absent.cfg").string());
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, SelectScenarios) {
  write_front(dir() / "front3.json");
  const std::string f = "select --front " + (dir() / "front3.json").string();

  auto r = run(f + " --max-accuracy");
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["index"], 2);
  EXPECT_EQ(j["point"]["accuracy"], 0.79);

  r = run(f + " --min-flops --acc-at-least 0.75");
  ASSERT_EQ(r.code, 0) << r.err;
  j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j["feasible"].get<bool>());
  EXPECT_EQ(j["index"], 1);
  EXPECT_EQ(j["point"]["flops"], 7300000000LL);

  r = run(f + " --flops-at-most 6e9");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["index"], 0);

  r = run(f + " --flops-at-most 0");
  ASSERT_EQ(r.code, 0) << r.err;
  j = nlohmann::json::parse(r.out);
  EXPECT_FALSE(j["feasible"].get<bool>());
  EXPECT_TRUE(j.contains("reason"));

  EXPECT_EQ(run(f).code, 2);                          // no scenario
  EXPECT_EQ(run(f + " --max-accuracy --min-flops --acc-at-least 0.5").code, 2);
  std::ofstream(dir() / "broken.json") << "{\"points\": [";
  EXPECT_NE(run("select --max-accuracy --front " + (dir() / "broken.json").string()).code, 0);
}

TEST_F(CliTest, GenDataAndCalibrate) {
  auto r = run("gen-data " + cfg());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"calibration.bin", "evaluation.bin", "weights.bin"}) EXPECT_TRUE(fs::exists(dir() / "out" / f));
  r = run("calibrate " + cfg());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["evaluation_samples"], 128);
  EXPECT_GE(j["clean_accuracy"].get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(dir() / "out" / "head.json"));
}

TEST_F(CliTest, OptimizeSweepAndTrace) {
  auto r = run("optimize --threads 1 " + cfg());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto out = dir() / "out";
  const std::string history = slurp(out / "history.jsonl");
  EXPECT_EQ(std::count(history.begin(), history.end(), '\n'), 17);
  const auto front = nlohmann::json::parse(slurp(out / "front.json"));
  EXPECT_FALSE(front["points"].empty());
  EXPECT_TRUE(fs::exists(out / "front.csv"));
  EXPECT_TRUE(fs::exists(out / "summary.json"));

  fs::rename(out / "history.jsonl", dir() / "history_1.jsonl");
  r = run("optimize --threads 3 " + cfg());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(out / "history.jsonl"), slurp(dir() / "history_1.jsonl"));

  // One SNR: one row per configuration.
  const std::size_t configs = front["points"].size() + 1 + 3 + 2;
  r = run("sweep " + cfg() + " --snr 20");
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = nlohmann::json::parse(slurp(out / "sweep.json"));
  EXPECT_EQ(rows.size(), configs);
  std::int64_t max_flops = 0, no_merge_flops = 0;
  for (const auto& row : rows) {
    max_flops = std::max(max_flops, row["flops"].get<std::int64_t>());
    if (row["kind"] == "no_merge") no_merge_flops = row["flops"].get<std::int64_t>();
  }
  EXPECT_EQ(no_merge_flops, max_flops);

  // Default grid: -10..25 dB in 5 dB steps, 8 rows per configuration.
  r = run("sweep " + cfg());
  ASSERT_EQ(r.code, 0) << r.err;
  rows = nlohmann::json::parse(slurp(out / "sweep.json"));
  EXPECT_EQ(rows.size(), 8 * configs);
  const std::string csv = slurp(out / "sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), std::ptrdiff_t(8 * configs + 1));
  const auto policy = nlohmann::json::parse(slurp(out / "policy.json"));
  EXPECT_EQ(policy["entries"].size(), 8u);

  r = run("export-trace " + cfg() + " --schedule 0.3,0.3,0.3,0.3 --sample 5 --out " + (dir() / "trace.csv").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string trace = slurp(dir() / "trace.csv");
  EXPECT_EQ(std::count(trace.begin(), trace.end(), '\n'), 12);  // header + 11 merges
  EXPECT_EQ(run("export-trace " + cfg() + " --schedule 0.3,0.3").code, 2);
  EXPECT_EQ(run("export-trace " + cfg() + " --schedule 0.1,0.1,0.1,0.1 --sample 100000").code, 2);
}
