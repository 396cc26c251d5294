// SPDX-License-Identifier: Apache-2.0
// Drives the hinge binary end to end on a small config.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "hinge_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

int run(const std::string& args) {
  const std::string cmd = std::string(HINGE_CLI) + " " + args + " >>" + path("log.txt") + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string bytes(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

json read_json(const std::string& p) {
  std::ifstream f(p);
  return json::parse(f);
}

bool schema_valid(const std::string& report) {
  const std::string cmd = std::string(HINGE_PYTHON) + " " + HINGE_SOURCE_DIR +
                          "/tests/cli/validate_report.py " + HINGE_SOURCE_DIR +
                          "/schemas/report.schema.json " + report + " >>" + path("log.txt") +
                          " 2>&1";
  return std::system(cmd.c_str()) == 0;
}

void write_config(const std::string& name, std::size_t classes) {
  const json cfg = {
      {"seed", 7},
      {"arch",
       {{"input", {{"channels", 3}, {"height", 8}, {"width", 8}}},
        {"classes", classes},
        {"blocks",
         {{{"kind", "plain"}, {"out_channels", 8}},
          {{"kind", "basic"}, {"out_channels", 8}},
          {{"kind", "basic"}, {"out_channels", 16}, {"stride", 2}}}}}},
      {"data", {{"n_train", 64}, {"n_test", 64}}},
      {"train", {{"epochs", 2}, {"batch_size", 16}}},
      {"compress", {{"max_epochs", 1}, {"batch_size", 16}}},
      {"distill", {{"epochs", 1}}}};
  std::ofstream(path(name)) << cfg.dump(2);
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    write_config("cfg.json", 4);
    write_config("cfg3.json", 3);
    ASSERT_EQ(run("train --config " + path("cfg.json") + " --out " + path("base.hngw")), 0);
  }
};

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("bogus"), 2);
  EXPECT_EQ(run("train --config " + path("missing.json") + " --out " + path("x.hngw")), 2);
  EXPECT_EQ(run("train --out " + path("x.hngw")), 2);
  EXPECT_EQ(run("evaluate --config " + path("cfg.json") + " --ckpt " + path("missing.hngw")), 2);
}

TEST_F(Cli, BadConfigIsUsageError) {
  std::ofstream(path("bad.json")) << R"({"compress": {"lamda": 1}})";
  EXPECT_EQ(run("train --config " + path("bad.json") + " --out " + path("x.hngw")), 2);
  std::ofstream(path("broken.json")) << "{";
  EXPECT_EQ(run("train --config " + path("broken.json") + " --out " + path("x.hngw")), 2);
}

TEST_F(Cli, TrainIsReproducible) {
  ASSERT_EQ(run("train --config " + path("cfg.json") + " --out " + path("base2.hngw")), 0);
  EXPECT_EQ(bytes(path("base.hngw")), bytes(path("base2.hngw")));
  const json m = read_json(path("base.metrics.json"));
  EXPECT_EQ(m["command"], "train");
  EXPECT_EQ(m["history"].size(), 2u);
  EXPECT_EQ(bytes(path("base.metrics.json")), bytes(path("base2.metrics.json")));
}

TEST_F(Cli, Evaluate) {
  EXPECT_EQ(run("evaluate --config " + path("cfg.json") + " --ckpt " + path("base.hngw")), 0);
}

TEST_F(Cli, CompressLooseTarget) {
  const std::string args = "compress --config " + path("cfg.json") + " --ckpt " +
                           path("base.hngw") + " --target-ratio 0.999 --out ";
  ASSERT_EQ(run(args + path("loose.hngw") + " --report " + path("loose.json")), 0);
  const json r = read_json(path("loose.json"));
  EXPECT_LE(r["equivalence_max_deviation"].get<double>(), 1e-10);
  EXPECT_GE(r["gamma"].get<double>(), 0.9);
  EXPECT_TRUE(schema_valid(path("loose.json")));
  ASSERT_EQ(run(args + path("loose2.hngw") + " --report " + path("loose2.json")), 0);
  EXPECT_EQ(bytes(path("loose.hngw")), bytes(path("loose2.hngw")));
  EXPECT_EQ(bytes(path("loose.json")), bytes(path("loose2.json")));
}

TEST_F(Cli, CompressHalfThenFinetune) {
  ASSERT_EQ(run("compress --config " + path("cfg.json") + " --ckpt " + path("base.hngw") +
                " --target-ratio 0.5 --out " + path("half.hngw") + " --report " +
                path("half.json")),
            0);
  const json r = read_json(path("half.json"));
  EXPECT_TRUE(r["exact"].get<bool>() || r["status"] == "closest_step");
  if (r["exact"].get<bool>()) {
    EXPECT_NEAR(r["gamma"].get<double>(), 0.5, 0.005);
  }
  EXPECT_TRUE(schema_valid(path("half.json")));
  EXPECT_EQ(run("evaluate --config " + path("cfg.json") + " --ckpt " + path("half.hngw")), 0);

  ASSERT_EQ(run("finetune --config " + path("cfg.json") + " --ckpt " + path("half.hngw") +
                " --teacher " + path("base.hngw") + " --out " + path("ft.hngw") + " --distill"),
            0);
  const json m = read_json(path("ft.metrics.json"));
  EXPECT_TRUE(m["distill"].get<bool>());
  EXPECT_EQ(m["balance"], 0.4);
  ASSERT_EQ(run("finetune --config " + path("cfg.json") + " --ckpt " + path("half.hngw") +
                " --teacher " + path("base.hngw") + " --out " + path("ce.hngw")),
            0);
  EXPECT_FALSE(read_json(path("ce.metrics.json"))["distill"].get<bool>());
  EXPECT_EQ(read_json(path("ce.metrics.json"))["balance"], 0.0);
  // A compacted checkpoint cannot be compressed again.
  EXPECT_EQ(run("compress --config " + path("cfg.json") + " --ckpt " + path("half.hngw") +
                " --target-ratio 0.5 --out " + path("x.hngw") + " --report " + path("x.json")),
            2);
}

TEST_F(Cli, CompressInfeasibleTarget) {
  EXPECT_EQ(run("compress --config " + path("cfg.json") + " --ckpt " + path("base.hngw") +
                " --target-ratio 0.001 --out " + path("inf.hngw") + " --report " +
                path("inf.json")),
            4);
  const json r = read_json(path("inf.json"));
  EXPECT_EQ(r["status"], "infeasible");
  EXPECT_GT(r["floor_ratio"].get<double>(), 0.001);
  EXPECT_TRUE(schema_valid(path("inf.json")));
  EXPECT_FALSE(fs::exists(path("inf.hngw")));
}

TEST_F(Cli, CompressRejectsBadTarget) {
  for (const char* t : {"0", "1", "1.5", "-0.2"})
    EXPECT_EQ(run("compress --config " + path("cfg.json") + " --ckpt " + path("base.hngw") +
                  " --target-ratio " + t + " --out " + path("x.hngw") + " --report " +
                  path("x.json")),
              2)
        << t;
}

TEST_F(Cli, FinetuneClassMismatch) {
  ASSERT_EQ(run("train --config " + path("cfg3.json") + " --out " + path("three.hngw")), 0);
  EXPECT_EQ(run("finetune --config " + path("cfg.json") + " --ckpt " + path("base.hngw") +
                " --teacher " + path("three.hngw") + " --out " + path("x.hngw")),
            2);
}

TEST_F(Cli, Verify) {
  EXPECT_EQ(run("verify --prox"), 0);
  EXPECT_EQ(run("verify --grad --equiv"), 0);
}
