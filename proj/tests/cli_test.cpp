/*
 * Copyright 2026 The fednl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string output;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("fednl-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs the CLI inside the scratch directory with stdout and stderr merged.
  Outcome run(const std::string& args) const {
    const auto log = dir_ / "cli.log";
    const std::string cmd = "cd '" + dir_.string() + "' && env -u FEDNL_OUTPUT_ROOT '" FEDNL_CLI "' " + args + " > '" +
                            log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    Outcome out;
    out.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    out.output = read("cli.log");
    return out;
  }

  std::string read(const std::string& name) const {
    std::ifstream in(dir_ / name);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void write(const std::string& name, const std::string& text) const { std::ofstream(dir_ / name) << text; }

  fs::path dir_;
};

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

TEST_F(CliTest, SynthIsReproducible) {
  ASSERT_EQ(run("synth --classes 3 --per-class 200 --dim 2 --sep 8 --seed 4 --out a.csv").code, 0);
  ASSERT_EQ(run("synth --classes 3 --per-class 200 --dim 2 --sep 8 --seed 4 --out b.csv").code, 0);
  const auto a = read("a.csv");
  EXPECT_EQ(lines(a), 601u);
  EXPECT_EQ(a, read("b.csv"));
}

TEST_F(CliTest, SeedIsRequired) {
  const auto out = run("synth --classes 3 --per-class 10 --out a.csv");
  EXPECT_EQ(out.code, 2);
  EXPECT_NE(out.output.find("--seed"), std::string::npos) << out.output;
  EXPECT_FALSE(fs::exists(dir_ / "a.csv"));
}

TEST_F(CliTest, SynthRefusesToOverwrite) {
  ASSERT_EQ(run("synth --per-class 10 --seed 1 --out a.csv").code, 0);
  EXPECT_EQ(run("synth --per-class 10 --seed 2 --out a.csv").code, 2);
  EXPECT_EQ(run("synth --per-class 10 --seed 2 --out a.csv --force").code, 0);
}

TEST_F(CliTest, InjectLeavesInputUntouched) {
  ASSERT_EQ(run("synth --per-class 100 --seed 4 --out a.csv").code, 0);
  const auto before = read("a.csv");
  const auto out = run("inject --data a.csv --seed 2 --symmetric 0.2 --out n.csv --report r.json");
  ASSERT_EQ(out.code, 0) << out.output;
  EXPECT_EQ(read("a.csv"), before);
  EXPECT_EQ(lines(read("n.csv")), 301u);
  EXPECT_NE(read("r.json").find("realized_ratio"), std::string::npos);
  EXPECT_EQ(run("inject --data a.csv --seed 2 --symmetric 0.2 --pairs 0>1:0.1 --out m.csv").code, 2);
  EXPECT_EQ(run("inject --data missing.csv --seed 2 --symmetric 0.2 --out m.csv").code, 2);
}

TEST_F(CliTest, EstimatePrintsBeta) {
  ASSERT_EQ(run("synth --per-class 100 --seed 4 --out a.csv").code, 0);
  const auto out = run("estimate --data a.csv --seed 3 --epochs 5");
  EXPECT_EQ(out.code, 0) << out.output;
  EXPECT_NE(out.output.find("\"beta\""), std::string::npos);
  EXPECT_NE(out.output.find("\"removed_ids\""), std::string::npos);
}

TEST_F(CliTest, BadConfigNamesEveryField) {
  write("bad.conf", "seed = 1\nnoise.beta = 1.5\nbogus = 1\n");
  const auto out = run("run --config bad.conf --seed 1 --out r");
  EXPECT_EQ(out.code, 2);
  EXPECT_NE(out.output.find("noise.beta"), std::string::npos) << out.output;
  EXPECT_NE(out.output.find("bogus: unknown key"), std::string::npos) << out.output;
  EXPECT_FALSE(fs::exists(dir_ / "r"));
}

TEST_F(CliTest, RunAndReport) {
  write("small.conf", "data.per_class = 50\npartition.participants = 2\nfederation.rounds = 2\n"
                      "noise.type = symmetric\nnoise.beta = 0.3\nestimator.local_epochs = 3\n");
  const auto out = run("run --config small.conf --seed 8 --out r");
  ASSERT_EQ(out.code, 0) << out.output;
  EXPECT_EQ(lines(read("r/rounds.ndrecords")), 2u);
  EXPECT_NE(read("r/config.echo").find("seed = 8"), std::string::npos);
  EXPECT_EQ(run("run --config small.conf --seed 8 --out r").code, 2);
  EXPECT_EQ(run("run --config small.conf --out r2").code, 2);

  const auto report = run("report r");
  EXPECT_EQ(report.code, 0) << report.output;
  EXPECT_TRUE(fs::exists(dir_ / "r/report/final.tsv"));
  EXPECT_EQ(run("report nowhere").code, 2);
}

TEST_F(CliTest, RoundsGrid) {
  write("grid.conf", "data.per_class = 50\npartition.participants = 2\ntrainer.l2_lambda = 0.01\n"
                     "rounds.epochs = 20, 40\nrounds.q_o = 0.1\n");
  const auto out = run("rounds --config grid.conf --seed 2 --out g");
  ASSERT_EQ(out.code, 0) << out.output;
  EXPECT_EQ(lines(read("g/rounds.table")), 3u);

  write("empty.conf", "rounds.epochs =\n");
  EXPECT_EQ(run("rounds --config empty.conf --seed 2 --out e").code, 2);
}

TEST_F(CliTest, UnknownCommand) { EXPECT_EQ(run("frobnicate").code, 2); }

}  // namespace
