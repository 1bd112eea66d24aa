/*
 * Copyright 2026 The safeq Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "safeq/pipeline.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gtest/gtest.h"

namespace safeq {
namespace {

namespace fs = std::filesystem;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int line_count(const std::string& text) { return static_cast<int>(std::count(text.begin(), text.end(), '\n')); }

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            (std::string("safeq_pipeline_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string dir(const std::string& name) const { return (root_ / name).string(); }

  // A quick constrained run: a handful of short episodes, learning from step 32.
  RunConfig small_config(const std::string& name, EnforcementKind kind = EnforcementKind::kPenalize) const {
    RunConfig c = load_config(std::string(SAFEQ_SOURCE_DIR) + "/configs/cartpole_penalize.ini");
    c.name = name;
    c.out_dir = dir(name);
    c.mode.kind = kind;
    c.agent.episodes = 6;
    c.agent.train_start_size = 32;
    c.agent.batch_size = 16;
    c.hidden_layers = {16};
    c.explain.baseline_size = 10;
    c.explain.every = 1;
    c.sync_seeds();
    return c;
  }

  fs::path root_;
};

TEST_F(PipelineTest, SingleEpisodeGivesOneRow) {
  RunConfig c = small_config("one");
  c.agent.episodes = 1;
  cmd_train(c);
  EXPECT_EQ(line_count(slurp(file_in(c.out_dir, "episodes.csv"))), 2);
  for (const char* f : {"config.ini", "checkpoint.txt", "baselines.csv", "violations.csv", "train_log.json",
                        "summary.json"}) {
    EXPECT_TRUE(fs::exists(file_in(c.out_dir, f))) << f;
  }
  EXPECT_EQ(load_config(file_in(c.out_dir, "config.ini")), c);
}

TEST_F(PipelineTest, TrainingIsDeterministic) {
  RunConfig a = small_config("a");
  RunConfig b = small_config("b");
  b.name = a.name;  // run_id is part of every row
  cmd_train(a);
  cmd_train(b);
  EXPECT_EQ(slurp(file_in(a.out_dir, "episodes.csv")), slurp(file_in(b.out_dir, "episodes.csv")));
  EXPECT_EQ(slurp(file_in(a.out_dir, "checkpoint.txt")), slurp(file_in(b.out_dir, "checkpoint.txt")));

  RunConfig other = small_config("other");
  other.seed = 1;
  other.sync_seeds();
  other.name = a.name;
  cmd_train(other);
  EXPECT_NE(slurp(file_in(a.out_dir, "checkpoint.txt")), slurp(file_in(other.out_dir, "checkpoint.txt")));
}

TEST_F(PipelineTest, TrainLogMatchesCsv) {
  const RunConfig c = small_config("log");
  const TrainOutcome out = cmd_train(c);
  const RunLog back = import_json(file_in(c.out_dir, "train_log.json"));
  EXPECT_EQ(back.episodes(), out.log.episodes());
  EXPECT_EQ(read_violations_csv(file_in(c.out_dir, "violations.csv")), out.log.violations());
  int cvc_total = 0;
  for (const auto& e : out.log.episodes()) cvc_total += e.cvc;
  EXPECT_GE(static_cast<int>(out.log.violations().size()), cvc_total);
}

TEST_F(PipelineTest, EvalRejectsZeroEpisodes) {
  const RunConfig c = small_config("eval0");
  const MlpParams p = init_params(c.mlp_config(CartPole().env_spec()));
  EXPECT_THROW(evaluate_policy(c, p, 0), ConfigError);
}

TEST_F(PipelineTest, ProjectEvalNeverExecutesAViolatingActionWhenASafeOneExists) {
  const RunConfig c = small_config("proj", EnforcementKind::kProject);
  const MlpParams p = init_params(c.mlp_config(CartPole().env_spec()));
  const EvalSummary s = evaluate_policy(c, p, 5);
  EXPECT_LE(s.post_enforcement_violations, s.steps_without_safe_action);
  if (s.steps_without_safe_action == 0) {
    EXPECT_EQ(s.post_enforcement_violations, 0);
  }
}

TEST_F(PipelineTest, CheckpointMismatchIsConfigError) {
  const RunConfig c = small_config("mismatch");
  const MlpParams wrong = init_params(MlpConfig{3, {8}, 2, Activation::kRelu, 0});
  EXPECT_THROW(evaluate_policy(c, wrong, 1), ConfigError);
  save_checkpoint(dir("wrong.txt"), wrong);
  EXPECT_THROW(cmd_eval(dir("wrong.txt"), c, 1), ConfigError);
  EXPECT_THROW(cmd_eval(dir("missing.txt"), c, 1), IoError);
}

TEST_F(PipelineTest, ExplainRecordsEveryStep) {
  const RunConfig c = small_config("explain");
  cmd_train(c);
  const ExplainOutcome out = cmd_explain(file_in(c.out_dir, "checkpoint.txt"), c, 2);
  int steps = 0;
  for (const auto& e : out.log.episodes()) steps += e.steps;
  EXPECT_EQ(static_cast<int>(out.log.attributions().size()), 2 * steps);
  int shap = 0;
  for (const auto& r : out.log.attributions()) {
    if (r.method == AttributionMethod::kShapExact) {
      ++shap;
      EXPECT_LE(std::abs(r.efficiency_gap), 1e-6);
    }
  }
  EXPECT_EQ(shap, steps);
  EXPECT_EQ(line_count(slurp(file_in(c.out_dir, "attributions.csv"))), 2 * steps + 1);
  std::vector<std::string> names;
  const Heatmap h = read_heatmap_csv(file_in(c.out_dir, "heatmap_shap.csv"), &names);
  EXPECT_EQ(h.values.rows(), 4);
  EXPECT_EQ(h.values.cols(), 2);
  EXPECT_TRUE(fs::exists(file_in(c.out_dir, "shap_importance.txt")));
}

TEST_F(PipelineTest, ExplainEveryKSubsamples) {
  RunConfig c = small_config("every");
  const MlpParams p = init_params(c.mlp_config(CartPole().env_spec()));
  c.explain.every = 3;
  const RunLog log = explain_run(c, p, {State::Zero(4)}, 1);
  const int steps = log.episodes().at(0).steps;
  EXPECT_EQ(static_cast<int>(log.attributions().size()), 2 * ((steps + 2) / 3));
  for (const auto& r : log.attributions()) EXPECT_EQ(r.step % 3, 0);
}

TEST_F(PipelineTest, ReportOnEmptyDirectoryListsMissingFiles) {
  fs::create_directories(dir("empty"));
  try {
    cmd_report(dir("empty"));
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("episodes.csv"), std::string::npos);
    EXPECT_NE(msg.find("attributions.csv"), std::string::npos);
  }
}

TEST_F(PipelineTest, ReportWritesRequestedSeries) {
  const RunConfig c = small_config("report");
  cmd_train(c);
  cmd_explain(file_in(c.out_dir, "checkpoint.txt"), c, 3);
  const ReportFiles files = cmd_report(c.out_dir, {"pole_angle", "cart_velocity"});
  const std::string temporal = slurp(files.shap_temporal);
  EXPECT_EQ(temporal.substr(0, temporal.find('\n')), "episode,pole_angle,cart_velocity");
  EXPECT_EQ(line_count(temporal), 4);
  EXPECT_EQ(line_count(slurp(files.violation_trend)), c.agent.episodes + 1);
  EXPECT_EQ(line_count(slurp(files.shap_importance)), 5);
  EXPECT_THROW(cmd_report(c.out_dir, {"pole_tilt"}), ConfigError);
}

TEST(ImportanceTableTest, SortedDescending) {
  const std::string t = format_importance_table({"a", "b", "c"}, Eigen::Vector3d(0.1, 0.3, 0.2));
  EXPECT_LT(t.find("b "), t.find("c "));
  EXPECT_LT(t.find("c "), t.find("a "));
  EXPECT_NE(t.find("0.300000"), std::string::npos);
}

// --- command-line tool -------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + SAFEQ_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST_F(PipelineTest, CliExitCodes) {
  const std::string config = dir("cli.ini");
  {
    RunConfig c = small_config("cli");
    std::ofstream(config) << format_config(c);
  }
  const std::string out = dir("cli_run");
  EXPECT_EQ(run_cli("train --quiet --config " + config + " --out " + out), 0);
  EXPECT_TRUE(fs::exists(file_in(out, "checkpoint.txt")));
  EXPECT_EQ(run_cli("eval --config " + config + " --out " + out + " --episodes 2"), 0);
  EXPECT_TRUE(fs::exists(file_in(out, "eval.json")));
  EXPECT_EQ(run_cli("explain --config " + config + " --out " + out + " --episodes 1 --every 5"), 0);
  EXPECT_EQ(run_cli("report " + out + " --features pole_angle,cart_position"), 0);
  EXPECT_TRUE(fs::exists(file_in(out, "report/shap_temporal.csv")));

  EXPECT_EQ(run_cli("train --config " + config + " --lambda -1"), 2);
  EXPECT_EQ(run_cli("train --config " + config + " --mode sideways"), 2);
  EXPECT_EQ(run_cli("eval --config " + config + " --out " + out + " --episodes 0"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("train --config " + dir("nope.ini")), 3);
  EXPECT_EQ(run_cli("report " + dir("nothing_here")), 3);
  EXPECT_EQ(run_cli("eval --config " + config + " --checkpoint " + dir("nope.txt")), 3);
}

}  // namespace
}  // namespace safeq
