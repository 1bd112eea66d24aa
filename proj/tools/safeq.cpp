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

// Command-line entry point: train | eval | explain | report.
//
// Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 runtime failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "safeq/config.hpp"
#include "safeq/errors.hpp"
#include "safeq/pipeline.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitRuntime = 4;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<double> lambda;
  std::optional<int> episodes;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required) {
  auto* opt = cmd->add_option("--config", f.config_path, "Run configuration file (INI)");
  if (config_required) opt->required();
  cmd->add_option("--seed", f.seed, "Override [run] seed");
  cmd->add_option("--out", f.out, "Override [run] out (run directory)");
  cmd->add_option("--mode", f.mode, "Override [safety] mode")
      ->check(CLI::IsMember({"observe", "penalize", "project", "terminate"}));
  cmd->add_option("--lambda", f.lambda, "Override [safety] lambda");
  cmd->add_option("--episodes", f.episodes, "Episodes to train / evaluate / explain");
}

// Loads the config and applies flag overrides. Train-only overrides of the
// episode count go into the agent config.
safeq::RunConfig resolve(const CommonFlags& f, bool episodes_are_training) {
  safeq::RunConfig c = safeq::load_config(f.config_path);
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.out_dir = *f.out;
  if (f.mode) c.mode.kind = safeq::parse_enforcement_kind(*f.mode);
  if (f.lambda) c.mode.lambda = *f.lambda;
  if (f.episodes && episodes_are_training) c.agent.episodes = *f.episodes;
  c.sync_seeds();
  c.validate();
  return c;
}

std::string checkpoint_or_default(const std::optional<std::string>& checkpoint, const safeq::RunConfig& c) {
  return checkpoint ? *checkpoint : safeq::file_in(c.out_dir, "checkpoint.txt");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"safeq: constrained deep Q-learning with Shapley and saliency explanations"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, explain_flags, report_flags;
  bool quiet = false;
  std::optional<std::string> eval_checkpoint, explain_checkpoint;
  std::optional<int> explain_every;
  std::vector<std::string> report_features;
  std::optional<std::string> report_dir;

  auto* train = app.add_subcommand("train", "Train a constrained DQN agent");
  add_common(train, train_flags, true);
  train->add_flag("--quiet", quiet, "Do not print per-episode progress");

  auto* eval = app.add_subcommand("eval", "Greedy rollouts of a trained agent, no learning");
  add_common(eval, eval_flags, true);
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint (default <out>/checkpoint.txt)");

  auto* explain = app.add_subcommand("explain", "SHAP and saliency attributions for greedy rollouts");
  add_common(explain, explain_flags, true);
  explain->add_option("--checkpoint", explain_checkpoint, "Checkpoint (default <out>/checkpoint.txt)");
  explain->add_option("--every", explain_every, "Attribute every k-th step");

  auto* report = app.add_subcommand("report", "Plot-ready series from a run directory");
  add_common(report, report_flags, false);
  report->add_option("run_dir", report_dir, "Run directory (default: --out, or the config's out)");
  report->add_option("--features", report_features, "Feature names for temporal series")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) {
      const safeq::RunConfig c = resolve(train_flags, true);
      auto outcome = safeq::cmd_train(c, [&](const safeq::EpisodeStats& s) {
        if (!quiet) {
          std::printf("episode %4d  steps %4d  reward %7.1f  shaped %8.2f  cvc %4d  eps %.3f\n", s.episode,
                      s.steps, s.total_raw_reward, s.total_shaped_reward, s.cvc, s.epsilon);
        }
      });
      const auto summary = safeq::summarize(outcome.log, c.agent.gamma);
      std::printf("trained %d episodes, mean cvc %.2f, mean reward %.1f -> %s\n", summary.episodes,
                  summary.mean_cvc, summary.mean_raw_reward, c.out_dir.c_str());
    } else if (*eval) {
      const safeq::RunConfig c = resolve(eval_flags, false);
      const int n = eval_flags.episodes.value_or(c.eval_episodes);
      const auto s = safeq::cmd_eval(checkpoint_or_default(eval_checkpoint, c), c, n);
      std::printf("%s\n", safeq::to_json(s).dump(2).c_str());
    } else if (*explain) {
      safeq::RunConfig c = resolve(explain_flags, false);
      if (explain_every) c.explain.every = *explain_every;
      c.validate();
      const int n = explain_flags.episodes.value_or(c.explain.episodes);
      const auto out = safeq::cmd_explain(checkpoint_or_default(explain_checkpoint, c), c, n);
      std::printf("%zu attribution records -> %s\n\n%s", out.log.attributions().size(), c.out_dir.c_str(),
                  out.importance_table.c_str());
    } else if (*report) {
      std::string dir;
      if (report_dir) {
        dir = *report_dir;
      } else if (report_flags.out) {
        dir = *report_flags.out;
      } else if (!report_flags.config_path.empty()) {
        dir = resolve(report_flags, false).out_dir;
      } else {
        throw safeq::ConfigError("report: give a run directory, --out or --config");
      }
      const auto files = safeq::cmd_report(dir, report_features);
      std::printf("%s\n%s\n%s\n%s\n%s\n%s\n", files.violation_trend.c_str(), files.shap_temporal.c_str(),
                  files.saliency_temporal.c_str(), files.shap_heatmap.c_str(), files.saliency_heatmap.c_str(),
                  files.shap_importance.c_str());
    }
  } catch (const safeq::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const safeq::IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
