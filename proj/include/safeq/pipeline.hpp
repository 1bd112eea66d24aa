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

#ifndef SAFEQ_PIPELINE_HPP_
#define SAFEQ_PIPELINE_HPP_

// End-to-end train / eval / explain / report pipelines over a run directory.
//
// Run directory layout:
//   config.ini            config snapshot (re-parses to the same RunConfig)
//   checkpoint.txt        trained Q-network (see qnet.hpp for the format)
//   baselines.csv         background states for Shapley marginalisation
//   episodes.csv          per-episode training stats
//   violations.csv        per-step violation events
//   train_log.json        the full training RunLog
//   summary.json          training summary
//   eval.json             written by eval
//   attributions.csv      written by explain, SHAP and saliency records
//   heatmap_shap.csv, heatmap_saliency.csv, heatmap_saliency_signed.csv
//   shap_importance.txt   mean |SHAP| per feature, descending
//   report/               plot-ready series written by report

#include <algorithm>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "safeq/agent.hpp"
#include "safeq/config.hpp"
#include "safeq/env.hpp"
#include "safeq/errors.hpp"
#include "safeq/explain.hpp"
#include "safeq/qnet.hpp"
#include "safeq/safety.hpp"
#include "safeq/telemetry.hpp"

namespace safeq {

namespace fs = std::filesystem;

inline std::vector<std::string> constraint_names(const RunConfig& c) {
  std::vector<std::string> names;
  for (const auto& k : c.constraints) names.push_back(k.name);
  return names;
}

struct TrainOutcome {
  RunLog log;
  MlpParams params;
  std::vector<State> baselines;
};

inline TrainOutcome train_run(const RunConfig& c,
                              const std::function<void(const EpisodeStats&)>& progress = {}) {
  c.validate();
  CartPole env = make_env(c);
  const EnvSpec spec = env.env_spec();
  SafeEnvWrapper<CartPole> wrapper(env, make_constraints(c, env), c.mode);
  ConstrainedDqnAgent<CartPole> agent(c.agent, c.mlp_config(spec),
                                      static_cast<std::size_t>(c.explain.baseline_size));
  RunLog log(c.name, config_to_json(c), spec.feature_names, constraint_names(c));
  std::vector<ViolationEvent> events;
  for (int e = 0; e < c.agent.episodes; ++e) {
    events.clear();
    const EpisodeStats stats = agent.train_episode(wrapper, &events);
    log.record_episode(stats);
    for (const auto& ev : events) log.record_violation(ev);
    if (progress) progress(stats);
  }
  return {std::move(log), agent.params(), agent.baseline_states()};
}

inline void check_compatible(const MlpParams& params, const EnvSpec& spec) {
  if (params.layers.empty() || params.input_dim() != spec.state_dim ||
      params.output_dim() != spec.action_count) {
    throw ConfigError("checkpoint/spec mismatch: network maps " +
                      std::to_string(params.layers.empty() ? 0 : params.input_dim()) + " -> " +
                      std::to_string(params.layers.empty() ? 0 : params.output_dim()) +
                      ", environment has " + std::to_string(spec.state_dim) + " features and " +
                      std::to_string(spec.action_count) + " actions");
  }
}

struct EvalSummary {
  int episodes = 0;
  double mean_raw_reward = 0.0;
  double mean_steps = 0.0;
  double mean_cvc = 0.0;  // judged on requested actions
  int total_cvc = 0;
  // Steps whose executed action still violated a constraint.
  int post_enforcement_violations = 0;
  // Steps at which no action satisfied every constraint.
  int steps_without_safe_action = 0;
  bool zero_violations = false;
};

inline nlohmann::json to_json(const EvalSummary& s) {
  return {{"episodes", s.episodes},
          {"mean_raw_reward", s.mean_raw_reward},
          {"mean_steps", s.mean_steps},
          {"mean_cvc", s.mean_cvc},
          {"total_cvc", s.total_cvc},
          {"post_enforcement_violations", s.post_enforcement_violations},
          {"steps_without_safe_action", s.steps_without_safe_action},
          {"zero_violations", s.zero_violations}};
}

// Greedy rollouts through the configured safety wrapper; no learning.
inline EvalSummary evaluate_policy(const RunConfig& c, const MlpParams& params, int n_episodes) {
  if (n_episodes < 1) throw ConfigError("eval: number of episodes must be >= 1");
  CartPole env = make_env(c);
  const EnvSpec spec = env.env_spec();
  check_compatible(params, spec);
  const ConstraintSet constraints = make_constraints(c, env);
  SafeEnvWrapper<CartPole> wrapper(env, constraints, c.mode);

  EvalSummary out;
  out.episodes = n_episodes;
  for (int e = 0; e < n_episodes; ++e) {
    State s = wrapper.reset(mix_seed(c.seed, 1'000'000 + static_cast<std::uint64_t>(e)));
    for (;;) {
      bool any_safe = false;
      for (int a = 0; a < spec.action_count && !any_safe; ++a) any_safe = constraints.overshoot(s, a) <= 0.0;
      if (!any_safe) ++out.steps_without_safe_action;

      WrappedStepResult r = wrapper.step(s, greedy_action(params, s));
      if (constraints.overshoot(s, r.executed_action) > 0.0) ++out.post_enforcement_violations;
      if (r.violated()) ++out.total_cvc;
      out.mean_raw_reward += r.inner.reward;
      out.mean_steps += 1;
      if (r.inner.done || r.inner.truncated) break;
      s = std::move(r.inner.next_state);
    }
  }
  out.mean_raw_reward /= n_episodes;
  out.mean_steps /= n_episodes;
  out.mean_cvc = static_cast<double>(out.total_cvc) / n_episodes;
  out.zero_violations = out.total_cvc == 0;
  return out;
}

// Greedy rollouts that attribute the greedy action's Q-value every
// `explain.every` steps, with both the configured SHAP method and saliency.
// The returned log holds the rollout episodes and their attribution records.
inline RunLog explain_run(const RunConfig& c, const MlpParams& params,
                          const std::vector<State>& baseline_states, int n_episodes) {
  if (n_episodes < 1) throw ConfigError("explain: number of episodes must be >= 1");
  CartPole env = make_env(c);
  const EnvSpec spec = env.env_spec();
  check_compatible(params, spec);
  const BaselineSet baselines(baseline_states);
  if (baselines.dim() != spec.state_dim) throw ConfigError("explain: baseline states do not match the environment");
  SafeEnvWrapper<CartPole> wrapper(env, make_constraints(c, env), c.mode);
  Rng kernel_rng(mix_seed(c.seed, 7));

  RunLog log(c.name, config_to_json(c), spec.feature_names, constraint_names(c));
  std::vector<AttributionRecord> pending;
  std::vector<ViolationEvent> events;
  for (int e = 0; e < n_episodes; ++e) {
    pending.clear();
    events.clear();
    EpisodeStats stats;
    stats.episode = e;
    State s = wrapper.reset(mix_seed(c.seed, 2'000'000 + static_cast<std::uint64_t>(e)));
    for (int step = 0;; ++step) {
      const int a = greedy_action(params, s);
      if (step % c.explain.every == 0) {
        AttributionRecord shap = c.explain.shap_method == AttributionMethod::kShapExact
                                     ? shap_exact(params, s, a, baselines)
                                     : shap_kernel(params, s, a, baselines, c.explain.n_samples, kernel_rng);
        AttributionRecord sal = saliency(params, s, a);
        shap.episode = sal.episode = e;
        shap.step = sal.step = step;
        pending.push_back(std::move(shap));
        pending.push_back(std::move(sal));
      }
      WrappedStepResult r = wrapper.step(s, a);
      stats.total_raw_reward += r.inner.reward;
      stats.total_shaped_reward += r.shaped_reward;
      stats.steps += 1;
      if (r.violated()) stats.cvc += 1;
      events.insert(events.end(), r.violations.begin(), r.violations.end());
      if (r.inner.done || r.inner.truncated) break;
      s = std::move(r.inner.next_state);
    }
    log.record_episode(stats);
    for (const auto& ev : events) log.record_violation(ev);
    for (const auto& rec : pending) log.record_attribution(rec);
  }
  return log;
}

// Mean |SHAP| per feature, sorted descending, as "feature value" rows.
inline std::string format_importance_table(const std::vector<std::string>& feature_names,
                                           const Eigen::VectorXd& mean_abs) {
  std::vector<std::size_t> order(feature_names.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mean_abs[a] > mean_abs[b]; });
  std::size_t width = 7;
  for (const auto& n : feature_names) width = std::max(width, n.size());
  std::ostringstream o;
  o << std::left;
  o.width(static_cast<std::streamsize>(width));
  o << "Feature" << " | Mean SHAP Value\n";
  o << std::string(width, '-') << "-+----------------\n";
  for (std::size_t i : order) {
    o.width(static_cast<std::streamsize>(width));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", mean_abs[static_cast<Eigen::Index>(i)]);
    o << feature_names[i] << " | " << buf << "\n";
  }
  return o.str();
}

inline void write_baselines_csv(const std::string& path, const std::vector<std::string>& feature_names,
                                const std::vector<State>& states) {
  std::string out;
  for (std::size_t j = 0; j < feature_names.size(); ++j) out += (j ? "," : "") + feature_names[j];
  out += "\n";
  for (const auto& s : states) {
    for (Eigen::Index j = 0; j < s.size(); ++j) out += (j ? "," : "") + format_number(s[j]);
    out += "\n";
  }
  detail::write_text(path, out);
}

inline std::vector<State> read_baselines_csv(const std::string& path) {
  std::vector<std::string> header;
  const auto rows = detail::read_csv_rows(path, nullptr, &header);
  std::vector<State> out;
  for (const auto& r : rows) {
    State s(static_cast<Eigen::Index>(r.size()));
    for (std::size_t j = 0; j < r.size(); ++j) s[static_cast<Eigen::Index>(j)] = detail::parse_double(path, r[j]);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw IoError(path, "no baseline states");
  return out;
}

inline void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
}

inline std::string file_in(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// Trains and writes checkpoint, baselines and telemetry into config.out_dir.
inline TrainOutcome cmd_train(const RunConfig& c,
                              const std::function<void(const EpisodeStats&)>& progress = {}) {
  TrainOutcome out = train_run(c, progress);
  ensure_directory(c.out_dir);
  detail::write_text(file_in(c.out_dir, "config.ini"), format_config(c));
  save_checkpoint(file_in(c.out_dir, "checkpoint.txt"), out.params);
  write_baselines_csv(file_in(c.out_dir, "baselines.csv"), out.log.feature_names(), out.baselines);
  export_csv(out.log, CsvKind::kEpisodes, file_in(c.out_dir, "episodes.csv"));
  export_csv(out.log, CsvKind::kViolations, file_in(c.out_dir, "violations.csv"));
  export_json(out.log, file_in(c.out_dir, "train_log.json"));
  detail::write_text(file_in(c.out_dir, "summary.json"),
                     to_json(summarize(out.log, c.agent.gamma)).dump(2) + "\n");
  return out;
}

inline EvalSummary cmd_eval(const std::string& checkpoint, const RunConfig& c, int n_episodes) {
  const MlpParams params = load_checkpoint(checkpoint);
  EvalSummary s = evaluate_policy(c, params, n_episodes);
  ensure_directory(c.out_dir);
  detail::write_text(file_in(c.out_dir, "eval.json"), to_json(s).dump(2) + "\n");
  return s;
}

struct ExplainOutcome {
  RunLog log;
  Eigen::VectorXd mean_abs_shap;
  std::string importance_table;
};

inline ExplainOutcome cmd_explain(const std::string& checkpoint, const RunConfig& c, int n_episodes) {
  const MlpParams params = load_checkpoint(checkpoint);
  const std::string baselines_path = file_in(fs::path(checkpoint).parent_path().string(), "baselines.csv");
  std::vector<State> baselines;
  if (fs::exists(baselines_path)) {
    baselines = read_baselines_csv(baselines_path);
  } else {
    baselines.push_back(State::Zero(params.input_dim()));
  }
  ExplainOutcome out{explain_run(c, params, baselines, n_episodes), {}, {}};
  const auto& names = out.log.feature_names();
  ensure_directory(c.out_dir);
  export_csv(out.log, CsvKind::kAttributions, file_in(c.out_dir, "attributions.csv"));
  export_heatmap_csv(heatmap_matrix(out.log.attributions(), c.explain.shap_method), names,
                     file_in(c.out_dir, "heatmap_shap.csv"));
  export_heatmap_csv(heatmap_matrix(out.log.attributions(), AttributionMethod::kSaliency), names,
                     file_in(c.out_dir, "heatmap_saliency.csv"));
  export_heatmap_csv(heatmap_matrix(out.log.attributions(), AttributionMethod::kSaliency, true), names,
                     file_in(c.out_dir, "heatmap_saliency_signed.csv"));
  out.mean_abs_shap = mean_abs_attribution(out.log.attributions(), c.explain.shap_method);
  out.importance_table = format_importance_table(names, out.mean_abs_shap);
  detail::write_text(file_in(c.out_dir, "shap_importance.txt"), out.importance_table);
  export_json(out.log, file_in(c.out_dir, "explain_log.json"));
  return out;
}

// Files written by cmd_report, relative to the run directory.
struct ReportFiles {
  std::string violation_trend;
  std::string shap_temporal;
  std::string saliency_temporal;
  std::string shap_heatmap;
  std::string saliency_heatmap;
  std::string shap_importance;
};

// Turns a run directory's telemetry into plot-ready CSV series under
// <run_dir>/report. `features` selects the temporal attribution series by
// name; empty means the config's report_features.
inline ReportFiles cmd_report(const std::string& run_dir, std::vector<std::string> features = {}) {
  const std::vector<std::string> required{"config.ini", "episodes.csv", "attributions.csv"};
  std::string missing;
  for (const auto& f : required) {
    if (!fs::exists(file_in(run_dir, f))) missing += (missing.empty() ? "" : ", ") + f;
  }
  if (!missing.empty()) throw IoError(run_dir, "missing " + missing);

  const RunConfig c = load_config(file_in(run_dir, "config.ini"));
  const EnvSpec spec = make_env(c).env_spec();
  if (features.empty()) features = c.explain.report_features;
  std::vector<int> columns;
  for (const auto& f : features) {
    const int idx = spec.feature_index(f);
    if (idx < 0) throw ConfigError("report: unknown feature '" + f + "'");
    columns.push_back(idx);
  }

  const auto episodes = read_episodes_csv(file_in(run_dir, "episodes.csv"));
  const auto records = read_attributions_csv(file_in(run_dir, "attributions.csv"));
  const fs::path out_dir = fs::path(run_dir) / "report";
  ensure_directory(out_dir);

  ReportFiles files{(out_dir / "violation_trend.csv").string(), (out_dir / "shap_temporal.csv").string(),
                    (out_dir / "saliency_temporal.csv").string(), (out_dir / "heatmap_shap.csv").string(),
                    (out_dir / "heatmap_saliency.csv").string(), (out_dir / "shap_importance.csv").string()};

  std::string trend = "episode,cvc,total_raw_reward,total_shaped_reward\n";
  for (const auto& e : episodes) {
    trend += std::to_string(e.episode) + "," + std::to_string(e.cvc) + "," + format_number(e.total_raw_reward) +
             "," + format_number(e.total_shaped_reward) + "\n";
  }
  detail::write_text(files.violation_trend, trend);

  auto temporal = [&](AttributionMethod m, const std::string& path) {
    const Heatmap h = heatmap_matrix(records, m);
    std::string out = "episode";
    for (const auto& f : features) out += "," + f;
    out += "\n";
    for (std::size_t col = 0; col < h.episodes.size(); ++col) {
      out += std::to_string(h.episodes[col]);
      for (int j : columns) out += "," + format_number(h.values(j, static_cast<Eigen::Index>(col)));
      out += "\n";
    }
    detail::write_text(path, out);
    export_heatmap_csv(h, spec.feature_names, m == AttributionMethod::kSaliency ? files.saliency_heatmap
                                                                                 : files.shap_heatmap);
  };
  temporal(c.explain.shap_method, files.shap_temporal);
  temporal(AttributionMethod::kSaliency, files.saliency_temporal);

  const Eigen::VectorXd importance = mean_abs_attribution(records, c.explain.shap_method);
  std::vector<std::size_t> order(spec.feature_names.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });
  std::string table = "rank,feature,mean_abs_shap\n";
  for (std::size_t r = 0; r < order.size(); ++r) {
    table += std::to_string(r + 1) + "," + spec.feature_names[order[r]] + "," +
             format_number(importance[static_cast<Eigen::Index>(order[r])]) + "\n";
  }
  detail::write_text(files.shap_importance, table);
  return files;
}

}  // namespace safeq

#endif  // SAFEQ_PIPELINE_HPP_
