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

#ifndef SAFEQ_CONFIG_HPP_
#define SAFEQ_CONFIG_HPP_

#include <cctype>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include "json.hpp"

#include "safeq/agent.hpp"
#include "safeq/env.hpp"
#include "safeq/errors.hpp"
#include "safeq/explain.hpp"
#include "safeq/qnet.hpp"
#include "safeq/safety.hpp"

namespace safeq {

// Declarative form of a feature-threshold constraint.
struct ConstraintSpec {
  std::string name;
  std::string feature;
  Comparison comparison = Comparison::kAbsLeq;
  double threshold = 0.0;
  double budget = 0.0;
  // Judge the state the action leads to (one-step model prediction) rather
  // than the state it is taken from.
  bool lookahead = true;

  bool operator==(const ConstraintSpec&) const = default;
};

struct ExplainSettings {
  AttributionMethod shap_method = AttributionMethod::kShapExact;
  int baseline_size = 100;
  int n_samples = 64;  // shap_kernel only
  int every = 1;       // attribute every k-th step
  int episodes = 20;
  std::vector<std::string> report_features = {"pole_angle", "pole_angular_velocity"};

  bool operator==(const ExplainSettings&) const = default;
};

struct RunConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  std::string out_dir = "runs/run";
  std::string env = "cartpole";
  int max_episode_steps = 500;
  EnforcementMode mode = EnforcementMode::observe();
  std::vector<ConstraintSpec> constraints;
  AgentConfig agent;
  std::vector<int> hidden_layers = {64, 64};
  Activation activation = Activation::kRelu;
  ExplainSettings explain;
  int eval_episodes = 20;

  bool operator==(const RunConfig&) const = default;

  // Seeds derived from `seed`; call after changing it.
  void sync_seeds() { agent.seed = seed; }

  MlpConfig mlp_config(const EnvSpec& spec) const {
    return MlpConfig{spec.state_dim, hidden_layers, spec.action_count, activation, mix_seed(seed, 0)};
  }

  void validate() const;
};

namespace detail {

inline ConfigError field_error(const std::string& section, const std::string& key,
                               const std::string& what) {
  return ConfigError("[" + section + "] " + key + ": " + what);
}

inline bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return true;
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

inline std::string fmt_double(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

// Reads typed values out of one INI section and rejects unknown keys.
class SectionReader {
 public:
  SectionReader(const boost::property_tree::ptree* tree, std::string name)
      : tree_(tree), name_(std::move(name)) {}

  template <class T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!tree_) return;
    auto it = tree_->find(key);
    if (it == tree_->not_found()) return;
    const std::string text = it->second.data();
    try {
      out = convert<T>(text);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw field_error(name_, key, "cannot parse '" + text + "' (" + e.what() + ")");
    }
  }

  void finish() const {
    if (!tree_) return;
    for (const auto& [key, value] : *tree_) {
      if (!seen_.count(key)) throw field_error(name_, key, "unknown key");
    }
  }

  const std::string& name() const { return name_; }

 private:
  template <class T>
  static T convert(const std::string& text) {
    std::size_t used = 0;
    T v{};
    if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (text == "true") return true;
      if (text == "false") return false;
      throw std::invalid_argument("expected true or false");
    } else if constexpr (std::is_same_v<T, double>) {
      v = std::stod(text, &used);
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!text.empty() && text[0] == '-') throw std::invalid_argument("must be non-negative");
      v = std::stoull(text, &used);
    } else {
      v = static_cast<T>(std::stoi(text, &used));
    }
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  }

  const boost::property_tree::ptree* tree_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline void RunConfig::validate() const {
  using detail::field_error;
  if (!detail::valid_name(name)) throw field_error("run", "name", "must be non-empty [A-Za-z0-9_.-]");
  if (env != "cartpole") throw field_error("env", "name", "only 'cartpole' is available");
  if (max_episode_steps < 1) throw field_error("env", "max_episode_steps", "must be >= 1");
  if (!(mode.lambda >= 0.0) || !std::isfinite(mode.lambda)) throw field_error("safety", "lambda", "must be >= 0");
  std::set<std::string> names;
  for (const auto& c : constraints) {
    if (!detail::valid_name(c.name)) throw field_error("constraint:" + c.name, "name", "must be [A-Za-z0-9_.-]");
    if (!names.insert(c.name).second) throw field_error("safety", "constraints", "duplicate '" + c.name + "'");
    if (CartPole().env_spec().feature_index(c.feature) < 0) {
      throw field_error("constraint:" + c.name, "feature", "unknown feature '" + c.feature + "'");
    }
    if (!std::isfinite(c.threshold)) throw field_error("constraint:" + c.name, "threshold", "must be finite");
  }
  try {
    agent.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[agent] ") + e.what());
  }
  for (int h : hidden_layers) {
    if (h < 1) throw field_error("network", "hidden", "layer sizes must be >= 1");
  }
  if (explain.baseline_size < 1) throw field_error("explain", "baseline_size", "must be >= 1");
  if (explain.every < 1) throw field_error("explain", "every", "must be >= 1");
  if (explain.episodes < 1) throw field_error("explain", "episodes", "must be >= 1");
  if (explain.shap_method == AttributionMethod::kSaliency) {
    throw field_error("explain", "shap", "must be shap_exact or shap_kernel");
  }
  if (explain.n_samples < 2 * CartPole::kStateDim + 2) {
    throw field_error("explain", "n_samples", "must be >= 2d+2");
  }
  for (const auto& f : explain.report_features) {
    if (CartPole().env_spec().feature_index(f) < 0) {
      throw field_error("explain", "report_features", "unknown feature '" + f + "'");
    }
  }
  if (eval_episodes < 1) throw field_error("eval", "episodes", "must be >= 1");
}

// Parses the INI-style run configuration. Missing keys keep their defaults;
// unknown sections and keys are errors.
inline RunConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  namespace pt = boost::property_tree;
  pt::ptree root;
  {
    std::istringstream in(text);
    try {
      pt::read_ini(in, root);
    } catch (const pt::ini_parser_error& e) {
      throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
    }
  }
  auto section = [&](const std::string& name) -> const pt::ptree* {
    auto it = root.find(name);
    return it == root.not_found() ? nullptr : &it->second;
  };

  RunConfig c;
  try {
    std::set<std::string> known{"run", "env", "safety", "agent", "network", "explain", "eval"};

    detail::SectionReader run(section("run"), "run");
    run.read("name", c.name);
    run.read("seed", c.seed);
    run.read("out", c.out_dir);
    run.finish();

    detail::SectionReader env(section("env"), "env");
    env.read("name", c.env);
    env.read("max_episode_steps", c.max_episode_steps);
    env.finish();

    detail::SectionReader safety(section("safety"), "safety");
    std::string mode = "observe", constraint_list;
    double lambda = 0.0;
    safety.read("mode", mode);
    safety.read("lambda", lambda);
    safety.read("constraints", constraint_list);
    safety.finish();
    try {
      c.mode = {parse_enforcement_kind(mode), lambda};
    } catch (const std::invalid_argument& e) {
      throw detail::field_error("safety", "mode", e.what());
    }
    for (const auto& name : detail::split_list(constraint_list)) {
      const std::string sec = "constraint:" + name;
      known.insert(sec);
      if (!section(sec)) throw detail::field_error("safety", "constraints", "missing section [" + sec + "]");
      detail::SectionReader r(section(sec), sec);
      ConstraintSpec spec;
      spec.name = name;
      std::string comparison = "abs_leq", evaluate_on = "next";
      r.read("feature", spec.feature);
      r.read("comparison", comparison);
      r.read("threshold", spec.threshold);
      r.read("budget", spec.budget);
      r.read("evaluate_on", evaluate_on);
      r.finish();
      try {
        spec.comparison = parse_comparison(comparison);
      } catch (const std::invalid_argument& e) {
        throw detail::field_error(sec, "comparison", e.what());
      }
      if (evaluate_on != "next" && evaluate_on != "current") {
        throw detail::field_error(sec, "evaluate_on", "expected next or current");
      }
      spec.lookahead = evaluate_on == "next";
      c.constraints.push_back(std::move(spec));
    }

    detail::SectionReader agent(section("agent"), "agent");
    std::string optimizer = to_string(c.agent.optimizer);
    agent.read("gamma", c.agent.gamma);
    agent.read("epsilon_start", c.agent.epsilon_start);
    agent.read("epsilon_end", c.agent.epsilon_end);
    agent.read("epsilon_decay_episodes", c.agent.epsilon_decay_episodes);
    agent.read("buffer_capacity", c.agent.buffer_capacity);
    agent.read("batch_size", c.agent.batch_size);
    agent.read("learning_rate", c.agent.learning_rate);
    agent.read("optimizer", optimizer);
    agent.read("target_sync_interval", c.agent.target_sync_interval);
    agent.read("train_start_size", c.agent.train_start_size);
    agent.read("episodes", c.agent.episodes);
    agent.finish();
    try {
      c.agent.optimizer = parse_optimizer(optimizer);
    } catch (const std::invalid_argument& e) {
      throw detail::field_error("agent", "optimizer", e.what());
    }

    detail::SectionReader network(section("network"), "network");
    std::string hidden, activation = to_string(c.activation);
    network.read("hidden", hidden);
    network.read("activation", activation);
    network.finish();
    if (section("network") && section("network")->find("hidden") != section("network")->not_found()) {
      c.hidden_layers.clear();
      for (const auto& h : detail::split_list(hidden)) {
        try {
          c.hidden_layers.push_back(std::stoi(h));
        } catch (const std::exception&) {
          throw detail::field_error("network", "hidden", "cannot parse '" + h + "'");
        }
      }
    }
    try {
      c.activation = parse_activation(activation);
    } catch (const std::invalid_argument& e) {
      throw detail::field_error("network", "activation", e.what());
    }

    detail::SectionReader explain(section("explain"), "explain");
    std::string shap = to_string(c.explain.shap_method), features;
    explain.read("shap", shap);
    explain.read("baseline_size", c.explain.baseline_size);
    explain.read("n_samples", c.explain.n_samples);
    explain.read("every", c.explain.every);
    explain.read("episodes", c.explain.episodes);
    explain.read("report_features", features);
    explain.finish();
    try {
      c.explain.shap_method = parse_attribution_method(shap);
    } catch (const std::invalid_argument& e) {
      throw detail::field_error("explain", "shap", e.what());
    }
    if (!features.empty()) c.explain.report_features = detail::split_list(features);

    detail::SectionReader eval(section("eval"), "eval");
    eval.read("episodes", c.eval_episodes);
    eval.finish();

    for (const auto& [name, child] : root) {
      if (!known.count(name)) {
        throw ConfigError(name.empty() ? "keys outside any section" : "unknown section [" + name + "]");
      }
    }
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  c.sync_seeds();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open config");
  std::stringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path);
}

// Canonical INI rendering; parse_config(format_config(c)) == c.
inline std::string format_config(const RunConfig& c) {
  using detail::fmt_double;
  std::ostringstream o;
  auto join_ints = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  auto join_strings = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
  };
  o << "[run]\nname = " << c.name << "\nseed = " << c.seed << "\nout = " << c.out_dir << "\n\n";
  o << "[env]\nname = " << c.env << "\nmax_episode_steps = " << c.max_episode_steps << "\n\n";
  std::vector<std::string> names;
  for (const auto& k : c.constraints) names.push_back(k.name);
  o << "[safety]\nmode = " << to_string(c.mode.kind) << "\nlambda = " << fmt_double(c.mode.lambda)
    << "\nconstraints = " << join_strings(names) << "\n\n";
  for (const auto& k : c.constraints) {
    o << "[constraint:" << k.name << "]\nfeature = " << k.feature
      << "\ncomparison = " << to_string(k.comparison) << "\nthreshold = " << fmt_double(k.threshold)
      << "\nbudget = " << fmt_double(k.budget) << "\nevaluate_on = " << (k.lookahead ? "next" : "current")
      << "\n\n";
  }
  const auto& a = c.agent;
  o << "[agent]\ngamma = " << fmt_double(a.gamma) << "\nepsilon_start = " << fmt_double(a.epsilon_start)
    << "\nepsilon_end = " << fmt_double(a.epsilon_end)
    << "\nepsilon_decay_episodes = " << a.epsilon_decay_episodes
    << "\nbuffer_capacity = " << a.buffer_capacity << "\nbatch_size = " << a.batch_size
    << "\nlearning_rate = " << fmt_double(a.learning_rate) << "\noptimizer = " << to_string(a.optimizer)
    << "\ntarget_sync_interval = " << a.target_sync_interval
    << "\ntrain_start_size = " << a.train_start_size << "\nepisodes = " << a.episodes << "\n\n";
  o << "[network]\nhidden = " << join_ints(c.hidden_layers) << "\nactivation = " << to_string(c.activation)
    << "\n\n";
  o << "[explain]\nshap = " << to_string(c.explain.shap_method)
    << "\nbaseline_size = " << c.explain.baseline_size << "\nn_samples = " << c.explain.n_samples
    << "\nevery = " << c.explain.every << "\nepisodes = " << c.explain.episodes
    << "\nreport_features = " << join_strings(c.explain.report_features) << "\n\n";
  o << "[eval]\nepisodes = " << c.eval_episodes << "\n";
  return o.str();
}

// JSON mirror of the config, stored in run logs.
inline nlohmann::json config_to_json(const RunConfig& c) {
  std::istringstream in(format_config(c));
  boost::property_tree::ptree root;
  boost::property_tree::read_ini(in, root);
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [section, keys] : root) {
    for (const auto& [key, value] : keys) j[section][key] = value.data();
  }
  return j;
}

inline CartPole make_env(const RunConfig& c) {
  CartPoleParams p;
  p.max_episode_steps = c.max_episode_steps;
  return CartPole(p);
}

inline ConstraintSet make_constraints(const RunConfig& c, const CartPole& env) {
  const EnvSpec spec = env.env_spec();
  ConstraintSet set;
  for (const auto& k : c.constraints) {
    const int feature = spec.feature_index(k.feature);
    if (k.lookahead) {
      set.add(predicted_feature_constraint(
          k.name, [p = env.params()](const State& s, int a) { return CartPole::integrate(p, s, a); },
          feature, k.comparison, k.threshold, k.budget));
    } else {
      set.add(feature_constraint(k.name, feature, k.comparison, k.threshold, k.budget));
    }
  }
  return set;
}

}  // namespace safeq

#endif  // SAFEQ_CONFIG_HPP_
