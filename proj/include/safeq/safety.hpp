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

#ifndef SAFEQ_SAFETY_HPP_
#define SAFEQ_SAFETY_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "safeq/env.hpp"

namespace safeq {

// A safety constraint C(s, a) <= 0. The margin function returns the raw value
// of C; positive means violated and its magnitude is the severity.
struct Constraint {
  std::string name;
  std::function<double(const State&, int)> margin;
  double threshold = 0.0;  // budget d for the discounted metric; never enforced
};

struct ConstraintMargin {
  std::string name;
  double margin = 0.0;
};

enum class Comparison { kAbsLeq, kLeq, kGeq };

inline Comparison parse_comparison(const std::string& text) {
  if (text == "abs_leq") return Comparison::kAbsLeq;
  if (text == "leq") return Comparison::kLeq;
  if (text == "geq") return Comparison::kGeq;
  throw std::invalid_argument("unknown comparison '" + text +
                              "' (expected abs_leq, leq or geq)");
}

inline std::string to_string(Comparison c) {
  switch (c) {
    case Comparison::kAbsLeq: return "abs_leq";
    case Comparison::kLeq: return "leq";
    case Comparison::kGeq: return "geq";
  }
  return "?";
}

// Signed margin of `value` against `bound` under comparison `c`.
inline double comparison_margin(Comparison c, double value, double bound) {
  switch (c) {
    case Comparison::kAbsLeq: return std::abs(value) - bound;
    case Comparison::kLeq: return value - bound;
    case Comparison::kGeq: return bound - value;
  }
  return 0.0;
}

// Constraint on a feature of the state the action is taken from. Independent
// of the action.
inline Constraint feature_constraint(std::string name, int feature, Comparison cmp,
                                     double bound, double budget = 0.0) {
  return Constraint{std::move(name),
                    [=](const State& s, int) { return comparison_margin(cmp, s[feature], bound); },
                    budget};
}

// Constraint on a feature of the state the action leads to, predicted with a
// one-step model `predict(s, a) -> State`. This makes C depend on the action,
// which is what gives projection something to choose between.
template <class Predict>
Constraint predicted_feature_constraint(std::string name, Predict predict, int feature,
                                        Comparison cmp, double bound, double budget = 0.0) {
  return Constraint{std::move(name),
                    [=](const State& s, int a) {
                      return comparison_margin(cmp, predict(s, a)[feature], bound);
                    },
                    budget};
}

class ConstraintSet {
 public:
  ConstraintSet() = default;
  explicit ConstraintSet(std::vector<Constraint> constraints) {
    for (auto& c : constraints) add(std::move(c));
  }

  void add(Constraint c) {
    if (!c.margin) throw std::invalid_argument("constraint '" + c.name + "' has no margin function");
    for (const auto& existing : constraints_) {
      if (existing.name == c.name) {
        throw std::invalid_argument("duplicate constraint name '" + c.name + "'");
      }
    }
    constraints_.push_back(std::move(c));
  }

  bool empty() const { return constraints_.empty(); }
  std::size_t size() const { return constraints_.size(); }
  const std::vector<Constraint>& constraints() const { return constraints_; }

  // Raw margins in declaration order.
  std::vector<ConstraintMargin> evaluate(const State& s, int a) const {
    std::vector<ConstraintMargin> out;
    out.reserve(constraints_.size());
    for (const auto& c : constraints_) out.push_back({c.name, c.margin(s, a)});
    return out;
  }

  // Total overshoot sum_i max(0, C_i(s, a)).
  double overshoot(const State& s, int a) const {
    double total = 0.0;
    for (const auto& c : constraints_) total += std::max(0.0, c.margin(s, a));
    return total;
  }

 private:
  std::vector<Constraint> constraints_;
};

inline std::vector<ConstraintMargin> evaluate(const ConstraintSet& set, const State& s, int a) {
  return set.evaluate(s, a);
}

enum class EnforcementKind { kObserve, kPenalize, kProject, kTerminate };

struct EnforcementMode {
  EnforcementKind kind = EnforcementKind::kObserve;
  double lambda = 0.0;  // penalty weight, used by kPenalize only

  static EnforcementMode observe() { return {EnforcementKind::kObserve, 0.0}; }
  static EnforcementMode project() { return {EnforcementKind::kProject, 0.0}; }
  static EnforcementMode terminate() { return {EnforcementKind::kTerminate, 0.0}; }
  static EnforcementMode penalize(double lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
      throw std::invalid_argument("penalty weight lambda must be finite and >= 0");
    }
    return {EnforcementKind::kPenalize, lambda};
  }

  bool operator==(const EnforcementMode&) const = default;
};

inline EnforcementKind parse_enforcement_kind(const std::string& text) {
  if (text == "observe") return EnforcementKind::kObserve;
  if (text == "penalize") return EnforcementKind::kPenalize;
  if (text == "project") return EnforcementKind::kProject;
  if (text == "terminate") return EnforcementKind::kTerminate;
  throw std::invalid_argument("unknown enforcement mode '" + text +
                              "' (expected observe, penalize, project or terminate)");
}

inline std::string to_string(EnforcementKind k) {
  switch (k) {
    case EnforcementKind::kObserve: return "observe";
    case EnforcementKind::kPenalize: return "penalize";
    case EnforcementKind::kProject: return "project";
    case EnforcementKind::kTerminate: return "terminate";
  }
  return "?";
}

// ISO-8601 UTC with millisecond precision, e.g. 2026-01-02T03:04:05.678Z.
inline std::string utc_timestamp_now() {
  using namespace std::chrono;
  const auto now = system_clock::now();
  const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof(out), "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

struct ViolationEvent {
  int episode = 0;
  int step = 0;
  std::string constraint_name;
  double margin = 0.0;  // > 0
  int requested_action = 0;
  int executed_action = 0;
  std::string timestamp;

  bool operator==(const ViolationEvent&) const = default;
};

struct EnforceResult {
  int executed_action = 0;
  std::vector<ConstraintMargin> violations;  // constraints with margin > 0 at the requested action
};

// Runtime filter for one requested action.
//
// If every constraint holds at (s, a) the action passes through untouched.
// Otherwise the violated constraints are reported and, in project mode only,
// the action is replaced by argmin_a' sum_i max(0, C_i(s, a')), ties going to
// the lowest index. The projection is total: with no safe action available the
// least-violating one is chosen.
inline EnforceResult enforce(const ConstraintSet& set, const EnforcementMode& mode,
                             const State& s, int a, int action_count) {
  if (action_count < 1) throw std::invalid_argument("enforce: action_count must be >= 1");
  EnforceResult out;
  out.executed_action = a;
  for (auto& m : set.evaluate(s, a)) {
    if (m.margin > 0.0) out.violations.push_back(std::move(m));
  }
  if (out.violations.empty() || mode.kind != EnforcementKind::kProject) return out;

  double best = set.overshoot(s, 0);
  int best_action = 0;
  for (int candidate = 1; candidate < action_count && best > 0.0; ++candidate) {
    const double total = set.overshoot(s, candidate);
    if (total < best) {
      best = total;
      best_action = candidate;
    }
  }
  out.executed_action = best_action;
  return out;
}

// r' = r - lambda * (number of violated constraints).
inline double shape_reward(double reward, int violation_count, double lambda) {
  return reward - lambda * static_cast<double>(violation_count);
}

// Sum_t gamma^t max(0, C_i(s_t, a_t)) for each constraint i.
// `step_margins[t][i]` holds C_i at step t.
inline std::vector<double> discounted_constraint_return(
    const std::vector<std::vector<double>>& step_margins, double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("discount gamma must be in [0, 1)");
  }
  std::vector<double> total;
  double discount = 1.0;
  for (const auto& margins : step_margins) {
    if (total.empty()) total.assign(margins.size(), 0.0);
    if (margins.size() != total.size()) {
      throw std::invalid_argument("discounted_constraint_return: ragged margin rows");
    }
    for (std::size_t i = 0; i < margins.size(); ++i) {
      total[i] += discount * std::max(0.0, margins[i]);
    }
    discount *= gamma;
  }
  return total;
}

struct WrappedStepResult {
  StepResult inner;
  double shaped_reward = 0.0;
  int requested_action = 0;
  int executed_action = 0;
  std::vector<ViolationEvent> violations;

  bool violated() const { return !violations.empty(); }
};

// Wraps an environment with constraint checks, action projection, reward
// shaping and early termination. Violations are always judged against the
// requested action; the executed action is recorded alongside.
template <Environment Env>
class SafeEnvWrapper {
 public:
  SafeEnvWrapper(Env env, ConstraintSet constraints, EnforcementMode mode)
      : env_(std::move(env)), constraints_(std::move(constraints)), mode_(mode) {
    if (mode_.kind == EnforcementKind::kPenalize && !(mode_.lambda >= 0.0)) {
      throw std::invalid_argument("penalty weight lambda must be >= 0");
    }
  }

  // Starts the next episode. Episode indices count up from 0.
  State reset(std::uint64_t seed) {
    ++episode_;
    step_ = 0;
    return env_.reset(seed);
  }

  WrappedStepResult step(const State& s, int a) {
    const int action_count = env_.env_spec().action_count;
    if (a < 0 || a >= action_count) {
      throw std::invalid_argument("action index " + std::to_string(a) + " out of range");
    }
    EnforceResult decision = enforce(constraints_, mode_, s, a, action_count);

    WrappedStepResult out;
    out.requested_action = a;
    out.executed_action = decision.executed_action;
    out.inner = env_.step(s, decision.executed_action);

    const int count = static_cast<int>(decision.violations.size());
    out.shaped_reward = mode_.kind == EnforcementKind::kPenalize
                            ? shape_reward(out.inner.reward, count, mode_.lambda)
                            : out.inner.reward;
    if (mode_.kind == EnforcementKind::kTerminate && count > 0) out.inner.done = true;

    if (count > 0) {
      const std::string stamp = utc_timestamp_now();
      out.violations.reserve(decision.violations.size());
      for (auto& v : decision.violations) {
        out.violations.push_back({std::max(episode_, 0), step_, std::move(v.name), v.margin, a,
                                  decision.executed_action, stamp});
      }
    }
    ++step_;
    return out;
  }

  EnvSpec env_spec() const { return env_.env_spec(); }
  const Env& env() const { return env_; }
  const ConstraintSet& constraints() const { return constraints_; }
  const EnforcementMode& mode() const { return mode_; }
  int episode() const { return episode_; }
  int step_index() const { return step_; }

 private:
  Env env_;
  ConstraintSet constraints_;
  EnforcementMode mode_;
  int episode_ = -1;
  int step_ = 0;
};

}  // namespace safeq

#endif  // SAFEQ_SAFETY_HPP_
