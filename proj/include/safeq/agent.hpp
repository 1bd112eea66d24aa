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

#ifndef SAFEQ_AGENT_HPP_
#define SAFEQ_AGENT_HPP_

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "safeq/env.hpp"
#include "safeq/qnet.hpp"
#include "safeq/rng.hpp"
#include "safeq/safety.hpp"

namespace safeq {

enum class OptimizerKind { kSgd, kAdam };

inline OptimizerKind parse_optimizer(const std::string& text) {
  if (text == "sgd") return OptimizerKind::kSgd;
  if (text == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument("unknown optimizer '" + text + "' (expected sgd or adam)");
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

struct AgentConfig {
  double gamma = 0.99;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  int epsilon_decay_episodes = 150;
  int buffer_capacity = 10000;
  int batch_size = 64;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  int target_sync_interval = 200;  // env steps
  int train_start_size = 500;
  int episodes = 200;
  std::uint64_t seed = 0;

  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw std::invalid_argument(std::string("AgentConfig: ") + what);
    };
    require(gamma >= 0.0 && gamma < 1.0, "gamma must be in [0, 1)");
    require(epsilon_start >= 0.0 && epsilon_start <= 1.0, "epsilon_start must be in [0, 1]");
    require(epsilon_end >= 0.0 && epsilon_end <= 1.0, "epsilon_end must be in [0, 1]");
    require(epsilon_end <= epsilon_start, "epsilon_end must not exceed epsilon_start");
    require(epsilon_decay_episodes >= 0, "epsilon_decay_episodes must be >= 0");
    require(buffer_capacity >= 1, "buffer_capacity must be >= 1");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(batch_size <= buffer_capacity, "batch_size must not exceed buffer_capacity");
    require(learning_rate > 0.0, "learning_rate must be > 0");
    require(target_sync_interval >= 1, "target_sync_interval must be >= 1");
    require(train_start_size >= batch_size, "train_start_size must be >= batch_size");
    require(episodes >= 1, "episodes must be >= 1");
  }

  bool operator==(const AgentConfig&) const = default;
};

struct Transition {
  State state;
  int requested_action = 0;
  int executed_action = 0;
  double shaped_reward = 0.0;
  State next_state;
  bool done = false;  // terminal; truncation is not terminal
};

// Fixed-capacity FIFO of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be >= 1");
    data_.reserve(capacity);
  }

  void push(Transition t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }

  // i = 0 is the oldest retained transition.
  const Transition& operator[](std::size_t i) const { return data_[(head_ + i) % data_.size()]; }

  // Uniform sampling with replacement.
  std::vector<std::size_t> sample_indices(Rng& rng, std::size_t n) const {
    if (data_.empty()) throw std::logic_error("ReplayBuffer: sampling from an empty buffer");
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = uniform_index(rng, data_.size());
    return idx;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // oldest element once full
  std::vector<Transition> data_;
};

struct EpisodeStats {
  int episode = 0;
  double total_raw_reward = 0.0;
  double total_shaped_reward = 0.0;
  int cvc = 0;  // steps whose requested action violated at least one constraint
  int steps = 0;
  double epsilon = 0.0;

  bool operator==(const EpisodeStats&) const = default;
};

// Linear decay from epsilon_start to epsilon_end over epsilon_decay_episodes.
inline double epsilon_schedule(const AgentConfig& config, int episode) {
  if (episode < 0) throw std::invalid_argument("epsilon_schedule: episode must be >= 0");
  if (config.epsilon_decay_episodes <= 0 || episode >= config.epsilon_decay_episodes) {
    return config.epsilon_end;
  }
  const double frac = static_cast<double>(episode) / config.epsilon_decay_episodes;
  return config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start);
}

// argmax with ties going to the lowest index.
inline int argmax_action(const Eigen::VectorXd& q) {
  int best = 0;
  for (int a = 1; a < q.size(); ++a) {
    if (q[a] > q[best]) best = a;
  }
  return best;
}

inline int greedy_action(const MlpParams& params, const State& s) {
  return argmax_action(forward(params, s));
}

// Epsilon-greedy. The coin is always flipped so the stream consumption does
// not depend on epsilon.
inline int select_action(const MlpParams& params, const State& s, double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("select_action: epsilon must be in [0, 1]");
  }
  const double coin = uniform01(rng);
  if (coin < epsilon) return static_cast<int>(uniform_index(rng, params.output_dim()));
  return greedy_action(params, s);
}

// y_i = r_i if done_i else r_i + gamma * max_a' Q_target(s'_i, a').
inline Eigen::VectorXd td_targets(const MlpParams& target_params,
                                  const std::vector<const Transition*>& batch, double gamma) {
  if (batch.empty()) throw std::invalid_argument("td_targets: empty batch");
  Eigen::MatrixXd next(target_params.input_dim(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) next.col(i) = batch[i]->next_state;
  const Eigen::MatrixXd q_next = forward_batch(target_params, next);
  Eigen::VectorXd y(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    y[i] = batch[i]->shaped_reward;
    if (!batch[i]->done) y[i] += gamma * q_next.col(i).maxCoeff();
  }
  return y;
}

// DQN agent that consumes SafeEnvWrapper steps: shaped rewards go into replay,
// learning uses the executed action, and the violation count uses the
// requested one.
//
// Randomness comes from a single seed split into independent streams for
// exploration, replay sampling, environment resets and baseline sampling.
template <Environment Env>
class ConstrainedDqnAgent {
 public:
  ConstrainedDqnAgent(const AgentConfig& config, const MlpConfig& net,
                      std::size_t baseline_sample_size = 100)
      : config_(config),
        baseline_sample_size_(baseline_sample_size),
        params_(init_params(net)),
        target_(params_),
        buffer_(static_cast<std::size_t>(config.buffer_capacity)),
        explore_rng_(mix_seed(config.seed, 1)),
        replay_rng_(mix_seed(config.seed, 2)),
        baseline_rng_(mix_seed(config.seed, 3)),
        adam_(config.learning_rate) {
    config_.validate();
  }

  // Runs one episode in `env`, learning online. Violation events raised by
  // the wrapper are appended to `events` when provided.
  EpisodeStats train_episode(SafeEnvWrapper<Env>& env, std::vector<ViolationEvent>* events = nullptr) {
    EpisodeStats stats;
    stats.episode = episodes_done_;
    stats.epsilon = epsilon_schedule(config_, episodes_done_);

    State s = env.reset(mix_seed(config_.seed, 1000 + static_cast<std::uint64_t>(episodes_done_)));
    for (;;) {
      const int a = select_action(params_, s, stats.epsilon, explore_rng_);
      WrappedStepResult r = env.step(s, a);
      stats.total_raw_reward += r.inner.reward;
      stats.total_shaped_reward += r.shaped_reward;
      stats.steps += 1;
      if (r.violated()) stats.cvc += 1;
      if (events) events->insert(events->end(), r.violations.begin(), r.violations.end());

      buffer_.push({s, r.requested_action, r.executed_action, r.shaped_reward,
                    r.inner.next_state, r.inner.done});
      if (early_states_.empty() && buffer_.size() >= static_cast<std::size_t>(config_.train_start_size)) {
        capture_baselines();
      }
      if (buffer_.size() >= static_cast<std::size_t>(config_.train_start_size)) learn();
      if (++total_steps_ % config_.target_sync_interval == 0) target_ = params_;

      if (r.inner.done || r.inner.truncated) break;
      s = std::move(r.inner.next_state);
    }
    ++episodes_done_;
    return stats;
  }

  const AgentConfig& config() const { return config_; }
  const MlpParams& params() const { return params_; }
  const MlpParams& target_params() const { return target_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  long total_steps() const { return total_steps_; }
  int episodes_done() const { return episodes_done_; }

  // Background states for Shapley marginalisation: a sample of early replay
  // plus the zero state. Falls back to the current buffer if training never
  // reached train_start_size.
  std::vector<State> baseline_states() {
    if (early_states_.empty()) capture_baselines();
    return early_states_;
  }

 private:
  void capture_baselines() {
    if (buffer_.size() == 0) return;
    const std::size_t n = std::min(baseline_sample_size_, buffer_.size());
    for (std::size_t i : buffer_.sample_indices(baseline_rng_, n)) {
      early_states_.push_back(buffer_[i].state);
    }
    early_states_.push_back(State::Zero(params_.input_dim()));
  }

  void learn() {
    const auto idx = buffer_.sample_indices(replay_rng_, static_cast<std::size_t>(config_.batch_size));
    std::vector<const Transition*> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) batch.push_back(&buffer_[i]);

    TdBatch td;
    td.states.resize(params_.input_dim(), static_cast<Eigen::Index>(batch.size()));
    td.actions.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      td.states.col(i) = batch[i]->state;
      td.actions[i] = batch[i]->executed_action;
    }
    td.targets = td_targets(target_, batch, config_.gamma);

    const MlpParams grads = backward_params(params_, td);
    if (config_.optimizer == OptimizerKind::kAdam) {
      adam_.step(params_, grads);
    } else {
      sgd_step(params_, grads, config_.learning_rate);
    }
  }

  AgentConfig config_;
  std::size_t baseline_sample_size_;
  MlpParams params_;
  MlpParams target_;
  ReplayBuffer buffer_;
  Rng explore_rng_;
  Rng replay_rng_;
  Rng baseline_rng_;
  AdamOptimizer adam_;
  std::vector<State> early_states_;
  long total_steps_ = 0;
  int episodes_done_ = 0;
};

}  // namespace safeq

#endif  // SAFEQ_AGENT_HPP_
