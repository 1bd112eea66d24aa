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

#ifndef SAFEQ_ENV_HPP_
#define SAFEQ_ENV_HPP_

#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "safeq/rng.hpp"

namespace safeq {

// Observation vector. For CartPole the order is
// (cart position, cart velocity, pole angle, pole angular velocity).
using State = Eigen::VectorXd;

struct EnvSpec {
  int state_dim = 0;
  int action_count = 0;
  std::vector<std::string> feature_names;
  int max_episode_steps = 0;

  // Index of `name` in feature_names, or -1.
  int feature_index(const std::string& name) const {
    for (std::size_t i = 0; i < feature_names.size(); ++i) {
      if (feature_names[i] == name) return static_cast<int>(i);
    }
    return -1;
  }
};

struct StepResult {
  State next_state;
  double reward = 0.0;
  bool done = false;       // terminal state reached
  bool truncated = false;  // step cap reached
};

// Anything the safety wrapper and the agent can drive.
template <class E>
concept Environment = requires(E env, const E cenv, const State& s, int a,
                               std::uint64_t seed) {
  { cenv.env_spec() } -> std::convertible_to<EnvSpec>;
  { env.reset(seed) } -> std::same_as<State>;
  { env.step(s, a) } -> std::same_as<StepResult>;
};

struct CartPoleParams {
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double force_magnitude = 10.0;
  double tau = 0.02;
  double angle_limit = 12.0 * 2.0 * std::numbers::pi / 360.0;
  double position_limit = 2.4;
  int max_episode_steps = 500;

  void validate() const {
    if (!(gravity > 0 && cart_mass > 0 && pole_mass > 0 &&
          pole_half_length > 0 && force_magnitude > 0 && tau > 0 &&
          angle_limit > 0 && position_limit > 0)) {
      throw std::invalid_argument("CartPoleParams: all constants must be > 0");
    }
    if (!(angle_limit < std::numbers::pi / 2)) {
      throw std::invalid_argument("CartPoleParams: angle_limit must be < pi/2");
    }
    if (max_episode_steps < 1) {
      throw std::invalid_argument("CartPoleParams: max_episode_steps must be >= 1");
    }
  }
};

// Classic cart-pole balancing task with explicit Euler integration.
//
// Action 0 pushes the cart left (-F), action 1 pushes right (+F). Every step
// earns reward 1.0. The episode terminates when the cart leaves
// [-position_limit, position_limit] or the pole leaves
// [-angle_limit, angle_limit], and truncates after max_episode_steps.
class CartPole {
 public:
  static constexpr int kStateDim = 4;
  static constexpr int kActionCount = 2;

  CartPole() : CartPole(CartPoleParams{}) {}
  explicit CartPole(const CartPoleParams& params) : params_(params) {
    params_.validate();
  }

  const CartPoleParams& params() const { return params_; }

  EnvSpec env_spec() const {
    return EnvSpec{kStateDim,
                   kActionCount,
                   {"cart_position", "cart_velocity", "pole_angle",
                    "pole_angular_velocity"},
                   params_.max_episode_steps};
  }

  State reset(std::uint64_t seed) {
    Rng rng(seed);
    State s(kStateDim);
    for (int i = 0; i < kStateDim; ++i) s[i] = uniform_real(rng, -0.05, 0.05);
    steps_ = 0;
    return s;
  }

  StepResult step(const State& s, int action) {
    StepResult out;
    out.next_state = integrate(params_, s, action);
    ++steps_;
    out.reward = 1.0;
    out.done = is_terminal(params_, out.next_state);
    out.truncated = !out.done && steps_ >= params_.max_episode_steps;
    return out;
  }

  int steps_taken() const { return steps_; }

  // One Euler step of the cart-pole equations of motion. Pure.
  static State integrate(const CartPoleParams& p, const State& s, int action) {
    if (action != 0 && action != 1) {
      throw std::invalid_argument("CartPole: action must be 0 (left) or 1 (right), got " +
                                  std::to_string(action));
    }
    if (s.size() != kStateDim) {
      throw std::invalid_argument("CartPole: state must have 4 components, got " +
                                  std::to_string(s.size()));
    }
    const double x = s[0], x_dot = s[1], theta = s[2], theta_dot = s[3];
    const double force = action == 1 ? p.force_magnitude : -p.force_magnitude;
    const double cos_t = std::cos(theta);
    const double sin_t = std::sin(theta);
    const double total_mass = p.cart_mass + p.pole_mass;
    const double polemass_length = p.pole_mass * p.pole_half_length;

    const double temp = (force + polemass_length * theta_dot * theta_dot * sin_t) / total_mass;
    const double theta_acc =
        (p.gravity * sin_t - cos_t * temp) /
        (p.pole_half_length * (4.0 / 3.0 - p.pole_mass * cos_t * cos_t / total_mass));
    const double x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;

    State next(kStateDim);
    next << x + p.tau * x_dot, x_dot + p.tau * x_acc, theta + p.tau * theta_dot,
        theta_dot + p.tau * theta_acc;
    return next;
  }

  static bool is_terminal(const CartPoleParams& p, const State& s) {
    return s[0] < -p.position_limit || s[0] > p.position_limit ||
           s[2] < -p.angle_limit || s[2] > p.angle_limit;
  }

 private:
  CartPoleParams params_;
  int steps_ = 0;
};

static_assert(Environment<CartPole>);

}  // namespace safeq

#endif  // SAFEQ_ENV_HPP_
