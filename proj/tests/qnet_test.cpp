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

#include "safeq/qnet.hpp"

#include <cmath>
#include <sstream>

#include "gtest/gtest.h"
#include "oracles.hpp"

namespace safeq {
namespace {

MlpParams linear_net(const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  MlpParams p;
  p.layers.push_back({w, b});
  return p;
}

Eigen::VectorXd random_vector(Rng& rng, int n, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = uniform_real(rng, -scale, scale);
  return v;
}

// Randomises biases too so relu kinks are not aligned with the origin.
MlpParams random_net(std::uint64_t seed, Activation act, std::vector<int> hidden = {8, 8}) {
  MlpConfig cfg{4, std::move(hidden), 2, act, seed};
  MlpParams p = init_params(cfg);
  Rng rng(seed + 1000);
  for (auto& l : p.layers) l.bias = random_vector(rng, static_cast<int>(l.bias.size()), 0.3);
  return p;
}

TEST(ForwardTest, ZeroNetworkOutputsZero) {
  MlpParams p = init_params(MlpConfig{});
  p = p.zeros_like();
  EXPECT_EQ(forward(p, Eigen::Vector4d(1, 2, 3, 4)), Eigen::VectorXd::Zero(2));
}

TEST(ForwardTest, IdentityLayer) {
  const MlpParams p = linear_net(Eigen::MatrixXd::Identity(4, 4), Eigen::VectorXd::Zero(4));
  EXPECT_EQ(forward(p, Eigen::Vector4d(1, 2, 3, 4)), Eigen::VectorXd(Eigen::Vector4d(1, 2, 3, 4)));
}

TEST(ForwardTest, MatchesDenseOracle) {
  Rng rng(1);
  for (Activation act : {Activation::kRelu, Activation::kTanh}) {
    const MlpParams p = init_params(MlpConfig{4, {64, 64}, 2, act, 17});
    for (int i = 0; i < 20; ++i) {
      const Eigen::VectorXd s = random_vector(rng, 4, 2.0);
      const auto want = oracle::dense_forward(p, oracle::to_std(s));
      const Eigen::VectorXd got = forward(p, s);
      for (int a = 0; a < 2; ++a) EXPECT_NEAR(got[a], want[static_cast<std::size_t>(a)], 1e-12);
    }
  }
}

TEST(ForwardTest, BatchEqualsColumnwise) {
  const MlpParams p = init_params(MlpConfig{});
  Rng rng(2);
  Eigen::MatrixXd batch(4, 5);
  for (int c = 0; c < 5; ++c) batch.col(c) = random_vector(rng, 4);
  const Eigen::MatrixXd q = forward_batch(p, batch);
  for (int c = 0; c < 5; ++c) EXPECT_TRUE(q.col(c).isApprox(forward(p, batch.col(c)), 1e-14));
}

TEST(ForwardTest, RejectsWrongInputLength) {
  const MlpParams p = init_params(MlpConfig{});
  EXPECT_THROW(forward(p, Eigen::VectorXd::Zero(3)), std::invalid_argument);
}

TEST(InitTest, SeededAndBounded) {
  const MlpConfig cfg{};
  EXPECT_EQ(init_params(cfg), init_params(cfg));
  MlpConfig other = cfg;
  other.init_seed = 1;
  EXPECT_FALSE(init_params(cfg) == init_params(other));
  const MlpParams p = init_params(cfg);
  EXPECT_LE(p.layers[0].weight.cwiseAbs().maxCoeff(), std::sqrt(6.0 / 4));
  EXPECT_LE(p.layers[1].weight.cwiseAbs().maxCoeff(), std::sqrt(6.0 / 64));
  EXPECT_EQ(p.parameter_count(), 4u * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2);
}

TEST(BackwardTest, ZeroAtLossMinimum) {
  const MlpParams p = random_net(3, Activation::kRelu);
  Rng rng(4);
  TdBatch batch;
  batch.states.resize(4, 6);
  for (int i = 0; i < 6; ++i) {
    batch.states.col(i) = random_vector(rng, 4);
    batch.actions.push_back(i % 2);
  }
  const Eigen::MatrixXd q = forward_batch(p, batch.states);
  batch.targets.resize(6);
  for (int i = 0; i < 6; ++i) batch.targets[i] = q(batch.actions[i], i);
  const MlpParams g = backward_params(p, batch);
  for (const auto& l : g.layers) {
    EXPECT_EQ(l.weight.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(l.bias.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(BackwardTest, LinearClosedForm) {
  // Q(s) = W s + b; dL/dW[a,:] = 2 (Q_a - y) s, dL/db[a] = 2 (Q_a - y).
  Rng rng(5);
  const Eigen::MatrixXd w = Eigen::MatrixXd::Random(2, 4);
  const Eigen::VectorXd b = Eigen::VectorXd::Random(2);
  const MlpParams p = linear_net(w, b);
  TdBatch batch;
  batch.states = random_vector(rng, 4);
  batch.actions = {1};
  batch.targets = Eigen::VectorXd::Constant(1, 0.7);
  const double err = (w.row(1).dot(batch.states.col(0)) + b[1]) - 0.7;
  const MlpParams g = backward_params(p, batch);
  EXPECT_TRUE(g.layers[0].weight.row(1).transpose().isApprox(2 * err * batch.states.col(0), 1e-14));
  EXPECT_EQ(g.layers[0].weight.row(0).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NEAR(g.layers[0].bias[1], 2 * err, 1e-14);
  EXPECT_EQ(g.layers[0].bias[0], 0.0);
}

TEST(BackwardTest, MatchesFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const MlpParams p = random_net(100 + trial, trial % 2 ? Activation::kTanh : Activation::kRelu);
    TdBatch batch;
    batch.states.resize(4, 5);
    for (int i = 0; i < 5; ++i) {
      batch.states.col(i) = random_vector(rng, 4, 1.5);
      batch.actions.push_back(static_cast<int>(uniform_index(rng, 2)));
    }
    batch.targets = random_vector(rng, 5, 2.0);
    const MlpParams g = backward_params(p, batch);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      for (Eigen::Index k = 0; k < p.layers[l].weight.size(); ++k) {
        const double fd = oracle::central_difference(
            [&](double v) {
              MlpParams q = p;
              q.layers[l].weight.data()[k] = v;
              return td_loss(q, batch);
            },
            p.layers[l].weight.data()[k]);
        EXPECT_TRUE(oracle::close_relative(g.layers[l].weight.data()[k], fd))
            << "layer " << l << " weight " << k << ": " << g.layers[l].weight.data()[k] << " vs " << fd;
      }
      for (Eigen::Index k = 0; k < p.layers[l].bias.size(); ++k) {
        const double fd = oracle::central_difference(
            [&](double v) {
              MlpParams q = p;
              q.layers[l].bias[k] = v;
              return td_loss(q, batch);
            },
            p.layers[l].bias[k]);
        EXPECT_TRUE(oracle::close_relative(g.layers[l].bias[k], fd)) << "layer " << l << " bias " << k;
      }
    }
  }
}

TEST(BackwardTest, RejectsEmptyBatch) {
  EXPECT_THROW(backward_params(init_params(MlpConfig{}), TdBatch{}), std::invalid_argument);
}

TEST(GradInputTest, LinearLayerGivesWeightRow) {
  const Eigen::MatrixXd w = Eigen::MatrixXd::Random(2, 4);
  const MlpParams p = linear_net(w, Eigen::VectorXd::Zero(2));
  EXPECT_TRUE(grad_input(p, Eigen::Vector4d(0.3, -1, 2, 0.1), 1).isApprox(w.row(1).transpose()));
}

TEST(GradInputTest, TanhAtOriginIsChainProduct) {
  // With zero biases every tanh' at 0 is 1, so the gradient is W3[a,:] W2 W1.
  MlpParams p = init_params(MlpConfig{4, {6, 5}, 2, Activation::kTanh, 8});
  for (auto& l : p.layers) l.bias.setZero();
  const Eigen::VectorXd want =
      (p.layers[2].weight.row(0) * p.layers[1].weight * p.layers[0].weight).transpose();
  EXPECT_TRUE(grad_input(p, Eigen::VectorXd::Zero(4), 0).isApprox(want, 1e-14));
}

TEST(GradInputTest, MatchesFiniteDifferences) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const MlpParams p = random_net(200 + trial, trial % 2 ? Activation::kTanh : Activation::kRelu, {64, 64});
    const Eigen::VectorXd s = random_vector(rng, 4, 1.5);
    const int a = trial % 2;
    const Eigen::VectorXd g = grad_input(p, s, a);
    for (int k = 0; k < 4; ++k) {
      const double fd = oracle::central_difference(
          [&](double v) {
            Eigen::VectorXd x = s;
            x[k] = v;
            return forward(p, x)[a];
          },
          s[k]);
      EXPECT_TRUE(oracle::close_relative(g[k], fd)) << g[k] << " vs " << fd;
    }
  }
}

TEST(GradInputTest, RejectsBadAction) {
  EXPECT_THROW(grad_input(init_params(MlpConfig{}), Eigen::VectorXd::Zero(4), 2), std::invalid_argument);
}

TEST(SgdTest, Arithmetic) {
  MlpParams p = linear_net(Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::VectorXd::Zero(1));
  MlpParams g = linear_net(Eigen::MatrixXd::Constant(1, 1, 0.5), Eigen::VectorXd::Zero(1));
  EXPECT_DOUBLE_EQ(sgd_update(p, g, 0.1).layers[0].weight(0, 0), 0.95);
  EXPECT_EQ(sgd_update(p, p.zeros_like(), 0.3), p);
  const MlpParams net = init_params(MlpConfig{});
  const MlpParams zero = sgd_update(net, net, 1.0);
  EXPECT_EQ(zero, net.zeros_like());
  EXPECT_THROW(sgd_update(p, g, 0.0), std::invalid_argument);
}

TEST(CloneTest, IndependentCopy) {
  MlpParams original = init_params(MlpConfig{});
  const MlpParams copy = clone_params(original);
  EXPECT_EQ(copy, original);
  const Eigen::Vector4d s(0.1, 0.2, -0.1, 0.3);
  EXPECT_EQ(forward(copy, s), forward(original, s));
  original.layers[0].weight(0, 0) += 1.0;
  EXPECT_FALSE(copy == original);
}

TEST(AdamTest, DescendsQuadratic) {
  // Fit a linear layer to a fixed target; loss must fall.
  MlpParams p = linear_net(Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Zero(1));
  TdBatch batch;
  batch.states = Eigen::MatrixXd::Identity(2, 2);
  batch.actions = {0, 0};
  batch.targets = Eigen::Vector2d(1.0, -2.0);
  AdamOptimizer adam(0.05);
  const double before = td_loss(p, batch);
  for (int i = 0; i < 500; ++i) adam.step(p, backward_params(p, batch));
  EXPECT_LT(td_loss(p, batch), 1e-3 * before);
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  const MlpParams p = random_net(9, Activation::kTanh, {7, 3});
  std::stringstream buf;
  write_params(buf, p);
  EXPECT_EQ(read_params(buf), p);
}

TEST(CheckpointTest, RejectsGarbage) {
  std::stringstream bad("not a checkpoint");
  EXPECT_THROW(read_params(bad), IoError);
  std::stringstream truncated("safeq-mlp 1\nactivation relu\ndims 2 1\n0.5\n");
  EXPECT_THROW(read_params(truncated), IoError);
  EXPECT_THROW(load_checkpoint("/nonexistent/checkpoint.txt"), IoError);
}

}  // namespace
}  // namespace safeq
