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

#ifndef SAFEQ_QNET_HPP_
#define SAFEQ_QNET_HPP_

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "safeq/errors.hpp"
#include "safeq/rng.hpp"

namespace safeq {

enum class Activation { kRelu, kTanh };

inline Activation parse_activation(const std::string& text) {
  if (text == "relu") return Activation::kRelu;
  if (text == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation '" + text + "' (expected relu or tanh)");
}

inline std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

struct MlpConfig {
  int input_dim = 4;
  std::vector<int> hidden_layers = {64, 64};
  int output_dim = 2;
  Activation activation = Activation::kRelu;
  std::uint64_t init_seed = 0;

  void validate() const {
    if (input_dim < 1) throw std::invalid_argument("MlpConfig: input_dim must be >= 1");
    if (output_dim < 1) throw std::invalid_argument("MlpConfig: output_dim must be >= 1");
    for (int h : hidden_layers) {
      if (h < 1) throw std::invalid_argument("MlpConfig: hidden layer sizes must be >= 1");
    }
  }

  bool operator==(const MlpConfig&) const = default;
};

// weight is (fan_out x fan_in); y = weight * x + bias.
struct DenseLayer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

// Parameters of a fully connected network. Hidden layers apply `activation`;
// the output layer is linear. Gradients share this type.
struct MlpParams {
  Activation activation = Activation::kRelu;
  std::vector<DenseLayer> layers;

  int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  // Same shapes, all zeros.
  MlpParams zeros_like() const {
    MlpParams z;
    z.activation = activation;
    for (const auto& l : layers) {
      z.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                          Eigen::VectorXd::Zero(l.bias.size())});
    }
    return z;
  }

  bool operator==(const MlpParams& o) const {
    if (activation != o.activation || layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& a = layers[i];
      const auto& b = o.layers[i];
      if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
          a.bias.size() != b.bias.size() || a.weight != b.weight || a.bias != b.bias) {
        return false;
      }
    }
    return true;
  }
};

// He-uniform (bound sqrt(6 / fan_in)) for relu hidden layers, Glorot-uniform
// for tanh hidden layers, LeCun-uniform (sqrt(3 / fan_in)) for the linear
// output layer. Biases start at zero.
inline MlpParams init_params(const MlpConfig& config) {
  config.validate();
  Rng rng(config.init_seed);
  MlpParams p;
  p.activation = config.activation;
  std::vector<int> dims{config.input_dim};
  dims.insert(dims.end(), config.hidden_layers.begin(), config.hidden_layers.end());
  dims.push_back(config.output_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l], fan_out = dims[l + 1];
    const bool output = l + 2 == dims.size();
    double bound;
    if (output) {
      bound = std::sqrt(3.0 / fan_in);
    } else if (config.activation == Activation::kRelu) {
      bound = std::sqrt(6.0 / fan_in);
    } else {
      bound = std::sqrt(6.0 / (fan_in + fan_out));
    }
    DenseLayer layer{Eigen::MatrixXd(fan_out, fan_in), Eigen::VectorXd::Zero(fan_out)};
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) layer.weight(r, c) = uniform_real(rng, -bound, bound);
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

inline MlpParams clone_params(const MlpParams& params) { return params; }

namespace detail {

inline void activate(Activation a, Eigen::MatrixXd& z) {
  if (a == Activation::kRelu) {
    z = z.cwiseMax(0.0);
  } else {
    z = z.array().tanh().matrix();
  }
}

// Derivative of the activation expressed through its output value h.
inline Eigen::MatrixXd activation_derivative(Activation a, const Eigen::MatrixXd& h) {
  if (a == Activation::kRelu) return (h.array() > 0.0).cast<double>().matrix();
  return (1.0 - h.array().square()).matrix();
}

inline void check_input(const MlpParams& p, Eigen::Index rows) {
  if (p.layers.empty()) throw std::invalid_argument("MlpParams has no layers");
  if (rows != p.input_dim()) {
    throw std::invalid_argument("input has dimension " + std::to_string(rows) +
                                ", network expects " + std::to_string(p.input_dim()));
  }
}

// Returns the post-activation output of every layer; front() is the input.
inline std::vector<Eigen::MatrixXd> forward_trace(const MlpParams& p, const Eigen::MatrixXd& x) {
  check_input(p, x.rows());
  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(p.layers.size() + 1);
  acts.push_back(x);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    Eigen::MatrixXd z = p.layers[l].weight * acts.back();
    z.colwise() += p.layers[l].bias;
    if (l + 1 < p.layers.size()) activate(p.activation, z);
    acts.push_back(std::move(z));
  }
  return acts;
}

}  // namespace detail

// Q-values for a batch of states stored as columns; result is
// (output_dim x batch).
inline Eigen::MatrixXd forward_batch(const MlpParams& params, const Eigen::MatrixXd& states) {
  detail::check_input(params, states.rows());
  Eigen::MatrixXd h = states;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Eigen::MatrixXd z = params.layers[l].weight * h;
    z.colwise() += params.layers[l].bias;
    if (l + 1 < params.layers.size()) detail::activate(params.activation, z);
    h = std::move(z);
  }
  return h;
}

inline Eigen::VectorXd forward(const MlpParams& params, const Eigen::VectorXd& state) {
  return forward_batch(params, state);
}

// Regression batch for the TD loss: state columns, chosen actions, targets.
struct TdBatch {
  Eigen::MatrixXd states;
  std::vector<int> actions;
  Eigen::VectorXd targets;

  int size() const { return static_cast<int>(actions.size()); }
};

// (1/B) * sum_i (Q(s_i, a_i) - y_i)^2
inline double td_loss(const MlpParams& params, const TdBatch& batch) {
  const Eigen::MatrixXd q = forward_batch(params, batch.states);
  double total = 0.0;
  for (int i = 0; i < batch.size(); ++i) {
    const double e = q(batch.actions[i], i) - batch.targets[i];
    total += e * e;
  }
  return total / batch.size();
}

// Gradient of td_loss with respect to every weight and bias. Only the
// selected-action outputs contribute.
inline MlpParams backward_params(const MlpParams& params, const TdBatch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("backward_params: empty batch");
  if (batch.states.cols() != batch.size() || batch.targets.size() != batch.size()) {
    throw std::invalid_argument("backward_params: batch fields disagree in length");
  }
  const auto acts = detail::forward_trace(params, batch.states);
  const Eigen::MatrixXd& q = acts.back();
  const double scale = 2.0 / batch.size();

  Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(q.rows(), q.cols());
  for (int i = 0; i < batch.size(); ++i) {
    const int a = batch.actions[i];
    if (a < 0 || a >= q.rows()) throw std::invalid_argument("backward_params: action out of range");
    delta(a, i) = scale * (q(a, i) - batch.targets[i]);
  }

  MlpParams grads;
  grads.activation = params.activation;
  grads.layers.resize(params.layers.size());
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    grads.layers[l].weight = delta * acts[l].transpose();
    grads.layers[l].bias = delta.rowwise().sum();
    if (l > 0) {
      delta = (params.layers[l].weight.transpose() * delta)
                  .cwiseProduct(detail::activation_derivative(params.activation, acts[l]));
    }
  }
  return grads;
}

// Exact gradient of Q(s, action) with respect to the input vector.
inline Eigen::VectorXd grad_input(const MlpParams& params, const Eigen::VectorXd& state,
                                  int action) {
  const auto acts = detail::forward_trace(params, state);
  if (action < 0 || action >= params.output_dim()) {
    throw std::invalid_argument("grad_input: action " + std::to_string(action) + " out of range");
  }
  Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(params.output_dim(), 1);
  delta(action, 0) = 1.0;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    delta = params.layers[l].weight.transpose() * delta;
    if (l > 0) delta = delta.cwiseProduct(detail::activation_derivative(params.activation, acts[l]));
  }
  return delta.col(0);
}

inline void sgd_step(MlpParams& params, const MlpParams& grads, double learning_rate) {
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    params.layers[l].weight -= learning_rate * grads.layers[l].weight;
    params.layers[l].bias -= learning_rate * grads.layers[l].bias;
  }
}

// params - learning_rate * grads, elementwise.
inline MlpParams sgd_update(MlpParams params, const MlpParams& grads, double learning_rate) {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("sgd_update: learning_rate must be > 0");
  if (grads.layers.size() != params.layers.size()) {
    throw std::invalid_argument("sgd_update: gradient shape mismatch");
  }
  sgd_step(params, grads, learning_rate);
  return params;
}

// Adam with bias correction.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                         double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  void step(MlpParams& params, const MlpParams& grads) {
    if (m_.layers.empty()) {
      m_ = params.zeros_like();
      v_ = params.zeros_like();
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
      p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      update(params.layers[l].weight, grads.layers[l].weight, m_.layers[l].weight,
             v_.layers[l].weight);
      update(params.layers[l].bias, grads.layers[l].bias, m_.layers[l].bias, v_.layers[l].bias);
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  MlpParams m_, v_;
};

// Checkpoint format (plain text, version 1):
//
//   safeq-mlp 1
//   activation relu
//   dims 4 64 64 2
//   <for each layer: fan_out rows of fan_in weights, then one line of fan_out biases>
//
// Numbers are written with 17 significant digits so a load reproduces the
// parameters bit for bit.
inline void write_params(std::ostream& out, const MlpParams& params) {
  out << "safeq-mlp 1\n";
  out << "activation " << to_string(params.activation) << "\n";
  out << "dims " << params.input_dim();
  for (const auto& l : params.layers) out << ' ' << l.weight.rows();
  out << "\n" << std::setprecision(17);
  for (const auto& l : params.layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out << (c ? " " : "") << l.weight(r, c);
      out << "\n";
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out << (r ? " " : "") << l.bias[r];
    out << "\n";
  }
}

inline MlpParams read_params(std::istream& in, const std::string& origin = "<stream>") {
  auto fail = [&](const std::string& why) -> IoError { return IoError(origin, why); };
  std::string magic, key, value;
  int version = 0;
  if (!(in >> magic >> version) || magic != "safeq-mlp") throw fail("not a safeq-mlp checkpoint");
  if (version != 1) throw fail("unsupported checkpoint version " + std::to_string(version));
  if (!(in >> key >> value) || key != "activation") throw fail("missing activation line");
  MlpParams p;
  try {
    p.activation = parse_activation(value);
  } catch (const std::invalid_argument& e) {
    throw fail(e.what());
  }
  if (!(in >> key) || key != "dims") throw fail("missing dims line");
  std::string line;
  std::getline(in, line);
  std::istringstream dims_in(line);
  std::vector<int> dims;
  for (int d; dims_in >> d;) {
    if (d < 1) throw fail("non-positive layer size");
    dims.push_back(d);
  }
  if (dims.size() < 2) throw fail("dims needs at least input and output sizes");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer{Eigen::MatrixXd(dims[l + 1], dims[l]), Eigen::VectorXd(dims[l + 1])};
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        if (!(in >> layer.weight(r, c))) throw fail("truncated weights in layer " + std::to_string(l));
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
      if (!(in >> layer.bias[r])) throw fail("truncated biases in layer " + std::to_string(l));
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

inline void save_checkpoint(const std::string& path, const MlpParams& params) {
  std::ofstream out(path);
  if (!out) throw IoError(path, "cannot open for writing");
  write_params(out, params);
  if (!out) throw IoError(path, "write failed");
}

inline MlpParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open for reading");
  return read_params(in, path);
}

}  // namespace safeq

#endif  // SAFEQ_QNET_HPP_
