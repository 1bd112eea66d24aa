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

#ifndef SAFEQ_EXPLAIN_HPP_
#define SAFEQ_EXPLAIN_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "safeq/env.hpp"
#include "safeq/qnet.hpp"
#include "safeq/rng.hpp"

namespace safeq {

enum class AttributionMethod { kShapExact, kShapKernel, kSaliency };

inline std::string to_string(AttributionMethod m) {
  switch (m) {
    case AttributionMethod::kShapExact: return "shap_exact";
    case AttributionMethod::kShapKernel: return "shap_kernel";
    case AttributionMethod::kSaliency: return "saliency";
  }
  return "?";
}

inline AttributionMethod parse_attribution_method(const std::string& text) {
  if (text == "shap_exact") return AttributionMethod::kShapExact;
  if (text == "shap_kernel") return AttributionMethod::kShapKernel;
  if (text == "saliency") return AttributionMethod::kSaliency;
  throw std::invalid_argument("unknown attribution method '" + text +
                              "' (expected shap_exact, shap_kernel or saliency)");
}

inline bool is_shap(AttributionMethod m) { return m != AttributionMethod::kSaliency; }

struct AttributionRecord {
  int episode = 0;
  int step = 0;
  int action = 0;
  AttributionMethod method = AttributionMethod::kShapExact;
  Eigen::VectorXd phi;
  double base_value = 0.0;  // f(empty coalition); 0 for saliency
  // sum(phi) - (f(full) - base_value); 0 for saliency.
  double efficiency_gap = 0.0;
};

// Bit j of a coalition mask set means feature j keeps the explained state's
// value; cleared bits take the background value.
using Coalition = std::uint64_t;

// Background states used to marginalise features outside a coalition.
class BaselineSet {
 public:
  explicit BaselineSet(const std::vector<State>& states) {
    if (states.empty()) throw std::invalid_argument("BaselineSet: at least one background state required");
    const Eigen::Index d = states.front().size();
    matrix_.resize(d, static_cast<Eigen::Index>(states.size()));
    for (std::size_t b = 0; b < states.size(); ++b) {
      if (states[b].size() != d) throw std::invalid_argument("BaselineSet: background states differ in length");
      if (!states[b].allFinite()) throw std::invalid_argument("BaselineSet: background state is not finite");
      matrix_.col(static_cast<Eigen::Index>(b)) = states[b];
    }
  }

  int dim() const { return static_cast<int>(matrix_.rows()); }
  int size() const { return static_cast<int>(matrix_.cols()); }
  const Eigen::MatrixXd& matrix() const { return matrix_; }

 private:
  Eigen::MatrixXd matrix_;  // one background state per column
};

namespace detail {

inline void check_explain_args(const MlpParams& params, const State& s, int action,
                               const BaselineSet* baselines) {
  if (s.size() != params.input_dim()) throw std::invalid_argument("state length does not match the network");
  if (action < 0 || action >= params.output_dim()) throw std::invalid_argument("action index out of range");
  if (baselines && baselines->dim() != s.size()) {
    throw std::invalid_argument("baseline states do not match the state length");
  }
}

// f(S) for every coalition in `masks`, evaluated in batched forward passes.
inline std::vector<double> coalition_values(const MlpParams& params, const State& s, int action,
                                            const BaselineSet& baselines,
                                            const std::vector<Coalition>& masks) {
  const Eigen::Index d = s.size();
  const Eigen::Index nb = baselines.size();
  constexpr Eigen::Index kMaxColumns = 1 << 15;
  const Eigen::Index per_chunk = std::max<Eigen::Index>(1, kMaxColumns / nb);

  std::vector<double> values(masks.size());
  for (std::size_t start = 0; start < masks.size(); start += per_chunk) {
    const std::size_t stop = std::min(masks.size(), start + static_cast<std::size_t>(per_chunk));
    Eigen::MatrixXd composite(d, static_cast<Eigen::Index>(stop - start) * nb);
    for (std::size_t m = start; m < stop; ++m) {
      auto block = composite.middleCols(static_cast<Eigen::Index>(m - start) * nb, nb);
      block = baselines.matrix();
      for (Eigen::Index j = 0; j < d; ++j) {
        if (masks[m] >> j & 1U) block.row(j).setConstant(s[j]);
      }
    }
    const Eigen::MatrixXd q = forward_batch(params, composite);
    for (std::size_t m = start; m < stop; ++m) {
      values[m] = q.row(action).segment(static_cast<Eigen::Index>(m - start) * nb, nb).mean();
    }
  }
  return values;
}

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

inline int popcount(Coalition m) { return __builtin_popcountll(m); }

}  // namespace detail

// Mean of Q(composite, action) over the background set, where the composite
// keeps s's features in `coalition` and the background's elsewhere.
inline double coalition_value(const MlpParams& params, const State& s, int action,
                              Coalition coalition, const BaselineSet& baselines) {
  detail::check_explain_args(params, s, action, &baselines);
  if (s.size() < 64 && (coalition >> s.size()) != 0) {
    throw std::invalid_argument("coalition references features beyond the state length");
  }
  return detail::coalition_values(params, s, action, baselines, {coalition}).front();
}

inline constexpr int kMaxExactShapFeatures = 20;

// Exact Shapley values by enumerating every coalition:
//   phi_j = sum_{S not containing j} |S|! (d-|S|-1)! / d! * (f(S + j) - f(S)).
inline AttributionRecord shap_exact(const MlpParams& params, const State& s, int action,
                                    const BaselineSet& baselines) {
  detail::check_explain_args(params, s, action, &baselines);
  const int d = static_cast<int>(s.size());
  if (d > kMaxExactShapFeatures) {
    throw std::invalid_argument("shap_exact enumerates 2^d coalitions and supports d <= " +
                                std::to_string(kMaxExactShapFeatures) + " (got " +
                                std::to_string(d) + "); use shap_kernel instead");
  }
  const Coalition full = (Coalition{1} << d) - 1;
  std::vector<Coalition> masks(full + 1);
  for (Coalition m = 0; m <= full; ++m) masks[m] = m;
  const std::vector<double> v = detail::coalition_values(params, s, action, baselines, masks);

  // weight(k) = k! (d-k-1)! / d! = 1 / (d * C(d-1, k))
  std::vector<double> weight(d);
  for (int k = 0; k < d; ++k) weight[k] = 1.0 / (d * detail::binomial(d - 1, k));

  AttributionRecord rec;
  rec.action = action;
  rec.method = AttributionMethod::kShapExact;
  rec.phi = Eigen::VectorXd::Zero(d);
  for (Coalition m = 0; m <= full; ++m) {
    const double w = weight[std::min(detail::popcount(m), d - 1)];
    for (int j = 0; j < d; ++j) {
      if (m >> j & 1U) continue;
      rec.phi[j] += w * (v[m | (Coalition{1} << j)] - v[m]);
    }
  }
  rec.base_value = v[0];
  rec.efficiency_gap = rec.phi.sum() - (v[full] - v[0]);
  return rec;
}

// KernelSHAP: weighted least squares over coalitions with the Shapley kernel
//   pi(S) = (d-1) / (C(d,|S|) |S| (d-|S|)),
// with the empty and full coalitions pinned by the efficiency constraint
// sum(phi) = f(full) - f(empty).
//
// When n_samples covers all 2^d coalitions they are enumerated with their
// exact kernel weights, which reproduces the exact Shapley values. Otherwise
// coalition sizes are drawn in proportion to their total kernel mass and
// members uniformly, in complementary pairs, each draw carrying unit weight.
inline AttributionRecord shap_kernel(const MlpParams& params, const State& s, int action,
                                     const BaselineSet& baselines, int n_samples, Rng& rng) {
  detail::check_explain_args(params, s, action, &baselines);
  const int d = static_cast<int>(s.size());
  if (d >= 63) throw std::invalid_argument("shap_kernel supports at most 62 features");
  if (n_samples < 2 * d + 2) {
    throw std::invalid_argument("shap_kernel needs n_samples >= 2d+2 = " + std::to_string(2 * d + 2));
  }
  const Coalition full = (Coalition{1} << d) - 1;
  const auto ends = detail::coalition_values(params, s, action, baselines, {0, full});
  const double base = ends[0];
  const double delta = ends[1] - ends[0];

  AttributionRecord rec;
  rec.action = action;
  rec.method = AttributionMethod::kShapKernel;
  rec.base_value = base;
  if (d == 1) {
    rec.phi = Eigen::VectorXd::Constant(1, delta);
    return rec;
  }

  const bool exhaustive = d < 31 && static_cast<double>(n_samples) >= std::ldexp(1.0, d);
  std::vector<double> size_cdf(d);  // sizes 1..d-1
  if (!exhaustive) {
    double acc = 0.0;
    for (int k = 1; k < d; ++k) {
      acc += (d - 1.0) / (k * (d - k));
      size_cdf[k] = acc;
    }
    for (int k = 1; k < d; ++k) size_cdf[k] /= acc;
  }

  auto draw = [&](std::vector<Coalition>& masks, std::vector<double>& weights) {
    masks.clear();
    weights.clear();
    if (exhaustive) {
      for (Coalition m = 1; m < full; ++m) {
        const int k = detail::popcount(m);
        masks.push_back(m);
        weights.push_back((d - 1.0) / (detail::binomial(d, k) * k * (d - k)));
      }
      return;
    }
    std::vector<int> order(d);
    while (static_cast<int>(masks.size()) + 2 <= n_samples - 2) {
      const double u = uniform01(rng);
      int k = 1;
      while (k < d - 1 && size_cdf[k] < u) ++k;
      for (int j = 0; j < d; ++j) order[j] = j;
      Coalition m = 0;
      for (int i = 0; i < k; ++i) {  // partial Fisher-Yates
        const int pick = i + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(d - i)));
        std::swap(order[i], order[pick]);
        m |= Coalition{1} << order[i];
      }
      masks.push_back(m);
      masks.push_back(full & ~m);
      weights.push_back(1.0);
      weights.push_back(1.0);
    }
  };

  // Eliminate phi_{d-1} = delta - sum_{j<d-1} phi_j:
  //   y_S - z_{S,d-1} delta = sum_{j<d-1} (z_{S,j} - z_{S,d-1}) phi_j
  auto solve = [&](const std::vector<Coalition>& masks, const std::vector<double>& weights,
                   Eigen::VectorXd& phi) {
    const std::vector<double> v = detail::coalition_values(params, s, action, baselines, masks);
    const Eigen::Index rows = static_cast<Eigen::Index>(masks.size());
    Eigen::MatrixXd a(rows, d - 1);
    Eigen::VectorXd b(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double sw = std::sqrt(weights[r]);
      const double last = static_cast<double>(masks[r] >> (d - 1) & 1U);
      for (int j = 0; j + 1 < d; ++j) {
        a(r, j) = sw * (static_cast<double>(masks[r] >> j & 1U) - last);
      }
      b[r] = sw * (v[r] - base - last * delta);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < d - 1) return false;
    const Eigen::VectorXd head = qr.solve(b);
    phi.resize(d);
    phi.head(d - 1) = head;
    phi[d - 1] = delta - head.sum();
    return true;
  };

  std::vector<Coalition> masks;
  std::vector<double> weights;
  draw(masks, weights);
  if (!solve(masks, weights, rec.phi)) {
    draw(masks, weights);
    if (exhaustive || !solve(masks, weights, rec.phi)) {
      throw std::runtime_error("shap_kernel: sampled coalitions do not identify all " +
                               std::to_string(d) + " features (" + std::to_string(masks.size()) +
                               " coalitions); increase n_samples");
    }
  }
  rec.efficiency_gap = rec.phi.sum() - delta;
  return rec;
}

// Input-gradient saliency: phi = dQ(s, action)/ds.
inline AttributionRecord saliency(const MlpParams& params, const State& s, int action) {
  detail::check_explain_args(params, s, action, nullptr);
  AttributionRecord rec;
  rec.action = action;
  rec.method = AttributionMethod::kSaliency;
  rec.phi = grad_input(params, s, action);
  return rec;
}

// Per-feature mean of |phi_j| over all records of `method`.
inline Eigen::VectorXd mean_abs_attribution(const std::vector<AttributionRecord>& records,
                                            AttributionMethod method) {
  Eigen::VectorXd sum;
  int count = 0;
  for (const auto& r : records) {
    if (r.method != method) continue;
    if (count == 0) sum = Eigen::VectorXd::Zero(r.phi.size());
    if (r.phi.size() != sum.size()) throw std::invalid_argument("attribution records differ in length");
    sum += r.phi.cwiseAbs();
    ++count;
  }
  if (count == 0) throw std::invalid_argument("no attribution records for method " + to_string(method));
  return sum / count;
}

// Features x episodes matrix; columns in ascending episode order.
struct Heatmap {
  std::vector<int> episodes;
  Eigen::MatrixXd values;
};

// Entry (j, e) is the mean over episode e's records of |phi_j|, or of the
// signed phi_j when `signed_values` is set.
inline Heatmap heatmap_matrix(const std::vector<AttributionRecord>& records,
                              AttributionMethod method, bool signed_values = false) {
  std::map<int, std::pair<Eigen::VectorXd, int>> per_episode;
  Eigen::Index d = -1;
  for (const auto& r : records) {
    if (r.method != method) continue;
    if (d < 0) d = r.phi.size();
    if (r.phi.size() != d) throw std::invalid_argument("attribution records differ in length");
    auto [it, inserted] = per_episode.try_emplace(r.episode, Eigen::VectorXd::Zero(d), 0);
    it->second.first += signed_values ? r.phi : r.phi.cwiseAbs().eval();
    it->second.second += 1;
  }
  if (per_episode.empty()) throw std::invalid_argument("no attribution records for method " + to_string(method));
  Heatmap h;
  h.values.resize(d, static_cast<Eigen::Index>(per_episode.size()));
  Eigen::Index col = 0;
  for (const auto& [episode, acc] : per_episode) {
    h.episodes.push_back(episode);
    h.values.col(col++) = acc.first / acc.second;
  }
  return h;
}

}  // namespace safeq

#endif  // SAFEQ_EXPLAIN_HPP_
