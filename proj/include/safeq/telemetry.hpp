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

#ifndef SAFEQ_TELEMETRY_HPP_
#define SAFEQ_TELEMETRY_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "safeq/agent.hpp"
#include "safeq/errors.hpp"
#include "safeq/explain.hpp"
#include "safeq/safety.hpp"

namespace safeq {

inline constexpr int kRunLogSchemaVersion = 1;

// Everything one run produced, in the order it was produced. Episode indices
// are contiguous from 0; violations and attributions may only reference
// episodes that are already recorded and must arrive in episode order.
class RunLog {
 public:
  RunLog() = default;
  RunLog(std::string run_id, nlohmann::json config, std::vector<std::string> feature_names,
         std::vector<std::string> constraint_names = {})
      : run_id_(std::move(run_id)),
        config_(std::move(config)),
        feature_names_(std::move(feature_names)),
        constraint_names_(std::move(constraint_names)) {}

  void record_episode(const EpisodeStats& stats) {
    if (stats.episode != static_cast<int>(episodes_.size())) {
      throw std::invalid_argument("RunLog: expected episode " + std::to_string(episodes_.size()) +
                                  ", got " + std::to_string(stats.episode));
    }
    episodes_.push_back(stats);
  }

  void record_violation(const ViolationEvent& event) {
    check_reference("violation", event.episode,
                    violations_.empty() ? 0 : violations_.back().episode);
    violations_.push_back(event);
  }

  void record_attribution(const AttributionRecord& record) {
    check_reference("attribution", record.episode,
                    attributions_.empty() ? 0 : attributions_.back().episode);
    attributions_.push_back(record);
  }

  const std::string& run_id() const { return run_id_; }
  const nlohmann::json& config() const { return config_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::vector<std::string>& constraint_names() const { return constraint_names_; }
  const std::vector<EpisodeStats>& episodes() const { return episodes_; }
  const std::vector<ViolationEvent>& violations() const { return violations_; }
  const std::vector<AttributionRecord>& attributions() const { return attributions_; }

 private:
  void check_reference(const char* what, int episode, int last) const {
    if (episode < 0 || episode >= static_cast<int>(episodes_.size())) {
      throw std::invalid_argument(std::string("RunLog: ") + what + " references unrecorded episode " +
                                  std::to_string(episode));
    }
    if (episode < last) {
      throw std::invalid_argument(std::string("RunLog: ") + what + " for episode " +
                                  std::to_string(episode) + " arrived after episode " +
                                  std::to_string(last));
    }
  }

  std::string run_id_;
  nlohmann::json config_ = nlohmann::json::object();
  std::vector<std::string> feature_names_;
  std::vector<std::string> constraint_names_;
  std::vector<EpisodeStats> episodes_;
  std::vector<ViolationEvent> violations_;
  std::vector<AttributionRecord> attributions_;
};

// ---------------------------------------------------------------------------
// CSV

// 17 significant digits: parses back to the identical double.
inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::vector<std::string> episodes_csv_header() {
  return {"run_id", "episode", "steps", "total_raw_reward", "total_shaped_reward", "cvc", "epsilon"};
}

inline std::vector<std::string> violations_csv_header() {
  return {"run_id", "episode", "step", "constraint", "margin", "requested_action", "executed_action",
          "timestamp"};
}

inline std::vector<std::string> attributions_csv_header(int d) {
  std::vector<std::string> h{"run_id", "episode", "step", "method", "action", "base_value"};
  for (int j = 0; j < d; ++j) h.push_back("phi_" + std::to_string(j));
  return h;
}

namespace detail {

inline std::string join(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i];
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << text;
  if (!out) throw IoError(path, "write failed");
}

inline std::vector<std::vector<std::string>> read_csv_rows(const std::string& path,
                                                           const std::vector<std::string>* header,
                                                           std::vector<std::string>* header_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open for reading");
  std::string line;
  if (!std::getline(in, line)) throw IoError(path, "empty file, expected a header row");
  const auto head = split_csv_line(line);
  if (header && head != *header) throw IoError(path, "unexpected header '" + line + "'");
  if (header_out) *header_out = head;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(split_csv_line(line));
    if (rows.back().size() != head.size()) {
      throw IoError(path, "row " + std::to_string(rows.size()) + " has " +
                              std::to_string(rows.back().size()) + " fields, header has " +
                              std::to_string(head.size()));
    }
  }
  return rows;
}

inline double parse_double(const std::string& path, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw IoError(path, "malformed number '" + text + "'");
  }
}

inline int parse_int(const std::string& path, const std::string& text) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw IoError(path, "malformed integer '" + text + "'");
  }
}

}  // namespace detail

inline std::string episodes_csv(const RunLog& log) {
  std::string out = detail::join(episodes_csv_header()) + "\n";
  for (const auto& e : log.episodes()) {
    out += detail::join({log.run_id(), std::to_string(e.episode), std::to_string(e.steps),
                         format_number(e.total_raw_reward), format_number(e.total_shaped_reward),
                         std::to_string(e.cvc), format_number(e.epsilon)}) +
           "\n";
  }
  return out;
}

inline std::string violations_csv(const RunLog& log) {
  std::string out = detail::join(violations_csv_header()) + "\n";
  for (const auto& v : log.violations()) {
    out += detail::join({log.run_id(), std::to_string(v.episode), std::to_string(v.step),
                         v.constraint_name, format_number(v.margin),
                         std::to_string(v.requested_action), std::to_string(v.executed_action),
                         v.timestamp}) +
           "\n";
  }
  return out;
}

inline std::string attributions_csv(const RunLog& log) {
  int d = static_cast<int>(log.feature_names().size());
  if (!log.attributions().empty()) d = static_cast<int>(log.attributions().front().phi.size());
  std::string out = detail::join(attributions_csv_header(d)) + "\n";
  for (const auto& r : log.attributions()) {
    std::vector<std::string> row{log.run_id(), std::to_string(r.episode), std::to_string(r.step),
                                 to_string(r.method), std::to_string(r.action),
                                 format_number(r.base_value)};
    for (Eigen::Index j = 0; j < r.phi.size(); ++j) row.push_back(format_number(r.phi[j]));
    out += detail::join(row) + "\n";
  }
  return out;
}

// One row per feature: label, then one value per episode column.
inline std::string heatmap_csv(const Heatmap& heatmap, const std::vector<std::string>& feature_names) {
  if (static_cast<Eigen::Index>(feature_names.size()) != heatmap.values.rows()) {
    throw std::invalid_argument("heatmap_csv: feature names do not match heatmap rows");
  }
  std::vector<std::string> header{"feature"};
  for (int e : heatmap.episodes) header.push_back(std::to_string(e));
  std::string out = detail::join(header) + "\n";
  for (Eigen::Index j = 0; j < heatmap.values.rows(); ++j) {
    std::vector<std::string> row{feature_names[j]};
    for (Eigen::Index c = 0; c < heatmap.values.cols(); ++c) {
      row.push_back(format_number(heatmap.values(j, c)));
    }
    out += detail::join(row) + "\n";
  }
  return out;
}

enum class CsvKind { kEpisodes, kViolations, kAttributions };

inline void export_csv(const RunLog& log, CsvKind kind, const std::string& path) {
  switch (kind) {
    case CsvKind::kEpisodes: detail::write_text(path, episodes_csv(log)); break;
    case CsvKind::kViolations: detail::write_text(path, violations_csv(log)); break;
    case CsvKind::kAttributions: detail::write_text(path, attributions_csv(log)); break;
  }
}

inline void export_heatmap_csv(const Heatmap& heatmap, const std::vector<std::string>& feature_names,
                               const std::string& path) {
  detail::write_text(path, heatmap_csv(heatmap, feature_names));
}

inline std::vector<EpisodeStats> read_episodes_csv(const std::string& path) {
  const auto header = episodes_csv_header();
  std::vector<EpisodeStats> out;
  for (const auto& f : detail::read_csv_rows(path, &header)) {
    out.push_back({detail::parse_int(path, f[1]), detail::parse_double(path, f[3]),
                   detail::parse_double(path, f[4]), detail::parse_int(path, f[5]),
                   detail::parse_int(path, f[2]), detail::parse_double(path, f[6])});
  }
  return out;
}

inline std::vector<ViolationEvent> read_violations_csv(const std::string& path) {
  const auto header = violations_csv_header();
  std::vector<ViolationEvent> out;
  for (const auto& f : detail::read_csv_rows(path, &header)) {
    out.push_back({detail::parse_int(path, f[1]), detail::parse_int(path, f[2]), f[3],
                   detail::parse_double(path, f[4]), detail::parse_int(path, f[5]),
                   detail::parse_int(path, f[6]), f[7]});
  }
  return out;
}

inline std::vector<AttributionRecord> read_attributions_csv(const std::string& path) {
  std::vector<std::string> header;
  const auto rows = detail::read_csv_rows(path, nullptr, &header);
  const int d = static_cast<int>(header.size()) - 6;
  if (d < 0 || header != attributions_csv_header(d)) throw IoError(path, "unexpected attributions header");
  std::vector<AttributionRecord> out;
  for (const auto& f : rows) {
    AttributionRecord r;
    r.episode = detail::parse_int(path, f[1]);
    r.step = detail::parse_int(path, f[2]);
    try {
      r.method = parse_attribution_method(f[3]);
    } catch (const std::invalid_argument& e) {
      throw IoError(path, e.what());
    }
    r.action = detail::parse_int(path, f[4]);
    r.base_value = detail::parse_double(path, f[5]);
    r.phi.resize(d);
    for (int j = 0; j < d; ++j) r.phi[j] = detail::parse_double(path, f[6 + j]);
    if (is_shap(r.method)) r.efficiency_gap = 0.0;
    out.push_back(std::move(r));
  }
  return out;
}

inline Heatmap read_heatmap_csv(const std::string& path, std::vector<std::string>* feature_names) {
  std::vector<std::string> header;
  const auto rows = detail::read_csv_rows(path, nullptr, &header);
  if (header.empty() || header.front() != "feature") throw IoError(path, "expected 'feature' first column");
  Heatmap h;
  for (std::size_t c = 1; c < header.size(); ++c) h.episodes.push_back(detail::parse_int(path, header[c]));
  h.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(h.episodes.size()));
  if (feature_names) feature_names->clear();
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (feature_names) feature_names->push_back(rows[j][0]);
    for (std::size_t c = 1; c < rows[j].size(); ++c) {
      h.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c - 1)) =
          detail::parse_double(path, rows[j][c]);
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const RunLog& log) {
  using nlohmann::json;
  json doc;
  doc["schema"] = "safeq.runlog";
  doc["schema_version"] = kRunLogSchemaVersion;
  doc["run_id"] = log.run_id();
  doc["config"] = log.config();
  doc["feature_names"] = log.feature_names();
  doc["constraint_names"] = log.constraint_names();
  doc["episodes"] = json::array();
  for (const auto& e : log.episodes()) {
    doc["episodes"].push_back({{"episode", e.episode},
                               {"steps", e.steps},
                               {"total_raw_reward", e.total_raw_reward},
                               {"total_shaped_reward", e.total_shaped_reward},
                               {"cvc", e.cvc},
                               {"epsilon", e.epsilon}});
  }
  doc["violations"] = json::array();
  for (const auto& v : log.violations()) {
    doc["violations"].push_back({{"episode", v.episode},
                                 {"step", v.step},
                                 {"constraint", v.constraint_name},
                                 {"margin", v.margin},
                                 {"requested_action", v.requested_action},
                                 {"executed_action", v.executed_action},
                                 {"timestamp", v.timestamp}});
  }
  doc["attributions"] = json::array();
  for (const auto& r : log.attributions()) {
    doc["attributions"].push_back({{"episode", r.episode},
                                   {"step", r.step},
                                   {"method", to_string(r.method)},
                                   {"action", r.action},
                                   {"phi", std::vector<double>(r.phi.data(), r.phi.data() + r.phi.size())},
                                   {"base_value", r.base_value},
                                   {"efficiency_gap", r.efficiency_gap}});
  }
  return doc;
}

inline RunLog run_log_from_json(const nlohmann::json& doc) {
  if (doc.value("schema", "") != "safeq.runlog") throw std::invalid_argument("not a safeq run log");
  const int version = doc.value("schema_version", 0);
  if (version != kRunLogSchemaVersion) {
    throw std::invalid_argument("unsupported run log schema version " + std::to_string(version));
  }
  RunLog log(doc.at("run_id").get<std::string>(), doc.at("config"),
             doc.at("feature_names").get<std::vector<std::string>>(),
             doc.at("constraint_names").get<std::vector<std::string>>());
  for (const auto& e : doc.at("episodes")) {
    log.record_episode({e.at("episode").get<int>(), e.at("total_raw_reward").get<double>(),
                        e.at("total_shaped_reward").get<double>(), e.at("cvc").get<int>(),
                        e.at("steps").get<int>(), e.at("epsilon").get<double>()});
  }
  for (const auto& v : doc.at("violations")) {
    log.record_violation({v.at("episode").get<int>(), v.at("step").get<int>(),
                          v.at("constraint").get<std::string>(), v.at("margin").get<double>(),
                          v.at("requested_action").get<int>(), v.at("executed_action").get<int>(),
                          v.at("timestamp").get<std::string>()});
  }
  for (const auto& a : doc.at("attributions")) {
    AttributionRecord r;
    r.episode = a.at("episode").get<int>();
    r.step = a.at("step").get<int>();
    r.method = parse_attribution_method(a.at("method").get<std::string>());
    r.action = a.at("action").get<int>();
    const auto phi = a.at("phi").get<std::vector<double>>();
    r.phi = Eigen::Map<const Eigen::VectorXd>(phi.data(), static_cast<Eigen::Index>(phi.size()));
    r.base_value = a.at("base_value").get<double>();
    r.efficiency_gap = a.at("efficiency_gap").get<double>();
    log.record_attribution(r);
  }
  return log;
}

inline void export_json(const RunLog& log, const std::string& path) {
  detail::write_text(path, to_json(log).dump(2) + "\n");
}

inline RunLog import_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open for reading");
  try {
    return run_log_from_json(nlohmann::json::parse(in));
  } catch (const std::exception& e) {
    throw IoError(path, e.what());
  }
}

// ---------------------------------------------------------------------------
// Summary

struct RunSummary {
  int episodes = 0;
  double mean_cvc = 0.0;
  int min_cvc = 0;
  int max_cvc = 0;
  double mean_raw_reward = 0.0;
  std::vector<double> raw_rewards;
  std::vector<double> shaped_rewards;
  std::vector<int> cvc;
  // First episode from which every later episode has cvc == 0.
  std::optional<int> first_zero_violation_episode;
  // Per constraint: mean over episodes of sum_t gamma^t max(0, C_i(s_t, a_t)).
  std::map<std::string, double> discounted_constraint_returns;
};

inline RunSummary summarize(const RunLog& log, double gamma) {
  if (log.episodes().empty()) throw std::invalid_argument("summarize: run log has no episodes");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("summarize: gamma must be in [0, 1)");
  RunSummary s;
  s.episodes = static_cast<int>(log.episodes().size());
  s.min_cvc = log.episodes().front().cvc;
  s.max_cvc = s.min_cvc;
  for (const auto& e : log.episodes()) {
    s.cvc.push_back(e.cvc);
    s.raw_rewards.push_back(e.total_raw_reward);
    s.shaped_rewards.push_back(e.total_shaped_reward);
    s.mean_cvc += e.cvc;
    s.mean_raw_reward += e.total_raw_reward;
    s.min_cvc = std::min(s.min_cvc, e.cvc);
    s.max_cvc = std::max(s.max_cvc, e.cvc);
  }
  s.mean_cvc /= s.episodes;
  s.mean_raw_reward /= s.episodes;

  for (int i = s.episodes; i > 0 && log.episodes()[i - 1].cvc == 0; --i) {
    s.first_zero_violation_episode = log.episodes()[i - 1].episode;
  }

  for (const auto& name : log.constraint_names()) s.discounted_constraint_returns[name] = 0.0;
  for (const auto& v : log.violations()) {
    s.discounted_constraint_returns[v.constraint_name] += std::pow(gamma, v.step) * v.margin;
  }
  for (auto& [name, total] : s.discounted_constraint_returns) total /= s.episodes;
  return s;
}

inline nlohmann::json to_json(const RunSummary& s) {
  nlohmann::json j;
  j["episodes"] = s.episodes;
  j["mean_cvc"] = s.mean_cvc;
  j["min_cvc"] = s.min_cvc;
  j["max_cvc"] = s.max_cvc;
  j["mean_raw_reward"] = s.mean_raw_reward;
  j["first_zero_violation_episode"] =
      s.first_zero_violation_episode ? nlohmann::json(*s.first_zero_violation_episode) : nlohmann::json();
  j["discounted_constraint_returns"] = s.discounted_constraint_returns;
  return j;
}

}  // namespace safeq

#endif  // SAFEQ_TELEMETRY_HPP_
