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

#include "safeq/telemetry.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gtest/gtest.h"

namespace safeq {
namespace {

namespace fs = std::filesystem;

const std::vector<std::string> kFeatures{"cart_position", "cart_velocity", "pole_angle", "pole_angular_velocity"};

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("safeq_telemetry_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int line_count(const std::string& text) { return static_cast<int>(std::count(text.begin(), text.end(), '\n')); }

EpisodeStats episode(int e, int cvc, double reward = 10.0) {
  return {e, reward, reward - 0.1 * cvc, cvc, static_cast<int>(reward), 1.0 / (e + 3)};
}

ViolationEvent violation(int e, int step, double margin) {
  return {e, step, "cart_speed", margin, 1, 0, "2026-01-01T00:00:00.000Z"};
}

AttributionRecord attribution(int e, int step, AttributionMethod m, double scale) {
  AttributionRecord r;
  r.episode = e;
  r.step = step;
  r.method = m;
  r.action = step % 2;
  r.phi = Eigen::Vector4d(0.1, -0.2, 0.3, -0.4) * scale + Eigen::Vector4d::Constant(1.0 / 3.0);
  r.base_value = is_shap(m) ? 1.0 / 7.0 : 0.0;
  return r;
}

// A log with two episodes and mixed records; values chosen to need all 17 digits.
RunLog sample_log() {
  RunLog log("unit", nlohmann::json{{"seed", 3}}, kFeatures, {"cart_speed"});
  log.record_episode(episode(0, 2, 12.0));
  log.record_violation(violation(0, 3, 0.1 + 0.2));
  log.record_violation(violation(0, 7, 1e-13));
  log.record_attribution(attribution(0, 0, AttributionMethod::kShapExact, 1.0));
  log.record_attribution(attribution(0, 0, AttributionMethod::kSaliency, 2.0));
  log.record_episode(episode(1, 0, 30.0));
  log.record_attribution(attribution(1, 0, AttributionMethod::kShapExact, -1.5));
  log.record_attribution(attribution(1, 0, AttributionMethod::kSaliency, 0.5));
  log.record_attribution(attribution(1, 5, AttributionMethod::kShapExact, 3.0));
  return log;
}

void expect_records_near(const AttributionRecord& a, const AttributionRecord& b) {
  EXPECT_EQ(a.episode, b.episode);
  EXPECT_EQ(a.step, b.step);
  EXPECT_EQ(a.method, b.method);
  EXPECT_EQ(a.action, b.action);
  EXPECT_NEAR(a.base_value, b.base_value, 1e-9);
  ASSERT_EQ(a.phi.size(), b.phi.size());
  for (Eigen::Index j = 0; j < a.phi.size(); ++j) EXPECT_NEAR(a.phi[j], b.phi[j], 1e-9);
}

TEST(RunLogTest, RecordsInOrder) {
  const RunLog log = sample_log();
  EXPECT_EQ(log.episodes().size(), 2u);
  EXPECT_EQ(log.violations().size(), 2u);
  EXPECT_EQ(log.attributions().size(), 5u);
}

TEST(RunLogTest, RejectsBadOrdering) {
  RunLog log("x", {}, kFeatures);
  EXPECT_THROW(log.record_episode(episode(1, 0)), std::invalid_argument);
  EXPECT_THROW(log.record_violation(violation(0, 0, 1.0)), std::invalid_argument);
  log.record_episode(episode(0, 0));
  EXPECT_THROW(log.record_episode(episode(0, 0)), std::invalid_argument);
  log.record_episode(episode(1, 0));
  log.record_violation(violation(1, 0, 1.0));
  EXPECT_THROW(log.record_violation(violation(0, 0, 1.0)), std::invalid_argument);
  EXPECT_THROW(log.record_attribution(attribution(2, 0, AttributionMethod::kSaliency, 1.0)),
               std::invalid_argument);
}

TEST(CsvTest, FormatNumberRoundTrips) {
  for (double v : {0.1 + 0.2, 1e-300, -123456.789, 1.0 / 3.0}) {
    EXPECT_EQ(std::stod(format_number(v)), v);
  }
  EXPECT_EQ(format_number(2.0), "2");
}

TEST(CsvTest, LineCountsAndHeaders) {
  const RunLog log = sample_log();
  EXPECT_EQ(line_count(episodes_csv(log)), 3);
  EXPECT_EQ(line_count(violations_csv(log)), 3);
  EXPECT_EQ(line_count(attributions_csv(log)), 6);
  const std::string head = attributions_csv(log).substr(0, attributions_csv(log).find('\n'));
  EXPECT_EQ(split_csv_line(head).size(), 10u);
}

TEST(CsvTest, EmptyLogHasHeadersOnly) {
  const RunLog log("empty", {}, kFeatures);
  EXPECT_EQ(line_count(episodes_csv(log)), 1);
  EXPECT_EQ(line_count(violations_csv(log)), 1);
  EXPECT_EQ(line_count(attributions_csv(log)), 1);
}

TEST(CsvTest, RoundTripWithinTolerance) {
  TempDir dir;
  const RunLog log = sample_log();
  export_csv(log, CsvKind::kEpisodes, dir.file("episodes.csv"));
  export_csv(log, CsvKind::kViolations, dir.file("violations.csv"));
  export_csv(log, CsvKind::kAttributions, dir.file("attributions.csv"));

  const auto episodes = read_episodes_csv(dir.file("episodes.csv"));
  ASSERT_EQ(episodes.size(), log.episodes().size());
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    EXPECT_EQ(episodes[i].episode, log.episodes()[i].episode);
    EXPECT_EQ(episodes[i].cvc, log.episodes()[i].cvc);
    EXPECT_NEAR(episodes[i].total_shaped_reward, log.episodes()[i].total_shaped_reward, 1e-9);
    EXPECT_NEAR(episodes[i].epsilon, log.episodes()[i].epsilon, 1e-9);
  }
  EXPECT_EQ(read_violations_csv(dir.file("violations.csv")), log.violations());
  const auto records = read_attributions_csv(dir.file("attributions.csv"));
  ASSERT_EQ(records.size(), log.attributions().size());
  for (std::size_t i = 0; i < records.size(); ++i) expect_records_near(records[i], log.attributions()[i]);
}

TEST(CsvTest, ReExportIsByteIdentical) {
  TempDir dir;
  const RunLog log = sample_log();
  export_csv(log, CsvKind::kAttributions, dir.file("a.csv"));
  RunLog again("unit", {}, kFeatures);
  for (const auto& e : log.episodes()) again.record_episode(e);
  for (const auto& r : read_attributions_csv(dir.file("a.csv"))) again.record_attribution(r);
  export_csv(again, CsvKind::kAttributions, dir.file("b.csv"));
  EXPECT_EQ(slurp(dir.file("a.csv")), slurp(dir.file("b.csv")));
}

TEST(CsvTest, MissingFileIsIoError) {
  EXPECT_THROW(read_episodes_csv("/nonexistent/safeq/episodes.csv"), IoError);
}

TEST(CsvTest, HeatmapShapeAndRoundTrip) {
  TempDir dir;
  const RunLog log = sample_log();
  const Heatmap h = heatmap_matrix(log.attributions(), AttributionMethod::kShapExact);
  EXPECT_EQ(h.values.rows(), 4);
  EXPECT_EQ(h.values.cols(), 2);
  export_heatmap_csv(h, kFeatures, dir.file("h.csv"));
  EXPECT_EQ(line_count(slurp(dir.file("h.csv"))), 5);
  std::vector<std::string> names;
  const Heatmap back = read_heatmap_csv(dir.file("h.csv"), &names);
  EXPECT_EQ(names, kFeatures);
  EXPECT_EQ(back.episodes, h.episodes);
  EXPECT_TRUE(back.values.isApprox(h.values, 1e-12));
  EXPECT_THROW(heatmap_csv(h, {"only_one"}), std::invalid_argument);
}

TEST(JsonTest, RoundTripAndAgreementWithCsv) {
  TempDir dir;
  const RunLog log = sample_log();
  export_json(log, dir.file("log.json"));
  const RunLog back = import_json(dir.file("log.json"));
  EXPECT_EQ(back.run_id(), "unit");
  EXPECT_EQ(back.config(), log.config());
  EXPECT_EQ(back.feature_names(), kFeatures);
  EXPECT_EQ(back.constraint_names(), log.constraint_names());
  EXPECT_EQ(back.episodes(), log.episodes());
  EXPECT_EQ(back.violations(), log.violations());
  ASSERT_EQ(back.attributions().size(), log.attributions().size());
  for (std::size_t i = 0; i < back.attributions().size(); ++i) {
    expect_records_near(back.attributions()[i], log.attributions()[i]);
  }
  // The same data exported through both formats must agree.
  EXPECT_EQ(episodes_csv(back), episodes_csv(log));
  EXPECT_EQ(violations_csv(back), violations_csv(log));
  EXPECT_EQ(attributions_csv(back), attributions_csv(log));
}

TEST(JsonTest, RejectsWrongSchemaAndGarbage) {
  TempDir dir;
  nlohmann::json doc = to_json(sample_log());
  doc["schema_version"] = 99;
  EXPECT_THROW(run_log_from_json(doc), std::exception);
  std::ofstream(dir.file("bad.json")) << "{ not json";
  EXPECT_THROW(import_json(dir.file("bad.json")), IoError);
}

RunLog log_with_cvc(const std::vector<int>& cvc) {
  RunLog log("s", {}, kFeatures, {"cart_speed"});
  for (std::size_t i = 0; i < cvc.size(); ++i) log.record_episode(episode(static_cast<int>(i), cvc[i]));
  return log;
}

TEST(SummaryTest, ZeroViolationMarker) {
  const RunSummary a = summarize(log_with_cvc({3, 1, 0, 0}), 0.99);
  ASSERT_TRUE(a.first_zero_violation_episode.has_value());
  EXPECT_EQ(*a.first_zero_violation_episode, 2);
  EXPECT_DOUBLE_EQ(a.mean_cvc, 1.0);
  EXPECT_EQ(a.min_cvc, 0);
  EXPECT_EQ(a.max_cvc, 3);

  const RunSummary zeros = summarize(log_with_cvc({0, 0, 0}), 0.99);
  EXPECT_EQ(zeros.first_zero_violation_episode, 0);
  EXPECT_FALSE(summarize(log_with_cvc({0, 2}), 0.99).first_zero_violation_episode.has_value());
  EXPECT_TRUE(to_json(summarize(log_with_cvc({0, 2}), 0.99))["first_zero_violation_episode"].is_null());
}

TEST(SummaryTest, DiscountedConstraintReturn) {
  const RunLog log = sample_log();
  const RunSummary s = summarize(log, 0.5);
  const double want = ((0.1 + 0.2) * std::pow(0.5, 3) + 1e-13 * std::pow(0.5, 7)) / 2.0;
  EXPECT_NEAR(s.discounted_constraint_returns.at("cart_speed"), want, 1e-15);
  EXPECT_THROW(summarize(RunLog("e", {}, kFeatures), 0.9), std::invalid_argument);
}

}  // namespace
}  // namespace safeq
