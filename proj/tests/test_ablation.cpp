#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "dcpg/harness/ablation.hpp"

using namespace dcpg;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.classes = 4;
  c.regions = 2;
  c.tokens = 3;
  c.region_dim = 6;
  c.vocab = 8;
  c.train_per_class = 2;
  c.val_per_class = 3;
  c.test_per_class = 3;
  c.word_dim = 4;
  c.hidden = 4;
  c.embed = 6;
  c.decoder_width = 4;
  c.decoder_hidden = 6;
  c.actions = 10;
  c.batch = 4;
  c.epochs = 1;
  return c;
}

}  // namespace

TEST(Ablation, TwoCellsFiveSeeds) {
  const std::vector<AblationCell> cells = {{"off", {{"pg", "off"}}}, {"compound", {{"pg", "compound"}}}};
  const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::size_t callbacks = 0;
  const AblationReport r = run_ablation(tiny(), cells, seeds, 2, [&](const CellRun&) { ++callbacks; });
  EXPECT_EQ(r.runs.size(), 10u);
  EXPECT_EQ(callbacks, 10u);
  ASSERT_EQ(r.cells.size(), 2u);
  for (const auto& c : r.cells) {
    EXPECT_EQ(c.runs, 5u);
    EXPECT_EQ(c.failures, 0u);
    EXPECT_TRUE(c.metrics.count("i2t_r1"));
  }
  for (const auto& run : r.runs) EXPECT_TRUE(run.ok) << run.error;
  // Header plus one row per cell.
  const std::string table = r.table();
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
  EXPECT_NE(table.find("compound"), std::string::npos);
  const auto j = r.to_json();
  EXPECT_EQ(j["runs"].size(), 10u);
  EXPECT_EQ(j["cells"].size(), 2u);
}

TEST(Ablation, SummaryMatchesRuns) {
  const std::vector<AblationCell> cells = {{"base", {}}};
  const AblationReport r = run_ablation(tiny(), cells, {1, 2, 3}, 1);
  std::vector<double> xs;
  for (const auto& run : r.runs) xs.push_back(run.test.i2t_r1);
  double mean = 0;
  for (double x : xs) mean += x / 3;
  double var = 0;
  for (double x : xs) var += (x - mean) * (x - mean) / 2;
  EXPECT_NEAR(r.cell("base").metrics.at("i2t_r1").mean, mean, 1e-15);
  EXPECT_NEAR(r.cell("base").metrics.at("i2t_r1").std, std::sqrt(var), 1e-15);
  EXPECT_THROW(r.cell("missing"), std::out_of_range);
}

TEST(Ablation, ParallelMatchesSerial) {
  const std::vector<AblationCell> cells = {{"a", {{"lambda", "10"}}}, {"b", {{"reward", "ap"}}}};
  const AblationReport serial = run_ablation(tiny(), cells, {1, 2}, 1);
  const AblationReport parallel = run_ablation(tiny(), cells, {1, 2}, 3);
  ASSERT_EQ(serial.runs.size(), parallel.runs.size());
  for (std::size_t i = 0; i < serial.runs.size(); ++i) {
    EXPECT_EQ(serial.runs[i].cell, parallel.runs[i].cell);
    EXPECT_EQ(serial.runs[i].seed, parallel.runs[i].seed);
    EXPECT_EQ(serial.runs[i].test, parallel.runs[i].test);
  }
}

TEST(Ablation, FailingCellIsReportedNotFatal) {
  const std::vector<AblationCell> cells = {{"good", {}}, {"bad_key", {{"no_such_key", "1"}}}, {"bad_value", {{"heads", "3"}}}};
  const AblationReport r = run_ablation(tiny(), cells, {1, 2}, 1);
  EXPECT_EQ(r.cell("good").failures, 0u);
  EXPECT_EQ(r.cell("bad_key").failures, 2u);
  EXPECT_EQ(r.cell("bad_value").failures, 2u);
  ASSERT_FALSE(r.cell("bad_key").errors.empty());
  EXPECT_NE(r.cell("bad_key").errors[0].find("no_such_key"), std::string::npos);
  EXPECT_NE(r.table().find("bad_value"), std::string::npos);
}

TEST(Ablation, GridParsing) {
  const auto cells = parse_ablation_grid("# axes\nbase:\nlow_lambda: lambda=10, pg = discrete  # note\n\n");
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].name, "base");
  EXPECT_TRUE(cells[0].overrides.empty());
  ASSERT_EQ(cells[1].overrides.size(), 2u);
  EXPECT_EQ(cells[1].overrides[1], (std::pair<std::string, std::string>{"pg", "discrete"}));
  EXPECT_THROW(parse_ablation_grid("no colon here"), ConfigError);
  EXPECT_THROW(parse_ablation_grid("x: lambda"), ConfigError);
  EXPECT_THROW(parse_ablation_grid("# only comments\n"), ConfigError);
}

TEST(Ablation, DefaultGridOverridesAreValid) {
  for (const auto& c : default_ablation_grid()) {
    ModelConfig cfg;
    for (const auto& [k, v] : c.overrides) EXPECT_NO_THROW(set_config_value(cfg, k, v)) << c.name;
    EXPECT_NO_THROW(cfg.validate()) << c.name;
  }
}

TEST(Ablation, MeanSpreadUsesSampleDeviation) {
  const MeanSpread m = mean_spread({1.0, 2.0, 3.0});
  EXPECT_DOUBLE_EQ(m.mean, 2.0);
  EXPECT_DOUBLE_EQ(m.std, 1.0);
  EXPECT_EQ(mean_spread({4.0}).std, 0.0);
}
