#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "dcpg/harness/train.hpp"

using namespace dcpg;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.classes = 4;
  c.regions = 3;
  c.tokens = 4;
  c.region_dim = 8;
  c.vocab = 12;
  c.train_per_class = 2;
  c.val_per_class = 3;
  c.test_per_class = 3;
  c.word_dim = 6;
  c.hidden = 6;
  c.embed = 8;
  c.decoder_width = 6;
  c.decoder_hidden = 8;
  c.actions = 10;
  c.batch = 4;
  c.epochs = 1;
  return c;
}

}  // namespace

TEST(Train, OneEpochSmoke) {
  const ModelConfig cfg = tiny();
  const SyntheticDataset data = generate_dataset(DatasetSpec::from_config(cfg));
  ASSERT_EQ(data.train.size(), 8u);
  Model m = Model::create(cfg);
  std::size_t seen = 0;
  TrainHooks hooks;
  hooks.on_record = [&](const nlohmann::json&) { ++seen; };
  const TrainResult r = train(m, data, hooks);
  EXPECT_EQ(seen, r.log.records().size());
  const auto evals = r.log.of_kind("eval");
  ASSERT_EQ(evals.size(), 1u);
  EXPECT_EQ(evals[0]["split"], "val");
  for (const char* k : {"i2t_r1", "i2t_r5", "i2t_r10", "t2i_r1", "t2i_r5", "t2i_r10"}) EXPECT_TRUE(evals[0].contains(k));
  ASSERT_EQ(r.log.of_kind("train").size(), 1u);
  const auto train_rec = r.log.of_kind("train")[0];
  for (const char* k : LossBundle::kNames) EXPECT_TRUE(std::isfinite(train_rec[k].get<double>())) << k;
  EXPECT_EQ(r.log.of_kind("step").size(), 2u);
  EXPECT_EQ(r.best_epoch, 1u);
}

TEST(Train, IdenticalSeedsGiveIdenticalRuns) {
  ModelConfig cfg = tiny();
  cfg.epochs = 2;
  const SyntheticDataset data = generate_dataset(DatasetSpec::from_config(cfg));
  Model a = Model::create(cfg), b = Model::create(cfg);
  const TrainResult ra = train(a, data), rb = train(b, data);
  EXPECT_EQ(ra.log.to_jsonl(false), rb.log.to_jsonl(false));
  EXPECT_EQ(ra.final_params, rb.final_params);
  EXPECT_EQ(Snapshot::take(a), Snapshot::take(b));
}

TEST(Train, DifferentSeedsDiffer) {
  ModelConfig cfg = tiny();
  const SyntheticDataset data = generate_dataset(DatasetSpec::from_config(cfg));
  Model a = Model::create(cfg);
  cfg.seed = 2;
  Model b = Model::create(cfg);
  EXPECT_FALSE(Snapshot::take(a) == Snapshot::take(b));
}

TEST(Train, LearningRateDrops) {
  ModelConfig cfg = tiny();
  cfg.epochs = 3;
  cfg.lr_drop_epoch = 2;
  const SyntheticDataset data = generate_dataset(DatasetSpec::from_config(cfg));
  Model m = Model::create(cfg);
  const auto recs = train(m, data).log.of_kind("train");
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0]["lr"], cfg.lr);
  EXPECT_EQ(recs[1]["lr"], cfg.lr);
  EXPECT_EQ(recs[2]["lr"], cfg.lr_after);
}

TEST(Train, BestCheckpointIsRestored) {
  ModelConfig cfg = tiny();
  cfg.epochs = 3;
  const SyntheticDataset data = generate_dataset(DatasetSpec::from_config(cfg));
  Model m = Model::create(cfg);
  const TrainResult r = train(m, data);
  EXPECT_EQ(Snapshot::take(m), r.best);
  EXPECT_EQ(evaluate(m, data.val), r.best_val);
  for (const auto& rec : r.log.of_kind("eval")) {
    EXPECT_LE(rec["i2t_r1"].get<double>() + rec["t2i_r1"].get<double>(), r.best_val.r1_sum());
  }
}

TEST(Train, CheckpointRoundTrip) {
  const ModelConfig cfg = tiny();
  const SyntheticDataset data = generate_dataset(DatasetSpec::from_config(cfg));
  Model m = Model::create(cfg);
  train(m, data);
  const fs::path path = fs::temp_directory_path() / "dcpg_test_model.ckpt";
  save_checkpoint(m, path);
  const Model back = load_checkpoint(path);
  EXPECT_EQ(Snapshot::take(back), Snapshot::take(m));
  EXPECT_EQ(config_to_map(back.config), config_to_map(m.config));
  EXPECT_EQ(evaluate(back, data.test), evaluate(m, data.test));
  fs::remove(path);
}

TEST(Train, CorruptCheckpointIsRejected) {
  const fs::path path = fs::temp_directory_path() / "dcpg_test_bad.ckpt";
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  fs::remove(path);
}

TEST(Evaluate, GallerySmallerThanTenIsAnError) {
  ModelConfig cfg = tiny();
  cfg.val_per_class = 2;
  const SyntheticDataset data = generate_dataset(DatasetSpec::from_config(cfg));
  ASSERT_EQ(data.val.size(), 8u);
  const Model m = Model::create(cfg);
  EXPECT_THROW(evaluate(m, data.val), std::invalid_argument);
}

TEST(Evaluate, DimensionMismatchIsAnError) {
  ModelConfig cfg = tiny();
  const Model m = Model::create(cfg);
  cfg.region_dim = 9;
  const SyntheticDataset data = generate_dataset(DatasetSpec::from_config(cfg));
  EXPECT_THROW(evaluate(m, data.test), std::invalid_argument);
}

TEST(Evaluate, RandomScoresSitAtChance) {
  Rng rng(5);
  const std::size_t k = 50;
  double i2t = 0, t2i = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    const EvalResult r = recall_report(SimilarityMatrix{standard_normal_noise(Shape{k, k}, rng)});
    i2t += r.i2t_r1;
    t2i += r.t2i_r1;
    EXPECT_LE(r.i2t_r1, r.i2t_r5);
    EXPECT_LE(r.i2t_r5, r.i2t_r10);
  }
  EXPECT_NEAR(i2t / trials, 1.0 / k, 0.006);
  EXPECT_NEAR(t2i / trials, 1.0 / k, 0.006);
}

TEST(Train, MismatchedDatasetIsAnError) {
  ModelConfig cfg = tiny();
  Model m = Model::create(cfg);
  cfg.classes = 5;
  const SyntheticDataset data = generate_dataset(DatasetSpec::from_config(cfg));
  EXPECT_THROW(train(m, data), ConfigError);
}

TEST(Train, BatchesHoldDistinctClasses) {
  ModelConfig cfg = tiny();
  cfg.classes = 10;
  cfg.train_per_class = 3;
  const SyntheticDataset data = generate_dataset(DatasetSpec::from_config(cfg));
  Rng rng(1);
  const auto batches = epoch_batches(data.train, cfg.classes, 4, rng);
  std::vector<int> seen(data.train.size(), 0);
  for (const auto& b : batches) {
    EXPECT_GE(b.size(), 2u);
    EXPECT_LE(b.size(), 4u);
    std::set<std::size_t> labels;
    for (auto i : b) {
      labels.insert(data.train.labels[i]);
      ++seen[i];
    }
    EXPECT_EQ(labels.size(), b.size());
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Train, PgOffLeavesPolicyUntouched) {
  ModelConfig cfg = tiny();
  cfg.pg = PgMode::off;
  const SyntheticDataset data = generate_dataset(DatasetSpec::from_config(cfg));
  Model m = Model::create(cfg);
  const Tensor before = m.image_policy.heads[0].w_mu.value();
  train(m, data);
  EXPECT_EQ(m.image_policy.heads[0].w_mu.value(), before);
}

TEST(Train, EverySwitchCombinationTrains) {
  const SyntheticDataset data = generate_dataset(DatasetSpec::from_config(tiny()));
  for (auto pg : {PgMode::off, PgMode::discrete_only, PgMode::continuous_only, PgMode::compound}) {
    for (int mask = 0; mask < 8; ++mask) {
      ModelConfig cfg = tiny();
      cfg.pg = pg;
      cfg.triplet = mask & 1;
      cfg.instance = mask & 2;
      cfg.decode = mask & 4;
      Model m = Model::create(cfg);
      const TrainResult r = train(m, data);
      const auto rec = r.log.of_kind("train").at(0);
      if (!cfg.triplet) {
        EXPECT_EQ(rec["triplet"].get<double>(), 0.0);
      }
      if (!cfg.instance) {
        EXPECT_EQ(rec["instance"].get<double>(), 0.0);
      }
      if (!cfg.decode) {
        EXPECT_EQ(rec["decode_text"].get<double>(), 0.0);
      }
      if (pg == PgMode::off || pg == PgMode::continuous_only) {
        EXPECT_EQ(rec["pg_discrete_image"].get<double>(), 0.0);
      }
      if (pg == PgMode::off || pg == PgMode::discrete_only) {
        EXPECT_EQ(rec["pg_continuous_text"].get<double>(), 0.0);
      }
    }
  }
}
