#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcpg/autodiff/adam.hpp"
#include "dcpg/harness/model.hpp"
#include "dcpg/losses.hpp"
#include "dcpg/rewards.hpp"

namespace dcpg {

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t step, const std::string& what)
      : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                           ": " + what),
        epoch_(epoch),
        step_(step) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }

 private:
  std::size_t epoch_, step_;
};

struct EvalResult {
  double i2t_r1 = 0, i2t_r5 = 0, i2t_r10 = 0;
  double t2i_r1 = 0, t2i_r5 = 0, t2i_r10 = 0;

  double r1_sum() const { return i2t_r1 + t2i_r1; }
  double rsum() const { return i2t_r1 + i2t_r5 + i2t_r10 + t2i_r1 + t2i_r5 + t2i_r10; }

  nlohmann::json to_json() const {
    return {{"i2t_r1", i2t_r1}, {"i2t_r5", i2t_r5}, {"i2t_r10", i2t_r10},
            {"t2i_r1", t2i_r1}, {"t2i_r5", t2i_r5}, {"t2i_r10", t2i_r10}};
  }

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

inline EvalResult recall_report(const SimilarityMatrix& s) {
  EvalResult r;
  r.i2t_r1 = recall_at_k(s, 1, Direction::image_to_text);
  r.i2t_r5 = recall_at_k(s, 5, Direction::image_to_text);
  r.i2t_r10 = recall_at_k(s, 10, Direction::image_to_text);
  r.t2i_r1 = recall_at_k(s, 1, Direction::text_to_image);
  r.t2i_r5 = recall_at_k(s, 5, Direction::text_to_image);
  r.t2i_r10 = recall_at_k(s, 10, Direction::text_to_image);
  return r;
}

// Full-split retrieval with deterministic attention.
inline EvalResult evaluate(const Model& m, const Split& split) {
  if (split.size() < 10) {
    throw std::invalid_argument("evaluate: split of " + std::to_string(split.size()) + " instances is smaller than K=10");
  }
  if (split.dim() != m.config.region_dim || split.regions != m.config.regions || split.length() != m.config.tokens) {
    throw ShapeError("evaluate: dataset dimensions do not match the model configuration");
  }
  std::vector<std::size_t> all(split.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  Encoded enc = encode(m, make_batch(split, all), RolloutMode::deterministic, nullptr);
  return recall_report(SimilarityMatrix{enc.similarity.value()});
}

// Line-delimited structured records; `wall_time` fields are excluded from the
// canonical text so logs of identical runs compare equal.
class MetricLog {
 public:
  void append(nlohmann::json record) { records_.push_back(std::move(record)); }
  const std::vector<nlohmann::json>& records() const { return records_; }

  std::vector<nlohmann::json> of_kind(const std::string& kind) const {
    std::vector<nlohmann::json> out;
    for (const auto& r : records_) {
      if (r.value("kind", "") == kind) out.push_back(r);
    }
    return out;
  }

  std::string to_jsonl(bool include_wall_time = true) const {
    std::string out;
    for (auto r : records_) {
      if (!include_wall_time) r.erase("wall_time");
      out += r.dump() + "\n";
    }
    return out;
  }

 private:
  std::vector<nlohmann::json> records_;
};

// The training objective on one batch, built on the current tape.
struct Objective {
  Var total;
  LossBundle losses;
  std::vector<RewardRecord> rewards;
  double mean_reward = 0.0;
  Encoded encoded;
};

inline Objective build_objective(const Model& m, const Batch& batch, Rng& rng, const HeldSamples* held = nullptr) {
  const ModelConfig& cfg = m.config;
  Objective out;
  out.encoded = encode(m, batch, RolloutMode::stochastic, &rng, held);
  const Encoded& enc = out.encoded;

  out.rewards = instance_rewards(SimilarityMatrix{enc.similarity.value()}, cfg.reward);
  pg_baseline(out.rewards, cfg.effective_beta());
  std::vector<double> advantages;
  for (const auto& r : out.rewards) {
    advantages.push_back(r.advantage);
    out.mean_reward += r.reward;
  }
  out.mean_reward /= static_cast<double>(out.rewards.size());

  LossTerms terms;
  if (cfg.triplet) terms.triplet = triplet_loss(enc.similarity, cfg.margin);
  if (cfg.instance) {
    std::vector<std::size_t> labels = batch.labels;
    labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
    terms.instance = instance_loss(concat({enc.image, enc.text}, 0), labels, m.classifier);
  }
  if (cfg.decode) {
    terms.decode_image = text_decoding_loss(enc.image, batch.tokens, m.decoder);
    terms.decode_text = text_decoding_loss(enc.text, batch.tokens, m.decoder);
  }
  if (cfg.pg != PgMode::off) {
    const bool mean = !cfg.pg_batch_sum;
    if (uses_discrete(cfg.pg)) {
      terms.pg_discrete_image = discrete_pg_loss(*enc.image_trace, advantages, mean);
      terms.pg_discrete_text = discrete_pg_loss(*enc.text_trace, advantages, mean);
    }
    if (uses_continuous(cfg.pg)) {
      terms.pg_continuous_image = continuous_pg_loss(*enc.image_trace, advantages, mean);
      terms.pg_continuous_text = continuous_pg_loss(*enc.text_trace, advantages, mean);
    }
  }
  std::tie(out.total, out.losses) = total_loss(terms);
  return out;
}

struct StepOutcome {
  LossBundle losses;
  double mean_reward = 0.0;
  std::vector<RewardRecord> rewards;
};

// One optimisation step: objective, backward, Adam update. A non-finite
// total is returned without touching the parameters.
inline StepOutcome training_step(Model& m, Adam& optimizer, const Batch& batch, Rng& rng) {
  Tape tape;
  Tape::Scope scope(tape);
  Objective obj = build_objective(m, batch, rng);
  StepOutcome out{obj.losses, obj.mean_reward, std::move(obj.rewards)};
  if (!std::isfinite(out.losses.total)) return out;
  if (obj.total.requires_grad()) {
    tape.backward(obj.total);
    optimizer.step();
  }
  return out;
}

// Batches of distinct classes: each round of the training split is one
// instance per class; rounds and classes are shuffled per epoch.
inline std::vector<std::vector<std::size_t>> epoch_batches(const Split& train, std::size_t classes, std::size_t batch,
                                                           Rng& rng) {
  const std::size_t rounds = train.size() / classes;
  std::vector<std::size_t> round_order(rounds);
  std::iota(round_order.begin(), round_order.end(), std::size_t{0});
  std::shuffle(round_order.begin(), round_order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t r : round_order) {
    std::vector<std::size_t> cls(classes);
    std::iota(cls.begin(), cls.end(), std::size_t{0});
    std::shuffle(cls.begin(), cls.end(), rng);
    for (std::size_t start = 0; start + 1 < classes; start += batch) {
      std::vector<std::size_t> idx;
      for (std::size_t k = start; k < std::min(classes, start + batch); ++k) idx.push_back(r * classes + cls[k]);
      if (idx.size() >= 2) out.push_back(std::move(idx));
    }
  }
  return out;
}

struct TrainResult {
  MetricLog log;
  Snapshot best;
  Snapshot final_params;
  std::size_t best_epoch = 0;
  EvalResult best_val;
};

struct TrainHooks {
  std::function<void(const nlohmann::json&)> on_record;
};

// Trains `m` in place and leaves it holding the best-validation parameters.
inline TrainResult train(Model& m, const SyntheticDataset& data, const TrainHooks& hooks = {}) {
  const ModelConfig& cfg = m.config;
  cfg.validate();
  if (data.train.size() % cfg.classes != 0 || data.spec.classes != cfg.classes) {
    throw ConfigError("train: dataset classes do not match the configuration");
  }
  if (data.spec.dim != cfg.region_dim || data.spec.regions != cfg.regions || data.spec.tokens != cfg.tokens ||
      data.spec.vocab != cfg.vocab) {
    throw ConfigError("train: dataset dimensions do not match the configuration");
  }
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - start).count(); };

  Rng rng(cfg.seed);
  Adam optimizer(m.trainable(), AdamOptions{cfg.lr});
  TrainResult result;
  double best_score = -1.0;
  std::size_t global_step = 0;

  auto emit = [&](nlohmann::json rec) {
    if (cfg.wall_time) rec["wall_time"] = elapsed();
    if (hooks.on_record) hooks.on_record(rec);
    result.log.append(std::move(rec));
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    optimizer.set_lr(epoch > cfg.lr_drop_epoch ? cfg.lr_after : cfg.lr);
    std::array<double, 9> sums{};
    double reward_sum = 0.0;
    const auto batches = epoch_batches(data.train, cfg.classes, cfg.batch, rng);
    for (const auto& idx : batches) {
      ++global_step;
      StepOutcome step = training_step(m, optimizer, make_batch(data.train, idx), rng);
      const auto vals = step.losses.values();
      if (!std::isfinite(step.losses.total)) {
        throw TrainingDiverged(epoch, global_step, "loss bundle " + nlohmann::json(vals).dump());
      }
      nlohmann::json rec{{"kind", "step"}, {"epoch", epoch}, {"step", global_step}, {"reward", step.mean_reward}};
      for (std::size_t i = 0; i < vals.size(); ++i) rec[LossBundle::kNames[i]] = vals[i];
      emit(rec);
      for (std::size_t i = 0; i < vals.size(); ++i) sums[i] += vals[i];
      reward_sum += step.mean_reward;
    }
    const double nb = static_cast<double>(batches.size());
    nlohmann::json train_rec{{"kind", "train"}, {"epoch", epoch}, {"step", global_step}, {"reward", reward_sum / nb},
                             {"lr", optimizer.lr()}};
    for (std::size_t i = 0; i < sums.size(); ++i) train_rec[LossBundle::kNames[i]] = sums[i] / nb;
    emit(train_rec);

    const EvalResult val = evaluate(m, data.val);
    nlohmann::json eval_rec = val.to_json();
    eval_rec["kind"] = "eval";
    eval_rec["split"] = "val";
    eval_rec["epoch"] = epoch;
    eval_rec["step"] = global_step;
    emit(eval_rec);
    if (val.r1_sum() > best_score) {
      best_score = val.r1_sum();
      result.best = Snapshot::take(m);
      result.best_epoch = epoch;
      result.best_val = val;
    }
  }
  result.final_params = Snapshot::take(m);
  result.best.restore(m);
  return result;
}

}  // namespace dcpg
