#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcpg/autodiff/tensor.hpp"

namespace dcpg {

enum class RewardMode { r_at_1, ap, r_at_1_plus_ap };

enum class Direction { image_to_text, text_to_image };

// K x K cosine similarities; rows are images, columns are texts and the
// diagonal holds the matching pairs. Values are plain numbers, never part of
// the differentiable graph.
struct SimilarityMatrix {
  Tensor values;

  std::size_t size() const { return values.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return values.at(i, j); }
};

struct RewardRecord {
  double r_at_1 = 0.0;
  double ap = 0.0;
  double reward = 0.0;
  double baseline = 0.0;
  double advantage = 0.0;
};

inline SimilarityMatrix similarity_matrix(const Tensor& images, const Tensor& texts) {
  if (images.rows() != texts.rows()) {
    throw ShapeError("similarity_matrix: " + std::to_string(images.rows()) + " images vs " +
                     std::to_string(texts.rows()) + " texts");
  }
  if (images.cols() != texts.cols()) throw ShapeError("similarity_matrix: embedding widths differ");
  const std::size_t k = images.rows(), d = images.cols();
  SimilarityMatrix s{Tensor(Shape{k, k})};
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += images.at(i, c) * texts.at(j, c);
      s.values.at(i, j) = dot;
    }
  return s;
}

// 1-based rank of `relevant` among `scores` sorted by descending score, ties
// resolved in favour of the lower index.
inline std::size_t rank_of(std::span<const double> scores, std::size_t relevant) {
  const double target = scores[relevant];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > target || (scores[j] == target && j < relevant)) ++rank;
  }
  return rank;
}

inline std::vector<double> query_scores(const SimilarityMatrix& s, std::size_t query, Direction dir) {
  const std::size_t k = s.size();
  if (query >= k) throw std::out_of_range("query index " + std::to_string(query) + " outside gallery of " + std::to_string(k));
  std::vector<double> row(k);
  for (std::size_t j = 0; j < k; ++j) row[j] = dir == Direction::image_to_text ? s(query, j) : s(j, query);
  return row;
}

inline double recall_at_1(const SimilarityMatrix& s, std::size_t query, Direction dir = Direction::image_to_text) {
  const auto scores = query_scores(s, query, dir);
  return rank_of(scores, query) == 1 ? 1.0 : 0.0;
}

// Single relevant item: AP collapses to 1 / rank.
inline double average_precision(std::span<const double> scores, std::size_t relevant) {
  if (relevant >= scores.size()) throw std::out_of_range("average_precision: relevant index out of range");
  return 1.0 / static_cast<double>(rank_of(scores, relevant));
}

inline double average_precision(const SimilarityMatrix& s, std::size_t query, Direction dir = Direction::image_to_text) {
  const auto scores = query_scores(s, query, dir);
  return average_precision(scores, query);
}

inline double combine_reward(double r1, double ap, RewardMode mode) {
  switch (mode) {
    case RewardMode::r_at_1: return r1;
    case RewardMode::ap: return ap;
    case RewardMode::r_at_1_plus_ap: return r1 + ap;
  }
  return r1 + ap;
}

// Per-instance reward from both retrieval directions, averaged. Baseline and
// advantage are left for pg_baseline.
inline std::vector<RewardRecord> instance_rewards(const SimilarityMatrix& s,
                                                  RewardMode mode = RewardMode::r_at_1_plus_ap) {
  const std::size_t k = s.size();
  std::vector<RewardRecord> out(k);
  for (std::size_t q = 0; q < k; ++q) {
    const double r1 = 0.5 * (recall_at_1(s, q, Direction::image_to_text) + recall_at_1(s, q, Direction::text_to_image));
    const double ap =
        0.5 * (average_precision(s, q, Direction::image_to_text) + average_precision(s, q, Direction::text_to_image));
    out[q].r_at_1 = r1;
    out[q].ap = ap;
    out[q].reward = combine_reward(r1, ap, mode);
    out[q].advantage = out[q].reward;
  }
  return out;
}

// Leave-one-out batch baseline b_k = mean of the other rewards, and
// advantage_k = reward_k - beta * b_k.
inline void pg_baseline(std::vector<RewardRecord>& records, double beta = 0.5) {
  const std::size_t k = records.size();
  if (k < 2) throw std::invalid_argument("pg_baseline: batch needs at least 2 instances, got " + std::to_string(k));
  double total = 0.0;
  for (const auto& r : records) total += r.reward;
  for (auto& r : records) {
    r.baseline = (total - r.reward) / static_cast<double>(k - 1);
    r.advantage = r.reward - beta * r.baseline;
  }
}

inline std::vector<double> pg_baseline(std::span<const double> rewards, double beta, std::vector<double>* baselines = nullptr) {
  std::vector<RewardRecord> records(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) records[i].reward = rewards[i];
  pg_baseline(records, beta);
  std::vector<double> adv;
  adv.reserve(records.size());
  if (baselines) baselines->clear();
  for (const auto& r : records) {
    adv.push_back(r.advantage);
    if (baselines) baselines->push_back(r.baseline);
  }
  return adv;
}

// Fraction of queries whose match ranks within the top `k`.
inline double recall_at_k(const SimilarityMatrix& s, std::size_t k, Direction dir) {
  const std::size_t n = s.size();
  if (n < k) {
    throw std::invalid_argument("recall_at_k: gallery of " + std::to_string(n) + " is smaller than K=" + std::to_string(k));
  }
  std::size_t hits = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const auto scores = query_scores(s, q, dir);
    if (rank_of(scores, q) <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace dcpg
