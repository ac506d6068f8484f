#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "dcpg/rewards.hpp"

using namespace dcpg;

namespace {

// Reference rank by explicit sort on (score desc, index asc).
std::size_t sorted_rank(const std::vector<double>& scores, std::size_t relevant) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), relevant) - order.begin()) + 1;
}

SimilarityMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  return SimilarityMatrix{Tensor::matrix(rows)};
}

}  // namespace

TEST(Rewards, IdentityGivesFullReward) {
  const SimilarityMatrix s{Tensor::identity(5)};
  for (const auto& r : instance_rewards(s)) {
    EXPECT_EQ(r.r_at_1, 1.0);
    EXPECT_EQ(r.ap, 1.0);
    EXPECT_EQ(r.reward, 2.0);
  }
  EXPECT_EQ(recall_at_k(s, 1, Direction::image_to_text), 1.0);
}

TEST(Rewards, AntiDiagonalNeverRetrievesFirst) {
  const std::size_t k = 6;
  Tensor t(Shape{k, k});
  for (std::size_t i = 0; i < k; ++i) t.at(i, k - 1 - i) = 1.0;
  const SimilarityMatrix s{t};
  const auto recs = instance_rewards(s, RewardMode::ap);
  for (std::size_t q = 0; q < k; ++q) {
    EXPECT_EQ(recall_at_1(s, q, Direction::image_to_text), 0.0);
    EXPECT_EQ(recall_at_1(s, q, Direction::text_to_image), 0.0);
    const double ap_i2t = 1.0 / sorted_rank(query_scores(s, q, Direction::image_to_text), q);
    const double ap_t2i = 1.0 / sorted_rank(query_scores(s, q, Direction::text_to_image), q);
    EXPECT_DOUBLE_EQ(recs[q].reward, 0.5 * (ap_i2t + ap_t2i));
  }
}

TEST(Rewards, FiveGalleryAveragePrecisionMean) {
  // Query q sees its match at rank q + 1.
  const SimilarityMatrix s = from_rows({{0.9, 0.1, 0.1, 0.1, 0.1},
                                        {0.9, 0.8, 0.1, 0.1, 0.1},
                                        {0.9, 0.8, 0.7, 0.1, 0.1},
                                        {0.9, 0.8, 0.7, 0.6, 0.1},
                                        {0.9, 0.8, 0.7, 0.6, 0.5}});
  double total = 0;
  for (std::size_t q = 0; q < 5; ++q) {
    EXPECT_EQ(rank_of(query_scores(s, q, Direction::image_to_text), q), q + 1);
    total += average_precision(s, q, Direction::image_to_text);
  }
  EXPECT_NEAR(total / 5, 0.4567, 1e-4);
}

TEST(Rewards, TiesFavourLowerIndex) {
  const std::vector<double> scores = {0.5, 0.5, 0.5};
  EXPECT_EQ(rank_of(scores, 0), 1u);
  EXPECT_EQ(rank_of(scores, 1), 2u);
  EXPECT_EQ(rank_of(scores, 2), 3u);
}

TEST(Rewards, RankAgreesWithSortOracle) {
  std::mt19937_64 g(1);
  std::uniform_int_distribution<int> coarse(0, 3);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> scores(7);
    for (auto& v : scores) v = coarse(g) * 0.25;
    for (std::size_t q = 0; q < scores.size(); ++q) {
      ASSERT_EQ(rank_of(scores, q), sorted_rank(scores, q));
      ASSERT_DOUBLE_EQ(average_precision(scores, q), 1.0 / sorted_rank(scores, q));
    }
  }
}

TEST(Rewards, MetricPropertiesOnRandomMatrices) {
  std::mt19937_64 g(2);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 200; ++trial) {
    Tensor t(Shape{10, 10});
    for (auto& v : t.values()) v = n(g);
    const SimilarityMatrix s{t};
    for (auto dir : {Direction::image_to_text, Direction::text_to_image}) {
      double prev = 0;
      for (std::size_t k = 1; k <= 10; ++k) {
        const double r = recall_at_k(s, k, dir);
        ASSERT_GE(r, prev);
        prev = r;
      }
      ASSERT_EQ(prev, 1.0);
      for (std::size_t q = 0; q < 10; ++q) {
        const double ap = average_precision(s, q, dir);
        ASSERT_GT(ap, 0.0);
        ASSERT_LE(ap, 1.0);
        ASSERT_EQ(ap == 1.0, recall_at_1(s, q, dir) == 1.0);
      }
    }
  }
}

TEST(Rewards, ModesCombine) {
  EXPECT_EQ(combine_reward(1.0, 0.5, RewardMode::r_at_1), 1.0);
  EXPECT_EQ(combine_reward(1.0, 0.5, RewardMode::ap), 0.5);
  EXPECT_EQ(combine_reward(1.0, 0.5, RewardMode::r_at_1_plus_ap), 1.5);
}

TEST(Rewards, SimilarityMatrixIsDotProduct) {
  const SimilarityMatrix s = similarity_matrix(Tensor::matrix({{1, 0}, {0, 2}}), Tensor::matrix({{3, 4}, {5, 6}}));
  EXPECT_EQ(s.values, Tensor::matrix({{3, 5}, {8, 12}}));
  EXPECT_THROW(similarity_matrix(Tensor(Shape{2, 2}), Tensor(Shape{3, 2})), ShapeError);
}

TEST(Rewards, RecallRejectsSmallGallery) {
  EXPECT_THROW(recall_at_k(SimilarityMatrix{Tensor::identity(4)}, 5, Direction::image_to_text), std::invalid_argument);
}

TEST(Baseline, LeaveOneOutExample) {
  std::vector<double> baselines;
  const auto adv = pg_baseline(std::vector<double>{1, 2, 3}, 0.5, &baselines);
  EXPECT_EQ(baselines, (std::vector<double>{2.5, 2.0, 1.5}));
  EXPECT_EQ(adv, (std::vector<double>{-0.25, 1.0, 2.25}));
}

TEST(Baseline, ZeroBetaKeepsRewards) {
  const std::vector<double> r = {0.3, -1.0, 4.0, 2.0};
  EXPECT_EQ(pg_baseline(r, 0.0), r);
}

TEST(Baseline, IdenticalRewardsScaleByOneMinusBeta) {
  for (double beta : {0.0, 0.5, 1.0}) {
    for (double a : pg_baseline(std::vector<double>(5, 1.5), beta)) EXPECT_DOUBLE_EQ(a, (1 - beta) * 1.5);
  }
}

TEST(Baseline, FullBetaAdvantagesSumToZeroScaled) {
  // With beta = 1, sum_k (r_k - (S - r_k)/(K-1)) = S - S = 0.
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> r(2 + trial % 9);
    for (auto& v : r) v = u(g);
    const auto adv = pg_baseline(r, 1.0);
    EXPECT_NEAR(std::accumulate(adv.begin(), adv.end(), 0.0), 0.0, 1e-12);
  }
}

TEST(Baseline, MatchesDirectLeaveOneOutMean) {
  std::mt19937_64 g(4);
  std::uniform_real_distribution<double> u(0, 2);
  std::vector<double> r(8);
  for (auto& v : r) v = u(g);
  std::vector<double> baselines;
  pg_baseline(r, 0.5, &baselines);
  for (std::size_t k = 0; k < r.size(); ++k) {
    double s = 0;
    for (std::size_t j = 0; j < r.size(); ++j)
      if (j != k) s += r[j];
    EXPECT_NEAR(baselines[k], s / 7.0, 1e-14);
  }
}

TEST(Baseline, SingleInstanceIsAnError) {
  EXPECT_THROW(pg_baseline(std::vector<double>{1.0}, 0.5), std::invalid_argument);
}
