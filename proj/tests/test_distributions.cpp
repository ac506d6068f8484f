#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "dcpg/distributions.hpp"

using namespace dcpg;

TEST(Gumbel, DominantLogitGivesNearOneHot) {
  Rng rng(1);
  const Var logits = constant(Tensor::vector({10, -10, -10}));
  for (int i = 0; i < 1000; ++i) {
    const Tensor y = gumbel_softmax(logits, 1.0, rng).value();
    ASSERT_GT(y[0], 0.99) << "draw " << i;
  }
}

TEST(Gumbel, UniformLogitsGiveUniformArgmax) {
  Rng rng(2);
  const Var logits = constant(Tensor::vector({0.7, 0.7, 0.7}));
  const int n = 100000;
  std::vector<int> counts(3, 0);
  for (int i = 0; i < n; ++i) ++counts[argmax(gumbel_softmax(logits, 0.5, rng).value().values())];
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / n, 1.0 / 3.0, 0.01);
}

TEST(Gumbel, ArgmaxFrequenciesFollowSoftmax) {
  Rng rng(3);
  const std::vector<double> l = {1.0, 0.0, -0.5, 2.0};
  double z = 0;
  for (double v : l) z += std::exp(v);
  const int n = 200000;
  std::vector<int> counts(l.size(), 0);
  for (int i = 0; i < n; ++i) {
    const Tensor g = gumbel_noise(Shape{l.size()}, rng);
    std::vector<double> perturbed(l.size());
    for (std::size_t k = 0; k < l.size(); ++k) perturbed[k] = l[k] + g[k];
    ++counts[argmax(perturbed)];
  }
  for (std::size_t k = 0; k < l.size(); ++k) EXPECT_NEAR(static_cast<double>(counts[k]) / n, std::exp(l[k]) / z, 0.005);
}

TEST(Gumbel, RowsStayOnSimplex) {
  Rng rng(4);
  const Var logits = constant(Tensor::matrix({{3, -1, 0, 2}, {0, 0, 0, 0}, {-50, 50, 0, 1}}));
  for (double tau : {0.1, 1.0, 5.0}) {
    const Tensor y = gumbel_softmax(logits, tau, rng).value();
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (double v : y.row(r)) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
  EXPECT_THROW(gumbel_softmax(logits, 0.0, rng), ParameterError);
}

TEST(Categorical, TwoOutcomeFrequencies) {
  Rng rng(5);
  const std::vector<double> p = {0.25, 0.75};
  const int n = 200000;
  int ones = 0;
  for (int i = 0; i < n; ++i) ones += categorical_sample(p, rng) == 1;
  EXPECT_NEAR(static_cast<double>(ones) / n, 0.75, 0.003);
}

TEST(Categorical, UniformOverOneHundred) {
  Rng rng(6);
  const std::vector<double> p(100, 0.01);
  const int n = 200000;
  std::vector<int> counts(100, 0);
  for (int i = 0; i < n; ++i) ++counts[categorical_sample(p, rng)];
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / n, 0.01, 0.003);
}

TEST(Categorical, ZeroMassIsNeverDrawn) {
  Rng rng(7);
  const std::vector<double> p = {0.0, 0.5, 0.0, 0.5, 0.0};
  for (int i = 0; i < 10000; ++i) {
    const auto k = categorical_sample(p, rng);
    ASSERT_TRUE(k == 1 || k == 3);
  }
}

TEST(Categorical, RejectsInvalidProbabilities) {
  Rng rng(8);
  EXPECT_THROW(categorical_sample(std::vector<double>{0.5, 0.6}, rng), ParameterError);
  EXPECT_THROW(categorical_sample(std::vector<double>{-0.1, 1.1}, rng), ParameterError);
  EXPECT_THROW(categorical_sample(std::vector<double>{}, rng), ParameterError);
}

TEST(Categorical, LogProbabilityClosedForms) {
  EXPECT_NEAR(discrete_logprob(std::vector<double>{0.5, 0.5}, 1), std::log(0.5), 1e-15);
  EXPECT_NEAR(discrete_logprob(std::vector<double>(100, 0.01), 42), std::log(0.01), 1e-15);
  EXPECT_THROW(discrete_logprob(std::vector<double>{1.0, 0.0}, 1), DomainError);
  EXPECT_THROW(discrete_logprob(std::vector<double>{1.0}, 3), ParameterError);
}

TEST(ActionMap, LabelToMean) {
  EXPECT_EQ(action_to_mu(0, 100), 0.5);
  EXPECT_NEAR(action_to_mu(100, 100), 0.7311, 1e-4);
  EXPECT_NEAR(action_to_mu(50, 100), 0.6225, 1e-4);
  EXPECT_NEAR(action_to_mu(100, 100), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_THROW(action_to_mu(101, 100), ParameterError);
}

TEST(ActionMap, MeanIsMonotoneInLabel) {
  for (std::size_t i = 0; i < 100; ++i) EXPECT_LT(action_to_mu(i, 100), action_to_mu(i + 1, 100));
}

TEST(ActionMap, StraightThroughForwardIsHardLabel) {
  Var probs = Var::parameter(Tensor::matrix({{0.2, 0.3, 0.5}, {0.6, 0.3, 0.1}}));
  Tape tape;
  Tape::Scope scope(tape);
  Var label = straight_through(std::vector<std::size_t>{2, 0}, probs, 2);
  EXPECT_EQ(label.value(), Tensor::matrix({{1.0}, {0.0}}));
  tape.backward(sum(label));
  // d/dp of the relaxed expectation sum_i (i/n) p_i is the ramp i/n.
  EXPECT_EQ(probs.grad(), Tensor::matrix({{0, 0.5, 1}, {0, 0.5, 1}}));
}

TEST(ActionMap, RelaxedLabelIsExpectation) {
  const Tensor v = relaxed_label(constant(Tensor::matrix({{0.2, 0.3, 0.5}})), 2).value();
  EXPECT_NEAR(v.item(), 0.3 * 0.5 + 0.5 * 1.0, 1e-15);
}

TEST(Normal, ReparameterizedMoments) {
  Rng rng(9);
  const int n = 100000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = normal_sample_reparam(0.0, 1.0, rng);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.03);
}

TEST(Normal, ReparameterizedTensorMatchesFormula) {
  Var mu = Var::parameter(Tensor::vector({0.5, -1.0}));
  Var sigma = Var::parameter(Tensor::vector({2.0, 0.1}));
  const Tensor eps = Tensor::vector({0.3, -1.5});
  Tape tape;
  Tape::Scope scope(tape);
  Var x = normal_sample_reparam(mu, sigma, eps);
  EXPECT_NEAR(x.value()[0], 1.1, 1e-15);
  EXPECT_NEAR(x.value()[1], -1.15, 1e-15);
  tape.backward(sum(x));
  EXPECT_EQ(mu.grad(), Tensor::vector({1, 1}));
  EXPECT_EQ(sigma.grad(), eps);
}

TEST(Normal, LogDensityClosedForms) {
  EXPECT_NEAR(normal_logprob(0.0, 0.0, 1.0), -0.9189385332, 1e-10);
  const double mu = 0.3, sigma = 0.7;
  EXPECT_NEAR(normal_logprob(mu + sigma, mu, sigma), -0.9189385332 - std::log(sigma) - 0.5, 1e-10);
  EXPECT_THROW(normal_logprob(0.0, 0.0, 0.0), ParameterError);
  EXPECT_THROW(normal_logprob(constant(Tensor::scalar(0)), constant(Tensor::scalar(0)), constant(Tensor::scalar(-1))),
               ParameterError);
}

TEST(Normal, DensityIntegratesToOne) {
  for (auto [mu, sigma] : {std::pair{0.0, 1.0}, std::pair{0.6, 0.05}, std::pair{-2.0, 3.0}}) {
    const int steps = 20000;
    const double lo = mu - 8 * sigma, hi = mu + 8 * sigma, h = (hi - lo) / steps;
    double total = 0;
    for (int i = 0; i <= steps; ++i) {
      const double w = (i == 0 || i == steps) ? 0.5 : 1.0;
      total += w * std::exp(normal_logprob(lo + i * h, mu, sigma));
    }
    EXPECT_NEAR(total * h, 1.0, 1e-6) << "mu " << mu << " sigma " << sigma;
  }
}

TEST(Normal, TensorAndScalarLogDensityAgree) {
  const Tensor v = normal_logprob(constant(Tensor::vector({0.1, 2.0})), constant(Tensor::vector({0.0, 1.5})),
                                  constant(Tensor::vector({1.0, 0.4})))
                       .value();
  EXPECT_NEAR(v[0], normal_logprob(0.1, 0.0, 1.0), 1e-14);
  EXPECT_NEAR(v[1], normal_logprob(2.0, 1.5, 0.4), 1e-14);
}
