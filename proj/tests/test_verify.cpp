#include <gtest/gtest.h>

#include "dcpg/verify.hpp"

using namespace dcpg;

class VerifySuite : public ::testing::TestWithParam<std::string> {};

TEST_P(VerifySuite, EveryCheckPasses) {
  const auto results = run_verify({GetParam()});
  EXPECT_FALSE(results.empty());
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.suite << "/" << r.name << ": " << r.detail;
}

INSTANTIATE_TEST_SUITE_P(Suites, VerifySuite, ::testing::ValuesIn(verify_suite_names()));

TEST(Verify, UnknownSuiteListsKnownOnes) {
  try {
    run_verify({"gradients"});
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("gradients"), std::string::npos);
    EXPECT_NE(msg.find("gradcheck"), std::string::npos);
  }
}

TEST(Verify, AllExpandsToEverySuite) {
  std::size_t expected = 0;
  for (const auto& s : verify_suite_names()) expected += verify_suite(s).size();
  std::size_t streamed = 0;
  const auto results = run_verify({"baseline", "all"}, [&](const CheckResult&) { ++streamed; });
  EXPECT_EQ(results.size(), expected + verify_suite("baseline").size());
  EXPECT_EQ(streamed, results.size());
}

TEST(Verify, GradCasesCoverTheCompositeLoss) {
  for (std::size_t heads : {1u, 2u}) {
    const GradCase c = composite_gradcheck_case(heads);
    EXPECT_LT(grad_check(c.f, c.inputs), kGradTolerance) << c.name;
  }
}

TEST(Verify, BanditGradientIsUnbiased) {
  const auto g = bandit_gradient({-1.0, 0.0, 1.0}, {1.0, 0.5, 0.0}, 100000, 7);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g.sampled[i], g.analytic[i], 0.05 * std::abs(g.analytic[i]));
}
