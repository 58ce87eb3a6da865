#include "mucald/validation.hpp"

#include <gtest/gtest.h>

using namespace mucald;

TEST(GradCheckSuite, EveryCheckPasses) {
  for (std::uint64_t seed : {1u, 2u}) {
    const auto r = grad_check_suite(seed);
    EXPECT_GE(r.size(), 18u);
    for (const auto& c : r) EXPECT_TRUE(c.pass()) << c.name << " " << c.error;
  }
}

TEST(MetricsOracleSuite, AgreesWithBruteForce) {
  const auto r = metrics_oracle_suite(3, 40);
  ASSERT_EQ(r.size(), 10u);
  for (const auto& c : r) EXPECT_LT(c.error, kOracleTolerance) << c.name;
  EXPECT_TRUE(all_pass(r));
}

TEST(Format, OneLinePerCheck) {
  const std::vector<CheckResult> r = {{"a", 0.5, 1.0}, {"b", 2.0, 1.0}};
  const std::string s = format_results(r);
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 2);
  EXPECT_NE(s.find("FAIL"), std::string::npos);
  EXPECT_FALSE(all_pass(r));
}
