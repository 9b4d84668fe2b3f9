#include <gtest/gtest.h>

#include <cmath>

#include "dog/errors.hpp"
#include "dog/schedule.hpp"

using namespace dog;

TEST(LinearSchedule, ConstantBetaByHand) {
  const auto s = make_linear_schedule(2, 0.1, 0.1);
  ASSERT_EQ(s.T(), 2);
  EXPECT_DOUBLE_EQ(s.beta(1), 0.1);
  EXPECT_DOUBLE_EQ(s.beta(2), 0.1);
  EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bar(2), 0.81, 1e-15);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
}

TEST(LinearSchedule, AlphaBarMatchesProductOracle) {
  const int T = 1000;
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / (T - 1.0));
  const auto s = make_linear_schedule(T, 1e-4, 0.02);
  EXPECT_NEAR(s.alpha_bar(T), prod, 1e-12 * prod);
  for (int t = 2; t <= T; ++t) ASSERT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
}

TEST(LinearSchedule, RejectsBadInputs) {
  EXPECT_THROW(make_linear_schedule(2, 0.5, 0.1), ConfigError);
  EXPECT_THROW(make_linear_schedule(0, 0.1, 0.1), ConfigError);
  EXPECT_THROW(make_linear_schedule(10, 0.0, 0.1), ConfigError);
  EXPECT_THROW(make_linear_schedule(10, 0.1, 1.0), ConfigError);
  try {
    make_linear_schedule(2, 0.5, 0.1);
  } catch (const ConfigError& e) {
    EXPECT_FALSE(e.field().empty());
  }
}

TEST(LinearSchedule, TimestepOutOfRange) {
  const auto s = make_linear_schedule(10, 1e-4, 0.02);
  EXPECT_THROW(s.beta(0), DomainError);
  EXPECT_THROW(s.alpha_bar(11), DomainError);
}

TEST(Triangular, HandValues) {
  TriangularSchedule tri{1000, 700, 1.0};
  EXPECT_EQ(gamma(tri, 0), 0.0);
  EXPECT_EQ(gamma(tri, 700), 1.0);
  EXPECT_EQ(gamma(tri, 850), 0.5);
  EXPECT_EQ(gamma(tri, 350), 0.5);
  EXPECT_EQ(gamma(tri, 1000), 0.0);
  EXPECT_THROW(gamma(tri, -1), DomainError);
  EXPECT_THROW(gamma(tri, 1001), DomainError);
}

TEST(Triangular, GuidanceScale) {
  EXPECT_EQ(guidance_scale_at(TriangularSchedule{1000, 700, 20.0}, 700), 20.0);
  EXPECT_EQ(guidance_scale_at(TriangularSchedule{1000, 700, 30.0}, 0), 0.0);
  EXPECT_EQ(guidance_scale_at(TriangularSchedule{1000, 700, 10.0}, 850), 5.0);
}

TEST(Triangular, PeakValidation) {
  EXPECT_THROW((TriangularSchedule{1000, 0, 1.0}.validate()), ConfigError);
  EXPECT_THROW((TriangularSchedule{1000, 1000, 1.0}.validate()), ConfigError);
  EXPECT_NO_THROW((TriangularSchedule{1000, 200, 1.0}.validate()));
}
