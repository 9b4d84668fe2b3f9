#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dog/guidance.hpp"

using namespace dog;

namespace {
Vec v2(double a, double b) { return Vec(Eigen::Vector2d(a, b)); }

Vec randn(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(d);
  for (int i = 0; i < d; ++i) v[i] = n(rng);
  return v;
}

GuidanceConfig constant_g(double g) {
  GuidanceConfig cfg;
  cfg.gs = g;
  cfg.schedule_on = false;
  return cfg;
}
}  // namespace

TEST(Projection, HandCases) {
  EXPECT_EQ(project_onto(v2(3, 4), v2(1, 0)), v2(3, 0));
  EXPECT_EQ(project_onto(v2(2, 0), v2(1, 0)), v2(2, 0));
  EXPECT_EQ(project_onto(v2(0, 2), v2(1, 1)), v2(1, 1));
  EXPECT_EQ(project_onto(v2(3, 4), v2(0, 0)), v2(0, 0));
}

TEST(Orthogonal, HandCases) {
  EXPECT_EQ(orthogonal_component(v2(3, 4), v2(1, 0)), v2(0, 4));
  EXPECT_EQ(orthogonal_component(v2(2, 0), v2(1, 0)), v2(0, 0));
}

TEST(Orthogonal, RandomPairsAreOrthogonal) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10000; ++i) {
    const Vec p = randn(rng, 64), n = randn(rng, 64);
    const Vec s = orthogonal_component(n, p);
    ASSERT_LE(std::abs(s.dot(p)), 1e-10 * s.norm() * p.norm());
  }
}

TEST(Orthogonal, ShapeMismatch) { EXPECT_THROW(project_onto(Vec::Zero(2), Vec::Zero(3)), DomainError); }

TEST(Clip, HandCases) {
  EXPECT_EQ(clip_norm(v2(3, 4), 5.0), v2(3, 4));
  const Vec c = clip_norm(v2(3, 4), 1.0);
  EXPECT_NEAR(c[0], 0.6, 1e-15);
  EXPECT_NEAR(c[1], 0.8, 1e-15);
  EXPECT_EQ(clip_norm(v2(0, 0), 10.0), v2(0, 0));
  EXPECT_THROW(clip_norm(v2(1, 1), 0.0), DomainError);
}

TEST(Clip, NeverExceedsTauAndKeepsDirection) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> scale(0.0, 100.0);
  for (int i = 0; i < 10000; ++i) {
    const Vec v = scale(rng) * randn(rng, 16);
    for (double tau : {0.1, 1.0, 3.7}) {
      const Vec c = clip_norm(v, tau);
      ASSERT_LE(c.norm(), tau);
      if (v.norm() > 0) {
        ASSERT_GE(c.dot(v) / (c.norm() * v.norm()), 1.0 - 1e-12);
      }
    }
  }
}

TEST(Dog, HandComputation) {
  auto cfg = constant_g(1.0);
  cfg.tau = 5.0;
  const auto r = dog_combine(v2(1, 0), v2(3, 4), 500, cfg);
  EXPECT_EQ(r.eps_hat, v2(2, -4));
  EXPECT_FALSE(r.degenerate);
}

TEST(Dog, ParallelNegativeScalesPositive) {
  auto cfg = constant_g(7.0);
  const auto r = dog_combine(v2(1, 2), v2(-3, -6), 10, cfg);
  EXPECT_LT((r.eps_hat - 8.0 * v2(1, 2)).norm(), 1e-14);
}

TEST(Dog, ScheduleEndpointsReturnPositive) {
  GuidanceConfig cfg;
  cfg.gs = 30;
  const Vec p = v2(0.3, -1.2), n = v2(4, 1);
  EXPECT_EQ(dog_combine(p, n, 0, cfg).eps_hat, p);
  EXPECT_EQ(dog_combine(p, n, 1000, cfg).eps_hat, p);
  EXPECT_EQ(dog_combine(p, n, 700, cfg).g, 30.0);
}

TEST(Dog, DegenerateZeroPositive) {
  const auto r = dog_combine(v2(0, 0), v2(1, 1), 500, constant_g(5));
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.eps_hat, v2(0, 0));
}

TEST(Dog, AutoTauClipsToPositiveNorm) {
  // |eps_n| = 10 > |eps_p| = 1: the clipped orthogonal part has norm <= 1.
  const auto r = dog_combine(v2(1, 0), v2(0, 10), 500, constant_g(1));
  EXPECT_LT((r.eps_hat - v2(2, -1)).norm(), 1e-15);
}

TEST(Dog, ProjectionOffUsesClippedNegative) {
  auto cfg = constant_g(1);
  cfg.projection_on = false;
  cfg.tau = 5.0;
  EXPECT_EQ(dog_combine(v2(1, 0), v2(3, 4), 500, cfg).eps_hat, v2(-1, -4));
}

TEST(Dog, PythagoreanIdentity) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const Vec p = randn(rng, 16), n = randn(rng, 16);
    for (double g : {0.0, 1.0, 30.0}) {
      const auto r = dog_combine(p, n, 500, constant_g(g));
      const Vec star = orthogonal_component(clip_norm(n, p.norm()), p);
      const double lhs = r.eps_hat.squaredNorm();
      const double rhs = (1 + g) * (1 + g) * p.squaredNorm() + g * g * star.squaredNorm();
      ASSERT_NEAR(lhs, rhs, 1e-8 * rhs);
    }
  }
}

TEST(Cfg, HandCases) {
  const Vec c = v2(1, 0), u = v2(0, 1);
  EXPECT_EQ(cfg_combine(c, u, 1.0), c);
  EXPECT_EQ(cfg_combine(c, u, 0.0), u);
  EXPECT_EQ(cfg_combine(c, u, 2.0), v2(2, -1));
}

TEST(Apg, HandComputation) {
  EXPECT_EQ(apg_combine(v2(1, 0), v2(0, 1), 2.0, 0.0).eps_hat, v2(1, -2));
}

TEST(Apg, ParallelDeltaWithZeroWeightIsConditional) {
  const Vec c = v2(1, 2);
  for (double gs : {0.5, 3.0, 30.0}) EXPECT_LT((apg_combine(c, 0.25 * c, gs, 0.0).eps_hat - c).norm(), 1e-14);
}

TEST(Apg, FullParallelWeightIsShiftedCfg) {
  // w = 1: eps_c + gs (eps_c - eps_u) = cfg(eps_c, eps_u, gs + 1).
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    const Vec c = randn(rng, 8), u = randn(rng, 8);
    const Vec a = apg_combine(c, u, 3.0, 1.0).eps_hat;
    ASSERT_LT((a - cfg_combine(c, u, 4.0)).norm(), 1e-12 * (1 + a.norm()));
  }
}

TEST(Apg, ZeroConditionalFallsBackToCfg) {
  const auto r = apg_combine(v2(0, 0), v2(1, 1), 2.0, 0.1);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.eps_hat, cfg_combine(v2(0, 0), v2(1, 1), 2.0));
}

TEST(Strategy, ParseRoundTrip) {
  for (auto s : {Strategy::kNone, Strategy::kCfg, Strategy::kApg, Strategy::kDog}) {
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  }
  EXPECT_THROW(parse_strategy("pag"), ConfigError);
}

TEST(GuidanceConfig, Validation) {
  GuidanceConfig g;
  g.gs = -1;
  EXPECT_THROW(g.validate(), ConfigError);
  g.gs = 1;
  g.tau = 0.0;
  EXPECT_THROW(g.validate(), ConfigError);
  g.tau.reset();
  g.triangular.peak = 1000;
  EXPECT_THROW(g.validate(), ConfigError);
}
