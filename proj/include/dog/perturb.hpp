#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include "dog/conditions.hpp"
#include "dog/errors.hpp"
#include "dog/rng.hpp"

namespace dog {

enum class PerturbTarget { kStyle, kContent, kBoth, kUnconditional };
enum class ResampleMode { kPerTrajectory, kPerStep };

struct PerturbConfig {
  double lambda_s = 1000.0;
  double lambda_t = 1000.0;
  double p = 0.75;  // Bernoulli keep-probability of the dropout mask
  PerturbTarget target = PerturbTarget::kBoth;
  ResampleMode resample = ResampleMode::kPerTrajectory;
  // Off: the replacement is lambda * mask * z with nothing from the original.
  // On: original + lambda * mask * z.
  bool additive = false;

  void validate() const {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("guidance.perturb.p", "must lie in (0, 1]");
    if (!(lambda_s >= 0.0)) throw ConfigError("guidance.perturb.lambda_s", "must be nonnegative");
    if (!(lambda_t >= 0.0)) throw ConfigError("guidance.perturb.lambda_t", "must be nonnegative");
  }
};

/// lambda * (eta ⊙ z), eta ~ Bernoulli(p), z ~ N(0, I). One mask draw and one normal draw per entry.
inline Vec masked_noise(Eigen::Index n, double lambda, double p, Rng& rng) {
  std::bernoulli_distribution keep(p);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool k = keep(rng);
    const double z = normal(rng);
    out[i] = k ? lambda * z : 0.0;
  }
  return out;
}

/// Negative pair for the positive `pos`. Non-targeted components are copied verbatim.
inline Condition make_negative(const ConditionPair& pos, const PerturbConfig& cfg, Rng& rng) {
  if (pos.content.size() == 0 || pos.style.size() == 0) throw DomainError("positive condition vectors are empty");
  if (cfg.target == PerturbTarget::kUnconditional) return NullCondition{};

  ConditionPair neg = pos;
  neg.content_id = -1;
  neg.style_id = -1;
  const bool hit_content = cfg.target == PerturbTarget::kContent || cfg.target == PerturbTarget::kBoth;
  const bool hit_style = cfg.target == PerturbTarget::kStyle || cfg.target == PerturbTarget::kBoth;
  if (hit_content) {
    Vec noise = masked_noise(pos.content.size(), cfg.lambda_t, cfg.p, rng);
    neg.content = cfg.additive ? Vec(pos.content + noise) : noise;
  } else {
    neg.content_id = pos.content_id;
  }
  if (hit_style) {
    Vec noise = masked_noise(pos.style.size(), cfg.lambda_s, cfg.p, rng);
    neg.style = cfg.additive ? Vec(pos.style + noise) : noise;
  } else {
    neg.style_id = pos.style_id;
  }
  return neg;
}

/// Per-trajectory source of negative conditions; owns its generator.
class NegativeSource {
 public:
  NegativeSource(ConditionPair pos, PerturbConfig cfg, std::uint64_t trajectory_seed)
      : pos_(std::move(pos)), cfg_(cfg), rng_(make_rng(trajectory_seed, Stream::kNegative)) {}

  /// PER_TRAJECTORY: the first draw is cached and returned for every later step.
  /// PER_STEP: a fresh draw on every call.
  Condition at([[maybe_unused]] int t) {
    if (cfg_.resample == ResampleMode::kPerStep) return make_negative(pos_, cfg_, rng_);
    if (!cached_) cached_ = make_negative(pos_, cfg_, rng_);
    return *cached_;
  }

 private:
  ConditionPair pos_;
  PerturbConfig cfg_;
  Rng rng_;
  std::optional<Condition> cached_;
};

inline Condition negative_for_step(NegativeSource& source, int t) { return source.at(t); }

}  // namespace dog
