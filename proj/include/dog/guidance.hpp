#pragma once

#include <cassert>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "dog/denoiser.hpp"
#include "dog/errors.hpp"
#include "dog/perturb.hpp"
#include "dog/schedule.hpp"

namespace dog {

enum class Strategy { kNone, kCfg, kApg, kDog };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kNone: return "none";
    case Strategy::kCfg: return "cfg";
    case Strategy::kApg: return "apg";
    case Strategy::kDog: return "dog";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "none") return Strategy::kNone;
  if (s == "cfg") return Strategy::kCfg;
  if (s == "apg") return Strategy::kApg;
  if (s == "dog") return Strategy::kDog;
  throw ConfigError("guidance.strategy", "unknown strategy '" + std::string(s) + "'");
}

inline bool needs_unconditional(Strategy s) { return s == Strategy::kCfg || s == Strategy::kApg; }

struct GuidanceConfig {
  Strategy strategy = Strategy::kDog;
  double gs = 20.0;
  std::optional<double> tau;  // empty: AUTO, tau = ||eps_p|| of the current step
  double apg_parallel_weight = 0.1;
  bool schedule_on = true;
  bool projection_on = true;  // off: the clipped eps_n goes into the residual unprojected
  PerturbConfig perturb;
  TriangularSchedule triangular;  // its gs field is ignored; `gs` above is the base factor

  void validate() const {
    if (!(gs >= 0.0) || !std::isfinite(gs)) throw ConfigError("guidance.gs", "must be a finite nonnegative number");
    if (tau && !(*tau > 0.0)) throw ConfigError("guidance.tau", "must be positive or \"auto\"");
    if (!(apg_parallel_weight >= 0.0 && apg_parallel_weight <= 1.0)) {
      throw ConfigError("guidance.apg_parallel_weight", "must lie in [0, 1]");
    }
    if (strategy == Strategy::kDog) {
      perturb.validate();
      triangular_at_gs().validate();
    }
  }

  TriangularSchedule triangular_at_gs() const {
    TriangularSchedule tri = triangular;
    tri.gs = gs;
    return tri;
  }

  /// g(t): triangular when scheduling is on, constant gs otherwise.
  double scale_at(int t) const { return schedule_on ? guidance_scale_at(triangular_at_gs(), t) : gs; }
};

/// (<n, p> / ||p||^2) p with a single inner product over all entries. Zero when ||p|| = 0.
inline NoisePrediction project_onto(const NoisePrediction& eps_n, const NoisePrediction& eps_p) {
  if (eps_n.size() != eps_p.size()) throw DomainError("projection operands differ in shape");
  const double pp = eps_p.squaredNorm();
  if (pp == 0.0) return NoisePrediction::Zero(eps_p.size());
  return (eps_n.dot(eps_p) / pp) * eps_p;
}

/// eps_n minus its projection onto eps_p. A second projection pass removes the
/// rounding residue left by cancellation when eps_n is nearly parallel to eps_p.
inline NoisePrediction orthogonal_component(const NoisePrediction& eps_n, const NoisePrediction& eps_p) {
  NoisePrediction r = eps_n - project_onto(eps_n, eps_p);
  r -= project_onto(r, eps_p);
  return r;
}

/// min(1, tau / ||eps_n||) eps_n.
inline NoisePrediction clip_norm(const NoisePrediction& eps_n, double tau) {
  if (!(tau > 0.0)) throw DomainError("clip threshold must be positive");
  const double n = eps_n.norm();
  if (n <= tau) return eps_n;
  NoisePrediction out = (tau / n) * eps_n;
  // Rounding can leave the norm a few ulps above tau; shave it back.
  while (out.norm() > tau) out *= (1.0 - 1e-16);
  return out;
}

struct Combined {
  NoisePrediction eps_hat;
  double g = 0.0;
  bool degenerate = false;
};

inline Combined dog_combine(const NoisePrediction& eps_p, const NoisePrediction& eps_n, int t,
                            const GuidanceConfig& cfg) {
  if (eps_p.size() != eps_n.size()) throw DomainError("eps_p and eps_n differ in shape");
  const double g = cfg.scale_at(t);
  const double p_norm = eps_p.norm();
  if (p_norm == 0.0) return Combined{eps_p, g, true};

  const double tau = cfg.tau.value_or(p_norm);
  const NoisePrediction clipped = clip_norm(eps_n, tau);
  const NoisePrediction star = cfg.projection_on ? orthogonal_component(clipped, eps_p) : clipped;
#ifndef NDEBUG
  if (cfg.projection_on) {
    const double scale = star.norm() * p_norm;
    assert(std::abs(star.dot(eps_p)) <= 1e-8 * scale + 1e-300);
  }
#endif
  return Combined{eps_p + g * (eps_p - star), g, false};
}

/// eps_u + gs (eps_c - eps_u). std::lerp keeps both endpoints exact: gs = 1 gives
/// eps_c bit for bit, gs = 0 gives eps_u.
inline NoisePrediction cfg_combine(const NoisePrediction& eps_c, const NoisePrediction& eps_u, double gs) {
  if (eps_c.size() != eps_u.size()) throw DomainError("eps_c and eps_u differ in shape");
  NoisePrediction out(eps_c.size());
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = std::lerp(eps_u[i], eps_c[i], gs);
  return out;
}

/// eps_c + gs (delta_perp + w delta_par), delta = eps_c - eps_u split against eps_c.
/// Falls back to CFG (flagged) when eps_c is zero.
inline Combined apg_combine(const NoisePrediction& eps_c, const NoisePrediction& eps_u, double gs,
                            double parallel_weight) {
  if (eps_c.size() != eps_u.size()) throw DomainError("eps_c and eps_u differ in shape");
  if (eps_c.squaredNorm() == 0.0) return Combined{cfg_combine(eps_c, eps_u, gs), gs, true};
  const NoisePrediction delta = eps_c - eps_u;
  const NoisePrediction par = project_onto(delta, eps_c);
  const NoisePrediction perp = delta - par;
  return Combined{eps_c + gs * (perp + parallel_weight * par), gs, false};
}

}  // namespace dog
