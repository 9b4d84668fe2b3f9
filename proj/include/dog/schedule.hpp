#pragma once

#include <span>
#include <string>
#include <vector>

#include "dog/errors.hpp"

namespace dog {

/// Variance-preserving noise schedule over timesteps 1..T.
///
/// Timestep t = T is pure noise and t = 0 is clean data. Index accessors take
/// the timestep directly; alpha_bar(0) is defined as 1 so the terminal DDIM
/// step returns the clean estimate.
class DiffusionSchedule {
 public:
  DiffusionSchedule() = default;

  explicit DiffusionSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.size() < 2) throw ConfigError("T", "need at least 2 timesteps");
    alphas_.reserve(betas_.size());
    alpha_bars_.reserve(betas_.size());
    double running = 1.0;
    for (std::size_t i = 0; i < betas_.size(); ++i) {
      const double b = betas_[i];
      if (!(b > 0.0 && b < 1.0)) throw ConfigError("betas", "each beta must lie in (0, 1)");
      alphas_.push_back(1.0 - b);
      running *= 1.0 - b;
      alpha_bars_.push_back(running);
    }
    if (!(alpha_bars_.back() > 0.0)) throw ConfigError("betas", "alpha_bar underflows to zero");
  }

  int T() const { return static_cast<int>(betas_.size()); }

  double beta(int t) const { return betas_[index(t)]; }
  double alpha(int t) const { return alphas_[index(t)]; }

  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bars_[index(t)];
  }

  std::span<const double> betas() const { return betas_; }
  std::span<const double> alphas() const { return alphas_; }
  std::span<const double> alpha_bars() const { return alpha_bars_; }

 private:
  std::size_t index(int t) const {
    if (t < 1 || t > T()) {
      throw DomainError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T()) + "]");
    }
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

/// Linear beta schedule, endpoints inclusive.
inline DiffusionSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 2) throw ConfigError("T", "must be at least 2");
  if (!(beta_start > 0.0)) throw ConfigError("beta_start", "must be positive");
  if (!(beta_end < 1.0)) throw ConfigError("beta_end", "must be below 1");
  if (!(beta_start <= beta_end)) throw ConfigError("beta_start", "must not exceed beta_end");
  std::vector<double> betas(static_cast<std::size_t>(T));
  const double step = (beta_end - beta_start) / static_cast<double>(T - 1);
  for (int i = 0; i < T; ++i) betas[i] = beta_start + step * i;
  betas.back() = beta_end;
  return DiffusionSchedule(std::move(betas));
}

/// Piecewise-linear guidance weight: 0 at t = 0 and t = T, 1 at the peak.
struct TriangularSchedule {
  int T = 1000;
  int peak = 700;
  double gs = 0.0;

  void validate() const {
    if (T < 2) throw ConfigError("triangular.T", "must be at least 2");
    if (peak <= 0 || peak >= T) throw ConfigError("triangular.peak", "must lie strictly inside (0, T)");
    if (!(gs >= 0.0)) throw ConfigError("gs", "must be nonnegative");
  }
};

inline double gamma(const TriangularSchedule& sched, int t) {
  if (t < 0 || t > sched.T) {
    throw DomainError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(sched.T) + "]");
  }
  if (t <= sched.peak) return static_cast<double>(t) / sched.peak;
  return 1.0 - static_cast<double>(t - sched.peak) / (sched.T - sched.peak);
}

inline double guidance_scale_at(const TriangularSchedule& sched, int t) { return sched.gs * gamma(sched, t); }

}  // namespace dog
