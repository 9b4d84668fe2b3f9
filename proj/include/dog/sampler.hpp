#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "dog/conditions.hpp"
#include "dog/denoiser.hpp"
#include "dog/errors.hpp"
#include "dog/guidance.hpp"
#include "dog/perturb.hpp"
#include "dog/rng.hpp"
#include "dog/schedule.hpp"

namespace dog {

/// Deterministic (eta = 0) DDIM transition from t to t_prev < t.
inline Vec ddim_step(const Vec& x_t, const NoisePrediction& eps_hat, int t, int t_prev,
                     const DiffusionSchedule& schedule) {
  if (t < 1 || t > schedule.T()) throw DomainError("ddim_step: timestep " + std::to_string(t) + " outside [1, T]");
  if (t_prev < 0 || t_prev >= t) throw DomainError("ddim_step: previous timestep must lie in [0, t)");
  const double abar = schedule.alpha_bar(t);
  const double abar_prev = schedule.alpha_bar(t_prev);
  const Vec x0_hat = (x_t - std::sqrt(1.0 - abar) * eps_hat) / std::sqrt(abar);
  return std::sqrt(abar_prev) * x0_hat + std::sqrt(1.0 - abar_prev) * eps_hat;
}

inline Vec ddim_step(const Vec& x_t, const NoisePrediction& eps_hat, int t, const DiffusionSchedule& schedule) {
  return ddim_step(x_t, eps_hat, t, t - 1, schedule);
}

/// Timesteps visited by a sampler with `steps` evaluations, in decreasing order, ending above 0.
inline std::vector<int> sampling_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) throw ConfigError("schedule.sampling_steps", "must lie in [1, T]");
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(steps));
  for (int k = steps; k >= 1; --k) {
    const auto t = static_cast<int>((static_cast<std::int64_t>(k) * T + steps / 2) / steps);
    if (ts.empty() || t < ts.back()) ts.push_back(std::max(t, 1));
  }
  return ts;
}

struct TrajectoryStep {
  int t = 0;
  Vec x_t;
  NoisePrediction eps_hat;
  double g_t = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;  // decreasing t, terminal entry t = 0
  std::uint64_t seed = 0;
  std::string config_digest;
  int degenerate_step_count = 0;
  double max_state_norm = 0.0;
  Vec final_sample;
};

struct RecordPolicy {
  enum class Kind { kAll, kEveryK, kFinalOnly };
  Kind kind = Kind::kAll;
  int every = 1;

  bool keep(std::size_t step_index) const {
    switch (kind) {
      case Kind::kAll: return true;
      case Kind::kEveryK: return step_index % static_cast<std::size_t>(every) == 0;
      case Kind::kFinalOnly: return false;
    }
    return true;
  }
};

struct SamplerOptions {
  int steps = 0;  // 0: every timestep
  RecordPolicy record;
  std::string config_digest;
};

template <NoisePredictor Model>
NoisePrediction checked_predict(const Model& model, const Vec& x, int t, const Condition& cond, Strategy strategy) {
  NoisePrediction eps = model.predict_eps(x, t, cond);
  if (!all_finite(eps)) {
    throw NumericalError("non-finite noise prediction at t=" + std::to_string(t) + " (strategy " +
                         std::string(to_string(strategy)) + ")");
  }
  return eps;
}

/// One guided DDIM run from x_T ~ N(0, I). Pure in (model, cond, gcfg, schedule, seed).
template <NoisePredictor Model>
Trajectory sample(const Model& model, const ConditionPair& cond, const GuidanceConfig& gcfg,
                  const DiffusionSchedule& schedule, std::uint64_t seed, const SamplerOptions& opts = {}) {
  gcfg.validate();
  if (needs_unconditional(gcfg.strategy) && !model.supports_null()) {
    throw ConfigError("guidance.strategy", std::string(to_string(gcfg.strategy)) +
                                               " needs a model with an unconditional branch");
  }
  if (gcfg.strategy == Strategy::kDog && gcfg.triangular.T != schedule.T()) {
    throw ConfigError("guidance.peak", "triangular schedule T must equal the diffusion schedule T");
  }

  const int T = schedule.T();
  const auto ts = sampling_timesteps(T, opts.steps == 0 ? T : opts.steps);
  Rng noise_rng = make_rng(seed, Stream::kInitialNoise);
  Vec x = standard_normal(noise_rng, model.dim());
  NegativeSource negatives(cond, gcfg.perturb, seed);
  const Condition positive = cond;
  const Condition null_cond = NullCondition{};

  Trajectory traj;
  traj.seed = seed;
  traj.config_digest = opts.config_digest;
  traj.max_state_norm = x.norm();

  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    const NoisePrediction eps_p = checked_predict(model, x, t, positive, gcfg.strategy);
    Combined comb{eps_p, 0.0, false};
    switch (gcfg.strategy) {
      case Strategy::kNone: break;
      case Strategy::kCfg: {
        const auto eps_u = checked_predict(model, x, t, null_cond, gcfg.strategy);
        comb = Combined{cfg_combine(eps_p, eps_u, gcfg.gs), gcfg.gs, false};
        break;
      }
      case Strategy::kApg: {
        const auto eps_u = checked_predict(model, x, t, null_cond, gcfg.strategy);
        comb = apg_combine(eps_p, eps_u, gcfg.gs, gcfg.apg_parallel_weight);
        break;
      }
      case Strategy::kDog: {
        const auto eps_n = checked_predict(model, x, t, negatives.at(t), gcfg.strategy);
        comb = dog_combine(eps_p, eps_n, t, gcfg);
        break;
      }
    }
    if (comb.degenerate) ++traj.degenerate_step_count;
    if (opts.record.keep(i)) traj.steps.push_back(TrajectoryStep{t, x, comb.eps_hat, comb.g});
    x = ddim_step(x, comb.eps_hat, t, t_prev, schedule);
    if (!x.allFinite()) {
      throw NumericalError("non-finite state after step t=" + std::to_string(t) + " (strategy " +
                           std::string(to_string(gcfg.strategy)) + ", gs " + std::to_string(gcfg.gs) + ")");
    }
    traj.max_state_norm = std::max(traj.max_state_norm, x.norm());
  }
  traj.steps.push_back(TrajectoryStep{0, x, NoisePrediction::Zero(x.size()), 0.0});
  traj.final_sample = x;
  return traj;
}

/// Element i equals sample(model, conds[i], gcfg, schedule, seeds[i]); results in input order.
template <NoisePredictor Model>
std::vector<Trajectory> sample_batch(const Model& model, const std::vector<ConditionPair>& conds,
                                     const GuidanceConfig& gcfg, const DiffusionSchedule& schedule,
                                     const std::vector<std::uint64_t>& seeds, const SamplerOptions& opts = {},
                                     unsigned workers = 1) {
  if (conds.size() != seeds.size()) throw ConfigError("sampling.seeds", "need one seed per condition");
  std::vector<Trajectory> out(conds.size());
  if (workers <= 1 || conds.size() < 2) {
    for (std::size_t i = 0; i < conds.size(); ++i) out[i] = sample(model, conds[i], gcfg, schedule, seeds[i], opts);
    return out;
  }
  workers = std::min<unsigned>(workers, static_cast<unsigned>(conds.size()));
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < conds.size(); i += workers) {
          out[i] = sample(model, conds[i], gcfg, schedule, seeds[i], opts);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace dog
