#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dog/conditions.hpp"
#include "dog/errors.hpp"
#include "dog/schedule.hpp"

namespace dog {

using NoisePrediction = Vec;

/// Anything that predicts noise for (x_t, t, condition).
template <typename M>
concept NoisePredictor = requires(const M& m, const Vec& x, int t, const Condition& c) {
  { m.predict_eps(x, t, c) } -> std::convertible_to<NoisePrediction>;
  { m.dim() } -> std::convertible_to<int>;
  { m.supports_null() } -> std::convertible_to<bool>;
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

struct PosteriorMean {
  Vec mean;
  std::vector<double> responsibilities;
  bool nearest_fallback = false;
};

/// E[x_0 | x_t] for a Gaussian mixture target under the forward process
/// x_t = sqrt(abar) x_0 + sqrt(1 - abar) eps.
///
/// Each component contributes responsibility pi_k ∝ w_k N(x_t; sqrt(abar) mu_k, v_k I)
/// with v_k = abar sigma_k^2 + 1 - abar, and its own posterior mean
/// mu_k + (sqrt(abar) sigma_k^2 / v_k)(x_t - sqrt(abar) mu_k).
/// If every log-responsibility is non-finite the nearest component (in the
/// noised frame) takes all the mass.
inline PosteriorMean analytic_posterior_mean(std::span<const GmmComponent> comps, const Vec& x_t, int t,
                                             const DiffusionSchedule& schedule) {
  if (comps.empty()) throw DomainError("posterior mean over an empty mixture");
  if (t == 0) throw DomainError("posterior mean needs t >= 1");
  const double abar = schedule.alpha_bar(t);
  const double sa = std::sqrt(abar);
  const Eigen::Index d = x_t.size();

  std::vector<double> logw(comps.size());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const auto& c = comps[k];
    if (c.mean.size() != d) throw DomainError("component dimension does not match x_t");
    const double v = abar * c.sigma * c.sigma + (1.0 - abar);
    const double r2 = (x_t - sa * c.mean).squaredNorm();
    logw[k] = std::log(c.weight) - 0.5 * static_cast<double>(d) * std::log(v) - 0.5 * r2 / v;
    best = std::max(best, logw[k]);
  }

  PosteriorMean out;
  out.responsibilities.assign(comps.size(), 0.0);
  if (!std::isfinite(best)) {
    std::size_t nearest = 0;
    double nearest_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < comps.size(); ++k) {
      const double dist = (x_t - sa * comps[k].mean).squaredNorm();
      if (dist < nearest_d) {
        nearest_d = dist;
        nearest = k;
      }
    }
    out.responsibilities[nearest] = 1.0;
    out.nearest_fallback = true;
  } else {
    double total = 0.0;
    for (std::size_t k = 0; k < comps.size(); ++k) {
      out.responsibilities[k] = std::exp(logw[k] - best);
      total += out.responsibilities[k];
    }
    for (auto& r : out.responsibilities) r /= total;
  }

  out.mean = Vec::Zero(d);
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const double pi = out.responsibilities[k];
    if (pi == 0.0) continue;
    const auto& c = comps[k];
    const double s2 = c.sigma * c.sigma;
    const double v = abar * s2 + (1.0 - abar);
    out.mean += pi * (c.mean + (sa * s2 / v) * (x_t - sa * c.mean));
  }
  return out;
}

/// eps = (x_t - sqrt(abar) E[x_0|x_t]) / sqrt(1 - abar).
inline NoisePrediction eps_from_posterior_mean(const Vec& x_t, const Vec& x0_mean, int t,
                                               const DiffusionSchedule& schedule) {
  const double abar = schedule.alpha_bar(t);
  return (x_t - std::sqrt(abar) * x0_mean) / std::sqrt(1.0 - abar);
}

/// Exact noise predictor for a ConditionalGMM target.
///
/// Representations are resolved to weights over content and style ids. A
/// vector equal to an id's embedding picks that id; any other vector gets
/// softmax(sharpness * <r, e_id>) over the vocabulary, so the zero vector is
/// uniform. NullCondition is the uniform marginal over every slice, which
/// makes the unconditional branch exact.
class AnalyticDenoiser {
 public:
  static constexpr double kMatchTolerance = 1e-12;

  AnalyticDenoiser(ConditionalGMM gmm, ConditionVocab vocab, DiffusionSchedule schedule, double sharpness = 10.0)
      : gmm_(std::move(gmm)), vocab_(vocab), schedule_(std::move(schedule)), sharpness_(sharpness) {
    vocab_.validate();
    if (vocab_.content_vocab != gmm_.content_vocab() || vocab_.style_vocab != gmm_.style_vocab()) {
      throw ConfigError("conditions", "vocabulary sizes must match the target mixture");
    }
    if (!(sharpness_ > 0.0)) throw ConfigError("denoiser.condition_sharpness", "must be positive");
    for (int c = 0; c < vocab_.content_vocab; ++c) content_emb_.push_back(content_embedding(vocab_, c));
    for (int s = 0; s < vocab_.style_vocab; ++s) style_emb_.push_back(style_embedding(vocab_, s));
    const std::vector<double> uc(static_cast<std::size_t>(vocab_.content_vocab), 1.0 / vocab_.content_vocab);
    const std::vector<double> us(static_cast<std::size_t>(vocab_.style_vocab), 1.0 / vocab_.style_vocab);
    marginal_ = mixture_for(uc, us);
  }

  int dim() const { return gmm_.dim(); }
  bool supports_null() const { return true; }
  const DiffusionSchedule& schedule() const { return schedule_; }
  const ConditionalGMM& gmm() const { return gmm_; }
  const ConditionVocab& vocab() const { return vocab_; }

  /// Mixture the model conditions on for `cond`.
  std::vector<GmmComponent> resolve(const Condition& cond) const {
    if (is_null(cond)) return marginal_;
    const auto& pair = std::get<ConditionPair>(cond);
    return mixture_for(id_weights(pair.content, content_emb_), id_weights(pair.style, style_emb_));
  }

  NoisePrediction predict_eps(const Vec& x_t, int t, const Condition& cond) const {
    check_inputs(x_t, t);
    if (is_null(cond)) return eps_for(marginal_, x_t, t);
    return eps_for(resolve(cond), x_t, t);
  }

  PosteriorMean posterior_mean(const Vec& x_t, int t, const Condition& cond) const {
    check_inputs(x_t, t);
    return analytic_posterior_mean(resolve(cond), x_t, t, schedule_);
  }

 private:
  void check_inputs(const Vec& x_t, int t) const {
    if (x_t.size() != dim()) {
      throw DomainError("x_t has dimension " + std::to_string(x_t.size()) + ", model expects " +
                        std::to_string(dim()));
    }
    if (t < 1 || t > schedule_.T()) throw DomainError("timestep " + std::to_string(t) + " outside [1, T]");
  }

  NoisePrediction eps_for(const std::vector<GmmComponent>& comps, const Vec& x_t, int t) const {
    const auto post = analytic_posterior_mean(comps, x_t, t, schedule_);
    return eps_from_posterior_mean(x_t, post.mean, t, schedule_);
  }

  std::vector<double> id_weights(const Vec& r, const std::vector<Vec>& table) const {
    std::vector<double> w(table.size(), 0.0);
    for (std::size_t i = 0; i < table.size(); ++i) {
      if (r.size() == table[i].size() && (r - table[i]).norm() <= kMatchTolerance) {
        w[i] = 1.0;
        return w;
      }
    }
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < table.size(); ++i) {
      if (r.size() != table[i].size()) throw DomainError("representation length does not match the vocabulary");
      w[i] = sharpness_ * r.dot(table[i]);
      best = std::max(best, w[i]);
    }
    double total = 0.0;
    for (auto& v : w) {
      v = std::exp(v - best);
      total += v;
    }
    for (auto& v : w) v /= total;
    return w;
  }

  std::vector<GmmComponent> mixture_for(const std::vector<double>& wc, const std::vector<double>& ws) const {
    std::vector<GmmComponent> out;
    for (int c = 0; c < gmm_.content_vocab(); ++c) {
      for (int s = 0; s < gmm_.style_vocab(); ++s) {
        const double w = wc[c] * ws[s];
        if (w <= 0.0) continue;
        for (const auto& comp : gmm_.slice(c, s)) out.push_back(GmmComponent{w * comp.weight, comp.mean, comp.sigma});
      }
    }
    return out;
  }

  ConditionalGMM gmm_;
  ConditionVocab vocab_;
  DiffusionSchedule schedule_;
  double sharpness_;
  std::vector<Vec> content_emb_;
  std::vector<Vec> style_emb_;
  std::vector<GmmComponent> marginal_;
};

static_assert(NoisePredictor<AnalyticDenoiser>);

}  // namespace dog
