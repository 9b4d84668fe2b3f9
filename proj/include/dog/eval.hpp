#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dog/conditions.hpp"
#include "dog/denoiser.hpp"
#include "dog/errors.hpp"
#include "dog/guidance.hpp"
#include "dog/rng.hpp"
#include "dog/sampler.hpp"

namespace dog {

/// Squared W2 between two 1-D empirical measures with uniform weights.
/// Exact for any sizes: walks the merged quantile breakpoints.
inline double wasserstein2_squared_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DomainError("wasserstein2 needs nonempty sample sets");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
  }
  const auto na = static_cast<double>(a.size());
  const auto nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double pos = 0.0;  // current quantile level
  double total = 0.0;
  while (i < a.size() && j < b.size()) {
    const double next_a = static_cast<double>(i + 1) / na;
    const double next_b = static_cast<double>(j + 1) / nb;
    const double next = std::min(next_a, next_b);
    const double diff = a[i] - b[j];
    total += (next - pos) * diff * diff;
    pos = next;
    if (next_a <= next) ++i;
    if (next_b <= next) ++j;
  }
  return total;
}

struct SlicedOptions {
  int projections = 128;
  std::uint64_t seed = 0;
};

/// Random unit directions used by the sliced estimate.
inline std::vector<Vec> slicing_directions(Eigen::Index dim, const SlicedOptions& opts) {
  if (opts.projections < 1) throw ConfigError("eval.projections", "must be >= 1");
  Rng rng = make_rng(opts.seed, Stream::kProjections, static_cast<std::uint64_t>(dim));
  std::vector<Vec> dirs;
  dirs.reserve(static_cast<std::size_t>(opts.projections));
  while (static_cast<int>(dirs.size()) < opts.projections) {
    Vec v = standard_normal(rng, dim);
    const double n = v.norm();
    if (n > 0.0) dirs.push_back(v / n);
  }
  return dirs;
}

/// W2 between sample sets: exact sorted matching in 1-D, sliced W2 (root mean of
/// per-direction squared W2) over seeded random directions otherwise.
inline double wasserstein2(const std::vector<Vec>& a, const std::vector<Vec>& b, const SlicedOptions& opts = {}) {
  if (a.empty() || b.empty()) throw DomainError("wasserstein2 needs nonempty sample sets");
  const Eigen::Index d = a.front().size();
  for (const auto& v : a)
    if (v.size() != d) throw DomainError("wasserstein2: inconsistent dimensions");
  for (const auto& v : b)
    if (v.size() != d) throw DomainError("wasserstein2: inconsistent dimensions");

  auto project = [](const std::vector<Vec>& s, const Vec& dir) {
    std::vector<double> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i].dot(dir);
    return out;
  };
  if (d == 1) {
    const Vec unit = Vec::Ones(1);
    return std::sqrt(wasserstein2_squared_1d(project(a, unit), project(b, unit)));
  }
  double acc = 0.0;
  const auto dirs = slicing_directions(d, opts);
  for (const auto& dir : dirs) acc += wasserstein2_squared_1d(project(a, dir), project(b, dir));
  return std::sqrt(acc / static_cast<double>(dirs.size()));
}

/// Mean pairwise Euclidean distance.
inline double diversity(const std::vector<Vec>& samples) {
  if (samples.size() < 2) throw DomainError("diversity needs at least two samples");
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = i + 1; j < samples.size(); ++j) total += (samples[i] - samples[j]).norm();
  const auto n = static_cast<double>(samples.size());
  return total / (n * (n - 1.0) / 2.0);
}

struct MetricReport {
  std::string strategy;
  double gs = 0.0;
  double fidelity_w2 = 0.0;
  double diversity = 0.0;
  double blowup_rate = 0.0;
  int n_samples = 0;
};

/// 10 x the largest mode norm plus 5 sigma.
inline double default_blowup_bound(const ConditionalGMM& gmm) {
  return 10.0 * gmm.max_mean_norm() + 5.0 * gmm.max_sigma();
}

/// Everything a metric needs besides the trajectories themselves.
struct EvalTargets {
  std::vector<ConditionPair> conditions;
  std::vector<std::vector<Vec>> target_samples;  // one set per condition
  double blowup_bound = 0.0;
  SlicedOptions sliced;
};

inline EvalTargets make_eval_targets(const ConditionalGMM& gmm, std::vector<ConditionPair> conds, int n_target,
                                     std::uint64_t target_seed, double blowup_bound, SlicedOptions sliced = {}) {
  EvalTargets out;
  for (const auto& c : conds) out.target_samples.push_back(sample_data(gmm, c.content_id, c.style_id, n_target, target_seed));
  out.conditions = std::move(conds);
  out.blowup_bound = blowup_bound;
  out.sliced = sliced;
  return out;
}

/// Metrics over trajectories grouped by condition: `runs[c]` are the trajectories for condition c.
inline MetricReport summarize(const std::vector<std::vector<Trajectory>>& runs, const EvalTargets& targets,
                              std::string label, double gs) {
  MetricReport r;
  r.strategy = std::move(label);
  r.gs = gs;
  int blown = 0;
  double w2 = 0.0;
  double div = 0.0;
  for (std::size_t c = 0; c < runs.size(); ++c) {
    std::vector<Vec> finals;
    for (const auto& tr : runs[c]) {
      finals.push_back(tr.final_sample);
      if (tr.max_state_norm > targets.blowup_bound) ++blown;
    }
    r.n_samples += static_cast<int>(finals.size());
    w2 += wasserstein2(finals, targets.target_samples[c], targets.sliced);
    div += finals.size() >= 2 ? diversity(finals) : 0.0;
  }
  const auto nc = static_cast<double>(runs.size());
  r.fidelity_w2 = w2 / nc;
  r.diversity = div / nc;
  r.blowup_rate = r.n_samples > 0 ? static_cast<double>(blown) / r.n_samples : 0.0;
  return r;
}

/// Runs `gcfg` (with gs overridden) for every condition x seed and summarizes.
template <NoisePredictor Model>
MetricReport evaluate(const Model& model, const GuidanceConfig& gcfg, const DiffusionSchedule& schedule,
                      const std::vector<std::uint64_t>& seeds, const EvalTargets& targets,
                      const SamplerOptions& opts = {}, std::string label = {}) {
  std::vector<std::vector<Trajectory>> runs;
  SamplerOptions lean = opts;
  lean.record.kind = RecordPolicy::Kind::kFinalOnly;
  for (const auto& cond : targets.conditions) {
    std::vector<ConditionPair> conds(seeds.size(), cond);
    runs.push_back(sample_batch(model, conds, gcfg, schedule, seeds, lean));
  }
  if (label.empty()) label = std::string(to_string(gcfg.strategy));
  return summarize(runs, targets, std::move(label), gcfg.gs);
}

/// One report per gs with every other setting held fixed.
template <NoisePredictor Model>
std::vector<MetricReport> stability_curve(const Model& model, const GuidanceConfig& base, Strategy strategy,
                                          const std::vector<double>& gs_list, const DiffusionSchedule& schedule,
                                          const std::vector<std::uint64_t>& seeds, const EvalTargets& targets,
                                          const SamplerOptions& opts = {}) {
  if (gs_list.empty()) throw ConfigError("eval.gs_list", "must not be empty");
  std::vector<MetricReport> out;
  for (double gs : gs_list) {
    GuidanceConfig g = base;
    g.strategy = strategy;
    g.gs = gs;
    out.push_back(evaluate(model, g, schedule, seeds, targets, opts));
  }
  return out;
}

}  // namespace dog
