#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "dog/errors.hpp"
#include "dog/rng.hpp"

namespace dog {

using Vec = Eigen::VectorXd;

/// The dual prompt: content and style representations plus the ids they came from.
struct ConditionPair {
  Vec content;
  Vec style;
  int content_id = -1;
  int style_id = -1;
};

/// Marker for the unconditional branch. Distinct from every embedded pair by type.
struct NullCondition {};

using Condition = std::variant<ConditionPair, NullCondition>;

inline bool is_null(const Condition& c) { return std::holds_alternative<NullCondition>(c); }

/// Vocabulary of content/style ids and their fixed random unit embeddings.
struct ConditionVocab {
  int content_vocab = 3;
  int style_vocab = 3;
  int d_content = 8;
  int d_style = 8;
  std::uint64_t seed = 7;

  void validate() const {
    if (content_vocab < 1) throw ConfigError("conditions.content_vocab", "must be >= 1");
    if (style_vocab < 1) throw ConfigError("conditions.style_vocab", "must be >= 1");
    if (d_content < 1) throw ConfigError("conditions.d_content", "must be >= 1");
    if (d_style < 1) throw ConfigError("conditions.d_style", "must be >= 1");
  }
};

namespace detail {

inline Vec unit_embedding(std::uint64_t seed, Stream stream, int id, int dim) {
  Rng rng = make_rng(seed, stream, static_cast<std::uint64_t>(id));
  Vec v = standard_normal(rng, dim);
  return v / v.norm();
}

}  // namespace detail

inline Vec content_embedding(const ConditionVocab& vocab, int content_id) {
  if (content_id < 0 || content_id >= vocab.content_vocab) {
    throw DomainError("content_id " + std::to_string(content_id) + " outside vocabulary");
  }
  return detail::unit_embedding(vocab.seed, Stream::kContentEmbedding, content_id, vocab.d_content);
}

inline Vec style_embedding(const ConditionVocab& vocab, int style_id) {
  if (style_id < 0 || style_id >= vocab.style_vocab) {
    throw DomainError("style_id " + std::to_string(style_id) + " outside vocabulary");
  }
  return detail::unit_embedding(vocab.seed, Stream::kStyleEmbedding, style_id, vocab.d_style);
}

/// Deterministic, factorized embedding: content_id alone fixes r_t, style_id alone fixes r_s.
inline ConditionPair embed_condition(const ConditionVocab& vocab, int content_id, int style_id) {
  return ConditionPair{content_embedding(vocab, content_id), style_embedding(vocab, style_id), content_id,
                       style_id};
}

inline ConditionPair embed_condition(int content_id, int style_id, int d_content, int d_style, std::uint64_t seed,
                                     int content_vocab, int style_vocab) {
  ConditionVocab vocab{content_vocab, style_vocab, d_content, d_style, seed};
  vocab.validate();
  return embed_condition(vocab, content_id, style_id);
}

struct GmmComponent {
  double weight = 1.0;
  Vec mean;
  double sigma = 0.0;  // isotropic standard deviation; 0 is a point mass
};

/// Gaussian mixture per (content_id, style_id) slice, all in sample dimension `dim`.
class ConditionalGMM {
 public:
  ConditionalGMM() = default;

  ConditionalGMM(int dim, int content_vocab, int style_vocab)
      : dim_(dim), content_vocab_(content_vocab), style_vocab_(style_vocab),
        slices_(static_cast<std::size_t>(content_vocab * style_vocab)) {
    if (dim < 1) throw ConfigError("target.dim", "must be >= 1");
    if (content_vocab < 1 || style_vocab < 1) throw ConfigError("target", "vocabulary sizes must be >= 1");
  }

  int dim() const { return dim_; }
  int content_vocab() const { return content_vocab_; }
  int style_vocab() const { return style_vocab_; }

  void set_slice(int content_id, int style_id, std::vector<GmmComponent> comps) {
    check_ids(content_id, style_id);
    if (comps.empty()) throw ConfigError("target.components", "slice needs at least one component");
    double total = 0.0;
    for (const auto& c : comps) {
      if (c.mean.size() != dim_) throw ConfigError("target.components.mean", "dimension mismatch");
      if (!(c.weight > 0.0)) throw ConfigError("target.components.weight", "must be positive");
      if (!(c.sigma >= 0.0)) throw ConfigError("target.components.sigma", "must be nonnegative");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("target.components.weight", "weights must sum to 1");
    slices_[flat(content_id, style_id)] = std::move(comps);
  }

  std::span<const GmmComponent> slice(int content_id, int style_id) const {
    check_ids(content_id, style_id);
    const auto& s = slices_[flat(content_id, style_id)];
    if (s.empty()) {
      throw DomainError("no components for (" + std::to_string(content_id) + ", " + std::to_string(style_id) + ")");
    }
    return s;
  }

  double max_mean_norm() const {
    double m = 0.0;
    for (const auto& s : slices_)
      for (const auto& c : s) m = std::max(m, c.mean.norm());
    return m;
  }

  double max_sigma() const {
    double m = 0.0;
    for (const auto& s : slices_)
      for (const auto& c : s) m = std::max(m, c.sigma);
    return m;
  }

 private:
  void check_ids(int content_id, int style_id) const {
    if (content_id < 0 || content_id >= content_vocab_ || style_id < 0 || style_id >= style_vocab_) {
      throw DomainError("condition (" + std::to_string(content_id) + ", " + std::to_string(style_id) +
                        ") outside the mixture's vocabulary");
    }
  }
  std::size_t flat(int c, int s) const { return static_cast<std::size_t>(c * style_vocab_ + s); }

  int dim_ = 0;
  int content_vocab_ = 0;
  int style_vocab_ = 0;
  std::vector<std::vector<GmmComponent>> slices_;
};

/// Shape of the planar toy target. Content picks the mode arrangement, style rotates and scales it.
struct ToyGeometry {
  double radius = 1.0;
  double sigma = 0.4;
  double style_rotation = std::numbers::pi / 6.0;  // radians per style id
  double style_scale = 0.3;                        // scale = 1 + style_id * style_scale
};

/// Base arrangement of content `content_id`: modes on a ring with a seeded phase and radial jitter.
inline std::vector<Eigen::Vector2d> toy_base_arrangement(int content_id, int modes, std::uint64_t seed,
                                                         double radius) {
  Rng rng = make_rng(seed, Stream::kToyGeometry, static_cast<std::uint64_t>(content_id));
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi / modes);
  std::uniform_real_distribution<double> radial(0.75, 1.25);
  const double phase = phase_dist(rng);
  std::vector<Eigen::Vector2d> out;
  out.reserve(static_cast<std::size_t>(modes));
  for (int k = 0; k < modes; ++k) {
    const double a = phase + 2.0 * std::numbers::pi * k / modes;
    const double r = radius * radial(rng);
    out.emplace_back(r * std::cos(a), r * std::sin(a));
  }
  return out;
}

inline ConditionalGMM build_toy_gmm(int content_vocab, int style_vocab, int modes_per_content, std::uint64_t seed,
                                    const ToyGeometry& geom = {}) {
  if (content_vocab < 1) throw ConfigError("target.content_vocab", "must be >= 1");
  if (style_vocab < 1) throw ConfigError("target.style_vocab", "must be >= 1");
  if (modes_per_content < 1) throw ConfigError("target.modes_per_content", "must be >= 1");
  ConditionalGMM gmm(2, content_vocab, style_vocab);
  const double w = 1.0 / modes_per_content;
  for (int c = 0; c < content_vocab; ++c) {
    const auto base = toy_base_arrangement(c, modes_per_content, seed, geom.radius);
    for (int s = 0; s < style_vocab; ++s) {
      const double theta = s * geom.style_rotation;
      const double scale = 1.0 + s * geom.style_scale;
      Eigen::Matrix2d rot;
      rot << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
      std::vector<GmmComponent> comps;
      comps.reserve(base.size());
      for (const auto& m : base) comps.push_back(GmmComponent{w, Vec(scale * (rot * m)), geom.sigma});
      gmm.set_slice(c, s, std::move(comps));
    }
  }
  return gmm;
}

/// i.i.d. ancestral draws from one slice.
inline std::vector<Vec> sample_data(const ConditionalGMM& gmm, int content_id, int style_id, int n, Rng& rng) {
  if (n < 1) throw DomainError("sample count must be >= 1");
  const auto comps = gmm.slice(content_id, style_id);
  std::vector<double> weights;
  weights.reserve(comps.size());
  for (const auto& c : comps) weights.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& c = comps[pick(rng)];
    Vec z = standard_normal(rng, gmm.dim());
    out.push_back(c.mean + c.sigma * z);
  }
  return out;
}

inline std::vector<Vec> sample_data(const ConditionalGMM& gmm, int content_id, int style_id, int n,
                                    std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::kData,
                     static_cast<std::uint64_t>(content_id) * 1'000'003ULL + static_cast<std::uint64_t>(style_id));
  return sample_data(gmm, content_id, style_id, n, rng);
}

}  // namespace dog
