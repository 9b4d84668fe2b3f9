#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace dog {

using Rng = std::mt19937_64;

// Independent streams derived from one user seed. Values are arbitrary but fixed.
enum class Stream : std::uint64_t {
  kInitialNoise = 0x01,
  kNegative = 0x02,
  kContentEmbedding = 0x10,
  kStyleEmbedding = 0x11,
  kToyGeometry = 0x20,
  kData = 0x30,
  kTraining = 0x40,
  kProjections = 0x50,
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
  std::uint64_t h = detail::splitmix64(seed);
  h = detail::splitmix64(h ^ static_cast<std::uint64_t>(stream));
  return detail::splitmix64(h ^ index);
}

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, stream, index));
}

inline Eigen::VectorXd standard_normal(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

}  // namespace dog
