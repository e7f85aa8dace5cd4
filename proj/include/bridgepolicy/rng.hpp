#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace bridgepolicy {

using Rng = std::mt19937_64;

// Independent stream for (seed, stream) so that per-path / per-episode
// generators never share state.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

// 64-bit seed for a child stream, e.g. one episode of a dataset.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) { return make_rng(seed, stream)(); }

inline Eigen::VectorXd standard_normal(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace bridgepolicy
