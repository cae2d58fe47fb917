// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace evf {

/**
 * Seeded random stream. Streams are addressed by (seed, stream ids...) so
 * that per-recording / per-step / per-view randomness is independent of the
 * order in which items are processed.
 */
class Rng {
public:
  explicit Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {});
  Rng(std::uint64_t seed, const std::vector<std::uint64_t> &stream);

  std::uint64_t next_u64() { return engine_(); }
  double uniform(); // [0, 1)
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Uniform integer in the closed range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(n) - 1));
  }
  unsigned poisson(double mean);
  bool bernoulli(double p) { return uniform() < p; }

  std::mt19937_64 &engine() { return engine_; }

private:
  std::mt19937_64 engine_;
};

} // namespace evf
