// SPDX-License-Identifier: Apache-2.0
#include "evf/rng.hpp"

namespace evf {

namespace {

std::mt19937_64 seeded(std::uint64_t seed, const std::uint64_t *ids,
                       std::size_t n) {
  std::vector<std::uint32_t> words;
  words.reserve(2 * (n + 1) + 1);
  words.push_back(static_cast<std::uint32_t>(n));
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (std::size_t i = 0; i < n; ++i)
    push(ids[i]);
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

} // namespace

Rng::Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream)
    : engine_(seeded(seed, stream.begin(), stream.size())) {}

Rng::Rng(std::uint64_t seed, const std::vector<std::uint64_t> &stream)
    : engine_(seeded(seed, stream.data(), stream.size())) {}

double Rng::uniform() {
  return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
}

double Rng::uniform(double lo, double hi) {
  if (lo == hi)
    return lo;
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

double Rng::normal(double mean, double stddev) {
  if (stddev == 0.0)
    return mean;
  return std::normal_distribution<double>(mean, stddev)(engine_);
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
}

unsigned Rng::poisson(double mean) {
  if (mean <= 0.0)
    return 0;
  return std::poisson_distribution<unsigned>(mean)(engine_);
}

} // namespace evf
