// SPDX-License-Identifier: Apache-2.0
// Central finite-difference gradient checker used across the unit tests.
#pragma once

#include "evf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace evf::testing {

// Max abs deviation between analytic and numeric gradients over all inputs,
// divided by the largest gradient magnitude seen (inf-norm relative error).
inline double gradcheck(const std::function<Tensor()> &loss_fn,
                        std::vector<Tensor> inputs, double h = 1e-5) {
  for (auto &in : inputs)
    in.zero_grad();
  loss_fn().backward();
  double max_diff = 0.0, scale = 0.0;
  for (auto &in : inputs) {
    std::vector<double> analytic(in.numel(), 0.0);
    if (in.has_grad())
      std::copy(in.grad().begin(), in.grad().end(), analytic.begin());
    auto values = in.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_fn().item();
      values[i] = saved - h;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      max_diff = std::max(max_diff, std::fabs(numeric - analytic[i]));
      scale = std::max({scale, std::fabs(numeric), std::fabs(analytic[i])});
    }
  }
  return scale > 0.0 ? max_diff / scale : max_diff;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64 &gen, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto &x : v)
    x = dist(gen);
  return Tensor(std::move(shape), std::move(v), true);
}

} // namespace evf::testing
