// SPDX-License-Identifier: Apache-2.0
/**
 * @file   losses.hpp
 * @brief  Consistency, segmentation-regularization and multimodal objectives.
 *
 * All terms are differentiable Tensor expressions returning scalars of shape
 * [1]. Boundary probabilities are treated as Bernoulli relaxations and every
 * segmentation term is normalized by the frame count.
 */
#pragma once

#include "evf/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace evf {

struct LossWeights {
  double temperature = 0.1;
  double sparse = 0.01;
  double smooth = 0.01;
  double agree = 0.1;
  double align = 1.0;

  void validate() const;
  bool operator==(const LossWeights &) const = default;
};

/// B x B, row-major; entry (i, j) set means j is not a valid negative for
/// anchor i. The diagonal (the positive) is ignored.
using ExclusionMask = std::vector<std::uint8_t>;

/**
 * Per-anchor InfoNCE losses for the direction Z1 -> Z2: for anchor i,
 * -log softmax_j(<z1_i, z2_j> / tau)[i] over the positive and every unmasked
 * negative. Throws std::invalid_argument if some anchor has no negative left.
 */
Tensor info_nce_per_anchor(const Tensor &z1, const Tensor &z2, double tau,
                           const ExclusionMask &mask = {});

/// Symmetrized mean: (L(Z1 -> Z2) + L(Z2 -> Z1)) / 2.
Tensor info_nce(const Tensor &z1, const Tensor &z2, double tau,
                const ExclusionMask &mask = {});

/// Mean boundary probability.
Tensor sparsity_term(const Tensor &p);

/// Total variation of p divided by F - 1. Needs F >= 2.
Tensor smoothness_term(const Tensor &p);

/// Mean over frames of KL(Bern(p1) || Bern(p2)).
Tensor kl_agreement(const Tensor &p1, const Tensor &p2);

/// Mean over rows and unordered modality pairs of 1 - cos(z^(m), z^(m')).
Tensor multimodal_align(const std::vector<Tensor> &per_modality);

/// Terms entering the total. Undefined tensors are treated as absent (zero).
struct LossParts {
  Tensor cons;
  Tensor sparsity;
  Tensor smoothness;
  Tensor agree;
  std::vector<Tensor> cons_mod; // per-modality consistency, multimodal runs
  Tensor align;
};

/// cons + l_sparse*sparsity + l_smooth*smoothness + l_agree*agree
///      + sum(cons_mod) + l_align*align.
/// Throws NumericError naming the first non-finite term.
Tensor total_loss(const LossParts &parts, const LossWeights &w);

} // namespace evf
