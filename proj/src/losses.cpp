// SPDX-License-Identifier: Apache-2.0
#include "evf/losses.hpp"

#include "evf/errors.hpp"
#include "evf/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace evf {

namespace {

constexpr double kMaskedLogit = -1e30;

void require_scalar_finite(const Tensor &t, const std::string &name) {
  if (!t.defined())
    return;
  for (double v : t.data())
    if (!std::isfinite(v))
      throw NumericError("non-finite loss term '" + name + "'");
}

Tensor as_scalar(const Tensor &t) { return reshape(t, {1}); }

} // namespace

void LossWeights::validate() const {
  if (!(temperature > 0.0))
    throw ConfigError("losses.temperature must be positive");
  if (!(sparse >= 0.0 && smooth >= 0.0 && agree >= 0.0 && align >= 0.0))
    throw ConfigError("loss weights must be nonnegative");
}

Tensor info_nce_per_anchor(const Tensor &z1, const Tensor &z2, double tau,
                           const ExclusionMask &mask) {
  if (z1.dim() != 2 || z1.shape() != z2.shape())
    throw std::invalid_argument("info_nce needs two B x d views of equal shape, got " +
                                shape_str(z1.shape()) + " and " + shape_str(z2.shape()));
  const std::size_t b = z1.size(0);
  if (b < 2)
    throw std::invalid_argument("info_nce needs at least two rows");
  if (!(tau > 0.0))
    throw std::invalid_argument("info_nce temperature must be positive");
  if (!mask.empty() && mask.size() != b * b)
    throw std::invalid_argument("exclusion mask must be B x B");

  auto logits = mul_scalar(matmul(z1, transpose(z2)), 1.0 / tau);
  if (!mask.empty()) {
    std::vector<double> additive(b * b, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
      std::size_t open = 0;
      for (std::size_t j = 0; j < b; ++j) {
        if (i == j)
          continue;
        if (mask[i * b + j])
          additive[i * b + j] = kMaskedLogit;
        else
          ++open;
      }
      if (open == 0)
        throw std::invalid_argument("every negative of anchor " + std::to_string(i) +
                                    " is masked");
    }
    logits = add(logits, Tensor::matrix(b, b, std::move(additive)));
  }
  std::vector<double> eye(b * b, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    eye[i * b + i] = 1.0;
  return neg(sum(mul(log_softmax(logits, 1), Tensor::matrix(b, b, std::move(eye))), 1));
}

Tensor info_nce(const Tensor &z1, const Tensor &z2, double tau, const ExclusionMask &mask) {
  ExclusionMask transposed;
  if (!mask.empty()) {
    const std::size_t b = z1.dim() == 2 ? z1.size(0) : 0;
    if (mask.size() != b * b)
      throw std::invalid_argument("exclusion mask must be B x B");
    transposed.resize(mask.size());
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j)
        transposed[j * b + i] = mask[i * b + j];
  }
  auto forward = mean(info_nce_per_anchor(z1, z2, tau, mask));
  auto backward_dir = mean(info_nce_per_anchor(z2, z1, tau, transposed));
  return as_scalar(mul_scalar(add(forward, backward_dir), 0.5));
}

Tensor sparsity_term(const Tensor &p) { return as_scalar(mean(p)); }

Tensor smoothness_term(const Tensor &p) {
  const std::size_t f = p.numel();
  if (f < 2)
    throw std::invalid_argument("smoothness needs at least two frames");
  auto flat = reshape(p, {f});
  auto diff = sub(slice(flat, 0, 1, f), slice(flat, 0, 0, f - 1));
  return as_scalar(mul_scalar(sum(abs(diff)), 1.0 / static_cast<double>(f - 1)));
}

Tensor kl_agreement(const Tensor &p1, const Tensor &p2) {
  if (p1.shape() != p2.shape())
    throw std::invalid_argument("kl_agreement needs equal shapes, got " + shape_str(p1.shape()) +
                                " and " + shape_str(p2.shape()));
  auto q1 = rsub_scalar(1.0, p1);
  auto q2 = rsub_scalar(1.0, p2);
  auto kl = add(mul(p1, sub(log(p1), log(p2))), mul(q1, sub(log(q1), log(q2))));
  return as_scalar(mean(kl));
}

Tensor multimodal_align(const std::vector<Tensor> &per_modality) {
  if (per_modality.size() < 2)
    throw std::invalid_argument("multimodal_align needs at least two modalities");
  std::vector<Tensor> normalized;
  for (const auto &z : per_modality) {
    if (z.dim() != 2 || z.shape() != per_modality[0].shape())
      throw std::invalid_argument("modality embeddings must share one B x d shape");
    normalized.push_back(l2_normalize(z, 1));
  }
  Tensor acc;
  std::size_t pairs = 0;
  for (std::size_t m = 0; m < normalized.size(); ++m)
    for (std::size_t k = m + 1; k < normalized.size(); ++k) {
      auto cos = sum(mul(normalized[m], normalized[k]), 1);
      auto term = mean(rsub_scalar(1.0, cos));
      acc = acc.defined() ? add(acc, term) : term;
      ++pairs;
    }
  return as_scalar(mul_scalar(acc, 1.0 / static_cast<double>(pairs)));
}

Tensor total_loss(const LossParts &parts, const LossWeights &w) {
  require_scalar_finite(parts.cons, "cons");
  require_scalar_finite(parts.sparsity, "sparsity");
  require_scalar_finite(parts.smoothness, "smoothness");
  require_scalar_finite(parts.agree, "agree");
  for (std::size_t m = 0; m < parts.cons_mod.size(); ++m)
    require_scalar_finite(parts.cons_mod[m], "cons_mod." + std::to_string(m));
  require_scalar_finite(parts.align, "align");

  Tensor total = Tensor::zeros({1});
  auto accumulate = [&](const Tensor &t, double weight) {
    if (t.defined())
      total = add(total, weight == 1.0 ? as_scalar(t) : mul_scalar(as_scalar(t), weight));
  };
  accumulate(parts.cons, 1.0);
  accumulate(parts.sparsity, w.sparse);
  accumulate(parts.smoothness, w.smooth);
  accumulate(parts.agree, w.agree);
  for (const auto &c : parts.cons_mod)
    accumulate(c, 1.0);
  accumulate(parts.align, w.align);
  require_scalar_finite(total, "total");
  return total;
}

} // namespace evf
