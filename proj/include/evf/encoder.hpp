// SPDX-License-Identifier: Apache-2.0
/**
 * @file   encoder.hpp
 * @brief  Hierarchical event encoder: conv stem, segment pooling, latent
 *         interaction with relative-distance bias, readout, boundary head.
 *
 * Shapes (F frames, M segments, d width, e embedding size):
 *
 *   waveform C x T --stem--> features F x d --pool--> R M x d
 *   R --interact--> R_hat M x d --readout--> z (e, unit norm)
 *   features --boundary head--> p (F, each in (0,1))
 */
#pragma once

#include "evf/segmentation.hpp"
#include "evf/tensor.hpp"
#include "evf/waveform.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace evf {

struct StemLayer {
  std::size_t out_channels = 8;
  std::size_t kernel = 5;
  std::size_t stride = 2;
  bool operator==(const StemLayer &) const = default;
};

enum class PoolMode { Mean, Attention };

std::string pool_mode_name(PoolMode mode);
PoolMode pool_mode_from_name(const std::string &name);

struct EncoderConfig {
  std::size_t in_channels = 1;
  std::vector<StemLayer> stem = {{8, 5, 2}, {16, 5, 2}, {32, 3, 2}};
  std::size_t width = 32; // d; equals the last stem layer's channels
  std::size_t key_dim = 32;
  std::size_t num_buckets = 16;
  PoolMode pooling = PoolMode::Mean;
  std::size_t readout_hidden = 32;
  std::size_t embed_dim = 32;
  bool use_interaction = true;
  double ln_eps = 1e-5;

  /// Product of stem strides.
  std::size_t downsample() const;
  void validate() const;
  bool operator==(const EncoderConfig &) const = default;
};

/// Learned tensors under stable dotted names (stem.0.weight, ...).
class EncoderParams {
public:
  EncoderParams() = default;
  /// Deterministic initialization from @p seed.
  static EncoderParams init(const EncoderConfig &cfg, std::uint64_t seed);

  const Tensor &at(const std::string &name) const;
  Tensor &at(const std::string &name);
  bool contains(const std::string &name) const { return tensors_.count(name) != 0; }
  void set(const std::string &name, Tensor t) { tensors_[name] = std::move(t); }
  const std::map<std::string, Tensor> &tensors() const { return tensors_; }
  std::map<std::string, Tensor> &tensors() { return tensors_; }
  std::size_t num_scalars() const;

private:
  std::map<std::string, Tensor> tensors_;
};

struct SegmentEmbeddings {
  Tensor rows; // M x d
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::vector<double> centers; // frame units
};

struct EncodeResult {
  Tensor z;         // [embed_dim], unit norm
  SegmentEmbeddings segments;
  Tensor context;   // R_hat, M x d
  Tensor attention; // alpha, M x M (undefined when interaction is off)
  Tensor boundary;  // [F]
};

/**
 * Signed log-spaced bucket of a frame offset. Half the buckets cover
 * nonnegative offsets, half negative ones; magnitudes at or beyond F/2
 * saturate. For nonzero delta, bucket(-delta) == num_buckets - 1 - bucket(delta).
 */
std::size_t relative_bucket(double delta, std::size_t num_frames, std::size_t num_buckets);

class EventEncoder {
public:
  EventEncoder(EncoderConfig cfg, EncoderParams params);
  static EventEncoder create(const EncoderConfig &cfg, std::uint64_t seed) {
    return {cfg, EncoderParams::init(cfg, seed)};
  }

  const EncoderConfig &config() const { return cfg_; }
  const EncoderParams &params() const { return params_; }
  EncoderParams &params() { return params_; }

  /// Waveform as a C x T tensor (no gradient).
  static Tensor as_tensor(const Waveform &x);

  /// Conv stem with layer norm and GELU per layer; returns F x d, F = T / D.
  Tensor extract_local_features(const Tensor &x) const;
  Tensor extract_local_features(const Waveform &x) const {
    return extract_local_features(as_tensor(x));
  }

  SegmentEmbeddings pool_segments(const Tensor &features, const Segmentation &seg) const;

  /// r_hat_m = r_m + sum_j alpha_mj V r_j with
  /// alpha = softmax_j(<Q r_m, K r_j> / sqrt(key_dim) + bias[bucket(c_m - c_j)]).
  /// When @p attention is non-null it receives alpha.
  Tensor interact(const SegmentEmbeddings &r, std::size_t num_frames,
                  Tensor *attention = nullptr) const;

  /// Row mean, two-layer perceptron, l2 normalization.
  Tensor readout(const Tensor &context) const;

  Tensor predict_boundaries(const Tensor &features) const;

  EncodeResult encode(const Tensor &x, const Segmentation &seg) const;
  EncodeResult encode(const Waveform &x, const Segmentation &seg) const {
    return encode(as_tensor(x), seg);
  }

private:
  EncoderConfig cfg_;
  EncoderParams params_;
};

} // namespace evf
