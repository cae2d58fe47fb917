// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "evf/checkpoint.hpp"
#include "evf/encoder.hpp"

#include <string>
#include <utility>
#include <vector>

namespace evf {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// One encoder per trained modality. Parameter names carry a "mod<k>."
/// prefix only when there is more than one encoder.
class Model {
public:
  Model() = default;
  static Model create(const EncoderConfig &cfg, std::size_t num_modalities, std::uint64_t seed);
  /// Rebuilds a model from checkpoint tensors; throws CorruptDataError when a
  /// parameter is missing or has the wrong shape.
  static Model from_arrays(const EncoderConfig &cfg, std::size_t num_modalities,
                           const std::map<std::string, NamedArray> &arrays);

  std::size_t num_modalities() const { return encoders_.size(); }
  const EncoderConfig &config() const { return encoders_.at(0).config(); }
  const EventEncoder &encoder(std::size_t m = 0) const { return encoders_.at(m); }
  EventEncoder &encoder(std::size_t m = 0) { return encoders_.at(m); }

  /// Handles onto the live parameters, sorted by name.
  NamedTensors parameters() const;
  void export_arrays(std::map<std::string, NamedArray> &out) const;

private:
  std::vector<EventEncoder> encoders_;
};

std::string parameter_prefix(std::size_t modality, std::size_t num_modalities);

} // namespace evf
