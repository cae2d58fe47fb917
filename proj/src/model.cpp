// SPDX-License-Identifier: Apache-2.0
#include "evf/model.hpp"

#include "evf/errors.hpp"
#include "evf/rng.hpp"

namespace evf {

std::string parameter_prefix(std::size_t modality, std::size_t num_modalities) {
  return num_modalities > 1 ? "mod" + std::to_string(modality) + "." : "";
}

Model Model::create(const EncoderConfig &cfg, std::size_t num_modalities, std::uint64_t seed) {
  if (num_modalities == 0)
    throw std::invalid_argument("model needs at least one modality");
  Model model;
  for (std::size_t m = 0; m < num_modalities; ++m) {
    Rng rng(seed, {0x6d6f64656cu, m});
    model.encoders_.push_back(EventEncoder::create(cfg, rng.next_u64()));
  }
  return model;
}

Model Model::from_arrays(const EncoderConfig &cfg, std::size_t num_modalities,
                         const std::map<std::string, NamedArray> &arrays) {
  // Shapes come from a fresh initialization of the same config.
  Model model = create(cfg, num_modalities, 0);
  for (std::size_t m = 0; m < num_modalities; ++m) {
    const auto prefix = parameter_prefix(m, num_modalities);
    for (auto &[name, t] : model.encoders_[m].params().tensors()) {
      auto it = arrays.find(prefix + name);
      if (it == arrays.end())
        throw CorruptDataError("checkpoint lacks parameter '" + prefix + name + "'");
      if (it->second.shape != t.shape())
        throw CorruptDataError("checkpoint parameter '" + prefix + name + "' has shape " +
                               shape_str(it->second.shape) + ", config expects " +
                               shape_str(t.shape()));
      t = Tensor(it->second.shape, it->second.values, true);
    }
  }
  return model;
}

NamedTensors Model::parameters() const {
  NamedTensors out;
  for (std::size_t m = 0; m < encoders_.size(); ++m) {
    const auto prefix = parameter_prefix(m, encoders_.size());
    for (const auto &[name, t] : encoders_[m].params().tensors())
      out.emplace_back(prefix + name, t);
  }
  return out;
}

void Model::export_arrays(std::map<std::string, NamedArray> &out) const {
  for (const auto &[name, t] : parameters())
    out[name] = NamedArray{t.shape(), std::vector<double>(t.data().begin(), t.data().end())};
}

} // namespace evf
