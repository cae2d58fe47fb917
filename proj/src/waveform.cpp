// SPDX-License-Identifier: Apache-2.0
#include "evf/waveform.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace evf {

void Waveform::validate() const {
  if (channels == 0 || length == 0)
    throw std::invalid_argument("waveform must have channels and samples");
  if (!is_power_of_two(length))
    throw std::invalid_argument("waveform length " + std::to_string(length) +
                                " is not a power of two");
  if (data.size() != channels * length)
    throw std::invalid_argument("waveform data size does not match C x T");
  for (double v : data)
    if (!std::isfinite(v))
      throw std::invalid_argument("waveform contains non-finite samples");
}

} // namespace evf
