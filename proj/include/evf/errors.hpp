// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace evf {

/// Invalid configuration or arguments; maps to the CLI usage exit code.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Unreadable, truncated or checksum-failing files.
class CorruptDataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Non-finite losses or gradients during training.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failures; message carries the offending path.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace evf
