// SPDX-License-Identifier: Apache-2.0
/**
 * @file   checkpoint.hpp
 * @brief  Checkpoint file: inspectable JSON header plus binary tensor payload.
 *
 *   EVCK 1\n
 *   <header byte count>\n
 *   <header JSON>\n
 *   <payload: concatenated little-endian f64 tensors>
 *   <CRC32 of payload, u32 little-endian>
 *
 * The header holds the experiment config, the step, the RNG state and a
 * directory of {name, dtype, shape, offset, size} entries with byte offsets
 * relative to the payload start.
 */
#pragma once

#include "evf/config.hpp"
#include "evf/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace evf {

struct NamedArray {
  Shape shape;
  std::vector<double> values;
  bool operator==(const NamedArray &) const = default;
};

struct Checkpoint {
  ExperimentConfig config;
  std::size_t step = 0;
  std::uint64_t seed = 0; // every random stream is keyed by (seed, step, ...)
  nlohmann::json run = nlohmann::json::object(); // data path, output directory
  std::map<std::string, NamedArray> tensors;
};

std::uint32_t crc32_of(std::string_view bytes);

std::string serialize_checkpoint(const Checkpoint &ckpt);
/// Throws CorruptDataError (prefixed with @p origin) on any structural or
/// checksum failure.
Checkpoint parse_checkpoint(const std::string &bytes, const std::string &origin);

void write_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt);
Checkpoint read_checkpoint(const std::filesystem::path &path);

/// Byte range of the tensor payload inside a serialized checkpoint.
std::string_view checkpoint_payload(std::string_view bytes);

} // namespace evf
