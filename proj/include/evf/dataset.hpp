// SPDX-License-Identifier: Apache-2.0
/**
 * @file   dataset.hpp
 * @brief  In-memory corpus plus the on-disk container and sidecar formats.
 *
 * Container layout, all little-endian:
 *
 *   "EVFD" | version u32 | channels u32 | length u32 | sample_rate f32 |
 *   count u32 | flags u32 (bit 0: multimodal pairing)
 *   count x { subject u32 | modality u32 | C*T f32 }
 *
 * The sidecar is one JSON object per line, one line per record, holding the
 * ground-truth events and dominant label. It is only consumed by evaluation.
 */
#pragma once

#include "evf/synthgen.hpp"
#include "evf/waveform.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace evf {

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::uint32_t kFlagMultimodal = 1u;

struct Dataset {
  std::uint32_t channels = 1;
  std::uint32_t length = 0;
  float sample_rate = 1.0f;
  bool multimodal = false;
  std::vector<Waveform> records;
  std::vector<RecordTruth> truth; // empty when no sidecar was loaded

  std::size_t num_modalities() const;
  /// Number of training samples: records, or record pairs when multimodal.
  std::size_t num_samples() const;
  /// Record index of modality @p m for sample @p i.
  std::size_t record_index(std::size_t sample, std::size_t modality) const;
  bool has_labels() const { return truth.size() == records.size(); }
  int label(std::size_t record) const;
};

std::filesystem::path sidecar_path(const std::filesystem::path &container);

/// Writes via a temporary file and rename. Throws IoError with the path.
void write_container(const std::filesystem::path &path, const Dataset &ds);
/// Throws CorruptDataError on bad magic, version or payload size.
Dataset read_container(const std::filesystem::path &path);

void write_sidecar(const std::filesystem::path &path,
                   const std::vector<RecordTruth> &truth);
std::vector<RecordTruth> read_sidecar(const std::filesystem::path &path);

/// Container plus sidecar next to it.
void write_dataset(const std::filesystem::path &path, const Dataset &ds);
/// Container plus sidecar when present.
Dataset read_dataset(const std::filesystem::path &path);

/// Writes @p bytes to @p path atomically (temp file + rename).
void atomic_write(const std::filesystem::path &path, const std::string &bytes);
std::string read_file(const std::filesystem::path &path);

} // namespace evf
