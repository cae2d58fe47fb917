// SPDX-License-Identifier: Apache-2.0
#include "evf/checkpoint.hpp"

#include "evf/dataset.hpp"
#include "evf/errors.hpp"

#include <zlib.h>

#include <bit>
#include <climits>

namespace evf {

using nlohmann::json;

namespace {

constexpr std::string_view kMagicLine = "EVCK 1\n";

void put_u64(std::string &out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

struct Layout {
  std::size_t header_begin = 0, header_size = 0, payload_begin = 0, payload_size = 0;
};

Layout locate(std::string_view bytes, const std::string &origin) {
  auto corrupt = [&](const std::string &why) {
    return CorruptDataError(origin + ": " + why);
  };
  if (bytes.substr(0, kMagicLine.size()) != kMagicLine)
    throw corrupt("bad checkpoint magic");
  const std::size_t len_end = bytes.find('\n', kMagicLine.size());
  if (len_end == std::string_view::npos || len_end - kMagicLine.size() > 12)
    throw corrupt("missing header length");
  std::size_t header_size = 0;
  for (std::size_t i = kMagicLine.size(); i < len_end; ++i) {
    const char c = bytes[i];
    if (c < '0' || c > '9')
      throw corrupt("malformed header length");
    header_size = header_size * 10 + static_cast<std::size_t>(c - '0');
  }
  Layout l;
  l.header_begin = len_end + 1;
  l.header_size = header_size;
  // header, newline, payload, 4-byte checksum
  if (bytes.size() < l.header_begin + header_size + 1 + 4)
    throw corrupt("truncated checkpoint");
  if (bytes[l.header_begin + header_size] != '\n')
    throw corrupt("header not newline-terminated");
  l.payload_begin = l.header_begin + header_size + 1;
  l.payload_size = bytes.size() - l.payload_begin - 4;
  return l;
}

} // namespace

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto *p = reinterpret_cast<const Bytef *>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, UINT_MAX));
    crc = crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string serialize_checkpoint(const Checkpoint &ckpt) {
  std::string payload;
  json directory = json::array();
  for (const auto &[name, arr] : ckpt.tensors) {
    if (shape_numel(arr.shape) != arr.values.size())
      throw std::invalid_argument("checkpoint tensor '" + name + "' has shape " +
                                  shape_str(arr.shape) + " but " +
                                  std::to_string(arr.values.size()) + " values");
    const std::size_t offset = payload.size();
    for (double v : arr.values)
      put_u64(payload, std::bit_cast<std::uint64_t>(v));
    directory.push_back({{"name", name},
                         {"dtype", "f64"},
                         {"shape", arr.shape},
                         {"offset", offset},
                         {"size", payload.size() - offset}});
  }
  json header = {{"format", "evfield-checkpoint"},
                 {"config", to_json(ckpt.config)},
                 {"step", ckpt.step},
                 {"rng", {{"seed", ckpt.seed}, {"next_step", ckpt.step + 1}}},
                 {"run", ckpt.run},
                 {"tensors", directory}};
  const std::string text = header.dump(1);
  std::string out(kMagicLine);
  out += std::to_string(text.size());
  out += '\n';
  out += text;
  out += '\n';
  out += payload;
  const std::uint32_t crc = crc32_of(payload);
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((crc >> (8 * i)) & 0xffu));
  return out;
}

std::string_view checkpoint_payload(std::string_view bytes) {
  const auto l = locate(bytes, "checkpoint");
  return bytes.substr(l.payload_begin, l.payload_size);
}

Checkpoint parse_checkpoint(const std::string &bytes, const std::string &origin) {
  auto corrupt = [&](const std::string &why) {
    return CorruptDataError(origin + ": " + why);
  };
  const auto l = locate(bytes, origin);
  const std::string_view payload(bytes.data() + l.payload_begin, l.payload_size);
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(
                  static_cast<unsigned char>(bytes[l.payload_begin + l.payload_size + i]))
              << (8 * i);
  if (crc32_of(payload) != stored)
    throw corrupt("payload checksum mismatch");

  json header;
  try {
    header = json::parse(bytes.substr(l.header_begin, l.header_size));
  } catch (const json::exception &e) {
    throw corrupt(std::string("unreadable header: ") + e.what());
  }
  Checkpoint ckpt;
  try {
    ckpt.config = config_from_json(header.at("config"));
    ckpt.step = header.at("step").get<std::size_t>();
    ckpt.seed = header.at("rng").at("seed").get<std::uint64_t>();
    ckpt.run = header.at("run");
    for (const auto &entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      if (entry.at("dtype").get<std::string>() != "f64")
        throw corrupt("tensor '" + name + "' has unsupported dtype");
      NamedArray arr;
      arr.shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto size = entry.at("size").get<std::size_t>();
      if (size != 8 * shape_numel(arr.shape) || offset > payload.size() ||
          size > payload.size() - offset)
        throw corrupt("tensor '" + name + "' lies outside the payload");
      arr.values.resize(shape_numel(arr.shape));
      for (std::size_t i = 0; i < arr.values.size(); ++i)
        arr.values[i] = std::bit_cast<double>(get_u64(payload, offset + 8 * i));
      ckpt.tensors.emplace(name, std::move(arr));
    }
  } catch (const json::exception &e) {
    throw corrupt(std::string("malformed header: ") + e.what());
  } catch (const ConfigError &e) {
    throw corrupt(std::string("invalid config in header: ") + e.what());
  }
  return ckpt;
}

void write_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt) {
  atomic_write(path, serialize_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path &path) {
  return parse_checkpoint(read_file(path), path.string());
}

} // namespace evf
