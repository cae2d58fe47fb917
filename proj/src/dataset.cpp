// SPDX-License-Identifier: Apache-2.0
#include "evf/dataset.hpp"

#include "evf/errors.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace evf {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'F', 'D'};
constexpr std::size_t kHeaderBytes = 4 + 6 * 4;

void put_u32(std::string &out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string &out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(const std::string &in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

float get_f32(const std::string &in, std::size_t at) {
  return std::bit_cast<float>(get_u32(in, at));
}

nlohmann::json event_to_json(const LatentEvent &e) {
  return {{"class", e.class_id}, {"tau", e.tau},         {"delta", e.delta},
          {"a", e.amplitude},    {"frequency", e.frequency}, {"phase", e.phase}};
}

LatentEvent event_from_json(const nlohmann::json &j) {
  LatentEvent e;
  e.class_id = j.at("class").get<std::uint32_t>();
  e.tau = j.at("tau").get<double>();
  e.delta = j.at("delta").get<double>();
  e.amplitude = j.at("a").get<double>();
  e.frequency = j.at("frequency").get<double>();
  e.phase = j.at("phase").get<double>();
  return e;
}

} // namespace

std::size_t Dataset::num_modalities() const {
  if (!multimodal)
    return 1;
  std::uint32_t max_mod = 0;
  for (const auto &r : records)
    max_mod = std::max(max_mod, r.modality_id);
  return max_mod + 1;
}

std::size_t Dataset::num_samples() const {
  return records.size() / num_modalities();
}

std::size_t Dataset::record_index(std::size_t sample, std::size_t modality) const {
  return sample * num_modalities() + modality;
}

int Dataset::label(std::size_t record) const {
  if (!has_labels())
    throw std::logic_error("dataset has no sidecar labels");
  return truth[record].label;
}

std::filesystem::path sidecar_path(const std::filesystem::path &container) {
  auto p = container;
  p += ".events.jsonl";
  return p;
}

void atomic_write(const std::filesystem::path &path, const std::string &bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw IoError("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
      throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() +
                  ": " + ec.message());
}

std::string read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_container(const std::filesystem::path &path, const Dataset &ds) {
  std::string out;
  out.reserve(kHeaderBytes + ds.records.size() * (8 + 4 * ds.channels * ds.length));
  out.append(kMagic, 4);
  put_u32(out, kContainerVersion);
  put_u32(out, ds.channels);
  put_u32(out, ds.length);
  put_f32(out, ds.sample_rate);
  put_u32(out, static_cast<std::uint32_t>(ds.records.size()));
  put_u32(out, ds.multimodal ? kFlagMultimodal : 0u);
  for (const auto &r : ds.records) {
    if (r.channels != ds.channels || r.length != ds.length)
      throw std::invalid_argument("record shape does not match container header");
    put_u32(out, r.subject_id);
    put_u32(out, r.modality_id);
    for (double v : r.data)
      put_f32(out, static_cast<float>(v));
  }
  atomic_write(path, out);
}

Dataset read_container(const std::filesystem::path &path) {
  const std::string in = read_file(path);
  auto corrupt = [&](const std::string &why) {
    return CorruptDataError(path.string() + ": " + why);
  };
  if (in.size() < kHeaderBytes)
    throw corrupt("truncated header");
  if (std::memcmp(in.data(), kMagic, 4) != 0)
    throw corrupt("bad magic");
  if (get_u32(in, 4) != kContainerVersion)
    throw corrupt("unsupported version " + std::to_string(get_u32(in, 4)));
  Dataset ds;
  ds.channels = get_u32(in, 8);
  ds.length = get_u32(in, 12);
  ds.sample_rate = get_f32(in, 16);
  const std::uint32_t count = get_u32(in, 20);
  ds.multimodal = (get_u32(in, 24) & kFlagMultimodal) != 0;
  if (ds.channels == 0 || ds.length == 0 || !is_power_of_two(ds.length))
    throw corrupt("invalid channel count or length");
  const std::size_t record_bytes = 8 + 4ull * ds.channels * ds.length;
  if (in.size() != kHeaderBytes + count * record_bytes)
    throw corrupt("payload size " + std::to_string(in.size() - kHeaderBytes) +
                  " does not match " + std::to_string(count) + " records");
  ds.records.reserve(count);
  std::size_t at = kHeaderBytes;
  for (std::uint32_t i = 0; i < count; ++i) {
    Waveform w(ds.channels, ds.length, ds.sample_rate);
    w.subject_id = get_u32(in, at);
    w.modality_id = get_u32(in, at + 4);
    at += 8;
    for (auto &v : w.data) {
      v = get_f32(in, at);
      at += 4;
    }
    ds.records.push_back(std::move(w));
  }
  return ds;
}

void write_sidecar(const std::filesystem::path &path,
                   const std::vector<RecordTruth> &truth) {
  std::string out;
  for (const auto &t : truth) {
    nlohmann::json events = nlohmann::json::array();
    for (const auto &e : t.events)
      events.push_back(event_to_json(e));
    nlohmann::json rec = {{"index", t.index},       {"pair", t.pair},
                          {"subject", t.subject},   {"modality", t.modality},
                          {"label", t.label},       {"events", events}};
    out += rec.dump();
    out += '\n';
  }
  atomic_write(path, out);
}

std::vector<RecordTruth> read_sidecar(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open for reading: " + path.string());
  std::vector<RecordTruth> truth;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty())
      continue;
    try {
      auto j = nlohmann::json::parse(line);
      RecordTruth t;
      t.index = j.at("index").get<std::uint32_t>();
      t.pair = j.at("pair").get<std::uint32_t>();
      t.subject = j.at("subject").get<std::uint32_t>();
      t.modality = j.at("modality").get<std::uint32_t>();
      t.label = j.at("label").get<int>();
      for (const auto &e : j.at("events"))
        t.events.push_back(event_from_json(e));
      truth.push_back(std::move(t));
    } catch (const nlohmann::json::exception &e) {
      throw CorruptDataError(path.string() + ":" + std::to_string(lineno) +
                             ": " + e.what());
    }
  }
  return truth;
}

void write_dataset(const std::filesystem::path &path, const Dataset &ds) {
  write_container(path, ds);
  write_sidecar(sidecar_path(path), ds.truth);
}

Dataset read_dataset(const std::filesystem::path &path) {
  auto ds = read_container(path);
  auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    ds.truth = read_sidecar(side);
    if (ds.truth.size() != ds.records.size())
      throw CorruptDataError(side.string() + ": sidecar has " +
                             std::to_string(ds.truth.size()) + " records, container " +
                             std::to_string(ds.records.size()));
  }
  return ds;
}

} // namespace evf
