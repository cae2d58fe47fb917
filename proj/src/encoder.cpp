// SPDX-License-Identifier: Apache-2.0
#include "evf/encoder.hpp"

#include "evf/errors.hpp"
#include "evf/ops.hpp"
#include "evf/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace evf {

namespace {

constexpr double kMaskedLogit = -1e30;

Tensor normal_tensor(Shape shape, double stddev, Rng &rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto &x : v)
    x = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(v), true);
}

std::string stem_name(std::size_t layer, const char *leaf) {
  return "stem." + std::to_string(layer) + "." + leaf;
}

} // namespace

std::string pool_mode_name(PoolMode mode) {
  return mode == PoolMode::Mean ? "mean" : "attention";
}

PoolMode pool_mode_from_name(const std::string &name) {
  if (name == "mean")
    return PoolMode::Mean;
  if (name == "attention")
    return PoolMode::Attention;
  throw ConfigError("unknown pooling mode '" + name + "'");
}

std::size_t EncoderConfig::downsample() const {
  std::size_t d = 1;
  for (const auto &l : stem)
    d *= l.stride;
  return d;
}

void EncoderConfig::validate() const {
  if (in_channels == 0)
    throw ConfigError("encoder.in_channels must be positive");
  if (stem.empty())
    throw ConfigError("encoder.stem needs at least one layer");
  for (const auto &l : stem)
    if (l.out_channels == 0 || l.kernel == 0 || l.stride == 0 || l.kernel % 2 == 0)
      throw ConfigError("encoder.stem layers need positive channels/stride and odd kernels");
  if (width == 0 || stem.back().out_channels != width)
    throw ConfigError("encoder.width must equal the last stem layer's out_channels");
  if (key_dim == 0 || readout_hidden == 0 || embed_dim == 0)
    throw ConfigError("encoder dimensions must be positive");
  if (num_buckets < 4 || num_buckets % 2 != 0)
    throw ConfigError("encoder.num_buckets must be even and at least 4");
  if (!(ln_eps > 0.0))
    throw ConfigError("encoder.ln_eps must be positive");
}

EncoderParams EncoderParams::init(const EncoderConfig &cfg, std::uint64_t seed) {
  cfg.validate();
  EncoderParams p;
  Rng rng(seed, {0x656e63u});
  std::size_t cin = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.stem.size(); ++i) {
    const auto &l = cfg.stem[i];
    const double fan_in = static_cast<double>(cin * l.kernel);
    p.set(stem_name(i, "weight"),
          normal_tensor({l.out_channels, cin, l.kernel}, std::sqrt(2.0 / fan_in), rng));
    p.set(stem_name(i, "bias"), Tensor::zeros({l.out_channels, 1}, true));
    p.set(stem_name(i, "ln_gain"), Tensor::ones({l.out_channels, 1}, true));
    p.set(stem_name(i, "ln_bias"), Tensor::zeros({l.out_channels, 1}, true));
    cin = l.out_channels;
  }
  const auto d = cfg.width;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  if (cfg.pooling == PoolMode::Attention)
    p.set("pool.query", normal_tensor({d}, inv_sqrt_d, rng));
  p.set("interact.query", normal_tensor({d, cfg.key_dim}, inv_sqrt_d, rng));
  p.set("interact.key", normal_tensor({d, cfg.key_dim}, inv_sqrt_d, rng));
  p.set("interact.value", normal_tensor({d, d}, 0.5 * inv_sqrt_d, rng));
  p.set("interact.bias_table", Tensor::zeros({cfg.num_buckets}, true));
  p.set("readout.0.weight", normal_tensor({d, cfg.readout_hidden}, std::sqrt(2.0 / d), rng));
  p.set("readout.0.bias", Tensor::zeros({1, cfg.readout_hidden}, true));
  p.set("readout.1.weight",
        normal_tensor({cfg.readout_hidden, cfg.embed_dim},
                      1.0 / std::sqrt(static_cast<double>(cfg.readout_hidden)), rng));
  p.set("readout.1.bias", Tensor::zeros({1, cfg.embed_dim}, true));
  p.set("boundary.weight", normal_tensor({d, 1}, inv_sqrt_d, rng));
  p.set("boundary.bias", Tensor::full({1}, -1.0, true));
  return p;
}

const Tensor &EncoderParams::at(const std::string &name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end())
    throw std::out_of_range("missing encoder parameter '" + name + "'");
  return it->second;
}

Tensor &EncoderParams::at(const std::string &name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end())
    throw std::out_of_range("missing encoder parameter '" + name + "'");
  return it->second;
}

std::size_t EncoderParams::num_scalars() const {
  std::size_t n = 0;
  for (const auto &[_, t] : tensors_)
    n += t.numel();
  return n;
}

std::size_t relative_bucket(double delta, std::size_t num_frames, std::size_t num_buckets) {
  const std::size_t half = num_buckets / 2;
  const double mag = std::fabs(delta);
  const double max_dist = std::max(2.0, static_cast<double>(num_frames) / 2.0);
  std::size_t level;
  if (mag < 1.0) {
    level = 0;
  } else if (mag >= max_dist) {
    level = half - 1;
  } else {
    const double scaled = std::log(mag) / std::log(max_dist) * static_cast<double>(half - 2);
    level = std::min(half - 2, 1 + static_cast<std::size_t>(scaled));
  }
  return delta >= 0.0 ? half + level : half - 1 - level;
}

EventEncoder::EventEncoder(EncoderConfig cfg, EncoderParams params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
}

Tensor EventEncoder::as_tensor(const Waveform &x) {
  return Tensor({x.channels, x.length}, x.data, false);
}

Tensor EventEncoder::extract_local_features(const Tensor &x) const {
  if (x.dim() != 2 || x.size(0) != cfg_.in_channels)
    throw std::invalid_argument("encoder expects " + std::to_string(cfg_.in_channels) +
                                " x T input, got " + shape_str(x.shape()));
  const std::size_t t = x.size(1);
  const std::size_t down = cfg_.downsample();
  if (t % down != 0)
    throw std::invalid_argument("input length " + std::to_string(t) +
                                " is not divisible by the downsample factor " +
                                std::to_string(down));
  Tensor h = x;
  for (std::size_t i = 0; i < cfg_.stem.size(); ++i) {
    const auto &l = cfg_.stem[i];
    h = conv1d(h, params_.at(stem_name(i, "weight")), l.stride, l.kernel / 2);
    h = add(h, params_.at(stem_name(i, "bias")));
    // Layer norm across channels at each time step.
    auto centered = sub(h, mean(h, 0, true));
    auto stddev = sqrt(add_scalar(var(h, 0, true), cfg_.ln_eps));
    h = div(centered, stddev);
    h = add(mul(h, params_.at(stem_name(i, "ln_gain"))), params_.at(stem_name(i, "ln_bias")));
    h = gelu(h);
  }
  if (h.size(1) != t / down)
    throw std::logic_error("stem produced " + std::to_string(h.size(1)) + " frames, expected " +
                           std::to_string(t / down));
  return transpose(h);
}

SegmentEmbeddings EventEncoder::pool_segments(const Tensor &features,
                                              const Segmentation &seg) const {
  const std::size_t frames = features.size(0);
  if (seg.num_frames() != frames)
    throw std::invalid_argument("segmentation covers " + std::to_string(seg.num_frames()) +
                                " frames but features have " + std::to_string(frames));
  const std::size_t m = seg.num_segments();
  SegmentEmbeddings out;
  for (std::size_t s = 0; s < m; ++s) {
    out.spans.push_back(seg.span(s));
    out.centers.push_back(seg.center(s));
  }
  if (cfg_.pooling == PoolMode::Mean) {
    std::vector<double> pool(m * frames, 0.0);
    for (std::size_t s = 0; s < m; ++s) {
      auto [a, b] = out.spans[s];
      const double w = 1.0 / static_cast<double>(b - a);
      for (std::size_t f = a; f < b; ++f)
        pool[s * frames + f] = w;
    }
    out.rows = matmul(Tensor::matrix(m, frames, std::move(pool)), features);
  } else {
    std::vector<double> mask(m * frames, kMaskedLogit);
    for (std::size_t s = 0; s < m; ++s)
      for (std::size_t f = out.spans[s].first; f < out.spans[s].second; ++f)
        mask[s * frames + f] = 0.0;
    const auto &q = params_.at("pool.query");
    auto scores = matmul(features, reshape(q, {cfg_.width, 1}));
    scores = mul_scalar(scores, 1.0 / std::sqrt(static_cast<double>(cfg_.width)));
    auto logits = add(Tensor::matrix(m, frames, std::move(mask)), transpose(scores));
    out.rows = matmul(softmax(logits, 1), features);
  }
  return out;
}

Tensor EventEncoder::interact(const SegmentEmbeddings &r, std::size_t num_frames,
                              Tensor *attention) const {
  const std::size_t m = r.centers.size();
  std::vector<std::size_t> buckets(m * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      buckets[i * m + j] =
          relative_bucket(r.centers[i] - r.centers[j], num_frames, cfg_.num_buckets);
  auto q = matmul(r.rows, params_.at("interact.query"));
  auto k = matmul(r.rows, params_.at("interact.key"));
  auto logits = mul_scalar(matmul(q, transpose(k)),
                           1.0 / std::sqrt(static_cast<double>(cfg_.key_dim)));
  logits = add(logits, gather(params_.at("interact.bias_table"), buckets, {m, m}));
  auto alpha = softmax(logits, 1);
  if (attention)
    *attention = alpha;
  auto values = matmul(r.rows, params_.at("interact.value"));
  return add(r.rows, matmul(alpha, values));
}

Tensor EventEncoder::readout(const Tensor &context) const {
  auto pooled = mean(context, 0, true);
  auto hidden = gelu(add(matmul(pooled, params_.at("readout.0.weight")),
                         params_.at("readout.0.bias")));
  auto out = add(matmul(hidden, params_.at("readout.1.weight")), params_.at("readout.1.bias"));
  return l2_normalize(reshape(out, {cfg_.embed_dim}), 0);
}

Tensor EventEncoder::predict_boundaries(const Tensor &features) const {
  auto logits = add(matmul(features, params_.at("boundary.weight")), params_.at("boundary.bias"));
  return sigmoid(reshape(logits, {features.size(0)}));
}

EncodeResult EventEncoder::encode(const Tensor &x, const Segmentation &seg) const {
  EncodeResult out;
  auto features = extract_local_features(x);
  out.segments = pool_segments(features, seg);
  if (cfg_.use_interaction)
    out.context = interact(out.segments, features.size(0), &out.attention);
  else
    out.context = out.segments.rows;
  out.z = readout(out.context);
  out.boundary = predict_boundaries(features);
  return out;
}

} // namespace evf
