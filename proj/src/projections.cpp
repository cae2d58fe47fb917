// SPDX-License-Identifier: Apache-2.0
#include "evf/projections.hpp"

#include "evf/errors.hpp"
#include "evf/fft.hpp"

#include <algorithm>
#include <cmath>

namespace evf {

namespace {

template <class... Ts> struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts> Overloaded(Ts...) -> Overloaded<Ts...>;

// Frequency in Hz of FFT bin k (mirrored above N/2).
double bin_frequency(std::size_t k, std::size_t n, double sample_rate) {
  const std::size_t folded = k <= n / 2 ? k : n - k;
  return static_cast<double>(folded) * sample_rate / static_cast<double>(n);
}

// Runs @p edit on the spectrum of every channel and writes the real part back.
template <class Edit>
void edit_spectrum(Waveform &w, ApplyDiagnostics *diag, Edit edit) {
  for (std::size_t c = 0; c < w.channels; ++c) {
    auto ch = w.channel(c);
    auto spectrum = dft(std::span<const double>(ch.data(), ch.size()));
    edit(spectrum);
    double imag = 0.0;
    auto back = idft_real(spectrum, &imag);
    std::copy(back.begin(), back.end(), ch.begin());
    if (diag)
      diag->max_imag_residue = std::max(diag->max_imag_residue, imag);
  }
}

// Catmull-Rom through uniformly spaced knot values, parameter u in knot units.
double catmull_rom(const std::vector<double> &knots, double u) {
  const auto last = static_cast<std::ptrdiff_t>(knots.size()) - 1;
  auto at = [&](std::ptrdiff_t i) {
    return knots[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, last))];
  };
  auto i = static_cast<std::ptrdiff_t>(std::floor(u));
  i = std::clamp<std::ptrdiff_t>(i, 0, last - 1);
  const double s = u - static_cast<double>(i);
  const double p0 = at(i - 1), p1 = at(i), p2 = at(i + 1), p3 = at(i + 2);
  return 0.5 * ((2.0 * p1) + (-p0 + p2) * s +
                (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * s * s +
                (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * s * s * s);
}

void apply_one(const Transform &t, std::size_t index, std::uint64_t seed,
               Waveform &w, ApplyDiagnostics *diag) {
  const std::size_t n = w.length;
  Rng rng(seed, {index});
  std::visit(
      Overloaded{
          [](const xf::Identity &) {},
          [&](const xf::AmplitudeScale &a) {
            for (auto &v : w.data)
              v *= a.factor;
          },
          [&](const xf::SubbandFilter &f) {
            edit_spectrum(w, diag, [&](std::vector<Complex> &s) {
              for (std::size_t k = 0; k < n; ++k) {
                const double hz = bin_frequency(k, n, w.sample_rate);
                if (hz < f.f_lo || hz > f.f_hi)
                  s[k] = 0.0;
              }
            });
          },
          [&](const xf::PhasePerturb &p) {
            if (n < 4)
              return;
            const std::size_t half = n / 2;
            // Raw angles for bins 1..half-1, then a centred moving average.
            std::vector<double> raw(half, 0.0), theta(half, 0.0);
            for (std::size_t k = 1; k < half; ++k)
              raw[k] = rng.normal(0.0, p.sigma);
            const auto radius = static_cast<std::ptrdiff_t>(p.smooth_len / 2);
            for (std::size_t k = 1; k < half; ++k) {
              const auto lo = std::max<std::ptrdiff_t>(1, static_cast<std::ptrdiff_t>(k) - radius);
              const auto hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(half) - 1,
                                                       static_cast<std::ptrdiff_t>(k) + radius);
              double acc = 0.0;
              for (auto j = lo; j <= hi; ++j)
                acc += raw[static_cast<std::size_t>(j)];
              theta[k] = acc / static_cast<double>(hi - lo + 1);
            }
            edit_spectrum(w, diag, [&](std::vector<Complex> &s) {
              for (std::size_t k = 1; k < half; ++k) {
                s[k] *= std::polar(1.0, theta[k]);
                s[n - k] = std::conj(s[k]);
              }
            });
          },
          [&](const xf::FreqDropout &f) {
            const std::size_t half = n / 2;
            if (half < 2)
              return;
            const std::size_t len = std::min<std::size_t>(f.band_len, half - 1);
            std::vector<std::size_t> starts;
            for (std::uint32_t b = 0; b < f.num_bands; ++b)
              starts.push_back(static_cast<std::size_t>(
                  rng.uniform_int(1, static_cast<std::int64_t>(half - len))));
            edit_spectrum(w, diag, [&](std::vector<Complex> &s) {
              for (auto start : starts)
                for (std::size_t k = start; k < start + len; ++k) {
                  s[k] = 0.0;
                  s[n - k] = 0.0;
                }
            });
          },
          [&](const xf::TimeWarp &tw) {
            auto grid = warp_grid(n, tw, rng);
            for (std::size_t c = 0; c < w.channels; ++c) {
              auto ch = w.channel(c);
              std::vector<double> src(ch.begin(), ch.end());
              for (std::size_t i = 0; i < n; ++i) {
                const double pos = grid[i];
                auto lo = static_cast<std::size_t>(std::floor(pos));
                lo = std::min(lo, n - 1);
                const double frac = pos - static_cast<double>(lo);
                const std::size_t hi = std::min(lo + 1, n - 1);
                ch[i] = frac == 0.0 ? src[lo] : src[lo] + frac * (src[hi] - src[lo]);
              }
            }
          },
          [&](const xf::LocalMask &m) {
            const auto span = std::clamp<std::size_t>(
                static_cast<std::size_t>(std::llround(m.span_len * static_cast<double>(n))),
                1, n);
            for (std::uint32_t s = 0; s < m.num_spans; ++s) {
              const auto start = static_cast<std::size_t>(
                  rng.uniform_int(0, static_cast<std::int64_t>(n - span)));
              for (std::size_t c = 0; c < w.channels; ++c) {
                auto ch = w.channel(c);
                std::fill(ch.begin() + static_cast<std::ptrdiff_t>(start),
                          ch.begin() + static_cast<std::ptrdiff_t>(start + span), 0.0);
              }
            }
          },
          [&](const xf::NoiseInject &z) {
            for (std::size_t c = 0; c < w.channels; ++c) {
              Rng noise(seed, {index, 1 + c});
              for (auto &v : w.channel(c))
                v += noise.normal(0.0, z.sigma);
            }
          },
      },
      t);
}

} // namespace

std::vector<double> warp_grid(std::size_t length, const xf::TimeWarp &warp, Rng &rng) {
  std::vector<double> grid(length, 0.0);
  if (length < 2)
    return grid;
  const double last = static_cast<double>(length - 1);
  const std::size_t segments = warp.num_knots + 1;
  const double spacing = last / static_cast<double>(segments);
  // Endpoint displacements are pinned to zero.
  std::vector<double> disp(segments + 1, 0.0);
  for (std::size_t j = 1; j < segments; ++j)
    disp[j] = rng.uniform(-warp.max_disp, warp.max_disp) * spacing;

  constexpr double kMinSlope = 0.05;
  double prev_raw = 0.0;
  double cumulative = 0.0;
  for (std::size_t t = 0; t < length; ++t) {
    const double tt = static_cast<double>(t);
    const double raw = tt + catmull_rom(disp, tt / spacing);
    if (t > 0)
      cumulative += std::max(raw - prev_raw, kMinSlope);
    grid[t] = cumulative;
    prev_raw = raw;
  }
  for (auto &g : grid)
    g = last * g / cumulative;
  grid.back() = last;
  return grid;
}

Waveform apply(const ProjectionSpec &spec, const Waveform &x, ApplyDiagnostics *diag) {
  if (!is_power_of_two(x.length))
    throw std::invalid_argument("projection input length " + std::to_string(x.length) +
                                " is not a power of two");
  Waveform out = x;
  for (std::size_t i = 0; i < spec.transforms.size(); ++i)
    apply_one(spec.transforms[i], i, spec.seed, out, diag);
  return out;
}

void validate(const ProjectionSpec &spec, double sample_rate) {
  const double nyquist = sample_rate / 2.0;
  auto fraction = [](double v) { return v > 0.0 && v < 1.0; };
  for (const auto &t : spec.transforms)
    std::visit(Overloaded{
                   [](const xf::Identity &) {},
                   [&](const xf::SubbandFilter &f) {
                     if (!(f.f_lo >= 0.0 && f.f_lo < f.f_hi && f.f_hi <= nyquist))
                       throw ConfigError("subband requires 0 <= f_lo < f_hi <= Nyquist");
                   },
                   [](const xf::PhasePerturb &p) {
                     if (!(p.sigma >= 0.0) || p.smooth_len == 0)
                       throw ConfigError("phase perturbation needs sigma >= 0, smooth_len >= 1");
                   },
                   [&](const xf::TimeWarp &w) {
                     if (w.num_knots == 0 || !fraction(w.max_disp))
                       throw ConfigError("time warp needs num_knots >= 1, max_disp in (0,1)");
                   },
                   [&](const xf::LocalMask &m) {
                     if (!fraction(m.span_len))
                       throw ConfigError("local mask span_len must lie in (0,1)");
                   },
                   [](const xf::AmplitudeScale &a) {
                     if (!(a.factor > 0.0))
                       throw ConfigError("amplitude factor must be positive");
                   },
                   [](const xf::FreqDropout &f) {
                     if (f.band_len == 0)
                       throw ConfigError("frequency dropout band_len must be positive");
                   },
                   [](const xf::NoiseInject &z) {
                     if (!(z.sigma >= 0.0))
                       throw ConfigError("noise sigma must be nonnegative");
                   },
               },
               t);
}

nlohmann::json to_json(const ProjectionSpec &spec) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto &t : spec.transforms)
    list.push_back(std::visit(
        Overloaded{
            [](const xf::Identity &) -> nlohmann::json { return {{"type", "identity"}}; },
            [](const xf::SubbandFilter &f) -> nlohmann::json {
              return {{"type", "subband"}, {"f_lo", f.f_lo}, {"f_hi", f.f_hi}};
            },
            [](const xf::PhasePerturb &p) -> nlohmann::json {
              return {{"type", "phase"}, {"sigma", p.sigma}, {"smooth_len", p.smooth_len}};
            },
            [](const xf::TimeWarp &w) -> nlohmann::json {
              return {{"type", "time_warp"}, {"num_knots", w.num_knots}, {"max_disp", w.max_disp}};
            },
            [](const xf::LocalMask &m) -> nlohmann::json {
              return {{"type", "local_mask"}, {"num_spans", m.num_spans}, {"span_len", m.span_len}};
            },
            [](const xf::AmplitudeScale &a) -> nlohmann::json {
              return {{"type", "amplitude"}, {"factor", a.factor}};
            },
            [](const xf::FreqDropout &f) -> nlohmann::json {
              return {{"type", "freq_dropout"}, {"num_bands", f.num_bands}, {"band_len", f.band_len}};
            },
            [](const xf::NoiseInject &z) -> nlohmann::json {
              return {{"type", "noise"}, {"sigma", z.sigma}};
            },
        },
        t));
  return {{"seed", spec.seed}, {"transforms", list}};
}

ProjectionSpec projection_from_json(const nlohmann::json &j) {
  ProjectionSpec spec;
  try {
    spec.seed = j.at("seed").get<std::uint64_t>();
    for (const auto &t : j.at("transforms")) {
      const auto type = t.at("type").get<std::string>();
      if (type == "identity")
        spec.transforms.emplace_back(xf::Identity{});
      else if (type == "subband")
        spec.transforms.emplace_back(xf::SubbandFilter{t.at("f_lo"), t.at("f_hi")});
      else if (type == "phase")
        spec.transforms.emplace_back(xf::PhasePerturb{t.at("sigma"), t.at("smooth_len")});
      else if (type == "time_warp")
        spec.transforms.emplace_back(xf::TimeWarp{t.at("num_knots"), t.at("max_disp")});
      else if (type == "local_mask")
        spec.transforms.emplace_back(xf::LocalMask{t.at("num_spans"), t.at("span_len")});
      else if (type == "amplitude")
        spec.transforms.emplace_back(xf::AmplitudeScale{t.at("factor")});
      else if (type == "freq_dropout")
        spec.transforms.emplace_back(xf::FreqDropout{t.at("num_bands"), t.at("band_len")});
      else if (type == "noise")
        spec.transforms.emplace_back(xf::NoiseInject{t.at("sigma")});
      else
        throw ConfigError("unknown projection transform '" + type + "'");
    }
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("malformed projection spec: ") + e.what());
  }
  return spec;
}

ProjectionFamily ProjectionFamily::none() {
  ProjectionFamily f;
  f.p_amplitude = f.p_warp = f.p_subband = f.p_phase = 0.0;
  f.p_freq_dropout = f.p_mask = f.p_noise = 0.0;
  return f;
}

void ProjectionFamily::validate() const {
  for (double p : {p_amplitude, p_warp, p_subband, p_phase, p_freq_dropout, p_mask, p_noise})
    if (!(p >= 0.0 && p <= 1.0))
      throw ConfigError("projection inclusion probabilities must lie in [0, 1]");
  if (!(amplitude_lo > 0.0 && amplitude_lo <= amplitude_hi))
    throw ConfigError("projections.amplitude range must be positive and ordered");
  if (warp_knots == 0 || !(warp_disp_lo > 0.0 && warp_disp_lo <= warp_disp_hi && warp_disp_hi < 1.0))
    throw ConfigError("projections.warp displacement range must lie in (0, 1)");
  if (!(subband_lo_max >= 0.0 && subband_hi_min > subband_lo_max))
    throw ConfigError("projections.subband bounds must satisfy 0 <= lo_max < hi_min");
  if (!(phase_sigma_lo >= 0.0 && phase_sigma_lo <= phase_sigma_hi) || phase_smooth_len == 0)
    throw ConfigError("projections.phase parameters invalid");
  if (freq_band_len == 0)
    throw ConfigError("projections.freq_band_len must be positive");
  if (!(mask_span_lo > 0.0 && mask_span_lo <= mask_span_hi && mask_span_hi < 1.0))
    throw ConfigError("projections.mask span range must lie in (0, 1)");
  if (!(noise_lo >= 0.0 && noise_lo <= noise_hi))
    throw ConfigError("projections.noise range invalid");
}

ProjectionSpec sample_projection(const ProjectionFamily &fam, double sample_rate, Rng &rng) {
  ProjectionSpec spec;
  const double nyquist = sample_rate / 2.0;
  if (rng.bernoulli(fam.p_amplitude))
    spec.transforms.emplace_back(xf::AmplitudeScale{rng.uniform(fam.amplitude_lo, fam.amplitude_hi)});
  if (rng.bernoulli(fam.p_warp))
    spec.transforms.emplace_back(
        xf::TimeWarp{fam.warp_knots, rng.uniform(fam.warp_disp_lo, fam.warp_disp_hi)});
  if (rng.bernoulli(fam.p_subband)) {
    const double hi_min = std::min(fam.subband_hi_min, nyquist);
    spec.transforms.emplace_back(xf::SubbandFilter{rng.uniform(0.0, fam.subband_lo_max),
                                                   rng.uniform(hi_min, nyquist)});
  }
  if (rng.bernoulli(fam.p_phase))
    spec.transforms.emplace_back(xf::PhasePerturb{
        rng.uniform(fam.phase_sigma_lo, fam.phase_sigma_hi), fam.phase_smooth_len});
  if (rng.bernoulli(fam.p_freq_dropout))
    spec.transforms.emplace_back(xf::FreqDropout{
        static_cast<std::uint32_t>(rng.uniform_int(1, std::max<std::uint32_t>(1, fam.freq_bands_max))),
        fam.freq_band_len});
  if (rng.bernoulli(fam.p_mask))
    spec.transforms.emplace_back(xf::LocalMask{
        static_cast<std::uint32_t>(rng.uniform_int(1, std::max<std::uint32_t>(1, fam.mask_spans_max))),
        rng.uniform(fam.mask_span_lo, fam.mask_span_hi)});
  if (rng.bernoulli(fam.p_noise))
    spec.transforms.emplace_back(xf::NoiseInject{rng.uniform(fam.noise_lo, fam.noise_hi)});
  if (spec.transforms.empty())
    spec.transforms.emplace_back(xf::Identity{});
  spec.seed = rng.next_u64();
  return spec;
}

std::pair<Waveform, Waveform> two_views(const Waveform &x, const ProjectionFamily &family,
                                        Rng &rng) {
  auto first = sample_projection(family, x.sample_rate, rng);
  auto second = sample_projection(family, x.sample_rate, rng);
  return {apply(first, x), apply(second, x)};
}

} // namespace evf
