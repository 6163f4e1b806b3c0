// Copyright 2026 The psyframe Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psyframe/common.hpp"

namespace psyframe {

// ---------------------------------------------------------------------------
// Channels and bands
// ---------------------------------------------------------------------------

/// Scalp sites of the 14-electrode consumer headset, in canonical row order.
enum class ChannelId : std::uint8_t { AF3, F7, F3, FC5, T7, P7, O1, O2, P8, T8, FC6, F4, F8, AF4 };

inline constexpr std::size_t kNumChannels = 14;
inline constexpr double kSampleRate = 128.0;
inline constexpr double kDefaultWindowSeconds = 2.0;
inline constexpr std::size_t kDefaultWindowSamples = 256;

inline constexpr std::array<ChannelId, kNumChannels> kChannels = {
    ChannelId::AF3, ChannelId::F7, ChannelId::F3, ChannelId::FC5, ChannelId::T7,
    ChannelId::P7,  ChannelId::O1, ChannelId::O2, ChannelId::P8,  ChannelId::T8,
    ChannelId::FC6, ChannelId::F4, ChannelId::F8, ChannelId::AF4};

inline constexpr std::array<std::string_view, kNumChannels> kChannelNames = {
    "AF3", "F7", "F3", "FC5", "T7", "P7", "O1", "O2", "P8", "T8", "FC6", "F4", "F8", "AF4"};

constexpr std::size_t index_of(ChannelId c) { return static_cast<std::size_t>(c); }
constexpr std::string_view name_of(ChannelId c) { return kChannelNames[index_of(c)]; }

inline ChannelId channel_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumChannels; ++i)
    if (kChannelNames[i] == name) return kChannels[i];
  throw Error("unknown channel '" + std::string(name) + "'");
}

enum class Band : std::uint8_t { Delta, Theta, Alpha, Beta, Gamma };
inline constexpr std::size_t kNumBands = 5;

struct BandDef {
  Band band;
  std::string_view name;
  double lo;  ///< Hz, inclusive
  double hi;  ///< Hz, exclusive except for the last band
};

/// Contiguous tiling of [1, 50] Hz. Gamma stops at the band-pass upper edge.
inline constexpr std::array<BandDef, kNumBands> kBands = {{
    {Band::Delta, "delta", 1.0, 4.0},
    {Band::Theta, "theta", 4.0, 8.0},
    {Band::Alpha, "alpha", 8.0, 12.0},
    {Band::Beta, "beta", 12.0, 30.0},
    {Band::Gamma, "gamma", 30.0, 50.0},
}};

constexpr const BandDef& band_def(Band b) { return kBands[static_cast<std::size_t>(b)]; }

// ---------------------------------------------------------------------------
// EegWindow
// ---------------------------------------------------------------------------

/// A [14 x n_samples] block of microvolt samples at 128 Hz, rows in canonical
/// channel order. Construction validates shape and finiteness; afterwards the
/// value is treated as immutable by every operation in this library.
class EegWindow {
 public:
  EegWindow() : EegWindow(std::vector<double>(kNumChannels * kDefaultWindowSamples, 0.0), kDefaultWindowSamples, 0) {}

  EegWindow(std::vector<double> data, std::size_t n_samples, std::int64_t start_tick = 0)
      : data_(std::move(data)), n_samples_(n_samples), start_tick_(start_tick) {
    require(n_samples_ > 0, "EegWindow: n_samples must be positive");
    require(data_.size() == kNumChannels * n_samples_,
            "EegWindow: expected " + std::to_string(kNumChannels * n_samples_) + " samples, got " +
                std::to_string(data_.size()));
    for (double v : data_) require(std::isfinite(v), "EegWindow: non-finite sample");
  }

  static EegWindow zeros(std::size_t n_samples = kDefaultWindowSamples, std::int64_t start_tick = 0) {
    return EegWindow(std::vector<double>(kNumChannels * n_samples, 0.0), n_samples, start_tick);
  }

  double fs() const { return kSampleRate; }
  std::size_t n_channels() const { return kNumChannels; }
  std::size_t n_samples() const { return n_samples_; }
  double seconds() const { return static_cast<double>(n_samples_) / kSampleRate; }
  std::int64_t start_tick() const { return start_tick_; }
  const std::array<ChannelId, kNumChannels>& channels() const { return kChannels; }

  std::span<const double> row(std::size_t ch) const { return {data_.data() + ch * n_samples_, n_samples_}; }
  std::span<const double> row(ChannelId ch) const { return row(index_of(ch)); }
  double at(std::size_t ch, std::size_t i) const { return data_[ch * n_samples_ + i]; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const EegWindow&) const = default;

 private:
  std::vector<double> data_;
  std::size_t n_samples_;
  std::int64_t start_tick_;
};

// ---------------------------------------------------------------------------
// Band-pass design
// ---------------------------------------------------------------------------

/// One second-order section, b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2.
struct Biquad {
  std::array<double, 3> b{};
  std::array<double, 3> a{1.0, 0.0, 0.0};
};

struct FilterSpec {
  double lo = 0.0;
  double hi = 0.0;
  double fs = kSampleRate;
  int order = 0;  ///< prototype order; the band-pass has 2*order poles
  std::vector<Biquad> sections;

  /// Expanded numerator polynomial in z^-1 (product of the section numerators).
  std::vector<double> numerator() const { return expand([](const Biquad& s) { return s.b; }); }
  std::vector<double> denominator() const { return expand([](const Biquad& s) { return s.a; }); }

  /// Recursion poles, two per section.
  std::vector<std::complex<double>> poles() const {
    std::vector<std::complex<double>> out;
    for (const auto& s : sections) {
      const std::complex<double> disc = std::sqrt(std::complex<double>(s.a[1] * s.a[1] - 4.0 * s.a[2]));
      out.push_back((-s.a[1] + disc) / 2.0);
      out.push_back((-s.a[1] - disc) / 2.0);
    }
    return out;
  }

  bool stable() const {
    return std::ranges::all_of(poles(), [](auto p) { return std::abs(p) < 1.0; });
  }

 private:
  template <typename Pick>
  std::vector<double> expand(Pick pick) const {
    std::vector<double> poly{1.0};
    for (const auto& s : sections) {
      const auto c = pick(s);
      std::vector<double> next(poly.size() + 2, 0.0);
      for (std::size_t i = 0; i < poly.size(); ++i)
        for (std::size_t j = 0; j < 3; ++j) next[i + j] += poly[i] * c[j];
      poly = std::move(next);
    }
    return poly;
  }
};

/// Butterworth band-pass via analog low-pass prototype, low-pass to band-pass
/// mapping and the bilinear transform with pre-warped edges. Gain is
/// normalized to exactly 1 at the (warped) geometric centre frequency.
inline FilterSpec design_bandpass(double lo, double hi, double fs = kSampleRate, int order = 4) {
  require(fs > 0.0, "design_bandpass: fs must be positive");
  require(lo > 0.0, "design_bandpass: lower edge must be > 0 Hz");
  require(lo < hi, "design_bandpass: lower edge " + std::to_string(lo) + " Hz must be below upper edge " +
                       std::to_string(hi) + " Hz");
  require(hi < fs / 2.0, "design_bandpass: upper edge " + std::to_string(hi) + " Hz must be below Nyquist " +
                             std::to_string(fs / 2.0) + " Hz");
  require(order >= 2 && order <= 8, "design_bandpass: order must be in [2, 8]");

  using cplx = std::complex<double>;
  const double k2 = 2.0 * fs;
  const double wl = k2 * std::tan(kPi * lo / fs);
  const double wh = k2 * std::tan(kPi * hi / fs);
  const double bw = wh - wl;
  const double w0sq = wl * wh;

  FilterSpec spec{lo, hi, fs, order, {}};
  auto to_z = [k2](cplx s) { return (k2 + s) / (k2 - s); };
  for (int k = 0; k < order; ++k) {
    const double theta = kPi * (2.0 * k + order + 1) / (2.0 * order);
    const cplx p = std::polar(1.0, theta);
    const bool real_pole = std::abs(p.imag()) < 1e-9;
    if (!real_pole && p.imag() < 0) continue;  // covered by its conjugate
    const cplx pb = (real_pole ? cplx(-1.0, 0.0) : p) * bw;
    const cplx disc = std::sqrt(pb * pb - 4.0 * w0sq);
    const cplx z1 = to_z((pb + disc) / 2.0);
    const cplx z2 = to_z((pb - disc) / 2.0);
    if (real_pole) {
      // Odd orders: the real prototype pole yields one real-coefficient section.
      Biquad s;
      s.b = {1.0, 0.0, -1.0};
      s.a = {1.0, -(z1 + z2).real(), (z1 * z2).real()};
      spec.sections.push_back(s);
      continue;
    }
    // A complex prototype pole maps to one upper and one lower half-plane pole;
    // paired with the conjugate prototype pole each becomes a conjugate pair.
    for (cplx z : {z1, z2}) {
      Biquad s;
      s.b = {1.0, 0.0, -1.0};
      s.a = {1.0, -2.0 * z.real(), std::norm(z)};
      spec.sections.push_back(s);
    }
  }
  require(static_cast<int>(spec.sections.size()) == order, "design_bandpass: internal pole pairing failed");

  // Normalize to unit gain at the centre frequency.
  const double wc = 2.0 * std::atan(std::sqrt(w0sq) / k2);
  const cplx zinv = std::polar(1.0, -wc);
  cplx h = 1.0;
  for (const auto& s : spec.sections)
    h *= (s.b[0] + s.b[1] * zinv + s.b[2] * zinv * zinv) / (s.a[0] + s.a[1] * zinv + s.a[2] * zinv * zinv);
  const double g = 1.0 / std::abs(h);
  for (double& c : spec.sections.front().b) c *= g;
  return spec;
}

/// The pipeline's standard 1-50 Hz, order-4 design.
inline const FilterSpec& standard_bandpass() {
  static const FilterSpec spec = design_bandpass(1.0, 50.0, kSampleRate, 4);
  return spec;
}

namespace detail {

// Transposed direct form II, in place.
inline void sosfilt(std::span<const Biquad> sos, std::span<double> x, std::vector<std::array<double, 2>> zi) {
  for (std::size_t k = 0; k < sos.size(); ++k) {
    const auto& s = sos[k];
    double z1 = zi[k][0], z2 = zi[k][1];
    for (double& v : x) {
      const double in = v;
      const double out = s.b[0] * in + z1;
      z1 = s.b[1] * in - s.a[1] * out + z2;
      z2 = s.b[2] * in - s.a[2] * out;
      v = out;
    }
  }
}

// Per-section state that makes the cascade output constant for a unit step.
inline std::vector<std::array<double, 2>> sosfilt_zi(std::span<const Biquad> sos) {
  std::vector<std::array<double, 2>> zi(sos.size());
  double scale = 1.0;
  for (std::size_t k = 0; k < sos.size(); ++k) {
    const auto& s = sos[k];
    const double dc = (s.b[0] + s.b[1] + s.b[2]) / (s.a[0] + s.a[1] + s.a[2]);
    const double z2 = s.b[2] - s.a[2] * dc;
    const double z1 = dc - s.b[0];
    zi[k] = {scale * z1, scale * z2};
    scale *= dc;
  }
  return zi;
}

inline std::vector<std::array<double, 2>> scaled(std::vector<std::array<double, 2>> zi, double x0) {
  for (auto& z : zi) {
    z[0] *= x0;
    z[1] *= x0;
  }
  return zi;
}

}  // namespace detail

/// Zero-phase filtering of one channel: odd-extension padding, steady-state
/// initial conditions, forward pass, reversed pass.
inline std::vector<double> filtfilt(const FilterSpec& f, std::span<const double> x) {
  const std::size_t n = x.size();
  require(n >= 2, "filtfilt: need at least two samples");
  for (double v : x) require(std::isfinite(v), "apply_filter: non-finite input sample");
  const std::size_t pad = std::min<std::size_t>(n - 1, 3 * (2 * f.sections.size() + 1) * 4);

  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  const auto zi = detail::sosfilt_zi(f.sections);
  detail::sosfilt(f.sections, ext, detail::scaled(zi, ext.front()));
  std::ranges::reverse(ext);
  detail::sosfilt(f.sections, ext, detail::scaled(zi, ext.front()));
  std::ranges::reverse(ext);
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

inline EegWindow apply_filter(const EegWindow& w, const FilterSpec& f) {
  require(f.stable(), "apply_filter: filter is not stable");
  std::vector<double> out;
  out.reserve(w.data().size());
  for (std::size_t ch = 0; ch < w.n_channels(); ++ch) {
    const auto y = filtfilt(f, w.row(ch));
    out.insert(out.end(), y.begin(), y.end());
  }
  return EegWindow(std::move(out), w.n_samples(), w.start_tick());
}

// ---------------------------------------------------------------------------
// Normalization and gating
// ---------------------------------------------------------------------------

inline constexpr double kDegenerateStd = 1e-12;

/// Per-channel z-score with population standard deviation. Channels whose
/// deviation is below 1e-12 become all-zero rows.
inline EegWindow zscore_normalize(const EegWindow& w) {
  const std::size_t n = w.n_samples();
  std::vector<double> out(w.data().size(), 0.0);
  for (std::size_t ch = 0; ch < w.n_channels(); ++ch) {
    const auto x = w.row(ch);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    if (sd < kDegenerateStd) continue;
    for (std::size_t i = 0; i < n; ++i) out[ch * n + i] = (x[i] - mean) / sd;
  }
  return EegWindow(std::move(out), n, w.start_tick());
}

inline constexpr double kDefaultAmpLimit = 100.0;

struct GateResult {
  bool accepted = true;
  std::string reason;  ///< empty when accepted

  explicit operator bool() const { return accepted; }
};

/// Amplitude-threshold artifact gate: reject when any |sample| > amp_limit.
inline GateResult gate_artifacts(const EegWindow& w, double amp_limit = kDefaultAmpLimit) {
  require(amp_limit > 0.0, "gate_artifacts: amplitude limit must be positive");
  for (std::size_t ch = 0; ch < w.n_channels(); ++ch) {
    const auto x = w.row(ch);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::abs(x[i]) > amp_limit) {
        return {false, "amplitude " + std::to_string(x[i]) + " uV on " + std::string(kChannelNames[ch]) +
                           " at sample " + std::to_string(i) + " exceeds limit " + std::to_string(amp_limit) +
                           " uV"};
      }
    }
  }
  return {};
}

}  // namespace psyframe
