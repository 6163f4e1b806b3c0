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

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psyframe/common.hpp"
#include "psyframe/fft.hpp"
#include "psyframe/signal_core.hpp"

namespace psyframe {

/// Layout identifier written into every dataset and weights file.
inline constexpr std::string_view kLayoutId = "psyframe-feat-v1";

/// Per-channel slot layout of a FeatureVector ("psyframe-feat-v1").
///
///   0..4   band power, delta theta alpha beta gamma (Welch, trapezoid)
///   5..7   sliding-window mean, variance, skewness
///   8..12  db4 wavelet energy D1 D2 D3 D4 A4
///
/// Channel c occupies [13 c, 13 c + 13), channels in canonical order.
namespace slot {
inline constexpr std::size_t kBandPower = 0;
inline constexpr std::size_t kMean = 5;
inline constexpr std::size_t kVariance = 6;
inline constexpr std::size_t kSkewness = 7;
inline constexpr std::size_t kWavelet = 8;
inline constexpr std::size_t kPerChannel = 13;
}  // namespace slot

inline constexpr std::size_t kFeatureDim = kNumChannels * slot::kPerChannel;
static_assert(kFeatureDim == 182);

struct FeatureVector {
  std::string layout_id{kLayoutId};
  std::array<double, kFeatureDim> values{};

  double at(std::size_t channel, std::size_t s) const { return values[channel * slot::kPerChannel + s]; }
  std::span<const double> token(std::size_t channel) const {
    return {values.data() + channel * slot::kPerChannel, slot::kPerChannel};
  }
  bool operator==(const FeatureVector&) const = default;
};

// ---------------------------------------------------------------------------
// Welch PSD
// ---------------------------------------------------------------------------

struct Spectrum {
  std::vector<double> freqs;  ///< bin centres, 0 .. fs/2
  std::vector<double> psd;    ///< [n_channels x n_bins], uV^2/Hz
  std::size_t n_bins = 0;

  std::span<const double> row(std::size_t ch) const { return {psd.data() + ch * n_bins, n_bins}; }
  double df() const { return freqs.size() > 1 ? freqs[1] - freqs[0] : 0.0; }
};

/// Periodic Hann taper of length n.
inline std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

/// One-sided Welch estimate of a single row: Hann segments, per-segment mean
/// removal, density scaling 1 / (fs * sum w^2).
inline std::vector<double> welch_row(std::span<const double> x, double fs, std::size_t seg_len, double overlap) {
  const std::size_t noverlap = static_cast<std::size_t>(std::floor(static_cast<double>(seg_len) * overlap));
  const std::size_t step = std::max<std::size_t>(1, seg_len - noverlap);
  const std::size_t n_bins = seg_len / 2 + 1;
  const auto win = hann(seg_len);
  double wss = 0.0;
  for (double v : win) wss += v * v;

  std::vector<double> acc(n_bins, 0.0);
  std::size_t n_seg = 0;
  std::vector<double> seg(seg_len);
  for (std::size_t start = 0; start + seg_len <= x.size(); start += step, ++n_seg) {
    double mean = 0.0;
    for (std::size_t i = 0; i < seg_len; ++i) mean += x[start + i];
    mean /= static_cast<double>(seg_len);
    for (std::size_t i = 0; i < seg_len; ++i) seg[i] = (x[start + i] - mean) * win[i];
    const auto spec = fft::forward(seg);
    for (std::size_t k = 0; k < n_bins; ++k) acc[k] += std::norm(spec[k]);
  }
  const double scale = 1.0 / (fs * wss * static_cast<double>(n_seg));
  for (std::size_t k = 0; k < n_bins; ++k) {
    acc[k] *= scale;
    const bool nyquist = (seg_len % 2 == 0) && k == n_bins - 1;
    if (k != 0 && !nyquist) acc[k] *= 2.0;
  }
  return acc;
}

inline Spectrum welch_psd(const EegWindow& w, std::size_t seg_len = 128, double overlap = 0.5) {
  require(seg_len >= 2, "welch_psd: segment length must be at least 2");
  require(seg_len <= w.n_samples(), "welch_psd: segment length " + std::to_string(seg_len) +
                                        " exceeds window length " + std::to_string(w.n_samples()));
  require(overlap >= 0.0 && overlap < 1.0, "welch_psd: overlap must be in [0, 1)");
  Spectrum s;
  s.n_bins = seg_len / 2 + 1;
  s.freqs.resize(s.n_bins);
  for (std::size_t k = 0; k < s.n_bins; ++k) s.freqs[k] = static_cast<double>(k) * w.fs() / static_cast<double>(seg_len);
  s.psd.reserve(w.n_channels() * s.n_bins);
  for (std::size_t ch = 0; ch < w.n_channels(); ++ch) {
    const auto r = welch_row(w.row(ch), w.fs(), seg_len, overlap);
    s.psd.insert(s.psd.end(), r.begin(), r.end());
  }
  return s;
}

/// Integral of the piecewise-linear PSD over [lo, hi], interpolating at the
/// band edges so adjacent bands tile without gaps.
inline double integrate_row(std::span<const double> freqs, std::span<const double> psd, double lo, double hi) {
  auto value_at = [&](double f) {
    if (f <= freqs.front()) return psd.front();
    if (f >= freqs.back()) return psd.back();
    std::size_t i = 1;
    while (freqs[i] < f) ++i;
    const double t = (f - freqs[i - 1]) / (freqs[i] - freqs[i - 1]);
    return psd[i - 1] + t * (psd[i] - psd[i - 1]);
  };
  double total = 0.0;
  double f0 = lo, p0 = value_at(lo);
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    if (freqs[i] <= lo) continue;
    if (freqs[i] >= hi) break;
    total += 0.5 * (p0 + psd[i]) * (freqs[i] - f0);
    f0 = freqs[i];
    p0 = psd[i];
  }
  total += 0.5 * (p0 + value_at(hi)) * (hi - f0);
  return total;
}

inline std::vector<double> band_power(const Spectrum& s, double lo, double hi) {
  require(s.n_bins >= 2, "band_power: spectrum has fewer than two bins");
  require(lo < hi && lo >= s.freqs.front() && hi <= s.freqs.back(),
          "band_power: band [" + std::to_string(lo) + ", " + std::to_string(hi) + ") selects no bins in [" +
              std::to_string(s.freqs.front()) + ", " + std::to_string(s.freqs.back()) + "]");
  const std::size_t n_ch = s.psd.size() / s.n_bins;
  std::vector<double> out(n_ch);
  for (std::size_t ch = 0; ch < n_ch; ++ch) out[ch] = std::max(0.0, integrate_row(s.freqs, s.row(ch), lo, hi));
  return out;
}

inline std::vector<double> band_power(const Spectrum& s, const BandDef& b) { return band_power(s, b.lo, b.hi); }

// ---------------------------------------------------------------------------
// Time-domain statistics
// ---------------------------------------------------------------------------

struct MomentStats {
  double mean = 0.0;
  double variance = 0.0;  ///< population
  double skewness = 0.0;  ///< standardized third central moment; 0 when variance < 1e-12

  bool operator==(const MomentStats&) const = default;
};

inline MomentStats moment_stats(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  MomentStats st;
  for (double v : x) st.mean += v;
  st.mean /= n;
  double m3 = 0.0;
  for (double v : x) {
    const double d = v - st.mean;
    st.variance += d * d;
    m3 += d * d * d;
  }
  st.variance /= n;
  m3 /= n;
  st.skewness = st.variance < 1e-12 ? 0.0 : m3 / std::pow(st.variance, 1.5);
  return st;
}

/// Mean of per-sub-window statistics over sub-windows of `sub_len` samples.
inline MomentStats sliding_stats_row(std::span<const double> x, std::size_t sub_len, double overlap) {
  require(sub_len >= 1 && sub_len <= x.size(), "sliding_stats: sub-window longer than window");
  require(overlap >= 0.0 && overlap < 1.0, "sliding_stats: overlap must be in [0, 1)");
  const std::size_t step =
      std::max<std::size_t>(1, sub_len - static_cast<std::size_t>(std::floor(static_cast<double>(sub_len) * overlap)));
  MomentStats acc;
  std::size_t count = 0;
  for (std::size_t start = 0; start + sub_len <= x.size(); start += step, ++count) {
    const auto st = moment_stats(x.subspan(start, sub_len));
    acc.mean += st.mean;
    acc.variance += st.variance;
    acc.skewness += st.skewness;
  }
  const double c = static_cast<double>(count);
  return {acc.mean / c, acc.variance / c, acc.skewness / c};
}

inline std::vector<MomentStats> sliding_stats(const EegWindow& w, double sub_win_seconds = 1.0, double overlap = 0.5) {
  const auto sub_len = static_cast<std::size_t>(std::lround(sub_win_seconds * w.fs()));
  std::vector<MomentStats> out;
  out.reserve(w.n_channels());
  for (std::size_t ch = 0; ch < w.n_channels(); ++ch) out.push_back(sliding_stats_row(w.row(ch), sub_len, overlap));
  return out;
}

// ---------------------------------------------------------------------------
// Daubechies-4 (8-tap) periodized DWT
// ---------------------------------------------------------------------------

/// db4 scaling (low-pass) filter.
inline constexpr std::array<double, 8> kDb4Lowpass = {
    0.2303778133088964,  0.7148465705529154, 0.6308807679298587,  -0.0279837694168599,
    -0.1870348117190931, 0.0308413818355607, 0.0328830116668852, -0.0105974017850690};

/// Quadrature-mirror high-pass: g[n] = (-1)^n h[L-1-n].
inline constexpr std::array<double, 8> db4_highpass() {
  std::array<double, 8> g{};
  for (std::size_t n = 0; n < 8; ++n) g[n] = (n % 2 == 0 ? 1.0 : -1.0) * kDb4Lowpass[7 - n];
  return g;
}

struct DwtLevel {
  std::vector<double> approx;
  std::vector<double> detail;
};

/// One analysis step with periodic extension; input length must be even.
inline DwtLevel dwt_step(std::span<const double> x) {
  static constexpr auto g = db4_highpass();
  const std::size_t n = x.size();
  require(n % 2 == 0, "dwt: length must be even");
  DwtLevel out{std::vector<double>(n / 2), std::vector<double>(n / 2)};
  for (std::size_t k = 0; k < n / 2; ++k) {
    double a = 0.0, d = 0.0;
    for (std::size_t t = 0; t < 8; ++t) {
      const double v = x[(2 * k + t) % n];
      a += kDb4Lowpass[t] * v;
      d += g[t] * v;
    }
    out.approx[k] = a;
    out.detail[k] = d;
  }
  return out;
}

/// Energies [D1 .. D_levels, A_levels] of one row.
inline std::vector<double> wavelet_energies(std::span<const double> x, int levels = 4) {
  require(levels >= 1, "dwt_energies: levels must be >= 1");
  const std::size_t block = std::size_t{1} << levels;
  require(x.size() % block == 0, "dwt_energies: length " + std::to_string(x.size()) + " not divisible by 2^" +
                                     std::to_string(levels));
  std::vector<double> energies;
  std::vector<double> cur(x.begin(), x.end());
  for (int l = 0; l < levels; ++l) {
    auto step = dwt_step(cur);
    double e = 0.0;
    for (double v : step.detail) e += v * v;
    energies.push_back(e);
    cur = std::move(step.approx);
  }
  double e = 0.0;
  for (double v : cur) e += v * v;
  energies.push_back(e);
  return energies;
}

inline std::vector<std::vector<double>> dwt_energies(const EegWindow& w, int levels = 4) {
  std::vector<std::vector<double>> out;
  out.reserve(w.n_channels());
  for (std::size_t ch = 0; ch < w.n_channels(); ++ch) out.push_back(wavelet_energies(w.row(ch), levels));
  return out;
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

/// Packs band powers, sliding statistics and wavelet energies of an already
/// filtered and normalized window into the "psyframe-feat-v1" layout.
inline FeatureVector assemble_features(const EegWindow& w) {
  const auto spec = welch_psd(w, 128, 0.5);
  const auto stats = sliding_stats(w, 1.0, 0.5);
  const auto wav = dwt_energies(w, 4);

  FeatureVector fv;
  for (std::size_t b = 0; b < kNumBands; ++b) {
    const auto p = band_power(spec, kBands[b]);
    for (std::size_t ch = 0; ch < kNumChannels; ++ch) fv.values[ch * slot::kPerChannel + slot::kBandPower + b] = p[ch];
  }
  for (std::size_t ch = 0; ch < kNumChannels; ++ch) {
    double* t = fv.values.data() + ch * slot::kPerChannel;
    t[slot::kMean] = stats[ch].mean;
    t[slot::kVariance] = stats[ch].variance;
    t[slot::kSkewness] = stats[ch].skewness;
    for (std::size_t l = 0; l < 5; ++l) t[slot::kWavelet + l] = wav[ch][l];
  }
  return fv;
}

/// Full per-window preprocessing: band-pass, z-score, features.
inline FeatureVector preprocess_and_extract(const EegWindow& raw, const FilterSpec& f = standard_bandpass()) {
  return assemble_features(zscore_normalize(apply_filter(raw, f)));
}

}  // namespace psyframe
