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
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "psyframe/common.hpp"
#include "psyframe/features.hpp"
#include "psyframe/fft.hpp"
#include "psyframe/signal_core.hpp"

namespace psyframe {

/// The five motor-imagery classes of the cockpit dataset.
enum class ClassLabel : std::uint8_t {
  PullForward = 0,   ///< "Pull Forward with Both Hands"
  LeftLegPedal = 1,  ///< "Left Leg on the Pedal"
  PushTwoHands = 2,  ///< "Push with 2 Hands"
  RightLegPedal = 3, ///< "Right Leg on the Pedal"
  PushUpward = 4,    ///< "Push Upward with Both Hands"
};

inline constexpr std::size_t kNumClasses = 5;

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "Pull Forward with Both Hands", "Left Leg on the Pedal", "Push with 2 Hands", "Right Leg on the Pedal",
    "Push Upward with Both Hands"};

constexpr int class_id(ClassLabel c) { return static_cast<int>(c); }
constexpr std::string_view class_name(ClassLabel c) { return kClassNames[static_cast<std::size_t>(c)]; }

inline ClassLabel class_from_id(int id) {
  require(id >= 0 && id < static_cast<int>(kNumClasses), "class id " + std::to_string(id) + " out of range [0, 4]");
  return static_cast<ClassLabel>(id);
}

// ---------------------------------------------------------------------------
// Signatures
// ---------------------------------------------------------------------------

struct ClassSignature {
  ClassLabel label;
  Band boosted_band;
  std::array<ChannelId, 2> boosted_channels;
  double boost_gain;  ///< in-band power ratio on the boosted channels
  double snr;         ///< boosted-band to total background power on a boosted channel
};

/// Bumped whenever the signature table or the generator recipe changes.
inline constexpr int kSignatureVersion = 1;
inline constexpr double kDefaultBoostGain = 8.0;

/// Expected in-band power added by the boost, relative to the whole 1/f
/// background of a channel (sampled on the 0.5 Hz grid of a 2 s window).
inline double expected_snr(Band b, double gain) {
  const auto& band = band_def(b);
  double in_band = 0.0, total = 0.0;
  for (int k = 1; k < 128; ++k) {
    const double f = 0.5 * k;
    total += 1.0 / f;
    if (f >= band.lo && f < band.hi) in_band += 1.0 / f;
  }
  return (gain - 1.0) * in_band / total;
}

inline const std::array<ClassSignature, kNumClasses>& signature_table() {
  static const std::array<ClassSignature, kNumClasses> table = [] {
    std::array<ClassSignature, kNumClasses> t = {{
        {ClassLabel::PullForward, Band::Alpha, {ChannelId::O1, ChannelId::O2}, kDefaultBoostGain, 0.0},
        {ClassLabel::LeftLegPedal, Band::Beta, {ChannelId::FC6, ChannelId::F4}, kDefaultBoostGain, 0.0},
        {ClassLabel::PushTwoHands, Band::Beta, {ChannelId::FC5, ChannelId::FC6}, kDefaultBoostGain, 0.0},
        {ClassLabel::RightLegPedal, Band::Beta, {ChannelId::FC5, ChannelId::F3}, kDefaultBoostGain, 0.0},
        {ClassLabel::PushUpward, Band::Theta, {ChannelId::AF3, ChannelId::AF4}, kDefaultBoostGain, 0.0},
    }};
    for (auto& sig : t) sig.snr = expected_snr(sig.boosted_band, sig.boost_gain);
    return t;
  }();
  return table;
}

inline const ClassSignature& signature_of(ClassLabel c) { return signature_table()[static_cast<std::size_t>(c)]; }

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

struct SynthParams {
  double background_rms = 8.0;  ///< uV, 1/f background before any boost
  double white_rms = 1.0;       ///< uV, broadband sensor floor
  double boost_gain = kDefaultBoostGain;
  std::size_t n_samples = kDefaultWindowSamples;
  bool operator==(const SynthParams&) const = default;
};

namespace detail {

// Per-bin amplitude jitter; small so the per-class spectral shape dominates.
inline constexpr double kBinJitter = 0.1;

/// One channel of 1/f-shaped noise with an optional multiplicative power
/// boost over [boost_lo, boost_hi). Random phases, mildly jittered magnitudes.
inline std::vector<double> pink_channel(SplitMix64& rng, const SynthParams& p, double boost_lo, double boost_hi,
                                        double boost) {
  const std::size_t n = p.n_samples;
  const double df = kSampleRate / static_cast<double>(n);
  // Normalize so the un-boosted background has the requested RMS:
  // x = sum_k s_k m_k cos(w_k t + phi_k), var = sum_k s_k^2 E[m^2] / 2.
  const double m2 = 1.0 + kBinJitter * kBinJitter / 3.0;
  double inv_f_sum = 0.0;
  for (std::size_t k = 1; k < n / 2; ++k) inv_f_sum += 1.0 / (static_cast<double>(k) * df);
  const double c = p.background_rms * std::sqrt(2.0 / (m2 * inv_f_sum));

  std::vector<fft::cplx> spec(n, 0.0);
  for (std::size_t k = 1; k < n / 2; ++k) {
    const double f = static_cast<double>(k) * df;
    double s = c / std::sqrt(f);
    // In a boosted band the content moves onto the integer-Hz bins (which are
    // coherent with 1 s analysis segments) and in-band power scales by `boost`.
    if (boost != 1.0 && f >= boost_lo && f < boost_hi) {
      const bool integer_hz = std::abs(f - std::round(f)) < 1e-9;
      s *= integer_hz ? std::sqrt(boost / df) : 0.0;
    }
    const double mag = s * rng.uniform(1.0 - kBinJitter, 1.0 + kBinJitter);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    spec[k] = std::polar(mag * static_cast<double>(n) / 2.0, phase);
    spec[n - k] = std::conj(spec[k]);
  }
  auto x = fft::inverse_real(std::move(spec));
  for (double& v : x) v += p.white_rms * rng.normal();
  return x;
}

}  // namespace detail

/// Background-only window (no class oscillation); deterministic per seed.
inline EegWindow synth_noise_window(std::uint64_t seed, const SynthParams& p = {}, std::int64_t start_tick = 0) {
  SplitMix64 rng(mix_seed(seed, 0xBAC6));
  std::vector<double> data;
  data.reserve(kNumChannels * p.n_samples);
  for (std::size_t ch = 0; ch < kNumChannels; ++ch) {
    const auto row = detail::pink_channel(rng, p, 0.0, 0.0, 1.0);
    data.insert(data.end(), row.begin(), row.end());
  }
  return EegWindow(std::move(data), p.n_samples, start_tick);
}

/// Class-conditioned window: 1/f background on all channels plus the class
/// band boosted on its two signature channels. Pure function of (class, seed).
inline EegWindow synth_window(ClassLabel c, std::uint64_t seed, const SynthParams& p = {}, std::int64_t start_tick = 0) {
  const auto& sig = signature_of(c);
  const auto& band = band_def(sig.boosted_band);
  SplitMix64 rng(mix_seed(seed, 0xC1A55 + static_cast<std::uint64_t>(class_id(c))));
  const double gain = p.boost_gain;
  std::vector<double> data;
  data.reserve(kNumChannels * p.n_samples);
  for (std::size_t ch = 0; ch < kNumChannels; ++ch) {
    const bool boosted = std::ranges::find(sig.boosted_channels, kChannels[ch]) != sig.boosted_channels.end();
    const auto row = detail::pink_channel(rng, p, band.lo, band.hi, boosted ? gain : 1.0);
    data.insert(data.end(), row.begin(), row.end());
  }
  return EegWindow(std::move(data), p.n_samples, start_tick);
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct Dataset {
  std::vector<EegWindow> windows;
  std::vector<ClassLabel> labels;
  std::string layout_id{kLayoutId};
  std::uint64_t seed = 0;

  std::size_t size() const { return windows.size(); }
  bool empty() const { return windows.empty(); }

  std::array<std::size_t, kNumClasses> counts() const {
    std::array<std::size_t, kNumClasses> c{};
    for (auto l : labels) ++c[static_cast<std::size_t>(l)];
    return c;
  }

  /// Content hash over layout, labels, tick ids and every sample bit pattern.
  std::uint64_t hash() const {
    Fnv1a h;
    h.str(layout_id);
    h.u64(seed);
    for (std::size_t i = 0; i < windows.size(); ++i) {
      h.u64(static_cast<std::uint64_t>(labels[i]));
      h.u64(static_cast<std::uint64_t>(windows[i].start_tick()));
      h.f64s(windows[i].data());
    }
    return h.value();
  }

  bool operator==(const Dataset&) const = default;
};

/// 5 x n_per_class windows ordered by (class, index). Window start_tick holds
/// its position in this ordering and serves as the window's identity.
inline Dataset build_dataset(std::size_t n_per_class, std::uint64_t seed, const SynthParams& p = {}) {
  require(n_per_class >= 1, "build_dataset: n_per_class must be >= 1");
  Dataset d;
  d.seed = seed;
  d.windows.reserve(kNumClasses * n_per_class);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const auto label = static_cast<ClassLabel>(c);
      const auto tick = static_cast<std::int64_t>(c * n_per_class + i);
      d.windows.push_back(synth_window(label, mix_seed(seed, c, i), p, tick));
      d.labels.push_back(label);
    }
  }
  return d;
}

/// Stratified shuffle split: per class, floor(train_fraction * count) windows
/// go to train and the rest to validation. Both halves keep input order.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double train_fraction = 0.8, std::uint64_t seed = 0) {
  require(train_fraction > 0.0 && train_fraction < 1.0, "split_dataset: train_fraction must be in (0, 1)");
  require(d.windows.size() == d.labels.size(), "split_dataset: windows/labels size mismatch");
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < d.labels.size(); ++i) by_class[static_cast<std::size_t>(d.labels[i])].push_back(i);

  std::vector<bool> to_train(d.size(), false);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    require(idx.size() >= 2, "split_dataset: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                 " sample(s); stratification needs at least 2");
    SplitMix64 rng(mix_seed(seed, 0x5917, c));
    for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < n_train; ++k) to_train[idx[k]] = true;
  }

  Dataset train, val;
  for (auto* part : {&train, &val}) {
    part->layout_id = d.layout_id;
    part->seed = d.seed;
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto& dst = to_train[i] ? train : val;
    dst.windows.push_back(d.windows[i]);
    dst.labels.push_back(d.labels[i]);
  }
  return {std::move(train), std::move(val)};
}

}  // namespace psyframe
