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

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "psyframe/signal_core.hpp"
#include "test_util.hpp"

using namespace psyframe;
using psyframe::testing::fill_window;
using psyframe::testing::rms;

namespace {

// Oracle: |H(e^{jw})| from the expanded transfer-function polynomials.
double gain_db(const FilterSpec& f, double hz) {
  const auto b = f.numerator();
  const auto a = f.denominator();
  const double w = 2.0 * kPi * hz / f.fs;
  std::complex<double> num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) num += b[k] * std::polar(1.0, -w * static_cast<double>(k));
  for (std::size_t k = 0; k < a.size(); ++k) den += a[k] * std::polar(1.0, -w * static_cast<double>(k));
  return 20.0 * std::log10(std::abs(num / den));
}

// Oracle: direct-form impulse response of the expanded polynomials.
std::vector<double> impulse_response(const FilterSpec& f, std::size_t n) {
  const auto b = f.numerator();
  const auto a = f.denominator();
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = i < b.size() ? b[i] : 0.0;
    for (std::size_t k = 1; k < a.size() && k <= i; ++k) acc -= a[k] * y[i - k];
    y[i] = acc;
  }
  return y;
}

}  // namespace

TEST(Channels, CanonicalOrder) {
  EXPECT_EQ(kChannels.size(), 14u);
  for (std::size_t i = 0; i < kNumChannels; ++i) {
    EXPECT_EQ(index_of(kChannels[i]), i);
    EXPECT_EQ(channel_from_name(kChannelNames[i]), kChannels[i]);
  }
  EXPECT_EQ(name_of(ChannelId::O1), "O1");
  EXPECT_THROW(channel_from_name("Cz"), Error);
}

TEST(Bands, TileOneToFifty) {
  EXPECT_DOUBLE_EQ(kBands.front().lo, 1.0);
  EXPECT_DOUBLE_EQ(kBands.back().hi, 50.0);
  for (std::size_t i = 0; i < kNumBands; ++i) {
    EXPECT_LT(kBands[i].lo, kBands[i].hi);
    if (i > 0) {
      EXPECT_DOUBLE_EQ(kBands[i].lo, kBands[i - 1].hi);
    }
  }
  EXPECT_DOUBLE_EQ(band_def(Band::Alpha).lo, 8.0);
  EXPECT_DOUBLE_EQ(band_def(Band::Beta).hi, 30.0);
}

TEST(EegWindow, RejectsBadShapeAndNonFinite) {
  EXPECT_THROW(EegWindow(std::vector<double>(100, 0.0), 256), Error);
  std::vector<double> d(kNumChannels * 4, 0.0);
  d[7] = std::nan("");
  EXPECT_THROW(EegWindow(d, 4), Error);
  d[7] = INFINITY;
  EXPECT_THROW(EegWindow(d, 4), Error);
  const auto w = EegWindow::zeros();
  EXPECT_EQ(w.n_samples(), 256u);
  EXPECT_DOUBLE_EQ(w.fs(), 128.0);
  EXPECT_DOUBLE_EQ(w.seconds(), 2.0);
}

TEST(DesignBandpass, StandardDesignPassbandAndStopband) {
  const auto f = design_bandpass(1.0, 50.0, 128.0, 4);
  EXPECT_TRUE(f.stable());
  EXPECT_EQ(f.sections.size(), 4u);
  const double g10 = gain_db(f, 10.0);
  EXPECT_LE(std::abs(g10), 1.0);
  EXPECT_GE(g10 - gain_db(f, 60.0), 20.0);
  // Geometric centre of the band is the normalization point.
  EXPECT_LE(std::abs(gain_db(f, std::sqrt(1.0 * 50.0))), 1.0);
  // Butterworth edges sit near -3 dB.
  EXPECT_NEAR(gain_db(f, 1.0), -3.01, 0.05);
  EXPECT_NEAR(gain_db(f, 50.0), -3.01, 0.05);
}

TEST(DesignBandpass, PolesInsideUnitCircleForAllOrders) {
  for (int order = 2; order <= 8; ++order) {
    const auto f = design_bandpass(1.0, 50.0, 128.0, order);
    EXPECT_EQ(static_cast<int>(f.sections.size()), order);
    for (auto p : f.poles()) EXPECT_LT(std::abs(p), 1.0) << "order " << order;
    // Independent stability check: impulse-response energy settles within 10*fs samples.
    const auto h = impulse_response(f, 1280);
    double tail = 0.0, total = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) (i >= 1180 ? tail : total) += h[i] * h[i];
    EXPECT_LT(tail, 1e-9 * total) << "order " << order;
  }
  EXPECT_TRUE(design_bandpass(8.0, 12.0, 128.0, 3).stable());
}

TEST(DesignBandpass, RejectsInvalidEdges) {
  EXPECT_THROW(design_bandpass(50.0, 1.0, 128.0, 4), Error);
  EXPECT_THROW(design_bandpass(1.0, 64.0, 128.0, 4), Error);
  EXPECT_THROW(design_bandpass(0.0, 50.0, 128.0, 4), Error);
  EXPECT_THROW(design_bandpass(1.0, 50.0, 128.0, 1), Error);
  EXPECT_THROW(design_bandpass(1.0, 50.0, 128.0, 9), Error);
}

TEST(ApplyFilter, ZeroInZeroOut) {
  const auto y = apply_filter(EegWindow::zeros(), standard_bandpass());
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(ApplyFilter, SixtyHertzIsSuppressed) {
  const auto x = fill_window([](std::size_t, double t) { return 10.0 * std::sin(2 * kPi * 60.0 * t); });
  const auto y = apply_filter(x, standard_bandpass());
  EXPECT_EQ(y.n_samples(), x.n_samples());
  for (std::size_t ch = 0; ch < kNumChannels; ++ch) EXPECT_LE(rms(y.row(ch)), 0.1 * rms(x.row(ch)));
}

TEST(ApplyFilter, TenHertzPasses) {
  const auto x = fill_window([](std::size_t, double t) { return 10.0 * std::sin(2 * kPi * 10.0 * t); });
  const auto y = apply_filter(x, standard_bandpass());
  for (std::size_t ch = 0; ch < kNumChannels; ++ch)
    EXPECT_NEAR(rms(y.row(ch)) / rms(x.row(ch)), 1.0, 0.12);
}

TEST(ApplyFilter, Linearity) {
  psyframe::SplitMix64 rng(7);
  const auto x = fill_window([&](std::size_t, double) { return rng.normal() * 20.0; });
  const auto y = fill_window([&](std::size_t, double) { return rng.normal() * 20.0; });
  const double a = 1.7, b = -0.6;
  std::vector<double> mix(x.data().size());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x.data()[i] + b * y.data()[i];
  const auto& f = standard_bandpass();
  const auto fx = apply_filter(x, f), fy = apply_filter(y, f);
  const auto fm = apply_filter(EegWindow(mix, x.n_samples()), f);
  double err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    const double expect = a * fx.data()[i] + b * fy.data()[i];
    err = std::max(err, std::abs(fm.data()[i] - expect));
    scale = std::max(scale, std::abs(expect));
  }
  EXPECT_LT(err / scale, 1e-9);
}

TEST(ApplyFilter, ZeroPhaseOnSymmetricPulse) {
  // Gaussian pulse centred on an odd-length row so the mirror is exact. The row
  // is long (16 s) so the 1 Hz edge transient has died out at both ends.
  const std::size_t n = 2047;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (static_cast<double>(i) - 1023.0) / 3.0;
    x[i] = 50.0 * std::exp(-0.5 * d * d);
  }
  const auto y = filtfilt(standard_bandpass(), x);
  double peak = 0.0, asym = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    peak = std::max(peak, std::abs(y[i]));
    asym = std::max(asym, std::abs(y[i] - y[n - 1 - i]));
  }
  EXPECT_LT(asym, 1e-6 * peak);
}

TEST(ZScore, AnalyticExamples) {
  std::vector<double> d(kNumChannels * 3, 5.0);
  d[0] = 1.0;
  d[1] = 2.0;
  d[2] = 3.0;
  const auto z = zscore_normalize(EegWindow(d, 3));
  EXPECT_NEAR(z.at(0, 0), -1.224744871391589, 1e-12);
  EXPECT_NEAR(z.at(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(z.at(0, 2), 1.224744871391589, 1e-12);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(z.at(1, i), 0.0);
}

TEST(ZScore, MomentsAndIdempotence) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    psyframe::SplitMix64 rng(seed);
    const double offset = rng.uniform(-50, 50);
    const auto x = fill_window([&](std::size_t ch, double) { return ch == 3 ? 4.2 : offset + 30.0 * rng.normal(); });
    const auto z = zscore_normalize(x);
    for (std::size_t ch = 0; ch < kNumChannels; ++ch) {
      double m = 0.0, v = 0.0;
      for (double s : z.row(ch)) m += s;
      m /= static_cast<double>(z.n_samples());
      for (double s : z.row(ch)) v += (s - m) * (s - m);
      v /= static_cast<double>(z.n_samples());
      EXPECT_LT(std::abs(m), 1e-9);
      if (ch == 3) {
        EXPECT_EQ(v, 0.0);
      } else {
        EXPECT_LT(std::abs(v - 1.0), 1e-9);
      }
    }
    const auto zz = zscore_normalize(z);
    for (std::size_t i = 0; i < z.data().size(); ++i) EXPECT_NEAR(zz.data()[i], z.data()[i], 1e-9);
  }
}

TEST(GateArtifacts, AcceptRejectAndPrecondition) {
  auto x = fill_window([](std::size_t, double t) { return 80.0 * std::sin(2 * kPi * 3.0 * t + 0.3); });
  EXPECT_TRUE(gate_artifacts(x, 100.0).accepted);
  auto d = x.data();
  d[4 * 256 + 40] = 150.0;  // row 4 is T7
  const auto spiky = EegWindow(d, 256);
  const auto r = gate_artifacts(spiky, 100.0);
  EXPECT_FALSE(r.accepted);
  EXPECT_NE(r.reason.find("T7"), std::string::npos);
  EXPECT_FALSE(gate_artifacts(spiky, 100.0).accepted);  // deterministic
  EXPECT_THROW(gate_artifacts(x, 0.0), Error);
}
