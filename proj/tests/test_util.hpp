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

#include <cmath>
#include <span>
#include <vector>

#include "psyframe/signal_core.hpp"

namespace psyframe::testing {

/// Builds a window from f(channel, t_seconds).
template <typename F>
EegWindow fill_window(F&& f, std::size_t n = kDefaultWindowSamples) {
  std::vector<double> d(kNumChannels * n);
  for (std::size_t ch = 0; ch < kNumChannels; ++ch)
    for (std::size_t i = 0; i < n; ++i) d[ch * n + i] = f(ch, static_cast<double>(i) / kSampleRate);
  return EegWindow(std::move(d), n);
}

inline double rms(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

}  // namespace psyframe::testing
