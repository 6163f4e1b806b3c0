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

#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <json.hpp>

#include "psyframe/synth.hpp"

namespace psyframe {

/// Dataset files are line-delimited JSON records, in this order:
///
///   {"record":"manifest","format":"psyframe-dataset","version":1,
///    "layout_id":"psyframe-feat-v1","fs":128,"channels":[...14 names...],
///    "n_samples":256,"counts":[c0,c1,c2,c3,c4],"seed":S,"signature_version":1}
///   {"record":"window","label":L,"start_tick":T,"samples":[row-major 14 x n_samples]}
///   ...
///
/// Samples are written as shortest round-trip decimals, so reading a file back
/// reproduces every sample bit for bit.
inline constexpr std::string_view kDatasetFormat = "psyframe-dataset";
inline constexpr int kDatasetVersion = 1;

inline void write_dataset(std::ostream& os, const Dataset& d) {
  using ojson = nlohmann::ordered_json;
  const std::size_t n_samples = d.windows.empty() ? kDefaultWindowSamples : d.windows.front().n_samples();
  ojson manifest;
  manifest["record"] = "manifest";
  manifest["format"] = kDatasetFormat;
  manifest["version"] = kDatasetVersion;
  manifest["layout_id"] = d.layout_id;
  manifest["fs"] = kSampleRate;
  manifest["channels"] = ojson::array();
  for (auto name : kChannelNames) manifest["channels"].push_back(std::string(name));
  manifest["n_samples"] = n_samples;
  manifest["counts"] = d.counts();
  manifest["seed"] = d.seed;
  manifest["signature_version"] = kSignatureVersion;
  os << manifest.dump() << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    ojson rec;
    rec["record"] = "window";
    rec["label"] = class_id(d.labels[i]);
    rec["start_tick"] = d.windows[i].start_tick();
    rec["samples"] = d.windows[i].data();
    os << rec.dump() << '\n';
  }
}

inline Dataset read_dataset(std::istream& is) {
  using json = nlohmann::json;
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), "dataset: missing manifest line");
  json manifest;
  try {
    manifest = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(std::string("dataset: malformed manifest: ") + e.what());
  }
  require(manifest.value("record", "") == "manifest" && manifest.value("format", "") == kDatasetFormat,
          "dataset: first record is not a psyframe-dataset manifest");
  require(manifest.value("version", 0) == kDatasetVersion, "dataset: unsupported version");
  require(manifest.at("fs").get<double>() == kSampleRate, "dataset: sampling rate must be 128 Hz");
  const auto channels = manifest.at("channels").get<std::vector<std::string>>();
  require(channels.size() == kNumChannels, "dataset: expected 14 channels");
  for (std::size_t i = 0; i < kNumChannels; ++i)
    require(channels[i] == kChannelNames[i], "dataset: channel order differs from canonical order");

  Dataset d;
  d.layout_id = manifest.at("layout_id").get<std::string>();
  d.seed = manifest.at("seed").get<std::uint64_t>();
  const auto n_samples = manifest.at("n_samples").get<std::size_t>();
  const auto counts = manifest.at("counts").get<std::array<std::size_t, kNumClasses>>();

  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto rec = json::parse(line);
      require(rec.at("record").get<std::string>() == "window", "expected a window record");
      auto samples = rec.at("samples").get<std::vector<double>>();
      d.windows.emplace_back(std::move(samples), n_samples, rec.at("start_tick").get<std::int64_t>());
      d.labels.push_back(class_from_id(rec.at("label").get<int>()));
    } catch (const json::exception& e) {
      throw Error("dataset line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  require(d.counts() == counts, "dataset: per-class counts disagree with the manifest");
  return d;
}

inline void save_dataset(const std::string& path, const Dataset& d) {
  std::ofstream os(path);
  require(static_cast<bool>(os), "cannot open '" + path + "' for writing");
  write_dataset(os, d);
  require(static_cast<bool>(os), "write to '" + path + "' failed");
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "cannot open dataset '" + path + "'");
  return read_dataset(is);
}

}  // namespace psyframe
