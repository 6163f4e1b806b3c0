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
#include <map>
#include <ostream>
#include <string>

#include <json.hpp>

#include "psyframe/model.hpp"

namespace psyframe {

/// Weights files are line-delimited JSON:
///
///   {"record":"manifest","format":"psyframe-weights","version":1,
///    "layout_id":"psyframe-feat-v1","seed":S,"config":{...},"arrays":N}
///   {"record":"array","name":"proj_w","shape":[13,32],"hex":"<16 hex digits per value>"}
///   ...
///
/// Each value is the big-endian hex of its IEEE-754 bit pattern, so a file
/// round-trips bit for bit.
inline constexpr std::string_view kWeightsFormat = "psyframe-weights";
inline constexpr int kWeightsVersion = 1;

struct ModelFile {
  Weights weights;
  std::string layout_id{kLayoutId};
  std::uint64_t seed = 0;
  bool operator==(const ModelFile&) const = default;
};

inline nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["n_layers"] = c.n_layers;
  j["n_tokens"] = c.n_tokens();
  j["token_dim"] = c.token_dim;
  j["n_classes"] = c.n_classes;
  j["d_ff"] = c.d_ff;
  j["dropout"] = c.dropout;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_channel_tokens = j.value("n_tokens", c.n_tokens()) - 1;
  c.token_dim = j.value("token_dim", c.token_dim);
  c.n_classes = j.value("n_classes", c.n_classes);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.dropout = j.value("dropout", c.dropout);
  c.validate();
  return c;
}

inline std::uint64_t weights_hash(const Weights& w) {
  Fnv1a h;
  visit_all_arrays(w, [&](const std::string& name, const Tensor& t) {
    h.str(name);
    for (auto d : t.shape) h.u64(d);
    h.f64s(t.data);
  });
  return h.value();
}

inline void write_weights(std::ostream& os, const ModelFile& m) {
  using ojson = nlohmann::ordered_json;
  std::size_t n_arrays = 0;
  visit_all_arrays(m.weights, [&](const std::string&, const Tensor&) { ++n_arrays; });
  ojson manifest;
  manifest["record"] = "manifest";
  manifest["format"] = kWeightsFormat;
  manifest["version"] = kWeightsVersion;
  manifest["layout_id"] = m.layout_id;
  manifest["seed"] = m.seed;
  manifest["config"] = model_config_to_json(m.weights.cfg);
  manifest["arrays"] = n_arrays;
  os << manifest.dump() << '\n';
  visit_all_arrays(m.weights, [&](const std::string& name, const Tensor& t) {
    std::string hex;
    hex.reserve(16 * t.size());
    for (double v : t.data) hex += hex64(std::bit_cast<std::uint64_t>(v));
    ojson rec;
    rec["record"] = "array";
    rec["name"] = name;
    rec["shape"] = t.shape;
    rec["hex"] = std::move(hex);
    os << rec.dump() << '\n';
  });
}

inline ModelFile read_weights(std::istream& is) {
  using json = nlohmann::json;
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), "weights: missing manifest line");
  json manifest;
  try {
    manifest = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(std::string("weights: malformed manifest: ") + e.what());
  }
  require(manifest.value("record", "") == "manifest" && manifest.value("format", "") == kWeightsFormat,
          "weights: first record is not a psyframe-weights manifest");
  require(manifest.value("version", 0) == kWeightsVersion, "weights: unsupported version");

  ModelFile m;
  m.layout_id = manifest.at("layout_id").get<std::string>();
  m.seed = manifest.at("seed").get<std::uint64_t>();
  m.weights = zero_weights(model_config_from_json(manifest.at("config")));

  std::map<std::string, Tensor> arrays;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto rec = json::parse(line);
      require(rec.at("record").get<std::string>() == "array", "expected an array record");
      Tensor t;
      t.shape = rec.at("shape").get<std::vector<std::size_t>>();
      const auto hex = rec.at("hex").get<std::string>();
      require(hex.size() % 16 == 0, "hex payload length is not a multiple of 16");
      t.data.reserve(hex.size() / 16);
      for (std::size_t i = 0; i < hex.size(); i += 16) t.data.push_back(std::bit_cast<double>(parse_hex64(hex.substr(i, 16))));
      arrays[rec.at("name").get<std::string>()] = std::move(t);
    } catch (const json::exception& e) {
      throw Error("weights line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error("weights line " + std::to_string(lineno) + ": " + e.what());
    }
  }

  std::size_t used = 0;
  visit_all_arrays(m.weights, [&](const std::string& name, Tensor& t) {
    const auto it = arrays.find(name);
    require(it != arrays.end(), "weights: missing array '" + name + "'");
    require(it->second.shape == t.shape, "weights: shape mismatch for '" + name + "'");
    require(it->second.data.size() == t.size(), "weights: element count mismatch for '" + name + "'");
    for (double v : it->second.data) require(std::isfinite(v), "weights: non-finite value in '" + name + "'");
    t = std::move(it->second);
    ++used;
  });
  require(used == arrays.size(), "weights: file has unexpected extra arrays");
  return m;
}

inline void save_weights(const std::string& path, const ModelFile& m) {
  std::ofstream os(path);
  require(static_cast<bool>(os), "cannot open '" + path + "' for writing");
  write_weights(os, m);
  require(static_cast<bool>(os), "write to '" + path + "' failed");
}

inline ModelFile load_weights(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "cannot open weights file '" + path + "'");
  return read_weights(is);
}

}  // namespace psyframe
