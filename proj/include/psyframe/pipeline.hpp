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

#include <chrono>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "psyframe/command.hpp"
#include "psyframe/dataset_io.hpp"
#include "psyframe/model.hpp"
#include "psyframe/robot.hpp"
#include "psyframe/weights_io.hpp"

namespace psyframe {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// A scripted run of one class (or background, class_id = -1) for `hops` hops.
struct ScheduleSegment {
  int class_id = -1;
  int hops = 1;
  bool operator==(const ScheduleSegment&) const = default;
};

struct SourceConfig {
  std::string kind = "synth";  ///< "synth" or "replay"
  std::uint64_t seed = 7;
  std::vector<ScheduleSegment> schedule;
  std::string path;  ///< session log, for kind == "replay"
  bool operator==(const SourceConfig&) const = default;
};

struct TrainConfig {
  std::size_t n_per_class = 100;
  std::uint64_t seed = 2024;
  double train_fraction = 0.8;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double background_fraction = 0.2;
  std::string dataset_path;  ///< optional: train from this file instead of synthesizing
  std::string report_path = "psyframe_train_report.json";
  bool operator==(const TrainConfig&) const = default;
};

struct PipelineConfig {
  int window_seconds = 2;
  int hop_ms = 250;
  int robot_dt_ms = 20;
  double gate_limit_uv = 100.0;
  IntegratorParams integrator{};
  SourceConfig source{};
  std::string model_path = "psyframe_model.weights";
  int service_port = 7878;
  int run_hops = 100;
  int tick_interval_ms = -1;  ///< service wall-clock pacing; < 0 means hop_ms
  std::size_t tick_queue_capacity = 64;
  std::string log_path;  ///< session log written by run/serve when non-empty
  SynthParams synth{};
  TrainConfig train{};

  std::size_t window_samples() const { return static_cast<std::size_t>(window_seconds) * static_cast<std::size_t>(kSampleRate); }

  void validate() const {
    require(window_seconds >= 1, "config: window_seconds must be >= 1");
    require(hop_ms >= 1 && robot_dt_ms >= 1, "config: hop_ms and robot_dt_ms must be >= 1");
    require(hop_ms >= robot_dt_ms, "config: hop_ms must be >= robot_dt_ms");
    require((window_seconds * 1000) % hop_ms == 0, "config: window length must be a multiple of hop_ms");
    require(gate_limit_uv > 0.0, "config: gate_limit_uv must be > 0");
    require(source.kind == "synth" || source.kind == "replay", "config: source.kind must be 'synth' or 'replay'");
    require(source.kind != "replay" || !source.path.empty(), "config: replay source needs source.path");
    for (const auto& seg : source.schedule) {
      require(seg.class_id >= -1 && seg.class_id < static_cast<int>(kNumClasses), "config: schedule class_id out of range");
      require(seg.hops >= 0, "config: schedule hops must be >= 0");
    }
    require(run_hops >= 0, "config: run_hops must be >= 0");
    require(tick_queue_capacity >= 1, "config: tick_queue_capacity must be >= 1");
    require(service_port >= 0 && service_port <= 65535, "config: service_port out of range");
    integrator.validate();
  }
  bool operator==(const PipelineConfig&) const = default;
};

using ojson = nlohmann::ordered_json;

inline ojson params_to_json(const IntegratorParams& p) {
  return ojson{{"lambda", p.lambda}, {"theta", p.theta}, {"refractory", p.refractory}, {"combo_window", p.combo_window}};
}

/// Applies whichever keys are present; unknown keys are errors.
inline IntegratorParams params_patch(IntegratorParams p, const nlohmann::json& j, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    if (k == "lambda") p.lambda = v.get<double>();
    else if (k == "theta") p.theta = v.get<double>();
    else if (k == "refractory") p.refractory = v.get<int>();
    else if (k == "combo_window") p.combo_window = v.get<int>();
    else throw Error(where + ": unknown integrator key '" + k + "'");
  }
  p.validate();
  return p;
}

inline ojson schedule_to_json(const std::vector<ScheduleSegment>& s) {
  ojson a = ojson::array();
  for (const auto& seg : s) a.push_back(ojson{{"class_id", seg.class_id}, {"hops", seg.hops}});
  return a;
}

inline std::vector<ScheduleSegment> schedule_from_json(const nlohmann::json& j) {
  std::vector<ScheduleSegment> out;
  for (const auto& e : j) out.push_back({e.at("class_id").get<int>(), e.at("hops").get<int>()});
  return out;
}

inline ojson source_to_json(const SourceConfig& s) {
  return ojson{{"kind", s.kind}, {"seed", s.seed}, {"schedule", schedule_to_json(s.schedule)}, {"path", s.path}};
}

inline SourceConfig source_from_json(const nlohmann::json& j, SourceConfig s = {}) {
  for (const auto& [k, v] : j.items()) {
    if (k == "kind") s.kind = v.get<std::string>();
    else if (k == "seed") s.seed = v.get<std::uint64_t>();
    else if (k == "schedule") s.schedule = schedule_from_json(v);
    else if (k == "path") s.path = v.get<std::string>();
    else throw Error("config: unknown source key '" + k + "'");
  }
  return s;
}

inline ojson config_to_json(const PipelineConfig& c) {
  ojson j;
  j["window_seconds"] = c.window_seconds;
  j["hop_ms"] = c.hop_ms;
  j["robot_dt_ms"] = c.robot_dt_ms;
  j["gate_limit_uv"] = c.gate_limit_uv;
  j["integrator"] = params_to_json(c.integrator);
  j["source"] = source_to_json(c.source);
  j["model_path"] = c.model_path;
  j["service_port"] = c.service_port;
  j["run_hops"] = c.run_hops;
  j["tick_interval_ms"] = c.tick_interval_ms;
  j["tick_queue_capacity"] = c.tick_queue_capacity;
  j["log_path"] = c.log_path;
  j["synth"] = ojson{{"background_rms", c.synth.background_rms},
                     {"white_rms", c.synth.white_rms},
                     {"boost_gain", c.synth.boost_gain}};
  j["train"] = ojson{{"n_per_class", c.train.n_per_class},       {"seed", c.train.seed},
                     {"train_fraction", c.train.train_fraction}, {"epochs", c.train.epochs},
                     {"batch_size", c.train.batch_size},         {"lr", c.train.lr},
                     {"background_fraction", c.train.background_fraction},
                     {"dataset_path", c.train.dataset_path},     {"report_path", c.train.report_path}};
  return j;
}

/// Overlays a (possibly partial) JSON config onto `c`. Unknown keys are rejected
/// so typos do not silently fall back to defaults.
inline PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig c = {}) {
  require(j.is_object(), "config: top level must be an object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "window_seconds") c.window_seconds = v.get<int>();
      else if (k == "hop_ms") c.hop_ms = v.get<int>();
      else if (k == "robot_dt_ms") c.robot_dt_ms = v.get<int>();
      else if (k == "gate_limit_uv") c.gate_limit_uv = v.get<double>();
      else if (k == "integrator") c.integrator = params_patch(c.integrator, v, "config");
      else if (k == "source") c.source = source_from_json(v, c.source);
      else if (k == "model_path") c.model_path = v.get<std::string>();
      else if (k == "service_port") c.service_port = v.get<int>();
      else if (k == "run_hops") c.run_hops = v.get<int>();
      else if (k == "tick_interval_ms") c.tick_interval_ms = v.get<int>();
      else if (k == "tick_queue_capacity") c.tick_queue_capacity = v.get<std::size_t>();
      else if (k == "log_path") c.log_path = v.get<std::string>();
      else if (k == "synth") {
        for (const auto& [sk, sv] : v.items()) {
          if (sk == "background_rms") c.synth.background_rms = sv.get<double>();
          else if (sk == "white_rms") c.synth.white_rms = sv.get<double>();
          else if (sk == "boost_gain") c.synth.boost_gain = sv.get<double>();
          else throw Error("config: unknown synth key '" + sk + "'");
        }
      } else if (k == "train") {
        for (const auto& [tk, tv] : v.items()) {
          if (tk == "n_per_class") c.train.n_per_class = tv.get<std::size_t>();
          else if (tk == "seed") c.train.seed = tv.get<std::uint64_t>();
          else if (tk == "train_fraction") c.train.train_fraction = tv.get<double>();
          else if (tk == "epochs") c.train.epochs = tv.get<std::size_t>();
          else if (tk == "batch_size") c.train.batch_size = tv.get<std::size_t>();
          else if (tk == "lr") c.train.lr = tv.get<double>();
          else if (tk == "background_fraction") c.train.background_fraction = tv.get<double>();
          else if (tk == "dataset_path") c.train.dataset_path = tv.get<std::string>();
          else if (tk == "report_path") c.train.report_path = tv.get<std::string>();
          else throw Error("config: unknown train key '" + tk + "'");
        }
      } else {
        throw Error("config: unknown key '" + k + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  c.synth.n_samples = c.window_samples();
  c.validate();
  return c;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw Error("config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Tick reports
// ---------------------------------------------------------------------------

/// What drove one hop: the scripted class (-1 = background), the window seed
/// and the integrator parameters in force. Enough to regenerate the hop.
struct TickInput {
  std::int64_t tick = 0;
  int class_id = -1;
  std::uint64_t seed = 0;
  IntegratorParams params{};
  bool operator==(const TickInput&) const = default;
};

struct TickReport {
  std::int64_t tick = 0;
  int source_class = -1;
  bool rejected = false;
  Posterior posterior = Posterior::uniform();
  std::array<double, kNumBaseMoves> accumulators{};  ///< indexed by class, aligned with posterior
  std::optional<Move> triggered;
  std::vector<MoveEvent> events;
  Pose robot_angles{};
  std::optional<Move> robot_active;
  std::size_t robot_queue = 0;
  std::uint64_t dropped_moves = 0;
  IntegratorParams params{};
  std::array<std::array<double, kNumBands>, kNumChannels> band_power{};
  bool operator==(const TickReport&) const = default;
};

inline ojson report_to_json(const TickReport& r) {
  ojson j;
  j["tick"] = r.tick;
  j["source_class"] = r.source_class;
  j["rejected"] = r.rejected;
  j["posterior"] = r.posterior.probs;
  j["accumulators"] = r.accumulators;
  j["triggered"] = r.triggered ? ojson(move_id(*r.triggered)) : ojson(nullptr);
  ojson ev = ojson::array();
  for (const auto& e : r.events)
    ev.push_back(ojson{{"tick", e.tick},
                       {"move", move_id(e.move)},
                       {"source", e.source == EventSource::Combo ? "combo" : "base"}});
  j["events"] = std::move(ev);
  ojson angles;
  for (std::size_t i = 0; i < kNumJoints; ++i) angles[std::string(kJointNames[i])] = r.robot_angles[i];
  j["robot_angles"] = std::move(angles);
  j["robot_active"] = r.robot_active ? ojson(move_id(*r.robot_active)) : ojson(nullptr);
  j["robot_queue"] = r.robot_queue;
  j["dropped_moves"] = r.dropped_moves;
  j["params"] = params_to_json(r.params);
  j["band_power"] = r.band_power;
  return j;
}

inline TickReport report_from_json(const nlohmann::json& j) {
  TickReport r;
  r.tick = j.at("tick").get<std::int64_t>();
  r.source_class = j.at("source_class").get<int>();
  r.rejected = j.at("rejected").get<bool>();
  r.posterior.probs = j.at("posterior").get<std::array<double, kNumClasses>>();
  r.accumulators = j.at("accumulators").get<std::array<double, kNumBaseMoves>>();
  if (!j.at("triggered").is_null()) r.triggered = move_from_id(j.at("triggered").get<std::string>());
  for (const auto& e : j.at("events")) {
    const Move m = move_from_id(e.at("move").get<std::string>());
    r.events.push_back(make_event(e.at("tick").get<std::int64_t>(), m));
  }
  const auto& angles = j.at("robot_angles");
  for (std::size_t i = 0; i < kNumJoints; ++i) r.robot_angles[i] = angles.at(std::string(kJointNames[i])).get<double>();
  if (!j.at("robot_active").is_null()) r.robot_active = move_from_id(j.at("robot_active").get<std::string>());
  r.robot_queue = j.at("robot_queue").get<std::size_t>();
  r.dropped_moves = j.at("dropped_moves").get<std::uint64_t>();
  r.params = params_patch({}, j.at("params"), "report");
  r.band_power = j.at("band_power").get<std::array<std::array<double, kNumBands>, kNumChannels>>();
  return r;
}

inline ojson input_to_json(const TickInput& in) {
  return ojson{{"tick", in.tick}, {"class_id", in.class_id}, {"seed", in.seed}, {"params", params_to_json(in.params)}};
}

inline TickInput input_from_json(const nlohmann::json& j) {
  TickInput in;
  in.tick = j.at("tick").get<std::int64_t>();
  in.class_id = j.at("class_id").get<int>();
  in.seed = j.at("seed").get<std::uint64_t>();
  in.params = params_patch({}, j.at("params"), "session input");
  return in;
}

// ---------------------------------------------------------------------------
// Decode engine
// ---------------------------------------------------------------------------

/// Window for one hop: a fresh synthetic window for the scripted class, or
/// background when no class is scripted.
inline EegWindow acquire_window(const TickInput& in, const SynthParams& sp) {
  if (in.class_id < 0) return synth_noise_window(in.seed, sp, in.tick);
  return synth_window(class_from_id(in.class_id), in.seed, sp, in.tick);
}

/// gate -> filter -> normalize -> features -> forward -> integrate -> combos
/// -> robot. Pure in (state, input): feeding the same inputs reproduces the
/// same reports bit for bit.
class DecodeEngine {
 public:
  DecodeEngine(PipelineConfig cfg, ModelFile model) : cfg_(std::move(cfg)), model_(std::move(model)) {
    cfg_.validate();
    cfg_.synth.n_samples = cfg_.window_samples();
    require(model_.layout_id == kLayoutId,
            "model layout '" + model_.layout_id + "' does not match pipeline layout '" + std::string(kLayoutId) + "'");
  }

  const PipelineConfig& config() const { return cfg_; }
  const Weights& weights() const { return model_.weights; }
  std::int64_t last_tick() const { return tick_; }
  const RobotState& robot() const { return robot_; }

  TickReport step(const TickInput& in) {
    require(in.tick > tick_, "decode: ticks must be strictly increasing");
    in.params.validate();
    TickReport r;
    r.tick = in.tick;
    r.source_class = in.class_id;
    r.params = in.params;

    const EegWindow raw = acquire_window(in, cfg_.synth);
    const auto gate = gate_artifacts(raw, cfg_.gate_limit_uv);
    std::optional<Move> trig;
    if (gate.accepted) {
      const auto fv = preprocess_and_extract(raw);
      for (std::size_t ch = 0; ch < kNumChannels; ++ch)
        for (std::size_t b = 0; b < kNumBands; ++b) r.band_power[ch][b] = fv.at(ch, slot::kBandPower + b);
      r.posterior = predict(model_.weights, fv);
      auto res = integrate(integ_, r.posterior, in.params);
      integ_ = res.state;
      trig = res.trigger;
    } else {
      r.rejected = true;
      r.posterior = Posterior::uniform();
      integ_ = leak(integ_, in.params);
    }
    for (std::size_t c = 0; c < kNumClasses; ++c)
      r.accumulators[c] = integ_.acc[move_index(class_to_move(static_cast<ClassLabel>(c)))];
    r.triggered = trig;
    r.events = trig ? combo_resolve(combo_, *trig, in.tick, in.params.combo_window)
                    : combo_tick(combo_, in.tick, in.params.combo_window);
    for (const auto& e : r.events) robot_ = dispatch(robot_, e.move);

    // Robot runs on an integer-ms clock at robot_dt_ms up to the end of this hop.
    const std::int64_t hop_end = in.tick * cfg_.hop_ms;
    while (robot_ms_ + cfg_.robot_dt_ms <= hop_end) {
      robot_ = psyframe::step(robot_, cfg_.robot_dt_ms);
      robot_ms_ += cfg_.robot_dt_ms;
    }
    r.robot_angles = robot_.angles;
    r.robot_active = robot_.active ? std::optional<Move>(robot_.active->trajectory.move) : std::nullopt;
    r.robot_queue = robot_.queue.size();
    r.dropped_moves = robot_.dropped_moves;
    tick_ = in.tick;
    return r;
  }

 private:
  PipelineConfig cfg_;
  ModelFile model_;
  IntegratorState integ_{};
  ComboState combo_{};
  RobotState robot_{};
  std::int64_t tick_ = 0;
  std::int64_t robot_ms_ = 0;
};

// ---------------------------------------------------------------------------
// Input scheduling
// ---------------------------------------------------------------------------

/// Turns the scripted schedule plus operator injections into per-hop inputs.
class InputScheduler {
 public:
  explicit InputScheduler(const PipelineConfig& cfg) : source_(cfg.source), params_(cfg.integrator) {}

  const IntegratorParams& params() const { return params_; }
  void set_params(const IntegratorParams& p) {
    p.validate();
    params_ = p;
  }
  /// Overrides the schedule with `class_id` for the next `hold_hops` hops.
  void inject(int class_id, int hold_hops) {
    require(class_id >= -1 && class_id < static_cast<int>(kNumClasses), "inject: class_id out of range");
    require(hold_hops >= 1, "inject: hold_hops must be >= 1");
    inject_class_ = class_id;
    inject_left_ = hold_hops;
  }
  /// Replaces the synthetic source; the schedule restarts at the next hop.
  void set_source(const SourceConfig& s) {
    require(s.kind == "synth", "set_source: only the synth source can be selected live");
    source_ = s;
    schedule_start_ = next_tick_;
    inject_left_ = 0;
  }
  const SourceConfig& source() const { return source_; }
  std::int64_t next_tick() const { return next_tick_; }

  TickInput next() {
    TickInput in;
    in.tick = next_tick_++;
    in.params = params_;
    in.seed = mix_seed(source_.seed, 0x71C4, static_cast<std::uint64_t>(in.tick));
    if (inject_left_ > 0) {
      in.class_id = inject_class_;
      --inject_left_;
    } else {
      in.class_id = scheduled_class(in.tick - schedule_start_);
    }
    return in;
  }

 private:
  int scheduled_class(std::int64_t offset) const {
    for (const auto& seg : source_.schedule) {
      if (offset < seg.hops) return seg.class_id;
      offset -= seg.hops;
    }
    return -1;
  }

  SourceConfig source_;
  IntegratorParams params_;
  std::int64_t next_tick_ = 1;
  std::int64_t schedule_start_ = 1;
  int inject_class_ = -1;
  int inject_left_ = 0;
};

// ---------------------------------------------------------------------------
// Session logs
// ---------------------------------------------------------------------------

inline constexpr std::string_view kSessionFormat = "psyframe-session";
inline constexpr int kSessionVersion = 1;

struct SessionEntry {
  TickInput input;
  TickReport report;
  bool operator==(const SessionEntry&) const = default;
};

struct SessionLog {
  PipelineConfig config;
  std::uint64_t model_hash = 0;
  std::vector<SessionEntry> entries;
};

/// Streams a session log: a header line, then one line per hop.
class SessionWriter {
 public:
  SessionWriter(std::ostream& os, const PipelineConfig& cfg, std::uint64_t model_hash) : os_(os) {
    ojson h;
    h["record"] = "session";
    h["format"] = kSessionFormat;
    h["version"] = kSessionVersion;
    h["layout_id"] = kLayoutId;
    h["model_hash"] = hex64(model_hash);
    h["config"] = config_to_json(cfg);
    os_ << h.dump() << '\n';
  }
  void write(const TickInput& in, const TickReport& r) {
    ojson j;
    j["record"] = "tick";
    j["input"] = input_to_json(in);
    j["report"] = report_to_json(r);
    os_ << j.dump() << '\n';
    os_.flush();
  }

 private:
  std::ostream& os_;
};

inline SessionLog read_session_log(std::istream& is) {
  using json = nlohmann::json;
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), "session log: missing header");
  SessionLog log;
  try {
    const auto h = json::parse(line);
    require(h.value("format", "") == kSessionFormat, "session log: not a psyframe-session file");
    require(h.value("version", 0) == kSessionVersion, "session log: unsupported version");
    require(h.value("layout_id", "") == kLayoutId, "session log: layout mismatch");
    log.model_hash = parse_hex64(h.at("model_hash").get<std::string>());
    log.config = config_from_json(h.at("config"));
  } catch (const json::exception& e) {
    throw Error(std::string("session log header: ") + e.what());
  }
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      require(j.at("record").get<std::string>() == "tick", "expected a tick record");
      log.entries.push_back({input_from_json(j.at("input")), report_from_json(j.at("report"))});
    } catch (const json::exception& e) {
      throw Error("session log line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error("session log line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return log;
}

inline SessionLog load_session_log(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "cannot open session log '" + path + "'");
  return read_session_log(is);
}

struct ReplayResult {
  std::vector<TickReport> reports;
  std::size_t mismatches = 0;
  std::optional<std::int64_t> first_mismatch;
  bool identical() const { return mismatches == 0; }
};

/// Re-runs the logged inputs through a fresh engine and compares every report.
inline ReplayResult replay_session(const SessionLog& log, const ModelFile& model) {
  require(weights_hash(model.weights) == log.model_hash, "replay: model hash differs from the one recorded in the log");
  DecodeEngine engine(log.config, model);
  ReplayResult res;
  for (const auto& e : log.entries) {
    res.reports.push_back(engine.step(e.input));
    if (!(res.reports.back() == e.report)) {
      ++res.mismatches;
      if (!res.first_mismatch) res.first_mismatch = e.input.tick;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Headless run and training
// ---------------------------------------------------------------------------

inline ModelFile load_model_for(const PipelineConfig& cfg) {
  std::ifstream probe(cfg.model_path);
  require(static_cast<bool>(probe), "model file '" + cfg.model_path + "' not found; run `psyframe train` first");
  return load_weights(cfg.model_path);
}

struct RunStats {
  std::size_t hops = 0;
  double max_hop_ms = 0.0;
  double mean_hop_ms = 0.0;
};

/// Headless decode loop. Calls on_tick(input, report) once per hop. A replay
/// source re-feeds the logged inputs instead of the schedule.
template <typename OnTick>
RunStats run_decode_loop(const PipelineConfig& cfg, const ModelFile& model, OnTick&& on_tick) {
  DecodeEngine engine(cfg, model);
  std::vector<TickInput> inputs;
  if (cfg.source.kind == "replay") {
    for (auto& e : load_session_log(cfg.source.path).entries) inputs.push_back(e.input);
  } else {
    InputScheduler sched(cfg);
    for (int i = 0; i < cfg.run_hops; ++i) inputs.push_back(sched.next());
  }
  RunStats stats;
  double total = 0.0;
  for (const auto& in : inputs) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = engine.step(in);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    stats.max_hop_ms = std::max(stats.max_hop_ms, ms);
    total += ms;
    ++stats.hops;
    on_tick(in, r);
  }
  stats.mean_hop_ms = stats.hops ? total / static_cast<double>(stats.hops) : 0.0;
  return stats;
}

inline ojson train_report_to_json(const TrainReport& r, const ModelFile& m, std::uint64_t dataset_hash) {
  ojson j;
  j["format"] = "psyframe-train-report";
  j["version"] = 1;
  j["layout_id"] = m.layout_id;
  j["seed"] = m.seed;
  j["dataset_hash"] = hex64(dataset_hash);
  j["weights_hash"] = hex64(weights_hash(m.weights));
  j["initial_val_accuracy"] = r.initial_val_accuracy;
  ojson epochs = ojson::array();
  for (const auto& e : r.epochs)
    epochs.push_back(ojson{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy}});
  j["epochs"] = std::move(epochs);
  j["final_val_accuracy"] = r.final_val_accuracy();
  j["confusion"] = r.final_eval.confusion;
  return j;
}

struct TrainOutcome {
  ModelFile model;
  TrainReport report;
  std::uint64_t dataset_hash = 0;
};

/// Builds (or loads) the dataset, splits it, trains, evaluates and writes the
/// weights file and the report next to it.
inline TrainOutcome run_train(const PipelineConfig& cfg) {
  cfg.validate();
  const auto& t = cfg.train;
  SynthParams sp = cfg.synth;
  sp.n_samples = cfg.window_samples();
  const Dataset d = t.dataset_path.empty() ? build_dataset(t.n_per_class, t.seed, sp) : load_dataset(t.dataset_path);
  const auto [tr, va] = split_dataset(d, t.train_fraction, t.seed);
  TrainOptions opt;
  opt.epochs = t.epochs;
  opt.batch_size = t.batch_size;
  opt.seed = t.seed;
  opt.adam.lr = t.lr;
  opt.background_fraction = t.background_fraction;
  auto [w, report] = train(tr, va, ModelConfig{}, opt);
  TrainOutcome out{ModelFile{std::move(w), d.layout_id, t.seed}, std::move(report), d.hash()};
  if (!cfg.model_path.empty()) save_weights(cfg.model_path, out.model);
  if (!t.report_path.empty()) {
    std::ofstream os(t.report_path);
    require(static_cast<bool>(os), "cannot open '" + t.report_path + "' for writing");
    os << train_report_to_json(out.report, out.model, out.dataset_hash).dump(2) << '\n';
  }
  return out;
}

}  // namespace psyframe
