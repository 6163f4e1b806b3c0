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

// psyframe command-line front end: dataset synthesis, training, evaluation,
// headless decode runs, session replay and the telemetry service.

#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "psyframe/dataset_io.hpp"
#include "psyframe/pipeline.hpp"
#include "psyframe/service.hpp"

using namespace psyframe;

namespace {

volatile std::sig_atomic_t g_stop = 0;
extern "C" void on_signal(int) { g_stop = 1; }

// "1:20,-1:5" -> [{1,20},{-1,5}]
std::vector<ScheduleSegment> parse_schedule(const std::string& text) {
  std::vector<ScheduleSegment> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    require(colon != std::string::npos, "schedule entry '" + item + "' is not CLASS:HOPS");
    try {
      out.push_back({std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1))});
    } catch (const std::exception&) {
      throw Error("schedule entry '" + item + "' is not CLASS:HOPS");
    }
  }
  return out;
}

struct Overrides {
  std::optional<std::string> model, log, schedule, dataset, report, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> hops, port, tick_interval_ms, epochs, n_per_class;
};

void apply(PipelineConfig& cfg, const Overrides& o) {
  if (o.model) cfg.model_path = *o.model;
  if (o.log) cfg.log_path = *o.log;
  if (o.schedule) cfg.source.schedule = parse_schedule(*o.schedule);
  if (o.seed) cfg.source.seed = *o.seed;
  if (o.hops) cfg.run_hops = *o.hops;
  if (o.port) cfg.service_port = *o.port;
  if (o.tick_interval_ms) cfg.tick_interval_ms = *o.tick_interval_ms;
  if (o.dataset) cfg.train.dataset_path = *o.dataset;
  if (o.report) cfg.train.report_path = *o.report;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.n_per_class) cfg.train.n_per_class = *o.n_per_class;
  cfg.validate();
}

ojson eval_to_json(const Evaluation& e) {
  ojson j;
  j["accuracy"] = e.accuracy;
  j["total"] = e.total;
  j["confusion"] = e.confusion;
  return j;
}

int cmd_synth(const PipelineConfig& cfg, const std::string& out) {
  SynthParams sp = cfg.synth;
  sp.n_samples = cfg.window_samples();
  const auto d = build_dataset(cfg.train.n_per_class, cfg.train.seed, sp);
  save_dataset(out, d);
  std::cout << ojson{{"dataset", out}, {"windows", d.windows.size()}, {"layout_id", d.layout_id},
                     {"hash", hex64(d.hash())}}.dump()
            << '\n';
  return 0;
}

int cmd_train(const PipelineConfig& cfg) {
  const auto out = run_train(cfg);
  for (const auto& e : out.report.epochs)
    std::cerr << "epoch " << e.epoch << "  loss " << e.train_loss << "  val_acc " << e.val_accuracy << '\n';
  std::cout << ojson{{"model", cfg.model_path}, {"report", cfg.train.report_path},
                     {"final_val_accuracy", out.report.final_val_accuracy()},
                     {"weights_hash", hex64(weights_hash(out.model.weights))}}.dump()
            << '\n';
  return 0;
}

// Evaluates on the validation split of the configured dataset, or on the whole
// of an explicitly given dataset file.
int cmd_eval(const PipelineConfig& cfg, bool whole_file) {
  const auto model = load_model_for(cfg);
  Dataset d;
  if (whole_file) {
    d = load_dataset(cfg.train.dataset_path);
  } else {
    SynthParams sp = cfg.synth;
    sp.n_samples = cfg.window_samples();
    d = split_dataset(build_dataset(cfg.train.n_per_class, cfg.train.seed, sp), cfg.train.train_fraction,
                      cfg.train.seed)
            .second;
  }
  require(model.layout_id == d.layout_id, "eval: model layout '" + model.layout_id + "' does not match dataset");
  std::cout << eval_to_json(evaluate(model.weights, d)).dump() << '\n';
  return 0;
}

int cmd_run(const PipelineConfig& cfg) {
  const auto model = load_model_for(cfg);
  std::ofstream log_file;
  std::optional<SessionWriter> log;
  if (!cfg.log_path.empty()) {
    log_file.open(cfg.log_path);
    require(static_cast<bool>(log_file), "cannot open log '" + cfg.log_path + "'");
    log.emplace(log_file, cfg, weights_hash(model.weights));
  }
  const auto stats = run_decode_loop(cfg, model, [&](const TickInput& in, const TickReport& r) {
    std::cout << report_to_json(r).dump() << '\n';
    if (log) log->write(in, r);
  });
  std::cerr << "hops " << stats.hops << "  mean_hop_ms " << stats.mean_hop_ms << "  max_hop_ms " << stats.max_hop_ms
            << '\n';
  return 0;
}

int cmd_replay(const PipelineConfig& cfg, const std::string& path, bool model_given) {
  const auto log = load_session_log(path);
  PipelineConfig mcfg = log.config;
  if (model_given) mcfg.model_path = cfg.model_path;
  const auto res = replay_session(log, load_model_for(mcfg));
  ojson j{{"log", path}, {"ticks", res.reports.size()}, {"mismatches", res.mismatches}, {"identical", res.identical()}};
  if (res.first_mismatch) j["first_mismatch_tick"] = *res.first_mismatch;
  std::cout << j.dump() << '\n';
  return res.identical() ? 0 : 1;
}

int cmd_serve(const PipelineConfig& cfg) {
  TelemetryService svc(cfg, load_model_for(cfg));
  svc.start();
  std::cerr << "serving on 127.0.0.1:" << svc.port() << '\n';
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  svc.run_until([] { return g_stop != 0; });
  std::cerr << "stopped after " << svc.ticks_emitted() << " ticks\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"psyframe: synthetic motor-imagery decoding and robot control"};
  app.set_version_flag("--version", "psyframe 1.0");
  std::string config_path;
  bool show_config = false;
  Overrides o;
  app.add_option("--config", config_path, "JSON config file (comments allowed)")->check(CLI::ExistingFile);
  app.add_flag("--show-config", show_config, "Print the effective config and exit");

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset file");
  std::string synth_out = "psyframe_dataset.jsonl";
  synth->add_option("--out", synth_out, "Dataset output path")->capture_default_str();
  synth->add_option("--n-per-class", o.n_per_class, "Windows per class");
  synth->add_option("--seed", o.seed, "Dataset seed (sets train.seed)");

  auto* train = app.add_subcommand("train", "Train a model and write weights plus a report");
  train->add_option("--model", o.model, "Weights output path");
  train->add_option("--report", o.report, "Training report path");
  train->add_option("--dataset", o.dataset, "Train from a dataset file instead of synthesizing");
  train->add_option("--epochs", o.epochs, "Training epochs");
  train->add_option("--n-per-class", o.n_per_class, "Windows per class when synthesizing");

  auto* eval = app.add_subcommand("eval", "Evaluate a model");
  eval->add_option("--model", o.model, "Weights file");
  eval->add_option("--dataset", o.dataset, "Evaluate on every window of this dataset file");

  auto* run = app.add_subcommand("run", "Headless decode loop; prints one JSON report per hop");
  run->add_option("--model", o.model, "Weights file");
  run->add_option("--hops", o.hops, "Number of hops");
  run->add_option("--schedule", o.schedule, "Scripted classes, e.g. 1:20,-1:5 (-1 is background)");
  run->add_option("--seed", o.seed, "Source seed");
  run->add_option("--log", o.log, "Write a session log");

  auto* replay = app.add_subcommand("replay", "Re-run a session log and compare reports bit for bit");
  std::string replay_path;
  replay->add_option("log", replay_path, "Session log")->required()->check(CLI::ExistingFile);
  replay->add_option("--model", o.model, "Weights file (default: the one named in the log's config)");

  auto* serve = app.add_subcommand("serve", "Run the telemetry/control service");
  serve->add_option("--port", o.port, "TCP port on 127.0.0.1 (0 picks one)");
  serve->add_option("--model", o.model, "Weights file");
  serve->add_option("--log", o.log, "Write a session log");
  serve->add_option("--tick-interval-ms", o.tick_interval_ms, "Wall-clock tick spacing (default hop_ms)");
  serve->add_option("--schedule", o.schedule, "Scripted classes, e.g. 1:20,-1:5");
  serve->add_option("--seed", o.seed, "Source seed");

  CLI11_PARSE(app, argc, argv);

  try {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    if (synth->parsed() && o.seed) {
      cfg.train.seed = *o.seed;
      o.seed.reset();
    }
    apply(cfg, o);
    if (show_config) {
      std::cout << config_to_json(cfg).dump(2) << '\n';
      return 0;
    }
    if (synth->parsed()) return cmd_synth(cfg, synth_out);
    if (train->parsed()) return cmd_train(cfg);
    if (eval->parsed()) return cmd_eval(cfg, o.dataset.has_value());
    if (run->parsed()) return cmd_run(cfg);
    if (replay->parsed()) return cmd_replay(cfg, replay_path, o.model.has_value());
    if (serve->parsed()) return cmd_serve(cfg);
    std::cerr << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "psyframe: " << e.what() << '\n';
    return 1;
  }
}
