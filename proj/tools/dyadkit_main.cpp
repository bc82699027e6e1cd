// Copyright 2026 The Dyadkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <csignal>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <pthread.h>

#include <CLI11.hpp>

#include "dyadkit/annosvc.hpp"
#include "dyadkit/error.hpp"
#include "dyadkit/modmath.hpp"
#include "dyadkit/pipeline.hpp"
#include "dyadkit/synth.hpp"
#include "dyadkit/textio.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitMissingPrerequisite = 2;

struct NamedFlag {
  const char* flag;
  const char* key;
  const char* help;
  bool is_path = false;
};

const std::vector<NamedFlag>& named_flags() {
  static const std::vector<NamedFlag> flags = {
      {"--out", "output_dir", "output directory", true},
      {"--workers", "workers", "worker threads within a stage"},
      {"--max-gap", "segment.max_gap", "longest bridged gap in frames"},
      {"--min-len-s", "segment.min_len_s", "shortest kept segment in seconds"},
      {"--min-confidence", "segment.min_confidence", "person detection confidence floor"},
      {"--split-by", "split.by", "split grouping: clip or episode"},
      {"--tail", "audio.tail", "host model tail mass"},
      {"--merge-gap-s", "audio.merge_gap_s", "host segment merge gap in seconds"},
      {"--audio-labels", "audio.labels", "speech label source: file or store"},
      {"--n-boot", "face.n_boot", "bootstrap trials for the face threshold"},
      {"--tau", "face.tau", "fixed face threshold (skips calibration)"},
      {"--theta-new", "face.theta_new", "guest cluster join threshold"},
      {"--vote-fraction", "face.vote_fraction", "host vote fraction"},
      {"--voting", "face.voting", "per_track or per_frame"},
      {"--face-labels", "face.labels", "face label source: file or store"},
      {"--guest-coverage", "pairs.min_guest_coverage", "minimum guest coverage"},
      {"--host-coverage", "pairs.min_host_coverage", "minimum host coverage"},
      {"--max-area-ratio", "pairs.max_area_ratio", "largest allowed face area ratio"},
      {"--expand-factor", "pairs.expand_factor", "crop expansion factor"},
      {"--down-shift", "pairs.down_shift", "crop downward shift fraction"},
      {"--iqr-k", "pairs.iqr_k", "IQR fence multiplier"},
      {"--data-dir", "annotation.data_dir", "annotation store directory", true},
      {"--bind", "annotation.bind", "annotation server address"},
      {"--port", "annotation.port", "annotation server port"},
      {"--lease-s", "annotation.lease_s", "annotation lease in seconds"},
      {"--ui-dir", "annotation.ui_dir", "static UI assets", true},
  };
  return flags;
}

struct PipelineArgs {
  std::string config;
  std::vector<std::string> sets;
  bool json = false;
  std::deque<std::pair<const NamedFlag*, std::string>> named;
  std::vector<std::pair<CLI::Option*, std::size_t>> options;

  std::vector<std::string> overrides() const {
    std::vector<std::string> out = sets;
    for (const auto& [opt, i] : options) {
      if (opt->count() == 0) continue;
      const auto& [flag, value] = named[i];
      std::string v = value;
      if (flag->is_path && !v.empty()) v = fs::absolute(v).lexically_normal().string();
      out.push_back(std::string(flag->key) + "=" + v);
    }
    return out;
  }
};

void add_pipeline_options(CLI::App* cmd, PipelineArgs& args) {
  cmd->add_option("-c,--config", args.config, "pipeline configuration (YAML)")->required();
  cmd->add_option("--set", args.sets, "override any setting: dotted.key=value (repeatable)");
  cmd->add_flag("--json", args.json, "print stage reports as JSON");
  for (const auto& f : named_flags()) {
    args.named.emplace_back(&f, std::string());
    auto* opt = cmd->add_option(f.flag, args.named.back().second, f.help);
    args.options.emplace_back(opt, args.named.size() - 1);
  }
}

void print_report(const dyad::StageReport& r, bool json) {
  if (json) {
    std::cout << r.to_json().dump() << '\n';
    return;
  }
  std::cout << r.summary() << '\n';
  if (r.up_to_date) return;
  if (r.stage == "segment" && r.details.contains("reduction_ratio")) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "  reduction: %.4f h in -> %.4f h out (ratio %.4f)\n",
                  r.details["hours_in"].get<double>(), r.details["hours_out"].get<double>(),
                  r.details["reduction_ratio"].get<double>());
    std::cout << buf;
  }
}

int run_serve(const dyad::PipelineConfig& cfg) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  dyad::anno::LabelStore store(cfg.annotation.data_dir, std::int64_t{cfg.annotation.lease_s} * 1000);
  dyad::anno::AnnotationServer server(store, {cfg.inputs.media_root, cfg.annotation.ui_dir});
  const int port = server.start(cfg.annotation.bind, cfg.annotation.port);
  std::cout << "serving " << store.size() << " tasks on http://" << cfg.annotation.bind << ":" << port << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  std::cout << "stopped" << std::endl;
  return kExitOk;
}

int run_sweep(long tokens, long features, std::uint64_t seed) {
  const auto rows = dyad::modmath::cfg_sweep(tokens, features, seed, dyad::modmath::default_sweep_lambdas());
  std::printf("%-8s %-16s %-12s %-12s %-14s\n", "lambda", "relative_offset", "mean", "stddev", "max_abs_change");
  for (const auto& r : rows) {
    std::printf("%-8s %-16.6f %-12.6f %-12.6f %-14.6f\n", dyad::format_double(r.lambda).c_str(), r.relative_offset,
                r.mean, r.stddev, r.max_abs_change);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dyadkit: dyadic interview curation pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dyadkit 1.0.0");

  std::vector<std::pair<std::string, std::string>> stage_cmds = {
      {"ingest", "validate and normalize raw inputs"},
      {"segment", "extract two-person clips and assign splits"},
      {"calibrate-audio", "fit the host speech model and locate host turns"},
      {"calibrate-face", "build the host face gallery and threshold"},
      {"assign-ids", "label every face in every clip as host or guest"},
      {"derive-pairs", "cut guest/host interaction pairs and write the manifest"},
      {"plan-renders", "write render plans and encoder commands"},
      {"stats", "print clip statistics and write the histogram"},
      {"run-all", "run every batch stage in order"},
  };
  std::deque<PipelineArgs> stage_args;
  std::vector<std::pair<CLI::App*, std::string>> stage_apps;
  bool execute = false;
  for (const auto& [name, help] : stage_cmds) {
    auto* cmd = app.add_subcommand(name, help);
    stage_args.emplace_back();
    add_pipeline_options(cmd, stage_args.back());
    if (name == "plan-renders" || name == "run-all") cmd->add_flag("--execute", execute, "run the encoder commands");
    stage_apps.emplace_back(cmd, name);
  }

  PipelineArgs tasks_args;
  std::string task_stage;
  auto* tasks_cmd = app.add_subcommand("make-tasks", "create annotation tasks from pipeline outputs");
  add_pipeline_options(tasks_cmd, tasks_args);
  tasks_cmd->add_option("--stage", task_stage, "host_speech or host_face")->required();

  PipelineArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve-annotations", "serve the annotation API until interrupted");
  add_pipeline_options(serve_cmd, serve_args);

  dyad::SynthOptions synth;
  std::string synth_dir;
  bool no_identity = false;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic corpus with ground truth");
  synth_cmd->add_option("-o,--out", synth_dir, "target directory")->required();
  synth_cmd->add_option("--episodes", synth.episodes, "number of episodes")->capture_default_str();
  synth_cmd->add_option("--frames", synth.frames, "frames per episode")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  synth_cmd->add_flag("--no-identity", no_identity, "tracking logs only (no diarization, embeddings or labels)");

  long sweep_tokens = 64;
  long sweep_features = 128;
  std::uint64_t sweep_seed = 1;
  auto* sweep_cmd = app.add_subcommand("sweep", "tabulate the guidance-scale sweep of the modulation algebra");
  sweep_cmd->add_option("--tokens", sweep_tokens, "token count")->capture_default_str();
  sweep_cmd->add_option("--features", sweep_features, "feature width")->capture_default_str();
  sweep_cmd->add_option("--seed", sweep_seed, "random seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  }

  try {
    for (std::size_t i = 0; i < stage_apps.size(); ++i) {
      auto* cmd = stage_apps[i].first;
      if (!cmd->parsed()) continue;
      auto& args = stage_args[i];
      auto overrides = args.overrides();
      if (execute) overrides.push_back("render.execute=true");
      dyad::Pipeline pipeline(dyad::load_pipeline_config(args.config, overrides));
      const auto& name = stage_apps[i].second;
      if (name == "run-all") {
        pipeline.run_all([&](const dyad::StageReport& r) { print_report(r, args.json); });
      } else {
        print_report(pipeline.run_stage(name), args.json);
      }
      if ((name == "stats" || name == "run-all") && !args.json) {
        std::cout << dyad::read_file(pipeline.out("stats/stats.txt"));
      }
      return kExitOk;
    }
    if (tasks_cmd->parsed()) {
      dyad::Pipeline pipeline(dyad::load_pipeline_config(tasks_args.config, tasks_args.overrides()));
      print_report(pipeline.make_tasks(task_stage), tasks_args.json);
      return kExitOk;
    }
    if (serve_cmd->parsed()) {
      return run_serve(dyad::load_pipeline_config(serve_args.config, serve_args.overrides()));
    }
    if (synth_cmd->parsed()) {
      synth.with_identity = !no_identity;
      const auto truth = dyad::write_synthetic_corpus(synth_dir, synth);
      std::cout << "wrote " << truth.episodes.size() << " episodes, " << truth.detections << " detections, "
                << truth.clips.size() << " expected clips to " << synth_dir << '\n';
      return kExitOk;
    }
    if (sweep_cmd->parsed()) return run_sweep(sweep_tokens, sweep_features, sweep_seed);
  } catch (const dyad::Error& e) {
    std::cerr << "error (" << dyad::to_string(e.kind()) << "): " << e.what() << '\n';
    return e.kind() == dyad::ErrorKind::kMissingPrerequisite ? kExitMissingPrerequisite : kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitOk;
}
