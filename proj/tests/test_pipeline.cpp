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

#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dyadkit/annosvc.hpp"
#include "dyadkit/pipeline.hpp"
#include "dyadkit/synth.hpp"
#include "dyadkit/textio.hpp"
#include "support.hpp"

namespace dyad {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::error_kind;
using testing::TempDir;

const fs::path kMini = fs::path(DYADKIT_SOURCE_DIR) / "data" / "mini";

fs::path copy_mini(const TempDir& dir) {
  const auto dst = dir / "mini";
  fs::copy(kMini, dst, fs::copy_options::recursive);
  return dst / "config.yaml";
}

Pipeline mini_pipeline(const fs::path& config, std::vector<std::string> overrides = {}) {
  return Pipeline(load_pipeline_config(config, overrides));
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  std::istringstream in(read_file(p));
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TEST_CASE("an empty configuration takes the documented defaults") {
  const auto c = parse_pipeline_config("output_dir: out\n", "/base");
  CHECK(c.output_dir == fs::path("/base/out"));
  CHECK(c.workers == 1);
  CHECK(c.segment.max_gap == 12);
  CHECK(c.segment.min_len_s == 2.0);
  CHECK(c.audio.tail == 0.01);
  CHECK(c.face.n_boot == 200);
  CHECK_FALSE(c.face.tau);
  CHECK(c.pairs.guest_frames == 64);
  CHECK(c.pairs.host_frames == 81);
  CHECK(c.pairs.min_guest_coverage == 0.70);
  CHECK(c.pairs.min_host_coverage == 0.85);
  CHECK(c.pairs.max_area_ratio == 10.0);
  CHECK(c.pairs.expand_factor == 1.3);
  CHECK(c.pairs.down_shift == 0.2);
  CHECK(c.render.fps == 25.0);
  CHECK(c.render.crf == 18);
  CHECK(c.render.audio_rate_hz == 16000);
  CHECK(c.render.audio_channels == 1);
  CHECK(c.split.train == 0.8);
  CHECK(c.annotation.data_dir == fs::path("/base/out/annotations"));
  CHECK(c.annotation.lease_s == 120);
}

TEST_CASE("nested keys, relative paths and overrides are applied") {
  const std::string yaml =
      "inputs:\n  episodes: data/episodes.txt\n  media_root: /abs/media\n"
      "output_dir: run\nsegment:\n  max_gap: 3\nface:\n  tau: 0.6\n  voting: per_frame\n";
  const std::vector<std::string> overrides{"segment.max_gap=7", "face.tau=", "workers=3", "split.by=episode"};
  const auto c = parse_pipeline_config(yaml, "/cfg", overrides);
  CHECK(c.inputs.episodes == fs::path("/cfg/data/episodes.txt"));
  CHECK(c.inputs.media_root == fs::path("/abs/media"));
  CHECK(c.segment.max_gap == 7);
  CHECK_FALSE(c.face.tau);
  CHECK(c.face.voting == VotingMode::kPerFrame);
  CHECK(c.workers == 3);
  CHECK(c.split_by == SplitGrouping::kEpisode);
  CHECK(parse_pipeline_config(yaml, "/cfg").face.tau == 0.6);
}

TEST_CASE("unknown keys, bad values and out-of-range settings are configuration errors") {
  auto kind = [](const std::string& yaml, std::vector<std::string> o = {}) {
    return error_kind([&] { parse_pipeline_config(yaml, "/b", o); });
  };
  CHECK(kind("output_dir: o\nsegmnet:\n  max_gap: 3\n") == ErrorKind::kConfig);
  CHECK(kind("output_dir: o\n", {"nope.key=1"}) == ErrorKind::kConfig);
  CHECK(kind("output_dir: o\n", {"segment.max_gap"}) == ErrorKind::kConfig);
  CHECK(kind("output_dir: o\nsegment:\n  max_gap: many\n") == ErrorKind::kConfig);
  CHECK(kind("output_dir: o\nsegment:\n  max_gap: -1\n") == ErrorKind::kConfig);
  CHECK(kind("output_dir: o\naudio:\n  tail: 0.5\n") == ErrorKind::kConfig);
  CHECK(kind("output_dir: o\nface:\n  voting: sometimes\n") == ErrorKind::kConfig);
  CHECK(kind("output_dir: o\nsplit:\n  train: 0.9\n") == ErrorKind::kConfig);
  CHECK(kind("output_dir: o\npairs:\n  min_host_coverage: 1.5\n") == ErrorKind::kConfig);
  CHECK(kind("output_dir: o\nworkers: 0\n") == ErrorKind::kConfig);
  CHECK(kind("output_dir: [\n") == ErrorKind::kConfig);
  CHECK(error_kind([] { load_pipeline_config("/nonexistent/config.yaml"); }).has_value());
}

TEST_CASE("the canonical listing is stable and reflects overrides") {
  const auto a = parse_pipeline_config("output_dir: o\n", "/b");
  const auto b = parse_pipeline_config("output_dir: o\n", "/b");
  CHECK(a.canonical_text() == b.canonical_text());
  const std::vector<std::string> o{"pairs.iqr_k=2"};
  const auto c = parse_pipeline_config("output_dir: o\n", "/b", o);
  CHECK(c.canonical_text() != a.canonical_text());
  CHECK(c.canonical_text().find("pairs.iqr_k = 2") != std::string::npos);
}

TEST_CASE("parallel_for visits every index and rethrows the lowest failure") {
  std::vector<int> hits(100, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  try {
    parallel_for(50, 3, [](std::size_t i) {
      if (i == 7 || i == 31) fail(ErrorKind::kValidation, "boom " + std::to_string(i));
    });
    FAIL("expected an exception");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("boom 7") != std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Bundled mini-episode
// ---------------------------------------------------------------------------

TEST_CASE("the bundled mini-episode is the synthetic generator's default output") {
  TempDir dir;
  write_synthetic_corpus(dir.path(), {});
  for (const auto& entry : fs::recursive_directory_iterator(kMini)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), kMini);
    CAPTURE(rel.string());
    REQUIRE(fs::exists(dir / rel.string()));
    CHECK(read_file(entry.path()) == read_file(dir / rel.string()));
  }
}

TEST_CASE("run-all on the mini-episode yields pairs at the scripted host onsets") {
  TempDir dir;
  const auto config = copy_mini(dir);
  auto p = mini_pipeline(config);
  const auto reports = p.run_all();
  REQUIRE(reports.size() == Pipeline::batch_stages().size());
  for (const auto& r : reports) CHECK_FALSE(r.up_to_date);

  const auto manifest = load_manifest(p.out("manifest.txt"));
  REQUIRE(manifest.pairs.size() >= 1);
  const auto truth = json::parse(read_file(dir / "mini" / "truth.json"));
  std::set<FrameIndex> onsets;
  std::set<FrameIndex> low;
  for (const auto& c : truth.at("clips")) {
    for (auto t : c.at("host_onsets")) onsets.insert(t.get<FrameIndex>());
    for (auto t : c.at("low_coverage_onsets")) low.insert(t.get<FrameIndex>());
  }
  for (const auto& pair : manifest.pairs) {
    CHECK(pair.t1 - pair.t0 == 64);
    CHECK(pair.t2 - pair.t1 == 81);
    CHECK(onsets.contains(pair.t1));
    CHECK_FALSE(low.contains(pair.t1));
  }
  const auto rejected = read_file(p.out("rejections/derive-pairs.tsv"));
  for (auto t : low) CHECK(rejected.find("_p" + std::to_string(t) + "\tguest_coverage") != std::string::npos);

  for (const auto& line : lines_of(p.out("renders/plans.jsonl"))) {
    const auto plan = render_plan_from_json(line);
    CHECK(plan.spec.fps == 25.0);
    CHECK(plan.spec.crf == 18);
    CHECK(plan.spec.audio_rate_hz == 16000);
    CHECK(plan.spec.audio_channels == 1);
  }
}

TEST_CASE("a second run reports every stage up to date and changes no bytes") {
  TempDir dir;
  const auto config = copy_mini(dir);
  auto p = mini_pipeline(config);
  p.run_all();
  const auto before = read_file(p.out("renders/plans.jsonl"));
  for (const auto& r : mini_pipeline(config).run_all()) CHECK(r.up_to_date);
  CHECK(read_file(p.out("renders/plans.jsonl")) == before);

  // Changing a pair threshold reruns derive-pairs and its dependants only.
  const auto reports = mini_pipeline(config, {"pairs.min_guest_coverage=0.5"}).run_all();
  std::map<std::string, bool> fresh;
  for (const auto& r : reports) fresh[r.stage] = r.up_to_date;
  CHECK(fresh["ingest"]);
  CHECK(fresh["assign-ids"]);
  CHECK_FALSE(fresh["derive-pairs"]);
  CHECK_FALSE(fresh["plan-renders"]);
}

TEST_CASE("separate runs and worker counts give byte-identical artifacts") {
  TempDir dir;
  const auto config = copy_mini(dir);
  auto a = mini_pipeline(config, {"output_dir=run_a", "workers=1"});
  auto b = mini_pipeline(config, {"output_dir=run_b", "workers=2"});
  a.run_all();
  b.run_all();
  std::vector<std::string> files{"manifest.txt", "segment/manifest.txt", "pairs/pairs.jsonl",
                                 "renders/plans.jsonl", "ids/index.txt",
                                 "audio/host_model.txt", "face/gallery.txt", "stats/stats.json"};
  for (const auto& entry : fs::directory_iterator(a.out("ids"))) {
    files.push_back("ids/" + entry.path().filename().string());
  }
  for (const auto& f : files) {
    CAPTURE(f);
    CHECK(read_file(a.out(f)) == read_file(b.out(f)));
  }
}

TEST_CASE("each rejected candidate appears in exactly one ledger") {
  TempDir dir;
  auto p = mini_pipeline(copy_mini(dir));
  const auto reports = p.run_all();
  std::map<std::string, int> seen;
  std::size_t rows = 0;
  for (const auto& entry : fs::directory_iterator(p.out("rejections"))) {
    const auto lines = lines_of(entry.path());
    REQUIRE_FALSE(lines.empty());
    CHECK(lines[0] == "# candidate\treason\tdetail");
    for (std::size_t i = 1; i < lines.size(); ++i) {
      ++seen[lines[i].substr(0, lines[i].find('\t'))];
      ++rows;
    }
  }
  for (const auto& [candidate, n] : seen) {
    CAPTURE(candidate);
    CHECK(n == 1);
  }
  std::size_t reported = 0;
  for (const auto& r : reports) {
    for (const auto& [reason, n] : r.rejections) reported += n;
  }
  CHECK(reported == rows);
  CHECK(rows >= 4);
}

TEST_CASE("stats agree with durations recomputed from the manifest") {
  TempDir dir;
  auto p = mini_pipeline(copy_mini(dir));
  p.run_all();
  std::map<std::string, double> fps;
  std::vector<double> durations;
  for (const auto& line : lines_of(p.out("manifest.txt"))) {
    std::istringstream in(line);
    std::string kind;
    in >> kind;
    if (kind == "episode") {
      std::string id;
      double f;
      in >> id >> f;
      fps[id] = f;
    } else if (kind == "clip") {
      std::string id, ep;
      double b, e;
      in >> id >> ep >> b >> e;
      durations.push_back((e - b) / fps.at(ep));
    }
  }
  REQUIRE_FALSE(durations.empty());
  double sum = 0;
  for (double d : durations) sum += d;
  const double mean = sum / static_cast<double>(durations.size());
  double ss = 0;
  for (double d : durations) ss += (d - mean) * (d - mean);
  const auto stats = json::parse(read_file(p.out("stats/stats.json")));
  CHECK(stats["clip_count"] == durations.size());
  CHECK(stats["total_seconds"].get<double>() == doctest::Approx(sum).epsilon(1e-12));
  CHECK(stats["total_hours"].get<double>() == doctest::Approx(sum / 3600).epsilon(1e-12));
  CHECK(stats["mean_s"].get<double>() == doctest::Approx(mean).epsilon(1e-12));
  CHECK(stats["std_s"].get<double>() == doctest::Approx(std::sqrt(ss / durations.size())).epsilon(1e-9));
  CHECK(stats["std_kind"] == "population");
}

TEST_CASE("stages refuse to run before their producers") {
  TempDir dir;
  const auto config = copy_mini(dir);
  for (const auto* stage : {"segment", "calibrate-audio", "assign-ids", "derive-pairs", "plan-renders", "stats"}) {
    CAPTURE(stage);
    CHECK(error_kind([&] { mini_pipeline(config).run_stage(stage); }) == ErrorKind::kMissingPrerequisite);
  }
  CHECK(error_kind([&] { mini_pipeline(config).run_stage("dance"); }) == ErrorKind::kConfig);
  auto p = mini_pipeline(config);
  p.run_stage("ingest");
  p.run_stage("segment");
  CHECK(error_kind([&] { mini_pipeline(config, {"audio.labels=store"}).run_stage("calibrate-audio"); }) ==
        ErrorKind::kMissingPrerequisite);
}

TEST_CASE("labels exported from the store calibrate the same host model as the label file") {
  TempDir dir;
  const auto config = copy_mini(dir);
  auto file_run = mini_pipeline(config, {"output_dir=by_file"});
  for (const auto* s : {"ingest", "segment", "calibrate-audio"}) file_run.run_stage(s);

  // Recreate the label file's verdicts through the annotation store.
  auto store_run = mini_pipeline(config, {"output_dir=by_store", "audio.labels=store"});
  for (const auto* s : {"ingest", "segment"}) store_run.run_stage(s);
  const auto labels = load_labels(dir / "mini" / "audio_labels.txt");
  std::vector<anno::TaskCandidate> cands;
  std::map<std::string, bool> truth;
  for (const auto* side : {&labels.positives, &labels.negatives}) {
    for (const auto& id : *side) {
      cands.push_back({"audio/" + id + ".wav", {{"embedding_id", id}}});
      truth["audio/" + id + ".wav"] = side == &labels.positives;
    }
  }
  {
    anno::LabelStore store(store_run.config().annotation.data_dir);
    store.create_tasks(anno::Stage::kHostSpeech, cands, 1.0);
    while (auto t = store.next_task(anno::Stage::kHostSpeech, "script")) {
      store.submit_label(t->task_id, truth.at(t->payload_ref) ? "positive" : "negative", "script");
    }
  }
  store_run.run_stage("calibrate-audio");
  CHECK(read_file(store_run.out("audio/host_model.txt")) == read_file(file_run.out("audio/host_model.txt")));
}

TEST_CASE("make-tasks creates annotation tasks once") {
  TempDir dir;
  const auto config = copy_mini(dir);
  auto p = mini_pipeline(config, {"annotation.speech_fraction=1.0"});
  p.run_stage("ingest");
  p.run_stage("segment");
  const auto first = p.make_tasks("host_speech");
  CHECK(first.items_out == 56);
  CHECK(p.make_tasks("host_speech").items_out == 0);
  CHECK(error_kind([&] { p.make_tasks("host_voice"); }) == ErrorKind::kConfig);
  anno::LabelStore store(p.config().annotation.data_dir);
  const auto t = store.next_task(anno::Stage::kHostSpeech, "a");
  REQUIRE(t);
  CHECK(t->context.contains("clip_id"));
  CHECK(t->context.contains("embedding_id"));
  CHECK(t->context.contains("start_s"));
}

// ---------------------------------------------------------------------------
// Larger corpus
// ---------------------------------------------------------------------------

TEST_CASE("the vetting reduction ratio matches the generator's clip truth on 400 episodes") {
  TempDir dir;
  SynthOptions o;
  o.episodes = 400;
  o.frames = 1500;
  o.with_identity = false;
  const auto truth = write_synthetic_corpus(dir.path(), o);
  auto p = mini_pipeline(dir / "config.yaml");
  p.run_stage("ingest");
  const auto seg = p.run_stage("segment");
  const double ratio = seg.details.at("reduction_ratio").get<double>();
  MESSAGE("400-episode reduction ratio " << ratio);
  CHECK(ratio == doctest::Approx(truth.clip_seconds / truth.episode_seconds).epsilon(1e-9));
  CHECK(seg.items_out == truth.clips.size());
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

int run_cli(const std::string& args, std::string* output = nullptr) {
  TempDir tmp;
  const auto log = tmp / "out.txt";
  const std::string cmd = std::string("'") + DYADKIT_CLI_PATH + "' " + args + " >'" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) *output = read_file(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST_CASE("the command line maps outcomes to exit codes") {
  TempDir dir;
  const auto config = copy_mini(dir).string();
  std::string out;
  CHECK(run_cli("derive-pairs -c '" + config + "'", &out) == 2);
  CHECK(out.find("missing_prerequisite") != std::string::npos);
  CHECK(run_cli("segment -c '" + config + "' --set segment.max_gap=-4") == 1);
  CHECK(run_cli("segment -c '" + config + "' --set segment.nope=1") == 1);
  CHECK(run_cli("segment -c /nonexistent.yaml") == 1);
  CHECK(run_cli("segment --bogus") == 1);
  CHECK(run_cli("ingest -c '" + config + "' --json", &out) == 0);
  const auto report = json::parse(out);
  CHECK(report["stage"] == "ingest");
  CHECK(report["rejections"]["malformed:degenerate bounding box"] == 1);
  CHECK(run_cli("segment -c '" + config + "' --max-gap 0", &out) == 0);
  CHECK(out.find("reduction:") != std::string::npos);
}

TEST_CASE("the command line runs the whole pipeline and prints statistics") {
  TempDir dir;
  const auto config = copy_mini(dir).string();
  std::string out;
  CHECK(run_cli("run-all -c '" + config + "'", &out) == 0);
  CHECK(out.find("total_hours") != std::string::npos);
  CHECK(run_cli("run-all -c '" + config + "'", &out) == 0);
  CHECK(out.find("up to date") != std::string::npos);
  CHECK(run_cli("sweep --tokens 4 --features 8", &out) == 0);
  CHECK(run_cli("synth -o '" + (dir / "s").string() + "' --episodes 1 --frames 400") == 0);
  CHECK(fs::exists(dir / "s" / "config.yaml"));
}

}  // namespace
}  // namespace dyad
