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

#include "dyadkit/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>
#include <utility>

#include <yaml-cpp/yaml.h>

#include "dyadkit/annosvc.hpp"
#include "dyadkit/error.hpp"
#include "dyadkit/hash.hpp"
#include "dyadkit/robust_stats.hpp"
#include "dyadkit/segmenter.hpp"
#include "dyadkit/textio.hpp"

namespace dyad {
namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(LabelSource s) { return s == LabelSource::kFile ? "file" : "store"; }

LabelSource parse_label_source(std::string_view s) {
  if (s == "file") return LabelSource::kFile;
  if (s == "store") return LabelSource::kStore;
  fail(ErrorKind::kConfig, "label source must be 'file' or 'store', got '" + std::string(s) + "'");
}

namespace {

std::string_view grouping_name(SplitGrouping g) { return g == SplitGrouping::kClip ? "clip" : "episode"; }

// ---------------------------------------------------------------------------
// Configuration

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "inputs.episodes",        "inputs.tracking_logs",        "inputs.diarization",
      "inputs.speaker_embeddings", "inputs.face_embeddings",   "inputs.audio_labels",
      "inputs.face_labels",     "inputs.pseudo_labels",        "inputs.media_root",
      "output_dir",             "workers",                     "ingest.max_bad_fraction",
      "segment.max_gap",        "segment.min_len_s",           "segment.min_confidence",
      "split.train",            "split.val",                   "split.test",
      "split.by",               "audio.tail",                  "audio.merge_gap_s",
      "audio.labels",           "face.n_boot",                 "face.tau",
      "face.theta_new",         "face.vote_fraction",          "face.voting",
      "face.seed",              "face.labels",                 "pairs.guest_frames",
      "pairs.host_frames",      "pairs.min_guest_coverage",    "pairs.min_host_coverage",
      "pairs.max_area_ratio",   "pairs.area_mode",             "pairs.expand_factor",
      "pairs.down_shift",       "pairs.iqr_k",                 "render.fps",
      "render.crf",             "render.audio_rate_hz",        "render.audio_channels",
      "render.execute",         "annotation.data_dir",         "annotation.speech_fraction",
      "annotation.face_fraction", "annotation.lease_s",        "annotation.bind",
      "annotation.port",        "annotation.ui_dir",
  };
  return keys;
}

using Flat = std::map<std::string, std::optional<std::string>>;

void flatten(const YAML::Node& node, const std::string& prefix, Flat& out) {
  if (node.IsMap()) {
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      flatten(kv.second, prefix.empty() ? key : prefix + "." + key, out);
    }
  } else if (node.IsNull()) {
    if (!prefix.empty()) out[prefix] = std::nullopt;
  } else if (node.IsScalar()) {
    out[prefix] = node.Scalar();
  } else {
    fail(ErrorKind::kConfig, "configuration key '" + prefix + "' must be a scalar or a mapping");
  }
}

class Settings {
 public:
  Settings(Flat values, fs::path base) : values_(std::move(values)), base_(std::move(base)) {}

  std::optional<std::string> raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  double real(const std::string& key, double fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    auto d = parse_double(*v);
    if (!d) bad(key, *v, "a number");
    return *d;
  }

  std::optional<double> optional_real(const std::string& key) const {
    auto v = raw(key);
    if (!v) return std::nullopt;
    auto d = parse_double(*v);
    if (!d) bad(key, *v, "a number");
    return d;
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    auto i = parse_int(*v);
    if (!i) bad(key, *v, "an integer");
    return *i;
  }

  bool boolean(const std::string& key, bool fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    static const std::set<std::string> yes = {"true", "yes", "on", "1"};
    static const std::set<std::string> no = {"false", "no", "off", "0"};
    if (yes.count(*v) != 0) return true;
    if (no.count(*v) != 0) return false;
    bad(key, *v, "true or false");
  }

  std::string text(const std::string& key, std::string fallback) const {
    auto v = raw(key);
    return v ? *v : fallback;
  }

  fs::path path(const std::string& key, const fs::path& fallback) const {
    auto v = raw(key);
    fs::path p = v ? fs::path(*v) : fallback;
    if (p.empty() || p.is_absolute()) return p;
    return (base_ / p).lexically_normal();
  }

  template <typename F>
  auto enumerated(const std::string& key, std::string_view fallback, F parse) const {
    const std::string v = text(key, std::string(fallback));
    try {
      return parse(v);
    } catch (const Error& e) {
      fail(ErrorKind::kConfig, key + ": " + e.what());
    }
  }

 private:
  [[noreturn]] static void bad(const std::string& key, const std::string& v, const char* want) {
    fail(ErrorKind::kConfig, "configuration key '" + key + "' must be " + want + ", got '" + v + "'");
  }

  Flat values_;
  fs::path base_;
};

void check(bool ok, const char* key, const char* range) {
  if (!ok) fail(ErrorKind::kConfig, std::string("configuration key '") + key + "' must be " + range);
}

}  // namespace

void PipelineConfig::validate() const {
  check(workers >= 1 && workers <= 256, "workers", "in [1, 256]");
  check(ingest.max_bad_fraction >= 0.0 && ingest.max_bad_fraction <= 1.0, "ingest.max_bad_fraction", "in [0, 1]");
  check(segment.max_gap >= 0, "segment.max_gap", ">= 0");
  check(segment.min_len_s > 0.0 && std::isfinite(segment.min_len_s), "segment.min_len_s", "> 0");
  check(segment.min_confidence >= 0.0 && segment.min_confidence <= 1.0, "segment.min_confidence", "in [0, 1]");
  split.validate();
  check(audio.tail > 0.0 && audio.tail < 0.5, "audio.tail", "in (0, 0.5)");
  check(audio.merge_gap_s >= 0.0 && std::isfinite(audio.merge_gap_s), "audio.merge_gap_s", ">= 0");
  check(face.n_boot >= 1 && face.n_boot <= 100000, "face.n_boot", "in [1, 100000]");
  check(!face.tau || (*face.tau >= -1.0 && *face.tau <= 1.0), "face.tau", "in [-1, 1]");
  check(face.theta_new >= -1.0 && face.theta_new <= 1.0, "face.theta_new", "in [-1, 1]");
  check(face.vote_fraction > 0.0 && face.vote_fraction <= 1.0, "face.vote_fraction", "in (0, 1]");
  pairs.validate();
  check(render.fps > 0.0 && std::isfinite(render.fps), "render.fps", "> 0");
  check(render.crf >= 0 && render.crf <= 51, "render.crf", "in [0, 51]");
  check(render.audio_rate_hz > 0, "render.audio_rate_hz", "> 0");
  check(render.audio_channels >= 1, "render.audio_channels", ">= 1");
  check(annotation.speech_fraction > 0.0 && annotation.speech_fraction <= 1.0, "annotation.speech_fraction",
        "in (0, 1]");
  check(annotation.face_fraction > 0.0 && annotation.face_fraction <= 1.0, "annotation.face_fraction", "in (0, 1]");
  check(annotation.lease_s >= 1, "annotation.lease_s", ">= 1");
  check(annotation.port >= 0 && annotation.port <= 65535, "annotation.port", "in [0, 65535]");
  check(!output_dir.empty(), "output_dir", "set");
}

std::string PipelineConfig::canonical_text() const {
  std::string s;
  auto line = [&](std::string_view k, const std::string& v) {
    s.append(k).append(" = ").append(v).push_back('\n');
  };
  auto num = [](double v) { return format_double(v); };
  line("inputs.episodes", inputs.episodes.string());
  line("inputs.tracking_logs", inputs.tracking_logs.string());
  line("inputs.diarization", inputs.diarization.string());
  line("inputs.speaker_embeddings", inputs.speaker_embeddings.string());
  line("inputs.face_embeddings", inputs.face_embeddings.string());
  line("inputs.audio_labels", inputs.audio_labels.string());
  line("inputs.face_labels", inputs.face_labels.string());
  line("inputs.pseudo_labels", inputs.pseudo_labels.string());
  line("inputs.media_root", inputs.media_root.string());
  line("output_dir", output_dir.string());
  line("workers", std::to_string(workers));
  line("ingest.max_bad_fraction", num(ingest.max_bad_fraction));
  line("segment.max_gap", std::to_string(segment.max_gap));
  line("segment.min_len_s", num(segment.min_len_s));
  line("segment.min_confidence", num(segment.min_confidence));
  line("split.train", num(split.train));
  line("split.val", num(split.val));
  line("split.test", num(split.test));
  line("split.by", std::string(grouping_name(split_by)));
  line("audio.tail", num(audio.tail));
  line("audio.merge_gap_s", num(audio.merge_gap_s));
  line("audio.labels", std::string(to_string(audio.labels)));
  line("face.n_boot", std::to_string(face.n_boot));
  line("face.tau", face.tau ? num(*face.tau) : "null");
  line("face.theta_new", num(face.theta_new));
  line("face.vote_fraction", num(face.vote_fraction));
  line("face.voting", std::string(to_string(face.voting)));
  line("face.seed", std::to_string(face.seed));
  line("face.labels", std::string(to_string(face.labels)));
  line("pairs.guest_frames", std::to_string(pairs.guest_frames));
  line("pairs.host_frames", std::to_string(pairs.host_frames));
  line("pairs.min_guest_coverage", num(pairs.min_guest_coverage));
  line("pairs.min_host_coverage", num(pairs.min_host_coverage));
  line("pairs.max_area_ratio", num(pairs.max_area_ratio));
  line("pairs.area_mode", std::string(to_string(pairs.area_mode)));
  line("pairs.expand_factor", num(pairs.expand_factor));
  line("pairs.down_shift", num(pairs.down_shift));
  line("pairs.iqr_k", num(pairs.iqr_k));
  line("render.fps", num(render.fps));
  line("render.crf", std::to_string(render.crf));
  line("render.audio_rate_hz", std::to_string(render.audio_rate_hz));
  line("render.audio_channels", std::to_string(render.audio_channels));
  line("render.execute", execute_renders ? "true" : "false");
  line("annotation.data_dir", annotation.data_dir.string());
  line("annotation.speech_fraction", num(annotation.speech_fraction));
  line("annotation.face_fraction", num(annotation.face_fraction));
  line("annotation.lease_s", std::to_string(annotation.lease_s));
  line("annotation.bind", annotation.bind);
  line("annotation.port", std::to_string(annotation.port));
  line("annotation.ui_dir", annotation.ui_dir.string());
  return s;
}

PipelineConfig parse_pipeline_config(std::string_view yaml, const fs::path& base_dir,
                                     std::span<const std::string> overrides) {
  Flat flat;
  try {
    flatten(YAML::Load(std::string(yaml)), "", flat);
  } catch (const YAML::Exception& e) {
    fail(ErrorKind::kConfig, std::string("configuration is not valid YAML: ") + e.what());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorKind::kConfig, "override must look like key=value: '" + o + "'");
    const std::string key = o.substr(0, eq);
    const std::string value = o.substr(eq + 1);
    if (value.empty() || value == "null" || value == "~") {
      flat[key] = std::nullopt;
    } else {
      flat[key] = value;
    }
  }
  for (const auto& [key, value] : flat) {
    if (known_keys().count(key) == 0) fail(ErrorKind::kConfig, "unknown configuration key '" + key + "'");
  }

  const Settings s(std::move(flat), base_dir);
  PipelineConfig c;
  c.inputs.episodes = s.path("inputs.episodes", {});
  c.inputs.tracking_logs = s.path("inputs.tracking_logs", {});
  c.inputs.diarization = s.path("inputs.diarization", {});
  c.inputs.speaker_embeddings = s.path("inputs.speaker_embeddings", {});
  c.inputs.face_embeddings = s.path("inputs.face_embeddings", {});
  c.inputs.audio_labels = s.path("inputs.audio_labels", {});
  c.inputs.face_labels = s.path("inputs.face_labels", {});
  c.inputs.pseudo_labels = s.path("inputs.pseudo_labels", {});
  c.inputs.media_root = s.path("inputs.media_root", {});
  c.output_dir = s.path("output_dir", "out");
  c.workers = static_cast<int>(s.integer("workers", c.workers));
  c.ingest.max_bad_fraction = s.real("ingest.max_bad_fraction", c.ingest.max_bad_fraction);
  c.segment.max_gap = s.integer("segment.max_gap", c.segment.max_gap);
  c.segment.min_len_s = s.real("segment.min_len_s", c.segment.min_len_s);
  c.segment.min_confidence = s.real("segment.min_confidence", c.segment.min_confidence);
  c.split.train = s.real("split.train", c.split.train);
  c.split.val = s.real("split.val", c.split.val);
  c.split.test = s.real("split.test", c.split.test);
  c.split_by = s.enumerated("split.by", "clip", [](std::string_view v) {
    if (v == "clip") return SplitGrouping::kClip;
    if (v == "episode") return SplitGrouping::kEpisode;
    fail(ErrorKind::kConfig, "must be 'clip' or 'episode'");
  });
  c.audio.tail = s.real("audio.tail", c.audio.tail);
  c.audio.merge_gap_s = s.real("audio.merge_gap_s", c.audio.merge_gap_s);
  c.audio.labels = s.enumerated("audio.labels", "file", parse_label_source);
  c.face.n_boot = static_cast<int>(s.integer("face.n_boot", c.face.n_boot));
  c.face.tau = s.optional_real("face.tau");
  c.face.theta_new = s.real("face.theta_new", c.face.theta_new);
  c.face.vote_fraction = s.real("face.vote_fraction", c.face.vote_fraction);
  c.face.voting = s.enumerated("face.voting", "per_track", parse_voting_mode);
  const auto seed = s.integer("face.seed", static_cast<std::int64_t>(c.face.seed));
  check(seed >= 0, "face.seed", ">= 0");
  c.face.seed = static_cast<std::uint64_t>(seed);
  c.face.labels = s.enumerated("face.labels", "file", parse_label_source);
  c.pairs.guest_frames = s.integer("pairs.guest_frames", c.pairs.guest_frames);
  c.pairs.host_frames = s.integer("pairs.host_frames", c.pairs.host_frames);
  c.pairs.min_guest_coverage = s.real("pairs.min_guest_coverage", c.pairs.min_guest_coverage);
  c.pairs.min_host_coverage = s.real("pairs.min_host_coverage", c.pairs.min_host_coverage);
  c.pairs.max_area_ratio = s.real("pairs.max_area_ratio", c.pairs.max_area_ratio);
  c.pairs.area_mode = s.enumerated("pairs.area_mode", "face_boxes", parse_area_ratio_mode);
  c.pairs.expand_factor = s.real("pairs.expand_factor", c.pairs.expand_factor);
  c.pairs.down_shift = s.real("pairs.down_shift", c.pairs.down_shift);
  c.pairs.iqr_k = s.real("pairs.iqr_k", c.pairs.iqr_k);
  c.render.fps = s.real("render.fps", c.render.fps);
  c.render.crf = static_cast<int>(s.integer("render.crf", c.render.crf));
  c.render.audio_rate_hz = static_cast<int>(s.integer("render.audio_rate_hz", c.render.audio_rate_hz));
  c.render.audio_channels = static_cast<int>(s.integer("render.audio_channels", c.render.audio_channels));
  c.execute_renders = s.boolean("render.execute", false);
  c.annotation.data_dir = s.path("annotation.data_dir", c.output_dir / "annotations");
  c.annotation.speech_fraction = s.real("annotation.speech_fraction", c.annotation.speech_fraction);
  c.annotation.face_fraction = s.real("annotation.face_fraction", c.annotation.face_fraction);
  c.annotation.lease_s = static_cast<int>(s.integer("annotation.lease_s", c.annotation.lease_s));
  c.annotation.bind = s.text("annotation.bind", c.annotation.bind);
  c.annotation.port = static_cast<int>(s.integer("annotation.port", c.annotation.port));
  c.annotation.ui_dir = s.path("annotation.ui_dir", {});
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path, std::span<const std::string> overrides) {
  if (!fs::exists(path)) fail(ErrorKind::kIo, "configuration file not found: " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  return parse_pipeline_config(read_file(path), base, overrides);
}

// ---------------------------------------------------------------------------
// Reports

std::string StageReport::summary() const {
  if (up_to_date) return stage + ": up to date";
  std::size_t rejected = 0;
  for (const auto& [reason, n] : rejections) rejected += n;
  std::string s = stage + ": in=" + std::to_string(items_in) + " out=" + std::to_string(items_out) +
                  " rejected=" + std::to_string(rejected);
  if (!rejections.empty()) {
    s += " (";
    bool first = true;
    for (const auto& [reason, n] : rejections) {
      if (!first) s += ", ";
      first = false;
      s += reason + "=" + std::to_string(n);
    }
    s += ")";
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, " in %.2fs", wall_s);
  return s + buf;
}

json StageReport::to_json() const {
  return json{{"stage", stage},         {"up_to_date", up_to_date}, {"items_in", items_in},
              {"items_out", items_out}, {"rejections", rejections}, {"wall_s", wall_s},
              {"details", details}};
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t err_index = n;
  std::exception_ptr err;
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (i < err_index) {
              err_index = i;
              err = std::current_exception();
            }
          }
        }
      });
    }
  }
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Stage plumbing

namespace {

class Stamp {
 public:
  explicit Stamp(std::string_view stage) { h_.update(stage); h_.update("dyadkit-stage-v1"); }
  void text(std::string_view s) { h_.update(s); }
  void file(const fs::path& p) {
    h_.update(p.filename().string());
    h_.update(read_file(p));
  }
  void dir(const fs::path& p) {
    std::vector<fs::path> files;
    if (fs::is_directory(p)) {
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file()) files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    h_.update(std::to_string(files.size()));
    for (const auto& f : files) file(f);
  }
  std::string hex() const { return h_.hex(); }

 private:
  ContentHasher h_;
};

struct Ledger {
  std::vector<std::array<std::string, 3>> rows;
  void add(std::string candidate, std::string reason, std::string detail = {}) {
    rows.push_back({std::move(candidate), std::move(reason), std::move(detail)});
  }
  void append(Ledger&& other) {
    for (auto& r : other.rows) rows.push_back(std::move(r));
  }
};

std::string tsv_field(std::string s) {
  for (char& c : s) {
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename().string().front() != '.') files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

void remove_stale(const fs::path& dir, const std::set<std::string>& keep) {
  for (const auto& f : sorted_files(dir)) {
    if (keep.count(f.filename().string()) == 0) fs::remove(f);
  }
}

FrameIndex min_len_frames(double min_len_s, double fps) {
  return std::max<FrameIndex>(1, static_cast<FrameIndex>(std::ceil(min_len_s * fps - 1e-9)));
}

LabelSet present_only(const LabelSet& labels, const EmbeddingTable& table, Ledger& ledger) {
  LabelSet out;
  for (const auto& id : labels.positives) {
    if (table.contains(id)) {
      out.positives.push_back(id);
    } else {
      ledger.add("label:" + id, "missing_embedding", "positive");
    }
  }
  for (const auto& id : labels.negatives) {
    if (table.contains(id)) {
      out.negatives.push_back(id);
    } else {
      ledger.add("label:" + id, "missing_embedding", "negative");
    }
  }
  return out;
}

json counts_json(const BinaryCounts& c) {
  return json{{"true_pos", c.true_pos}, {"false_pos", c.false_pos}, {"false_neg", c.false_neg},
              {"true_neg", c.true_neg}, {"precision", precision(c)}, {"recall", recall(c)},
              {"f1", f1_score(c)}};
}

std::string serialize_host_intervals(const std::vector<HostInterval>& intervals) {
  std::string s = "# clip_id start_s end_s frame_begin frame_end\n";
  for (const auto& h : intervals) {
    s += h.clip_id + ' ' + format_double(h.start_s) + ' ' + format_double(h.end_s) + ' ' +
         std::to_string(h.frames.begin) + ' ' + std::to_string(h.frames.end) + '\n';
  }
  return s;
}

std::vector<HostInterval> parse_host_intervals(std::string_view text) {
  std::vector<HostInterval> out;
  LineReader reader(text);
  std::string_view line;
  while (reader.next(line)) {
    if (is_blank_or_comment(line)) continue;
    const auto f = split_ws(line);
    auto s0 = f.size() == 5 ? parse_double(f[1]) : std::nullopt;
    auto s1 = f.size() == 5 ? parse_double(f[2]) : std::nullopt;
    auto b = f.size() == 5 ? parse_int(f[3]) : std::nullopt;
    auto e = f.size() == 5 ? parse_int(f[4]) : std::nullopt;
    if (!s0 || !s1 || !b || !e) {
      fail(ErrorKind::kValidation, "host interval line " + std::to_string(reader.line_number()) + " is malformed");
    }
    out.push_back({std::string(f[0]), *s0, *s1, {*b, *e}});
  }
  return out;
}

std::vector<std::vector<double>> vectors_for(const EmbeddingTable& table, const std::vector<std::string>& ids) {
  std::vector<std::vector<double>> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(table.at(id));
  return out;
}

}  // namespace

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) { config_.validate(); }

const std::vector<std::string>& Pipeline::batch_stages() {
  static const std::vector<std::string> stages = {"ingest",      "segment",      "calibrate-audio", "calibrate-face",
                                                  "assign-ids",  "derive-pairs", "plan-renders",    "stats"};
  return stages;
}

fs::path Pipeline::out(std::string_view relative) const { return config_.output_dir / fs::path(relative); }

void Pipeline::require(std::string_view stage, std::string_view relative, std::string_view producer) const {
  if (!fs::exists(out(relative))) {
    fail(ErrorKind::kMissingPrerequisite, std::string(stage) + " needs " + out(relative).string() + "; run '" +
                                              std::string(producer) + "' first");
  }
}

void Pipeline::journal(const StageReport& report) {
  static std::mutex mu;
  std::lock_guard lock(mu);
  fs::create_directories(config_.output_dir);
  json rec = report.to_json();
  rec["finished_unix_ms"] =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
          .count();
  std::ofstream os(out("journal.jsonl"), std::ios::app);
  os << rec.dump() << '\n';
  if (!os) fail(ErrorKind::kIo, "cannot append to " + out("journal.jsonl").string());
}

namespace {

struct StageRun {
  StageReport report;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

bool stamp_current(const fs::path& stamp_file, const std::string& stamp, const std::vector<fs::path>& outputs) {
  if (!fs::exists(stamp_file) || read_file(stamp_file) != stamp + "\n") return false;
  return std::all_of(outputs.begin(), outputs.end(), [](const fs::path& p) { return fs::exists(p); });
}

void write_ledger(const fs::path& path, const Ledger& ledger, StageReport& report) {
  std::string s = "# candidate\treason\tdetail\n";
  for (const auto& row : ledger.rows) {
    s += tsv_field(row[0]) + '\t' + tsv_field(row[1]) + '\t' + tsv_field(row[2]) + '\n';
    ++report.rejections[row[1]];
  }
  write_file_atomic(path, s);
}

}  // namespace

StageReport Pipeline::run_stage(std::string_view name) {
  StageReport r;
  if (name == "ingest") {
    r = ingest();
  } else if (name == "segment") {
    r = segment();
  } else if (name == "calibrate-audio") {
    r = calibrate_audio();
  } else if (name == "calibrate-face") {
    r = calibrate_face();
  } else if (name == "assign-ids") {
    r = assign_ids();
  } else if (name == "derive-pairs") {
    r = derive_pairs();
  } else if (name == "plan-renders") {
    r = plan_renders();
  } else if (name == "stats") {
    r = stats();
  } else {
    fail(ErrorKind::kConfig, "unknown stage '" + std::string(name) + "'");
  }
  journal(r);
  return r;
}

std::vector<StageReport> Pipeline::run_all(const std::function<void(const StageReport&)>& on_stage) {
  std::vector<StageReport> reports;
  for (const auto& stage : batch_stages()) {
    reports.push_back(run_stage(stage));
    if (on_stage) on_stage(reports.back());
  }
  return reports;
}

// Each stage below follows the same shape: check prerequisites, compute the
// stamp, return early when current, do the work, write outputs, then stamp.

StageReport Pipeline::ingest() {
  StageRun run;
  run.report.stage = "ingest";
  const auto& in = config_.inputs;
  for (const auto& [key, p] : {std::pair{"inputs.episodes", in.episodes},
                               std::pair{"inputs.diarization", in.diarization},
                               std::pair{"inputs.speaker_embeddings", in.speaker_embeddings},
                               std::pair{"inputs.face_embeddings", in.face_embeddings}}) {
    if (p.empty() || !fs::is_regular_file(p)) {
      fail(ErrorKind::kIo, std::string(key) + " does not name a readable file: '" + p.string() + "'");
    }
  }
  if (in.tracking_logs.empty() || !fs::is_directory(in.tracking_logs)) {
    fail(ErrorKind::kIo, "inputs.tracking_logs does not name a directory: '" + in.tracking_logs.string() + "'");
  }

  Stamp stamp("ingest");
  stamp.text(format_double(config_.ingest.max_bad_fraction));
  stamp.file(in.episodes);
  stamp.dir(in.tracking_logs);
  stamp.file(in.diarization);
  stamp.file(in.speaker_embeddings);
  stamp.file(in.face_embeddings);
  const fs::path stamp_file = out(".stamps/ingest");
  const std::vector<fs::path> outputs = {out("ingest/episodes.txt"), out("ingest/diarization.txt"),
                                         out("ingest/speaker.emb"), out("ingest/face.emb"),
                                         out("rejections/ingest.tsv")};
  if (stamp_current(stamp_file, stamp.hex(), outputs)) {
    run.report.up_to_date = true;
    return run.report;
  }

  Ledger ledger;
  auto episodes = load_episodes(in.episodes);
  std::set<std::string> episode_ids;
  for (const auto& e : episodes) episode_ids.insert(e.episode_id);

  const auto log_files = sorted_files(in.tracking_logs);
  std::vector<TrackLogParse> logs(log_files.size());
  parallel_for(log_files.size(), config_.workers,
               [&](std::size_t i) { logs[i] = parse_tracking_log(log_files[i], config_.ingest); });

  std::set<std::string> written;
  std::set<std::string> seen_episodes;
  std::size_t detections = 0;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const auto& lp = logs[i];
    const std::string fname = log_files[i].filename().string();
    run.report.items_in += lp.report.records;
    for (const auto& [line, reason] : lp.report.rejected_lines) {
      ledger.add(fname + ":" + std::to_string(line), reason);
    }
    if (lp.log.detections.empty()) continue;
    const auto& ep = lp.log.episode_id;
    if (episode_ids.count(ep) == 0) {
      ledger.add(fname, "unknown_episode", ep);
      continue;
    }
    if (!seen_episodes.insert(ep).second) {
      fail(ErrorKind::kValidation, "episode '" + ep + "' has more than one tracking log");
    }
    detections += lp.log.detections.size();
    const std::string target = ep + ".txt";
    write_file_atomic(out("ingest/tracks") / target, serialize_tracking_log(lp.log));
    written.insert(target);
  }
  remove_stale(out("ingest/tracks"), written);
  fs::create_directories(out("ingest/tracks"));

  auto diar = parse_diarization(in.diarization, config_.ingest);
  run.report.items_in += diar.report.records;
  for (const auto& [line, reason] : diar.report.rejected_lines) {
    ledger.add(in.diarization.filename().string() + ":" + std::to_string(line), reason);
  }

  auto speaker = load_embeddings(in.speaker_embeddings);
  auto face = load_embeddings(in.face_embeddings);
  for (const auto* load : {&speaker, &face}) {
    const auto& file = load == &speaker ? in.speaker_embeddings : in.face_embeddings;
    run.report.items_in += load->table.size() + load->rejected.size();
    for (const auto& e : load->rejected) ledger.add(file.filename().string() + ":" + e.id, e.reason);
  }

  write_file_atomic(out("ingest/episodes.txt"), serialize_episodes(episodes));
  write_file_atomic(out("ingest/diarization.txt"), serialize_diarization(diar.segments));
  write_file_atomic(out("ingest/speaker.emb"), serialize_embeddings(speaker.table));
  write_file_atomic(out("ingest/face.emb"), serialize_embeddings(face.table));
  write_ledger(out("rejections/ingest.tsv"), ledger, run.report);

  run.report.items_out = detections + diar.segments.size() + speaker.table.size() + face.table.size();
  run.report.details = {{"episodes", episodes.size()},
                        {"detections", detections},
                        {"diarization_segments", diar.segments.size()},
                        {"zero_length_segments", diar.report.dropped},
                        {"speaker_embeddings", speaker.table.size()},
                        {"face_embeddings", face.table.size()}};
  run.report.wall_s = run.elapsed();
  write_file_atomic(stamp_file, stamp.hex() + "\n");
  return run.report;
}

StageReport Pipeline::segment() {
  StageRun run;
  run.report.stage = "segment";
  require("segment", "ingest/episodes.txt", "ingest");

  Stamp stamp("segment");
  stamp.text(std::to_string(config_.segment.max_gap));
  stamp.text(format_double(config_.segment.min_len_s));
  stamp.text(format_double(config_.segment.min_confidence));
  stamp.text(format_double(config_.split.train) + "," + format_double(config_.split.val) + "," +
             format_double(config_.split.test) + "," + std::string(grouping_name(config_.split_by)));
  stamp.file(out("ingest/episodes.txt"));
  stamp.dir(out("ingest/tracks"));
  const fs::path stamp_file = out(".stamps/segment");
  const std::vector<fs::path> outputs = {out("segment/manifest.txt"), out("segment/gaps.txt"),
                                         out("rejections/segment.tsv")};
  if (stamp_current(stamp_file, stamp.hex(), outputs)) {
    run.report.up_to_date = true;
    return run.report;
  }

  Manifest manifest;
  manifest.episodes = load_episodes(out("ingest/episodes.txt"));
  const std::size_t n = manifest.episodes.size();
  std::vector<std::vector<TwoPersonSegment>> kept(n);
  std::vector<std::vector<TwoPersonSegment>> dropped(n);
  std::vector<std::vector<ClipRecord>> clips(n);
  parallel_for(n, config_.workers, [&](std::size_t i) {
    const auto& ep = manifest.episodes[i];
    const fs::path log_path = out("ingest/tracks") / (ep.episode_id + ".txt");
    if (!fs::exists(log_path)) return;
    const auto log = parse_tracking_log(log_path).log;
    SegmentParams params{config_.segment.max_gap, min_len_frames(config_.segment.min_len_s, ep.fps),
                         config_.segment.min_confidence};
    kept[i] = extract_two_person_segments(log, params, &dropped[i]);
    clips[i] = to_clip_records(kept[i], ep, config_.split, config_.split_by);
  });

  Ledger ledger;
  std::vector<TwoPersonSegment> all_segments;
  double seconds_in = 0;
  for (std::size_t i = 0; i < n; ++i) {
    seconds_in += manifest.episodes[i].duration_s;
    for (const auto& d : dropped[i]) {
      ledger.add(d.clip_id(), "too_short", "frames=" + std::to_string(d.frames.length()));
    }
    for (auto& c : clips[i]) manifest.clips.push_back(std::move(c));
    for (auto& s : kept[i]) all_segments.push_back(std::move(s));
  }
  manifest.canonicalize();
  manifest.validate();
  double seconds_out = 0;
  for (const auto& c : manifest.clips) seconds_out += c.duration_s;

  save_manifest(out("segment/manifest.txt"), manifest);
  write_file_atomic(out("segment/gaps.txt"), serialize_segment_sidecar(all_segments));
  write_ledger(out("rejections/segment.tsv"), ledger, run.report);

  run.report.items_in = n;
  run.report.items_out = manifest.clips.size();
  const double hours_in = seconds_in / 3600.0;
  const double hours_out = seconds_out / 3600.0;
  run.report.details = {{"episodes", n},
                        {"clips", manifest.clips.size()},
                        {"hours_in", hours_in},
                        {"hours_out", hours_out},
                        {"reduction_ratio", hours_in > 0 ? hours_out / hours_in : 0.0}};
  run.report.wall_s = run.elapsed();
  write_file_atomic(stamp_file, stamp.hex() + "\n");
  return run.report;
}

namespace {

LabelSet labels_from(LabelSource source, const fs::path& file, const fs::path& store_dir, anno::Stage stage,
                     std::string_view key) {
  if (source == LabelSource::kFile) {
    if (file.empty() || !fs::is_regular_file(file)) {
      fail(ErrorKind::kIo, std::string(key) + " does not name a readable file: '" + file.string() + "'");
    }
    return load_labels(file);
  }
  if (!fs::exists(store_dir / "store.jsonl")) {
    fail(ErrorKind::kMissingPrerequisite,
         "no annotation store at " + store_dir.string() +
             "; run 'make-tasks' and label with 'serve-annotations' first");
  }
  anno::LabelStore store(store_dir);
  return store.export_labels(stage).to_label_set();
}

}  // namespace

StageReport Pipeline::calibrate_audio() {
  StageRun run;
  run.report.stage = "calibrate-audio";
  require("calibrate-audio", "ingest/speaker.emb", "ingest");
  require("calibrate-audio", "segment/manifest.txt", "segment");

  const LabelSet labels = labels_from(config_.audio.labels, config_.inputs.audio_labels, config_.annotation.data_dir,
                                      anno::Stage::kHostSpeech, "inputs.audio_labels");
  const bool have_pseudo = !config_.inputs.pseudo_labels.empty() && fs::is_regular_file(config_.inputs.pseudo_labels);

  Stamp stamp("calibrate-audio");
  stamp.text(format_double(config_.audio.tail));
  stamp.text(format_double(config_.audio.merge_gap_s));
  stamp.text(serialize_labels(labels));
  if (have_pseudo) stamp.file(config_.inputs.pseudo_labels);
  stamp.file(out("ingest/speaker.emb"));
  stamp.file(out("ingest/diarization.txt"));
  stamp.file(out("segment/manifest.txt"));
  const fs::path stamp_file = out(".stamps/calibrate-audio");
  const std::vector<fs::path> outputs = {out("audio/host_model.txt"), out("audio/decisions.tsv"),
                                         out("audio/host_intervals.tsv"), out("audio/report.json"),
                                         out("rejections/calibrate-audio.tsv")};
  if (stamp_current(stamp_file, stamp.hex(), outputs)) {
    run.report.up_to_date = true;
    return run.report;
  }

  Ledger ledger;
  const auto table = load_embeddings(out("ingest/speaker.emb")).table;
  const auto manifest = load_manifest(out("segment/manifest.txt"));
  const LabelSet usable = present_only(labels, table, ledger);
  const auto model = fit_host_gaussian(vectors_for(table, usable.positives), config_.audio.tail);

  json report = {{"positives", usable.positives.size()},
                 {"negatives", usable.negatives.size()},
                 {"threshold", model.threshold},
                 {"labeled", counts_json(evaluate_host_model(model, usable, table))}};
  if (have_pseudo) {
    Ledger ignored;
    const LabelSet pseudo = present_only(load_labels(config_.inputs.pseudo_labels), table, ignored);
    report["pseudo_labeled"] = counts_json(evaluate_host_model(model, pseudo, table));
  }

  const auto diar = parse_diarization(out("ingest/diarization.txt")).segments;
  std::map<std::string, std::vector<SpeakerDecision>> by_clip;
  std::string decisions_tsv = "# clip_id speaker start_s end_s embedding_id distance verdict\n";
  std::size_t host_segments = 0;
  for (const auto& seg : diar) {
    const std::string candidate = seg.clip_id + "@" + format_double(seg.start_s);
    if (manifest.find_clip(seg.clip_id) == nullptr) {
      ledger.add(candidate, "unknown_clip", seg.embedding_id);
      continue;
    }
    if (!table.contains(seg.embedding_id)) {
      ledger.add(candidate, "missing_embedding", seg.embedding_id);
      continue;
    }
    const auto verdict = classify_speaker(model, seg, table);
    host_segments += verdict.is_host ? 1 : 0;
    decisions_tsv += seg.clip_id + ' ' + seg.speaker_label + ' ' + format_double(seg.start_s) + ' ' +
                     format_double(seg.end_s) + ' ' + seg.embedding_id + ' ' + format_double(verdict.score) + ' ' +
                     (verdict.is_host ? "host" : "other") + '\n';
    by_clip[seg.clip_id].push_back({seg, verdict});
  }

  std::vector<HostInterval> intervals;
  for (const auto& clip : manifest.clips) {
    auto it = by_clip.find(clip.clip_id);
    if (it == by_clip.end()) continue;
    const auto* ep = manifest.find_episode(clip.episode_id);
    auto merged = merge_positive_segments(it->second, config_.audio.merge_gap_s, ep->fps, clip.start_frame);
    for (auto& h : merged) intervals.push_back(std::move(h));
  }
  report["segments"] = diar.size();
  report["host_segments"] = host_segments;
  report["host_intervals"] = intervals.size();

  write_file_atomic(out("audio/host_model.txt"), serialize_host_model(model));
  write_file_atomic(out("audio/decisions.tsv"), decisions_tsv);
  write_file_atomic(out("audio/host_intervals.tsv"), serialize_host_intervals(intervals));
  write_file_atomic(out("audio/report.json"), report.dump(2) + "\n");
  write_ledger(out("rejections/calibrate-audio.tsv"), ledger, run.report);

  run.report.items_in = diar.size();
  run.report.items_out = intervals.size();
  run.report.details = report;
  run.report.wall_s = run.elapsed();
  write_file_atomic(stamp_file, stamp.hex() + "\n");
  return run.report;
}

StageReport Pipeline::calibrate_face() {
  StageRun run;
  run.report.stage = "calibrate-face";
  require("calibrate-face", "ingest/face.emb", "ingest");

  const LabelSet labels = labels_from(config_.face.labels, config_.inputs.face_labels, config_.annotation.data_dir,
                                      anno::Stage::kHostFace, "inputs.face_labels");
  Stamp stamp("calibrate-face");
  stamp.text(std::to_string(config_.face.n_boot));
  stamp.text(config_.face.tau ? format_double(*config_.face.tau) : "calibrate");
  stamp.text(format_double(config_.face.vote_fraction));
  stamp.text(std::to_string(config_.face.seed));
  stamp.text(serialize_labels(labels));
  stamp.file(out("ingest/face.emb"));
  const fs::path stamp_file = out(".stamps/calibrate-face");
  const std::vector<fs::path> outputs = {out("face/gallery.txt"), out("face/report.json"),
                                         out("rejections/calibrate-face.tsv")};
  if (stamp_current(stamp_file, stamp.hex(), outputs)) {
    run.report.up_to_date = true;
    return run.report;
  }

  Ledger ledger;
  const auto table = load_embeddings(out("ingest/face.emb")).table;
  const LabelSet usable = present_only(labels, table, ledger);

  // Confirmed positives alternate between gallery exemplars and held-back
  // calibration positives, in sorted id order.
  FaceGallery gallery;
  std::vector<std::string> calibration_ids;
  for (std::size_t i = 0; i < usable.positives.size(); ++i) {
    if (i % 2 == 0) {
      gallery.exemplar_ids.push_back(usable.positives[i]);
      gallery.exemplars.push_back(table.at(usable.positives[i]));
    } else {
      calibration_ids.push_back(usable.positives[i]);
    }
  }
  if (gallery.exemplars.empty()) fail(ErrorKind::kCalibration, "calibrate-face needs at least one confirmed positive");
  gallery.vote_fraction = config_.face.vote_fraction;

  const auto positives = vectors_for(table, calibration_ids);
  const auto negatives = vectors_for(table, usable.negatives);
  json report = {{"exemplars", gallery.exemplars.size()},
                 {"calibration_positives", positives.size()},
                 {"negatives", negatives.size()}};
  if (config_.face.tau) {
    gallery.tau = *config_.face.tau;
    report["tau_source"] = "override";
  } else {
    const auto cal = calibrate_face_threshold(positives, negatives, gallery.exemplars,
                                              {config_.face.n_boot, config_.face.vote_fraction, config_.face.seed});
    gallery.tau = cal.tau;
    report["tau_source"] = "bootstrap";
    report["n_boot"] = config_.face.n_boot;
    report["trial_tau_q05"] = quantile(cal.trial_taus, 0.05);
    report["trial_tau_q95"] = quantile(cal.trial_taus, 0.95);
  }
  report["tau"] = gallery.tau;
  BinaryCounts counts;
  for (const auto& v : positives) (gallery.host_similarity(v) >= gallery.tau ? counts.true_pos : counts.false_neg)++;
  for (const auto& v : negatives) (gallery.host_similarity(v) >= gallery.tau ? counts.false_pos : counts.true_neg)++;
  report["labeled"] = counts_json(counts);

  write_file_atomic(out("face/gallery.txt"), serialize_face_gallery(gallery));
  write_file_atomic(out("face/report.json"), report.dump(2) + "\n");
  write_ledger(out("rejections/calibrate-face.tsv"), ledger, run.report);

  run.report.items_in = labels.positives.size() + labels.negatives.size();
  run.report.items_out = gallery.exemplars.size();
  run.report.details = report;
  run.report.wall_s = run.elapsed();
  write_file_atomic(stamp_file, stamp.hex() + "\n");
  return run.report;
}

namespace {

std::vector<Detection> faces_in(const TrackLog& log, FrameRange frames) {
  std::vector<Detection> out;
  auto lo = std::lower_bound(log.detections.begin(), log.detections.end(), frames.begin,
                             [](const Detection& d, FrameIndex f) { return d.frame_index < f; });
  for (auto it = lo; it != log.detections.end() && it->frame_index < frames.end; ++it) {
    if (it->kind == DetectionKind::kFace) out.push_back(*it);
  }
  return out;
}

std::map<std::string, TrackLog> load_logs(const fs::path& dir, const Manifest& manifest, int workers) {
  std::vector<std::string> ids;
  for (const auto& c : manifest.clips) {
    if (ids.empty() || ids.back() != c.episode_id) ids.push_back(c.episode_id);
  }
  std::vector<TrackLog> logs(ids.size());
  parallel_for(ids.size(), workers, [&](std::size_t i) {
    const fs::path p = dir / (ids[i] + ".txt");
    logs[i] = fs::exists(p) ? parse_tracking_log(p).log : TrackLog{ids[i], {}};
  });
  std::map<std::string, TrackLog> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], std::move(logs[i]));
  return out;
}

}  // namespace

StageReport Pipeline::assign_ids() {
  StageRun run;
  run.report.stage = "assign-ids";
  require("assign-ids", "ingest/face.emb", "ingest");
  require("assign-ids", "segment/manifest.txt", "segment");
  require("assign-ids", "face/gallery.txt", "calibrate-face");

  Stamp stamp("assign-ids");
  stamp.text(format_double(config_.face.theta_new));
  stamp.text(to_string(config_.face.voting));
  stamp.file(out("face/gallery.txt"));
  stamp.file(out("segment/manifest.txt"));
  stamp.dir(out("ingest/tracks"));
  stamp.file(out("ingest/face.emb"));
  const fs::path stamp_file = out(".stamps/assign-ids");
  const std::vector<fs::path> outputs = {out("ids/index.txt"), out("rejections/assign-ids.tsv")};
  if (stamp_current(stamp_file, stamp.hex(), outputs)) {
    run.report.up_to_date = true;
    return run.report;
  }

  const auto manifest = load_manifest(out("segment/manifest.txt"));
  const auto gallery = parse_face_gallery(read_file(out("face/gallery.txt")));
  const auto table = load_embeddings(out("ingest/face.emb")).table;
  const auto logs = load_logs(out("ingest/tracks"), manifest, config_.workers);

  const std::size_t n = manifest.clips.size();
  std::vector<IdentityTrack> tracks(n);
  std::vector<Ledger> ledgers(n);
  std::vector<std::size_t> face_counts(n, 0);
  const AssignParams params{config_.face.theta_new, config_.face.voting};
  parallel_for(n, config_.workers, [&](std::size_t i) {
    const auto& clip = manifest.clips[i];
    const FrameRange frames{clip.start_frame, clip.end_frame};
    const auto faces = faces_in(logs.at(clip.episode_id), frames);
    face_counts[i] = faces.size();
    for (const auto& d : faces) {
      const auto id = face_embedding_id(clip.episode_id, d.frame_index, d.track_id);
      if (!table.contains(id)) ledgers[i].add(id, "missing_embedding", clip.clip_id);
    }
    tracks[i] = assign_identities(clip.clip_id, clip.episode_id, frames, faces, gallery, table, params);
    write_file_atomic(out("ids") / (clip.clip_id + ".txt"), serialize_identity_track(tracks[i]));
  });

  Ledger ledger;
  std::set<std::string> keep = {"index.txt"};
  std::string index = "# clip_id guest_count missing_embeddings\n";
  std::size_t faces_total = 0;
  std::size_t host_frames = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ledger.append(std::move(ledgers[i]));
    keep.insert(tracks[i].clip_id + ".txt");
    index += tracks[i].clip_id + ' ' + std::to_string(tracks[i].guest_count) + ' ' +
             std::to_string(tracks[i].missing_embeddings) + '\n';
    faces_total += face_counts[i];
    for (const auto& [f, faces] : tracks[i].per_frame) {
      host_frames += std::any_of(faces.begin(), faces.end(), [](const FaceAssignment& a) { return a.role.is_host(); });
    }
  }
  remove_stale(out("ids"), keep);
  write_file_atomic(out("ids/index.txt"), index);
  write_ledger(out("rejections/assign-ids.tsv"), ledger, run.report);

  run.report.items_in = faces_total;
  run.report.items_out = faces_total - ledger.rows.size();
  run.report.details = {{"clips", n}, {"frames_with_host", host_frames}};
  run.report.wall_s = run.elapsed();
  write_file_atomic(stamp_file, stamp.hex() + "\n");
  return run.report;
}

StageReport Pipeline::derive_pairs() {
  StageRun run;
  run.report.stage = "derive-pairs";
  require("derive-pairs", "segment/manifest.txt", "segment");
  require("derive-pairs", "audio/host_intervals.tsv", "calibrate-audio");
  require("derive-pairs", "ids/index.txt", "assign-ids");

  Stamp stamp("derive-pairs");
  stamp.text(config_.canonical_text().substr(config_.canonical_text().find("pairs.guest_frames")));
  stamp.file(out("segment/manifest.txt"));
  stamp.file(out("audio/host_intervals.tsv"));
  stamp.dir(out("ids"));
  const fs::path stamp_file = out(".stamps/derive-pairs");
  const std::vector<fs::path> outputs = {out("pairs/pairs.jsonl"), out("manifest.txt"),
                                         out("rejections/derive-pairs.tsv")};
  if (stamp_current(stamp_file, stamp.hex(), outputs)) {
    run.report.up_to_date = true;
    return run.report;
  }

  auto manifest = load_manifest(out("segment/manifest.txt"));
  std::map<std::string, std::vector<FrameIndex>> onsets;
  for (const auto& h : parse_host_intervals(read_file(out("audio/host_intervals.tsv")))) {
    onsets[h.clip_id].push_back(h.frames.begin);
  }

  const auto& p = config_.pairs;
  const std::size_t n = manifest.clips.size();
  std::vector<std::vector<InteractionPair>> pairs(n);
  std::vector<Ledger> ledgers(n);
  std::vector<std::size_t> candidates(n, 0);
  parallel_for(n, config_.workers, [&](std::size_t i) {
    const auto& clip = manifest.clips[i];
    auto it = onsets.find(clip.clip_id);
    if (it == onsets.end()) return;
    std::vector<FrameIndex> t1s = it->second;
    std::sort(t1s.begin(), t1s.end());
    t1s.erase(std::unique(t1s.begin(), t1s.end()), t1s.end());
    candidates[i] = t1s.size();
    const auto track = parse_identity_track(read_file(out("ids") / (clip.clip_id + ".txt")));
    const auto* ep = manifest.find_episode(clip.episode_id);
    const FrameRange range{clip.start_frame, clip.end_frame};
    for (FrameIndex t1 : t1s) {
      const std::string id = make_pair_id(clip.clip_id, t1);
      if (t1 - p.guest_frames < range.begin || t1 + p.host_frames > range.end) {
        ledgers[i].add(id, "window_out_of_clip",
                       "t1=" + std::to_string(t1) + " clip=[" + std::to_string(range.begin) + "," +
                           std::to_string(range.end) + ")");
        continue;
      }
      auto outcome = derive_pair(track, clip.episode_id, t1, range, {ep->width, ep->height}, p);
      if (outcome.pair) {
        pairs[i].push_back(std::move(*outcome.pair));
      } else {
        char detail[96];
        std::snprintf(detail, sizeof detail, "guest=%.4f host=%.4f area_ratio=%.4f", outcome.filter.guest_coverage,
                      outcome.filter.host_coverage, outcome.filter.area_ratio);
        ledgers[i].add(id, outcome.filter.reason_string(), detail);
      }
    }
  });

  Ledger ledger;
  std::string jsonl;
  std::size_t total_candidates = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total_candidates += candidates[i];
    ledger.append(std::move(ledgers[i]));
    for (const auto& pair : pairs[i]) {
      jsonl += pair_to_json(pair) + '\n';
      manifest.pairs.push_back(pair.ref());
    }
  }
  manifest.canonicalize();
  manifest.validate();
  write_file_atomic(out("pairs/pairs.jsonl"), jsonl);
  save_manifest(out("manifest.txt"), manifest);
  write_ledger(out("rejections/derive-pairs.tsv"), ledger, run.report);

  run.report.items_in = total_candidates;
  run.report.items_out = manifest.pairs.size();
  run.report.details = {{"pairs", manifest.pairs.size()}, {"clips", n}};
  run.report.wall_s = run.elapsed();
  write_file_atomic(stamp_file, stamp.hex() + "\n");
  return run.report;
}

StageReport Pipeline::plan_renders() {
  StageRun run;
  run.report.stage = "plan-renders";
  require("plan-renders", "manifest.txt", "derive-pairs");
  require("plan-renders", "pairs/pairs.jsonl", "derive-pairs");

  RenderSpec spec;
  spec.fps = config_.render.fps;
  spec.crf = config_.render.crf;
  spec.audio_rate_hz = config_.render.audio_rate_hz;
  spec.audio_channels = config_.render.audio_channels;

  Stamp stamp("plan-renders");
  stamp.text(render_plan_to_json(RenderPlan{"spec", "spec", spec, {}}));
  stamp.text(config_.execute_renders ? "execute" : "plan");
  stamp.text(config_.inputs.media_root.string());
  stamp.file(out("manifest.txt"));
  stamp.file(out("pairs/pairs.jsonl"));
  const fs::path stamp_file = out(".stamps/plan-renders");
  const std::vector<fs::path> outputs = {out("renders/plans.jsonl"), out("renders/commands.sh"),
                                         out("rejections/plan-renders.tsv")};
  if (stamp_current(stamp_file, stamp.hex(), outputs)) {
    run.report.up_to_date = true;
    return run.report;
  }

  const auto manifest = load_manifest(out("manifest.txt"));
  std::vector<RenderPlan> plans;
  Ledger ledger;
  const std::string pairs_text = read_file(out("pairs/pairs.jsonl"));
  LineReader reader(pairs_text);
  std::string_view line;
  while (reader.next(line)) {
    if (line.empty()) continue;
    const auto pair = pair_from_json(line);
    const auto* ep = manifest.find_episode(pair.episode_id);
    if (ep == nullptr) {
      ledger.add(pair.pair_id, "unknown_episode", pair.episode_id);
      continue;
    }
    EpisodeMeta source = *ep;
    if (!config_.inputs.media_root.empty() && fs::path(source.source_uri).is_relative()) {
      source.source_uri = (config_.inputs.media_root / source.source_uri).string();
    }
    plans.push_back(plan_render(pair, source, spec));
  }

  const fs::path media_out = out("renders/media");
  std::string plans_jsonl;
  std::string script = "#!/bin/sh\nset -e\nmkdir -p " + shell_join(std::vector<std::string>{media_out.string()}) + "\n";
  for (const auto& plan : plans) {
    plans_jsonl += render_plan_to_json(plan) + '\n';
    for (const auto& o : plan.outputs) script += shell_join(encoder_command(o, plan.spec, media_out)) + '\n';
  }
  write_file_atomic(out("renders/plans.jsonl"), plans_jsonl);
  write_file_atomic(out("renders/commands.sh"), script);
  fs::permissions(out("renders/commands.sh"), fs::perms::owner_exec | fs::perms::group_exec | fs::perms::others_exec,
                  fs::perm_options::add);
  write_ledger(out("rejections/plan-renders.tsv"), ledger, run.report);

  run.report.items_in = plans.size() + ledger.rows.size();
  run.report.items_out = plans.size();
  run.report.details = {{"plans", plans.size()}, {"commands", plans.size() * 2}};
  if (config_.execute_renders) {
    fs::create_directories(media_out);
    const auto exec = execute_render_plans(plans, media_out, config_.workers);
    run.report.details["launched"] = exec.launched;
    run.report.details["failed"] = exec.failed;
    if (exec.failed > 0) {
      fail(ErrorKind::kIo, std::to_string(exec.failed) + " of " + std::to_string(exec.launched) +
                               " encoder commands failed");
    }
  }
  run.report.wall_s = run.elapsed();
  write_file_atomic(stamp_file, stamp.hex() + "\n");
  return run.report;
}

StageReport Pipeline::stats() {
  StageRun run;
  run.report.stage = "stats";
  require("stats", "manifest.txt", "derive-pairs");

  Stamp stamp("stats");
  stamp.file(out("manifest.txt"));
  const fs::path stamp_file = out(".stamps/stats");
  const std::vector<fs::path> outputs = {out("stats/stats.txt"), out("stats/stats.json"), out("stats/histogram.tsv")};
  const auto manifest = load_manifest(out("manifest.txt"));
  const auto report = compute_stats(manifest);
  run.report.details = {{"table", format_stats_table(report)}};
  if (stamp_current(stamp_file, stamp.hex(), outputs)) {
    run.report.up_to_date = true;
    return run.report;
  }
  write_file_atomic(out("stats/stats.txt"), format_stats_table(report));
  write_file_atomic(out("stats/stats.json"), stats_to_json(report));
  write_file_atomic(out("stats/histogram.tsv"), histogram_tsv(report));
  run.report.items_in = manifest.clips.size();
  run.report.items_out = report.clip_count;
  run.report.wall_s = run.elapsed();
  write_file_atomic(stamp_file, stamp.hex() + "\n");
  return run.report;
}

StageReport Pipeline::make_tasks(std::string_view annotation_stage) {
  StageRun run;
  const anno::Stage stage = anno::parse_stage(annotation_stage);
  run.report.stage = "make-tasks:" + std::string(anno::to_string(stage));
  std::vector<anno::TaskCandidate> candidates;
  double fraction = 0;
  if (stage == anno::Stage::kHostSpeech) {
    require("make-tasks", "ingest/diarization.txt", "ingest");
    fraction = config_.annotation.speech_fraction;
    for (const auto& seg : parse_diarization(out("ingest/diarization.txt")).segments) {
      candidates.push_back({"audio/" + seg.embedding_id + ".wav",
                            json{{"clip_id", seg.clip_id},
                                 {"speaker_label", seg.speaker_label},
                                 {"start_s", seg.start_s},
                                 {"end_s", seg.end_s},
                                 {"embedding_id", seg.embedding_id}}});
    }
  } else {
    require("make-tasks", "segment/manifest.txt", "segment");
    require("make-tasks", "audio/host_intervals.tsv", "calibrate-audio");
    fraction = config_.annotation.face_fraction;
    const auto manifest = load_manifest(out("segment/manifest.txt"));
    const auto logs = load_logs(out("ingest/tracks"), manifest, config_.workers);
    for (const auto& h : parse_host_intervals(read_file(out("audio/host_intervals.tsv")))) {
      const auto* clip = manifest.find_clip(h.clip_id);
      if (clip == nullptr) continue;
      const auto* ep = manifest.find_episode(clip->episode_id);
      const auto step = std::max<FrameIndex>(1, static_cast<FrameIndex>(std::llround(ep->fps)));
      for (const auto& d : faces_in(logs.at(clip->episode_id), h.frames)) {
        if ((d.frame_index - h.frames.begin) % step != 0) continue;
        const auto id = face_embedding_id(clip->episode_id, d.frame_index, d.track_id);
        candidates.push_back({"faces/" + id + ".jpg", json{{"clip_id", clip->clip_id},
                                                          {"frame", d.frame_index},
                                                          {"track_id", d.track_id},
                                                          {"embedding_id", id}}});
      }
    }
  }
  anno::LabelStore store(config_.annotation.data_dir, std::int64_t{config_.annotation.lease_s} * 1000);
  run.report.items_in = candidates.size();
  run.report.items_out = candidates.empty() ? 0 : store.create_tasks(stage, candidates, fraction);
  run.report.details = {{"store", store.log_path().string()}, {"total_tasks", store.size()}};
  run.report.wall_s = run.elapsed();
  journal(run.report);
  return run.report;
}

}  // namespace dyad
