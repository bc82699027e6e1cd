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

#include "dyadkit/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dyadkit/error.hpp"
#include "dyadkit/hash.hpp"
#include "dyadkit/textio.hpp"

namespace dyad {

double iou(const BBox& a, const BBox& b) {
  const double ix0 = std::max(a.x, b.x);
  const double iy0 = std::max(a.y, b.y);
  const double ix1 = std::min(a.x + a.w, b.x + b.w);
  const double iy1 = std::min(a.y + a.h, b.y + b.h);
  const double inter = std::max(0.0, ix1 - ix0) * std::max(0.0, iy1 - iy0);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

void EpisodeMeta::validate() const {
  if (!is_plain_token(episode_id)) fail(ErrorKind::kValidation, "episode_id must be a non-empty token");
  if (!is_plain_token(source_uri)) fail(ErrorKind::kValidation, episode_id + ": source_uri must be a non-empty token");
  if (!(fps > 0) || !std::isfinite(fps)) fail(ErrorKind::kValidation, episode_id + ": fps must be positive");
  if (frame_count < 0) fail(ErrorKind::kValidation, episode_id + ": negative frame_count");
  if (width <= 0 || height <= 0) fail(ErrorKind::kValidation, episode_id + ": frame size must be positive");
  const double expected = static_cast<double>(frame_count) / fps;
  if (!(std::abs(duration_s - expected) <= 1.0 / fps + 1e-9)) {
    fail(ErrorKind::kValidation, episode_id + ": duration_s disagrees with frame_count/fps by more than one frame");
  }
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  fail(ErrorKind::kValidation, "unknown split '" + std::string(s) + "'");
}

void SplitRatios::validate() const {
  for (double r : {train, val, test}) {
    if (!(r >= 0.0) || !std::isfinite(r)) fail(ErrorKind::kConfig, "split ratios must be non-negative");
  }
  if (std::abs(train + val + test - 1.0) > 1e-9) {
    fail(ErrorKind::kConfig, "split ratios must sum to 1");
  }
}

Split assign_split(std::string_view key, const SplitRatios& ratios) {
  ratios.validate();
  if (key.empty()) fail(ErrorKind::kValidation, "split key must be non-empty");
  const double u = unit_interval_hash(key);
  if (u < ratios.train) return Split::kTrain;
  if (u < ratios.train + ratios.val) return Split::kVal;
  return Split::kTest;
}

Split assign_split(const ClipRecord& clip, const SplitRatios& ratios, SplitGrouping grouping) {
  return assign_split(grouping == SplitGrouping::kClip ? clip.clip_id : clip.episode_id, ratios);
}

const EpisodeMeta* Manifest::find_episode(std::string_view id) const {
  for (const auto& e : episodes) {
    if (e.episode_id == id) return &e;
  }
  return nullptr;
}

const ClipRecord* Manifest::find_clip(std::string_view id) const {
  for (const auto& c : clips) {
    if (c.clip_id == id) return &c;
  }
  return nullptr;
}

void Manifest::validate() const {
  std::map<std::string_view, const EpisodeMeta*> eps;
  for (const auto& e : episodes) {
    e.validate();
    if (!eps.emplace(e.episode_id, &e).second) fail(ErrorKind::kValidation, "duplicate episode_id " + e.episode_id);
  }
  std::set<std::string_view> clip_ids;
  for (const auto& c : clips) {
    if (!is_plain_token(c.clip_id)) fail(ErrorKind::kValidation, "clip_id must be a non-empty token");
    if (!clip_ids.insert(c.clip_id).second) fail(ErrorKind::kValidation, "duplicate clip_id " + c.clip_id);
    auto it = eps.find(c.episode_id);
    if (it == eps.end()) fail(ErrorKind::kValidation, c.clip_id + ": unknown episode_id " + c.episode_id);
    if (c.end_frame <= c.start_frame || c.start_frame < 0) {
      fail(ErrorKind::kValidation, c.clip_id + ": empty or negative frame interval");
    }
    const double expected = static_cast<double>(c.end_frame - c.start_frame) / it->second->fps;
    if (std::abs(c.duration_s - expected) > 1e-9 * std::max(1.0, expected)) {
      fail(ErrorKind::kValidation, c.clip_id + ": duration_s disagrees with frame interval");
    }
  }
  std::set<std::string_view> pair_ids;
  for (const auto& p : pairs) {
    if (!is_plain_token(p.pair_id)) fail(ErrorKind::kValidation, "pair_id must be a non-empty token");
    if (!pair_ids.insert(p.pair_id).second) fail(ErrorKind::kValidation, "duplicate pair_id " + p.pair_id);
    if (!clip_ids.contains(p.clip_id)) fail(ErrorKind::kValidation, p.pair_id + ": unknown clip_id " + p.clip_id);
    if (!(p.t0 < p.t1 && p.t1 < p.t2)) fail(ErrorKind::kValidation, p.pair_id + ": windows must satisfy t0 < t1 < t2");
  }
}

void Manifest::canonicalize() {
  std::sort(episodes.begin(), episodes.end(),
            [](const auto& a, const auto& b) { return a.episode_id < b.episode_id; });
  std::sort(clips.begin(), clips.end(), [](const auto& a, const auto& b) {
    return std::tie(a.episode_id, a.start_frame, a.clip_id) < std::tie(b.episode_id, b.start_frame, b.clip_id);
  });
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.pair_id < b.pair_id; });
}

std::string serialize_manifest(const Manifest& manifest) {
  Manifest m = manifest;
  m.canonicalize();
  std::ostringstream out;
  out << "# dyadkit manifest\n";
  out << "schema_version " << m.schema_version << '\n';
  for (const auto& e : m.episodes) {
    out << "episode " << e.episode_id << ' ' << format_double(e.fps) << ' ' << e.frame_count << ' '
        << e.width << ' ' << e.height << ' ' << format_double(e.duration_s) << ' ' << e.source_uri << '\n';
  }
  for (const auto& c : m.clips) {
    out << "clip " << c.clip_id << ' ' << c.episode_id << ' ' << c.start_frame << ' ' << c.end_frame << ' '
        << to_string(c.split) << ' ' << format_double(c.duration_s) << '\n';
  }
  for (const auto& p : m.pairs) {
    out << "pair " << p.pair_id << ' ' << p.clip_id << ' ' << p.t0 << ' ' << p.t1 << ' ' << p.t2 << '\n';
  }
  return std::move(out).str();
}

namespace {

[[noreturn]] void bad_record(std::size_t line_no, const std::string& why) {
  fail(ErrorKind::kValidation, "manifest line " + std::to_string(line_no) + ": " + why);
}

template <typename T>
T need(std::optional<T> v, std::size_t line_no, const char* field) {
  if (!v) bad_record(line_no, std::string("bad ") + field);
  return *v;
}

}  // namespace

Manifest parse_manifest(std::string_view text) {
  Manifest m;
  bool saw_version = false;
  LineReader reader(text);
  std::string_view line;
  while (reader.next(line)) {
    if (is_blank_or_comment(line)) continue;
    const auto f = split_ws(line);
    const auto n = reader.line_number();
    if (f[0] == "schema_version" && f.size() == 2) {
      m.schema_version = static_cast<int>(need(parse_int(f[1]), n, "schema_version"));
      if (m.schema_version != Manifest::kSchemaVersion) bad_record(n, "unsupported schema_version");
      saw_version = true;
    } else if (f[0] == "episode" && f.size() == 8) {
      EpisodeMeta e;
      e.episode_id = f[1];
      e.fps = need(parse_double(f[2]), n, "fps");
      e.frame_count = need(parse_int(f[3]), n, "frame_count");
      e.width = static_cast<int>(need(parse_int(f[4]), n, "width"));
      e.height = static_cast<int>(need(parse_int(f[5]), n, "height"));
      e.duration_s = need(parse_double(f[6]), n, "duration_s");
      e.source_uri = f[7];
      m.episodes.push_back(std::move(e));
    } else if (f[0] == "clip" && f.size() == 7) {
      ClipRecord c;
      c.clip_id = f[1];
      c.episode_id = f[2];
      c.start_frame = need(parse_int(f[3]), n, "start_frame");
      c.end_frame = need(parse_int(f[4]), n, "end_frame");
      c.split = parse_split(f[5]);
      c.duration_s = need(parse_double(f[6]), n, "duration_s");
      m.clips.push_back(std::move(c));
    } else if (f[0] == "pair" && f.size() == 6) {
      PairRef p;
      p.pair_id = f[1];
      p.clip_id = f[2];
      p.t0 = need(parse_int(f[3]), n, "t0");
      p.t1 = need(parse_int(f[4]), n, "t1");
      p.t2 = need(parse_int(f[5]), n, "t2");
      m.pairs.push_back(std::move(p));
    } else {
      bad_record(n, "unrecognized record '" + std::string(f[0]) + "'");
    }
  }
  if (!saw_version) fail(ErrorKind::kValidation, "manifest has no schema_version record");
  m.validate();
  m.canonicalize();
  return m;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  manifest.validate();
  write_file_atomic(path, serialize_manifest(manifest));
}

Manifest load_manifest(const std::filesystem::path& path) { return parse_manifest(read_file(path)); }

StatsReport compute_stats(const std::vector<double>& durations_s) {
  StatsReport r;
  r.clip_count = durations_s.size();
  if (durations_s.empty()) return r;
  double sum = 0;
  for (double d : durations_s) sum += d;
  r.total_seconds = sum;
  r.total_hours = sum / 3600.0;
  r.mean_s = sum / static_cast<double>(durations_s.size());
  double ss = 0;
  for (double d : durations_s) ss += (d - r.mean_s) * (d - r.mean_s);
  r.std_s = std::sqrt(ss / static_cast<double>(durations_s.size()));
  r.min_s = *std::min_element(durations_s.begin(), durations_s.end());
  r.max_s = *std::max_element(durations_s.begin(), durations_s.end());
  const auto lo = static_cast<std::int64_t>(std::floor(r.min_s));
  const auto hi = static_cast<std::int64_t>(std::floor(r.max_s));
  r.histogram.resize(static_cast<std::size_t>(hi - lo + 1));
  for (std::int64_t b = lo; b <= hi; ++b) r.histogram[static_cast<std::size_t>(b - lo)].lower_s = b;
  for (double d : durations_s) {
    ++r.histogram[static_cast<std::size_t>(static_cast<std::int64_t>(std::floor(d)) - lo)].count;
  }
  return r;
}

StatsReport compute_stats(const Manifest& manifest) {
  std::vector<double> durations;
  durations.reserve(manifest.clips.size());
  for (const auto& c : manifest.clips) durations.push_back(c.duration_s);
  StatsReport r = compute_stats(durations);
  for (const auto& c : manifest.clips) {
    const auto i = static_cast<std::size_t>(c.split);
    ++r.split_counts[i];
    r.split_hours[i] += c.duration_s / 3600.0;
  }
  return r;
}

std::string format_stats_table(const StatsReport& r) {
  char buf[256];
  std::ostringstream out;
  out << "# durations: mean +- population std (ddof=0)\n";
  out << "clips  total_hours  mean_s  std_s  min_s  max_s\n";
  std::snprintf(buf, sizeof(buf), "%zu  %.4f  %.2f  %.2f  %.2f  %.2f\n", r.clip_count, r.total_hours, r.mean_s,
                r.std_s, r.min_s, r.max_s);
  out << buf;
  out << "split  clips  hours\n";
  for (int s = 0; s < 3; ++s) {
    std::snprintf(buf, sizeof(buf), "%s  %zu  %.4f\n", std::string(to_string(static_cast<Split>(s))).c_str(),
                  r.split_counts[static_cast<std::size_t>(s)], r.split_hours[static_cast<std::size_t>(s)]);
    out << buf;
  }
  return std::move(out).str();
}

std::string stats_to_json(const StatsReport& r) {
  nlohmann::json j;
  j["clip_count"] = r.clip_count;
  j["total_seconds"] = r.total_seconds;
  j["total_hours"] = r.total_hours;
  j["mean_s"] = r.mean_s;
  j["std_s"] = r.std_s;
  j["std_kind"] = "population";
  j["min_s"] = r.min_s;
  j["max_s"] = r.max_s;
  auto& splits = j["splits"];
  for (int s = 0; s < 3; ++s) {
    const auto name = std::string(to_string(static_cast<Split>(s)));
    splits[name] = {{"clips", r.split_counts[static_cast<std::size_t>(s)]},
                    {"hours", r.split_hours[static_cast<std::size_t>(s)]}};
  }
  j["histogram"] = nlohmann::json::array();
  for (const auto& b : r.histogram) j["histogram"].push_back({{"lower_s", b.lower_s}, {"count", b.count}});
  return j.dump(2) + "\n";
}

std::string histogram_tsv(const StatsReport& r) {
  std::ostringstream out;
  out << "lower_s\tupper_s\tcount\n";
  for (const auto& b : r.histogram) out << b.lower_s << '\t' << b.lower_s + 1 << '\t' << b.count << '\n';
  return std::move(out).str();
}

}  // namespace dyad
