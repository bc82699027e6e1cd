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

#ifndef DYADKIT_DATAMODEL_HPP_
#define DYADKIT_DATAMODEL_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dyad {

using FrameIndex = std::int64_t;

/// Half-open frame interval [begin, end).
struct FrameRange {
  FrameIndex begin = 0;
  FrameIndex end = 0;

  FrameIndex length() const { return end - begin; }
  bool contains(FrameIndex f) const { return f >= begin && f < end; }
  friend bool operator==(const FrameRange&, const FrameRange&) = default;
};

/// Axis-aligned box, top-left corner plus extent, in pixels.
struct BBox {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;

  double area() const { return w * h; }
  double center_x() const { return x + 0.5 * w; }
  double center_y() const { return y + 0.5 * h; }
  bool valid() const { return w > 0 && h > 0; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Intersection over union; 0 for disjoint boxes.
double iou(const BBox& a, const BBox& b);

struct EpisodeMeta {
  std::string episode_id;
  std::string source_uri;
  double fps = 25.0;
  FrameIndex frame_count = 0;
  int width = 0;
  int height = 0;
  double duration_s = 0;

  void validate() const;
  friend bool operator==(const EpisodeMeta&, const EpisodeMeta&) = default;
};

enum class Split { kTrain, kVal, kTest };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;

  /// Throws a config error unless the ratios are non-negative and sum to 1.
  void validate() const;
};

/// Deterministic bucket for `key`: its stable hash mapped into [0, 1) is
/// compared against the cumulative ratios.
Split assign_split(std::string_view key, const SplitRatios& ratios = {});

/// Which key the split hash is taken over.
enum class SplitGrouping { kClip, kEpisode };

struct ClipRecord {
  std::string clip_id;
  std::string episode_id;
  FrameIndex start_frame = 0;
  FrameIndex end_frame = 0;
  Split split = Split::kTrain;
  double duration_s = 0;

  FrameRange frames() const { return {start_frame, end_frame}; }
  friend bool operator==(const ClipRecord&, const ClipRecord&) = default;
};

Split assign_split(const ClipRecord& clip, const SplitRatios& ratios,
                   SplitGrouping grouping);

/// Reference to an interaction pair: guest window [t0, t1), host [t1, t2).
struct PairRef {
  std::string pair_id;
  std::string clip_id;
  FrameIndex t0 = 0;
  FrameIndex t1 = 0;
  FrameIndex t2 = 0;

  friend bool operator==(const PairRef&, const PairRef&) = default;
};

struct Manifest {
  static constexpr int kSchemaVersion = 1;

  int schema_version = kSchemaVersion;
  std::vector<EpisodeMeta> episodes;
  std::vector<ClipRecord> clips;
  std::vector<PairRef> pairs;

  const EpisodeMeta* find_episode(std::string_view id) const;
  const ClipRecord* find_clip(std::string_view id) const;

  /// Checks id uniqueness and cross references; throws a validation error.
  void validate() const;

  /// Sorts every list into canonical order.
  void canonicalize();

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

/// Canonical text form. Record layout (whitespace separated, one per line):
///
///   schema_version <n>
///   episode <episode_id> <fps> <frame_count> <width> <height> <duration_s> <source_uri>
///   clip <clip_id> <episode_id> <start_frame> <end_frame> <split> <duration_s>
///   pair <pair_id> <clip_id> <t0> <t1> <t2>
std::string serialize_manifest(const Manifest& manifest);
Manifest parse_manifest(std::string_view text);

void save_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest load_manifest(const std::filesystem::path& path);

struct HistogramBin {
  std::int64_t lower_s = 0;  // bin is [lower_s, lower_s + 1)
  std::size_t count = 0;
};

struct StatsReport {
  std::size_t clip_count = 0;
  double total_seconds = 0;
  double total_hours = 0;
  double mean_s = 0;
  double std_s = 0;  // population standard deviation
  double min_s = 0;
  double max_s = 0;
  std::vector<HistogramBin> histogram;
  std::array<std::size_t, 3> split_counts{};
  std::array<double, 3> split_hours{};
};

StatsReport compute_stats(const Manifest& manifest);
StatsReport compute_stats(const std::vector<double>& durations_s);

std::string format_stats_table(const StatsReport& report);
std::string stats_to_json(const StatsReport& report);
std::string histogram_tsv(const StatsReport& report);

}  // namespace dyad

#endif  // DYADKIT_DATAMODEL_HPP_
