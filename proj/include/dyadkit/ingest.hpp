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

#ifndef DYADKIT_INGEST_HPP_
#define DYADKIT_INGEST_HPP_

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "dyadkit/datamodel.hpp"

namespace dyad {

// Upstream perception artifacts. All formats are UTF-8, one record per line,
// whitespace separated; blank lines and lines starting with '#' are ignored.
//
//   tracking log:  episode_id frame_index track_id kind x y w h confidence
//   diarization:   clip_id speaker_label start_s end_s embedding_id
//   embeddings:    <d>                       (header)
//                  embedding_id v_1 ... v_d
//   episodes:      episode_id fps frame_count width height duration_s source_uri
//   labels:        id positive|negative|unsure

enum class DetectionKind { kPerson, kFace };

std::string_view to_string(DetectionKind kind);

struct Detection {
  FrameIndex frame_index = 0;
  std::int64_t track_id = 0;
  DetectionKind kind = DetectionKind::kPerson;
  BBox bbox;
  double confidence = 0;

  friend bool operator==(const Detection&, const Detection&) = default;
  friend auto operator<=>(const Detection& a, const Detection& b) {
    return std::tie(a.frame_index, a.track_id, a.kind, a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h, a.confidence) <=>
           std::tie(b.frame_index, b.track_id, b.kind, b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h, b.confidence);
  }
};

struct TrackLog {
  std::string episode_id;
  std::vector<Detection> detections;  // sorted by frame, then track_id

  friend bool operator==(const TrackLog&, const TrackLog&) = default;
};

struct ParseOptions {
  /// Fraction of bad records above which the whole file is rejected.
  double max_bad_fraction = 0.05;
};

/// Record accounting: records == parsed + malformed + dropped.
struct ParseReport {
  std::size_t records = 0;
  std::size_t parsed = 0;
  std::size_t malformed = 0;
  std::size_t dropped = 0;
  std::size_t first_malformed_line = 0;  // 0 when none
  std::string first_error;
  /// Every rejected line: (line number, reason). Reasons are "malformed:..."
  /// or "degenerate_interval".
  std::vector<std::pair<std::size_t, std::string>> rejected_lines;
};

struct TrackLogParse {
  TrackLog log;
  ParseReport report;
};

TrackLogParse parse_tracking_log_text(std::string_view text, const ParseOptions& opts = {});
TrackLogParse parse_tracking_log(const std::filesystem::path& path, const ParseOptions& opts = {});
std::string serialize_tracking_log(const TrackLog& log);

struct DiarSegment {
  std::string clip_id;
  std::string speaker_label;
  double start_s = 0;
  double end_s = 0;
  std::string embedding_id;

  double duration_s() const { return end_s - start_s; }
  friend bool operator==(const DiarSegment&, const DiarSegment&) = default;
};

struct DiarizationParse {
  std::vector<DiarSegment> segments;  // file order, overlaps preserved
  ParseReport report;                 // `dropped` counts zero-length segments
};

DiarizationParse parse_diarization_text(std::string_view text, const ParseOptions& opts = {});
DiarizationParse parse_diarization(const std::filesystem::path& path, const ParseOptions& opts = {});
std::string serialize_diarization(std::span<const DiarSegment> segments);

/// Returns `v / |v|`. Vectors already unit-norm to within a few ulps are
/// returned unchanged, which makes renormalization idempotent.
std::vector<double> l2_normalized(std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);

/// embedding_id -> unit vector, all of one dimension.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  bool contains(std::string_view id) const { return vectors_.find(std::string(id)) != vectors_.end(); }

  /// Throws a lookup error for unknown ids.
  const std::vector<double>& at(std::string_view id) const;

  /// Normalizes and inserts; throws on dimension mismatch, zero norm, or a
  /// duplicate id.
  void insert(std::string id, std::span<const double> vector);

  const std::map<std::string, std::vector<double>>& entries() const { return vectors_; }

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<double>> vectors_;
};

struct RecordError {
  std::string id;
  std::string reason;
};

struct EmbeddingLoad {
  EmbeddingTable table;
  std::vector<RecordError> rejected;  // zero or non-finite vectors
};

EmbeddingLoad parse_embeddings_text(std::string_view text);
EmbeddingLoad load_embeddings(const std::filesystem::path& path);
std::string serialize_embeddings(const EmbeddingTable& table);

std::vector<EpisodeMeta> parse_episodes_text(std::string_view text);
std::vector<EpisodeMeta> load_episodes(const std::filesystem::path& path);
std::string serialize_episodes(std::span<const EpisodeMeta> episodes);

enum class Verdict { kPositive, kNegative, kUnsure };

std::string_view to_string(Verdict v);
/// Throws a validation error for anything outside the vocabulary.
Verdict parse_verdict(std::string_view s);

/// Labeled ids with unsure entries removed; both lists sorted.
struct LabelSet {
  std::vector<std::string> positives;
  std::vector<std::string> negatives;

  friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

LabelSet parse_labels_text(std::string_view text);
LabelSet load_labels(const std::filesystem::path& path);
std::string serialize_labels(const LabelSet& labels);

}  // namespace dyad

#endif  // DYADKIT_INGEST_HPP_
