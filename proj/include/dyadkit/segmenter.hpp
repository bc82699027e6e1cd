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

#ifndef DYADKIT_SEGMENTER_HPP_
#define DYADKIT_SEGMENTER_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dyadkit/datamodel.hpp"
#include "dyadkit/ingest.hpp"

namespace dyad {

struct SegmentParams {
  /// Longest run of non-qualifying frames bridged inside one segment.
  FrameIndex max_gap = 12;
  /// Shortest segment kept, in frames (end - start).
  FrameIndex min_len = 50;
  /// Person detections below this confidence are ignored.
  double min_confidence = 0.5;

  void validate() const;
};

struct TwoPersonSegment {
  std::string episode_id;
  FrameRange frames;
  std::array<std::int64_t, 2> track_ids{};  // ascending
  std::vector<FrameIndex> gap_frames;       // ascending, inside `frames`

  std::string clip_id() const;
  friend bool operator==(const TwoPersonSegment&, const TwoPersonSegment&) = default;
};

/// Frames qualify when exactly two distinct person tracks are detected.
/// Qualifying frames separated by at most `max_gap` other frames are merged;
/// within each merged span the most frequent track pair (ties: smallest pair)
/// is kept, frames showing another pair become gap frames, and the span is
/// re-split wherever that leaves a gap longer than `max_gap`. Pieces shorter
/// than `min_len` are discarded. Output is ordered and non-overlapping.
/// Pieces dropped for being shorter than min_len go to `discarded` if given.
std::vector<TwoPersonSegment> extract_two_person_segments(const TrackLog& log, const SegmentParams& params = {},
                                                          std::vector<TwoPersonSegment>* discarded = nullptr);

/// "<episode_id>_<start>_<end>" with six-digit zero padding.
std::string make_clip_id(std::string_view episode_id, FrameRange frames);

std::vector<ClipRecord> to_clip_records(const std::vector<TwoPersonSegment>& segments, const EpisodeMeta& episode,
                                        const SplitRatios& ratios, SplitGrouping grouping);

/// Sidecar, one line per segment: clip_id track_a track_b gap_count gap_frame...
std::string serialize_segment_sidecar(const std::vector<TwoPersonSegment>& segments);
std::vector<TwoPersonSegment> parse_segment_sidecar(std::string_view text);

}  // namespace dyad

#endif  // DYADKIT_SEGMENTER_HPP_
