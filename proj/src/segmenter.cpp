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

#include "dyadkit/segmenter.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <utility>

#include "dyadkit/error.hpp"
#include "dyadkit/textio.hpp"

namespace dyad {

void SegmentParams::validate() const {
  if (max_gap < 0) fail(ErrorKind::kConfig, "max_gap must be >= 0");
  if (min_len < 1) fail(ErrorKind::kConfig, "min_len must be >= 1");
  if (!(min_confidence >= 0.0 && min_confidence <= 1.0)) fail(ErrorKind::kConfig, "min_confidence must be in [0,1]");
}

namespace {

using TrackPair = std::pair<std::int64_t, std::int64_t>;

struct QualifyingFrame {
  FrameIndex frame;
  TrackPair pair;
};

// Qualifying frames in ascending order. Relies on detections being sorted by
// frame then track_id.
std::vector<QualifyingFrame> qualifying_frames(const TrackLog& log, double min_confidence) {
  std::vector<QualifyingFrame> out;
  const auto& dets = log.detections;
  std::size_t i = 0;
  std::vector<std::int64_t> ids;
  while (i < dets.size()) {
    const FrameIndex frame = dets[i].frame_index;
    ids.clear();
    for (; i < dets.size() && dets[i].frame_index == frame; ++i) {
      const auto& d = dets[i];
      if (d.kind != DetectionKind::kPerson || d.confidence < min_confidence) continue;
      if (ids.empty() || ids.back() != d.track_id) ids.push_back(d.track_id);
    }
    if (ids.size() == 2) out.push_back({frame, {ids[0], ids[1]}});
  }
  return out;
}

// Splits [first, last) of `frames` into groups where consecutive frames are at
// most max_gap + 1 apart.
template <typename Fn>
void for_each_merged_run(const std::vector<QualifyingFrame>& frames, FrameIndex max_gap, Fn&& fn) {
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= frames.size(); ++i) {
    if (i == frames.size() || frames[i].frame - frames[i - 1].frame - 1 > max_gap) {
      if (begin < i) fn(begin, i);
      begin = i;
    }
  }
}

}  // namespace

std::vector<TwoPersonSegment> extract_two_person_segments(const TrackLog& log, const SegmentParams& params,
                                                          std::vector<TwoPersonSegment>* discarded) {
  params.validate();
  if (!std::is_sorted(log.detections.begin(), log.detections.end(),
                      [](const Detection& a, const Detection& b) {
                        return std::tie(a.frame_index, a.track_id) < std::tie(b.frame_index, b.track_id);
                      })) {
    fail(ErrorKind::kPrecondition, "tracking log must be sorted by frame_index then track_id");
  }
  std::vector<TwoPersonSegment> out;
  const auto frames = qualifying_frames(log, params.min_confidence);

  for_each_merged_run(frames, params.max_gap, [&](std::size_t begin, std::size_t end) {
    std::map<TrackPair, std::size_t> counts;
    for (std::size_t i = begin; i < end; ++i) ++counts[frames[i].pair];
    TrackPair modal = counts.begin()->first;
    std::size_t best = 0;
    for (const auto& [pair, n] : counts) {
      if (n > best) {
        best = n;
        modal = pair;
      }
    }
    std::vector<QualifyingFrame> kept;
    kept.reserve(best);
    for (std::size_t i = begin; i < end; ++i) {
      if (frames[i].pair == modal) kept.push_back(frames[i]);
    }
    for_each_merged_run(kept, params.max_gap, [&](std::size_t kb, std::size_t ke) {
      TwoPersonSegment seg;
      seg.episode_id = log.episode_id;
      seg.frames = {kept[kb].frame, kept[ke - 1].frame + 1};
      seg.track_ids = {modal.first, modal.second};
      for (std::size_t k = kb + 1; k < ke; ++k) {
        for (FrameIndex f = kept[k - 1].frame + 1; f < kept[k].frame; ++f) seg.gap_frames.push_back(f);
      }
      if (seg.frames.length() < params.min_len) {
        if (discarded != nullptr) discarded->push_back(std::move(seg));
        return;
      }
      out.push_back(std::move(seg));
    });
  });
  return out;
}

std::string make_clip_id(std::string_view episode_id, FrameRange frames) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "_%06lld_%06lld", static_cast<long long>(frames.begin),
                static_cast<long long>(frames.end));
  return std::string(episode_id) + buf;
}

std::string TwoPersonSegment::clip_id() const { return make_clip_id(episode_id, frames); }

std::vector<ClipRecord> to_clip_records(const std::vector<TwoPersonSegment>& segments, const EpisodeMeta& episode,
                                        const SplitRatios& ratios, SplitGrouping grouping) {
  std::vector<ClipRecord> out;
  out.reserve(segments.size());
  for (const auto& s : segments) {
    ClipRecord c;
    c.clip_id = s.clip_id();
    c.episode_id = s.episode_id;
    c.start_frame = s.frames.begin;
    c.end_frame = s.frames.end;
    c.duration_s = static_cast<double>(s.frames.length()) / episode.fps;
    c.split = assign_split(c, ratios, grouping);
    out.push_back(std::move(c));
  }
  return out;
}

std::string serialize_segment_sidecar(const std::vector<TwoPersonSegment>& segments) {
  std::string out = "# clip_id track_a track_b gap_count gap_frames...\n";
  for (const auto& s : segments) {
    out += s.clip_id() + ' ' + std::to_string(s.track_ids[0]) + ' ' + std::to_string(s.track_ids[1]) + ' ' +
           std::to_string(s.gap_frames.size());
    for (auto f : s.gap_frames) out += ' ' + std::to_string(f);
    out += '\n';
  }
  return out;
}

std::vector<TwoPersonSegment> parse_segment_sidecar(std::string_view text) {
  std::vector<TwoPersonSegment> out;
  LineReader reader(text);
  std::string_view line;
  while (reader.next(line)) {
    if (is_blank_or_comment(line)) continue;
    const auto f = split_ws(line);
    const auto where = "segment sidecar line " + std::to_string(reader.line_number());
    if (f.size() < 4) fail(ErrorKind::kValidation, where + ": too few fields");
    // clip_id is "<episode>_<start>_<end>"; the episode id may itself contain '_'.
    const std::string clip(f[0]);
    const auto p2 = clip.rfind('_');
    const auto p1 = p2 == std::string::npos || p2 == 0 ? std::string::npos : clip.rfind('_', p2 - 1);
    if (p1 == std::string::npos) fail(ErrorKind::kValidation, where + ": malformed clip_id");
    const auto b = parse_int(std::string_view(clip).substr(p1 + 1, p2 - p1 - 1));
    const auto e = parse_int(std::string_view(clip).substr(p2 + 1));
    const auto ta = parse_int(f[1]);
    const auto tb = parse_int(f[2]);
    const auto n = parse_int(f[3]);
    if (!b || !e || !ta || !tb || !n || *n < 0 || static_cast<std::size_t>(*n) != f.size() - 4) {
      fail(ErrorKind::kValidation, where + ": malformed record");
    }
    TwoPersonSegment s;
    s.episode_id = clip.substr(0, p1);
    s.frames = {*b, *e};
    s.track_ids = {*ta, *tb};
    for (std::size_t i = 4; i < f.size(); ++i) {
      const auto g = parse_int(f[i]);
      if (!g) fail(ErrorKind::kValidation, where + ": bad gap frame");
      s.gap_frames.push_back(*g);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace dyad
