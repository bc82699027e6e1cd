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

#include <algorithm>
#include <random>
#include <set>
#include <vector>

#include "dyadkit/segmenter.hpp"
#include "segment_oracle.hpp"
#include "support.hpp"

namespace dyad {
namespace {

using testing::error_kind;

void add_person(TrackLog& log, FrameIndex f, std::int64_t track, double conf = 0.9) {
  log.detections.push_back({f, track, DetectionKind::kPerson, {0, 0, 50, 100}, conf});
}

TrackLog pair_log(FrameIndex first, FrameIndex last, std::vector<FrameIndex> skip = {}) {
  TrackLog log;
  log.episode_id = "ep1";
  for (FrameIndex f = first; f <= last; ++f) {
    if (std::find(skip.begin(), skip.end(), f) != skip.end()) continue;
    add_person(log, f, 1);
    add_person(log, f, 2);
  }
  return log;
}

SegmentParams params(FrameIndex max_gap, FrameIndex min_len) {
  SegmentParams p;
  p.max_gap = max_gap;
  p.min_len = min_len;
  return p;
}

std::set<FrameIndex> covered_frames(const std::vector<TwoPersonSegment>& segs) {
  std::set<FrameIndex> out;
  for (const auto& s : segs) {
    for (FrameIndex f = s.frames.begin; f < s.frames.end; ++f) {
      if (!std::binary_search(s.gap_frames.begin(), s.gap_frames.end(), f)) out.insert(f);
    }
  }
  return out;
}

TEST_CASE("a hundred frames of one pair form one segment") {
  const auto segs = extract_two_person_segments(pair_log(0, 99), params(12, 50));
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].frames == FrameRange{0, 100});
  CHECK(segs[0].track_ids == std::array<std::int64_t, 2>{1, 2});
  CHECK(segs[0].gap_frames.empty());
  CHECK(segs[0].clip_id() == "ep1_000000_000100");
}

TEST_CASE("a three frame hole is bridged when max_gap allows it") {
  const auto segs = extract_two_person_segments(pair_log(0, 99, {50, 51, 52}), params(5, 50));
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].frames == FrameRange{0, 100});
  CHECK(segs[0].gap_frames == std::vector<FrameIndex>{50, 51, 52});
}

TEST_CASE("a hole longer than max_gap splits the segment") {
  const auto segs = extract_two_person_segments(pair_log(0, 99, {50, 51, 52}), params(2, 1));
  REQUIRE(segs.size() == 2);
  CHECK(segs[0].frames == FrameRange{0, 50});
  CHECK(segs[1].frames == FrameRange{53, 100});
}

TEST_CASE("a third person with max_gap zero splits the segment") {
  auto log = pair_log(0, 99);
  add_person(log, 50, 3);
  std::sort(log.detections.begin(), log.detections.end());
  const auto segs = extract_two_person_segments(log, params(0, 1));
  REQUIRE(segs.size() == 2);
  CHECK(segs[0].frames == FrameRange{0, 50});
  CHECK(segs[1].frames == FrameRange{51, 100});
}

TEST_CASE("an empty log yields no segments") {
  TrackLog log;
  log.episode_id = "ep1";
  CHECK(extract_two_person_segments(log).empty());
}

TEST_CASE("low-confidence persons and faces do not count") {
  auto log = pair_log(0, 59);
  for (FrameIndex f = 0; f < 60; ++f) {
    add_person(log, f, 7, 0.49);
    log.detections.push_back({f, 40, DetectionKind::kFace, {0, 0, 10, 10}, 0.9});
  }
  std::sort(log.detections.begin(), log.detections.end());
  const auto segs = extract_two_person_segments(log, params(0, 1));
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].frames == FrameRange{0, 60});
}

TEST_CASE("duplicate detections of one track still count as one person") {
  auto log = pair_log(0, 9);
  for (FrameIndex f = 0; f < 10; ++f) add_person(log, f, 1, 0.8);
  std::sort(log.detections.begin(), log.detections.end());
  const auto segs = extract_two_person_segments(log, params(0, 1));
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].frames == FrameRange{0, 10});
}

TEST_CASE("short pieces are discarded and reported") {
  std::vector<TwoPersonSegment> discarded;
  const auto segs = extract_two_person_segments(pair_log(0, 99, {30, 31, 32, 33}), params(0, 50), &discarded);
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].frames == FrameRange{34, 100});
  REQUIRE(discarded.size() == 1);
  CHECK(discarded[0].frames == FrameRange{0, 30});
}

TEST_CASE("min_len equal to the length keeps the segment") {
  CHECK(extract_two_person_segments(pair_log(0, 49), params(0, 50)).size() == 1);
  CHECK(extract_two_person_segments(pair_log(0, 48), params(0, 50)).empty());
}

TEST_CASE("the modal pair of a bridged span wins and ties go to the smaller pair") {
  TrackLog log;
  log.episode_id = "ep1";
  for (FrameIndex f = 0; f < 20; ++f) {
    add_person(log, f, 1);
    add_person(log, f, f < 12 ? 3 : 2);
  }
  std::sort(log.detections.begin(), log.detections.end());
  auto segs = extract_two_person_segments(log, params(5, 1));
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].track_ids == std::array<std::int64_t, 2>{1, 3});
  CHECK(segs[0].frames == FrameRange{0, 12});

  TrackLog tie;
  tie.episode_id = "ep1";
  for (FrameIndex f = 0; f < 20; ++f) {
    add_person(tie, f, 1);
    add_person(tie, f, f < 10 ? 3 : 2);
  }
  std::sort(tie.detections.begin(), tie.detections.end());
  segs = extract_two_person_segments(tie, params(5, 1));
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].track_ids == std::array<std::int64_t, 2>{1, 2});
  CHECK(segs[0].frames == FrameRange{10, 20});
}

TEST_CASE("an unsorted log is a precondition error") {
  auto log = pair_log(0, 9);
  std::swap(log.detections.front(), log.detections.back());
  CHECK(error_kind([&] { extract_two_person_segments(log); }) == ErrorKind::kPrecondition);
}

TEST_CASE("invalid parameters are configuration errors") {
  const auto log = pair_log(0, 9);
  CHECK(error_kind([&] { extract_two_person_segments(log, params(-1, 1)); }) == ErrorKind::kConfig);
  CHECK(error_kind([&] { extract_two_person_segments(log, params(0, 0)); }) == ErrorKind::kConfig);
  SegmentParams p;
  p.min_confidence = 1.5;
  CHECK(error_kind([&] { extract_two_person_segments(log, p); }) == ErrorKind::kConfig);
}

TEST_CASE("segments match the brute-force frame labeling on random logs") {
  std::mt19937_64 rng(20261015);
  const FrameIndex gaps[] = {0, 3, 12};
  for (int trial = 0; trial < 150; ++trial) {
    const auto log = testing::random_track_log(rng, 3000, 5);
    for (auto g : gaps) {
      for (FrameIndex min_len : {1, 25}) {
        const auto p = params(g, min_len);
        INFO("trial " << trial << " max_gap " << g << " min_len " << min_len);
        REQUIRE(extract_two_person_segments(log, p) == testing::oracle_segments(log, p));
      }
    }
  }
}

TEST_CASE("every output segment satisfies the structural invariants") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const auto log = testing::random_track_log(rng, 2000, 4);
    const auto p = params(4, 10);
    const auto segs = extract_two_person_segments(log, p);
    FrameIndex prev_end = -1;
    for (const auto& s : segs) {
      CHECK(s.frames.begin >= prev_end);
      CHECK(s.frames.length() >= p.min_len);
      CHECK(s.track_ids[0] < s.track_ids[1]);
      prev_end = s.frames.end;
      FrameIndex run = 0;
      for (FrameIndex f = s.frames.begin; f < s.frames.end; ++f) {
        const bool gap = std::binary_search(s.gap_frames.begin(), s.gap_frames.end(), f);
        run = gap ? run + 1 : 0;
        CHECK(run <= p.max_gap);
        if (gap) continue;
        std::set<std::int64_t> ids;
        for (const auto& d : log.detections) {
          if (d.frame_index == f && d.kind == DetectionKind::kPerson && d.confidence >= p.min_confidence) {
            ids.insert(d.track_id);
          }
        }
        CHECK(ids == std::set<std::int64_t>{s.track_ids[0], s.track_ids[1]});
      }
      CHECK(!std::binary_search(s.gap_frames.begin(), s.gap_frames.end(), s.frames.begin));
      CHECK(!std::binary_search(s.gap_frames.begin(), s.gap_frames.end(), s.frames.end - 1));
    }
  }
}

TrackLog single_pair_log(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TrackLog log;
  log.episode_id = "ep1";
  bool a = true;
  bool b = true;
  for (FrameIndex f = 0; f < 1500; ++f) {
    if (u(rng) < 0.05) a = !a;
    if (u(rng) < 0.05) b = !b;
    if (a) add_person(log, f, 1);
    if (b) add_person(log, f, 2);
    if (a && b && u(rng) < 0.05) add_person(log, f, 3);
  }
  std::sort(log.detections.begin(), log.detections.end());
  return log;
}

TEST_CASE("with one persistent pair a larger max_gap never adds segments") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const auto log = single_pair_log(rng);
    std::size_t prev = SIZE_MAX;
    std::set<FrameIndex> covered;
    for (FrameIndex g = 0; g <= 20; ++g) {
      const auto segs = extract_two_person_segments(log, params(g, 1));
      CHECK(segs.size() <= prev);
      prev = segs.size();
      const auto c = covered_frames(segs);
      if (g == 0) covered = c;
      CHECK(c == covered);
    }
  }
}

TEST_CASE("a smaller min_len never removes segments") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    const auto log = testing::random_track_log(rng, 2000, 5);
    std::size_t prev = 0;
    for (FrameIndex m = 200; m >= 1; m -= 7) {
      const auto n = extract_two_person_segments(log, params(3, m)).size();
      CHECK(n >= prev);
      prev = n;
    }
  }
}

TEST_CASE("sidecar text round-trips the segments") {
  std::mt19937_64 rng(3);
  const auto log = testing::random_track_log(rng, 3000, 3);
  auto segs = extract_two_person_segments(log, params(6, 5));
  segs.push_back(extract_two_person_segments(pair_log(0, 99, {50, 51}), params(5, 50))[0]);
  for (auto& s : segs) s.episode_id = "show_a_ep1";
  const auto parsed = parse_segment_sidecar(serialize_segment_sidecar(segs));
  CHECK(parsed == segs);
}

TEST_CASE("clip ids are zero padded and clip records carry durations") {
  CHECK(make_clip_id("ep9", {12, 3456}) == "ep9_000012_003456");
  EpisodeMeta ep;
  ep.episode_id = "ep1";
  ep.fps = 25;
  const auto segs = extract_two_person_segments(pair_log(0, 99), params(0, 1));
  const auto clips = to_clip_records(segs, ep, {}, SplitGrouping::kClip);
  REQUIRE(clips.size() == 1);
  CHECK(clips[0].clip_id == "ep1_000000_000100");
  CHECK(clips[0].episode_id == "ep1");
  CHECK(clips[0].duration_s == doctest::Approx(4.0));
  CHECK(clips[0].split == assign_split("ep1_000000_000100"));
  const auto by_episode = to_clip_records(segs, ep, {}, SplitGrouping::kEpisode);
  CHECK(by_episode[0].split == assign_split("ep1"));
}

}  // namespace
}  // namespace dyad
