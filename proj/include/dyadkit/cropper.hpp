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

#ifndef DYADKIT_CROPPER_HPP_
#define DYADKIT_CROPPER_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dyadkit/datamodel.hpp"
#include "dyadkit/hostid.hpp"

namespace dyad {

/// Square crop in integer pixels, always inside the frame.
struct CropWindow {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t side = 0;

  std::int64_t area() const { return side * side; }
  friend bool operator==(const CropWindow&, const CropWindow&) = default;
};

enum class AreaRatioMode { kFaceBoxes, kCropWindows };

std::string_view to_string(AreaRatioMode m);
AreaRatioMode parse_area_ratio_mode(std::string_view s);

struct PairParams {
  FrameIndex guest_frames = 64;
  FrameIndex host_frames = 81;
  double min_guest_coverage = 0.70;
  double min_host_coverage = 0.85;
  double max_area_ratio = 10.0;
  AreaRatioMode area_mode = AreaRatioMode::kFaceBoxes;
  double expand_factor = 1.3;
  double down_shift = 0.2;
  double iqr_k = 1.5;

  void validate() const;
};

enum class RejectReason { kGuestCoverage, kHostCoverage, kAreaRatio };

std::string_view to_string(RejectReason r);

struct FilterResult {
  bool accepted = false;
  std::vector<RejectReason> reasons;
  FrameRange guest_window;
  FrameRange host_window;
  double guest_coverage = 0;
  double host_coverage = 0;
  double area_ratio = 0;  // NaN when no guest face was seen

  std::string reason_string() const;  // comma separated, "" when accepted
};

struct FrameSize {
  int width = 0;
  int height = 0;
};

/// Coverage of guest faces over [t1 - guest_frames, t1) and host faces over
/// [t1, t1 + host_frames), plus the host/guest area ratio. Rejects when guest
/// coverage < 0.70, host coverage < 0.85 or ratio > 10 (defaults); every
/// failing criterion is listed. Throws a precondition error when a window
/// leaves `clip`.
FilterResult filter_pair(const IdentityTrack& track, FrameIndex t1, FrameRange clip, FrameSize frame,
                         const PairParams& params = {});

using BoxesByFrame = std::map<FrameIndex, std::vector<BBox>>;

/// Boxes of one role inside `window`; any guest index counts as guest.
BoxesByFrame role_boxes(const IdentityTrack& track, FrameRange window, bool host);

/// First non-empty frame takes its largest box; afterwards multi-box frames
/// take the box with the highest IoU against the previous pick (ties: larger
/// box, then earlier in the list). Empty frames are absent from the result.
std::map<FrameIndex, BBox> select_dominant_trajectory(const BoxesByFrame& boxes);

struct IqrResult {
  std::vector<std::size_t> inliers;  // ascending indices into the input
  bool passthrough = false;          // fewer than 4 boxes; nothing filtered
};

/// Tukey fences on centre x, centre y, width and height with type-7
/// quartiles; a box survives only if all four values are inside
/// [Q1 - k*IQR, Q3 + k*IQR].
IqrResult iqr_inliers(std::span<const BBox> boxes, double k = 1.5);

/// Union of `boxes`, scaled by expand_factor about its centre, moved down by
/// down_shift times the scaled height, squared to the larger side, then
/// rounded (side up, corner to nearest) and clamped into the frame.
CropWindow build_crop_window(std::span<const BBox> boxes, FrameSize frame, double expand_factor = 1.3,
                             double down_shift = 0.2);

struct InteractionPair {
  std::string pair_id;
  std::string clip_id;
  std::string episode_id;
  FrameRange guest_window;
  FrameRange host_window;
  CropWindow guest_crop;
  CropWindow host_crop;
  double guest_coverage = 0;
  double host_coverage = 0;
  std::vector<bool> gap_mask;  // per guest frame, true when no guest face

  std::vector<FrameIndex> gap_frames() const;
  PairRef ref() const { return {pair_id, clip_id, guest_window.begin, guest_window.end, host_window.end}; }
  friend bool operator==(const InteractionPair&, const InteractionPair&) = default;
};

std::string make_pair_id(std::string_view clip_id, FrameIndex t1);

/// Robust crop for one role over `window` (dominant trajectory, IQR, crop).
std::optional<CropWindow> role_crop(const IdentityTrack& track, FrameRange window, bool host, FrameSize frame,
                                    const PairParams& params);

struct PairOutcome {
  FilterResult filter;
  std::optional<InteractionPair> pair;
};

PairOutcome derive_pair(const IdentityTrack& track, std::string_view episode_id, FrameIndex t1, FrameRange clip,
                        FrameSize frame, const PairParams& params = {});

std::string pair_to_json(const InteractionPair& pair);
InteractionPair pair_from_json(std::string_view line);

struct RenderSpec {
  double fps = 25.0;
  std::string video_codec = "h264";
  std::string encoder = "libx264";
  int crf = 18;
  int audio_rate_hz = 16000;
  int audio_channels = 1;
  std::string audio_codec = "aac";

  friend bool operator==(const RenderSpec&, const RenderSpec&) = default;
};

struct RenderOutput {
  std::string role;  // "guest" or "host"
  std::string output_name;
  std::string source_uri;
  double source_fps = 25.0;
  FrameRange frames;
  CropWindow crop;
  std::vector<FrameIndex> blackout_frames;

  friend bool operator==(const RenderOutput&, const RenderOutput&) = default;
};

struct RenderPlan {
  std::string pair_id;
  std::string episode_id;
  RenderSpec spec;
  std::array<RenderOutput, 2> outputs;  // guest, then host

  friend bool operator==(const RenderPlan&, const RenderPlan&) = default;
};

RenderPlan plan_render(const InteractionPair& pair, const EpisodeMeta& episode, const RenderSpec& spec = {});

std::string render_plan_to_json(const RenderPlan& plan);
RenderPlan render_plan_from_json(std::string_view line);

/// ffmpeg argv for one output: seek to the window, crop, resample to the
/// plan fps, black out listed frames with drawbox, encode video and audio.
std::vector<std::string> encoder_command(const RenderOutput& out, const RenderSpec& spec,
                                         const std::filesystem::path& output_dir);

std::string shell_join(std::span<const std::string> argv);

struct ExecutionReport {
  std::size_t launched = 0;
  std::size_t failed = 0;
};

/// Runs every encoder command through the shell, at most `workers` at a time.
ExecutionReport execute_render_plans(std::span<const RenderPlan> plans, const std::filesystem::path& output_dir,
                                     int workers);

}  // namespace dyad

#endif  // DYADKIT_CROPPER_HPP_
