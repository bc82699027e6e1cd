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

#include "dyadkit/cropper.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>

#include <json.hpp>

#include "dyadkit/error.hpp"
#include "dyadkit/robust_stats.hpp"
#include "dyadkit/textio.hpp"

namespace dyad {

using nlohmann::json;

std::string_view to_string(AreaRatioMode m) { return m == AreaRatioMode::kFaceBoxes ? "face_boxes" : "crop_windows"; }

AreaRatioMode parse_area_ratio_mode(std::string_view s) {
  if (s == "face_boxes") return AreaRatioMode::kFaceBoxes;
  if (s == "crop_windows") return AreaRatioMode::kCropWindows;
  fail(ErrorKind::kConfig, "area ratio mode must be face_boxes or crop_windows");
}

void PairParams::validate() const {
  if (guest_frames < 1 || host_frames < 1) fail(ErrorKind::kConfig, "window lengths must be >= 1");
  for (double c : {min_guest_coverage, min_host_coverage}) {
    if (!(c >= 0.0 && c <= 1.0)) fail(ErrorKind::kConfig, "coverage thresholds must lie in [0,1]");
  }
  if (!(max_area_ratio >= 1.0)) fail(ErrorKind::kConfig, "max_area_ratio must be >= 1");
  if (!(expand_factor > 0.0) || !std::isfinite(expand_factor)) {
    fail(ErrorKind::kConfig, "expand_factor must be positive");
  }
  if (!(down_shift >= 0.0 && down_shift <= 1.0)) fail(ErrorKind::kConfig, "down_shift must lie in [0,1]");
  if (!(iqr_k >= 0.0)) fail(ErrorKind::kConfig, "iqr_k must be >= 0");
}

std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::kGuestCoverage: return "guest_coverage";
    case RejectReason::kHostCoverage: return "host_coverage";
    case RejectReason::kAreaRatio: return "area_ratio";
  }
  return "unknown";
}

std::string FilterResult::reason_string() const {
  std::string out;
  for (auto r : reasons) {
    if (!out.empty()) out += ',';
    out += to_string(r);
  }
  return out;
}

BoxesByFrame role_boxes(const IdentityTrack& track, FrameRange window, bool host) {
  BoxesByFrame out;
  for (FrameIndex f = window.begin; f < window.end; ++f) {
    auto it = track.per_frame.find(f);
    auto& slot = out[f];
    if (it == track.per_frame.end()) continue;
    for (const auto& a : it->second) {
      if (a.role.is_host() == host) slot.push_back(a.bbox);
    }
  }
  return out;
}

std::map<FrameIndex, BBox> select_dominant_trajectory(const BoxesByFrame& boxes) {
  std::map<FrameIndex, BBox> out;
  std::optional<BBox> prev;
  for (const auto& [frame, cands] : boxes) {
    if (cands.empty()) continue;
    std::size_t best = 0;
    for (std::size_t i = 1; i < cands.size(); ++i) {
      if (!prev) {
        if (cands[i].area() > cands[best].area()) best = i;
        continue;
      }
      const double a = iou(cands[i], *prev);
      const double b = iou(cands[best], *prev);
      if (a > b || (a == b && cands[i].area() > cands[best].area())) best = i;
    }
    prev = cands[best];
    out.emplace(frame, cands[best]);
  }
  return out;
}

IqrResult iqr_inliers(std::span<const BBox> boxes, double k) {
  IqrResult out;
  if (boxes.size() < 4 || std::isinf(k)) {
    out.passthrough = boxes.size() < 4;
    for (std::size_t i = 0; i < boxes.size(); ++i) out.inliers.push_back(i);
    return out;
  }
  std::vector<bool> keep(boxes.size(), true);
  std::vector<double> series(boxes.size());
  for (int s = 0; s < 4; ++s) {
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const auto& b = boxes[i];
      series[i] = s == 0 ? b.center_x() : s == 1 ? b.center_y() : s == 2 ? b.w : b.h;
    }
    std::vector<double> sorted = series;
    std::sort(sorted.begin(), sorted.end());
    const double q1 = quantile_sorted(sorted, 0.25);
    const double q3 = quantile_sorted(sorted, 0.75);
    const double spread = q3 - q1;
    const double lo = spread == 0 ? q1 : q1 - k * spread;
    const double hi = spread == 0 ? q3 : q3 + k * spread;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (series[i] < lo || series[i] > hi) keep[i] = false;
    }
  }
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (keep[i]) out.inliers.push_back(i);
  }
  return out;
}

CropWindow build_crop_window(std::span<const BBox> boxes, FrameSize frame, double expand_factor, double down_shift) {
  if (boxes.empty()) fail(ErrorKind::kPrecondition, "build_crop_window needs at least one box");
  if (frame.width <= 0 || frame.height <= 0) fail(ErrorKind::kPrecondition, "frame size must be positive");
  double x0 = boxes[0].x;
  double y0 = boxes[0].y;
  double x1 = boxes[0].x + boxes[0].w;
  double y1 = boxes[0].y + boxes[0].h;
  for (const auto& b : boxes.subspan(1)) {
    x0 = std::min(x0, b.x);
    y0 = std::min(y0, b.y);
    x1 = std::max(x1, b.x + b.w);
    y1 = std::max(y1, b.y + b.h);
  }
  const double cx = 0.5 * (x0 + x1);
  const double sw = (x1 - x0) * expand_factor;
  const double sh = (y1 - y0) * expand_factor;
  const double cy = 0.5 * (y0 + y1) + down_shift * sh;

  const std::int64_t limit = std::min(frame.width, frame.height);
  auto side = static_cast<std::int64_t>(std::ceil(std::max(sw, sh) - 1e-6));
  side = std::clamp<std::int64_t>(side, 1, limit);
  const double half = 0.5 * static_cast<double>(side);
  auto x = static_cast<std::int64_t>(std::floor(cx - half + 0.5));
  auto y = static_cast<std::int64_t>(std::floor(cy - half + 0.5));
  x = std::clamp<std::int64_t>(x, 0, frame.width - side);
  y = std::clamp<std::int64_t>(y, 0, frame.height - side);
  return {x, y, side};
}

namespace {

std::vector<BBox> trajectory_boxes(const IdentityTrack& track, FrameRange window, bool host) {
  std::vector<BBox> out;
  for (const auto& [f, b] : select_dominant_trajectory(role_boxes(track, window, host))) out.push_back(b);
  return out;
}

double mean_area(std::span<const BBox> boxes) {
  if (boxes.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (const auto& b : boxes) s += b.area();
  return s / static_cast<double>(boxes.size());
}

std::size_t covered_frames(const IdentityTrack& track, FrameRange window, bool host) {
  std::size_t n = 0;
  for (const auto& [f, boxes] : role_boxes(track, window, host)) n += boxes.empty() ? 0 : 1;
  return n;
}

}  // namespace

std::optional<CropWindow> role_crop(const IdentityTrack& track, FrameRange window, bool host, FrameSize frame,
                                    const PairParams& params) {
  const auto boxes = trajectory_boxes(track, window, host);
  if (boxes.empty()) return std::nullopt;
  const auto iqr = iqr_inliers(boxes, params.iqr_k);
  std::vector<BBox> inliers;
  for (auto i : iqr.inliers) inliers.push_back(boxes[i]);
  if (inliers.empty()) inliers = boxes;
  return build_crop_window(inliers, frame, params.expand_factor, params.down_shift);
}

FilterResult filter_pair(const IdentityTrack& track, FrameIndex t1, FrameRange clip, FrameSize frame,
                         const PairParams& params) {
  params.validate();
  FilterResult r;
  r.guest_window = {t1 - params.guest_frames, t1};
  r.host_window = {t1, t1 + params.host_frames};
  if (r.guest_window.begin < clip.begin) {
    fail(ErrorKind::kPrecondition, "guest window [" + std::to_string(r.guest_window.begin) + "," +
                                       std::to_string(r.guest_window.end) + ") starts before clip start " +
                                       std::to_string(clip.begin));
  }
  if (r.host_window.end > clip.end) {
    fail(ErrorKind::kPrecondition, "host window [" + std::to_string(r.host_window.begin) + "," +
                                       std::to_string(r.host_window.end) + ") ends after clip end " +
                                       std::to_string(clip.end));
  }
  r.guest_coverage = static_cast<double>(covered_frames(track, r.guest_window, false)) /
                     static_cast<double>(params.guest_frames);
  r.host_coverage = static_cast<double>(covered_frames(track, r.host_window, true)) /
                    static_cast<double>(params.host_frames);

  if (params.area_mode == AreaRatioMode::kFaceBoxes) {
    r.area_ratio = mean_area(trajectory_boxes(track, r.host_window, true)) /
                   mean_area(trajectory_boxes(track, r.guest_window, false));
  } else {
    const auto hc = role_crop(track, r.host_window, true, frame, params);
    const auto gc = role_crop(track, r.guest_window, false, frame, params);
    r.area_ratio = hc && gc ? static_cast<double>(hc->area()) / static_cast<double>(gc->area())
                            : std::numeric_limits<double>::quiet_NaN();
  }

  if (r.guest_coverage < params.min_guest_coverage) r.reasons.push_back(RejectReason::kGuestCoverage);
  if (r.host_coverage < params.min_host_coverage) r.reasons.push_back(RejectReason::kHostCoverage);
  if (r.area_ratio > params.max_area_ratio) r.reasons.push_back(RejectReason::kAreaRatio);
  r.accepted = r.reasons.empty();
  return r;
}

std::vector<FrameIndex> InteractionPair::gap_frames() const {
  std::vector<FrameIndex> out;
  for (std::size_t i = 0; i < gap_mask.size(); ++i) {
    if (gap_mask[i]) out.push_back(guest_window.begin + static_cast<FrameIndex>(i));
  }
  return out;
}

std::string make_pair_id(std::string_view clip_id, FrameIndex t1) {
  return std::string(clip_id) + "_p" + std::to_string(t1);
}

PairOutcome derive_pair(const IdentityTrack& track, std::string_view episode_id, FrameIndex t1, FrameRange clip,
                        FrameSize frame, const PairParams& params) {
  PairOutcome out;
  out.filter = filter_pair(track, t1, clip, frame, params);
  if (!out.filter.accepted) return out;

  InteractionPair p;
  p.pair_id = make_pair_id(track.clip_id, t1);
  p.clip_id = track.clip_id;
  p.episode_id = std::string(episode_id);
  p.guest_window = out.filter.guest_window;
  p.host_window = out.filter.host_window;
  p.guest_coverage = out.filter.guest_coverage;
  p.host_coverage = out.filter.host_coverage;
  p.guest_crop = *role_crop(track, p.guest_window, false, frame, params);
  p.host_crop = *role_crop(track, p.host_window, true, frame, params);
  const auto guest = select_dominant_trajectory(role_boxes(track, p.guest_window, false));
  for (FrameIndex f = p.guest_window.begin; f < p.guest_window.end; ++f) p.gap_mask.push_back(!guest.contains(f));
  out.pair = std::move(p);
  return out;
}

namespace {

json crop_json(const CropWindow& c) { return {{"x", c.x}, {"y", c.y}, {"side", c.side}}; }

CropWindow crop_from(const json& j) {
  return {j.at("x").get<std::int64_t>(), j.at("y").get<std::int64_t>(), j.at("side").get<std::int64_t>()};
}

json range_json(const FrameRange& r) { return json::array({r.begin, r.end}); }

FrameRange range_from(const json& j) { return {j.at(0).get<FrameIndex>(), j.at(1).get<FrameIndex>()}; }

template <typename Fn>
auto parse_json_record(std::string_view line, std::string_view what, Fn&& fn) {
  try {
    return fn(json::parse(line));
  } catch (const json::exception& e) {
    fail(ErrorKind::kValidation, std::string(what) + ": " + e.what());
  }
}

}  // namespace

std::string pair_to_json(const InteractionPair& p) {
  json j;
  j["pair_id"] = p.pair_id;
  j["clip_id"] = p.clip_id;
  j["episode_id"] = p.episode_id;
  j["guest_window"] = range_json(p.guest_window);
  j["host_window"] = range_json(p.host_window);
  j["guest_crop"] = crop_json(p.guest_crop);
  j["host_crop"] = crop_json(p.host_crop);
  j["guest_coverage"] = p.guest_coverage;
  j["host_coverage"] = p.host_coverage;
  j["gap_frames"] = p.gap_frames();
  return j.dump();
}

InteractionPair pair_from_json(std::string_view line) {
  return parse_json_record(line, "interaction pair", [](const json& j) {
    InteractionPair p;
    p.pair_id = j.at("pair_id").get<std::string>();
    p.clip_id = j.at("clip_id").get<std::string>();
    p.episode_id = j.at("episode_id").get<std::string>();
    p.guest_window = range_from(j.at("guest_window"));
    p.host_window = range_from(j.at("host_window"));
    p.guest_crop = crop_from(j.at("guest_crop"));
    p.host_crop = crop_from(j.at("host_crop"));
    p.guest_coverage = j.at("guest_coverage").get<double>();
    p.host_coverage = j.at("host_coverage").get<double>();
    p.gap_mask.assign(static_cast<std::size_t>(p.guest_window.length()), false);
    for (auto f : j.at("gap_frames").get<std::vector<FrameIndex>>()) {
      if (!p.guest_window.contains(f)) fail(ErrorKind::kValidation, p.pair_id + ": gap frame outside guest window");
      p.gap_mask[static_cast<std::size_t>(f - p.guest_window.begin)] = true;
    }
    return p;
  });
}

RenderPlan plan_render(const InteractionPair& pair, const EpisodeMeta& episode, const RenderSpec& spec) {
  RenderPlan plan;
  plan.pair_id = pair.pair_id;
  plan.episode_id = episode.episode_id;
  plan.spec = spec;
  auto& guest = plan.outputs[0];
  guest.role = "guest";
  guest.output_name = pair.pair_id + "_guest.mp4";
  guest.source_uri = episode.source_uri;
  guest.source_fps = episode.fps;
  guest.frames = pair.guest_window;
  guest.crop = pair.guest_crop;
  guest.blackout_frames = pair.gap_frames();
  auto& host = plan.outputs[1];
  host.role = "host";
  host.output_name = pair.pair_id + "_host.mp4";
  host.source_uri = episode.source_uri;
  host.source_fps = episode.fps;
  host.frames = pair.host_window;
  host.crop = pair.host_crop;
  return plan;
}

std::string render_plan_to_json(const RenderPlan& plan) {
  json j;
  j["pair_id"] = plan.pair_id;
  j["episode_id"] = plan.episode_id;
  j["spec"] = {{"fps", plan.spec.fps},
               {"video_codec", plan.spec.video_codec},
               {"encoder", plan.spec.encoder},
               {"crf", plan.spec.crf},
               {"audio_rate_hz", plan.spec.audio_rate_hz},
               {"audio_channels", plan.spec.audio_channels},
               {"audio_codec", plan.spec.audio_codec}};
  j["outputs"] = json::array();
  for (const auto& o : plan.outputs) {
    j["outputs"].push_back({{"role", o.role},
                            {"output_name", o.output_name},
                            {"source_uri", o.source_uri},
                            {"source_fps", o.source_fps},
                            {"frames", range_json(o.frames)},
                            {"crop", crop_json(o.crop)},
                            {"blackout_frames", o.blackout_frames}});
  }
  return j.dump();
}

RenderPlan render_plan_from_json(std::string_view line) {
  return parse_json_record(line, "render plan", [](const json& j) {
    RenderPlan p;
    p.pair_id = j.at("pair_id").get<std::string>();
    p.episode_id = j.at("episode_id").get<std::string>();
    const auto& s = j.at("spec");
    p.spec.fps = s.at("fps").get<double>();
    p.spec.video_codec = s.at("video_codec").get<std::string>();
    p.spec.encoder = s.at("encoder").get<std::string>();
    p.spec.crf = s.at("crf").get<int>();
    p.spec.audio_rate_hz = s.at("audio_rate_hz").get<int>();
    p.spec.audio_channels = s.at("audio_channels").get<int>();
    p.spec.audio_codec = s.at("audio_codec").get<std::string>();
    const auto& outs = j.at("outputs");
    if (outs.size() != 2) fail(ErrorKind::kValidation, p.pair_id + ": render plan needs two outputs");
    for (std::size_t i = 0; i < 2; ++i) {
      const auto& o = outs.at(i);
      auto& r = p.outputs[i];
      r.role = o.at("role").get<std::string>();
      r.output_name = o.at("output_name").get<std::string>();
      r.source_uri = o.at("source_uri").get<std::string>();
      r.source_fps = o.at("source_fps").get<double>();
      r.frames = range_from(o.at("frames"));
      r.crop = crop_from(o.at("crop"));
      r.blackout_frames = o.at("blackout_frames").get<std::vector<FrameIndex>>();
    }
    return p;
  });
}

std::vector<std::string> encoder_command(const RenderOutput& out, const RenderSpec& spec,
                                         const std::filesystem::path& output_dir) {
  const double start_s = static_cast<double>(out.frames.begin) / out.source_fps;
  const double dur_s = static_cast<double>(out.frames.length()) / out.source_fps;
  std::string vf = "crop=" + std::to_string(out.crop.side) + ":" + std::to_string(out.crop.side) + ":" +
                   std::to_string(out.crop.x) + ":" + std::to_string(out.crop.y) + ",fps=" + format_double(spec.fps);

  // Blackout runs in output frame numbers.
  auto to_output = [&](FrameIndex f) {
    return static_cast<std::int64_t>(
        std::floor(static_cast<double>(f - out.frames.begin) * spec.fps / out.source_fps + 1e-9));
  };
  std::size_t i = 0;
  const auto& bo = out.blackout_frames;
  while (i < bo.size()) {
    std::size_t j = i;
    while (j + 1 < bo.size() && bo[j + 1] == bo[j] + 1) ++j;
    vf += ",drawbox=x=0:y=0:w=iw:h=ih:color=black:t=fill:enable='between(n," + std::to_string(to_output(bo[i])) +
          "," + std::to_string(to_output(bo[j])) + ")'";
    i = j + 1;
  }
  return {"ffmpeg", "-nostdin", "-y",
          "-ss", format_double(start_s),
          "-t", format_double(dur_s),
          "-i", out.source_uri,
          "-vf", vf,
          "-c:v", spec.encoder,
          "-crf", std::to_string(spec.crf),
          "-pix_fmt", "yuv420p",
          "-c:a", spec.audio_codec,
          "-ar", std::to_string(spec.audio_rate_hz),
          "-ac", std::to_string(spec.audio_channels),
          (output_dir / out.output_name).string()};
}

std::string shell_join(std::span<const std::string> argv) {
  std::string out;
  for (const auto& a : argv) {
    if (!out.empty()) out += ' ';
    out += '\'';
    for (char c : a) {
      if (c == '\'') {
        out += "'\\''";
      } else {
        out += c;
      }
    }
    out += '\'';
  }
  return out;
}

ExecutionReport execute_render_plans(std::span<const RenderPlan> plans, const std::filesystem::path& output_dir,
                                     int workers) {
  std::vector<std::string> commands;
  for (const auto& p : plans) {
    for (const auto& o : p.outputs) commands.push_back(shell_join(encoder_command(o, p.spec, output_dir)));
  }
  std::filesystem::create_directories(output_dir);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> failed{0};
  std::vector<std::jthread> pool;
  const auto n = static_cast<std::size_t>(std::max(1, workers));
  for (std::size_t w = 0; w < std::min(n, commands.size()); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < commands.size(); i = next++) {
        if (std::system(commands[i].c_str()) != 0) ++failed;
      }
    });
  }
  pool.clear();
  return {commands.size(), failed.load()};
}

}  // namespace dyad
