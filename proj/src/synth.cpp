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

#include "dyadkit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <json.hpp>

#include "dyadkit/error.hpp"
#include "dyadkit/hash.hpp"
#include "dyadkit/hostid.hpp"
#include "dyadkit/ingest.hpp"
#include "dyadkit/segmenter.hpp"
#include "dyadkit/textio.hpp"

namespace dyad {
namespace fs = std::filesystem;

namespace {

constexpr std::int64_t kHostPerson = 1;
constexpr std::int64_t kGuestPerson = 2;
constexpr std::int64_t kIntruderPerson = 3;
constexpr std::int64_t kFaintPerson = 9;
constexpr std::int64_t kHostFace = 101;
constexpr std::int64_t kGuestFace = 102;
constexpr std::int64_t kBackgroundFace = 103;
constexpr double kSpeakerNoise = 0.05;
constexpr double kFaceNoise = 0.04;

/// Rounds to a multiple of 1/scale.
double round_to(double v, double scale) { return std::round(v * scale) / scale; }

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double sigma) { return std::normal_distribution<double>(0.0, sigma)(engine_); }

  std::vector<double> unit(std::size_t dim) {
    std::vector<double> v(dim);
    for (auto& x : v) x = normal(1.0);
    return l2_normalized(v);
  }

  /// Random unit vector with zero cosine to `away`.
  std::vector<double> unit_orthogonal(const std::vector<double>& away) {
    auto v = unit(away.size());
    const double d = dot(v, away);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * away[i];
    return l2_normalized(v);
  }

  /// Noisy unit sample around `center`, rounded to six decimals.
  std::vector<double> sample(const std::vector<double>& center, double sigma) {
    std::vector<double> v(center.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = center[i] + normal(sigma);
    v = l2_normalized(v);
    for (auto& x : v) x = round_to(x, 1e6);
    return l2_normalized(v);
  }

 private:
  std::mt19937_64 engine_;
};

BBox jittered(Rng& rng, double x, double y, double w, double h) {
  return {round_to(x + rng.uniform(-3, 3), 10), round_to(y + rng.uniform(-3, 3), 10), w, h};
}

std::string id3(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

struct Layout {
  FrameIndex pre = 0;          // host-only monologue [0, pre)
  FrameIndex tail = 0;         // guest gone from `tail` on
  FrameIndex intrusion = -1;   // third person on [intrusion, intrusion + 40)
  FrameIndex dropout = -1;     // guest person missing on [dropout, dropout + 5)
  std::vector<FrameRange> clips;
};

Layout plan_layout(Rng& rng, int episode, FrameIndex n, FrameIndex min_len) {
  Layout l;
  l.pre = episode == 0 ? 0 : static_cast<FrameIndex>(std::floor(rng.uniform(0.0, 0.4) * static_cast<double>(n)));
  l.tail = n >= 200 ? n - 50 : n;
  const FrameIndex body = l.tail - l.pre;
  if (body >= 400) l.intrusion = l.pre + body / 2;
  if (body >= 200) l.dropout = l.pre + body / 4;
  std::vector<FrameRange> runs;
  if (l.intrusion >= 0) {
    runs = {{l.pre, l.intrusion}, {l.intrusion + 40, l.tail}};
  } else {
    runs = {{l.pre, l.tail}};
  }
  for (const auto& r : runs) {
    if (r.length() >= min_len) l.clips.push_back(r);
  }
  return l;
}

struct Turn {
  double guest_start = 0;
  double host_start = 0;
  double host_end = 0;
};

std::vector<Turn> plan_turns(Rng& rng, double clip_s) {
  std::vector<Turn> turns;
  double t = 0;
  for (;;) {
    const double g = round_to(rng.uniform(3.0, 4.5), 100);
    const double h = round_to(rng.uniform(3.5, 5.0), 100);
    if (t + g + h > clip_s - 0.1) break;
    const double onset = round_to(t + g, 100);
    const double end = round_to(onset + h, 100);
    turns.push_back({t, onset, end});
    t = end;
  }
  return turns;
}

std::string config_yaml(const SynthOptions& o) {
  return "# Synthetic corpus configuration. Paths are relative to this file.\n"
         "inputs:\n"
         "  episodes: episodes.txt\n"
         "  tracking_logs: tracks\n"
         "  diarization: diarization.txt\n"
         "  speaker_embeddings: speaker.emb\n"
         "  face_embeddings: face.emb\n"
         "  audio_labels: audio_labels.txt\n"
         "  face_labels: face_labels.txt\n"
         "  pseudo_labels: pseudo_labels.txt\n"
         "  media_root: media\n"
         "output_dir: out\n"
         "workers: 2\n"
         "ingest:\n"
         "  max_bad_fraction: 0.05\n"
         "segment:\n"
         "  max_gap: 12\n"
         "  min_len_s: 2.0\n"
         "  min_confidence: 0.5\n"
         "split:\n"
         "  train: 0.8\n"
         "  val: 0.1\n"
         "  test: 0.1\n"
         "  by: clip\n"
         "audio:\n"
         "  tail: 0.01\n"
         "  merge_gap_s: 0.5\n"
         "  labels: file\n"
         "face:\n"
         "  n_boot: 200\n"
         "  tau: null\n"
         "  theta_new: 0.45\n"
         "  vote_fraction: 0.5\n"
         "  voting: per_track\n"
         "  seed: " + std::to_string(o.seed) + "\n"
         "  labels: file\n"
         "pairs:\n"
         "  guest_frames: 64\n"
         "  host_frames: 81\n"
         "  min_guest_coverage: 0.70\n"
         "  min_host_coverage: 0.85\n"
         "  max_area_ratio: 10\n"
         "  area_mode: face_boxes\n"
         "  expand_factor: 1.3\n"
         "  down_shift: 0.2\n"
         "  iqr_k: 1.5\n"
         "render:\n"
         "  fps: 25\n"
         "  crf: 18\n"
         "  audio_rate_hz: 16000\n"
         "  audio_channels: 1\n"
         "  execute: false\n"
         "annotation:\n"
         "  speech_fraction: 0.10\n"
         "  face_fraction: 0.10\n"
         "  lease_s: 120\n"
         "  bind: 127.0.0.1\n"
         "  port: 8080\n";
}

/// Embedding table text with six decimals per value; ingest renormalizes.
std::string serialize_rounded(const EmbeddingTable& table) {
  std::string out = std::to_string(table.dim()) + '\n';
  for (const auto& [id, v] : table.entries()) {
    out += id;
    for (double x : v) out += ' ' + format_double(round_to(x, 1e6));
    out += '\n';
  }
  return out;
}

}  // namespace

SynthTruth write_synthetic_corpus(const fs::path& dir, const SynthOptions& o) {
  if (o.episodes < 1 || o.frames < 1 || !(o.fps > 0) || o.width < 1 || o.height < 1 || o.speaker_dim < 2 ||
      o.face_dim < 2) {
    fail(ErrorKind::kConfig, "synthetic corpus options out of range");
  }
  fs::create_directories(dir / "tracks");
  fs::create_directories(dir / "media");
  Rng global(mix64(o.seed));
  const auto host_voice = global.unit(o.speaker_dim);
  const auto host_face = global.unit(o.face_dim);
  const FrameIndex min_len = static_cast<FrameIndex>(std::ceil(2.0 * o.fps - 1e-9));

  SynthTruth truth;
  std::vector<DiarSegment> diarization;
  EmbeddingTable speaker(o.speaker_dim);
  EmbeddingTable faces(o.face_dim);

  for (int e = 0; e < o.episodes; ++e) {
    Rng rng(mix64(o.seed ^ mix64(static_cast<std::uint64_t>(e) + 1)));
    EpisodeMeta ep;
    ep.episode_id = "ep" + id3(static_cast<std::size_t>(e));
    ep.source_uri = ep.episode_id + ".mp4";
    ep.fps = o.fps;
    ep.frame_count = o.frames;
    ep.width = o.width;
    ep.height = o.height;
    ep.duration_s = static_cast<double>(o.frames) / o.fps;
    truth.episodes.push_back(ep);
    truth.episode_seconds += ep.duration_s;

    const Layout layout = plan_layout(rng, e, o.frames, min_len);
    const auto guest_voice = rng.unit_orthogonal(host_voice);
    const auto guest_face = rng.unit_orthogonal(host_face);
    const auto background_face = rng.unit_orthogonal(host_face);

    // Diarization turns and the guest-face blackouts they imply.
    std::vector<FrameRange> blackouts;
    for (std::size_t c = 0; c < layout.clips.size() && o.with_identity; ++c) {
      const FrameRange r = layout.clips[c];
      SynthClipTruth ct{make_clip_id(ep.episode_id, r), ep.episode_id, r, {}, {}};
      const auto turns = plan_turns(rng, static_cast<double>(r.length()) / o.fps);
      for (std::size_t k = 0; k < turns.size(); ++k) {
        const Turn& t = turns[k];
        const std::string base = ct.clip_id + ":" + std::to_string(k);
        const double mid = round_to((t.host_start + t.host_end) / 2, 100);
        diarization.push_back({ct.clip_id, "SPEAKER_00", t.guest_start, t.host_start, base + "g"});
        diarization.push_back({ct.clip_id, "SPEAKER_01", t.host_start, round_to(mid - 0.15, 100), base + "ha"});
        diarization.push_back({ct.clip_id, "SPEAKER_01", round_to(mid + 0.15, 100), t.host_end, base + "hb"});
        diarization.push_back(
            {ct.clip_id, "SPEAKER_00", round_to(t.host_start + 1.0, 100), round_to(t.host_start + 1.5, 100),
             base + "b"});
        speaker.insert(base + "g", rng.sample(guest_voice, kSpeakerNoise));
        speaker.insert(base + "ha", rng.sample(host_voice, kSpeakerNoise));
        speaker.insert(base + "hb", rng.sample(host_voice, kSpeakerNoise));
        speaker.insert(base + "b", rng.sample(guest_voice, kSpeakerNoise));

        const FrameIndex t1 = r.begin + static_cast<FrameIndex>(std::floor(t.host_start * o.fps + 1e-9));
        ct.host_onsets.push_back(t1);
        if (k == 0) blackouts.push_back({t1 - 12, t1 - 6});
        if (k == 1 && c == 0) {
          blackouts.push_back({t1 - 40, t1 - 10});
          ct.low_coverage_onsets.push_back(t1);
        }
      }
      truth.clip_seconds += static_cast<double>(r.length()) / o.fps;
      truth.clips.push_back(std::move(ct));
    }
    if (!o.with_identity) {
      for (const auto& r : layout.clips) {
        truth.clips.push_back({make_clip_id(ep.episode_id, r), ep.episode_id, r, {}, {}});
        truth.clip_seconds += static_cast<double>(r.length()) / o.fps;
      }
    }

    auto in = [](FrameIndex f, FrameIndex b, FrameIndex len) { return b >= 0 && f >= b && f < b + len; };
    auto blacked_out = [&](FrameIndex f) {
      return std::any_of(blackouts.begin(), blackouts.end(), [&](const FrameRange& b) { return b.contains(f); });
    };
    const FrameIndex body = layout.tail - layout.pre;
    const FrameIndex background_start = layout.pre + body / 10;

    TrackLog log;
    log.episode_id = ep.episode_id;
    for (FrameIndex f = 0; f < o.frames; ++f) {
      const bool guest_here = f >= layout.pre && f < layout.tail && !in(f, layout.dropout, 5);
      log.detections.push_back({f, kHostPerson, DetectionKind::kPerson, jittered(rng, 1100, 150, 500, 900), 0.93});
      if (guest_here) {
        log.detections.push_back({f, kGuestPerson, DetectionKind::kPerson, jittered(rng, 300, 170, 480, 880), 0.91});
      }
      if (in(f, layout.intrusion, 40)) {
        log.detections.push_back(
            {f, kIntruderPerson, DetectionKind::kPerson, jittered(rng, 820, 200, 300, 800), 0.88});
      }
      if (f % 97 == 50) {
        log.detections.push_back({f, kFaintPerson, DetectionKind::kPerson, jittered(rng, 1500, 300, 120, 300), 0.3});
      }
      if (!o.with_identity) continue;
      log.detections.push_back({f, kHostFace, DetectionKind::kFace, jittered(rng, 1270, 230, 150, 150), 0.97});
      faces.insert(face_embedding_id(ep.episode_id, f, kHostFace), rng.sample(host_face, kFaceNoise));
      if (guest_here && !blacked_out(f)) {
        log.detections.push_back({f, kGuestFace, DetectionKind::kFace, jittered(rng, 460, 260, 140, 140), 0.95});
        faces.insert(face_embedding_id(ep.episode_id, f, kGuestFace), rng.sample(guest_face, kFaceNoise));
      }
      if (in(f, background_start, 30)) {
        log.detections.push_back({f, kBackgroundFace, DetectionKind::kFace, jittered(rng, 1750, 80, 40, 40), 0.6});
        if (f >= background_start + 2) {
          faces.insert(face_embedding_id(ep.episode_id, f, kBackgroundFace), rng.sample(background_face, kFaceNoise));
        }
      }
    }
    std::sort(log.detections.begin(), log.detections.end());
    truth.detections += log.detections.size();
    std::string text = serialize_tracking_log(log);
    if (e == 0) text += ep.episode_id + " 10 5 person 1 1 0 0 0.9\n";
    write_file_atomic(dir / "tracks" / (ep.episode_id + ".txt"), text);
  }

  // Labeled calibration material.
  std::string audio_labels = "# embedding_id verdict\n";
  std::string pseudo_labels = "# embedding_id verdict\n";
  std::string face_labels = "# embedding_id verdict\n";
  if (o.with_identity) {
    Rng rng(mix64(o.seed ^ 0xca1b));
    for (std::size_t i = 0; i < 60; ++i) {
      speaker.insert("cal/host/" + id3(i), rng.sample(host_voice, kSpeakerNoise));
      audio_labels += "cal/host/" + id3(i) + " positive\n";
      speaker.insert("cal/guest/" + id3(i), rng.sample(rng.unit_orthogonal(host_voice), kSpeakerNoise));
      audio_labels += "cal/guest/" + id3(i) + " negative\n";
    }
    audio_labels += "cal/guest/000 unsure\ncal/guest/000 negative\n";
    for (std::size_t i = 0; i < 200; ++i) {
      speaker.insert("pseudo/host/" + id3(i), rng.sample(host_voice, kSpeakerNoise));
      pseudo_labels += "pseudo/host/" + id3(i) + " positive\n";
      speaker.insert("pseudo/guest/" + id3(i), rng.sample(rng.unit_orthogonal(host_voice), kSpeakerNoise));
      pseudo_labels += "pseudo/guest/" + id3(i) + " negative\n";
    }
    for (std::size_t i = 0; i < 24; ++i) {
      faces.insert("fcal/host/" + id3(i), rng.sample(host_face, kFaceNoise));
      face_labels += "fcal/host/" + id3(i) + " positive\n";
      faces.insert("fcal/other/" + id3(i), rng.sample(rng.unit_orthogonal(host_face), kFaceNoise));
      face_labels += "fcal/other/" + id3(i) + " negative\n";
    }
  }

  truth.diarization_segments = diarization.size();
  for (const auto& d : diarization) truth.diarization_seconds += d.end_s - d.start_s;

  write_file_atomic(dir / "episodes.txt", serialize_episodes(truth.episodes));
  write_file_atomic(dir / "diarization.txt", serialize_diarization(diarization));
  write_file_atomic(dir / "speaker.emb", serialize_rounded(speaker));
  write_file_atomic(dir / "face.emb", serialize_rounded(faces));
  write_file_atomic(dir / "audio_labels.txt", audio_labels);
  write_file_atomic(dir / "pseudo_labels.txt", pseudo_labels);
  write_file_atomic(dir / "face_labels.txt", face_labels);
  write_file_atomic(dir / "config.yaml", config_yaml(o));

  nlohmann::json clips = nlohmann::json::array();
  for (const auto& c : truth.clips) {
    clips.push_back({{"clip_id", c.clip_id},
                     {"episode_id", c.episode_id},
                     {"start_frame", c.frames.begin},
                     {"end_frame", c.frames.end},
                     {"host_onsets", c.host_onsets},
                     {"low_coverage_onsets", c.low_coverage_onsets}});
  }
  nlohmann::json j = {{"episodes", truth.episodes.size()},
                      {"detections", truth.detections},
                      {"diarization_segments", truth.diarization_segments},
                      {"episode_seconds", truth.episode_seconds},
                      {"clip_seconds", truth.clip_seconds},
                      {"clips", clips}};
  write_file_atomic(dir / "truth.json", j.dump(2) + "\n");
  return truth;
}

}  // namespace dyad
