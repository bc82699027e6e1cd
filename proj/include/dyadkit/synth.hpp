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

#ifndef DYADKIT_SYNTH_HPP_
#define DYADKIT_SYNTH_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dyadkit/datamodel.hpp"

namespace dyad {

/// Synthetic interview corpus with known ground truth. Each episode has a
/// host (person track 1, face track 101) and a guest (person track 2, face
/// track 102). A third person walks in at mid-episode and the guest leaves
/// for the last 50 frames, so a full-length episode yields two clips.
/// Episodes after the first also open with a host-only monologue of random
/// length.
struct SynthOptions {
  int episodes = 1;
  FrameIndex frames = 3000;
  double fps = 25.0;
  int width = 1920;
  int height = 1080;
  std::size_t speaker_dim = 16;
  std::size_t face_dim = 32;
  std::uint64_t seed = 7;
  /// When false only episodes and tracking logs carry content; diarization,
  /// embeddings and labels are written empty.
  bool with_identity = true;
};

struct SynthClipTruth {
  std::string clip_id;
  std::string episode_id;
  FrameRange frames;
  std::vector<FrameIndex> host_onsets;        // absolute frames of host turns
  std::vector<FrameIndex> low_coverage_onsets;  // guest face hidden for 30 frames
};

struct SynthTruth {
  std::vector<EpisodeMeta> episodes;
  std::vector<SynthClipTruth> clips;
  std::size_t detections = 0;
  std::size_t diarization_segments = 0;
  double diarization_seconds = 0;
  double episode_seconds = 0;
  double clip_seconds = 0;
};

/// Writes episodes.txt, tracks/, diarization.txt, speaker.emb, face.emb,
/// audio_labels.txt, pseudo_labels.txt, face_labels.txt, truth.json and
/// config.yaml into `dir`. Output is a pure function of `options`.
SynthTruth write_synthetic_corpus(const std::filesystem::path& dir, const SynthOptions& options = {});

}  // namespace dyad

#endif  // DYADKIT_SYNTH_HPP_
