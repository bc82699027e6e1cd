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

#ifndef DYADKIT_HOSTID_HPP_
#define DYADKIT_HOSTID_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dyadkit/datamodel.hpp"
#include "dyadkit/ingest.hpp"
#include "dyadkit/robust_stats.hpp"

namespace dyad {

// ---------------------------------------------------------------------------
// Audio: host speaker model
// ---------------------------------------------------------------------------

/// Diagonal Gaussian over unit speaker embeddings with a squared-Mahalanobis
/// acceptance threshold.
struct HostModel {
  static constexpr double kVarianceFloor = 1e-6;

  std::vector<double> mean;
  std::vector<double> var;
  double threshold = 0;

  std::size_t dim() const { return mean.size(); }
  double squared_distance(std::span<const double> x) const;
  /// Boundary inclusive: distance == threshold is host.
  bool accepts(std::span<const double> x) const { return squared_distance(x) <= threshold; }

  void validate() const;
  friend bool operator==(const HostModel&, const HostModel&) = default;
};

/// Needs at least 10 positives and tail in (0, 0.5). The threshold is the
/// type-7 (1 - tail) quantile of the positives' own squared distances.
HostModel fit_host_gaussian(std::span<const std::vector<double>> positives, double tail = 0.01);

std::string serialize_host_model(const HostModel& model);
HostModel parse_host_model(std::string_view text);

struct SpeakerVerdict {
  bool is_host = false;
  double score = 0;  // squared Mahalanobis distance

  friend bool operator==(const SpeakerVerdict&, const SpeakerVerdict&) = default;
};

SpeakerVerdict classify_speaker(const HostModel& model, const DiarSegment& segment, const EmbeddingTable& embeddings);

struct SpeakerDecision {
  DiarSegment segment;
  SpeakerVerdict verdict;
};

/// Host speech on the video timeline. `frames` is in episode frame indices.
struct HostInterval {
  std::string clip_id;
  double start_s = 0;  // clip-relative
  double end_s = 0;
  FrameRange frames;

  friend bool operator==(const HostInterval&, const HostInterval&) = default;
};

/// Unions host-positive segments of one clip whose separation is at most
/// `max_merge_gap_s`, then maps seconds to frames as
/// [offset + floor(start * fps), offset + ceil(end * fps)).
std::vector<HostInterval> merge_positive_segments(std::span<const SpeakerDecision> decisions, double max_merge_gap_s,
                                                  double fps, FrameIndex frame_offset = 0);

/// Scores `model` against a pseudo-label set (ids resolved in `embeddings`).
BinaryCounts evaluate_host_model(const HostModel& model, const LabelSet& labels, const EmbeddingTable& embeddings);

// ---------------------------------------------------------------------------
// Video: host face gallery
// ---------------------------------------------------------------------------

struct FaceGallery {
  std::vector<std::string> exemplar_ids;
  std::vector<std::vector<double>> exemplars;  // unit vectors
  double tau = 0.5;
  double vote_fraction = 0.5;

  std::size_t dim() const { return exemplars.empty() ? 0 : exemplars.front().size(); }
  /// Highest cosine similarity between `v` and any exemplar.
  double host_similarity(std::span<const double> v) const;
  void validate() const;
  friend bool operator==(const FaceGallery&, const FaceGallery&) = default;
};

std::string serialize_face_gallery(const FaceGallery& gallery);
FaceGallery parse_face_gallery(std::string_view text);

double max_cosine(std::span<const double> v, std::span<const std::vector<double>> exemplars);

/// Threshold maximizing F1 of "score >= tau" on one labeled sample. When the
/// optimum sits between two observed scores, the midpoint is returned.
/// Ties in F1 resolve to the higher threshold.
double f1_optimal_threshold(std::span<const double> positive_scores, std::span<const double> negative_scores);

struct FaceCalibrationParams {
  int n_boot = 200;
  double vote_fraction = 0.5;
  std::uint64_t seed = 0x5eed;
};

struct FaceCalibration {
  double tau = 0;
  double vote_fraction = 0.5;
  std::vector<double> trial_taus;  // one per bootstrap trial
};

/// Bootstraps (stratified, with replacement) the F1-optimal threshold and
/// returns the median over trials. With n_boot == 1 the single trial uses the
/// unresampled data.
FaceCalibration calibrate_face_threshold(std::span<const std::vector<double>> positives,
                                         std::span<const std::vector<double>> negatives,
                                         std::span<const std::vector<double>> exemplars,
                                         const FaceCalibrationParams& params = {});

// ---------------------------------------------------------------------------
// Per-frame identity assignment
// ---------------------------------------------------------------------------

enum class VotingMode { kPerTrack, kPerFrame };

std::string_view to_string(VotingMode m);
VotingMode parse_voting_mode(std::string_view s);

struct AssignParams {
  double theta_new = 0.45;
  VotingMode voting = VotingMode::kPerTrack;
};

/// host, or guest_<index>.
struct Role {
  int guest_index = -1;

  bool is_host() const { return guest_index < 0; }
  std::string str() const;
  static Role host() { return {}; }
  static Role guest(int i) { return {i}; }
  static Role parse(std::string_view s);
  friend bool operator==(const Role&, const Role&) = default;
};

struct FaceAssignment {
  std::int64_t track_id = 0;
  BBox bbox;
  Role role;
  double host_similarity = 0;

  friend bool operator==(const FaceAssignment&, const FaceAssignment&) = default;
};

struct IdentityTrack {
  std::string clip_id;
  FrameRange frames;
  int guest_count = 0;
  std::size_t missing_embeddings = 0;
  /// Every frame of `frames` has an entry; faces sorted by track_id.
  std::map<FrameIndex, std::vector<FaceAssignment>> per_frame;

  friend bool operator==(const IdentityTrack&, const IdentityTrack&) = default;
};

/// Key under which the face embedding of one detection is stored.
std::string face_embedding_id(std::string_view episode_id, FrameIndex frame, std::int64_t track_id);

/// Online assignment over a clip's face detections (sorted by frame). A face
/// is host-eligible when its track's running vote fraction (faces with
/// similarity >= tau over faces seen so far) reaches vote_fraction, or in
/// per-frame mode when its own similarity reaches tau; negative track ids
/// always vote per frame. At most one host per frame: highest similarity,
/// then larger box, then lower track_id. Remaining faces, largest first,
/// join the most similar guest centroid not already used in the frame if
/// cosine >= theta_new, else open a new guest cluster. Depends only on the
/// prefix of the stream up to each frame.
IdentityTrack assign_identities(std::string clip_id, std::string_view episode_id, FrameRange frames,
                                std::span<const Detection> face_detections, const FaceGallery& gallery,
                                const EmbeddingTable& face_embeddings, const AssignParams& params = {});

std::string serialize_identity_track(const IdentityTrack& track);
IdentityTrack parse_identity_track(std::string_view text);

}  // namespace dyad

#endif  // DYADKIT_HOSTID_HPP_
