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

#include "dyadkit/hostid.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "dyadkit/error.hpp"
#include "dyadkit/textio.hpp"

namespace dyad {

namespace {

void check_dim(std::size_t got, std::size_t want, std::string_view what) {
  if (got != want) {
    fail(ErrorKind::kValidation, std::string(what) + ": dimension " + std::to_string(got) + " != " +
                                     std::to_string(want));
  }
}

std::string join_doubles(std::span<const double> v) {
  std::string out;
  for (double x : v) out += ' ' + format_double(x);
  return out;
}

std::vector<double> parse_doubles(std::span<const std::string_view> tokens, std::string_view where) {
  std::vector<double> out;
  out.reserve(tokens.size());
  for (auto t : tokens) {
    const auto v = parse_double(t);
    if (!v) fail(ErrorKind::kValidation, std::string(where) + ": bad number '" + std::string(t) + "'");
    out.push_back(*v);
  }
  return out;
}

}  // namespace

double HostModel::squared_distance(std::span<const double> x) const {
  check_dim(x.size(), dim(), "host model query");
  double d2 = 0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double z = x[i] - mean[i];
    d2 += z * z / var[i];
  }
  return d2;
}

void HostModel::validate() const {
  if (mean.empty()) fail(ErrorKind::kValidation, "host model has dimension 0");
  check_dim(var.size(), mean.size(), "host model variance");
  for (double v : var) {
    if (!(v > 0)) fail(ErrorKind::kValidation, "host model variance must be positive");
  }
  if (!(threshold >= 0)) fail(ErrorKind::kValidation, "host model threshold must be >= 0");
}

HostModel fit_host_gaussian(std::span<const std::vector<double>> positives, double tail) {
  if (!(tail > 0.0 && tail < 0.5)) fail(ErrorKind::kConfig, "tail must lie in (0, 0.5)");
  if (positives.size() < 10) {
    fail(ErrorKind::kCalibration, "need at least 10 positive embeddings, got " + std::to_string(positives.size()));
  }
  const std::size_t d = positives.front().size();
  if (d == 0) fail(ErrorKind::kCalibration, "empty embeddings");
  const double n = static_cast<double>(positives.size());

  HostModel m;
  m.mean.assign(d, 0.0);
  double k = 0;
  for (const auto& p : positives) {
    check_dim(p.size(), d, "positive embedding");
    k += 1;
    for (std::size_t i = 0; i < d; ++i) m.mean[i] += (p[i] - m.mean[i]) / k;
  }
  m.var.assign(d, 0.0);
  for (const auto& p : positives) {
    for (std::size_t i = 0; i < d; ++i) m.var[i] += (p[i] - m.mean[i]) * (p[i] - m.mean[i]);
  }
  for (double& v : m.var) v = std::max(v / n, HostModel::kVarianceFloor);

  std::vector<double> d2;
  d2.reserve(positives.size());
  for (const auto& p : positives) d2.push_back(m.squared_distance(p));
  m.threshold = quantile(std::move(d2), 1.0 - tail);
  return m;
}

std::string serialize_host_model(const HostModel& model) {
  std::ostringstream out;
  out << "dyadkit-host-model 1\n";
  out << "dim " << model.dim() << '\n';
  out << "threshold " << format_double(model.threshold) << '\n';
  out << "mean" << join_doubles(model.mean) << '\n';
  out << "var" << join_doubles(model.var) << '\n';
  return std::move(out).str();
}

HostModel parse_host_model(std::string_view text) {
  HostModel m;
  std::size_t dim = 0;
  bool header = false;
  LineReader reader(text);
  std::string_view line;
  while (reader.next(line)) {
    if (is_blank_or_comment(line)) continue;
    const auto f = split_ws(line);
    const auto where = "host model line " + std::to_string(reader.line_number());
    if (!header) {
      if (f.size() != 2 || f[0] != "dyadkit-host-model" || f[1] != "1") {
        fail(ErrorKind::kValidation, where + ": bad header");
      }
      header = true;
    } else if (f[0] == "dim" && f.size() == 2) {
      const auto v = parse_int(f[1]);
      if (!v || *v <= 0) fail(ErrorKind::kValidation, where + ": bad dim");
      dim = static_cast<std::size_t>(*v);
    } else if (f[0] == "threshold" && f.size() == 2) {
      m.threshold = parse_doubles(std::span(f).subspan(1), where).front();
    } else if (f[0] == "mean") {
      m.mean = parse_doubles(std::span(f).subspan(1), where);
    } else if (f[0] == "var") {
      m.var = parse_doubles(std::span(f).subspan(1), where);
    } else {
      fail(ErrorKind::kValidation, where + ": unknown record");
    }
  }
  if (!header) fail(ErrorKind::kValidation, "host model: missing header");
  check_dim(m.mean.size(), dim, "host model mean");
  m.validate();
  return m;
}

SpeakerVerdict classify_speaker(const HostModel& model, const DiarSegment& segment, const EmbeddingTable& embeddings) {
  const auto& v = embeddings.at(segment.embedding_id);
  check_dim(v.size(), model.dim(), segment.embedding_id);
  const double d2 = model.squared_distance(v);
  return {d2 <= model.threshold, d2};
}

std::vector<HostInterval> merge_positive_segments(std::span<const SpeakerDecision> decisions, double max_merge_gap_s,
                                                  double fps, FrameIndex frame_offset) {
  if (!(fps > 0)) fail(ErrorKind::kPrecondition, "fps must be positive");
  std::vector<const DiarSegment*> pos;
  for (const auto& d : decisions) {
    if (d.verdict.is_host) pos.push_back(&d.segment);
  }
  std::stable_sort(pos.begin(), pos.end(), [](auto* a, auto* b) { return a->start_s < b->start_s; });

  std::vector<HostInterval> out;
  for (const auto* s : pos) {
    if (!out.empty() && s->start_s - out.back().end_s <= max_merge_gap_s) {
      out.back().end_s = std::max(out.back().end_s, s->end_s);
    } else {
      out.push_back({s->clip_id, s->start_s, s->end_s, {}});
    }
  }
  constexpr double kSlack = 1e-9;
  for (auto& iv : out) {
    iv.frames.begin = frame_offset + static_cast<FrameIndex>(std::floor(iv.start_s * fps + kSlack));
    iv.frames.end = frame_offset + static_cast<FrameIndex>(std::ceil(iv.end_s * fps - kSlack));
  }
  return out;
}

BinaryCounts evaluate_host_model(const HostModel& model, const LabelSet& labels, const EmbeddingTable& embeddings) {
  BinaryCounts c;
  for (const auto& id : labels.positives) {
    (model.accepts(embeddings.at(id)) ? c.true_pos : c.false_neg)++;
  }
  for (const auto& id : labels.negatives) {
    (model.accepts(embeddings.at(id)) ? c.false_pos : c.true_neg)++;
  }
  return c;
}

double max_cosine(std::span<const double> v, std::span<const std::vector<double>> exemplars) {
  double best = -2.0;
  for (const auto& e : exemplars) {
    check_dim(v.size(), e.size(), "face embedding");
    best = std::max(best, dot(v, e));
  }
  return best;
}

double FaceGallery::host_similarity(std::span<const double> v) const { return max_cosine(v, exemplars); }

void FaceGallery::validate() const {
  if (exemplars.empty()) fail(ErrorKind::kValidation, "face gallery needs at least one exemplar");
  if (exemplar_ids.size() != exemplars.size()) fail(ErrorKind::kValidation, "face gallery ids/vectors mismatch");
  for (const auto& e : exemplars) {
    check_dim(e.size(), dim(), "gallery exemplar");
    if (std::abs(std::sqrt(dot(e, e)) - 1.0) > 1e-6) fail(ErrorKind::kValidation, "gallery exemplar not unit norm");
  }
  if (!(tau > -1.0 && tau < 1.0)) fail(ErrorKind::kValidation, "tau must lie in (-1, 1)");
  if (!(vote_fraction > 0.0 && vote_fraction <= 1.0)) fail(ErrorKind::kValidation, "vote_fraction must lie in (0, 1]");
}

std::string serialize_face_gallery(const FaceGallery& g) {
  std::ostringstream out;
  out << "dyadkit-face-gallery 1\n";
  out << "dim " << g.dim() << '\n';
  out << "tau " << format_double(g.tau) << '\n';
  out << "vote_fraction " << format_double(g.vote_fraction) << '\n';
  for (std::size_t i = 0; i < g.exemplars.size(); ++i) {
    out << "exemplar " << g.exemplar_ids[i] << join_doubles(g.exemplars[i]) << '\n';
  }
  return std::move(out).str();
}

FaceGallery parse_face_gallery(std::string_view text) {
  FaceGallery g;
  std::size_t dim = 0;
  bool header = false;
  LineReader reader(text);
  std::string_view line;
  while (reader.next(line)) {
    if (is_blank_or_comment(line)) continue;
    const auto f = split_ws(line);
    const auto where = "face gallery line " + std::to_string(reader.line_number());
    if (!header) {
      if (f.size() != 2 || f[0] != "dyadkit-face-gallery" || f[1] != "1") {
        fail(ErrorKind::kValidation, where + ": bad header");
      }
      header = true;
    } else if (f[0] == "dim" && f.size() == 2) {
      const auto v = parse_int(f[1]);
      if (!v || *v <= 0) fail(ErrorKind::kValidation, where + ": bad dim");
      dim = static_cast<std::size_t>(*v);
    } else if (f[0] == "tau" && f.size() == 2) {
      g.tau = parse_doubles(std::span(f).subspan(1), where).front();
    } else if (f[0] == "vote_fraction" && f.size() == 2) {
      g.vote_fraction = parse_doubles(std::span(f).subspan(1), where).front();
    } else if (f[0] == "exemplar" && f.size() >= 3) {
      g.exemplar_ids.emplace_back(f[1]);
      g.exemplars.push_back(parse_doubles(std::span(f).subspan(2), where));
      check_dim(g.exemplars.back().size(), dim, where);
    } else {
      fail(ErrorKind::kValidation, where + ": unknown record");
    }
  }
  if (!header) fail(ErrorKind::kValidation, "face gallery: missing header");
  g.validate();
  return g;
}

double f1_optimal_threshold(std::span<const double> positive_scores, std::span<const double> negative_scores) {
  struct Scored {
    double score;
    bool positive;
  };
  std::vector<Scored> all;
  all.reserve(positive_scores.size() + negative_scores.size());
  for (double s : positive_scores) all.push_back({s, true});
  for (double s : negative_scores) all.push_back({s, false});
  if (all.empty()) fail(ErrorKind::kCalibration, "no scores");
  std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

  const long total_pos = static_cast<long>(positive_scores.size());
  long tp = 0;
  long fp = 0;
  double best_f1 = -1;
  std::size_t best_end = 0;  // predictions positive for all[0, best_end)
  std::size_t i = 0;
  while (i < all.size()) {
    const double s = all[i].score;
    for (; i < all.size() && all[i].score == s; ++i) (all[i].positive ? tp : fp)++;
    const double f1 = f1_score({tp, fp, total_pos - tp, 0});
    if (f1 > best_f1) {
      best_f1 = f1;
      best_end = i;
    }
  }
  const double cut = all[best_end - 1].score;
  if (best_end == all.size()) return cut;
  return 0.5 * (cut + all[best_end].score);
}

FaceCalibration calibrate_face_threshold(std::span<const std::vector<double>> positives,
                                         std::span<const std::vector<double>> negatives,
                                         std::span<const std::vector<double>> exemplars,
                                         const FaceCalibrationParams& params) {
  if (positives.empty() || negatives.empty()) fail(ErrorKind::kCalibration, "degenerate labels: one class is empty");
  if (positives.size() < 5 || negatives.size() < 5) {
    fail(ErrorKind::kCalibration, "need at least 5 positives and 5 negatives");
  }
  if (exemplars.empty()) fail(ErrorKind::kCalibration, "no gallery exemplars");
  if (params.n_boot < 1) fail(ErrorKind::kConfig, "n_boot must be >= 1");
  if (!(params.vote_fraction > 0.0 && params.vote_fraction <= 1.0)) {
    fail(ErrorKind::kConfig, "vote_fraction must lie in (0, 1]");
  }

  std::vector<double> pos;
  std::vector<double> neg;
  for (const auto& p : positives) pos.push_back(max_cosine(p, exemplars));
  for (const auto& n : negatives) neg.push_back(max_cosine(n, exemplars));

  FaceCalibration out;
  out.vote_fraction = params.vote_fraction;
  if (params.n_boot == 1) {
    out.trial_taus.push_back(f1_optimal_threshold(pos, neg));
  } else {
    std::mt19937_64 rng(params.seed);
    std::vector<double> bp(pos.size());
    std::vector<double> bn(neg.size());
    for (int t = 0; t < params.n_boot; ++t) {
      for (auto& x : bp) x = pos[rng() % pos.size()];
      for (auto& x : bn) x = neg[rng() % neg.size()];
      out.trial_taus.push_back(f1_optimal_threshold(bp, bn));
    }
  }
  out.tau = quantile(out.trial_taus, 0.5);
  return out;
}

std::string_view to_string(VotingMode m) { return m == VotingMode::kPerTrack ? "per_track" : "per_frame"; }

VotingMode parse_voting_mode(std::string_view s) {
  if (s == "per_track") return VotingMode::kPerTrack;
  if (s == "per_frame") return VotingMode::kPerFrame;
  fail(ErrorKind::kConfig, "voting mode must be per_track or per_frame");
}

std::string Role::str() const { return is_host() ? "host" : "guest_" + std::to_string(guest_index); }

Role Role::parse(std::string_view s) {
  if (s == "host") return host();
  if (s.starts_with("guest_")) {
    const auto i = parse_int(s.substr(6));
    if (i && *i >= 0) return guest(static_cast<int>(*i));
  }
  fail(ErrorKind::kValidation, "bad role '" + std::string(s) + "'");
}

std::string face_embedding_id(std::string_view episode_id, FrameIndex frame, std::int64_t track_id) {
  return std::string(episode_id) + '/' + std::to_string(frame) + '/' + std::to_string(track_id);
}

namespace {

struct GuestCluster {
  std::vector<double> sum;
  std::vector<double> centroid;
};

struct Vote {
  long frames = 0;
  long hits = 0;
};

struct Candidate {
  const Detection* det;
  const std::vector<double>* emb;
  double sim;
  bool eligible;
};

}  // namespace

IdentityTrack assign_identities(std::string clip_id, std::string_view episode_id, FrameRange frames,
                                std::span<const Detection> face_detections, const FaceGallery& gallery,
                                const EmbeddingTable& face_embeddings, const AssignParams& params) {
  gallery.validate();
  IdentityTrack out;
  out.clip_id = std::move(clip_id);
  out.frames = frames;
  for (FrameIndex f = frames.begin; f < frames.end; ++f) out.per_frame[f];

  std::vector<GuestCluster> clusters;
  std::map<std::int64_t, Vote> votes;
  std::vector<Candidate> cands;
  std::vector<bool> used;

  std::size_t i = 0;
  while (i < face_detections.size()) {
    const FrameIndex frame = face_detections[i].frame_index;
    cands.clear();
    for (; i < face_detections.size() && face_detections[i].frame_index == frame; ++i) {
      const auto& d = face_detections[i];
      if (d.kind != DetectionKind::kFace || !frames.contains(frame)) continue;
      const auto key = face_embedding_id(episode_id, frame, d.track_id);
      if (!face_embeddings.contains(key)) {
        ++out.missing_embeddings;
        continue;
      }
      const auto& emb = face_embeddings.at(key);
      const double sim = gallery.host_similarity(emb);
      const bool hit = sim >= gallery.tau;
      bool eligible = hit;
      if (params.voting == VotingMode::kPerTrack && d.track_id >= 0) {
        auto& v = votes[d.track_id];
        ++v.frames;
        if (hit) ++v.hits;
        eligible = static_cast<double>(v.hits) >= gallery.vote_fraction * static_cast<double>(v.frames);
      }
      cands.push_back({&d, &emb, sim, eligible});
    }
    if (cands.empty()) continue;

    // Host first, then guests largest-first.
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.eligible != b.eligible) return a.eligible;
      if (a.eligible && a.sim != b.sim) return a.sim > b.sim;
      if (a.det->bbox.area() != b.det->bbox.area()) return a.det->bbox.area() > b.det->bbox.area();
      return a.det->track_id < b.det->track_id;
    });

    auto& slot = out.per_frame[frame];
    used.assign(clusters.size(), false);
    for (std::size_t k = 0; k < cands.size(); ++k) {
      const auto& c = cands[k];
      Role role;
      if (k == 0 && c.eligible) {
        role = Role::host();
      } else {
        int best = -1;
        double best_cos = -2.0;
        for (std::size_t j = 0; j < clusters.size(); ++j) {
          if (used[j]) continue;
          const double cs = dot(*c.emb, clusters[j].centroid);
          if (cs > best_cos) {
            best_cos = cs;
            best = static_cast<int>(j);
          }
        }
        if (best >= 0 && best_cos >= params.theta_new) {
          auto& cl = clusters[static_cast<std::size_t>(best)];
          for (std::size_t q = 0; q < cl.sum.size(); ++q) cl.sum[q] += (*c.emb)[q];
          cl.centroid = l2_normalized(cl.sum);
        } else {
          clusters.push_back({*c.emb, *c.emb});
          used.push_back(false);
          best = static_cast<int>(clusters.size() - 1);
        }
        used[static_cast<std::size_t>(best)] = true;
        role = Role::guest(best);
      }
      slot.push_back({c.det->track_id, c.det->bbox, role, c.sim});
    }
    std::sort(slot.begin(), slot.end(), [](const auto& a, const auto& b) {
      return std::tie(a.track_id, a.bbox.x, a.bbox.y) < std::tie(b.track_id, b.bbox.x, b.bbox.y);
    });
  }
  out.guest_count = static_cast<int>(clusters.size());
  return out;
}

std::string serialize_identity_track(const IdentityTrack& t) {
  std::ostringstream out;
  out << "clip " << t.clip_id << ' ' << t.frames.begin << ' ' << t.frames.end << ' ' << t.guest_count << ' '
      << t.missing_embeddings << '\n';
  for (const auto& [frame, faces] : t.per_frame) {
    for (const auto& a : faces) {
      out << "face " << frame << ' ' << a.track_id << ' ' << a.role.str() << ' ' << format_double(a.bbox.x) << ' '
          << format_double(a.bbox.y) << ' ' << format_double(a.bbox.w) << ' ' << format_double(a.bbox.h) << ' '
          << format_double(a.host_similarity) << '\n';
    }
  }
  return std::move(out).str();
}

IdentityTrack parse_identity_track(std::string_view text) {
  IdentityTrack t;
  bool have_clip = false;
  LineReader reader(text);
  std::string_view line;
  while (reader.next(line)) {
    if (is_blank_or_comment(line)) continue;
    const auto f = split_ws(line);
    const auto where = "identity track line " + std::to_string(reader.line_number());
    if (f[0] == "clip" && f.size() == 6 && !have_clip) {
      const auto b = parse_int(f[2]);
      const auto e = parse_int(f[3]);
      const auto g = parse_int(f[4]);
      const auto m = parse_int(f[5]);
      if (!b || !e || !g || !m || *e < *b) fail(ErrorKind::kValidation, where + ": bad clip record");
      t.clip_id = f[1];
      t.frames = {*b, *e};
      t.guest_count = static_cast<int>(*g);
      t.missing_embeddings = static_cast<std::size_t>(*m);
      for (FrameIndex fr = t.frames.begin; fr < t.frames.end; ++fr) t.per_frame[fr];
      have_clip = true;
    } else if (f[0] == "face" && f.size() == 9 && have_clip) {
      const auto fr = parse_int(f[1]);
      const auto tr = parse_int(f[2]);
      const auto v = parse_doubles(std::span(f).subspan(4), where);
      if (!fr || !tr || !t.frames.contains(*fr)) fail(ErrorKind::kValidation, where + ": bad face record");
      t.per_frame[*fr].push_back({*tr, {v[0], v[1], v[2], v[3]}, Role::parse(f[3]), v[4]});
    } else {
      fail(ErrorKind::kValidation, where + ": unexpected record");
    }
  }
  if (!have_clip) fail(ErrorKind::kValidation, "identity track: missing clip record");
  return t;
}

}  // namespace dyad
