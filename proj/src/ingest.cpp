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

#include "dyadkit/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dyadkit/error.hpp"
#include "dyadkit/textio.hpp"

namespace dyad {

std::string_view to_string(DetectionKind kind) {
  return kind == DetectionKind::kPerson ? "person" : "face";
}

namespace {

void note_malformed(ParseReport& r, std::size_t line_no, std::string why) {
  ++r.malformed;
  r.rejected_lines.emplace_back(line_no, "malformed:" + why);
  if (r.first_malformed_line == 0) {
    r.first_malformed_line = line_no;
    r.first_error = std::move(why);
  }
}

void enforce_tolerance(const ParseReport& r, std::size_t bad, const ParseOptions& opts, std::string_view what) {
  if (r.records == 0) return;
  const double frac = static_cast<double>(bad) / static_cast<double>(r.records);
  if (frac > opts.max_bad_fraction) {
    std::ostringstream msg;
    msg << what << ": " << bad << " of " << r.records << " records invalid (tolerance "
        << opts.max_bad_fraction * 100 << "%); first offending line " << r.first_malformed_line << ": "
        << r.first_error;
    fail(ErrorKind::kValidation, msg.str());
  }
}

}  // namespace

TrackLogParse parse_tracking_log_text(std::string_view text, const ParseOptions& opts) {
  TrackLogParse out;
  auto& r = out.report;
  LineReader reader(text);
  std::string_view line;
  while (reader.next(line)) {
    if (is_blank_or_comment(line)) continue;
    ++r.records;
    const auto n = reader.line_number();
    const auto f = split_ws(line);
    if (f.size() != 9) {
      note_malformed(r, n, "expected 9 fields, got " + std::to_string(f.size()));
      continue;
    }
    Detection d;
    const auto frame = parse_int(f[1]);
    const auto track = parse_int(f[2]);
    const auto x = parse_double(f[4]);
    const auto y = parse_double(f[5]);
    const auto w = parse_double(f[6]);
    const auto h = parse_double(f[7]);
    const auto conf = parse_double(f[8]);
    if (!frame || !track || !x || !y || !w || !h || !conf) {
      note_malformed(r, n, "unparsable numeric field");
      continue;
    }
    if (f[3] == "person") {
      d.kind = DetectionKind::kPerson;
    } else if (f[3] == "face") {
      d.kind = DetectionKind::kFace;
    } else {
      note_malformed(r, n, "unknown kind '" + std::string(f[3]) + "'");
      continue;
    }
    if (*frame < 0) {
      note_malformed(r, n, "negative frame_index");
      continue;
    }
    if (!(*conf >= 0.0 && *conf <= 1.0)) {
      note_malformed(r, n, "confidence outside [0,1]");
      continue;
    }
    if (!std::isfinite(*x) || !std::isfinite(*y) || !(*w > 0) || !(*h > 0) || !std::isfinite(*w) ||
        !std::isfinite(*h)) {
      note_malformed(r, n, "degenerate bounding box");
      continue;
    }
    if (out.log.episode_id.empty()) {
      out.log.episode_id = std::string(f[0]);
    } else if (out.log.episode_id != f[0]) {
      note_malformed(r, n, "episode_id differs from first record");
      continue;
    }
    d.frame_index = *frame;
    d.track_id = *track;
    d.bbox = {*x, *y, *w, *h};
    d.confidence = *conf;
    out.log.detections.push_back(d);
    ++r.parsed;
  }
  enforce_tolerance(r, r.malformed, opts, "tracking log");
  std::sort(out.log.detections.begin(), out.log.detections.end());
  return out;
}

TrackLogParse parse_tracking_log(const std::filesystem::path& path, const ParseOptions& opts) {
  try {
    return parse_tracking_log_text(read_file(path), opts);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kValidation) fail(e.kind(), path.string() + ": " + e.what());
    throw;
  }
}

std::string serialize_tracking_log(const TrackLog& log) {
  std::string out;
  for (const auto& d : log.detections) {
    out += log.episode_id;
    out += ' ' + std::to_string(d.frame_index) + ' ' + std::to_string(d.track_id) + ' ';
    out += to_string(d.kind);
    for (double v : {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, d.confidence}) out += ' ' + format_double(v);
    out += '\n';
  }
  return out;
}

DiarizationParse parse_diarization_text(std::string_view text, const ParseOptions& opts) {
  DiarizationParse out;
  auto& r = out.report;
  std::size_t interval_violations = 0;
  LineReader reader(text);
  std::string_view line;
  while (reader.next(line)) {
    if (is_blank_or_comment(line)) continue;
    ++r.records;
    const auto n = reader.line_number();
    const auto f = split_ws(line);
    if (f.size() != 5) {
      note_malformed(r, n, "expected 5 fields, got " + std::to_string(f.size()));
      continue;
    }
    const auto start = parse_double(f[2]);
    const auto end = parse_double(f[3]);
    if (!start || !end || !std::isfinite(*start) || !std::isfinite(*end)) {
      note_malformed(r, n, "unparsable time field");
      continue;
    }
    if (*start < 0) {
      note_malformed(r, n, "negative start_s");
      continue;
    }
    if (*end < *start) {
      ++interval_violations;
      note_malformed(r, n, "end_s before start_s");
      continue;
    }
    if (*end == *start) {
      ++interval_violations;
      ++r.dropped;
      r.rejected_lines.emplace_back(n, "degenerate_interval");
      continue;
    }
    out.segments.push_back({std::string(f[0]), std::string(f[1]), *start, *end, std::string(f[4])});
    ++r.parsed;
  }
  enforce_tolerance(r, r.malformed, opts, "diarization");
  if (r.records > 0 &&
      static_cast<double>(interval_violations) / static_cast<double>(r.records) > opts.max_bad_fraction) {
    fail(ErrorKind::kValidation, "diarization: " + std::to_string(interval_violations) + " of " +
                                     std::to_string(r.records) + " segments have end_s <= start_s");
  }
  return out;
}

DiarizationParse parse_diarization(const std::filesystem::path& path, const ParseOptions& opts) {
  try {
    return parse_diarization_text(read_file(path), opts);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kValidation) fail(e.kind(), path.string() + ": " + e.what());
    throw;
  }
}

std::string serialize_diarization(std::span<const DiarSegment> segments) {
  std::string out;
  for (const auto& s : segments) {
    out += s.clip_id + ' ' + s.speaker_label + ' ' + format_double(s.start_s) + ' ' + format_double(s.end_s) +
           ' ' + s.embedding_id + '\n';
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> l2_normalized(std::span<const double> v) {
  double sq = 0;
  for (double x : v) {
    if (!std::isfinite(x)) fail(ErrorKind::kValidation, "non-finite component");
    sq += x * x;
  }
  if (!(sq > 0) || !std::isfinite(sq)) fail(ErrorKind::kValidation, "zero-norm vector");
  std::vector<double> out(v.begin(), v.end());
  if (std::abs(sq - 1.0) <= 8 * std::numeric_limits<double>::epsilon()) return out;
  const double norm = std::sqrt(sq);
  for (double& x : out) x /= norm;
  return out;
}

const std::vector<double>& EmbeddingTable::at(std::string_view id) const {
  auto it = vectors_.find(std::string(id));
  if (it == vectors_.end()) fail(ErrorKind::kLookup, "unknown embedding_id '" + std::string(id) + "'");
  return it->second;
}

void EmbeddingTable::insert(std::string id, std::span<const double> vector) {
  if (dim_ == 0) dim_ = vector.size();
  if (vector.size() != dim_) {
    fail(ErrorKind::kValidation, id + ": dimension " + std::to_string(vector.size()) + " != " + std::to_string(dim_));
  }
  auto unit = l2_normalized(vector);
  if (!vectors_.emplace(id, std::move(unit)).second) fail(ErrorKind::kValidation, "duplicate embedding_id " + id);
}

EmbeddingLoad parse_embeddings_text(std::string_view text) {
  EmbeddingLoad out;
  LineReader reader(text);
  std::string_view line;
  std::size_t dim = 0;
  std::vector<double> buf;
  while (reader.next(line)) {
    if (is_blank_or_comment(line)) continue;
    const auto f = split_ws(line);
    const auto n = std::to_string(reader.line_number());
    if (dim == 0) {
      const auto d = f.size() == 1 ? parse_int(f[0]) : std::nullopt;
      if (!d || *d <= 0) fail(ErrorKind::kValidation, "embedding table line " + n + ": expected dimension header");
      dim = static_cast<std::size_t>(*d);
      out.table = EmbeddingTable(dim);
      continue;
    }
    if (f.size() != dim + 1) {
      fail(ErrorKind::kValidation, "embedding table line " + n + ": mixed dimensions (" +
                                       std::to_string(f.size() - 1) + " values, header says " +
                                       std::to_string(dim) + ")");
    }
    std::string id(f[0]);
    buf.clear();
    for (std::size_t i = 1; i < f.size(); ++i) {
      const auto v = parse_double(f[i]);
      if (!v) fail(ErrorKind::kValidation, "embedding table line " + n + ": unparsable value");
      buf.push_back(*v);
    }
    if (out.table.contains(id)) fail(ErrorKind::kValidation, "embedding table line " + n + ": duplicate id " + id);
    try {
      out.table.insert(id, buf);
    } catch (const Error& e) {
      out.rejected.push_back({id, e.what()});
    }
  }
  if (dim == 0) fail(ErrorKind::kValidation, "embedding table: missing dimension header");
  return out;
}

EmbeddingLoad load_embeddings(const std::filesystem::path& path) {
  try {
    return parse_embeddings_text(read_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kValidation) fail(e.kind(), path.string() + ": " + e.what());
    throw;
  }
}

std::string serialize_embeddings(const EmbeddingTable& table) {
  std::string out = std::to_string(table.dim()) + '\n';
  for (const auto& [id, v] : table.entries()) {
    out += id;
    for (double x : v) out += ' ' + format_double(x);
    out += '\n';
  }
  return out;
}

std::vector<EpisodeMeta> parse_episodes_text(std::string_view text) {
  std::vector<EpisodeMeta> out;
  LineReader reader(text);
  std::string_view line;
  while (reader.next(line)) {
    if (is_blank_or_comment(line)) continue;
    const auto f = split_ws(line);
    const auto where = "episodes line " + std::to_string(reader.line_number());
    if (f.size() != 7) fail(ErrorKind::kValidation, where + ": expected 7 fields");
    const auto fps = parse_double(f[1]);
    const auto frames = parse_int(f[2]);
    const auto w = parse_int(f[3]);
    const auto h = parse_int(f[4]);
    const auto dur = parse_double(f[5]);
    if (!fps || !frames || !w || !h || !dur) fail(ErrorKind::kValidation, where + ": unparsable numeric field");
    EpisodeMeta e{std::string(f[0]), std::string(f[6]), *fps, *frames,
                  static_cast<int>(*w), static_cast<int>(*h), *dur};
    e.validate();
    out.push_back(std::move(e));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.episode_id < b.episode_id; });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].episode_id == out[i - 1].episode_id) {
      fail(ErrorKind::kValidation, "duplicate episode " + out[i].episode_id);
    }
  }
  return out;
}

std::vector<EpisodeMeta> load_episodes(const std::filesystem::path& path) {
  return parse_episodes_text(read_file(path));
}

std::string serialize_episodes(std::span<const EpisodeMeta> episodes) {
  std::string out;
  for (const auto& e : episodes) {
    out += e.episode_id + ' ' + format_double(e.fps) + ' ' + std::to_string(e.frame_count) + ' ' +
           std::to_string(e.width) + ' ' + std::to_string(e.height) + ' ' + format_double(e.duration_s) + ' ' +
           e.source_uri + '\n';
  }
  return out;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kPositive: return "positive";
    case Verdict::kNegative: return "negative";
    case Verdict::kUnsure: return "unsure";
  }
  return "unsure";
}

Verdict parse_verdict(std::string_view s) {
  if (s == "positive") return Verdict::kPositive;
  if (s == "negative") return Verdict::kNegative;
  if (s == "unsure") return Verdict::kUnsure;
  fail(ErrorKind::kValidation, "verdict must be positive, negative or unsure (got '" + std::string(s) + "')");
}

LabelSet parse_labels_text(std::string_view text) {
  std::map<std::string, Verdict> latest;
  LineReader reader(text);
  std::string_view line;
  while (reader.next(line)) {
    if (is_blank_or_comment(line)) continue;
    const auto f = split_ws(line);
    if (f.size() != 2) {
      fail(ErrorKind::kValidation, "labels line " + std::to_string(reader.line_number()) + ": expected 2 fields");
    }
    latest[std::string(f[0])] = parse_verdict(f[1]);
  }
  LabelSet out;
  for (const auto& [id, v] : latest) {
    if (v == Verdict::kPositive) out.positives.push_back(id);
    if (v == Verdict::kNegative) out.negatives.push_back(id);
  }
  return out;
}

LabelSet load_labels(const std::filesystem::path& path) { return parse_labels_text(read_file(path)); }

std::string serialize_labels(const LabelSet& labels) {
  std::string out;
  for (const auto& id : labels.positives) out += id + " positive\n";
  for (const auto& id : labels.negatives) out += id + " negative\n";
  return out;
}

}  // namespace dyad
