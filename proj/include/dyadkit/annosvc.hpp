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

#ifndef DYADKIT_ANNOSVC_HPP_
#define DYADKIT_ANNOSVC_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dyadkit/ingest.hpp"

namespace dyad::anno {

enum class Stage { kHostSpeech, kHostFace };

std::string_view to_string(Stage s);
/// Throws a config error for anything but host_speech / host_face.
Stage parse_stage(std::string_view s);

enum class TaskStatus { kPending, kLabeled, kSkipped };

std::string_view to_string(TaskStatus s);

struct Label {
  std::string task_id;
  Verdict verdict = Verdict::kUnsure;
  std::string annotator_id;
  std::int64_t timestamp_ms = 0;
};

struct AnnotationTask {
  std::string task_id;
  Stage stage = Stage::kHostSpeech;
  std::string payload_ref;  // path under the media root
  nlohmann::json context;   // clip_id, time span or frame, embedding_id
  TaskStatus status = TaskStatus::kPending;
  std::vector<Label> labels;  // append order; the last one is current
  std::optional<std::string> lease_holder;
  std::int64_t lease_expires_ms = 0;

  nlohmann::json to_json() const;
};

struct TaskCandidate {
  std::string payload_ref;
  nlohmann::json context;
};

struct LabelAck {
  std::string task_id;
  Verdict verdict = Verdict::kUnsure;
  bool superseded = false;  // an earlier label existed
};

struct ExportItem {
  std::string task_id;
  std::string payload_ref;
  nlohmann::json context;
  std::string annotator_id;
};

struct LabelExport {
  Stage stage = Stage::kHostSpeech;
  std::vector<ExportItem> positives;  // sorted by payload_ref
  std::vector<ExportItem> negatives;

  nlohmann::json to_json() const;
  /// Keyed by context.embedding_id (payload_ref when absent).
  LabelSet to_label_set() const;
};

struct Progress {
  std::size_t pending = 0;
  std::size_t leased = 0;
  std::size_t labeled = 0;
  std::size_t skipped = 0;
};

using Clock = std::function<std::int64_t()>;

/// Wall clock in milliseconds.
std::int64_t system_now_ms();

/// Deterministic sampling predicate used by create_tasks.
bool sampled(std::string_view payload_ref, double fraction);

std::string make_task_id(Stage stage, std::string_view payload_ref);

/// Durable task and label store backed by one append-only JSON-lines log.
/// Every mutation is written and fsync'd before memory is updated and the
/// call returns, so a crash leaves either the full record or nothing (a torn
/// final line is discarded on open). Leases live in memory only.
class LabelStore {
 public:
  explicit LabelStore(std::filesystem::path dir, std::int64_t lease_ms = 120'000, Clock clock = system_now_ms);

  std::size_t create_tasks(Stage stage, std::span<const TaskCandidate> candidates, double sample_fraction);
  std::size_t create_tasks(std::string_view stage, std::span<const TaskCandidate> candidates, double sample_fraction);

  /// Pending, unleased (or lease-expired) task in creation order, leased to
  /// `annotator`. An annotator that already holds a live lease gets that
  /// task back.
  std::optional<AnnotationTask> next_task(Stage stage, std::string_view annotator);

  LabelAck submit_label(std::string_view task_id, std::string_view verdict, std::string_view annotator);
  void skip_task(std::string_view task_id, std::string_view annotator);

  LabelExport export_labels(Stage stage) const;
  Progress progress(Stage stage) const;
  std::optional<AnnotationTask> find(std::string_view task_id) const;
  std::size_t size() const;

  /// Rewrites the log with only the current label per task; superseded
  /// labels move to archive.jsonl.
  void compact();

  const std::filesystem::path& log_path() const { return log_path_; }

 private:
  void replay();
  void append(std::string_view records);
  void apply(const nlohmann::json& rec);

  std::filesystem::path dir_;
  std::filesystem::path log_path_;
  std::int64_t lease_ms_;
  Clock clock_;
  mutable std::shared_mutex mu_;
  std::vector<AnnotationTask> tasks_;  // creation order
  std::map<std::string, std::size_t, std::less<>> by_id_;
  std::map<std::pair<Stage, std::string>, std::size_t> by_payload_;
};

struct ServerOptions {
  std::filesystem::path media_root;
  std::filesystem::path ui_dir;  // optional static assets served at /
};

/// HTTP front end:
///   GET  /tasks/next?stage=&annotator=   -> {"task": {...}|null}
///   POST /labels {task_id, verdict, annotator}
///   POST /tasks/skip {task_id, annotator}
///   GET  /export?stage=                  -> {"stage", "positives", "negatives"}
///   GET  /progress?stage=
///   GET  /media/<payload_ref>
/// Errors come back as {"error": kind, "message": text} with 400/404.
class AnnotationServer {
 public:
  AnnotationServer(LabelStore& store, ServerOptions options);
  ~AnnotationServer();

  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  /// Binds (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  /// bind + listen on a background thread.
  int start(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Safe join of a request path onto the media root; nullopt on traversal.
std::optional<std::filesystem::path> resolve_media_path(const std::filesystem::path& root, std::string_view ref);

}  // namespace dyad::anno

#endif  // DYADKIT_ANNOSVC_HPP_
