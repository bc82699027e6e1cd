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

#include "dyadkit/annosvc.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <mutex>
#include <thread>

#include <fcntl.h>
#include <unistd.h>

#include <httplib.h>

#include "dyadkit/error.hpp"
#include "dyadkit/hash.hpp"
#include "dyadkit/textio.hpp"

namespace dyad::anno {

using nlohmann::json;

std::string_view to_string(Stage s) { return s == Stage::kHostSpeech ? "host_speech" : "host_face"; }

Stage parse_stage(std::string_view s) {
  if (s == "host_speech") return Stage::kHostSpeech;
  if (s == "host_face") return Stage::kHostFace;
  fail(ErrorKind::kConfig, "unknown annotation stage '" + std::string(s) + "'");
}

std::string_view to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::kPending: return "pending";
    case TaskStatus::kLabeled: return "labeled";
    case TaskStatus::kSkipped: return "skipped";
  }
  return "pending";
}

json AnnotationTask::to_json() const {
  json j;
  j["task_id"] = task_id;
  j["stage"] = to_string(stage);
  j["payload_ref"] = payload_ref;
  j["media_url"] = "/media/" + payload_ref;
  j["context"] = context;
  j["status"] = to_string(status);
  j["lease_expires_ms"] = lease_expires_ms;
  if (!labels.empty()) j["verdict"] = to_string(labels.back().verdict);
  return j;
}

json LabelExport::to_json() const {
  auto items = [](const std::vector<ExportItem>& v) {
    json a = json::array();
    for (const auto& i : v) {
      a.push_back({{"task_id", i.task_id},
                   {"payload_ref", i.payload_ref},
                   {"context", i.context},
                   {"annotator", i.annotator_id}});
    }
    return a;
  };
  return {{"stage", to_string(stage)}, {"positives", items(positives)}, {"negatives", items(negatives)}};
}

LabelSet LabelExport::to_label_set() const {
  auto key = [](const ExportItem& i) {
    if (i.context.is_object() && i.context.contains("embedding_id")) {
      return i.context["embedding_id"].get<std::string>();
    }
    return i.payload_ref;
  };
  LabelSet s;
  for (const auto& i : positives) s.positives.push_back(key(i));
  for (const auto& i : negatives) s.negatives.push_back(key(i));
  std::sort(s.positives.begin(), s.positives.end());
  std::sort(s.negatives.begin(), s.negatives.end());
  return s;
}

std::int64_t system_now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

bool sampled(std::string_view payload_ref, double fraction) {
  return unit_interval_hash("sample:" + std::string(payload_ref)) < fraction;
}

std::string make_task_id(Stage stage, std::string_view payload_ref) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%016llx", stage == Stage::kHostSpeech ? "hs" : "hf",
                static_cast<unsigned long long>(stable_hash64(std::string(to_string(stage)) + ":" +
                                                              std::string(payload_ref))));
  return buf;
}

LabelStore::LabelStore(std::filesystem::path dir, std::int64_t lease_ms, Clock clock)
    : dir_(std::move(dir)), log_path_(dir_ / "store.jsonl"), lease_ms_(lease_ms), clock_(std::move(clock)) {
  if (lease_ms_ <= 0) fail(ErrorKind::kConfig, "lease duration must be positive");
  std::filesystem::create_directories(dir_);
  replay();
}

void LabelStore::replay() {
  if (!std::filesystem::exists(log_path_)) return;
  const std::string text = read_file(log_path_);
  std::size_t pos = 0;
  std::size_t good_end = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    ++line_no;
    if (nl == std::string::npos) break;  // torn tail: no terminator
    const std::string_view line(text.data() + pos, nl - pos);
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded()) {
      if (nl + 1 < text.size()) {
        fail(ErrorKind::kDataIntegrity, log_path_.string() + ": corrupt record at line " + std::to_string(line_no));
      }
      break;
    }
    apply(rec);
    pos = nl + 1;
    good_end = pos;
  }
  if (good_end < text.size()) std::filesystem::resize_file(log_path_, good_end);
}

void LabelStore::apply(const json& rec) {
  const auto type = rec.at("type").get<std::string>();
  if (type == "task") {
    AnnotationTask t;
    t.task_id = rec.at("task_id").get<std::string>();
    t.stage = parse_stage(rec.at("stage").get<std::string>());
    t.payload_ref = rec.at("payload_ref").get<std::string>();
    t.context = rec.value("context", json::object());
    by_id_[t.task_id] = tasks_.size();
    by_payload_[{t.stage, t.payload_ref}] = tasks_.size();
    tasks_.push_back(std::move(t));
    return;
  }
  auto it = by_id_.find(rec.at("task_id").get<std::string>());
  if (it == by_id_.end()) fail(ErrorKind::kDataIntegrity, "record references unknown task");
  auto& task = tasks_[it->second];
  if (type == "label") {
    task.labels.push_back({task.task_id, parse_verdict(rec.at("verdict").get<std::string>()),
                           rec.at("annotator").get<std::string>(), rec.at("timestamp_ms").get<std::int64_t>()});
    task.status = TaskStatus::kLabeled;
  } else if (type == "skip") {
    if (task.status == TaskStatus::kPending) task.status = TaskStatus::kSkipped;
  } else {
    fail(ErrorKind::kDataIntegrity, "unknown record type " + type);
  }
  task.lease_holder.reset();
  task.lease_expires_ms = 0;
}

void LabelStore::append(std::string_view records) {
  int fd = ::open(log_path_.c_str(), O_CREAT | O_APPEND | O_WRONLY, 0644);
  if (fd < 0) fail(ErrorKind::kIo, "cannot open " + log_path_.string());
  std::size_t written = 0;
  while (written < records.size()) {
    const ssize_t n = ::write(fd, records.data() + written, records.size() - written);
    if (n < 0) {
      ::close(fd);
      fail(ErrorKind::kIo, "append failed: " + log_path_.string());
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    fail(ErrorKind::kIo, "fsync failed: " + log_path_.string());
  }
  ::close(fd);
}

std::size_t LabelStore::create_tasks(std::string_view stage, std::span<const TaskCandidate> candidates,
                                     double sample_fraction) {
  return create_tasks(parse_stage(stage), candidates, sample_fraction);
}

std::size_t LabelStore::create_tasks(Stage stage, std::span<const TaskCandidate> candidates, double sample_fraction) {
  if (candidates.empty()) fail(ErrorKind::kPrecondition, "no candidates");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) fail(ErrorKind::kConfig, "sample_fraction must lie in (0,1]");
  std::unique_lock lock(mu_);
  std::string batch;
  std::vector<json> recs;
  std::map<std::string, bool> seen;
  for (const auto& c : candidates) {
    if (c.payload_ref.empty()) fail(ErrorKind::kValidation, "empty payload_ref");
    if (by_payload_.contains({stage, c.payload_ref}) || seen.contains(c.payload_ref)) continue;
    if (!sampled(c.payload_ref, sample_fraction)) continue;
    seen[c.payload_ref] = true;
    json rec = {{"type", "task"},
                {"task_id", make_task_id(stage, c.payload_ref)},
                {"stage", to_string(stage)},
                {"payload_ref", c.payload_ref},
                {"context", c.context.is_null() ? json::object() : c.context}};
    if (by_id_.contains(rec["task_id"].get<std::string>())) {
      fail(ErrorKind::kDataIntegrity, "task id collision for " + c.payload_ref);
    }
    batch += rec.dump() + "\n";
    recs.push_back(std::move(rec));
  }
  if (recs.empty()) return 0;
  append(batch);
  for (const auto& r : recs) apply(r);
  return recs.size();
}

std::optional<AnnotationTask> LabelStore::next_task(Stage stage, std::string_view annotator) {
  if (annotator.empty()) fail(ErrorKind::kValidation, "annotator id required");
  std::unique_lock lock(mu_);
  const auto now = clock_();
  AnnotationTask* pick = nullptr;
  for (auto& t : tasks_) {
    if (t.stage != stage || t.status != TaskStatus::kPending) continue;
    const bool live = t.lease_holder && t.lease_expires_ms > now;
    if (live && *t.lease_holder == annotator) {
      pick = &t;
      break;
    }
    if (!live && pick == nullptr) pick = &t;
  }
  if (pick == nullptr) return std::nullopt;
  pick->lease_holder = std::string(annotator);
  pick->lease_expires_ms = now + lease_ms_;
  return *pick;
}

LabelAck LabelStore::submit_label(std::string_view task_id, std::string_view verdict, std::string_view annotator) {
  const Verdict v = parse_verdict(verdict);
  if (annotator.empty()) fail(ErrorKind::kValidation, "annotator id required");
  std::unique_lock lock(mu_);
  auto it = by_id_.find(task_id);
  if (it == by_id_.end()) fail(ErrorKind::kNotFound, "unknown task_id '" + std::string(task_id) + "'");
  const bool superseded = !tasks_[it->second].labels.empty();
  const json rec = {{"type", "label"},
                    {"task_id", std::string(task_id)},
                    {"verdict", to_string(v)},
                    {"annotator", std::string(annotator)},
                    {"timestamp_ms", clock_()}};
  append(rec.dump() + "\n");
  apply(rec);
  return {std::string(task_id), v, superseded};
}

void LabelStore::skip_task(std::string_view task_id, std::string_view annotator) {
  std::unique_lock lock(mu_);
  auto it = by_id_.find(task_id);
  if (it == by_id_.end()) fail(ErrorKind::kNotFound, "unknown task_id '" + std::string(task_id) + "'");
  const json rec = {{"type", "skip"},
                    {"task_id", std::string(task_id)},
                    {"annotator", std::string(annotator)},
                    {"timestamp_ms", clock_()}};
  append(rec.dump() + "\n");
  apply(rec);
}

LabelExport LabelStore::export_labels(Stage stage) const {
  std::shared_lock lock(mu_);
  LabelExport out;
  out.stage = stage;
  for (const auto& t : tasks_) {
    if (t.stage != stage || t.labels.empty()) continue;
    const auto& last = t.labels.back();
    ExportItem item{t.task_id, t.payload_ref, t.context, last.annotator_id};
    if (last.verdict == Verdict::kPositive) out.positives.push_back(std::move(item));
    if (last.verdict == Verdict::kNegative) out.negatives.push_back(std::move(item));
  }
  auto by_ref = [](const ExportItem& a, const ExportItem& b) { return a.payload_ref < b.payload_ref; };
  std::sort(out.positives.begin(), out.positives.end(), by_ref);
  std::sort(out.negatives.begin(), out.negatives.end(), by_ref);
  return out;
}

Progress LabelStore::progress(Stage stage) const {
  std::shared_lock lock(mu_);
  const auto now = clock_();
  Progress p;
  for (const auto& t : tasks_) {
    if (t.stage != stage) continue;
    switch (t.status) {
      case TaskStatus::kPending:
        (t.lease_holder && t.lease_expires_ms > now ? p.leased : p.pending)++;
        break;
      case TaskStatus::kLabeled: ++p.labeled; break;
      case TaskStatus::kSkipped: ++p.skipped; break;
    }
  }
  return p;
}

std::optional<AnnotationTask> LabelStore::find(std::string_view task_id) const {
  std::shared_lock lock(mu_);
  auto it = by_id_.find(task_id);
  if (it == by_id_.end()) return std::nullopt;
  return tasks_[it->second];
}

std::size_t LabelStore::size() const {
  std::shared_lock lock(mu_);
  return tasks_.size();
}

void LabelStore::compact() {
  std::unique_lock lock(mu_);
  std::string live;
  std::string archive;
  for (const auto& t : tasks_) {
    live += json{{"type", "task"},
                 {"task_id", t.task_id},
                 {"stage", to_string(t.stage)},
                 {"payload_ref", t.payload_ref},
                 {"context", t.context}}
                .dump() +
            "\n";
  }
  for (const auto& t : tasks_) {
    for (std::size_t i = 0; i < t.labels.size(); ++i) {
      const auto& l = t.labels[i];
      const auto rec = json{{"type", "label"},
                            {"task_id", t.task_id},
                            {"verdict", to_string(l.verdict)},
                            {"annotator", l.annotator_id},
                            {"timestamp_ms", l.timestamp_ms}}
                           .dump() +
                       "\n";
      (i + 1 == t.labels.size() ? live : archive) += rec;
    }
    if (t.status == TaskStatus::kSkipped) {
      live += json{{"type", "skip"}, {"task_id", t.task_id}, {"annotator", ""}, {"timestamp_ms", 0}}.dump() + "\n";
    }
  }
  if (!archive.empty()) {
    const auto archive_path = dir_ / "archive.jsonl";
    std::string existing = std::filesystem::exists(archive_path) ? read_file(archive_path) : std::string();
    write_file_atomic(archive_path, existing + archive);
  }
  write_file_atomic(log_path_, live);
  for (auto& t : tasks_) {
    if (t.labels.size() > 1) t.labels.erase(t.labels.begin(), t.labels.end() - 1);
  }
}

std::optional<std::filesystem::path> resolve_media_path(const std::filesystem::path& root, std::string_view ref) {
  if (ref.empty() || root.empty()) return std::nullopt;
  const std::filesystem::path rel(ref);
  if (rel.is_absolute()) return std::nullopt;
  for (const auto& part : rel) {
    if (part == ".." || part == ".") return std::nullopt;
  }
  return root / rel;
}

// ---------------------------------------------------------------------------

struct AnnotationServer::Impl {
  LabelStore& store;
  ServerOptions options;
  httplib::Server server;
  std::jthread thread;
  int port = 0;

  Impl(LabelStore& s, ServerOptions o) : store(s), options(std::move(o)) { routes(); }

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void reply_error(httplib::Response& res, const Error& e) {
    int status = 400;
    if (e.kind() == ErrorKind::kNotFound) status = 404;
    if (e.kind() == ErrorKind::kIo || e.kind() == ErrorKind::kDataIntegrity) status = 500;
    reply(res, status, {{"error", to_string(e.kind())}, {"message", e.what()}});
  }

  template <typename Fn>
  static void guarded(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      reply_error(res, e);
    } catch (const json::exception& e) {
      reply(res, 400, {{"error", "validation"}, {"message", e.what()}});
    }
  }

  static std::string param(const httplib::Request& req, const char* name) {
    if (!req.has_param(name)) fail(ErrorKind::kValidation, std::string("missing query parameter '") + name + "'");
    return req.get_param_value(name);
  }

  void routes() {
    server.Get("/tasks/next", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto stage = parse_stage(param(req, "stage"));
        const auto task = store.next_task(stage, param(req, "annotator"));
        reply(res, 200, {{"task", task ? task->to_json() : json(nullptr)}});
      });
    });
    server.Post("/labels", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = json::parse(req.body);
        const auto ack = store.submit_label(body.at("task_id").get<std::string>(),
                                            body.at("verdict").get<std::string>(),
                                            body.at("annotator").get<std::string>());
        reply(res, 200,
              {{"ok", true},
                {"task_id", ack.task_id},
                {"verdict", to_string(ack.verdict)},
                {"superseded", ack.superseded}});
      });
    });
    server.Post("/tasks/skip", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = json::parse(req.body);
        store.skip_task(body.at("task_id").get<std::string>(), body.at("annotator").get<std::string>());
        reply(res, 200, {{"ok", true}});
      });
    });
    server.Get("/export", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, store.export_labels(parse_stage(param(req, "stage"))).to_json()); });
    });
    server.Get("/progress", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto p = store.progress(parse_stage(param(req, "stage")));
        reply(res, 200, {{"pending", p.pending}, {"leased", p.leased}, {"labeled", p.labeled}, {"skipped", p.skipped}});
      });
    });
    server.Get(R"(/media/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto path = resolve_media_path(options.media_root, req.matches[1].str());
      if (!path || !std::filesystem::is_regular_file(*path)) {
        reply(res, 404, {{"error", "not_found"}, {"message", "no such media"}});
        return;
      }
      const auto ext = path->extension().string();
      std::string type = "application/octet-stream";
      if (ext == ".wav") type = "audio/wav";
      if (ext == ".mp3") type = "audio/mpeg";
      if (ext == ".jpg" || ext == ".jpeg") type = "image/jpeg";
      if (ext == ".png") type = "image/png";
      if (ext == ".mp4") type = "video/mp4";
      res.set_content(read_file(*path), type);
    });
    if (!options.ui_dir.empty() && std::filesystem::is_directory(options.ui_dir)) {
      server.set_mount_point("/", options.ui_dir.string());
    }
  }
};

AnnotationServer::AnnotationServer(LabelStore& store, ServerOptions options)
    : impl_(std::make_unique<Impl>(store, std::move(options))) {}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind(const std::string& host, int port) {
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
  } else {
    impl_->port = impl_->server.bind_to_port(host, port) ? port : -1;
  }
  if (impl_->port < 0) fail(ErrorKind::kIo, "cannot bind " + host + ":" + std::to_string(port));
  return impl_->port;
}

void AnnotationServer::listen() { impl_->server.listen_after_bind(); }

int AnnotationServer::start(const std::string& host, int port) {
  const int bound = bind(host, port);
  impl_->thread = std::jthread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void AnnotationServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace dyad::anno
