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

#ifndef DYADKIT_PIPELINE_HPP_
#define DYADKIT_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dyadkit/cropper.hpp"
#include "dyadkit/datamodel.hpp"
#include "dyadkit/hostid.hpp"
#include "dyadkit/ingest.hpp"

namespace dyad {

/// Where labels for a calibration stage come from.
enum class LabelSource { kFile, kStore };
std::string_view to_string(LabelSource s);
LabelSource parse_label_source(std::string_view s);

struct InputPaths {
  std::filesystem::path episodes;
  std::filesystem::path tracking_logs;  // directory of per-episode logs
  std::filesystem::path diarization;
  std::filesystem::path speaker_embeddings;
  std::filesystem::path face_embeddings;
  std::filesystem::path audio_labels;
  std::filesystem::path face_labels;
  std::filesystem::path pseudo_labels;  // optional held-out speech labels
  std::filesystem::path media_root;
};

struct SegmentConfig {
  FrameIndex max_gap = 12;
  double min_len_s = 2.0;  // converted to frames with each episode's fps
  double min_confidence = 0.5;
};

struct AudioConfig {
  double tail = 0.01;
  double merge_gap_s = 0.5;
  LabelSource labels = LabelSource::kFile;
};

struct FaceConfig {
  int n_boot = 200;
  std::optional<double> tau;  // skips bootstrap calibration when set
  double theta_new = 0.45;
  double vote_fraction = 0.5;
  VotingMode voting = VotingMode::kPerTrack;
  std::uint64_t seed = 0x5eed;
  LabelSource labels = LabelSource::kFile;
};

struct AnnotationConfig {
  std::filesystem::path data_dir;
  double speech_fraction = 0.10;
  double face_fraction = 0.10;
  int lease_s = 120;
  std::string bind = "127.0.0.1";
  int port = 8080;
  std::filesystem::path ui_dir;
};

struct PipelineConfig {
  InputPaths inputs;
  std::filesystem::path output_dir;
  int workers = 1;
  ParseOptions ingest;
  SegmentConfig segment;
  SplitRatios split;
  SplitGrouping split_by = SplitGrouping::kClip;
  AudioConfig audio;
  FaceConfig face;
  PairParams pairs;
  RenderSpec render;
  bool execute_renders = false;
  AnnotationConfig annotation;

  /// Range-checks every tunable; throws a configuration error naming the key.
  void validate() const;
  /// Canonical `key = value` listing of every setting, one per line.
  std::string canonical_text() const;
};

/// Parses YAML text. Relative paths resolve against `base_dir`. Each override
/// is `dotted.key=value`, applied before validation. Unknown keys are errors.
PipelineConfig parse_pipeline_config(std::string_view yaml, const std::filesystem::path& base_dir,
                                     std::span<const std::string> overrides = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

struct StageReport {
  std::string stage;
  bool up_to_date = false;
  std::size_t items_in = 0;
  std::size_t items_out = 0;
  std::map<std::string, std::size_t> rejections;  // reason -> count
  double wall_s = 0;
  nlohmann::json details = nlohmann::json::object();

  std::string summary() const;
  nlohmann::json to_json() const;
};

/// Stage runner over one output directory. Stage outputs are plain files;
/// each stage records a content stamp of its inputs and settings under
/// `.stamps` and skips work when the stamp is unchanged.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  /// Stages in run-all order.
  static const std::vector<std::string>& batch_stages();

  StageReport run_stage(std::string_view name);
  std::vector<StageReport> run_all(const std::function<void(const StageReport&)>& on_stage = {});

  /// Creates annotation tasks for "host_speech" or "host_face".
  StageReport make_tasks(std::string_view annotation_stage);

  const PipelineConfig& config() const { return config_; }
  std::filesystem::path out(std::string_view relative) const;

 private:
  StageReport ingest();
  StageReport segment();
  StageReport calibrate_audio();
  StageReport calibrate_face();
  StageReport assign_ids();
  StageReport derive_pairs();
  StageReport plan_renders();
  StageReport stats();

  void require(std::string_view stage, std::string_view relative, std::string_view producer) const;
  void journal(const StageReport& report);

  PipelineConfig config_;
};

/// Runs `fn(i)` for every i in [0, n) on up to `workers` threads. When calls
/// throw, the exception from the lowest index is rethrown after all finish.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace dyad

#endif  // DYADKIT_PIPELINE_HPP_
