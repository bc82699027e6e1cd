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

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <system_error>

#include <fcntl.h>
#include <unistd.h>

#include "dyadkit/error.hpp"
#include "dyadkit/hash.hpp"
#include "dyadkit/robust_stats.hpp"
#include "dyadkit/textio.hpp"

namespace dyad {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo: return "io";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kCalibration: return "calibration";
    case ErrorKind::kLookup: return "lookup";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kPrecondition: return "precondition";
    case ErrorKind::kNotFound: return "not_found";
    case ErrorKind::kMissingPrerequisite: return "missing_prerequisite";
    case ErrorKind::kDataIntegrity: return "data_integrity";
  }
  return "unknown";
}

std::string ContentHasher::hex() const {
  char buf[33];
  std::snprintf(buf, sizeof(buf), "%016llx%016llx",
                static_cast<unsigned long long>(mix64(a_)),
                static_cast<unsigned long long>(mix64(b_)));
  return buf;
}

std::string format_double(double v) {
  if (v == 0.0) return "0";  // folds -0 into a single spelling
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

std::optional<double> parse_double(std::string_view token) {
  if (token.empty()) return std::nullopt;
  if (token.front() == '+') token.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) return std::nullopt;
  return v;
}

std::optional<std::int64_t> parse_int(std::string_view token) {
  if (token.empty()) return std::nullopt;
  if (token.front() == '+') token.remove_prefix(1);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) return std::nullopt;
  return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

bool is_plain_token(std::string_view token) {
  if (token.empty() || token.front() == '#') return false;
  return std::none_of(token.begin(), token.end(), [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) || c == '\0';
  });
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorKind::kIo, "read failed: " + path.string());
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  int fd = ::open(tmp.c_str(), O_CREAT | O_TRUNC | O_WRONLY, 0644);
  if (fd < 0) fail(ErrorKind::kIo, "cannot create " + tmp.string());
  std::size_t written = 0;
  while (written < content.size()) {
    ssize_t n = ::write(fd, content.data() + written, content.size() - written);
    if (n < 0) {
      ::close(fd);
      fail(ErrorKind::kIo, "write failed: " + tmp.string());
    }
    written += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kIo, "rename failed: " + path.string() + ": " + ec.message());
}

bool LineReader::next(std::string_view& line) {
  if (pos_ >= text_.size()) return false;
  auto nl = text_.find('\n', pos_);
  if (nl == std::string_view::npos) nl = text_.size();
  line = text_.substr(pos_, nl - pos_);
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  pos_ = nl + 1;
  ++line_no_;
  return true;
}

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) fail(ErrorKind::kPrecondition, "quantile of empty sample");
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  if (frac == 0.0) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double quantile(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, p);
}

double precision(const BinaryCounts& c) {
  const long d = c.true_pos + c.false_pos;
  return d == 0 ? 0.0 : static_cast<double>(c.true_pos) / static_cast<double>(d);
}

double recall(const BinaryCounts& c) {
  const long d = c.true_pos + c.false_neg;
  return d == 0 ? 0.0 : static_cast<double>(c.true_pos) / static_cast<double>(d);
}

double f1_score(const BinaryCounts& c) {
  const long d = 2 * c.true_pos + c.false_pos + c.false_neg;
  return d == 0 ? 0.0 : 2.0 * static_cast<double>(c.true_pos) / static_cast<double>(d);
}

}  // namespace dyad
