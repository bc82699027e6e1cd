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

#ifndef DYADKIT_TEXTIO_HPP_
#define DYADKIT_TEXTIO_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dyad {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

std::optional<double> parse_double(std::string_view token);
std::optional<std::int64_t> parse_int(std::string_view token);

/// Splits on runs of ASCII whitespace.
std::vector<std::string_view> split_ws(std::string_view line);

/// True if the token can be written into a whitespace-delimited record.
bool is_plain_token(std::string_view token);

std::string read_file(const std::filesystem::path& path);

/// Writes via a sibling temp file and rename so readers never observe a
/// partially written file.
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view content);

/// Iterates lines of a text buffer; strips a trailing '\r'.
class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}
  bool next(std::string_view& line);
  std::size_t line_number() const { return line_no_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
};

/// Blank lines and lines starting with '#' carry no record.
inline bool is_blank_or_comment(std::string_view line) {
  for (char c : line) {
    if (c == '#') return true;
    if (c != ' ' && c != '\t') return false;
  }
  return true;
}

}  // namespace dyad

#endif  // DYADKIT_TEXTIO_HPP_
