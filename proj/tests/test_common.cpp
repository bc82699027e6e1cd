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

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "dyadkit/hash.hpp"
#include "dyadkit/robust_stats.hpp"
#include "dyadkit/textio.hpp"
#include "support.hpp"

namespace dyad {
namespace {

using testing::error_kind;
using testing::TempDir;

TEST_CASE("fnv1a64 matches published test vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("unit_interval_hash stays in [0, 1) and is deterministic") {
  for (int i = 0; i < 2000; ++i) {
    const std::string key = "clip-" + std::to_string(i);
    const double u = unit_interval_hash(key);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(u == unit_interval_hash(key));
  }
}

TEST_CASE("ContentHasher separates field boundaries") {
  ContentHasher a;
  a.update("ab");
  a.update("c");
  ContentHasher b;
  b.update("a");
  b.update("bc");
  CHECK(a.hex() != b.hex());
  CHECK(a.hex().size() == 32);
  ContentHasher c;
  c.update("ab");
  c.update("c");
  CHECK(a.hex() == c.hex());
}

TEST_CASE("format_double round-trips and folds negative zero") {
  CHECK(format_double(0.0) == "0");
  CHECK(format_double(-0.0) == "0");
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(25) == "25");
  CHECK(format_double(-2.5) == "-2.5");
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng);
    CHECK(*parse_double(format_double(v)) == v);
  }
}

TEST_CASE("parse_double and parse_int reject junk") {
  CHECK(parse_double("1.5") == 1.5);
  CHECK(parse_double("+2") == 2.0);
  CHECK_FALSE(parse_double("1.5x").has_value());
  CHECK_FALSE(parse_double("").has_value());
  CHECK(parse_int("-12") == -12);
  CHECK(parse_int("+7") == 7);
  CHECK_FALSE(parse_int("1.0").has_value());
  CHECK_FALSE(parse_int("abc").has_value());
}

TEST_CASE("split_ws and LineReader") {
  const auto f = split_ws("  a\tb   c ");
  REQUIRE(f.size() == 3);
  CHECK(f[0] == "a");
  CHECK(f[2] == "c");
  LineReader r("x\r\n\ny");
  std::string_view line;
  std::vector<std::string> lines;
  while (r.next(line)) lines.emplace_back(line);
  CHECK(lines == std::vector<std::string>{"x", "", "y"});
  CHECK(r.line_number() == 3);
  CHECK(is_blank_or_comment("   # note"));
  CHECK(is_blank_or_comment(""));
  CHECK_FALSE(is_blank_or_comment(" a # b"));
}

TEST_CASE("write_file_atomic replaces content and leaves no temp files") {
  TempDir dir;
  const auto p = dir / "nested/out.txt";
  write_file_atomic(p, "one");
  write_file_atomic(p, "two");
  CHECK(read_file(p) == "two");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(p.parent_path())) ++entries;
  CHECK(entries == 1);
  CHECK(error_kind([&] { read_file(dir / "missing.txt"); }) == ErrorKind::kIo);
}

TEST_CASE("type-7 quantile matches reference values") {
  // Reference values follow the linear interpolation rule used by numpy's
  // default percentile, worked by hand.
  CHECK(quantile({1, 2, 3, 4}, 0.25) == doctest::Approx(1.75).epsilon(1e-15));
  CHECK(quantile({1, 2, 3, 4}, 0.5) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(quantile({9, 7, 5, 3, 1}, 0.9) == doctest::Approx(8.2).epsilon(1e-15));
  CHECK(quantile({4}, 0.3) == 4);
  CHECK(quantile({1, 2}, 0.0) == 1);
  CHECK(quantile({1, 2}, 1.0) == 2);
  CHECK(error_kind([] { quantile({}, 0.5); }) == ErrorKind::kPrecondition);
}

TEST_CASE("quantile is monotone in p") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n;
  std::vector<double> xs(101);
  for (auto& x : xs) x = n(rng);
  double prev = -std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 100; ++i) {
    const double q = quantile(xs, i / 100.0);
    CHECK(q >= prev);
    prev = q;
  }
}

TEST_CASE("binary metrics") {
  BinaryCounts c{8, 2, 2, 88};
  CHECK(precision(c) == doctest::Approx(0.8));
  CHECK(recall(c) == doctest::Approx(0.8));
  CHECK(f1_score(c) == doctest::Approx(0.8));
  CHECK(f1_score(BinaryCounts{}) == 0.0);
  CHECK(f1_score(BinaryCounts{5, 0, 0, 5}) == 1.0);
}

}  // namespace
}  // namespace dyad
