// Copyright (c) 2026 The moatts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdio>
#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "moatts/io.h"
#include "moatts/rng.h"

using namespace moatts;

namespace {

std::string temp_path(const char* stem) {
  return (std::filesystem::temp_directory_path() /
          (std::string("moatts_io_test_") + stem + ".bin"))
      .string();
}

}  // namespace

TEST_CASE("tensor file round-trip is bit-exact") {
  Rng rng(99);
  std::vector<NamedArray> arrays;
  arrays.push_back({"weights", {3, 4}, {}});
  for (int i = 0; i < 12; ++i) arrays[0].data.push_back(rng.normal());
  arrays.push_back({"bias", {4}, {1e-300, -0.0, 3.14159, 1e300}});
  nlohmann::json meta{{"kind", "test"}, {"seed", 99}};

  std::string path = temp_path("roundtrip");
  write_tensor_file(path, meta, arrays);
  TensorFile f = read_tensor_file(path);

  CHECK(f.meta.at("kind") == "test");
  CHECK(f.meta.at("seed") == 99);
  REQUIRE(f.arrays.size() == 2);
  for (size_t a = 0; a < arrays.size(); ++a) {
    CHECK(f.arrays[a].name == arrays[a].name);
    CHECK(f.arrays[a].shape == arrays[a].shape);
    REQUIRE(f.arrays[a].data.size() == arrays[a].data.size());
    for (size_t i = 0; i < arrays[a].data.size(); ++i) {
      // Bit-level comparison: signed zeros and subnormals must survive.
      CHECK(std::memcmp(&f.arrays[a].data[i], &arrays[a].data[i],
                        sizeof(double)) == 0);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("tensor file lookup and errors") {
  std::string path = temp_path("lookup");
  write_tensor_file(path, {{"v", 1}}, {{"a", {2}, {1.0, 2.0}}});
  TensorFile f = read_tensor_file(path);
  CHECK(f.has("a"));
  CHECK_FALSE(f.has("missing"));
  CHECK(f.get("a").data[1] == 2.0);
  CHECK_THROWS_AS(f.get("missing"), IoError);
  std::remove(path.c_str());

  CHECK_THROWS_AS(read_tensor_file("/nonexistent/dir/nothing.bin"), IoError);
}

TEST_CASE("tensor file rejects shape/data mismatch") {
  std::string path = temp_path("mismatch");
  CHECK_THROWS_AS(
      write_tensor_file(path, {}, {{"bad", {2, 2}, {1.0, 2.0, 3.0}}}),
      IoError);
}

TEST_CASE("write is atomic: no temp file left behind") {
  std::string path = temp_path("atomic");
  write_tensor_file(path, {}, {{"a", {1}, {42.0}}});
  CHECK(std::filesystem::exists(path));
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
  std::remove(path.c_str());
}
