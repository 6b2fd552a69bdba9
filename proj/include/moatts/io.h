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

#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "moatts/tensor.h"

namespace moatts {

// On-disk container shared by checkpoints, utterance payloads, mel dumps and
// embedding caches: an 8-byte little-endian header length, a JSON header, then
// the raw little-endian 64-bit float payload of all arrays back to back.
// Round-trips are bit-exact.

struct NamedArray {
  std::string name;
  std::vector<size_t> shape;
  std::vector<double> data;
};

struct TensorFile {
  nlohmann::json meta;
  std::vector<NamedArray> arrays;

  bool has(const std::string& name) const;
  const NamedArray& get(const std::string& name) const;
};

// Writes via a temp file in the same directory followed by rename.
void write_tensor_file(const std::string& path, const nlohmann::json& meta,
                       const std::vector<NamedArray>& arrays);
TensorFile read_tensor_file(const std::string& path);

}  // namespace moatts
