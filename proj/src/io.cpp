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

#include "moatts/io.h"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "payloads are little-endian; big-endian hosts are unsupported");

namespace moatts {

namespace fs = std::filesystem;

bool TensorFile::has(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

const NamedArray& TensorFile::get(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw IoError("tensor file has no array named '" + name + "'");
}

void write_tensor_file(const std::string& path, const nlohmann::json& meta,
                       const std::vector<NamedArray>& arrays) {
  nlohmann::json header;
  header["format"] = "moatts-tensors-v1";
  header["meta"] = meta;
  header["arrays"] = nlohmann::json::array();
  size_t offset = 0;
  for (const auto& a : arrays) {
    size_t n = shape_product(a.shape);
    if (n != a.data.size())
      throw IoError("array '" + a.name + "' shape/data mismatch");
    header["arrays"].push_back(
        {{"name", a.name}, {"shape", a.shape}, {"offset", offset}});
    offset += n;
  }
  std::string hs = header.dump();

  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& a : arrays)
      out.write(reinterpret_cast<const char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

TensorFile read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in) throw IoError("truncated header in '" + path + "'");
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IoError("truncated header in '" + path + "'");
  nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "moatts-tensors-v1")
    throw IoError("'" + path + "' is not a moatts tensor file");

  TensorFile tf;
  tf.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header["arrays"]) {
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<size_t>>();
    a.data.resize(shape_product(a.shape));
    tf.arrays.push_back(std::move(a));
  }
  for (auto& a : tf.arrays) {
    in.read(reinterpret_cast<char*>(a.data.data()),
            static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    if (!in) throw IoError("truncated payload in '" + path + "'");
  }
  return tf;
}

}  // namespace moatts
