// Copyright 2026 The stale-lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stale/common.hpp"

namespace stale {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian");

using json = nlohmann::json;

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

inline void write_json_file(const std::filesystem::path& path, const json& j,
                            int indent = 2) {
  std::filesystem::create_directories(path.parent_path().empty()
                                          ? "."
                                          : path.parent_path());
  std::ofstream out(path);
  require(out.good(), "cannot write " + path.string());
  out << j.dump(indent) << "\n";
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& text) {
  std::filesystem::create_directories(path.parent_path().empty()
                                          ? "."
                                          : path.parent_path());
  std::ofstream out(path);
  require(out.good(), "cannot write " + path.string());
  out << text;
}

// ---- feature blobs ----
//
// Precomputed snippet features travel as a raw little-endian float32
// blob (row-major) plus a JSON sidecar carrying the shape and stream
// layout. Keeps real extractor outputs ingestible with zero framework
// dependencies.

template <class S>
void write_feature_blob(const std::filesystem::path& blob_path,
                        const Mat<S>& features,
                        const json& streams = json::object()) {
  std::vector<float> buf(static_cast<std::size_t>(features.size()));
  std::size_t at = 0;
  for (Index i = 0; i < features.rows(); ++i)
    for (Index j = 0; j < features.cols(); ++j)
      buf[at++] = static_cast<float>(features(i, j));
  std::filesystem::create_directories(blob_path.parent_path().empty()
                                          ? "."
                                          : blob_path.parent_path());
  std::ofstream out(blob_path, std::ios::binary);
  require(out.good(), "cannot write " + blob_path.string());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));

  json side;
  side["shape"] = {features.rows(), features.cols()};
  side["dtype"] = "f32";
  side["layout"] = "row_major";
  if (!streams.empty()) side["streams"] = streams;
  write_json_file(blob_path.string() + ".json", side);
}

template <class S>
Mat<S> read_feature_blob(const std::filesystem::path& blob_path) {
  const json side = read_json_file(blob_path.string() + ".json");
  require(side.contains("shape") && side["shape"].size() == 2,
          "feature sidecar missing shape: " + blob_path.string());
  require(side.value("dtype", "f32") == "f32",
          "feature blobs must be f32: " + blob_path.string());
  const Index rows = side["shape"][0].get<Index>();
  const Index cols = side["shape"][1].get<Index>();
  require(rows >= 1 && cols >= 1, "bad feature shape: " + blob_path.string());

  std::ifstream in(blob_path, std::ios::binary);
  require(in.good(), "cannot open " + blob_path.string());
  std::vector<float> buf(static_cast<std::size_t>(rows * cols));
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  require(in.gcount() ==
              static_cast<std::streamsize>(buf.size() * sizeof(float)),
          "feature blob truncated: " + blob_path.string());

  Mat<S> m(rows, cols);
  std::size_t at = 0;
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<S>(buf[at++]);
  require(all_finite(m), "non-finite feature values: " + blob_path.string());
  return m;
}

// ---- named-tensor container ----
//
// One file: magic, u64 manifest length, manifest JSON, then the raw
// payloads back to back. The manifest lists name/shape/dtype/offset per
// tensor plus a free-form "meta" object. dtype is "f32" or "f64".

inline constexpr char kTensorMagic[8] = {'S', 'T', 'A', 'L',
                                         'E', 'T', 'C', '1'};

template <class S>
struct NamedTensors {
  std::vector<std::pair<std::string, Mat<S>>> tensors;
  json meta = json::object();

  void add(const std::string& name, const Mat<S>& m) {
    tensors.emplace_back(name, m);
  }
  const Mat<S>* find(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return &m;
    return nullptr;
  }
};

template <class S>
void write_named_tensors(const std::filesystem::path& path,
                         const NamedTensors<S>& nt) {
  const bool f64 = sizeof(S) == 8;
  json manifest;
  manifest["dtype"] = f64 ? "f64" : "f32";
  manifest["meta"] = nt.meta;
  manifest["tensors"] = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : nt.tensors) {
    manifest["tensors"].push_back({{"name", name},
                                   {"rows", m.rows()},
                                   {"cols", m.cols()},
                                   {"offset", offset}});
    offset += static_cast<std::uint64_t>(m.size()) * sizeof(S);
  }
  const std::string mjson = manifest.dump();

  std::filesystem::create_directories(
      path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write " + path.string());
  out.write(kTensorMagic, sizeof(kTensorMagic));
  const std::uint64_t mlen = mjson.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
  for (const auto& [name, m] : nt.tensors) {
    // row-major payload
    std::vector<S> buf(static_cast<std::size_t>(m.size()));
    std::size_t at = 0;
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) buf[at++] = m(i, j);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(S)));
  }
}

template <class S>
NamedTensors<S> read_named_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  require(in.gcount() == 8 && std::memcmp(magic, kTensorMagic, 8) == 0,
          "not a tensor container: " + path.string());
  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  std::string mjson(mlen, '\0');
  in.read(mjson.data(), static_cast<std::streamsize>(mlen));
  json manifest;
  try {
    manifest = json::parse(mjson);
  } catch (const json::exception& e) {
    throw DataError("bad container manifest: " + std::string(e.what()));
  }
  const std::string dtype = manifest.value("dtype", "f32");
  const bool f64 = dtype == "f64";
  require(f64 || dtype == "f32", "unknown dtype: " + dtype);
  require((f64 ? 8 : 4) == sizeof(S),
          "container dtype " + dtype + " does not match requested precision");

  NamedTensors<S> nt;
  nt.meta = manifest.value("meta", json::object());
  for (const auto& t : manifest["tensors"]) {
    const Index rows = t["rows"].get<Index>();
    const Index cols = t["cols"].get<Index>();
    std::vector<S> buf(static_cast<std::size_t>(rows * cols));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(S)));
    require(in.gcount() ==
                static_cast<std::streamsize>(buf.size() * sizeof(S)),
            "container truncated: " + path.string());
    Mat<S> m(rows, cols);
    std::size_t at = 0;
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = buf[at++];
    nt.add(t["name"].get<std::string>(), m);
  }
  return nt;
}

}  // namespace stale
