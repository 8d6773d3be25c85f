// Copyright 2026 The cnx Authors. All Rights Reserved.
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

#include <array>
#include <cctype>
#include <map>
#include <sstream>
#include <string>

#include "cnx/error.hpp"
#include "cnx/tensor.hpp"
#include "cnx/weights_io.hpp"

// Image inputs: binary PPM (P6, maxval <= 255) or a container file holding a
// ready-normalized "fixture.input" tensor. Resizing is the caller's job.

namespace cnx {

struct Normalization {
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> std{0.229f, 0.224f, 0.225f};
};

namespace detail {

inline std::array<float, 3> parse_triple(const std::string& text, const std::string& key) {
  std::array<float, 3> out{};
  std::stringstream ss(text);
  std::string item;
  std::size_t i = 0;
  try {
    while (std::getline(ss, item, ',')) {
      require(i < 3, ErrorKind::kMalformed, "metadata '" + key + "' must hold three values");
      out[i++] = std::stof(item);
    }
  } catch (const std::logic_error&) {
    fail(ErrorKind::kMalformed, "metadata '" + key + "' is not a list of numbers");
  }
  require(i == 3, ErrorKind::kMalformed, "metadata '" + key + "' must hold three values");
  return out;
}

}  // namespace detail

/// Reads "input_mean" / "input_std"; absent keys keep the ImageNet defaults.
inline Normalization normalization_from(const std::map<std::string, std::string>& meta) {
  Normalization n;
  if (auto it = meta.find("input_mean"); it != meta.end()) n.mean = detail::parse_triple(it->second, "input_mean");
  if (auto it = meta.find("input_std"); it != meta.end()) n.std = detail::parse_triple(it->second, "input_std");
  for (float s : n.std) require(s > 0, ErrorKind::kMalformed, "input_std entries must be positive");
  return n;
}

/// Decodes P6 bytes to 1 x H x W x 3, value = (byte / maxval - mean) / std.
inline Tensor decode_ppm(const std::string& bytes, const Normalization& norm) {
  std::size_t pos = 0;
  auto token = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) t += bytes[pos++];
    return t;
  };
  require(token() == "P6", ErrorKind::kBadMagic, "image: not a binary PPM (P6) file");
  std::int64_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(token());
    h = std::stoll(token());
    maxval = std::stoll(token());
  } catch (const std::logic_error&) {
    fail(ErrorKind::kMalformed, "image: bad PPM header");
  }
  require(w > 0 && h > 0 && maxval > 0 && maxval <= 255, ErrorKind::kMalformed, "image: unsupported PPM header");
  ++pos;  // single whitespace byte before the raster
  const std::size_t need = static_cast<std::size_t>(w * h * 3);
  require(pos <= bytes.size() && bytes.size() - pos >= need, ErrorKind::kTruncated, "image: PPM raster truncated");
  Tensor out({1, h, w, 3});
  for (std::size_t i = 0; i < need; ++i) {
    const float v = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<float>(maxval);
    out[i] = (v - norm.mean[i % 3]) / norm.std[i % 3];
  }
  return out;
}

inline std::string encode_ppm(const std::vector<unsigned char>& rgb, std::int64_t h, std::int64_t w) {
  require(static_cast<std::int64_t>(rgb.size()) == h * w * 3, ErrorKind::kShape, "encode_ppm: raster size mismatch");
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.append(rgb.begin(), rgb.end());
  return out;
}

/// Loads a PPM (normalized with `norm`) or a container's "fixture.input".
inline Tensor load_image(const std::string& path, const Normalization& norm) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= sizeof(kWeightMagic) && bytes.compare(0, sizeof(kWeightMagic), kWeightMagic, sizeof(kWeightMagic)) == 0) {
    const WeightStore store = decode(bytes);
    const StoreEntry* e = store.find(kFixtureInput);
    require(e != nullptr, ErrorKind::kMissingEntry, "image: container has no 'fixture.input' entry");
    return e->as_f32();
  }
  return decode_ppm(bytes, norm);
}

}  // namespace cnx
