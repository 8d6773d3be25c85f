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

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "cnx/arch.hpp"
#include "cnx/error.hpp"
#include "cnx/graph.hpp"
#include "cnx/spec_io.hpp"
#include "cnx/tensor.hpp"
#include "json.hpp"

// Flat named-tensor container ("CNXW0001").
//
//   offset 0   8 bytes   magic "CNXW0001"
//   offset 8   8 bytes   header length L, unsigned little-endian
//   offset 16  L bytes   header: compact JSON, keys sorted
//                          {"entries":[{"dtype":"f32"|"f64",
//                                       "extents":[n,h,w,c],
//                                       "name":"...","nbytes":B,
//                                       "offset":O}, ...],
//                           "metadata":{"key":"value", ...},
//                           "payload_bytes":P}
//              zero padding up to the next multiple of 64
//   payload    P bytes; entry data at payload + O, O a multiple of 64,
//              IEEE-754 little-endian, zero padding between entries
//
// The file ends exactly at payload + P.

namespace cnx {

inline constexpr char kWeightMagic[8] = {'C', 'N', 'X', 'W', '0', '0', '0', '1'};
inline constexpr std::size_t kPayloadAlignment = 64;

enum class DType { kF32, kF64 };

inline std::size_t dtype_size(DType d) { return d == DType::kF32 ? 4 : 8; }
inline const char* dtype_name(DType d) { return d == DType::kF32 ? "f32" : "f64"; }

struct StoreEntry {
  std::string name;
  std::variant<Tensor, Tensor64> value;

  DType dtype() const { return value.index() == 0 ? DType::kF32 : DType::kF64; }
  Shape shape() const {
    return std::visit([](const auto& t) { return t.shape(); }, value);
  }
  Tensor as_f32() const {
    if (const auto* t = std::get_if<Tensor>(&value)) return *t;
    return std::get<Tensor64>(value).cast<float>();
  }
  Tensor64 as_f64() const {
    if (const auto* t = std::get_if<Tensor64>(&value)) return *t;
    return std::get<Tensor>(value).cast<double>();
  }
  friend bool operator==(const StoreEntry&, const StoreEntry&) = default;
};

class WeightStore {
 public:
  template <typename T>
  void add(std::string name, BasicTensor<T> t) {
    if (index_.contains(name)) fail(ErrorKind::kDuplicateName, "duplicate entry '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(t)});
  }

  const std::vector<StoreEntry>& entries() const { return entries_; }
  const StoreEntry* find(std::string_view name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }
  bool contains(std::string_view name) const { return find(name) != nullptr; }
  std::size_t size() const { return entries_.size(); }

  std::map<std::string, std::string>& metadata() { return metadata_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  friend bool operator==(const WeightStore& a, const WeightStore& b) {
    return a.entries_ == b.entries_ && a.metadata_ == b.metadata_;
  }

 private:
  std::vector<StoreEntry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::map<std::string, std::string> metadata_;
};

namespace detail {

inline std::size_t align_up(std::size_t v, std::size_t a) { return (v + a - 1) / a * a; }

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

template <typename T>
void put_values(std::string& out, std::span<const T> values) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (T v : values) {
    const Bits bits = std::bit_cast<Bits>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

template <typename T>
std::vector<T> get_values(const unsigned char* p, std::size_t count) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::vector<T> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    Bits bits = 0;
    for (int i = static_cast<int>(sizeof(T)) - 1; i >= 0; --i) bits = (bits << 8) | p[k * sizeof(T) + static_cast<std::size_t>(i)];
    out[k] = std::bit_cast<T>(bits);
  }
  return out;
}

}  // namespace detail

/// Encodes a store into container bytes.
inline std::string encode(const WeightStore& store) {
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& e : store.entries()) {
    const Shape s = e.shape();
    const std::size_t nbytes = static_cast<std::size_t>(s.numel()) * dtype_size(e.dtype());
    offset = detail::align_up(offset, kPayloadAlignment);
    offsets.push_back(offset);
    entries.push_back({{"name", e.name},
                       {"dtype", dtype_name(e.dtype())},
                       {"extents", {s.n, s.h, s.w, s.c}},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::size_t payload_bytes = offset;
  nlohmann::json header{{"entries", entries}, {"metadata", store.metadata()}, {"payload_bytes", payload_bytes}};
  const std::string text = header.dump();

  std::string out(kWeightMagic, sizeof(kWeightMagic));
  detail::put_u64(out, text.size());
  out += text;
  out.resize(detail::align_up(out.size(), kPayloadAlignment), '\0');
  const std::size_t payload_start = out.size();
  for (std::size_t i = 0; i < store.entries().size(); ++i) {
    out.resize(payload_start + offsets[i], '\0');
    std::visit([&](const auto& t) { detail::put_values(out, t.data()); }, store.entries()[i].value);
  }
  out.resize(payload_start + payload_bytes, '\0');
  return out;
}

/// Decodes container bytes, validating every structural invariant.
inline WeightStore decode(const std::string& bytes) {
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t prefix = std::min<std::size_t>(bytes.size(), sizeof(kWeightMagic));
  if (std::memcmp(bytes.data(), kWeightMagic, prefix) != 0 || prefix == 0)
    fail(ErrorKind::kBadMagic, "not a CNXW0001 container");
  if (bytes.size() < 16) fail(ErrorKind::kTruncated, "file ends inside the preamble");
  const std::uint64_t header_len = detail::get_u64(raw + 8);
  if (header_len > bytes.size() - 16) fail(ErrorKind::kTruncated, "file ends inside the header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kMalformed, std::string("header is not valid JSON: ") + e.what());
  }
  const std::size_t payload_start = detail::align_up(16 + header_len, kPayloadAlignment);

  WeightStore store;
  try {
    const std::uint64_t payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    if (bytes.size() < payload_start || bytes.size() - payload_start < payload_bytes)
      fail(ErrorKind::kTruncated, "payload shorter than the " + std::to_string(payload_bytes) + " bytes declared");
    if (bytes.size() - payload_start != payload_bytes)
      fail(ErrorKind::kHeaderMismatch, "file has trailing bytes beyond the declared payload");
    for (const auto& [k, v] : header.at("metadata").items()) store.metadata()[k] = v.get<std::string>();

    std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
    for (const auto& e : header.at("entries")) {
      const auto name = e.at("name").get<std::string>();
      const auto dtype_s = e.at("dtype").get<std::string>();
      if (dtype_s != "f32" && dtype_s != "f64") fail(ErrorKind::kMalformed, "entry '" + name + "': unknown dtype " + dtype_s);
      const DType dtype = dtype_s == "f32" ? DType::kF32 : DType::kF64;
      const auto ext = e.at("extents").get<std::vector<std::int64_t>>();
      if (ext.size() != 4 || std::any_of(ext.begin(), ext.end(), [](std::int64_t v) { return v < 1; }))
        fail(ErrorKind::kMalformed, "entry '" + name + "': extents must be four values >= 1");
      const Shape shape{ext[0], ext[1], ext[2], ext[3]};
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto nbytes = e.at("nbytes").get<std::uint64_t>();
      if (nbytes != static_cast<std::uint64_t>(shape.numel()) * dtype_size(dtype))
        fail(ErrorKind::kHeaderMismatch, "entry '" + name + "': nbytes " + std::to_string(nbytes) +
                                             " disagrees with extents " + to_string(shape));
      if (offset % kPayloadAlignment != 0)
        fail(ErrorKind::kMalformed, "entry '" + name + "': offset not 64-byte aligned");
      if (offset > payload_bytes || nbytes > payload_bytes - offset)
        fail(ErrorKind::kOutOfBounds, "entry '" + name + "' extends beyond the payload");
      spans.emplace_back(offset, offset + nbytes);
      if (store.contains(name)) fail(ErrorKind::kDuplicateName, "duplicate entry '" + name + "'");
      const unsigned char* p = raw + payload_start + offset;
      const auto count = static_cast<std::size_t>(shape.numel());
      if (dtype == DType::kF32) store.add(name, Tensor(shape, detail::get_values<float>(p, count)));
      else store.add(name, Tensor64(shape, detail::get_values<double>(p, count)));
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i)
      if (spans[i].first < spans[i - 1].second) fail(ErrorKind::kOutOfBounds, "entries overlap in the payload");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kMalformed, std::string("header schema: ") + e.what());
  }
  return store;
}

inline void save(const WeightStore& store, const std::string& path) {
  const std::string bytes = encode(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write to '" + path + "' failed");
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline WeightStore load(const std::string& path) { return decode(read_file(path)); }

// ---------------------------------------------------------------------------
// Model binding

/// Store view of bound weights; metadata records the spec and norm eps.
inline WeightStore to_store(const ModelWeights& w) {
  WeightStore store;
  for (const auto& rec : model_param_records(w.spec())) store.add(rec.name, w.tensors().at(rec.name));
  store.metadata()["model"] = w.spec().name;
  store.metadata()["spec"] = spec_to_json(canonical(w.spec())).dump();
  store.metadata()["layer_norm_eps"] = "1e-06";
  store.metadata()["batch_norm_eps"] = "1e-05";
  store.metadata()["input_mean"] = "0.485,0.456,0.406";
  store.metadata()["input_std"] = "0.229,0.224,0.225";
  store.metadata()["producer"] = "cnx";
  return store;
}

/// Checks the store is exactly the parameter set `spec` demands and returns
/// f32 weights bound to it. f64 entries are narrowed.
inline ModelWeights bind(const WeightStore& store, const ModelSpec& spec) {
  if (auto it = store.metadata().find("spec"); it != store.metadata().end()) {
    const ModelSpec recorded = parse_spec_text(it->second);
    require(structurally_equal(recorded, spec), ErrorKind::kInvalidArgument,
            "store was produced for a different architecture than '" + spec.name + "'");
  }
  TensorMap<float> tensors;
  for (const auto& e : store.entries())
    if (!e.name.starts_with("fixture.") && !e.name.starts_with("probe.")) tensors.emplace(e.name, e.as_f32());
  return ModelWeights(spec, std::move(tensors));
}

// ---------------------------------------------------------------------------
// Activation fixtures: same container, reserved names "fixture.input" and
// "probe.<name>" with <name> among stem, stages.<i>, pooled, logits.

inline constexpr std::string_view kFixtureInput = "fixture.input";
inline constexpr std::string_view kProbePrefix = "probe.";

struct Fixture {
  Tensor input;
  TensorMap<float> probes;
  std::map<std::string, std::string> metadata;
};

inline WeightStore fixture_to_store(const Fixture& f) {
  WeightStore store;
  store.add(std::string(kFixtureInput), f.input);
  for (const auto& [name, t] : f.probes) store.add(std::string(kProbePrefix) + name, t);
  store.metadata() = f.metadata;
  return store;
}

inline Fixture fixture_from_store(const WeightStore& store) {
  Fixture f;
  const StoreEntry* in = store.find(kFixtureInput);
  require(in != nullptr, ErrorKind::kMissingEntry, "fixture has no 'fixture.input' entry");
  f.input = in->as_f32();
  for (const auto& e : store.entries())
    if (e.name.starts_with(kProbePrefix)) f.probes.emplace(e.name.substr(kProbePrefix.size()), e.as_f32());
  require(!f.probes.empty(), ErrorKind::kMalformed, "fixture has an empty probe set");
  f.metadata = store.metadata();
  return f;
}

inline Fixture load_fixture(const std::string& path) { return fixture_from_store(load(path)); }
inline void save_fixture(const Fixture& f, const std::string& path) { save(fixture_to_store(f), path); }

/// Throws unless every probe names a point of `spec`'s forward pass and has
/// the extents that point produces for the fixture input.
inline void validate_fixture(const Fixture& f, const ModelSpec& spec) {
  ShapeExec ex;
  run_model(ex, spec, f.input.shape());
  for (const auto& [name, t] : f.probes) {
    auto it = ex.probes.find(name);
    if (it == ex.probes.end()) fail(ErrorKind::kUnknownName, "fixture probe '" + name + "' is not a forward probe point");
    if (it->second != t.shape())
      fail(ErrorKind::kExtentMismatch, "fixture probe '" + name + "' has extents " + to_string(t.shape()) +
                                           ", spec yields " + to_string(it->second));
  }
}

}  // namespace cnx
