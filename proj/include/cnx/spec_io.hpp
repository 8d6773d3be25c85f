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

#include <fstream>
#include <sstream>
#include <string>

#include "cnx/arch.hpp"
#include "cnx/error.hpp"
#include "cnx/spec.hpp"
#include "json.hpp"

// ModelSpec <-> JSON. Two accepted shapes:
//
//   {"variant": "convnext-t", "num_classes": 10}
//
//   {"name": "...", "stem": {"kind": "patchify", "kernel": 4, "stride": 4,
//    "channels": 96, "norm": "layer" | null},
//    "stages": [{"depth": 3, "block": {...BlockSpec template fields...}}],
//    "downsampling": "separate", "head": {"final_norm": true,
//    "num_classes": 1000}, "drop_path_rate": 0.1}
//
// Block template fields use the enum spellings of spec.hpp; in_channels,
// stride, shortcut and per-block drop rates are derived and not serialized.

namespace cnx {

using Json = nlohmann::json;

inline Json block_to_json(const BlockSpec& b) {
  Json j{{"channels", b.channels},
         {"kernel_size", b.kernel_size},
         {"inner_ratio", b.inner_ratio},
         {"spatial_position", to_string(b.spatial_position)},
         {"grouping", to_string(b.grouping)},
         {"norm_kind", to_string(b.norm_kind)},
         {"norm_placement", to_string(b.norm_placement)},
         {"act_kind", to_string(b.act_kind)},
         {"act_placement", to_string(b.act_placement)},
         {"layer_scale_init", b.layer_scale_init ? Json(*b.layer_scale_init) : Json(nullptr)}};
  if (b.grouping == Grouping::kGrouped) j["groups"] = b.groups;
  return j;
}

inline Json spec_to_json(const ModelSpec& s) {
  Json stages = Json::array();
  for (const auto& st : s.stages) stages.push_back({{"depth", st.depth}, {"block", block_to_json(st.block)}});
  Json j{{"name", s.name},
         {"stem",
          {{"kind", to_string(s.stem.kind)},
           {"kernel", s.stem.kernel},
           {"stride", s.stem.stride},
           {"channels", s.stem.channels},
           {"norm", s.stem.norm ? Json(to_string(*s.stem.norm)) : Json(nullptr)}}},
         {"stages", stages},
         {"downsampling", to_string(s.downsampling)},
         {"head", {{"final_norm", s.head.final_norm}, {"num_classes", s.head.num_classes}}},
         {"drop_path_rate", s.drop_path_rate}};
  if (s.roadmap)
    j["roadmap"] = {{"regime", to_string(s.roadmap->regime)}, {"last_step", to_string(s.roadmap->last)}};
  return j;
}

namespace detail {
template <typename T>
T field(const Json& j, const char* key) {
  if (!j.contains(key)) fail(ErrorKind::kMalformed, std::string("spec json: missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    fail(ErrorKind::kMalformed, std::string("spec json: field '") + key + "': " + e.what());
  }
}
}  // namespace detail

inline BlockSpec block_from_json(const Json& j) {
  using detail::field;
  BlockSpec b;
  b.channels = field<std::int64_t>(j, "channels");
  b.kernel_size = field<std::int64_t>(j, "kernel_size");
  b.inner_ratio = field<double>(j, "inner_ratio");
  b.spatial_position = detail::kSpatialNames.parse(field<std::string>(j, "spatial_position"), "spatial_position");
  b.grouping = detail::kGroupingNames.parse(field<std::string>(j, "grouping"), "grouping");
  if (j.contains("groups")) b.groups = field<std::int64_t>(j, "groups");
  b.norm_kind = detail::kNormNames.parse(field<std::string>(j, "norm_kind"), "norm_kind");
  b.norm_placement = detail::kNormPlacementNames.parse(field<std::string>(j, "norm_placement"), "norm_placement");
  b.act_kind = detail::kActNames.parse(field<std::string>(j, "act_kind"), "act_kind");
  b.act_placement = detail::kActPlacementNames.parse(field<std::string>(j, "act_placement"), "act_placement");
  if (j.contains("layer_scale_init") && !j["layer_scale_init"].is_null())
    b.layer_scale_init = field<double>(j, "layer_scale_init");
  return b;
}

inline ModelSpec spec_from_json(const Json& j) {
  using detail::field;
  if (!j.is_object()) fail(ErrorKind::kMalformed, "spec json: expected an object");
  if (j.contains("variant")) {
    const std::int64_t classes = j.contains("num_classes") ? field<std::int64_t>(j, "num_classes") : 1000;
    return build_variant(field<std::string>(j, "variant"), classes);
  }
  ModelSpec s;
  s.name = j.contains("name") ? field<std::string>(j, "name") : "custom";
  const Json& stem = j.at("stem");
  s.stem.kind = detail::kStemNames.parse(field<std::string>(stem, "kind"), "stem kind");
  s.stem.kernel = field<std::int64_t>(stem, "kernel");
  s.stem.stride = field<std::int64_t>(stem, "stride");
  s.stem.channels = field<std::int64_t>(stem, "channels");
  s.stem.norm.reset();
  if (stem.contains("norm") && !stem["norm"].is_null())
    s.stem.norm = detail::kNormNames.parse(field<std::string>(stem, "norm"), "stem norm");
  if (!j.contains("stages") || !j["stages"].is_array()) fail(ErrorKind::kMalformed, "spec json: 'stages' must be an array");
  for (const auto& st : j["stages"]) s.stages.push_back({field<std::int64_t>(st, "depth"), block_from_json(st.at("block"))});
  s.downsampling = detail::kDownsamplingNames.parse(field<std::string>(j, "downsampling"), "downsampling");
  const Json& head = j.at("head");
  s.head.final_norm = field<bool>(head, "final_norm");
  s.head.num_classes = field<std::int64_t>(head, "num_classes");
  if (j.contains("drop_path_rate")) s.drop_path_rate = field<double>(j, "drop_path_rate");
  if (j.contains("roadmap"))
    s.roadmap = RoadmapState{parse_regime(field<std::string>(j["roadmap"], "regime")),
                             parse_step(field<std::string>(j["roadmap"], "last_step"))};
  validate(s);
  return s;
}

inline ModelSpec parse_spec_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    fail(ErrorKind::kMalformed, std::string("spec json: ") + e.what());
  }
  return spec_from_json(j);
}

inline Json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const Json::exception& e) {
    fail(ErrorKind::kMalformed, "'" + path + "': " + e.what());
  }
}

/// A variant name, or a path to a JSON spec file when the argument ends in
/// ".json".
inline ModelSpec resolve_model(const std::string& name_or_path, std::int64_t num_classes = 1000) {
  if (!name_or_path.ends_with(".json")) return build_variant(name_or_path, num_classes);
  return spec_from_json(parse_json_file(name_or_path));
}

}  // namespace cnx
