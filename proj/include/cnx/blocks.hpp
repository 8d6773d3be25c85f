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

#include <cstdint>
#include <set>
#include <string>

#include "cnx/graph.hpp"
#include "cnx/spec.hpp"
#include "cnx/tensor.hpp"

namespace cnx {

/// Block parameters keyed by layer name relative to the block, e.g.
/// "spatial.conv.weight", "norm.bias", "gamma".
template <typename T>
using BlockWeights = TensorMap<T>;

/// Parameters a block spec demands, in execution order.
inline std::vector<ParamRecord> block_param_records(const BlockSpec& spec) {
  ShapeExec ex;
  // Spatial extents are irrelevant to parameter shapes; 8x8 admits any
  // stride-2 block with k <= 11 thanks to same-padding.
  run_block(ex, spec, "", Shape{1, 8, 8, spec.in_channels});
  return ex.params;
}

struct LayerCensus {
  std::int64_t norms = 0;
  std::int64_t acts = 0;
};

/// Normalization and activation layers a block instantiates.
inline LayerCensus block_census(const BlockSpec& spec) {
  ShapeExec ex;
  run_block(ex, spec, "", Shape{1, 8, 8, spec.in_channels});
  return {ex.norm_layers, ex.act_layers};
}

/// Throws unless `w` holds exactly the parameters `spec` needs, with the
/// right extents.
template <typename T>
void check_closed(const std::vector<ParamRecord>& needed, const TensorMap<T>& w, const std::string& prefix = "") {
  std::set<std::string, std::less<>> names;
  for (const auto& rec : needed) {
    const std::string full = prefix + rec.name;
    names.insert(full);
    auto it = w.find(full);
    if (it == w.end()) fail(ErrorKind::kMissingEntry, "missing entry '" + full + "'");
    if (it->second.shape() != rec.shape)
      fail(ErrorKind::kExtentMismatch, "entry '" + full + "' has extents " + to_string(it->second.shape()) +
                                           ", spec requires " + to_string(rec.shape));
  }
  for (const auto& [name, t] : w)
    if (!names.contains(name)) fail(ErrorKind::kExtraEntry, "unexpected entry '" + name + "'");
}

/// Residual block forward: shortcut(x) + branch(x), branch per `spec`.
/// In train mode drop-path zeroes a sample's branch with probability
/// spec.drop_path_rate and scales survivors by 1/(1-rate).
template <typename T>
BasicTensor<T> block_forward(const BasicTensor<T>& x, const BlockSpec& spec, const BlockWeights<T>& w,
                             Mode mode = Mode::eval()) {
  validate(spec);
  require(x.c() == spec.in_channels, ErrorKind::kShape,
          "block_forward: input has " + std::to_string(x.c()) + " channels, spec expects " +
              std::to_string(spec.in_channels));
  check_closed(block_param_records(spec), w);
  EagerExec<T> ex(w, mode);
  return run_block(ex, spec, "", x);
}

/// Classic bottleneck: 1x1 -> k x k -> 1x1, norm + activation per conv, the
/// last activation after the residual sum.
template <typename T>
BasicTensor<T> bottleneck_forward(const BasicTensor<T>& x, const BlockSpec& spec, const BlockWeights<T>& w,
                                  Mode mode = Mode::eval()) {
  require(spec.spatial_position == SpatialPosition::kMiddle && spec.norm_placement == NormPlacement::kPerConv &&
              spec.act_placement == ActPlacement::kPerConv,
          ErrorKind::kInvalidArgument, "bottleneck_forward: spec is not a per-conv middle-position bottleneck");
  return block_forward(x, spec, w, mode);
}

/// Layer norm then 2x2 stride-2 conv. Weights: norm.{weight,bias},
/// conv.{weight,bias}; output width is the conv's Cout.
template <typename T>
BasicTensor<T> downsample_forward(const BasicTensor<T>& x, const TensorMap<T>& w) {
  auto it = w.find("conv.weight");
  require(it != w.end(), ErrorKind::kMissingEntry, "downsample_forward: missing entry 'conv.weight'");
  const std::int64_t out = it->second.c();
  ShapeExec shapes;
  run_downsample(shapes, "", Shape{1, 2, 2, x.c()}, out);
  check_closed(shapes.params, w);
  EagerExec<T> ex(w, Mode::eval());
  return run_downsample(ex, "", x, out);
}

inline std::vector<ParamRecord> stem_param_records(const StemSpec& stem) {
  ShapeExec ex;
  run_stem(ex, stem, Shape{1, 64, 64, 3});
  return ex.params;
}

/// Stem forward; weights are keyed "stem.conv.weight", "stem.norm.bias", ...
template <typename T>
BasicTensor<T> stem_forward(const BasicTensor<T>& x, const StemSpec& stem, const TensorMap<T>& w) {
  ShapeExec shapes;
  run_stem(shapes, stem, Shape{1, 64, 64, x.c()});
  check_closed(shapes.params, w);
  EagerExec<T> ex(w, Mode::eval());
  return run_stem(ex, stem, x);
}

}  // namespace cnx
