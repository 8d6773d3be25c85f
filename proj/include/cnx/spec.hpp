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
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cnx/error.hpp"

// Declarative network descriptions: the residual block descriptor, the
// whole-model spec, and the roadmap step identifiers.

namespace cnx {

enum class SpatialPosition { kMiddle, kFirst };
enum class Grouping { kDense, kGrouped, kDepthwise };
enum class NormKind { kBatch, kLayer };
enum class NormPlacement { kPerConv, kSingleBeforePointwise };
enum class ActKind { kRelu, kGelu };
enum class ActPlacement { kPerConv, kSingleBetweenPointwise };
enum class Shortcut { kIdentity, kProjection };
enum class StemKind { kResnet, kPatchify };
enum class Downsampling { kInBlock, kSeparate };
enum class Regime { kRn50, kRn200 };

enum class StepId {
  kBaselineRecipe,
  kStageRatio,
  kPatchifyStem,
  kDepthwiseConv,
  kIncreaseWidth,
  kInvertDims,
  kMoveUpDw,
  kKernel5,
  kKernel7,
  kKernel9,
  kKernel11,
  kReluToGelu,
  kFewerActs,
  kFewerNorms,
  kBnToLn,
  kSeparateDs,
};

inline constexpr std::array<StepId, 16> kAllSteps = {
    StepId::kBaselineRecipe, StepId::kStageRatio, StepId::kPatchifyStem, StepId::kDepthwiseConv,
    StepId::kIncreaseWidth,  StepId::kInvertDims, StepId::kMoveUpDw,     StepId::kKernel5,
    StepId::kKernel7,        StepId::kKernel9,    StepId::kKernel11,     StepId::kReluToGelu,
    StepId::kFewerActs,      StepId::kFewerNorms, StepId::kBnToLn,       StepId::kSeparateDs,
};

struct RoadmapStep {
  StepId id = StepId::kBaselineRecipe;
  Regime regime = Regime::kRn50;
  friend bool operator==(const RoadmapStep&, const RoadmapStep&) = default;
};

// ---------------------------------------------------------------------------
// Enum <-> string, shared by the JSON schema, CLI and reports.

namespace detail {
template <typename E, std::size_t N>
struct EnumNames {
  std::array<std::pair<E, std::string_view>, N> items;
  std::string_view name(E e) const {
    for (const auto& [k, v] : items)
      if (k == e) return v;
    return "?";
  }
  E parse(std::string_view s, std::string_view what) const {
    for (const auto& [k, v] : items)
      if (v == s) return k;
    fail(ErrorKind::kUnknownName, "unknown " + std::string(what) + " '" + std::string(s) + "'");
  }
};

inline constexpr EnumNames<SpatialPosition, 2> kSpatialNames{
    {{{SpatialPosition::kMiddle, "middle"}, {SpatialPosition::kFirst, "first"}}}};
inline constexpr EnumNames<Grouping, 3> kGroupingNames{
    {{{Grouping::kDense, "dense"}, {Grouping::kGrouped, "grouped"}, {Grouping::kDepthwise, "depthwise"}}}};
inline constexpr EnumNames<NormKind, 2> kNormNames{{{{NormKind::kBatch, "batch"}, {NormKind::kLayer, "layer"}}}};
inline constexpr EnumNames<NormPlacement, 2> kNormPlacementNames{
    {{{NormPlacement::kPerConv, "per_conv"}, {NormPlacement::kSingleBeforePointwise, "single_before_pointwise"}}}};
inline constexpr EnumNames<ActKind, 2> kActNames{{{{ActKind::kRelu, "relu"}, {ActKind::kGelu, "gelu"}}}};
inline constexpr EnumNames<ActPlacement, 2> kActPlacementNames{
    {{{ActPlacement::kPerConv, "per_conv"}, {ActPlacement::kSingleBetweenPointwise, "single_between_pointwise"}}}};
inline constexpr EnumNames<Shortcut, 2> kShortcutNames{
    {{{Shortcut::kIdentity, "identity"}, {Shortcut::kProjection, "projection"}}}};
inline constexpr EnumNames<StemKind, 2> kStemNames{{{{StemKind::kResnet, "resnet"}, {StemKind::kPatchify, "patchify"}}}};
inline constexpr EnumNames<Downsampling, 2> kDownsamplingNames{
    {{{Downsampling::kInBlock, "in_block"}, {Downsampling::kSeparate, "separate"}}}};
inline constexpr EnumNames<Regime, 2> kRegimeNames{{{{Regime::kRn50, "rn50"}, {Regime::kRn200, "rn200"}}}};
inline constexpr EnumNames<StepId, 16> kStepNames{{{
    {StepId::kBaselineRecipe, "baseline_recipe"},
    {StepId::kStageRatio, "stage_ratio"},
    {StepId::kPatchifyStem, "patchify_stem"},
    {StepId::kDepthwiseConv, "depthwise_conv"},
    {StepId::kIncreaseWidth, "increase_width"},
    {StepId::kInvertDims, "invert_dims"},
    {StepId::kMoveUpDw, "move_up_dw"},
    {StepId::kKernel5, "kernel_5"},
    {StepId::kKernel7, "kernel_7"},
    {StepId::kKernel9, "kernel_9"},
    {StepId::kKernel11, "kernel_11"},
    {StepId::kReluToGelu, "relu_to_gelu"},
    {StepId::kFewerActs, "fewer_acts"},
    {StepId::kFewerNorms, "fewer_norms"},
    {StepId::kBnToLn, "bn_to_ln"},
    {StepId::kSeparateDs, "separate_ds"},
}}};
}  // namespace detail

inline std::string_view to_string(SpatialPosition v) { return detail::kSpatialNames.name(v); }
inline std::string_view to_string(Grouping v) { return detail::kGroupingNames.name(v); }
inline std::string_view to_string(NormKind v) { return detail::kNormNames.name(v); }
inline std::string_view to_string(NormPlacement v) { return detail::kNormPlacementNames.name(v); }
inline std::string_view to_string(ActKind v) { return detail::kActNames.name(v); }
inline std::string_view to_string(ActPlacement v) { return detail::kActPlacementNames.name(v); }
inline std::string_view to_string(Shortcut v) { return detail::kShortcutNames.name(v); }
inline std::string_view to_string(StemKind v) { return detail::kStemNames.name(v); }
inline std::string_view to_string(Downsampling v) { return detail::kDownsamplingNames.name(v); }
inline std::string_view to_string(Regime v) { return detail::kRegimeNames.name(v); }
inline std::string_view to_string(StepId v) { return detail::kStepNames.name(v); }

inline Regime parse_regime(std::string_view s) { return detail::kRegimeNames.parse(s, "regime"); }
inline StepId parse_step(std::string_view s) { return detail::kStepNames.parse(s, "roadmap step"); }

// ---------------------------------------------------------------------------
// Block descriptor

/// One residual block, from the classic bottleneck to the ConvNeXt block.
///
/// Layer layout, "spatial" being the k x k conv and pw1/pw2 the pointwise
/// convs:
///   middle: pw1 (Cin -> hidden), spatial (hidden, strided), pw2 (hidden -> C)
///   first:  spatial (Cin, depthwise, strided), pw1 (Cin -> hidden), pw2 (hidden -> C)
/// with hidden = inner_ratio * C. Per-conv norms follow every conv; the single
/// norm follows the spatial conv. Per-conv activations follow the spatial and
/// pw1 norms and the residual sum; the single activation sits after pw1.
struct BlockSpec {
  std::int64_t in_channels = 0;
  std::int64_t channels = 0;
  std::int64_t kernel_size = 3;
  double inner_ratio = 0.25;
  SpatialPosition spatial_position = SpatialPosition::kMiddle;
  Grouping grouping = Grouping::kDense;
  std::int64_t groups = 32;  // only read when grouping == kGrouped
  NormKind norm_kind = NormKind::kBatch;
  NormPlacement norm_placement = NormPlacement::kPerConv;
  ActKind act_kind = ActKind::kRelu;
  ActPlacement act_placement = ActPlacement::kPerConv;
  std::int64_t stride = 1;
  Shortcut shortcut = Shortcut::kIdentity;
  std::optional<double> layer_scale_init;
  double drop_path_rate = 0.0;

  std::int64_t hidden() const { return std::llround(static_cast<double>(channels) * inner_ratio); }
  std::int64_t spatial_channels() const { return spatial_position == SpatialPosition::kFirst ? in_channels : hidden(); }
  std::int64_t spatial_groups() const {
    switch (grouping) {
      case Grouping::kDense: return 1;
      case Grouping::kGrouped: return groups;
      case Grouping::kDepthwise: return spatial_channels();
    }
    return 1;
  }
  std::int64_t norm_count() const {
    const std::int64_t shortcut_norm =
        shortcut == Shortcut::kProjection && norm_placement == NormPlacement::kPerConv ? 1 : 0;
    return (norm_placement == NormPlacement::kPerConv ? 3 : 1) + shortcut_norm;
  }
  std::int64_t act_count() const { return act_placement == ActPlacement::kPerConv ? 3 : 1; }

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

inline void validate(const BlockSpec& b) {
  auto check = [](bool ok, const std::string& msg) { require(ok, ErrorKind::kInvalidArgument, "block spec: " + msg); };
  check(b.in_channels >= 1 && b.channels >= 1, "channel widths must be >= 1");
  check(b.kernel_size >= 1 && b.kernel_size % 2 == 1, "kernel size must be odd");
  check(b.inner_ratio > 0 && b.hidden() >= 1, "inner ratio must give a hidden width >= 1");
  check(b.stride == 1 || b.stride == 2, "stride must be 1 or 2");
  check(b.drop_path_rate >= 0 && b.drop_path_rate < 1, "drop_path_rate must lie in [0, 1)");
  check(b.spatial_position != SpatialPosition::kFirst || b.grouping == Grouping::kDepthwise,
        "spatial_position=first requires depthwise grouping");
  check(b.norm_placement != NormPlacement::kSingleBeforePointwise || b.spatial_position == SpatialPosition::kFirst,
        "single_before_pointwise norm requires spatial_position=first");
  check(b.act_placement != ActPlacement::kSingleBetweenPointwise || b.spatial_position == SpatialPosition::kFirst,
        "single_between_pointwise activation requires spatial_position=first");
  const bool needs_projection = b.stride != 1 || b.in_channels != b.channels;
  check((b.shortcut == Shortcut::kProjection) == needs_projection,
        "shortcut must be a projection iff stride is 2 or widths differ");
  if (b.grouping == Grouping::kGrouped)
    check(b.groups >= 1 && b.spatial_channels() % b.groups == 0, "grouped conv width must be divisible by groups");
}

// ---------------------------------------------------------------------------
// Model descriptor

/// resnet: k x k stride-s conv (padding k/2), norm, ReLU, 3x3/2 max pool.
/// patchify: non-overlapping k x k stride-k conv, then the optional norm.
struct StemSpec {
  StemKind kind = StemKind::kPatchify;
  std::int64_t kernel = 4;
  std::int64_t stride = 4;
  std::int64_t channels = 96;
  std::optional<NormKind> norm = NormKind::kLayer;
  friend bool operator==(const StemSpec&, const StemSpec&) = default;
};

/// A stage of `depth` blocks built from `block`. The template's channels is
/// the stage width; in_channels, stride, shortcut and drop_path_rate are
/// filled in per block by expand_blocks().
struct StageSpec {
  std::int64_t depth = 1;
  BlockSpec block;
  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct HeadSpec {
  bool final_norm = true;
  std::int64_t num_classes = 1000;
  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

struct RoadmapState {
  Regime regime = Regime::kRn50;
  StepId last = StepId::kBaselineRecipe;
  friend bool operator==(const RoadmapState&, const RoadmapState&) = default;
};

struct ModelSpec {
  std::string name;
  StemSpec stem;
  std::vector<StageSpec> stages;
  Downsampling downsampling = Downsampling::kSeparate;
  HeadSpec head;
  // Network-wide stochastic depth; block j of J gets rate * j / (J - 1).
  double drop_path_rate = 0.0;
  // Position in the modernization chain, if the spec came from one.
  std::optional<RoadmapState> roadmap;

  bool isotropic() const { return stages.size() == 1; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Architecture-only view: name and roadmap provenance are dropped.
/// Architecture-only view: name and roadmap provenance are dropped and the
/// per-block fields that expand_blocks() derives are reset in the templates.
inline ModelSpec canonical(ModelSpec s) {
  s.name.clear();
  s.roadmap.reset();
  for (auto& st : s.stages) {
    auto& b = st.block;
    b.in_channels = 0;
    b.stride = 1;
    b.shortcut = Shortcut::kIdentity;
    b.drop_path_rate = 0.0;
    if (b.grouping != Grouping::kGrouped) b.groups = 32;
  }
  return s;
}

inline bool structurally_equal(const ModelSpec& a, const ModelSpec& b) { return canonical(a) == canonical(b); }

// ---------------------------------------------------------------------------
// Canonical layer names
//
//   stem.conv  stem.norm
//   stages.<i>.downsample.norm  stages.<i>.downsample.conv
//   stages.<i>.blocks.<j>.{spatial,pw1,pw2}.{conv,norm}
//   stages.<i>.blocks.<j>.norm              (single norm placement)
//   stages.<i>.blocks.<j>.shortcut.{conv,norm}
//   stages.<i>.blocks.<j>.gamma             (layer scale vector)
//   head.norm  head.fc
//
// A layer owns parameters <layer>.weight, <layer>.bias and, for batch norm,
// <layer>.running_mean / <layer>.running_var.

inline std::string stage_prefix(std::size_t stage) { return "stages." + std::to_string(stage) + "."; }
inline std::string block_prefix(std::size_t stage, std::size_t block) {
  return stage_prefix(stage) + "blocks." + std::to_string(block) + ".";
}

struct BlockInstance {
  std::size_t stage = 0;
  std::size_t index = 0;  // within the stage
  std::string prefix;
  BlockSpec spec;
};

inline std::int64_t total_blocks(const ModelSpec& s) {
  std::int64_t n = 0;
  for (const auto& st : s.stages) n += st.depth;
  return n;
}

inline void validate(const ModelSpec& s) {
  auto check = [&](bool ok, const std::string& msg) {
    require(ok, ErrorKind::kInvalidArgument, "model spec '" + s.name + "': " + msg);
  };
  check(!s.stages.empty(), "at least one stage required");
  check(s.stem.kernel >= 1 && s.stem.stride >= 1 && s.stem.channels >= 1, "invalid stem");
  if (s.stem.kind == StemKind::kPatchify) check(s.stem.kernel == s.stem.stride, "patchify stem needs kernel == stride");
  check(s.head.num_classes >= 1, "num_classes must be >= 1");
  check(s.drop_path_rate >= 0 && s.drop_path_rate < 1, "drop_path_rate must lie in [0, 1)");
  for (const auto& st : s.stages) check(st.depth >= 1 && st.block.channels >= 1, "stage depth and width must be >= 1");
  if (s.isotropic()) {
    check(s.downsampling == Downsampling::kInBlock, "isotropic specs use in_block downsampling (none)");
  } else {
    for (std::size_t i = 1; i < s.stages.size(); ++i)
      check(s.stages[i].block.channels == 2 * s.stages[i - 1].block.channels, "widths must double stage-to-stage");
  }
}

/// Expands the stage templates into concrete per-block descriptors.
inline std::vector<BlockInstance> expand_blocks(const ModelSpec& s) {
  validate(s);
  std::vector<BlockInstance> out;
  const std::int64_t total = total_blocks(s);
  std::int64_t global = 0;
  std::int64_t in_ch = s.stem.channels;
  for (std::size_t i = 0; i < s.stages.size(); ++i) {
    const auto& st = s.stages[i];
    if (s.downsampling == Downsampling::kSeparate && i > 0) in_ch = st.block.channels;
    for (std::int64_t j = 0; j < st.depth; ++j, ++global) {
      BlockSpec b = st.block;
      b.in_channels = in_ch;
      b.stride = (s.downsampling == Downsampling::kInBlock && i > 0 && j == 0) ? 2 : 1;
      b.shortcut = (b.stride != 1 || b.in_channels != b.channels) ? Shortcut::kProjection : Shortcut::kIdentity;
      b.drop_path_rate = total > 1 ? s.drop_path_rate * static_cast<double>(global) / static_cast<double>(total - 1)
                                   : 0.0;
      validate(b);
      out.push_back({i, static_cast<std::size_t>(j), block_prefix(i, static_cast<std::size_t>(j)), b});
      in_ch = b.channels;
    }
  }
  return out;
}

}  // namespace cnx
