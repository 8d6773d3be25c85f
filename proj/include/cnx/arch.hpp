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
#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cnx/blocks.hpp"
#include "cnx/error.hpp"
#include "cnx/graph.hpp"
#include "cnx/random.hpp"
#include "cnx/spec.hpp"

namespace cnx {

// ---------------------------------------------------------------------------
// Named variants

namespace detail {

inline BlockSpec convnext_block(std::int64_t width) {
  BlockSpec b;
  b.channels = width;
  b.kernel_size = 7;
  b.inner_ratio = 4.0;
  b.spatial_position = SpatialPosition::kFirst;
  b.grouping = Grouping::kDepthwise;
  b.norm_kind = NormKind::kLayer;
  b.norm_placement = NormPlacement::kSingleBeforePointwise;
  b.act_kind = ActKind::kGelu;
  b.act_placement = ActPlacement::kSingleBetweenPointwise;
  b.layer_scale_init = 1e-6;
  return b;
}

inline BlockSpec bottleneck_block(std::int64_t width) {
  BlockSpec b;
  b.channels = width;
  b.kernel_size = 3;
  b.inner_ratio = 0.25;
  return b;
}

inline ModelSpec convnext(std::string name, std::array<std::int64_t, 4> depths, std::int64_t base, double drop) {
  ModelSpec s;
  s.name = std::move(name);
  s.stem = {StemKind::kPatchify, 4, 4, base, NormKind::kLayer};
  for (std::size_t i = 0; i < 4; ++i) s.stages.push_back({depths[i], convnext_block(base << i)});
  s.downsampling = Downsampling::kSeparate;
  s.head = {true, 1000};
  s.drop_path_rate = drop;
  return s;
}

inline ModelSpec resnet(std::string name, std::array<std::int64_t, 4> depths) {
  ModelSpec s;
  s.name = std::move(name);
  s.stem = {StemKind::kResnet, 7, 2, 64, NormKind::kBatch};
  for (std::size_t i = 0; i < 4; ++i) s.stages.push_back({depths[i], bottleneck_block(256 << i)});
  s.downsampling = Downsampling::kInBlock;
  s.head = {false, 1000};
  return s;
}

inline ModelSpec isotropic(std::string name, std::int64_t width, std::int64_t depth, double drop,
                           std::optional<double> layer_scale) {
  ModelSpec s;
  s.name = std::move(name);
  s.stem = {StemKind::kPatchify, 16, 16, width, NormKind::kLayer};
  BlockSpec b = convnext_block(width);
  b.layer_scale_init = layer_scale;
  s.stages.push_back({depth, b});
  s.downsampling = Downsampling::kInBlock;
  s.head = {true, 1000};
  s.drop_path_rate = drop;
  return s;
}

}  // namespace detail

using detail::convnext;
using detail::isotropic;
using detail::resnet;

inline constexpr std::array<std::string_view, 10> kVariantNames = {
    "convnext-t", "convnext-s", "convnext-b", "convnext-l", "convnext-xl",
    "iso-s",      "iso-b",      "iso-l",      "resnet-50",  "resnet-200",
};

inline ModelSpec build_variant(std::string_view name, std::int64_t num_classes = 1000) {
  ModelSpec s;
  if (name == "convnext-t") s = detail::convnext("convnext-t", {3, 3, 9, 3}, 96, 0.1);
  else if (name == "convnext-s") s = detail::convnext("convnext-s", {3, 3, 27, 3}, 96, 0.4);
  else if (name == "convnext-b") s = detail::convnext("convnext-b", {3, 3, 27, 3}, 128, 0.5);
  else if (name == "convnext-l") s = detail::convnext("convnext-l", {3, 3, 27, 3}, 192, 0.5);
  else if (name == "convnext-xl") s = detail::convnext("convnext-xl", {3, 3, 27, 3}, 256, 0.2);
  else if (name == "iso-s") s = detail::isotropic("iso-s", 384, 18, 0.1, std::nullopt);
  else if (name == "iso-b") s = detail::isotropic("iso-b", 768, 18, 0.2, std::nullopt);
  else if (name == "iso-l") s = detail::isotropic("iso-l", 1024, 36, 0.5, 1e-6);
  else if (name == "resnet-50") s = detail::resnet("resnet-50", {3, 4, 6, 3});
  else if (name == "resnet-200") s = detail::resnet("resnet-200", {3, 24, 36, 3});
  else fail(ErrorKind::kUnknownName, "unknown model variant '" + std::string(name) + "'");
  s.head.num_classes = num_classes;
  validate(s);
  return s;
}

// ---------------------------------------------------------------------------
// Modernization roadmap

namespace detail {

struct RegimeParams {
  std::string_view start;
  std::array<std::int64_t, 4> depths;
  std::int64_t ratio_base;  // base width set together with the stage ratio
  std::int64_t wide_base;   // base width of the increase_width step
  double drop_path;
};

inline RegimeParams regime_params(Regime r) {
  if (r == Regime::kRn50) return {"resnet-50", {3, 3, 9, 3}, 64, 96, 0.1};
  return {"resnet-200", {3, 3, 27, 3}, 84, 128, 0.5};
}

// Sets the stem width to `base` and stage i to base*2^i times the block
// expansion: x4 for classic bottlenecks (inner_ratio < 1), x1 otherwise.
inline void set_base_width(ModelSpec& s, std::int64_t base) {
  s.stem.channels = base;
  for (std::size_t i = 0; i < s.stages.size(); ++i) {
    auto& b = s.stages[i].block;
    const std::int64_t io = b.inner_ratio < 1.0 ? std::llround(1.0 / b.inner_ratio) : 1;
    b.channels = (base << i) * io;
  }
}

inline std::int64_t base_width(const ModelSpec& s) { return s.stem.channels; }

inline bool is_kernel_step(StepId id) {
  return id == StepId::kKernel5 || id == StepId::kKernel7 || id == StepId::kKernel9 || id == StepId::kKernel11;
}

inline std::size_t step_index(StepId id) {
  return static_cast<std::size_t>(std::find(kAllSteps.begin(), kAllSteps.end(), id) - kAllSteps.begin());
}

inline void check_order(const ModelSpec& spec, const RoadmapStep& step) {
  auto reject = [&](const std::string& why) {
    fail(ErrorKind::kOrder, "cannot apply '" + std::string(to_string(step.id)) + "' to '" + spec.name + "': " + why);
  };
  if (step.id == StepId::kBaselineRecipe) {
    if (spec.roadmap) reject("spec is already on the roadmap");
    if (!structurally_equal(spec, build_variant(regime_params(step.regime).start, spec.head.num_classes)))
      reject("the chain starts from " + std::string(regime_params(step.regime).start));
    return;
  }
  if (!spec.roadmap) reject("spec is not on the roadmap (apply baseline_recipe first)");
  if (spec.roadmap->regime != step.regime) reject("regime mismatch");
  const StepId last = spec.roadmap->last;
  bool ok;
  if (is_kernel_step(step.id)) ok = last == StepId::kMoveUpDw;
  else if (step.id == StepId::kReluToGelu) ok = is_kernel_step(last);
  else ok = !is_kernel_step(step.id) && step_index(step.id) == step_index(last) + 1 && !is_kernel_step(last);
  if (!ok) reject("previous step is '" + std::string(to_string(last)) + "'");
}

}  // namespace detail

/// Applies one modernization step. Steps must follow the chain order; the
/// kernel steps are alternatives branching from move_up_dw, and
/// relu_to_gelu continues from whichever kernel was chosen.
inline ModelSpec apply_step(const ModelSpec& spec, const RoadmapStep& step) {
  detail::check_order(spec, step);
  const auto rp = detail::regime_params(step.regime);
  ModelSpec s = spec;
  auto blocks = [&](auto&& fn) {
    for (auto& st : s.stages) fn(st.block);
  };
  switch (step.id) {
    case StepId::kBaselineRecipe:
      s.drop_path_rate = rp.drop_path;
      blocks([](BlockSpec& b) { b.layer_scale_init = 1e-6; });
      break;
    case StepId::kStageRatio:
      for (std::size_t i = 0; i < 4; ++i) s.stages[i].depth = rp.depths[i];
      detail::set_base_width(s, rp.ratio_base);
      break;
    case StepId::kPatchifyStem:
      s.stem = {StemKind::kPatchify, 4, 4, s.stem.channels, s.stem.norm};
      break;
    case StepId::kDepthwiseConv:
      blocks([](BlockSpec& b) { b.grouping = Grouping::kDepthwise; });
      break;
    case StepId::kIncreaseWidth:
      detail::set_base_width(s, rp.wide_base);
      break;
    case StepId::kInvertDims: {
      const std::int64_t base = detail::base_width(s);
      blocks([](BlockSpec& b) { b.inner_ratio = 4.0; });
      detail::set_base_width(s, base);
      break;
    }
    case StepId::kMoveUpDw:
      blocks([](BlockSpec& b) { b.spatial_position = SpatialPosition::kFirst; });
      break;
    case StepId::kKernel5:
    case StepId::kKernel7:
    case StepId::kKernel9:
    case StepId::kKernel11: {
      const std::int64_t k = step.id == StepId::kKernel5 ? 5 : step.id == StepId::kKernel7 ? 7
                             : step.id == StepId::kKernel9 ? 9 : 11;
      blocks([k](BlockSpec& b) { b.kernel_size = k; });
      break;
    }
    case StepId::kReluToGelu:
      blocks([](BlockSpec& b) { b.act_kind = ActKind::kGelu; });
      break;
    case StepId::kFewerActs:
      blocks([](BlockSpec& b) { b.act_placement = ActPlacement::kSingleBetweenPointwise; });
      break;
    case StepId::kFewerNorms:
      blocks([](BlockSpec& b) { b.norm_placement = NormPlacement::kSingleBeforePointwise; });
      break;
    case StepId::kBnToLn:
      blocks([](BlockSpec& b) { b.norm_kind = NormKind::kLayer; });
      if (s.stem.norm) s.stem.norm = NormKind::kLayer;
      break;
    case StepId::kSeparateDs:
      s.downsampling = Downsampling::kSeparate;
      s.head.final_norm = true;
      break;
  }
  s.roadmap = RoadmapState{step.regime, step.id};
  s.name = std::string(rp.start) + "+" + std::string(to_string(step.id));
  validate(s);
  return s;
}

struct RoadmapRow {
  RoadmapStep step;
  ModelSpec spec;
};

/// One spec per table row: baseline through separate downsampling, with the
/// kernel sweep rows branching from move_up_dw and the chain continuing at 7.
inline std::vector<RoadmapRow> roadmap(Regime regime, std::int64_t num_classes = 1000) {
  std::vector<RoadmapRow> rows;
  ModelSpec cur = build_variant(detail::regime_params(regime).start, num_classes);
  auto push = [&](StepId id, const ModelSpec& from) {
    rows.push_back({{id, regime}, apply_step(from, {id, regime})});
    return rows.back().spec;
  };
  for (StepId id : {StepId::kBaselineRecipe, StepId::kStageRatio, StepId::kPatchifyStem, StepId::kDepthwiseConv,
                    StepId::kIncreaseWidth, StepId::kInvertDims, StepId::kMoveUpDw})
    cur = push(id, cur);
  const ModelSpec moved = cur;
  for (StepId id : {StepId::kKernel5, StepId::kKernel7, StepId::kKernel9, StepId::kKernel11}) {
    const ModelSpec k = push(id, moved);
    if (id == StepId::kKernel7) cur = k;
  }
  for (StepId id : {StepId::kReluToGelu, StepId::kFewerActs, StepId::kFewerNorms, StepId::kBnToLn, StepId::kSeparateDs})
    cur = push(id, cur);
  return rows;
}

// ---------------------------------------------------------------------------
// Weights

/// Every parameter a model spec demands, in execution order.
inline std::vector<ParamRecord> model_param_records(const ModelSpec& spec) {
  ShapeExec ex;
  run_model(ex, spec, Shape{1, 224, 224, 3});
  return ex.params;
}

/// Parameters bound to a spec. Construction checks the bijection between
/// spec-demanded names and tensors, so forward never meets a missing entry.
class ModelWeights {
 public:
  ModelWeights(ModelSpec spec, TensorMap<float> tensors) : spec_(std::move(spec)), tensors_(std::move(tensors)) {
    check_closed(model_param_records(spec_), tensors_);
  }

  const ModelSpec& spec() const { return spec_; }
  const TensorMap<float>& tensors() const { return tensors_; }

 private:
  ModelSpec spec_;
  TensorMap<float> tensors_;
};

/// Fills parameters in record order from one stream: truncated normal
/// (std 0.02, +-2 std) for conv / linear weights, zero biases, unit norm
/// scales, running stats mean 0 / var 1, layer scale at its initial value.
template <typename T>
TensorMap<T> init_params(const std::vector<ParamRecord>& records, std::uint64_t seed, double layer_scale_init) {
  Rng rng(seed);
  TensorMap<T> out;
  for (const auto& rec : records) {
    BasicTensor<T> t(rec.shape);
    switch (rec.role) {
      case ParamRole::kWeight:
        for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(0.02, 2.0));
        break;
      case ParamRole::kBias:
      case ParamRole::kNormShift:
        break;
      case ParamRole::kNormScale:
        std::fill(t.data().begin(), t.data().end(), T(1));
        break;
      case ParamRole::kRunningStat:
        if (rec.name.ends_with(".running_var")) std::fill(t.data().begin(), t.data().end(), T(1));
        break;
      case ParamRole::kLayerScale:
        std::fill(t.data().begin(), t.data().end(), static_cast<T>(layer_scale_init));
        break;
    }
    out.emplace(rec.name, std::move(t));
  }
  return out;
}

inline ModelWeights init_weights(const ModelSpec& spec, std::uint64_t seed) {
  // Layer-scale init is uniform across the templates of every spec we build.
  double ls = 1e-6;
  for (const auto& st : spec.stages)
    if (st.block.layer_scale_init) ls = *st.block.layer_scale_init;
  return ModelWeights(spec, init_params<float>(model_param_records(spec), seed, ls));
}

// ---------------------------------------------------------------------------
// Forward

inline void check_input(const ModelSpec& spec, const Shape& x) {
  require(x.c == 3, ErrorKind::kShape, "forward: expected 3 input channels, got " + std::to_string(x.c));
  try {
    ShapeExec ex;
    run_model(ex, spec, x);
  } catch (const Error& e) {
    fail(ErrorKind::kShape, "forward: input " + to_string(x) + " incompatible with '" + spec.name + "' (" + e.what() + ")");
  }
}

/// N x 1 x 1 x num_classes logits.
inline Tensor forward(const ModelWeights& weights, const Tensor& x, Mode mode = Mode::eval(),
                      TensorMap<float>* probes = nullptr) {
  check_input(weights.spec(), x.shape());
  EagerExec<float> ex(weights.tensors(), mode);
  ex.capture_probes(probes);
  return run_model(ex, weights.spec(), x);
}

inline Tensor forward(const ModelSpec& spec, const ModelWeights& weights, const Tensor& x, Mode mode = Mode::eval()) {
  require(structurally_equal(spec, weights.spec()), ErrorKind::kInvalidArgument,
          "forward: weights are bound to a different spec");
  return forward(weights, x, mode);
}

/// f64 forward over an arbitrary parameter map (the gradient-check path).
template <typename T>
BasicTensor<T> forward_generic(const ModelSpec& spec, const TensorMap<T>& params, const BasicTensor<T>& x,
                               Mode mode = Mode::eval()) {
  check_closed(model_param_records(spec), params);
  EagerExec<T> ex(params, mode);
  return run_model(ex, spec, x);
}

}  // namespace cnx
