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
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cnx/error.hpp"
#include "cnx/kernels.hpp"
#include "cnx/random.hpp"
#include "cnx/spec.hpp"
#include "cnx/tensor.hpp"

// The network structure, written once against an executor interface. An
// executor supplies a Value type and the layer primitives:
//
//   Value conv(const Value&, const std::string& layer, const ConvDesc&);
//   Value linear(const Value&, const std::string& layer, std::int64_t out);
//   Value norm(const Value&, const std::string& layer, NormKind);
//   Value act(const Value&, ActKind);
//   Value max_pool(const Value&, std::int64_t k, std::int64_t s, std::int64_t p);
//   Value gap(const Value&);
//   Value scale(const Value&, const std::string& param);
//   Value drop_path(const Value&, double rate);
//   Value add(const Value&, const Value&);
//   void probe(std::string_view, const Value&);
//
// Eager execution, autograd recording and cost accounting are executors.

namespace cnx {

template <typename T>
using TensorMap = std::map<std::string, BasicTensor<T>, std::less<>>;

struct ConvDesc {
  std::int64_t kernel = 1;
  std::int64_t out_channels = 1;
  Conv2dGeometry geometry;
  bool bias = true;
};

inline std::string weight_name(std::string_view layer) { return std::string(layer) + ".weight"; }
inline std::string bias_name(std::string_view layer) { return std::string(layer) + ".bias"; }
inline std::string mean_name(std::string_view layer) { return std::string(layer) + ".running_mean"; }
inline std::string var_name(std::string_view layer) { return std::string(layer) + ".running_var"; }

inline double norm_eps(NormKind kind) { return kind == NormKind::kLayer ? kLayerNormEps : kBatchNormEps; }

// A conv carries a bias unless a batch norm directly follows it; biases
// before layer norm are kept.
inline bool conv_bias(bool followed_by_norm, NormKind kind) { return !followed_by_norm || kind == NormKind::kLayer; }

template <typename Exec, typename Value>
Value run_stem(Exec& ex, const StemSpec& stem, const Value& x) {
  const bool has_norm = stem.norm.has_value();
  const NormKind kind = stem.norm.value_or(NormKind::kLayer);
  if (stem.kind == StemKind::kResnet) {
    Value y = ex.conv(x, "stem.conv",
                      {stem.kernel, stem.channels, Conv2dGeometry::square(stem.stride, stem.kernel / 2),
                       conv_bias(has_norm, kind)});
    if (has_norm) y = ex.norm(y, "stem.norm", kind);
    y = ex.act(y, ActKind::kRelu);
    return ex.max_pool(y, 3, 2, 1);
  }
  Value y = ex.conv(x, "stem.conv",
                    {stem.kernel, stem.channels, Conv2dGeometry::square(stem.stride, 0), conv_bias(has_norm, kind)});
  if (has_norm) y = ex.norm(y, "stem.norm", kind);
  return y;
}

/// Norm then 2x2 stride-2 conv; layers are <prefix>norm and <prefix>conv.
template <typename Exec, typename Value>
Value run_downsample(Exec& ex, const std::string& prefix, const Value& x, std::int64_t out_channels) {
  Value y = ex.norm(x, prefix + "norm", NormKind::kLayer);
  return ex.conv(y, prefix + "conv", {2, out_channels, Conv2dGeometry::square(2, 0), true});
}

template <typename Exec, typename Value>
Value run_block(Exec& ex, const BlockSpec& b, const std::string& prefix, const Value& x) {
  validate(b);
  const bool per_norm = b.norm_placement == NormPlacement::kPerConv;
  const bool per_act = b.act_placement == ActPlacement::kPerConv;
  const NormKind kind = b.norm_kind;
  const std::int64_t pad = b.kernel_size / 2;
  auto per_conv_norm = [&](const Value& v, const char* layer) {
    return per_norm ? ex.norm(v, prefix + layer + ".norm", kind) : v;
  };

  Value y = x;
  if (b.spatial_position == SpatialPosition::kMiddle) {
    y = ex.conv(y, prefix + "pw1.conv", {1, b.hidden(), {}, conv_bias(per_norm, kind)});
    y = per_conv_norm(y, "pw1");
    if (per_act) y = ex.act(y, b.act_kind);
    y = ex.conv(y, prefix + "spatial.conv",
                {b.kernel_size, b.hidden(), Conv2dGeometry::square(b.stride, pad, b.spatial_groups()),
                 conv_bias(per_norm, kind)});
    y = per_conv_norm(y, "spatial");
    if (per_act) y = ex.act(y, b.act_kind);
  } else {
    y = ex.conv(y, prefix + "spatial.conv",
                {b.kernel_size, b.in_channels, Conv2dGeometry::square(b.stride, pad, b.spatial_groups()),
                 conv_bias(true, kind)});
    y = per_norm ? ex.norm(y, prefix + "spatial.norm", kind) : ex.norm(y, prefix + "norm", kind);
    if (per_act) y = ex.act(y, b.act_kind);
    y = ex.conv(y, prefix + "pw1.conv", {1, b.hidden(), {}, conv_bias(per_norm, kind)});
    y = per_conv_norm(y, "pw1");
    y = ex.act(y, b.act_kind);
  }
  y = ex.conv(y, prefix + "pw2.conv", {1, b.channels, {}, conv_bias(per_norm, kind)});
  y = per_conv_norm(y, "pw2");
  if (b.layer_scale_init) y = ex.scale(y, prefix + "gamma");
  y = ex.drop_path(y, b.drop_path_rate);

  Value shortcut = x;
  if (b.shortcut == Shortcut::kProjection) {
    shortcut = ex.conv(x, prefix + "shortcut.conv",
                       {1, b.channels, Conv2dGeometry::square(b.stride, 0), conv_bias(per_norm, kind)});
    shortcut = per_conv_norm(shortcut, "shortcut");
  }
  Value out = ex.add(y, shortcut);
  if (per_act) out = ex.act(out, b.act_kind);
  return out;
}

template <typename Exec, typename Value>
Value run_head(Exec& ex, const HeadSpec& head, const Value& x) {
  Value y = ex.gap(x);
  if (head.final_norm) y = ex.norm(y, "head.norm", NormKind::kLayer);
  ex.probe("pooled", y);
  y = ex.linear(y, "head.fc", head.num_classes);
  ex.probe("logits", y);
  return y;
}

template <typename Exec, typename Value>
Value run_model(Exec& ex, const ModelSpec& spec, const Value& x) {
  const auto blocks = expand_blocks(spec);
  Value y = run_stem(ex, spec.stem, x);
  ex.probe("stem", y);
  std::size_t next = 0;
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    if (spec.downsampling == Downsampling::kSeparate && i > 0)
      y = run_downsample(ex, stage_prefix(i) + "downsample.", y, spec.stages[i].block.channels);
    for (; next < blocks.size() && blocks[next].stage == i; ++next) y = run_block(ex, blocks[next].spec, blocks[next].prefix, y);
    ex.probe("stages." + std::to_string(i), y);
  }
  return run_head(ex, spec.head, y);
}

// ---------------------------------------------------------------------------
// Execution mode

/// eval: drop-path is the identity. train: drop-path draws from a stream
/// seeded here, one Bernoulli per batch row per block, in execution order.
struct Mode {
  bool training = false;
  std::uint64_t seed = 0;

  static Mode eval() { return {}; }
  static Mode train(std::uint64_t seed) { return {true, seed}; }
};

/// Per-row multipliers for a drop-path realization: 0 or 1/(1-rate).
template <typename T>
std::vector<T> draw_drop_path(Rng& rng, std::int64_t rows, double rate) {
  std::vector<T> m(static_cast<std::size_t>(rows));
  for (auto& v : m) v = rng.bernoulli(1.0 - rate) ? static_cast<T>(1.0 / (1.0 - rate)) : T(0);
  return m;
}

// ---------------------------------------------------------------------------
// Eager executor

template <typename T>
class EagerExec {
 public:
  using Value = BasicTensor<T>;

  EagerExec(const TensorMap<T>& weights, Mode mode) : weights_(weights), mode_(mode), rng_(mode.seed) {}

  void capture_probes(TensorMap<T>* sink) { probes_ = sink; }

  Value conv(const Value& x, const std::string& layer, const ConvDesc& d) {
    const auto& w = param(weight_name(layer), {d.kernel, d.kernel, x.c() / d.geometry.groups, d.out_channels});
    const Value* b = d.bias ? &param(bias_name(layer), Shape::vec(d.out_channels)) : nullptr;
    return conv2d(x, w, b, d.geometry);
  }

  Value linear(const Value& x, const std::string& layer, std::int64_t out) {
    const auto& w = param(weight_name(layer), Shape::mat(x.c(), out));
    return cnx::linear(x, w, &param(bias_name(layer), Shape::vec(out)));
  }

  Value norm(const Value& x, const std::string& layer, NormKind kind) {
    const Shape v = Shape::vec(x.c());
    const auto& g = param(weight_name(layer), v);
    const auto& b = param(bias_name(layer), v);
    if (kind == NormKind::kLayer) return layer_norm(x, g, b, kLayerNormEps);
    NormParams<T> p{g, b, kBatchNormEps, param(mean_name(layer), v), param(var_name(layer), v)};
    return batch_norm_inference(x, p);
  }

  Value act(const Value& x, ActKind kind) { return kind == ActKind::kRelu ? relu(x) : gelu(x); }
  Value max_pool(const Value& x, std::int64_t k, std::int64_t s, std::int64_t p) { return cnx::max_pool(x, k, s, p); }
  Value gap(const Value& x) { return global_avg_pool(x); }
  Value scale(const Value& x, const std::string& name) { return channel_scale(x, param(name, Shape::vec(x.c()))); }
  Value add(const Value& a, const Value& b) { return cnx::add(a, b); }

  Value drop_path(const Value& x, double rate) {
    if (!mode_.training || rate <= 0.0) return x;
    const auto m = draw_drop_path<T>(rng_, x.n(), rate);
    return sample_scale<T>(x, m);
  }

  void probe(std::string_view name, const Value& v) {
    if (probes_) (*probes_)[std::string(name)] = v;
  }

 private:
  const Value& param(const std::string& name, const Shape& expected) {
    auto it = weights_.find(name);
    if (it == weights_.end()) fail(ErrorKind::kMissingEntry, "missing parameter '" + name + "'");
    if (it->second.shape() != expected)
      fail(ErrorKind::kExtentMismatch, "parameter '" + name + "' has extents " + to_string(it->second.shape()) +
                                           ", expected " + to_string(expected));
    return it->second;
  }

  const TensorMap<T>& weights_;
  Mode mode_;
  Rng rng_;
  TensorMap<T>* probes_ = nullptr;
};

// ---------------------------------------------------------------------------
// Shape executor: walks the graph on extents only, recording every parameter
// and the multiply-accumulates of each conv / linear layer.

enum class ParamRole { kWeight, kBias, kNormScale, kNormShift, kRunningStat, kLayerScale };

struct ParamRecord {
  std::string name;
  Shape shape;
  ParamRole role;
  bool trainable() const { return role != ParamRole::kRunningStat; }
};

struct LayerRecord {
  std::string name;
  std::string kind;  // conv, linear, norm, layer_scale
  std::int64_t params = 0;
  std::int64_t non_trainable = 0;
  std::int64_t macs = 0;
  Shape output;
};

class ShapeExec {
 public:
  using Value = Shape;

  Value conv(const Value& x, const std::string& layer, const ConvDesc& d) {
    const Shape w{d.kernel, d.kernel, x.c / d.geometry.groups, d.out_channels};
    const Shape out = conv2d_output_shape(x, w, d.geometry);
    LayerRecord rec{layer, "conv", w.numel(), 0, out.n * out.h * out.w * w.numel(), out};
    add_param(weight_name(layer), w, ParamRole::kWeight);
    if (d.bias) {
      add_param(bias_name(layer), Shape::vec(d.out_channels), ParamRole::kBias);
      rec.params += d.out_channels;
    }
    layers.push_back(rec);
    return out;
  }

  Value linear(const Value& x, const std::string& layer, std::int64_t out_ch) {
    const Shape w = Shape::mat(x.c, out_ch);
    const Shape out{x.n, x.h, x.w, out_ch};
    add_param(weight_name(layer), w, ParamRole::kWeight);
    add_param(bias_name(layer), Shape::vec(out_ch), ParamRole::kBias);
    layers.push_back({layer, "linear", w.numel() + out_ch, 0, x.n * x.h * x.w * w.numel(), out});
    return out;
  }

  Value norm(const Value& x, const std::string& layer, NormKind kind) {
    const Shape v = Shape::vec(x.c);
    add_param(weight_name(layer), v, ParamRole::kNormScale);
    add_param(bias_name(layer), v, ParamRole::kNormShift);
    LayerRecord rec{layer, kind == NormKind::kLayer ? "layer_norm" : "batch_norm", 2 * x.c, 0, 0, x};
    if (kind == NormKind::kBatch) {
      add_param(mean_name(layer), v, ParamRole::kRunningStat);
      add_param(var_name(layer), v, ParamRole::kRunningStat);
      rec.non_trainable = 2 * x.c;
    }
    layers.push_back(rec);
    ++norm_layers;
    return x;
  }

  Value act(const Value& x, ActKind) {
    ++act_layers;
    return x;
  }
  Value max_pool(const Value& x, std::int64_t k, std::int64_t s, std::int64_t p) {
    return max_pool_output_shape(x, k, s, p);
  }
  Value gap(const Value& x) { return {x.n, 1, 1, x.c}; }
  Value scale(const Value& x, const std::string& name) {
    add_param(name, Shape::vec(x.c), ParamRole::kLayerScale);
    layers.push_back({name, "layer_scale", x.c, 0, 0, x});
    return x;
  }
  Value drop_path(const Value& x, double) { return x; }
  Value add(const Value& a, const Value& b) {
    require(a == b, ErrorKind::kShape, "residual add: extents differ (" + to_string(a) + " vs " + to_string(b) + ")");
    return a;
  }
  void probe(std::string_view name, const Value& v) { probes[std::string(name)] = v; }

  std::vector<ParamRecord> params;
  std::vector<LayerRecord> layers;
  std::map<std::string, Shape, std::less<>> probes;
  std::int64_t norm_layers = 0;
  std::int64_t act_layers = 0;

 private:
  void add_param(std::string name, Shape s, ParamRole role) { params.push_back({std::move(name), s, role}); }
};

}  // namespace cnx
