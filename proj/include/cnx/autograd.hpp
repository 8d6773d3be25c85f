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

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cnx/error.hpp"
#include "cnx/graph.hpp"
#include "cnx/kernels.hpp"
#include "cnx/random.hpp"
#include "cnx/tensor.hpp"

// Reverse-mode differentiation over a linear tape. Nodes are appended in
// execution order, so the tape is topologically sorted by construction and
// backward is a single reverse sweep.

namespace cnx::ag {

struct Var {
  std::size_t id = 0;
};

template <typename T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;
  // Receives the output gradient and pushes input gradients via accumulate().
  using BackwardFn = std::function<void(Tape&, const TensorT&)>;

  Tape() = default;

  /// A tape that evaluates without keeping backward rules.
  static Tape no_grad() {
    Tape t;
    t.recording_ = false;
    return t;
  }

  bool recording() const { return recording_; }

  Var leaf(TensorT value, std::string name = {}, bool requires_grad = true) {
    nodes_.push_back({std::move(value), {}, requires_grad && recording_, std::move(name), "leaf", {}});
    return {nodes_.size() - 1};
  }

  Var constant(TensorT value) { return leaf(std::move(value), {}, false); }

  /// Appends an op result. The rule is kept only if some input needs grads.
  Var record(TensorT value, std::initializer_list<Var> inputs, const char* op, BackwardFn fn) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    Node n{std::move(value), {}, needs && recording_, {}, op, {}};
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  const TensorT& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void accumulate(Var v, const TensorT& g) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    require(g.shape() == n.value.shape(), ErrorKind::kShape,
            std::string("gradient extents mismatch at node ") + n.op);
    if (!n.grad) {
      n.grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) (*n.grad)[i] += g[i];
  }

  /// Reverse sweep from `output` seeded with `seed` (d loss / d output).
  void backward(Var output, const TensorT& seed) {
    require(recording_, ErrorKind::kState, "backward on a tape recorded without gradients");
    require(nodes_.at(output.id).requires_grad, ErrorKind::kState, "output does not depend on any parameter");
    for (auto& n : nodes_) n.grad.reset();
    accumulate(output, seed);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.grad || !n.backward) continue;
      const TensorT g = *n.grad;
      n.backward(*this, g);
    }
    done_ = true;
  }

  /// Scalar outputs seed with 1.
  void backward(Var loss) {
    require(value(loss).size() == 1, ErrorKind::kShape, "backward(loss) needs a scalar output");
    backward(loss, TensorT(value(loss).shape(), T(1)));
  }

  std::optional<TensorT> grad(Var v) const { return nodes_.at(v.id).grad; }

  /// Gradients of every named leaf reached by the last backward sweep.
  TensorMap<T> named_grads() const {
    require(done_, ErrorKind::kState, "no backward sweep has run on this tape");
    TensorMap<T> out;
    for (const auto& n : nodes_)
      if (!n.name.empty() && n.grad) out.emplace(n.name, *n.grad);
    return out;
  }

 private:
  struct Node {
    TensorT value;
    std::optional<TensorT> grad;
    bool requires_grad = false;
    std::string name;
    const char* op = "";
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool recording_ = true;
  bool done_ = false;
};

/// Gradient lookup that refuses parameters the loss never reached.
template <typename T>
class GradStore {
 public:
  explicit GradStore(TensorMap<T> grads) : grads_(std::move(grads)) {}

  const BasicTensor<T>& at(std::string_view name) const {
    auto it = grads_.find(name);
    if (it == grads_.end()) fail(ErrorKind::kState, "parameter '" + std::string(name) + "' is detached from the loss");
    return it->second;
  }
  bool contains(std::string_view name) const { return grads_.find(name) != grads_.end(); }
  const TensorMap<T>& all() const { return grads_; }

 private:
  TensorMap<T> grads_;
};

template <typename T>
GradStore<T> backward(Tape<T>& tape, Var loss) {
  tape.backward(loss);
  return GradStore<T>(tape.named_grads());
}

template <typename T>
GradStore<T> backward(Tape<T>& tape, Var output, const BasicTensor<T>& output_grad) {
  tape.backward(output, output_grad);
  return GradStore<T>(tape.named_grads());
}

// ---------------------------------------------------------------------------
// Differentiable ops

template <typename T>
Var conv2d(Tape<T>& t, Var x, Var w, std::optional<Var> b, const Conv2dGeometry& g) {
  auto y = cnx::conv2d(t.value(x), t.value(w), b ? &t.value(*b) : nullptr, g);
  if (b)
    return t.record(std::move(y), {x, w, *b}, "conv2d", [x, w, b, g](Tape<T>& tp, const BasicTensor<T>& go) {
      BasicTensor<T> gx, gw, gb;
      conv2d_backward(tp.value(x), tp.value(w), g, go, tp.requires_grad(x) ? &gx : nullptr,
                      tp.requires_grad(w) ? &gw : nullptr, tp.requires_grad(*b) ? &gb : nullptr);
      if (tp.requires_grad(x)) tp.accumulate(x, gx);
      if (tp.requires_grad(w)) tp.accumulate(w, gw);
      if (tp.requires_grad(*b)) tp.accumulate(*b, gb);
    });
  return t.record(std::move(y), {x, w}, "conv2d", [x, w, g](Tape<T>& tp, const BasicTensor<T>& go) {
    BasicTensor<T> gx, gw;
    conv2d_backward(tp.value(x), tp.value(w), g, go, tp.requires_grad(x) ? &gx : nullptr,
                    tp.requires_grad(w) ? &gw : nullptr, static_cast<BasicTensor<T>*>(nullptr));
    if (tp.requires_grad(x)) tp.accumulate(x, gx);
    if (tp.requires_grad(w)) tp.accumulate(w, gw);
  });
}

template <typename T>
Var linear(Tape<T>& t, Var x, Var w, std::optional<Var> b) {
  auto y = cnx::linear(t.value(x), t.value(w), b ? &t.value(*b) : nullptr);
  auto rule = [x, w, b](Tape<T>& tp, const BasicTensor<T>& go) {
    BasicTensor<T> gx, gw, gb;
    const bool want_b = b && tp.requires_grad(*b);
    linear_backward(tp.value(x), tp.value(w), go, tp.requires_grad(x) ? &gx : nullptr,
                    tp.requires_grad(w) ? &gw : nullptr, want_b ? &gb : nullptr);
    if (tp.requires_grad(x)) tp.accumulate(x, gx);
    if (tp.requires_grad(w)) tp.accumulate(w, gw);
    if (want_b) tp.accumulate(*b, gb);
  };
  if (b) return t.record(std::move(y), {x, w, *b}, "linear", rule);
  return t.record(std::move(y), {x, w}, "linear", rule);
}

template <typename T>
Var layer_norm(Tape<T>& t, Var x, Var gamma, Var beta, double eps = kLayerNormEps) {
  auto y = cnx::layer_norm(t.value(x), t.value(gamma), t.value(beta), eps);
  return t.record(std::move(y), {x, gamma, beta}, "layer_norm",
                  [x, gamma, beta, eps](Tape<T>& tp, const BasicTensor<T>& go) {
                    BasicTensor<T> gx, gg, gb;
                    layer_norm_backward(tp.value(x), tp.value(gamma), eps, go, &gx, &gg, &gb);
                    tp.accumulate(x, gx);
                    tp.accumulate(gamma, gg);
                    tp.accumulate(beta, gb);
                  });
}

/// Batch norm with fixed running statistics (an affine map per channel).
template <typename T>
Var batch_norm(Tape<T>& t, Var x, Var gamma, Var beta, BasicTensor<T> mean, BasicTensor<T> var,
               double eps = kBatchNormEps) {
  NormParams<T> p{t.value(gamma), t.value(beta), eps, std::move(mean), std::move(var)};
  auto y = batch_norm_inference(t.value(x), p);
  return t.record(std::move(y), {x, gamma, beta}, "batch_norm",
                  [x, gamma, beta, p = std::move(p)](Tape<T>& tp, const BasicTensor<T>& go) {
                    BasicTensor<T> gx, gg, gb;
                    batch_norm_inference_backward(tp.value(x), p, go, &gx, &gg, &gb);
                    tp.accumulate(x, gx);
                    tp.accumulate(gamma, gg);
                    tp.accumulate(beta, gb);
                  });
}

template <typename T>
Var gelu(Tape<T>& t, Var x) {
  return t.record(cnx::gelu(t.value(x)), {x}, "gelu", [x](Tape<T>& tp, const BasicTensor<T>& go) {
    tp.accumulate(x, gelu_backward(tp.value(x), go));
  });
}

template <typename T>
Var relu(Tape<T>& t, Var x) {
  return t.record(cnx::relu(t.value(x)), {x}, "relu", [x](Tape<T>& tp, const BasicTensor<T>& go) {
    tp.accumulate(x, relu_backward(tp.value(x), go));
  });
}

template <typename T>
Var max_pool(Tape<T>& t, Var x, std::int64_t k, std::int64_t s, std::int64_t p) {
  return t.record(cnx::max_pool(t.value(x), k, s, p), {x}, "max_pool",
                  [x, k, s, p](Tape<T>& tp, const BasicTensor<T>& go) {
                    tp.accumulate(x, max_pool_backward(tp.value(x), k, s, p, go));
                  });
}

template <typename T>
Var global_avg_pool(Tape<T>& t, Var x) {
  return t.record(cnx::global_avg_pool(t.value(x)), {x}, "global_avg_pool",
                  [x](Tape<T>& tp, const BasicTensor<T>& go) {
                    tp.accumulate(x, global_avg_pool_backward(tp.value(x).shape(), go));
                  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  return t.record(cnx::add(t.value(a), t.value(b)), {a, b}, "add", [a, b](Tape<T>& tp, const BasicTensor<T>& go) {
    tp.accumulate(a, go);
    tp.accumulate(b, go);
  });
}

/// Layer scale: y[..., c] = x[..., c] * gamma[c].
template <typename T>
Var channel_scale(Tape<T>& t, Var x, Var gamma) {
  return t.record(cnx::channel_scale(t.value(x), t.value(gamma)), {x, gamma}, "channel_scale",
                  [x, gamma](Tape<T>& tp, const BasicTensor<T>& go) {
                    const auto& xv = tp.value(x);
                    const auto& gv = tp.value(gamma);
                    const std::size_t c = static_cast<std::size_t>(xv.c());
                    tp.accumulate(x, cnx::channel_scale(go, gv));
                    BasicTensor<T> gg(gv.shape());
                    for (std::size_t i = 0; i < go.size(); ++i) gg[i % c] += go[i] * xv[i];
                    tp.accumulate(gamma, gg);
                  });
}

/// Drop-path with a fixed realization: row n scaled by factors[n]. The mask
/// lives in the rule so backward sees the forward draw.
template <typename T>
Var sample_scale(Tape<T>& t, Var x, std::vector<T> factors) {
  auto y = cnx::sample_scale<T>(t.value(x), factors);
  return t.record(std::move(y), {x}, "drop_path", [x, f = std::move(factors)](Tape<T>& tp, const BasicTensor<T>& go) {
    tp.accumulate(x, cnx::sample_scale<T>(go, f));
  });
}

/// Scalar sum(x * weights); turns any op into a scalar test function.
template <typename T>
Var weighted_sum(Tape<T>& t, Var x, BasicTensor<T> weights) {
  require(weights.shape() == t.value(x).shape(), ErrorKind::kShape, "weighted_sum: extents mismatch");
  const auto& xv = t.value(x);
  T s = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
  return t.record(BasicTensor<T>(Shape{}, std::vector<T>{s}), {x}, "weighted_sum",
                  [x, w = std::move(weights)](Tape<T>& tp, const BasicTensor<T>& go) {
                    BasicTensor<T> gx(w.shape());
                    for (std::size_t i = 0; i < w.size(); ++i) gx[i] = w[i] * go[0];
                    tp.accumulate(x, gx);
                  });
}

/// 0.5 * sum((y - target)^2).
template <typename T>
Var squared_error(Tape<T>& t, Var y, BasicTensor<T> target) {
  const auto& yv = t.value(y);
  require(target.shape() == yv.shape(), ErrorKind::kShape, "squared_error: extents mismatch");
  T s = 0;
  for (std::size_t i = 0; i < yv.size(); ++i) s += T(0.5) * (yv[i] - target[i]) * (yv[i] - target[i]);
  return t.record(BasicTensor<T>(Shape{}, std::vector<T>{s}), {y}, "squared_error",
                  [y, tg = std::move(target)](Tape<T>& tp, const BasicTensor<T>& go) {
                    const auto& v = tp.value(y);
                    BasicTensor<T> g(v.shape());
                    for (std::size_t i = 0; i < v.size(); ++i) g[i] = (v[i] - tg[i]) * go[0];
                    tp.accumulate(y, g);
                  });
}

/// Row-wise log-softmax of N x 1 x 1 x K logits.
template <typename T>
std::vector<T> log_softmax_rows(const BasicTensor<T>& logits) {
  const std::size_t k = static_cast<std::size_t>(logits.c());
  const std::size_t rows = logits.size() / k;
  std::vector<T> out(logits.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.raw() + r * k;
    T mx = z[0];
    for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, z[i]);
    T sum = 0;
    for (std::size_t i = 0; i < k; ++i) sum += std::exp(z[i] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t i = 0; i < k; ++i) out[r * k + i] = z[i] - lse;
  }
  return out;
}

/// Mean over the batch of -sum_k q_k log softmax(z)_k with
/// q = (1 - eps) * onehot(label) + eps / K.
template <typename T>
T cross_entropy_smoothed_value(const BasicTensor<T>& logits, std::span<const std::int64_t> labels, double eps) {
  const std::int64_t k = logits.c();
  const std::size_t rows = logits.size() / static_cast<std::size_t>(k);
  require(logits.h() == 1 && logits.w() == 1, ErrorKind::kShape, "cross_entropy: logits must be N x 1 x 1 x K");
  require(labels.size() == rows, ErrorKind::kShape, "cross_entropy: one label per row required");
  require(eps >= 0 && eps < 1, ErrorKind::kInvalidArgument, "cross_entropy: smoothing must lie in [0, 1)");
  const auto ls = log_softmax_rows(logits);
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    require(labels[r] >= 0 && labels[r] < k, ErrorKind::kInvalidArgument, "cross_entropy: label out of range");
    for (std::int64_t i = 0; i < k; ++i) {
      const T q = static_cast<T>(eps / static_cast<double>(k)) + (i == labels[r] ? static_cast<T>(1 - eps) : T(0));
      total -= q * ls[r * static_cast<std::size_t>(k) + static_cast<std::size_t>(i)];
    }
  }
  return total / static_cast<T>(rows);
}

template <typename T>
Var cross_entropy_smoothed(Tape<T>& t, Var logits, std::vector<std::int64_t> labels, double eps) {
  const T loss = cross_entropy_smoothed_value(t.value(logits), labels, eps);
  return t.record(BasicTensor<T>(Shape{}, std::vector<T>{loss}), {logits}, "cross_entropy",
                  [logits, labels = std::move(labels), eps](Tape<T>& tp, const BasicTensor<T>& go) {
                    const auto& z = tp.value(logits);
                    const std::size_t k = static_cast<std::size_t>(z.c());
                    const std::size_t rows = z.size() / k;
                    const auto ls = log_softmax_rows(z);
                    BasicTensor<T> g(z.shape());
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t i = 0; i < k; ++i) {
                        const T q = static_cast<T>(eps / static_cast<double>(k)) +
                                    (static_cast<std::int64_t>(i) == labels[r] ? static_cast<T>(1 - eps) : T(0));
                        g[r * k + i] = (std::exp(ls[r * k + i]) - q) / static_cast<T>(rows) * go[0];
                      }
                    tp.accumulate(logits, g);
                  });
}

// ---------------------------------------------------------------------------
// Tape executor: records the shared model graph.

template <typename T>
class TapeExec {
 public:
  using Value = Var;

  using VarMap = std::map<std::string, Var, std::less<>>;

  /// `bound` optionally supplies existing leaves to use instead of fresh ones.
  TapeExec(Tape<T>& tape, const TensorMap<T>& params, Mode mode, const VarMap* bound = nullptr)
      : tape_(tape), params_(params), mode_(mode), rng_(mode.seed) {
    if (bound) vars_ = *bound;
  }

  Tape<T>& tape() { return tape_; }

  Value conv(const Value& x, const std::string& layer, const ConvDesc& d) {
    const std::int64_t cin = tape_.value(x).c();
    Var w = param(weight_name(layer), {d.kernel, d.kernel, cin / d.geometry.groups, d.out_channels});
    std::optional<Var> b;
    if (d.bias) b = param(bias_name(layer), Shape::vec(d.out_channels));
    return ag::conv2d(tape_, x, w, b, d.geometry);
  }

  Value linear(const Value& x, const std::string& layer, std::int64_t out) {
    const std::int64_t cin = tape_.value(x).c();
    return ag::linear(tape_, x, param(weight_name(layer), Shape::mat(cin, out)),
                      std::optional<Var>(param(bias_name(layer), Shape::vec(out))));
  }

  Value norm(const Value& x, const std::string& layer, NormKind kind) {
    const Shape v = Shape::vec(tape_.value(x).c());
    Var g = param(weight_name(layer), v);
    Var b = param(bias_name(layer), v);
    if (kind == NormKind::kLayer) return ag::layer_norm(tape_, x, g, b, kLayerNormEps);
    return ag::batch_norm(tape_, x, g, b, stat(mean_name(layer), v), stat(var_name(layer), v), kBatchNormEps);
  }

  Value act(const Value& x, ActKind kind) { return kind == ActKind::kRelu ? ag::relu(tape_, x) : ag::gelu(tape_, x); }
  Value max_pool(const Value& x, std::int64_t k, std::int64_t s, std::int64_t p) { return ag::max_pool(tape_, x, k, s, p); }
  Value gap(const Value& x) { return ag::global_avg_pool(tape_, x); }
  Value scale(const Value& x, const std::string& name) {
    return ag::channel_scale(tape_, x, param(name, Shape::vec(tape_.value(x).c())));
  }
  Value add(const Value& a, const Value& b) { return ag::add(tape_, a, b); }
  Value drop_path(const Value& x, double rate) {
    if (!mode_.training || rate <= 0.0) return x;
    auto mask = draw_drop_path<T>(rng_, tape_.value(x).n(), rate);
    masks_.push_back(mask);
    return ag::sample_scale(tape_, x, std::move(mask));
  }
  void probe(std::string_view, const Value&) {}

  /// Leaf variable of every parameter touched so far.
  const VarMap& param_vars() const { return vars_; }
  const std::vector<std::vector<T>>& drop_masks() const { return masks_; }

 private:
  Var param(const std::string& name, const Shape& expected) {
    if (auto it = vars_.find(name); it != vars_.end()) {
      require(tape_.value(it->second).shape() == expected, ErrorKind::kExtentMismatch,
              "parameter '" + name + "' extents mismatch");
      return it->second;
    }
    auto it = params_.find(name);
    if (it == params_.end()) fail(ErrorKind::kMissingEntry, "missing parameter '" + name + "'");
    if (it->second.shape() != expected)
      fail(ErrorKind::kExtentMismatch, "parameter '" + name + "' has extents " + to_string(it->second.shape()) +
                                           ", expected " + to_string(expected));
    Var v = tape_.leaf(it->second, name);
    vars_.emplace(name, v);
    return v;
  }

  BasicTensor<T> stat(const std::string& name, const Shape& expected) {
    auto it = params_.find(name);
    if (it == params_.end()) fail(ErrorKind::kMissingEntry, "missing parameter '" + name + "'");
    require(it->second.shape() == expected, ErrorKind::kExtentMismatch, "parameter '" + name + "' extents mismatch");
    return it->second;
  }

  Tape<T>& tape_;
  const TensorMap<T>& params_;
  Mode mode_;
  Rng rng_;
  VarMap vars_;
  std::vector<std::vector<T>> masks_;
};

}  // namespace cnx::ag
