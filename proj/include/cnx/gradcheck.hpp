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
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cnx/analysis.hpp"
#include "cnx/arch.hpp"
#include "cnx/autograd.hpp"
#include "cnx/blocks.hpp"
#include "cnx/error.hpp"
#include "cnx/random.hpp"

namespace cnx::gradcheck {

using VarMap = std::map<std::string, ag::Var, std::less<>>;
/// Builds a scalar on the tape from leaf variables keyed like `params`.
using ScalarFn = std::function<ag::Var(ag::Tape<double>&, const VarMap&)>;

inline constexpr double kDelta = 1e-12;

struct ParamError {
  std::string name;
  std::size_t entries = 0;
  double rel_error = 0.0;
};

struct Report {
  std::vector<ParamError> params;
  double max_rel_error = 0.0;
  double tol = 0.0;
  bool pass = false;
};

/// Normwise relative error max|a - b| / (max|a| + max|b| + delta).
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0, ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    ma = std::max(ma, std::abs(a[i]));
    mb = std::max(mb, std::abs(b[i]));
  }
  return diff / (ma + mb + kDelta);
}

namespace detail {

inline double eval(const ScalarFn& fn, const TensorMap<double>& params) {
  auto tape = ag::Tape<double>::no_grad();
  VarMap vars;
  for (const auto& [name, t] : params) vars.emplace(name, tape.leaf(t, name, false));
  const double v = tape.value(fn(tape, vars))[0];
  require(std::isfinite(v), ErrorKind::kNonFinite, "finite_diff_check: non-finite loss value");
  return v;
}

}  // namespace detail

/// Compares reverse-mode gradients of `fn` against central differences.
inline Report finite_diff_check(const ScalarFn& fn, TensorMap<double> params, double h = 1e-5, double tol = 1e-5) {
  require(h > 0 && tol > 0, ErrorKind::kInvalidArgument, "finite_diff_check: h and tol must be positive");
  ag::Tape<double> tape;
  VarMap vars;
  for (const auto& [name, t] : params) vars.emplace(name, tape.leaf(t, name));
  ag::Var out = fn(tape, vars);
  require(tape.value(out).size() == 1, ErrorKind::kShape, "finite_diff_check: fn must be scalar-valued");
  require(std::isfinite(tape.value(out)[0]), ErrorKind::kNonFinite, "finite_diff_check: non-finite loss value");
  tape.backward(out);

  Report report;
  report.tol = tol;
  for (auto& [name, t] : params) {
    const auto g = tape.grad(vars.at(name));
    std::vector<double> ad(t.size(), 0.0);
    if (g) std::copy(g->raw(), g->raw() + g->size(), ad.begin());
    std::vector<double> fd(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      require(std::isfinite(ad[i]), ErrorKind::kNonFinite, "finite_diff_check: non-finite gradient for " + name);
      const double orig = t[i];
      t[i] = orig + h;
      const double fp = detail::eval(fn, params);
      t[i] = orig - h;
      const double fm = detail::eval(fn, params);
      t[i] = orig;
      fd[i] = (fp - fm) / (2 * h);
    }
    const double e = relative_error(ad, fd);
    report.params.push_back({name, t.size(), e});
    report.max_rel_error = std::max(report.max_rel_error, e);
  }
  report.pass = report.max_rel_error <= tol;
  return report;
}

// ---------------------------------------------------------------------------
// Property cases

/// Deliberate corruption of one backward rule, for the negative control.
enum class Fault { kNone, kGeluGrad };

inline Fault parse_fault(std::string_view s) {
  if (s == "none") return Fault::kNone;
  if (s == "gelu-grad") return Fault::kGeluGrad;
  fail(ErrorKind::kUnknownName, "unknown fault '" + std::string(s) + "' (expected none or gelu-grad)");
}

/// GELU whose recorded adjoint is off by 1%.
inline ag::Var faulty_gelu(ag::Tape<double>& t, ag::Var x) {
  return t.record(cnx::gelu(t.value(x)), {x}, "gelu", [x](ag::Tape<double>& tp, const Tensor64& go) {
    auto g = gelu_backward(tp.value(x), go);
    for (auto& v : g.data()) v *= 1.01;
    tp.accumulate(x, g);
  });
}

inline ag::Var gelu_op(ag::Tape<double>& t, ag::Var x, Fault fault) {
  return fault == Fault::kGeluGrad ? faulty_gelu(t, x) : ag::gelu(t, x);
}

struct CaseResult {
  std::string op;
  std::string instance;
  Report report;
};

inline constexpr std::array<std::string_view, 12> kOpNames = {
    "conv2d", "linear",          "layer_norm",  "batch_norm", "gelu", "relu",
    "max_pool", "global_avg_pool", "layer_scale", "drop_path",  "add",  "cross_entropy"};

namespace detail {

inline Tensor64 random_tensor(Rng& rng, Shape s, double scale = 1.0) {
  Tensor64 t(s);
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

inline std::int64_t pick(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

/// Wraps an op output into a scalar with fixed random weights.
inline ag::Var project(ag::Tape<double>& t, ag::Var y, std::uint64_t seed) {
  Rng r(seed);
  return ag::weighted_sum(t, y, random_tensor(r, t.value(y).shape()));
}

struct Built {
  std::string instance;
  TensorMap<double> params;
  ScalarFn fn;
};

inline Built conv_case(Rng& rng, int kind, std::uint64_t proj) {
  static constexpr std::array<const char*, 4> kKinds = {"dense", "grouped", "depthwise", "strided"};
  const std::int64_t groups = kind == 1 ? 2 : 1;
  std::int64_t cin = kind == 1 ? 2 * pick(rng, 1, 3) : pick(rng, 1, 4);
  if (kind == 2) cin = pick(rng, 2, 5);
  const std::int64_t cout = kind == 2 ? cin : (kind == 1 ? 2 * pick(rng, 1, 2) : pick(rng, 1, 4));
  const std::int64_t k = pick(rng, 1, 3);
  const std::int64_t stride = kind == 3 ? 2 : 1;
  const std::int64_t pad = k / 2;
  Conv2dGeometry g = Conv2dGeometry::square(stride, pad, kind == 2 ? cin : groups);
  const Shape xs{pick(rng, 1, 2), pick(rng, 3, 6), pick(rng, 3, 6), cin};
  Built b;
  b.instance = cnx::detail::printf_string("%s x=%s k=%lld", kKinds[static_cast<std::size_t>(kind)], to_string(xs).c_str(),
                             static_cast<long long>(k));
  b.params.emplace("x", random_tensor(rng, xs));
  b.params.emplace("weight", random_tensor(rng, {k, k, cin / g.groups, cout}, 0.5));
  b.params.emplace("bias", random_tensor(rng, Shape::vec(cout)));
  b.fn = [g, proj](ag::Tape<double>& t, const VarMap& v) {
    return project(t, ag::conv2d(t, v.at("x"), v.at("weight"), v.at("bias"), g), proj);
  };
  return b;
}

inline std::vector<Built> build_cases(std::string_view op, std::size_t instances, std::uint64_t seed, Fault fault) {
  Rng rng(seed);
  std::vector<Built> out;
  auto small = [&] { return Shape{pick(rng, 1, 2), pick(rng, 2, 4), pick(rng, 2, 4), pick(rng, 2, 5)}; };
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t proj = rng.next_u64();
    if (op == "conv2d") {
      for (int kind = 0; kind < 4; ++kind) out.push_back(conv_case(rng, kind, proj + static_cast<std::uint64_t>(kind)));
      continue;
    }
    Built b;
    const Shape xs = small();
    b.instance = "x=" + to_string(xs);
    if (op == "linear") {
      const std::int64_t out_c = pick(rng, 1, 4);
      b.params.emplace("x", random_tensor(rng, xs));
      b.params.emplace("weight", random_tensor(rng, Shape::mat(xs.c, out_c)));
      b.params.emplace("bias", random_tensor(rng, Shape::vec(out_c)));
      b.fn = [proj](ag::Tape<double>& t, const VarMap& v) {
        return project(t, ag::linear(t, v.at("x"), v.at("weight"), std::optional<ag::Var>(v.at("bias"))), proj);
      };
    } else if (op == "layer_norm" || op == "batch_norm") {
      b.params.emplace("x", random_tensor(rng, xs));
      Tensor64 gamma = random_tensor(rng, Shape::vec(xs.c), 0.3);
      for (auto& v : gamma.data()) v += 1.0;
      b.params.emplace("gamma", gamma);
      b.params.emplace("beta", random_tensor(rng, Shape::vec(xs.c)));
      if (op == "layer_norm") {
        b.fn = [proj](ag::Tape<double>& t, const VarMap& v) {
          return project(t, ag::layer_norm(t, v.at("x"), v.at("gamma"), v.at("beta")), proj);
        };
      } else {
        Tensor64 mean = random_tensor(rng, Shape::vec(xs.c));
        Tensor64 var(Shape::vec(xs.c));
        for (auto& v : var.data()) v = 0.5 + rng.uniform();
        b.fn = [proj, mean, var](ag::Tape<double>& t, const VarMap& v) {
          return project(t, ag::batch_norm(t, v.at("x"), v.at("gamma"), v.at("beta"), mean, var), proj);
        };
      }
    } else if (op == "gelu") {
      b.params.emplace("x", random_tensor(rng, xs, 2.0));
      b.fn = [proj, fault](ag::Tape<double>& t, const VarMap& v) { return project(t, gelu_op(t, v.at("x"), fault), proj); };
    } else if (op == "relu") {
      // Keep samples away from the kink at zero.
      Tensor64 x = random_tensor(rng, xs);
      for (auto& v : x.data()) v = (v < 0 ? -0.1 : 0.1) + v;
      b.params.emplace("x", x);
      b.fn = [proj](ag::Tape<double>& t, const VarMap& v) { return project(t, ag::relu(t, v.at("x")), proj); };
    } else if (op == "max_pool") {
      const Shape ps{xs.n, pick(rng, 4, 7), pick(rng, 4, 7), xs.c};
      b.instance = "x=" + to_string(ps);
      b.params.emplace("x", random_tensor(rng, ps));
      b.fn = [proj](ag::Tape<double>& t, const VarMap& v) { return project(t, ag::max_pool(t, v.at("x"), 3, 2, 1), proj); };
    } else if (op == "global_avg_pool") {
      b.params.emplace("x", random_tensor(rng, xs));
      b.fn = [proj](ag::Tape<double>& t, const VarMap& v) { return project(t, ag::global_avg_pool(t, v.at("x")), proj); };
    } else if (op == "layer_scale") {
      b.params.emplace("x", random_tensor(rng, xs));
      b.params.emplace("gamma", random_tensor(rng, Shape::vec(xs.c)));
      b.fn = [proj](ag::Tape<double>& t, const VarMap& v) {
        return project(t, ag::channel_scale(t, v.at("x"), v.at("gamma")), proj);
      };
    } else if (op == "drop_path") {
      const Shape ds{pick(rng, 3, 5), xs.h, xs.w, xs.c};
      b.instance = "x=" + to_string(ds);
      b.params.emplace("x", random_tensor(rng, ds));
      Rng mr(rng.next_u64());
      auto mask = draw_drop_path<double>(mr, ds.n, 0.5);
      b.fn = [proj, mask](ag::Tape<double>& t, const VarMap& v) {
        return project(t, ag::sample_scale(t, v.at("x"), mask), proj);
      };
    } else if (op == "add") {
      b.params.emplace("a", random_tensor(rng, xs));
      b.params.emplace("b", random_tensor(rng, xs));
      b.fn = [proj](ag::Tape<double>& t, const VarMap& v) { return project(t, ag::add(t, v.at("a"), v.at("b")), proj); };
    } else if (op == "cross_entropy") {
      const std::int64_t rows = pick(rng, 1, 4), k = pick(rng, 2, 6);
      b.instance = cnx::detail::printf_string("rows=%lld classes=%lld", static_cast<long long>(rows), static_cast<long long>(k));
      b.params.emplace("logits", random_tensor(rng, Shape{rows, 1, 1, k}, 2.0));
      std::vector<std::int64_t> labels;
      for (std::int64_t r = 0; r < rows; ++r) labels.push_back(pick(rng, 0, k - 1));
      b.fn = [labels](ag::Tape<double>& t, const VarMap& v) {
        return ag::cross_entropy_smoothed(t, v.at("logits"), labels, 0.1);
      };
    } else {
      fail(ErrorKind::kUnknownName, "unknown op '" + std::string(op) + "'");
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace detail

/// Runs `instances` random micro cases of one op (conv2d runs each of its
/// dense / grouped / depthwise / strided forms per instance).
inline std::vector<CaseResult> check_op(std::string_view op, std::size_t instances = 3, std::uint64_t seed = 7,
                                        Fault fault = Fault::kNone, double tol = 1e-5) {
  std::vector<CaseResult> out;
  for (auto& b : detail::build_cases(op, instances, seed, fault))
    out.push_back({std::string(op), b.instance, finite_diff_check(b.fn, std::move(b.params), 1e-5, tol)});
  return out;
}

/// Executor that routes GELU through the corrupted rule.
class FaultyTapeExec : public ag::TapeExec<double> {
 public:
  using ag::TapeExec<double>::TapeExec;
  ag::Var act(const ag::Var& x, ActKind kind) {
    if (kind == ActKind::kGelu) return faulty_gelu(tape(), x);
    return ag::TapeExec<double>::act(x, kind);
  }
};

/// ConvNeXt block at C=4 on a 6x6 input, layer scale and drop-path active,
/// every parameter and the input checked.
inline CaseResult check_micro_block(std::uint64_t seed = 11, Fault fault = Fault::kNone, double tol = 1e-5) {
  BlockSpec spec = cnx::detail::convnext_block(4);
  spec.in_channels = 4;
  spec.layer_scale_init = 1.0;
  spec.drop_path_rate = 0.25;
  Rng rng(seed);
  TensorMap<double> params;
  for (const auto& rec : block_param_records(spec)) {
    Tensor64 t = detail::random_tensor(rng, rec.shape, 0.5);
    if (rec.role == ParamRole::kNormScale)
      for (auto& v : t.data()) v += 1.0;
    params.emplace(rec.name, std::move(t));
  }
  params.emplace("x", detail::random_tensor(rng, {3, 6, 6, 4}));
  const std::uint64_t proj = rng.next_u64();
  const Mode mode = Mode::train(rng.next_u64());
  ScalarFn fn = [spec, mode, proj, fault](ag::Tape<double>& t, const VarMap& v) {
    TensorMap<double> weights;
    for (const auto& [name, var] : v)
      if (name != "x") weights.emplace(name, t.value(var));
    // Route parameters through the executor, then rebind them to the leaves.
    auto run = [&](auto& ex) { return run_block(ex, spec, std::string{}, v.at("x")); };
    ag::Var y;
    if (fault == Fault::kGeluGrad) {
      FaultyTapeExec ex(t, weights, mode, &v);
      y = run(ex);
    } else {
      ag::TapeExec<double> ex(t, weights, mode, &v);
      y = run(ex);
    }
    return detail::project(t, y, proj);
  };
  return {"block", "convnext C=4 6x6 batch 3", finite_diff_check(fn, std::move(params), 1e-5, tol)};
}

}  // namespace cnx::gradcheck
