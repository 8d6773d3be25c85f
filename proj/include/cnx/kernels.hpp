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
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cnx/error.hpp"
#include "cnx/parallel.hpp"
#include "cnx/tensor.hpp"

// Forward kernels and their adjoints. All kernels are pure: inputs are taken
// by const reference and never mutated; outputs are fresh tensors. The
// backward functions take the forward inputs again rather than caching.

namespace cnx {

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kBatchNormEps = 1e-5;

// ---------------------------------------------------------------------------
// MAC instrumentation

namespace detail {
inline std::uint64_t*& mac_sink() {
  thread_local std::uint64_t* sink = nullptr;
  return sink;
}
inline void count_macs(std::uint64_t n) {
  if (auto* s = mac_sink()) *s += n;
}
}  // namespace detail

/// While alive, accumulates the multiply-accumulates executed by conv2d and
/// linear on the current thread (padding positions included).
class MacCounter {
 public:
  MacCounter() : previous_(detail::mac_sink()) { detail::mac_sink() = &count_; }
  ~MacCounter() { detail::mac_sink() = previous_; }
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t count() const { return count_; }

 private:
  std::uint64_t count_ = 0;
  std::uint64_t* previous_;
};

// ---------------------------------------------------------------------------
// Parameter bundles

struct Conv2dGeometry {
  std::int64_t stride_h = 1;
  std::int64_t stride_w = 1;
  std::int64_t pad_h = 0;
  std::int64_t pad_w = 0;
  std::int64_t groups = 1;

  static Conv2dGeometry square(std::int64_t stride, std::int64_t pad, std::int64_t groups = 1) {
    return {stride, stride, pad, pad, groups};
  }
  friend bool operator==(const Conv2dGeometry&, const Conv2dGeometry&) = default;
};

template <typename T>
struct ConvParams {
  BasicTensor<T> weight;  // (kH, kW, Cin/groups, Cout)
  std::optional<BasicTensor<T>> bias;
  Conv2dGeometry geometry;
};

template <typename T>
struct NormParams {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  double eps = kLayerNormEps;
  std::optional<BasicTensor<T>> running_mean;
  std::optional<BasicTensor<T>> running_var;
};

// ---------------------------------------------------------------------------
// Convolution

inline Shape conv2d_output_shape(const Shape& x, const Shape& w, const Conv2dGeometry& g) {
  const std::int64_t cin = x.c;
  const std::int64_t cout = w.c;
  require(g.groups >= 1, ErrorKind::kInvalidArgument, "conv2d: groups must be >= 1");
  require(g.stride_h >= 1 && g.stride_w >= 1, ErrorKind::kInvalidArgument, "conv2d: stride must be >= 1");
  require(g.pad_h >= 0 && g.pad_w >= 0, ErrorKind::kInvalidArgument, "conv2d: padding must be >= 0");
  require(cin % g.groups == 0 && cout % g.groups == 0, ErrorKind::kInvalidArgument,
          "conv2d: channels " + std::to_string(cin) + "->" + std::to_string(cout) + " not divisible by groups " +
              std::to_string(g.groups));
  require(w.w * g.groups == cin, ErrorKind::kShape,
          "conv2d: input has " + std::to_string(cin) + " channels, weight expects " + std::to_string(w.w * g.groups));
  const std::int64_t hp = x.h + 2 * g.pad_h - w.n;
  const std::int64_t wp = x.w + 2 * g.pad_w - w.h;
  require(hp >= 0 && wp >= 0, ErrorKind::kShape,
          "conv2d: kernel " + std::to_string(w.n) + "x" + std::to_string(w.h) + " does not fit input " + to_string(x));
  return {x.n, hp / g.stride_h + 1, wp / g.stride_w + 1, cout};
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>* bias,
                      const Conv2dGeometry& g) {
  const Shape os = conv2d_output_shape(x.shape(), weight.shape(), g);
  const std::int64_t kh_n = weight.n(), kw_n = weight.h(), cig = weight.w(), cout = weight.c();
  const std::int64_t cog = cout / g.groups;
  if (bias) require(bias->size() == static_cast<std::size_t>(cout), ErrorKind::kShape, "conv2d: bias length mismatch");
  const bool depthwise = cig == 1 && g.groups == cout && g.groups == x.c();
  BasicTensor<T> out(os);
  const T* xd = x.raw();
  const T* wd = weight.raw();
  T* od = out.raw();
  parallel_for(os.n * os.h, [&](std::int64_t row) {
    const std::int64_t n = row / os.h, oh = row % os.h;
    for (std::int64_t ow = 0; ow < os.w; ++ow) {
      T* o = od + out.offset(n, oh, ow, 0);
      if (bias)
        std::copy_n(bias->raw(), cout, o);
      for (std::int64_t kh = 0; kh < kh_n; ++kh) {
        const std::int64_t ih = oh * g.stride_h - g.pad_h + kh;
        if (ih < 0 || ih >= x.h()) continue;
        for (std::int64_t kw = 0; kw < kw_n; ++kw) {
          const std::int64_t iw = ow * g.stride_w - g.pad_w + kw;
          if (iw < 0 || iw >= x.w()) continue;
          const T* xp = xd + x.offset(n, ih, iw, 0);
          const T* wp = wd + (kh * kw_n + kw) * cig * cout;
          if (depthwise) {
            for (std::int64_t c = 0; c < cout; ++c) o[c] += xp[c] * wp[c];
            continue;
          }
          for (std::int64_t grp = 0; grp < g.groups; ++grp) {
            T* og = o + grp * cog;
            for (std::int64_t ci = 0; ci < cig; ++ci) {
              const T xv = xp[grp * cig + ci];
              const T* wr = wp + ci * cout + grp * cog;
              for (std::int64_t co = 0; co < cog; ++co) og[co] += xv * wr[co];
            }
          }
        }
      }
    }
  });
  detail::count_macs(static_cast<std::uint64_t>(os.n * os.h * os.w) * kh_n * kw_n * cig * cout);
  return out;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, std::nullptr_t, const Conv2dGeometry& g) {
  return conv2d(x, weight, static_cast<const BasicTensor<T>*>(nullptr), g);
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const ConvParams<T>& p) {
  return conv2d(x, p.weight, p.bias ? &*p.bias : nullptr, p.geometry);
}

/// Adjoint of conv2d. Any of the output pointers may be null.
template <typename T>
void conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& weight, const Conv2dGeometry& g,
                     const BasicTensor<T>& grad_out, BasicTensor<T>* grad_x, BasicTensor<T>* grad_w,
                     BasicTensor<T>* grad_b) {
  const Shape os = conv2d_output_shape(x.shape(), weight.shape(), g);
  require(grad_out.shape() == os, ErrorKind::kShape, "conv2d_backward: gradient extents mismatch");
  const std::int64_t kh_n = weight.n(), kw_n = weight.h(), cig = weight.w(), cout = weight.c();
  const std::int64_t cog = cout / g.groups;
  if (grad_x) {
    *grad_x = BasicTensor<T>(x.shape());
    parallel_for(os.n, [&](std::int64_t n) {
      for (std::int64_t oh = 0; oh < os.h; ++oh)
        for (std::int64_t ow = 0; ow < os.w; ++ow) {
          const T* go = grad_out.raw() + grad_out.offset(n, oh, ow, 0);
          for (std::int64_t kh = 0; kh < kh_n; ++kh) {
            const std::int64_t ih = oh * g.stride_h - g.pad_h + kh;
            if (ih < 0 || ih >= x.h()) continue;
            for (std::int64_t kw = 0; kw < kw_n; ++kw) {
              const std::int64_t iw = ow * g.stride_w - g.pad_w + kw;
              if (iw < 0 || iw >= x.w()) continue;
              T* gx = grad_x->raw() + x.offset(n, ih, iw, 0);
              const T* wp = weight.raw() + (kh * kw_n + kw) * cig * cout;
              for (std::int64_t grp = 0; grp < g.groups; ++grp)
                for (std::int64_t ci = 0; ci < cig; ++ci) {
                  const T* wr = wp + ci * cout + grp * cog;
                  const T* gg = go + grp * cog;
                  T acc = 0;
                  for (std::int64_t co = 0; co < cog; ++co) acc += gg[co] * wr[co];
                  gx[grp * cig + ci] += acc;
                }
            }
          }
        }
    });
  }
  if (grad_w) {
    *grad_w = BasicTensor<T>(weight.shape());
    parallel_for(kh_n * kw_n, [&](std::int64_t k) {
      const std::int64_t kh = k / kw_n, kw = k % kw_n;
      T* gw = grad_w->raw() + k * cig * cout;
      for (std::int64_t n = 0; n < os.n; ++n)
        for (std::int64_t oh = 0; oh < os.h; ++oh) {
          const std::int64_t ih = oh * g.stride_h - g.pad_h + kh;
          if (ih < 0 || ih >= x.h()) continue;
          for (std::int64_t ow = 0; ow < os.w; ++ow) {
            const std::int64_t iw = ow * g.stride_w - g.pad_w + kw;
            if (iw < 0 || iw >= x.w()) continue;
            const T* xp = x.raw() + x.offset(n, ih, iw, 0);
            const T* go = grad_out.raw() + grad_out.offset(n, oh, ow, 0);
            for (std::int64_t grp = 0; grp < g.groups; ++grp)
              for (std::int64_t ci = 0; ci < cig; ++ci) {
                const T xv = xp[grp * cig + ci];
                T* wr = gw + ci * cout + grp * cog;
                const T* gg = go + grp * cog;
                for (std::int64_t co = 0; co < cog; ++co) wr[co] += xv * gg[co];
              }
          }
        }
    });
  }
  if (grad_b) {
    *grad_b = BasicTensor<T>(Shape::vec(cout));
    const T* go = grad_out.raw();
    for (std::int64_t p = 0; p < os.n * os.h * os.w; ++p)
      for (std::int64_t c = 0; c < cout; ++c) (*grad_b)[static_cast<std::size_t>(c)] += go[p * cout + c];
  }
}

// ---------------------------------------------------------------------------
// Linear: a matrix product over the channel extent at every position.

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>* bias) {
  const std::int64_t cin = weight.w(), cout = weight.c();
  require(weight.n() == 1 && weight.h() == 1, ErrorKind::kShape, "linear: weight must be a 1x1xCinxCout matrix");
  require(x.c() == cin, ErrorKind::kShape,
          "linear: input has " + std::to_string(x.c()) + " channels, weight expects " + std::to_string(cin));
  if (bias) require(bias->size() == static_cast<std::size_t>(cout), ErrorKind::kShape, "linear: bias length mismatch");
  BasicTensor<T> out({x.n(), x.h(), x.w(), cout});
  const std::int64_t positions = x.n() * x.h() * x.w();
  parallel_for(positions, [&](std::int64_t p) {
    T* o = out.raw() + p * cout;
    if (bias) std::copy_n(bias->raw(), cout, o);
    const T* xp = x.raw() + p * cin;
    for (std::int64_t ci = 0; ci < cin; ++ci) {
      const T xv = xp[ci];
      const T* wr = weight.raw() + ci * cout;
      for (std::int64_t co = 0; co < cout; ++co) o[co] += xv * wr[co];
    }
  });
  detail::count_macs(static_cast<std::uint64_t>(positions) * cin * cout);
  return out;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, std::nullptr_t) {
  return linear(x, weight, static_cast<const BasicTensor<T>*>(nullptr));
}

template <typename T>
void linear_backward(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& grad_out,
                     BasicTensor<T>* grad_x, BasicTensor<T>* grad_w, BasicTensor<T>* grad_b) {
  // A (1, 1, Cin, Cout) matrix is already a 1x1 conv kernel.
  conv2d_backward(x, weight, Conv2dGeometry{}, grad_out, grad_x, grad_w, grad_b);
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          double eps = kLayerNormEps) {
  const std::int64_t c = x.c();
  require(gamma.size() == static_cast<std::size_t>(c) && beta.size() == static_cast<std::size_t>(c),
          ErrorKind::kShape, "layer_norm: gamma/beta length must equal channel extent " + std::to_string(c));
  require(eps > 0, ErrorKind::kInvalidArgument, "layer_norm: eps must be positive");
  BasicTensor<T> out(x.shape());
  const std::int64_t positions = x.n() * x.h() * x.w();
  parallel_for(positions, [&](std::int64_t p) {
    const T* xp = x.raw() + p * c;
    T mean = 0;
    for (std::int64_t i = 0; i < c; ++i) mean += xp[i];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::int64_t i = 0; i < c; ++i) var += (xp[i] - mean) * (xp[i] - mean);
    var /= static_cast<T>(c);
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(eps));
    T* o = out.raw() + p * c;
    for (std::int64_t i = 0; i < c; ++i) o[i] = (xp[i] - mean) * rstd * gamma[i] + beta[i];
  });
  return out;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const NormParams<T>& p) {
  return layer_norm(x, p.gamma, p.beta, p.eps);
}

template <typename T>
void layer_norm_backward(const BasicTensor<T>& x, const BasicTensor<T>& gamma, double eps,
                         const BasicTensor<T>& grad_out, BasicTensor<T>* grad_x, BasicTensor<T>* grad_gamma,
                         BasicTensor<T>* grad_beta) {
  const std::int64_t c = x.c();
  const std::int64_t positions = x.n() * x.h() * x.w();
  if (grad_x) *grad_x = BasicTensor<T>(x.shape());
  if (grad_gamma) *grad_gamma = BasicTensor<T>(Shape::vec(c));
  if (grad_beta) *grad_beta = BasicTensor<T>(Shape::vec(c));
  std::vector<T> xhat(static_cast<std::size_t>(c)), gxhat(static_cast<std::size_t>(c));
  for (std::int64_t p = 0; p < positions; ++p) {
    const T* xp = x.raw() + p * c;
    const T* gy = grad_out.raw() + p * c;
    T mean = 0;
    for (std::int64_t i = 0; i < c; ++i) mean += xp[i];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::int64_t i = 0; i < c; ++i) var += (xp[i] - mean) * (xp[i] - mean);
    var /= static_cast<T>(c);
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(eps));
    T sum_g = 0, sum_gx = 0;
    for (std::int64_t i = 0; i < c; ++i) {
      const auto k = static_cast<std::size_t>(i);
      xhat[k] = (xp[i] - mean) * rstd;
      gxhat[k] = gy[i] * gamma[k];
      sum_g += gxhat[k];
      sum_gx += gxhat[k] * xhat[k];
      if (grad_gamma) (*grad_gamma)[k] += gy[i] * xhat[k];
      if (grad_beta) (*grad_beta)[k] += gy[i];
    }
    if (grad_x) {
      T* gx = grad_x->raw() + p * c;
      const T inv_c = T(1) / static_cast<T>(c);
      for (std::int64_t i = 0; i < c; ++i) {
        const auto k = static_cast<std::size_t>(i);
        gx[i] = rstd * (gxhat[k] - sum_g * inv_c - xhat[k] * sum_gx * inv_c);
      }
    }
  }
}

/// Inference-mode batch norm: a per-channel affine map from running stats.
template <typename T>
BasicTensor<T> batch_norm_inference(const BasicTensor<T>& x, const NormParams<T>& p) {
  const std::int64_t c = x.c();
  require(p.running_mean.has_value() && p.running_var.has_value(), ErrorKind::kInvalidArgument,
          "batch_norm_inference: running statistics are required");
  for (const auto* v : {&p.gamma, &p.beta, &*p.running_mean, &*p.running_var})
    require(v->size() == static_cast<std::size_t>(c), ErrorKind::kShape,
            "batch_norm_inference: parameter length must equal channel extent " + std::to_string(c));
  require(p.eps > 0, ErrorKind::kInvalidArgument, "batch_norm_inference: eps must be positive");
  std::vector<T> scale(static_cast<std::size_t>(c)), shift(static_cast<std::size_t>(c));
  for (std::size_t i = 0; i < scale.size(); ++i) {
    scale[i] = p.gamma[i] / std::sqrt((*p.running_var)[i] + static_cast<T>(p.eps));
    shift[i] = p.beta[i] - (*p.running_mean)[i] * scale[i];
  }
  BasicTensor<T> out(x.shape());
  const std::int64_t positions = x.n() * x.h() * x.w();
  for (std::int64_t q = 0; q < positions; ++q)
    for (std::int64_t i = 0; i < c; ++i) {
      const auto k = static_cast<std::size_t>(i);
      out[static_cast<std::size_t>(q * c + i)] = x[static_cast<std::size_t>(q * c + i)] * scale[k] + shift[k];
    }
  return out;
}

/// Adjoint of batch_norm_inference with respect to x, gamma and beta.
template <typename T>
void batch_norm_inference_backward(const BasicTensor<T>& x, const NormParams<T>& p, const BasicTensor<T>& grad_out,
                                   BasicTensor<T>* grad_x, BasicTensor<T>* grad_gamma, BasicTensor<T>* grad_beta) {
  const std::int64_t c = x.c();
  const std::int64_t positions = x.n() * x.h() * x.w();
  if (grad_x) *grad_x = BasicTensor<T>(x.shape());
  if (grad_gamma) *grad_gamma = BasicTensor<T>(Shape::vec(c));
  if (grad_beta) *grad_beta = BasicTensor<T>(Shape::vec(c));
  for (std::int64_t i = 0; i < c; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const T rstd = T(1) / std::sqrt((*p.running_var)[k] + static_cast<T>(p.eps));
    const T mean = (*p.running_mean)[k];
    for (std::int64_t q = 0; q < positions; ++q) {
      const auto idx = static_cast<std::size_t>(q * c + i);
      const T g = grad_out[idx];
      if (grad_x) (*grad_x)[idx] = g * p.gamma[k] * rstd;
      if (grad_gamma) (*grad_gamma)[k] += g * (x[idx] - mean) * rstd;
      if (grad_beta) (*grad_beta)[k] += g;
    }
  }
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
T gelu_scalar(T v) {
  return T(0.5) * v * (T(1) + std::erf(v * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad_scalar(T v) {
  const T cdf = T(0.5) * (T(1) + std::erf(v * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * v * v) * static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + v * pdf;
}

/// Exact erf-based GELU, x * Phi(x).
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu_scalar(x[i]);
  return out;
}

template <typename T>
BasicTensor<T> gelu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out) {
  BasicTensor<T> gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = grad_out[i] * gelu_grad_scalar(x[i]);
  return gx;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out) {
  BasicTensor<T> gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return gx;
}

// ---------------------------------------------------------------------------
// Pooling

inline Shape max_pool_output_shape(const Shape& x, std::int64_t k, std::int64_t s, std::int64_t p) {
  require(k >= 1 && s >= 1 && p >= 0, ErrorKind::kInvalidArgument, "max_pool: invalid window/stride/padding");
  require(p < k, ErrorKind::kInvalidArgument, "max_pool: padding must be smaller than the window");
  const std::int64_t hp = x.h + 2 * p - k, wp = x.w + 2 * p - k;
  require(hp >= 0 && wp >= 0, ErrorKind::kShape, "max_pool: window does not fit input " + to_string(x));
  return {x.n, hp / s + 1, wp / s + 1, x.c};
}

/// Windowed per-channel maximum; padded positions act as -inf.
template <typename T>
BasicTensor<T> max_pool(const BasicTensor<T>& x, std::int64_t k, std::int64_t s, std::int64_t p) {
  const Shape os = max_pool_output_shape(x.shape(), k, s, p);
  BasicTensor<T> out(os, -std::numeric_limits<T>::infinity());
  for (std::int64_t n = 0; n < os.n; ++n)
    for (std::int64_t oh = 0; oh < os.h; ++oh)
      for (std::int64_t ow = 0; ow < os.w; ++ow) {
        T* o = out.raw() + out.offset(n, oh, ow, 0);
        for (std::int64_t kh = 0; kh < k; ++kh) {
          const std::int64_t ih = oh * s - p + kh;
          if (ih < 0 || ih >= x.h()) continue;
          for (std::int64_t kw = 0; kw < k; ++kw) {
            const std::int64_t iw = ow * s - p + kw;
            if (iw < 0 || iw >= x.w()) continue;
            const T* xp = x.raw() + x.offset(n, ih, iw, 0);
            for (std::int64_t c = 0; c < os.c; ++c) o[c] = std::max(o[c], xp[c]);
          }
        }
      }
  return out;
}

/// Routes each output gradient to the first maximal input of its window.
template <typename T>
BasicTensor<T> max_pool_backward(const BasicTensor<T>& x, std::int64_t k, std::int64_t s, std::int64_t p,
                                 const BasicTensor<T>& grad_out) {
  const Shape os = max_pool_output_shape(x.shape(), k, s, p);
  BasicTensor<T> gx(x.shape());
  for (std::int64_t n = 0; n < os.n; ++n)
    for (std::int64_t oh = 0; oh < os.h; ++oh)
      for (std::int64_t ow = 0; ow < os.w; ++ow)
        for (std::int64_t c = 0; c < os.c; ++c) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t arg = 0;
          for (std::int64_t kh = 0; kh < k; ++kh) {
            const std::int64_t ih = oh * s - p + kh;
            if (ih < 0 || ih >= x.h()) continue;
            for (std::int64_t kw = 0; kw < k; ++kw) {
              const std::int64_t iw = ow * s - p + kw;
              if (iw < 0 || iw >= x.w()) continue;
              const std::size_t idx = x.offset(n, ih, iw, c);
              if (x[idx] > best) {
                best = x[idx];
                arg = idx;
              }
            }
          }
          gx[arg] += grad_out.at(n, oh, ow, c);
        }
  return gx;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  BasicTensor<T> out({x.n(), 1, 1, x.c()});
  const std::int64_t hw = x.h() * x.w();
  for (std::int64_t n = 0; n < x.n(); ++n) {
    T* o = out.raw() + n * x.c();
    for (std::int64_t q = 0; q < hw; ++q) {
      const T* xp = x.raw() + (n * hw + q) * x.c();
      for (std::int64_t c = 0; c < x.c(); ++c) o[c] += xp[c];
    }
    for (std::int64_t c = 0; c < x.c(); ++c) o[c] /= static_cast<T>(hw);
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const Shape& input_shape, const BasicTensor<T>& grad_out) {
  BasicTensor<T> gx(input_shape);
  const std::int64_t hw = input_shape.h * input_shape.w, c = input_shape.c;
  for (std::int64_t n = 0; n < input_shape.n; ++n)
    for (std::int64_t q = 0; q < hw; ++q)
      for (std::int64_t i = 0; i < c; ++i)
        gx[static_cast<std::size_t>((n * hw + q) * c + i)] = grad_out[static_cast<std::size_t>(n * c + i)] /
                                                             static_cast<T>(hw);
  return gx;
}

// ---------------------------------------------------------------------------
// Elementwise helpers used by residual blocks

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), ErrorKind::kShape,
          "add: extents differ (" + to_string(a.shape()) + " vs " + to_string(b.shape()) + ")");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

/// Per-channel scaling (layer scale).
template <typename T>
BasicTensor<T> channel_scale(const BasicTensor<T>& x, const BasicTensor<T>& gamma) {
  require(gamma.size() == static_cast<std::size_t>(x.c()), ErrorKind::kShape,
          "channel_scale: vector length must equal channel extent");
  BasicTensor<T> out(x.shape());
  const std::size_t c = static_cast<std::size_t>(x.c());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * gamma[i % c];
  return out;
}

/// Per-sample scaling: row n of the batch is multiplied by factors[n].
template <typename T>
BasicTensor<T> sample_scale(const BasicTensor<T>& x, std::span<const T> factors) {
  require(factors.size() == static_cast<std::size_t>(x.n()), ErrorKind::kShape,
          "sample_scale: one factor per batch row required");
  BasicTensor<T> out(x.shape());
  const std::size_t per = x.size() / static_cast<std::size_t>(x.n());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factors[i / per];
  return out;
}

}  // namespace cnx
