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
#include <cstring>
#include <functional>
#include <set>
#include <string>
#include <limits>
#include <vector>

#include "cnx.hpp"

// Reference implementations written as plain loops over the definitions, plus
// small generators for randomized cases.

namespace cnx::testing {

inline Tensor64 random64(Rng& rng, Shape s, double scale = 1.0) {
  Tensor64 t(s);
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

inline Tensor random32(Rng& rng, Shape s, double scale = 1.0) {
  Tensor t(s);
  for (auto& v : t.data()) v = static_cast<float>(scale * rng.normal());
  return t;
}

inline std::int64_t pick(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::memcmp(&a[i], &b[i], sizeof(T)) != 0) return false;
  return true;
}

/// Six nested loops straight from the cross-correlation definition; output
/// extents derived independently of conv2d_output_shape.
inline Tensor64 naive_conv(const Tensor64& x, const Tensor64& w, const Tensor64* bias, std::int64_t stride,
                           std::int64_t pad, std::int64_t groups) {
  const std::int64_t kh = w.n(), kw = w.h(), cig = w.w(), cout = w.c();
  const std::int64_t oh = (x.h() + 2 * pad - kh) / stride + 1;
  const std::int64_t ow = (x.w() + 2 * pad - kw) / stride + 1;
  const std::int64_t cog = cout / groups;
  Tensor64 y({x.n(), oh, ow, cout});
  for (std::int64_t n = 0; n < x.n(); ++n)
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j)
        for (std::int64_t co = 0; co < cout; ++co) {
          const std::int64_t g = co / cog;
          double acc = bias ? (*bias)[static_cast<std::size_t>(co)] : 0.0;
          for (std::int64_t a = 0; a < kh; ++a)
            for (std::int64_t b = 0; b < kw; ++b)
              for (std::int64_t ci = 0; ci < cig; ++ci) {
                const std::int64_t r = i * stride + a - pad, s = j * stride + b - pad;
                if (r < 0 || r >= x.h() || s < 0 || s >= x.w()) continue;
                acc += x.at(n, r, s, g * cig + ci) * w.at(a, b, ci, co);
              }
          y.at(n, i, j, co) = acc;
        }
  return y;
}

/// Two-pass mean / population variance over channels.
inline Tensor64 naive_layer_norm(const Tensor64& x, const Tensor64& gamma, const Tensor64& beta, double eps) {
  Tensor64 y(x.shape());
  const std::int64_t c = x.c();
  for (std::int64_t p = 0; p < x.n() * x.h() * x.w(); ++p) {
    double mean = 0;
    for (std::int64_t k = 0; k < c; ++k) mean += x[static_cast<std::size_t>(p * c + k)];
    mean /= static_cast<double>(c);
    double var = 0;
    for (std::int64_t k = 0; k < c; ++k) {
      const double d = x[static_cast<std::size_t>(p * c + k)] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    for (std::int64_t k = 0; k < c; ++k) {
      const auto i = static_cast<std::size_t>(p * c + k);
      y[i] = (x[i] - mean) / std::sqrt(var + eps) * gamma[static_cast<std::size_t>(k)] + beta[static_cast<std::size_t>(k)];
    }
  }
  return y;
}

inline Tensor64 naive_max_pool(const Tensor64& x, std::int64_t k, std::int64_t s, std::int64_t p) {
  const std::int64_t oh = (x.h() + 2 * p - k) / s + 1, ow = (x.w() + 2 * p - k) / s + 1;
  Tensor64 y({x.n(), oh, ow, x.c()});
  for (std::int64_t n = 0; n < x.n(); ++n)
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j)
        for (std::int64_t c = 0; c < x.c(); ++c) {
          double m = -std::numeric_limits<double>::infinity();
          for (std::int64_t a = 0; a < k; ++a)
            for (std::int64_t b = 0; b < k; ++b) {
              const std::int64_t r = i * s + a - p, q = j * s + b - p;
              if (r >= 0 && r < x.h() && q >= 0 && q < x.w()) m = std::max(m, x.at(n, r, q, c));
            }
          y.at(n, i, j, c) = m;
        }
  return y;
}

inline Tensor64 naive_mean_pool(const Tensor64& x) {
  Tensor64 y({x.n(), 1, 1, x.c()});
  for (std::int64_t n = 0; n < x.n(); ++n)
    for (std::int64_t c = 0; c < x.c(); ++c) {
      double s = 0;
      for (std::int64_t i = 0; i < x.h(); ++i)
        for (std::int64_t j = 0; j < x.w(); ++j) s += x.at(n, i, j, c);
      y.at(n, 0, 0, c) = s / static_cast<double>(x.h() * x.w());
    }
  return y;
}

inline double gelu_ref(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

}  // namespace cnx::testing
