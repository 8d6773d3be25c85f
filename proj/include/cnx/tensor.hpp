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
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cnx/error.hpp"

namespace cnx {

/// Extents of a rank-4 channels-last tensor (N, H, W, C). Weights reuse the
/// same four slots: conv kernels are (kH, kW, Cin/groups, Cout), matrices
/// (1, 1, Cin, Cout) and vectors (1, 1, 1, C).
struct Shape {
  std::int64_t n = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;
  std::int64_t c = 1;

  constexpr std::int64_t numel() const { return n * h * w * c; }
  constexpr std::array<std::int64_t, 4> extents() const { return {n, h, w, c}; }
  constexpr bool valid() const { return n >= 1 && h >= 1 && w >= 1 && c >= 1; }

  static constexpr Shape vec(std::int64_t c) { return {1, 1, 1, c}; }
  static constexpr Shape mat(std::int64_t rows, std::int64_t cols) { return {1, 1, rows, cols}; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << s.n << "x" << s.h << "x" << s.w << "x" << s.c;
  return os.str();
}

inline std::ostream& operator<<(std::ostream& os, const Shape& s) { return os << to_string(s); }

/// Dense rank-4 array in channels-last order: (n,h,w,c) lives at
/// ((n*H + h)*W + w)*C + c. f32 is the production scalar; f64 exists for
/// gradient checking.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(shape) {
    require(shape.valid(), ErrorKind::kShape, "tensor extents must be >= 1, got " + to_string(shape));
    data_.assign(static_cast<std::size_t>(shape.numel()), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    require(shape.valid(), ErrorKind::kShape, "tensor extents must be >= 1, got " + to_string(shape));
    require(static_cast<std::int64_t>(data_.size()) == shape.numel(), ErrorKind::kShape,
            "data length " + std::to_string(data_.size()) + " does not match extents " + to_string(shape));
  }

  const Shape& shape() const { return shape_; }
  std::int64_t n() const { return shape_.n; }
  std::int64_t h() const { return shape_.h; }
  std::int64_t w() const { return shape_.w; }
  std::int64_t c() const { return shape_.c; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  std::size_t offset(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c) const {
    return static_cast<std::size_t>(((n * shape_.h + h) * shape_.w + w) * shape_.c + c);
  }
  T& at(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c) { return data_[offset(n, h, w, c)]; }
  const T& at(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c) const {
    return data_[offset(n, h, w, c)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

}  // namespace cnx
