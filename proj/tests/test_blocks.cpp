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

#include <gtest/gtest.h>

#include "support.hpp"

namespace cnx {
namespace {

using testing::bitwise_equal;
using testing::max_abs_diff;
using testing::random64;

TensorMap<double> random_block_weights(const BlockSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  TensorMap<double> w;
  for (const auto& rec : block_param_records(spec)) {
    Tensor64 t = random64(rng, rec.shape, 0.3);
    if (rec.role == ParamRole::kNormScale)
      for (auto& v : t.data()) v += 1.0;
    if (rec.name.ends_with("running_var"))
      for (auto& v : t.data()) v = 0.5 + std::abs(v);
    w.emplace(rec.name, std::move(t));
  }
  return w;
}

BlockSpec convnext_spec(std::int64_t c) {
  BlockSpec b = detail::convnext_block(c);
  b.in_channels = c;
  return b;
}

NormParams<double> bn(const TensorMap<double>& w, const std::string& layer) {
  return {w.at(layer + ".weight"), w.at(layer + ".bias"), kBatchNormEps, w.at(layer + ".running_mean"),
          w.at(layer + ".running_var")};
}

TEST(Block, ConvNeXtMatchesKernelComposition) {
  Rng rng(1);
  const BlockSpec spec = convnext_spec(8);
  const auto w = random_block_weights(spec, 2);
  const Tensor64 x = random64(rng, {2, 7, 7, 8});
  Tensor64 y = conv2d(x, w.at("spatial.conv.weight"), &w.at("spatial.conv.bias"), Conv2dGeometry::square(1, 3, 8));
  y = layer_norm(y, w.at("norm.weight"), w.at("norm.bias"), 1e-6);
  y = conv2d(y, w.at("pw1.conv.weight"), &w.at("pw1.conv.bias"), {});
  y = gelu(y);
  y = conv2d(y, w.at("pw2.conv.weight"), &w.at("pw2.conv.bias"), {});
  y = channel_scale(y, w.at("gamma"));
  const Tensor64 want = add(y, x);
  EXPECT_LE(max_abs_diff(block_forward(x, spec, w), want), 1e-12);
}

TEST(Block, ClassicBottleneckMatchesKernelComposition) {
  Rng rng(3);
  BlockSpec spec = detail::bottleneck_block(16);
  spec.in_channels = 8;
  spec.stride = 2;
  spec.shortcut = Shortcut::kProjection;
  const auto w = random_block_weights(spec, 4);
  const Tensor64 x = random64(rng, {1, 6, 6, 8});
  Tensor64 y = relu(batch_norm_inference(conv2d(x, w.at("pw1.conv.weight"), nullptr, {}), bn(w, "pw1.norm")));
  y = relu(batch_norm_inference(conv2d(y, w.at("spatial.conv.weight"), nullptr, Conv2dGeometry::square(2, 1)),
                                bn(w, "spatial.norm")));
  y = batch_norm_inference(conv2d(y, w.at("pw2.conv.weight"), nullptr, {}), bn(w, "pw2.norm"));
  const Tensor64 sc = batch_norm_inference(conv2d(x, w.at("shortcut.conv.weight"), nullptr, Conv2dGeometry::square(2, 0)),
                                           bn(w, "shortcut.norm"));
  const Tensor64 want = relu(add(y, sc));
  const Tensor64 got = bottleneck_forward(x, spec, w);
  ASSERT_EQ(got.shape(), (Shape{1, 3, 3, 16}));
  EXPECT_LE(max_abs_diff(got, want), 1e-12);
}

TEST(Block, InvertedDepthwiseMiddleMatchesKernelComposition) {
  Rng rng(5);
  BlockSpec spec = detail::bottleneck_block(6);
  spec.in_channels = 6;
  spec.inner_ratio = 4.0;
  spec.grouping = Grouping::kDepthwise;
  const auto w = random_block_weights(spec, 6);
  const Tensor64 x = random64(rng, {1, 5, 5, 6});
  Tensor64 y = relu(batch_norm_inference(conv2d(x, w.at("pw1.conv.weight"), nullptr, {}), bn(w, "pw1.norm")));
  y = relu(batch_norm_inference(conv2d(y, w.at("spatial.conv.weight"), nullptr, Conv2dGeometry::square(1, 1, 24)),
                                bn(w, "spatial.norm")));
  y = batch_norm_inference(conv2d(y, w.at("pw2.conv.weight"), nullptr, {}), bn(w, "pw2.norm"));
  EXPECT_LE(max_abs_diff(block_forward(x, spec, w), relu(add(y, x))), 1e-12);
}

TEST(Block, ZeroLayerScaleIsBitwiseIdentity) {
  Rng rng(7);
  for (std::int64_t c : {4, 8, 16}) {
    const BlockSpec spec = convnext_spec(c);
    auto w = random_block_weights(spec, static_cast<std::uint64_t>(c));
    w.at("gamma") = Tensor64(Shape::vec(c));
    auto wf = TensorMap<float>{};
    for (const auto& [k, v] : w) wf.emplace(k, v.cast<float>());
    for (int t = 0; t < 5; ++t) {
      const Tensor x = testing::random32(rng, {2, 6, 6, c}, 3.0);
      EXPECT_TRUE(bitwise_equal(block_forward(x, spec, wf), x));
    }
  }
}

TEST(Block, EvalIsDeterministicAndTrainIsSeedDeterministic) {
  Rng rng(8);
  BlockSpec spec = convnext_spec(4);
  spec.drop_path_rate = 0.5;
  const auto w = random_block_weights(spec, 9);
  const Tensor64 x = random64(rng, {16, 4, 4, 4});
  EXPECT_TRUE(bitwise_equal(block_forward(x, spec, w), block_forward(x, spec, w)));
  EXPECT_TRUE(bitwise_equal(block_forward(x, spec, w, Mode::train(3)), block_forward(x, spec, w, Mode::train(3))));
  EXPECT_FALSE(bitwise_equal(block_forward(x, spec, w, Mode::train(3)), block_forward(x, spec, w, Mode::train(4))));
  EXPECT_FALSE(bitwise_equal(block_forward(x, spec, w, Mode::train(3)), block_forward(x, spec, w)));
}

TEST(Block, DropPathMultiplierHasUnitMean) {
  Rng rng(10);
  BlockSpec spec = convnext_spec(4);
  spec.drop_path_rate = 0.5;
  auto w = random_block_weights(spec, 11);
  const std::int64_t rows = 10000;
  const Tensor64 x = random64(rng, {rows, 1, 1, 4});
  const Tensor64 ev = block_forward(x, spec, w);
  const Tensor64 tr = block_forward(x, spec, w, Mode::train(12));
  double sum = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    std::size_t best = static_cast<std::size_t>(r * 4);
    for (std::size_t i = best; i < best + 4; ++i)
      if (std::abs(ev[i] - x[i]) > std::abs(ev[best] - x[best])) best = i;
    const double m = (tr[best] - x[best]) / (ev[best] - x[best]);
    EXPECT_TRUE(std::abs(m) < 1e-9 || std::abs(m - 2.0) < 1e-9) << "row " << r << " multiplier " << m;
    sum += m;
  }
  // Multipliers are 0 or 2 with unit variance: allow five standard errors.
  EXPECT_NEAR(sum / static_cast<double>(rows), 1.0, 5.0 / std::sqrt(static_cast<double>(rows)));
}

TEST(Block, DropPathDrawMean) {
  Rng rng(13);
  const auto m = draw_drop_path<double>(rng, 10000, 0.5);
  double s = 0;
  for (double v : m) s += v;
  EXPECT_NEAR(s / 10000.0, 1.0, 0.05);
}

TEST(Block, Census) {
  EXPECT_EQ(block_census(convnext_spec(8)).norms, 1);
  EXPECT_EQ(block_census(convnext_spec(8)).acts, 1);
  BlockSpec classic = detail::bottleneck_block(16);
  classic.in_channels = 16;
  EXPECT_EQ(block_census(classic).norms, 3);
  EXPECT_EQ(block_census(classic).acts, 3);
  classic.in_channels = 8;
  classic.shortcut = Shortcut::kProjection;
  EXPECT_EQ(block_census(classic).norms, 4);
  EXPECT_EQ(classic.norm_count(), 4);
}

TEST(Block, RejectsMismatchedInputsAndWeights) {
  const BlockSpec spec = convnext_spec(4);
  auto w = random_block_weights(spec, 14);
  const Tensor64 x({1, 4, 4, 4});
  try {
    block_forward(Tensor64({1, 4, 4, 3}), spec, w);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
  }
  auto missing = w;
  missing.erase("gamma");
  try {
    block_forward(x, spec, missing);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingEntry);
  }
  auto extra = w;
  extra.emplace("bogus.weight", Tensor64(Shape::vec(1)));
  try {
    block_forward(x, spec, extra);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kExtraEntry);
  }
  auto wrong = w;
  wrong.at("pw1.conv.weight") = Tensor64(Shape::mat(4, 8));
  try {
    block_forward(x, spec, wrong);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kExtentMismatch);
  }
}

TEST(Block, SpecValidation) {
  BlockSpec b = convnext_spec(8);
  b.grouping = Grouping::kDense;
  EXPECT_THROW(validate(b), Error);
  b = convnext_spec(8);
  b.kernel_size = 4;
  EXPECT_THROW(validate(b), Error);
  b = convnext_spec(8);
  b.drop_path_rate = 1.0;
  EXPECT_THROW(validate(b), Error);
}

TEST(Downsample, LayerNormThenStridedConv) {
  Rng rng(15);
  const Tensor64 x = random64(rng, {1, 6, 6, 4});
  TensorMap<double> w;
  w.emplace("norm.weight", random64(rng, Shape::vec(4)));
  w.emplace("norm.bias", random64(rng, Shape::vec(4)));
  w.emplace("conv.weight", random64(rng, {2, 2, 4, 8}));
  w.emplace("conv.bias", random64(rng, Shape::vec(8)));
  const Tensor64 want = conv2d(layer_norm(x, w.at("norm.weight"), w.at("norm.bias"), 1e-6), w.at("conv.weight"),
                               &w.at("conv.bias"), Conv2dGeometry::square(2, 0));
  const Tensor64 got = downsample_forward(x, w);
  ASSERT_EQ(got.shape(), (Shape{1, 3, 3, 8}));
  EXPECT_LE(max_abs_diff(got, want), 1e-12);
}

TEST(Stem, PatchifyIsConvThenLayerNorm) {
  Rng rng(16);
  const StemSpec stem{StemKind::kPatchify, 4, 4, 8, NormKind::kLayer};
  TensorMap<double> w;
  for (const auto& rec : stem_param_records(stem)) w.emplace(rec.name, random64(rng, rec.shape));
  const Tensor64 x = random64(rng, {1, 16, 16, 3});
  const Tensor64 want = layer_norm(conv2d(x, w.at("stem.conv.weight"), &w.at("stem.conv.bias"), Conv2dGeometry::square(4, 0)),
                                   w.at("stem.norm.weight"), w.at("stem.norm.bias"), 1e-6);
  EXPECT_LE(max_abs_diff(stem_forward(x, stem, w), want), 1e-12);
}

}  // namespace
}  // namespace cnx
