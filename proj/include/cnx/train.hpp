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
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "cnx/analysis.hpp"
#include "cnx/arch.hpp"
#include "cnx/autograd.hpp"
#include "cnx/error.hpp"
#include "cnx/random.hpp"
#include "cnx/spec_io.hpp"

namespace cnx {

struct TrainConfig {
  double lr = 4e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.05;
  std::int64_t warmup_steps = 0;
  double label_smoothing = 0.1;
  double drop_path_rate = 0.0;
  std::int64_t epochs = 20;
  std::int64_t batch_size = 16;
  std::uint64_t seed = 0;
  /// Upper bound on forward multiply-accumulates per sample.
  std::int64_t mac_budget = 50'000'000;
};

inline void validate(const TrainConfig& c) {
  require(c.lr >= 0, ErrorKind::kInvalidArgument, "train: lr must be non-negative");
  require(c.beta1 > 0 && c.beta1 < 1 && c.beta2 > 0 && c.beta2 < 1, ErrorKind::kInvalidArgument,
          "train: betas must lie in (0, 1)");
  require(c.adam_eps > 0, ErrorKind::kInvalidArgument, "train: adam_eps must be positive");
  require(c.weight_decay >= 0, ErrorKind::kInvalidArgument, "train: weight_decay must be non-negative");
  require(c.label_smoothing >= 0 && c.label_smoothing < 1, ErrorKind::kInvalidArgument,
          "train: label_smoothing must lie in [0, 1)");
  require(c.drop_path_rate >= 0 && c.drop_path_rate < 1, ErrorKind::kInvalidArgument,
          "train: drop_path_rate must lie in [0, 1)");
  require(c.epochs > 0 && c.batch_size > 0 && c.warmup_steps >= 0, ErrorKind::kInvalidArgument,
          "train: epochs and batch_size must be positive, warmup_steps non-negative");
}

/// Linear warmup from 0 over `warmup` steps, then cosine decay to 0 at `total`.
inline double lr_at(const TrainConfig& c, std::int64_t step, std::int64_t total) {
  if (step < c.warmup_steps) return c.lr * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  const std::int64_t span = std::max<std::int64_t>(1, total - c.warmup_steps);
  const double t = std::min(1.0, static_cast<double>(step - c.warmup_steps) / static_cast<double>(span));
  return c.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct AdamState {
  TensorMap<float> m;
  TensorMap<float> v;
};

/// One AdamW update at `lr`; `step_index` is 0-based. Decay is decoupled:
/// p *= 1 - lr * wd, then the bias-corrected Adam step.
inline void adamw_step(TensorMap<float>& params, const TensorMap<float>& grads, AdamState& state,
                       const TrainConfig& c, std::int64_t step_index, double lr) {
  const double t = static_cast<double>(step_index + 1);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const float decay = static_cast<float>(1.0 - lr * c.weight_decay);
  for (auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    require(g->second.shape() == p.shape(), ErrorKind::kShape, "adamw: gradient extents mismatch for " + name);
    auto [mi, m_new] = state.m.try_emplace(name, p.shape());
    auto [vi, v_new] = state.v.try_emplace(name, p.shape());
    require(mi->second.shape() == p.shape() && vi->second.shape() == p.shape(), ErrorKind::kShape,
            "adamw: optimizer state extents mismatch for " + name);
    auto& m = mi->second;
    auto& v = vi->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g->second[i];
      m[i] = static_cast<float>(c.beta1 * m[i] + (1 - c.beta1) * gi);
      v[i] = static_cast<float>(c.beta2 * v[i] + (1 - c.beta2) * gi * gi);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] = static_cast<float>(p[i] * decay - lr * mhat / (std::sqrt(vhat) + c.adam_eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Data

struct Dataset {
  Tensor inputs;  // N x H x W x 3
  std::vector<std::int64_t> labels;
  std::int64_t num_classes = 2;
};

/// Two Gaussian blobs at +-u for a random direction u; separable by sign(<x, u>).
inline Dataset blob_dataset(std::int64_t samples, std::int64_t resolution, std::uint64_t seed, double noise = 1.0) {
  Rng rng(seed);
  const Shape one{1, resolution, resolution, 3};
  std::vector<double> u(static_cast<std::size_t>(one.numel()));
  for (auto& v : u) v = rng.normal();
  Dataset d{Tensor({samples, resolution, resolution, 3}), {}, 2};
  for (std::int64_t s = 0; s < samples; ++s) {
    const std::int64_t label = s % 2;
    d.labels.push_back(label);
    const double sign = label == 0 ? -1.0 : 1.0;
    float* row = d.inputs.raw() + s * one.numel();
    for (std::size_t i = 0; i < u.size(); ++i) row[i] = static_cast<float>(sign * u[i] + noise * rng.normal());
  }
  return d;
}

/// Gaussian inputs with labels drawn independently of them.
inline Dataset random_label_dataset(std::int64_t samples, std::int64_t resolution, std::int64_t classes,
                                    std::uint64_t seed) {
  Rng rng(seed);
  Dataset d{Tensor({samples, resolution, resolution, 3}), {}, classes};
  for (auto& v : d.inputs.data()) v = static_cast<float>(rng.normal());
  for (std::int64_t s = 0; s < samples; ++s) d.labels.push_back(static_cast<std::int64_t>(rng.below(classes)));
  return d;
}

inline Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> rows) {
  const std::int64_t per = x.h() * x.w() * x.c();
  Tensor out({static_cast<std::int64_t>(rows.size()), x.h(), x.w(), x.c()});
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(x.raw() + rows[r] * per, per, out.raw() + static_cast<std::int64_t>(r) * per);
  return out;
}

/// The toy model: isotropic ConvNeXt, width 32, depth 2, 4x4 patchify stem.
inline ModelSpec micro_isotropic_spec(std::int64_t num_classes = 2) {
  ModelSpec s = isotropic("micro-iso", 32, 2, 0.0, 1e-6);
  s.stem.kernel = 4;
  s.stem.stride = 4;
  s.head.num_classes = num_classes;
  validate(s);
  return s;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochMetrics {
  std::int64_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  bool operator==(const EpochMetrics&) const = default;
};

inline Json to_json(const EpochMetrics& m) {
  return Json{{"epoch", m.epoch}, {"loss", m.loss}, {"accuracy", m.accuracy}, {"lr", m.lr}};
}

struct TrainResult {
  std::vector<EpochMetrics> history;
  TensorMap<float> params;
};

/// Fraction of rows whose arg-max logit equals the label.
inline double accuracy(const Tensor& logits, std::span<const std::int64_t> labels) {
  const std::int64_t k = logits.c();
  std::int64_t hits = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const float* z = logits.raw() + static_cast<std::int64_t>(r) * k;
    hits += (std::max_element(z, z + k) - z) == labels[r];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline Tensor eval_logits(const ModelSpec& spec, const TensorMap<float>& params, const Tensor& x,
                          std::int64_t batch_size) {
  const std::int64_t n = x.n();
  Tensor out({n, 1, 1, spec.head.num_classes});
  for (std::int64_t start = 0; start < n; start += batch_size) {
    std::vector<std::int64_t> rows;
    for (std::int64_t r = start; r < std::min(n, start + batch_size); ++r) rows.push_back(r);
    EagerExec<float> ex(params, Mode::eval());
    const Tensor y = run_model(ex, spec, gather_rows(x, rows));
    std::copy_n(y.raw(), y.size(), out.raw() + start * spec.head.num_classes);
  }
  return out;
}

/// AdamW with warmup + cosine over mini-batches. Accuracy is measured in eval
/// mode on the training set after each epoch, loss is the mean step loss.
inline TrainResult train_toy(ModelSpec spec, const Dataset& data, const TrainConfig& config,
                             const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  validate(config);
  spec.drop_path_rate = config.drop_path_rate;
  validate(spec);
  require(data.inputs.n() == static_cast<std::int64_t>(data.labels.size()) && data.inputs.n() > 0,
          ErrorKind::kInvalidArgument, "train: dataset needs one label per sample");
  require(spec.head.num_classes == data.num_classes, ErrorKind::kInvalidArgument,
          "train: head classes differ from dataset classes");
  check_input(spec, data.inputs.shape());
  const std::int64_t macs = count_macs(spec, data.inputs.h());
  if (macs > config.mac_budget)
    fail(ErrorKind::kBudget, "train: spec '" + spec.name + "' needs " + std::to_string(macs) +
                                 " MACs per sample, budget is " + std::to_string(config.mac_budget));

  double ls = 1e-6;
  for (const auto& st : spec.stages)
    if (st.block.layer_scale_init) ls = *st.block.layer_scale_init;
  const auto records = model_param_records(spec);
  TrainResult result{{}, init_params<float>(records, config.seed, ls)};
  std::vector<std::string> trainable;
  for (const auto& r : records)
    if (r.trainable()) trainable.push_back(r.name);

  Rng order_rng(config.seed ^ 0x5DEECE66DULL);
  const std::int64_t n = data.inputs.n();
  const std::int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::int64_t total = steps_per_epoch * config.epochs;
  AdamState state;
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::int64_t step = 0;
  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = n - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)], order[order_rng.below(static_cast<std::uint64_t>(i + 1))]);

    double loss_sum = 0;
    double lr = 0;
    for (std::int64_t b = 0; b < steps_per_epoch; ++b, ++step) {
      const auto first = order.begin() + b * config.batch_size;
      const auto last = order.begin() + std::min(n, (b + 1) * config.batch_size);
      std::vector<std::int64_t> rows(first, last);
      std::vector<std::int64_t> labels;
      for (auto r : rows) labels.push_back(data.labels[static_cast<std::size_t>(r)]);

      ag::Tape<float> tape;
      ag::TapeExec<float> ex(tape, result.params, Mode::train(order_rng.next_u64()));
      const ag::Var logits = run_model(ex, spec, tape.constant(gather_rows(data.inputs, rows)));
      const ag::Var loss = ag::cross_entropy_smoothed(tape, logits, labels, config.label_smoothing);
      const float loss_value = tape.value(loss)[0];
      if (!std::isfinite(loss_value))
        fail(ErrorKind::kNonFinite, "train: non-finite loss at step " + std::to_string(step));
      const auto grads = ag::backward(tape, loss);
      lr = lr_at(config, step, total);
      TensorMap<float> g;
      for (const auto& name : trainable)
        if (grads.contains(name)) g.emplace(name, grads.at(name));
      adamw_step(result.params, g, state, config, step, lr);
      loss_sum += loss_value;
    }
    EpochMetrics m{epoch, loss_sum / static_cast<double>(steps_per_epoch),
                   accuracy(eval_logits(spec, result.params, data.inputs, config.batch_size), data.labels), lr};
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Config files

struct ToyRun {
  ModelSpec spec;
  TrainConfig config;
  Dataset data;
};

/// {"model": "micro" | variant | spec object, "dataset": {"kind": "blobs" |
/// "random-labels", "samples", "resolution", "classes", "seed"}, plus any
/// TrainConfig field by name.
inline ToyRun toy_run_from_json(const Json& j) {
  try {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
    c.drop_path_rate = j.value("drop_path_rate", c.drop_path_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.mac_budget = j.value("mac_budget", c.mac_budget);
    static const std::vector<std::string> kKnown = {
        "lr",          "beta1",  "beta2",      "adam_eps", "weight_decay", "warmup_steps", "label_smoothing",
        "drop_path_rate", "epochs", "batch_size", "seed",     "mac_budget",   "model",        "dataset"};
    for (const auto& [key, _] : j.items())
      if (std::find(kKnown.begin(), kKnown.end(), key) == kKnown.end())
        fail(ErrorKind::kInvalidArgument, "train config: unknown key '" + key + "'");
    validate(c);

    const Json ds = j.value("dataset", Json::object());
    const std::string kind = ds.value("kind", std::string("blobs"));
    const std::int64_t samples = ds.value("samples", std::int64_t{128});
    const std::int64_t res = ds.value("resolution", std::int64_t{32});
    const std::int64_t classes = ds.value("classes", std::int64_t{2});
    const std::uint64_t dseed = ds.value("seed", std::uint64_t{1});
    require(samples > 0 && res > 0 && classes > 1, ErrorKind::kInvalidArgument, "train config: bad dataset sizes");

    ModelSpec spec = micro_isotropic_spec(classes);
    if (j.contains("model")) {
      const Json& m = j.at("model");
      if (m.is_string() && m.get<std::string>() != "micro") spec = build_variant(m.get<std::string>(), classes);
      else if (m.is_object()) spec = spec_from_json(m);
    }
    Dataset data;
    if (kind == "blobs") {
      require(classes == 2, ErrorKind::kInvalidArgument, "train config: blobs has two classes");
      data = blob_dataset(samples, res, dseed);
    } else if (kind == "random-labels") {
      data = random_label_dataset(samples, res, classes, dseed);
    } else {
      fail(ErrorKind::kInvalidArgument, "train config: unknown dataset kind '" + kind + "'");
    }
    return {std::move(spec), c, std::move(data)};
  } catch (const Json::exception& e) {
    fail(ErrorKind::kMalformed, std::string("train config: ") + e.what());
  }
}

}  // namespace cnx
