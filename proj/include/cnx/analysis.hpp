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

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "cnx/arch.hpp"
#include "cnx/graph.hpp"
#include "cnx/spec.hpp"

// Parameter and multiply-accumulate accounting. One "FLOP" in the cost tables
// is one multiply-accumulate of a conv or linear layer; normalization,
// activations, pooling and bias additions count zero.

namespace cnx {

inline constexpr const char* kMacConvention = "mac:conv+linear;norm=act=pool=bias=0";

struct CostRow {
  std::string name;
  std::string kind;
  std::int64_t params = 0;
  std::int64_t non_trainable = 0;
  std::int64_t macs = 0;
};

struct CostReport {
  std::string model;
  std::int64_t resolution = 0;
  std::string convention = kMacConvention;
  std::vector<CostRow> rows;
  std::int64_t total_params = 0;
  std::int64_t total_non_trainable = 0;
  std::int64_t total_macs = 0;
};

/// Rows for every parameterized layer at a square input resolution.
inline CostReport cost_report(const ModelSpec& spec, std::int64_t resolution) {
  ShapeExec ex;
  const Shape input{1, resolution, resolution, 3};
  try {
    run_model(ex, spec, input);
  } catch (const Error& e) {
    fail(ErrorKind::kShape, "resolution " + std::to_string(resolution) + " incompatible with '" + spec.name +
                                "': " + e.what());
  }
  CostReport r;
  r.model = spec.name;
  r.resolution = resolution;
  for (const auto& l : ex.layers) {
    r.rows.push_back({l.name, l.kind, l.params, l.non_trainable, l.macs});
    r.total_params += l.params;
    r.total_non_trainable += l.non_trainable;
    r.total_macs += l.macs;
  }
  return r;
}

/// Trainable parameters; batch-norm running statistics are excluded (see
/// CostReport::total_non_trainable).
inline std::int64_t count_params(const ModelSpec& spec) {
  std::int64_t total = 0;
  for (const auto& rec : model_param_records(spec))
    if (rec.trainable()) total += rec.shape.numel();
  return total;
}

inline std::int64_t count_macs(const ModelSpec& spec, std::int64_t resolution) {
  return cost_report(spec, resolution).total_macs;
}

struct RoadmapCostRow {
  RoadmapStep step;
  std::string model;
  std::int64_t macs = 0;
  double gflops() const { return static_cast<double>(macs) * 1e-9; }
};

inline std::vector<RoadmapCostRow> roadmap_cost_table(Regime regime, std::int64_t resolution = 224) {
  std::vector<RoadmapCostRow> out;
  for (const auto& row : roadmap(regime)) out.push_back({row.step, row.spec.name, count_macs(row.spec, resolution)});
  return out;
}

// ---------------------------------------------------------------------------
// Text rendering

namespace detail {
inline std::string printf_string(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list copy;
  va_copy(copy, args);
  const int n = std::vsnprintf(nullptr, 0, fmt, copy);
  va_end(copy);
  std::string s(static_cast<std::size_t>(n), '\0');
  std::vsnprintf(s.data(), s.size() + 1, fmt, args);
  va_end(args);
  return s;
}
}  // namespace detail

/// Fixed-width table:
///   # model: <name>
///   # resolution: <R>
///   # convention: <tag>
///   then "%-48s %14s %18s" rows (layer, params, macs) under a header and a
///   dashed rule, closed by a rule and the "total" row. Params count
///   trainable values only.
inline std::string format_cost_report(const CostReport& r) {
  std::string out;
  out += "# model: " + r.model + "\n";
  out += "# resolution: " + std::to_string(r.resolution) + "\n";
  out += "# convention: " + r.convention + "\n";
  const std::string rule = std::string(48, '-') + " " + std::string(14, '-') + " " + std::string(18, '-') + "\n";
  out += detail::printf_string("%-48s %14s %18s\n", "layer", "params", "macs");
  out += rule;
  for (const auto& row : r.rows)
    out += detail::printf_string("%-48s %14lld %18lld\n", row.name.c_str(), static_cast<long long>(row.params),
                                 static_cast<long long>(row.macs));
  out += rule;
  out += detail::printf_string("%-48s %14lld %18lld\n", "total", static_cast<long long>(r.total_params),
                               static_cast<long long>(r.total_macs));
  return out;
}

// ---------------------------------------------------------------------------
// Per-stage summary

struct StageRow {
  std::string name;     // stem, stages.<i>, head
  std::string output;   // H x W x C after the group
  std::string layout;   // block composition, e.g. "[d7x7 96, 1x1 384, 1x1 96] x 3"
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

struct StageSummary {
  std::string model;
  std::int64_t resolution = 0;
  std::vector<StageRow> rows;
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;
};

inline std::string block_layout(const BlockSpec& b, std::int64_t depth) {
  auto conv = [](std::int64_t k, std::int64_t width, const char* tag) {
    return detail::printf_string("%s%lldx%lld %lld", tag, static_cast<long long>(k), static_cast<long long>(k),
                                 static_cast<long long>(width));
  };
  const char* tag = b.grouping == Grouping::kDepthwise ? "d" : "";
  std::string spatial = conv(b.kernel_size, b.spatial_position == SpatialPosition::kFirst ? b.channels : b.hidden(), tag);
  if (b.grouping == Grouping::kGrouped) spatial += detail::printf_string(" C=%lld", static_cast<long long>(b.groups));
  const std::string pw1 = conv(1, b.hidden(), "");
  const std::string pw2 = conv(1, b.channels, "");
  const std::string body =
      b.spatial_position == SpatialPosition::kFirst ? spatial + ", " + pw1 + ", " + pw2 : pw1 + ", " + spatial + ", " + pw2;
  return "[" + body + "] x " + std::to_string(depth);
}

inline StageSummary stage_summary(const ModelSpec& spec, std::int64_t resolution) {
  const CostReport cost = cost_report(spec, resolution);
  ShapeExec ex;
  run_model(ex, spec, Shape{1, resolution, resolution, 3});
  auto dims = [](const Shape& s) {
    return detail::printf_string("%lldx%lldx%lld", static_cast<long long>(s.h), static_cast<long long>(s.w),
                                 static_cast<long long>(s.c));
  };
  StageSummary out{spec.name, resolution, {}, cost.total_params, cost.total_macs};
  const std::string stem_layout =
      spec.stem.kind == StemKind::kPatchify
          ? detail::printf_string("%lldx%lld %lld, stride %lld", static_cast<long long>(spec.stem.kernel),
                                  static_cast<long long>(spec.stem.kernel), static_cast<long long>(spec.stem.channels),
                                  static_cast<long long>(spec.stem.stride))
          : detail::printf_string("7x7 %lld, stride 2; 3x3 max pool, stride 2", static_cast<long long>(spec.stem.channels));
  out.rows.push_back({"stem", dims(ex.probes.at("stem")), stem_layout});
  for (std::size_t i = 0; i < spec.stages.size(); ++i)
    out.rows.push_back({"stages." + std::to_string(i), dims(ex.probes.at("stages." + std::to_string(i))),
                        block_layout(spec.stages[i].block, spec.stages[i].depth)});
  out.rows.push_back({"head", dims(ex.probes.at("logits")),
                      detail::printf_string("global avg pool, %sfc %lld", spec.head.final_norm ? "layer norm, " : "",
                                            static_cast<long long>(spec.head.num_classes))});
  for (const auto& row : cost.rows) {
    StageRow* target = &out.rows.front();
    if (row.name.starts_with("head.")) target = &out.rows.back();
    for (std::size_t i = 0; i < spec.stages.size(); ++i)
      if (row.name.starts_with(stage_prefix(i))) target = &out.rows[i + 1];
    target->params += row.params;
    target->macs += row.macs;
  }
  return out;
}

inline std::string format_stage_summary(const StageSummary& s) {
  std::string out = "# model: " + s.model + "\n# resolution: " + std::to_string(s.resolution) +
                    "\n# convention: " + kMacConvention + "\n";
  out += detail::printf_string("%-10s %-14s %-44s %12s %14s\n", "stage", "output", "blocks", "params", "macs");
  const std::string rule(10 + 14 + 44 + 12 + 14 + 4, '-');
  out += rule + "\n";
  for (const auto& r : s.rows)
    out += detail::printf_string("%-10s %-14s %-44s %12lld %14lld\n", r.name.c_str(), r.output.c_str(), r.layout.c_str(),
                                 static_cast<long long>(r.params), static_cast<long long>(r.macs));
  out += rule + "\n";
  out += detail::printf_string("%-10s %-14s %-44s %12lld %14lld\n", "total", "", "", static_cast<long long>(s.total_params),
                               static_cast<long long>(s.total_macs));
  out += detail::printf_string("# params: %.2fM  macs: %.2fG\n", static_cast<double>(s.total_params) * 1e-6,
                               static_cast<double>(s.total_macs) * 1e-9);
  return out;
}


}  // namespace cnx
