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

// Walks the ResNet-50 modernization roadmap step by step, printing the cost
// of each intermediate network, and checks the end point is ConvNeXt-T.

#include <cstdio>

#include "cnx.hpp"

int main() {
  for (const auto& row : cnx::roadmap(cnx::Regime::kRn50)) {
    std::printf("%-16s %8.3f GMACs %8.2f M params\n", std::string(cnx::to_string(row.step.id)).c_str(),
                static_cast<double>(cnx::count_macs(row.spec, 224)) * 1e-9,
                static_cast<double>(cnx::count_params(row.spec)) * 1e-6);
  }
  const auto rows = cnx::roadmap(cnx::Regime::kRn50);
  const bool same = cnx::structurally_equal(rows.back().spec, cnx::build_variant("convnext-t"));
  std::printf("final step equals convnext-t: %s\n", same ? "yes" : "no");

  // Steps compose one at a time; out-of-order steps are rejected.
  cnx::ModelSpec spec = cnx::build_variant("resnet-50");
  spec = cnx::apply_step(spec, {cnx::StepId::kBaselineRecipe, cnx::Regime::kRn50});
  try {
    cnx::apply_step(spec, {cnx::StepId::kBnToLn, cnx::Regime::kRn50});
  } catch (const cnx::Error& e) {
    std::printf("rejected: %s\n", e.what());
  }
  return same ? 0 : 1;
}
