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

// Trains the micro isotropic model on two synthetic blobs and runs a forward
// pass with the result.

#include <cstdio>

#include "cnx.hpp"

int main() {
  const cnx::ModelSpec spec = cnx::micro_isotropic_spec(2);
  const cnx::Dataset data = cnx::blob_dataset(64, 32, 1);
  cnx::TrainConfig config;
  config.epochs = 5;
  config.warmup_steps = 4;
  const auto result = cnx::train_toy(spec, data, config, [](const cnx::EpochMetrics& m) {
    std::printf("%s\n", cnx::to_json(m).dump().c_str());
  });

  const cnx::ModelWeights weights(spec, result.params);
  const cnx::Tensor logits = cnx::forward(weights, cnx::gather_rows(data.inputs, std::vector<std::int64_t>{0, 1}));
  std::printf("logits of samples 0 and 1: (%.3f, %.3f) (%.3f, %.3f)\n", logits[0], logits[1], logits[2], logits[3]);
  return 0;
}
