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

#include "cnx/analysis.hpp"
#include "cnx/arch.hpp"
#include "cnx/autograd.hpp"
#include "cnx/blocks.hpp"
#include "cnx/error.hpp"
#include "cnx/gradcheck.hpp"
#include "cnx/graph.hpp"
#include "cnx/image_io.hpp"
#include "cnx/kernels.hpp"
#include "cnx/parallel.hpp"
#include "cnx/random.hpp"
#include "cnx/spec.hpp"
#include "cnx/spec_io.hpp"
#include "cnx/tensor.hpp"
#include "cnx/train.hpp"
#include "cnx/weights_io.hpp"
