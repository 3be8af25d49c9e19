// Copyright 2026 The crackseg Authors. All Rights Reserved.
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

#include "crackseg/augment.hpp"
#include "crackseg/container.hpp"
#include "crackseg/csv.hpp"
#include "crackseg/dataflow.hpp"
#include "crackseg/distill.hpp"
#include "crackseg/error.hpp"
#include "crackseg/explorer.hpp"
#include "crackseg/image_io.hpp"
#include "crackseg/layers.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/model.hpp"
#include "crackseg/quant.hpp"
#include "crackseg/quantizer.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/tensor.hpp"
