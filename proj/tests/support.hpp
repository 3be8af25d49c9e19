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

// Fixtures shared by the unit tests.

#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "crackseg/model.hpp"
#include "crackseg/quantizer.hpp"
#include "crackseg/rng.hpp"

namespace crackseg::testing {

inline Tensor<float> random_tensor(TensorShape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<float> t(s);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline Tensor<float> random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor({1, 3, h, w}, rng, 0.0, 1.0);
}

inline std::vector<Tensor<float>> random_images(int count, int h, int w, std::uint64_t seed) {
  std::vector<Tensor<float>> v;
  for (int i = 0; i < count; ++i) v.push_back(random_image(h, w, seed * 1000 + static_cast<std::uint64_t>(i)));
  return v;
}

inline ModelGraph seeded_model(int c, int hw, std::uint64_t seed = 1, UpsampleMode up = UpsampleMode::tconv) {
  ModelConfig cfg;
  cfg.c = c;
  cfg.upsample = up;
  cfg.input_h = cfg.input_w = hw;
  return init_params(build_model(cfg), seed);
}

/// Seeded model quantized on four random calibration images.
inline QuantizedGraph seeded_quantized(int c, int hw, int weight_bits = 8, std::uint64_t seed = 1,
                                       UpsampleMode up = UpsampleMode::tconv) {
  return quantize_float_model(seeded_model(c, hw, seed, up), random_images(4, hw, hw, seed + 17),
                              {weight_bits, 8});
}

template <typename F>
void expect_errc(F&& f, Errc code, const std::string& needle = {}) {
  try {
    f();
    ADD_FAILURE() << "expected " << errc_name(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
    if (!needle.empty()) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  }
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh scratch directory under the build tree's temp area.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("crackseg_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace crackseg::testing
