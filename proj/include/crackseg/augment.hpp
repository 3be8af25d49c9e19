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

// Training-time augmentation: horizontal flip, small rotation, additive
// Gaussian noise and axis-aligned motion blur. Geometric ops move image and
// mask together; photometric ops touch the image only.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "crackseg/error.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

struct AugmentConfig {
  double p_flip = 0.5;
  double p_rotate = 0.5;
  double p_noise = 0.5;
  double p_blur = 0.5;
  double max_rotation_deg = 10.0;
  double noise_sigma = 0.02;
  int blur_length = 5;
  std::uint64_t seed = 0;

  void validate() const {
    for (double p : {p_flip, p_rotate, p_noise, p_blur})
      if (!(p >= 0.0 && p <= 1.0)) detail::fail(Errc::invalid_parameter, "probability ", p, " outside [0, 1]");
    if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 180.0))
      detail::fail(Errc::invalid_parameter, "max_rotation_deg must be in [0, 180]");
    if (!(noise_sigma >= 0.0)) detail::fail(Errc::invalid_parameter, "noise_sigma must be >= 0");
    if (blur_length < 1 || blur_length % 2 == 0)
      detail::fail(Errc::invalid_parameter, "blur_length must be odd and >= 1, got ", blur_length);
  }
};

/// What one call to augment() decided; useful for logging and tests.
struct AugmentDraw {
  bool flip = false;
  bool rotate = false;
  double angle_deg = 0.0;
  bool noise = false;
  bool blur = false;
  bool blur_horizontal = true;
};

template <typename T>
Tensor<T> hflip(const Tensor<T>& in) {
  const auto& s = in.shape();
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out(n, c, y, x) = in(n, c, y, s.w - 1 - x);
  return out;
}

namespace detail {

struct RotationMap {
  double cx, cy, cs, sn;
  // destination pixel -> source coordinates
  void src(int x, int y, double& sx, double& sy) const {
    const double dx = x - cx, dy = y - cy;
    sx = cs * dx + sn * dy + cx;
    sy = -sn * dx + cs * dy + cy;
  }
};

inline RotationMap rotation_map(const TensorShape& s, double deg) {
  const double r = deg * std::numbers::pi / 180.0;
  return {(s.w - 1) / 2.0, (s.h - 1) / 2.0, std::cos(r), std::sin(r)};
}

}  // namespace detail

/// Rotation about the image centre, bilinear, edges replicated.
inline Tensor<float> rotate_image(const Tensor<float>& in, double deg) {
  const auto& s = in.shape();
  const auto m = detail::rotation_map(s, deg);
  Tensor<float> out(s);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      double sx, sy;
      m.src(x, y, sx, sy);
      sx = std::clamp(sx, 0.0, s.w - 1.0);
      sy = std::clamp(sy, 0.0, s.h - 1.0);
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, s.w - 1), y1 = std::min(y0 + 1, s.h - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const double top = (1 - fx) * in(n, c, y0, x0) + fx * in(n, c, y0, x1);
          const double bot = (1 - fx) * in(n, c, y1, x0) + fx * in(n, c, y1, x1);
          out(n, c, y, x) = static_cast<float>((1 - fy) * top + fy * bot);
        }
    }
  return out;
}

/// Same rotation, nearest neighbour; pixels mapped from outside become 0.
inline Tensor<std::uint8_t> rotate_mask(const Tensor<std::uint8_t>& in, double deg) {
  const auto& s = in.shape();
  const auto m = detail::rotation_map(s, deg);
  Tensor<std::uint8_t> out(s);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      double sx, sy;
      m.src(x, y, sx, sy);
      const auto ix = static_cast<long>(std::lround(sx)), iy = static_cast<long>(std::lround(sy));
      if (ix < 0 || iy < 0 || ix >= s.w || iy >= s.h) continue;
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) out(n, c, y, x) = in(n, c, static_cast<int>(iy), static_cast<int>(ix));
    }
  return out;
}

/// Adds N(0, sigma) per element and clamps to [0, 1].
inline Tensor<float> add_noise(const Tensor<float>& in, double sigma, Rng& rng) {
  Tensor<float> out = in;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(std::clamp(out[i] + rng.normal(0.0, sigma), 0.0, 1.0));
  return out;
}

/// Centred box filter of `length` taps along one axis, edges replicated.
inline Tensor<float> motion_blur(const Tensor<float>& in, int length, bool horizontal) {
  const auto& s = in.shape();
  const int r = length / 2;
  Tensor<float> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          double acc = 0.0;
          for (int k = -r; k <= r; ++k) {
            const int xx = horizontal ? std::clamp(x + k, 0, s.w - 1) : x;
            const int yy = horizontal ? y : std::clamp(y + k, 0, s.h - 1);
            acc += in(n, c, yy, xx);
          }
          out(n, c, y, x) = static_cast<float>(acc / length);
        }
  return out;
}

/// Draws every decision up front so the stream position does not depend
/// on which ops fire.
inline AugmentDraw draw_augment(const AugmentConfig& cfg, Rng& rng) {
  AugmentDraw d;
  d.flip = rng.bernoulli(cfg.p_flip);
  d.rotate = rng.bernoulli(cfg.p_rotate);
  d.angle_deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  d.noise = rng.bernoulli(cfg.p_noise);
  d.blur = rng.bernoulli(cfg.p_blur);
  d.blur_horizontal = rng.bernoulli(0.5);
  return d;
}

struct Augmented {
  Tensor<float> image;
  Tensor<std::uint8_t> mask;
  AugmentDraw draw;
};

inline Augmented apply_augment(Tensor<float> image, Tensor<std::uint8_t> mask, const AugmentConfig& cfg,
                               const AugmentDraw& d, Rng& rng) {
  const auto& is = image.shape();
  const auto& ms = mask.shape();
  if (is.n != ms.n || ms.c != 1 || is.h != ms.h || is.w != ms.w)
    detail::fail(Errc::shape, "image ", is, " and mask ", ms, " are not paired");
  if (d.flip) {
    image = hflip(image);
    mask = hflip(mask);
  }
  if (d.rotate) {
    image = rotate_image(image, d.angle_deg);
    mask = rotate_mask(mask, d.angle_deg);
  }
  if (d.noise) image = add_noise(image, cfg.noise_sigma, rng);
  if (d.blur) image = motion_blur(image, cfg.blur_length, d.blur_horizontal);
  return {std::move(image), std::move(mask), d};
}

inline Augmented augment(Tensor<float> image, Tensor<std::uint8_t> mask, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto d = draw_augment(cfg, rng);
  return apply_augment(std::move(image), std::move(mask), cfg, d, rng);
}

/// Item `index` of an epoch; independent of processing order.
inline Augmented augment_item(Tensor<float> image, Tensor<std::uint8_t> mask, const AugmentConfig& cfg,
                              std::uint64_t index) {
  Rng rng = Rng::for_item(cfg.seed, index);
  return augment(std::move(image), std::move(mask), cfg, rng);
}

}  // namespace crackseg
