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

// Float reference implementations of every layer the U-Net family uses.
// All functions are pure; inputs are NCHW.

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <vector>

#include "crackseg/error.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

struct BatchNormParams {
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> mean;
  std::vector<float> var;
  float eps = 1e-5f;

  std::size_t channels() const { return gamma.size(); }

  static BatchNormParams identity(int channels, float eps = 1e-5f) {
    const auto n = static_cast<std::size_t>(channels);
    return {std::vector<float>(n, 1.0f), std::vector<float>(n, 0.0f),
            std::vector<float>(n, 0.0f), std::vector<float>(n, 1.0f), eps};
  }

  friend bool operator==(const BatchNormParams&,
                         const BatchNormParams&) = default;
};

/// 3x3 convolution, stride 1, zero padding 1. The U-Net convs carry no
/// bias; `bias` is only populated after batch-norm folding.
template <std::floating_point T>
Tensor<T> conv3x3(const Tensor<T>& in, const Tensor<T>& weights, std::span<const T> bias = {}) {
  const auto& s = in.shape();
  const auto& ws = weights.shape();
  if (ws.h != 3 || ws.w != 3)
    detail::fail(Errc::shape, "conv3x3 expects 3x3 kernels, got ", ws);
  if (ws.c != s.c)
    detail::fail(Errc::shape, "conv3x3 channel mismatch: input has ", s.c,
                 " channels, weights expect ", ws.c);
  if (!bias.empty() && static_cast<int>(bias.size()) != ws.n)
    detail::fail(Errc::shape, "conv3x3 bias length ", bias.size(), " != out channels ", ws.n);
  Tensor<T> out({s.n, ws.n, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    for (int oc = 0; oc < ws.n; ++oc) {
      auto dst = out.plane(n, oc);
      if (!bias.empty()) std::fill(dst.begin(), dst.end(), bias[oc]);
      for (int ic = 0; ic < s.c; ++ic) {
        const auto src = in.plane(n, ic);
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const T wv = weights(oc, ic, ky, kx);
            const int dy = ky - 1;
            const int dx = kx - 1;
            const int x0 = std::max(0, -dx);
            const int x1 = std::min(s.w, s.w - dx);
            for (int y = std::max(0, -dy); y < std::min(s.h, s.h - dy); ++y) {
              T* o = dst.data() + static_cast<std::size_t>(y) * s.w;
              const T* i = src.data() + static_cast<std::size_t>(y + dy) * s.w;
              for (int x = x0; x < x1; ++x) o[x] += wv * i[x + dx];
            }
          }
        }
      }
    }
  }
  return out;
}

/// 1x1 convolution with an optional per-output-channel bias (empty = none).
template <std::floating_point T>
Tensor<T> conv1x1(const Tensor<T>& in, const Tensor<T>& weights,
                  std::span<const T> bias = {}) {
  const auto& s = in.shape();
  const auto& ws = weights.shape();
  if (ws.h != 1 || ws.w != 1)
    detail::fail(Errc::shape, "conv1x1 expects 1x1 kernels, got ", ws);
  if (ws.c != s.c)
    detail::fail(Errc::shape, "conv1x1 channel mismatch: input has ", s.c,
                 " channels, weights expect ", ws.c);
  if (!bias.empty() && static_cast<int>(bias.size()) != ws.n)
    detail::fail(Errc::shape, "conv1x1 bias length ", bias.size(),
                 " != out channels ", ws.n);
  Tensor<T> out({s.n, ws.n, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    for (int oc = 0; oc < ws.n; ++oc) {
      auto dst = out.plane(n, oc);
      if (!bias.empty()) std::fill(dst.begin(), dst.end(), bias[oc]);
      for (int ic = 0; ic < s.c; ++ic) {
        const T wv = weights(oc, ic, 0, 0);
        const auto src = in.plane(n, ic);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += wv * src[i];
      }
    }
  }
  return out;
}

template <std::floating_point T>
Tensor<T> batch_norm(const Tensor<T>& in, const BatchNormParams& p) {
  const auto& s = in.shape();
  const auto c = static_cast<std::size_t>(s.c);
  if (p.gamma.size() != c || p.beta.size() != c || p.mean.size() != c ||
      p.var.size() != c)
    detail::fail(Errc::shape, "batch_norm parameter length != ", s.c);
  if (p.eps < 0.0f) detail::fail(Errc::invalid_parameter, "negative BN epsilon");
  for (std::size_t i = 0; i < c; ++i) {
    if (p.var[i] < 0.0f)
      detail::fail(Errc::invalid_parameter, "negative BN variance at channel ", i);
    if (p.var[i] + p.eps <= 0.0f)
      detail::fail(Errc::invalid_parameter, "zero BN denominator at channel ", i);
  }
  Tensor<T> out = in;
  for (int n = 0; n < s.n; ++n) {
    for (int ch = 0; ch < s.c; ++ch) {
      const T inv = T(1) / std::sqrt(static_cast<T>(p.var[ch]) + static_cast<T>(p.eps));
      const T g = static_cast<T>(p.gamma[ch]);
      const T b = static_cast<T>(p.beta[ch]);
      const T m = static_cast<T>(p.mean[ch]);
      for (T& v : out.plane(n, ch)) v = g * (v - m) * inv + b;
    }
  }
  return out;
}

template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& in) {
  Tensor<T> out = in;
  for (T& v : out.data()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& in) {
  const auto& s = in.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    detail::fail(Errc::shape, "maxpool2x2 needs even spatial dims, got ", s);
  Tensor<T> out({s.n, s.c, s.h / 2, s.w / 2});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h / 2; ++y)
        for (int x = 0; x < s.w / 2; ++x)
          out(n, c, y, x) = std::max(
              std::max(in(n, c, 2 * y, 2 * x), in(n, c, 2 * y, 2 * x + 1)),
              std::max(in(n, c, 2 * y + 1, 2 * x), in(n, c, 2 * y + 1, 2 * x + 1)));
  return out;
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& in) {
  const auto& s = in.shape();
  Tensor<T> out({s.n, s.c, s.h * 2, s.w * 2});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h * 2; ++y)
        for (int x = 0; x < s.w * 2; ++x)
          out(n, c, y, x) = in(n, c, y / 2, x / 2);
  return out;
}

/// Stride-2 2x2 transposed convolution. Weights are (in, out, 2, 2); each
/// output pixel receives exactly one kernel tap.
template <std::floating_point T>
Tensor<T> tconv2x2(const Tensor<T>& in, const Tensor<T>& weights,
                   std::span<const T> bias) {
  const auto& s = in.shape();
  const auto& ws = weights.shape();
  if (ws.h != 2 || ws.w != 2)
    detail::fail(Errc::shape, "tconv2x2 expects 2x2 kernels, got ", ws);
  if (ws.n != s.c)
    detail::fail(Errc::shape, "tconv2x2 channel mismatch: input has ", s.c,
                 " channels, weights expect ", ws.n);
  if (static_cast<int>(bias.size()) != ws.c)
    detail::fail(Errc::shape, "tconv2x2 bias length ", bias.size(),
                 " != out channels ", ws.c);
  Tensor<T> out({s.n, ws.c, s.h * 2, s.w * 2});
  for (int n = 0; n < s.n; ++n) {
    for (int oc = 0; oc < ws.c; ++oc) {
      auto dst = out.plane(n, oc);
      std::fill(dst.begin(), dst.end(), bias[oc]);
      for (int ic = 0; ic < s.c; ++ic) {
        for (int y = 0; y < s.h * 2; ++y) {
          for (int x = 0; x < s.w * 2; ++x) {
            out(n, oc, y, x) += weights(ic, oc, y % 2, x % 2) * in(n, ic, y / 2, x / 2);
          }
        }
      }
    }
  }
  return out;
}

/// Channel concatenation: all channels of `a` first, then those of `b`.
template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    detail::fail(Errc::shape, "concat dims differ: ", sa, " vs ", sb);
  Tensor<T> out({sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    for (int c = 0; c < sa.c; ++c) std::ranges::copy(a.plane(n, c), out.plane(n, c).begin());
    for (int c = 0; c < sb.c; ++c)
      std::ranges::copy(b.plane(n, c), out.plane(n, sa.c + c).begin());
  }
  return out;
}

/// Channel softmax of logits / t, stabilised by max subtraction.
template <std::floating_point T>
Tensor<T> softmax_t(const Tensor<T>& logits, double t) {
  if (!(t > 0.0)) detail::fail(Errc::invalid_parameter, "temperature must be > 0, got ", t);
  const auto& s = logits.shape();
  Tensor<T> out(s);
  std::vector<double> buf(static_cast<std::size_t>(s.c));
  for (int n = 0; n < s.n; ++n) {
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        double mx = -INFINITY;
        for (int c = 0; c < s.c; ++c) mx = std::max(mx, static_cast<double>(logits(n, c, y, x)) / t);
        double sum = 0.0;
        for (int c = 0; c < s.c; ++c) {
          buf[c] = std::exp(static_cast<double>(logits(n, c, y, x)) / t - mx);
          sum += buf[c];
        }
        for (int c = 0; c < s.c; ++c) out(n, c, y, x) = static_cast<T>(buf[c] / sum);
      }
    }
  }
  return out;
}

/// Bilinear resize with half-pixel centres (align_corners = false); source
/// coordinates are clamped to the valid range at the borders.
template <std::floating_point T>
Tensor<T> bilinear_resize(const Tensor<T>& in, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    detail::fail(Errc::shape, "bilinear_resize target must be >= 1, got ", out_h, "x", out_w);
  const auto& s = in.shape();
  Tensor<T> out({s.n, s.c, out_h, out_w});
  auto axis = [](int dst, int in_len, int out_len, int& i0, int& i1, double& frac) {
    double src = (dst + 0.5) * (static_cast<double>(in_len) / out_len) - 0.5;
    if (src < 0.0) src = 0.0;
    i0 = std::min(static_cast<int>(src), in_len - 1);
    i1 = std::min(i0 + 1, in_len - 1);
    frac = src - i0;
  };
  for (int y = 0; y < out_h; ++y) {
    int y0, y1;
    double fy;
    axis(y, s.h, out_h, y0, y1, fy);
    for (int x = 0; x < out_w; ++x) {
      int x0, x1;
      double fx;
      axis(x, s.w, out_w, x0, x1, fx);
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          const double top = (1.0 - fx) * in(n, c, y0, x0) + fx * in(n, c, y0, x1);
          const double bot = (1.0 - fx) * in(n, c, y1, x0) + fx * in(n, c, y1, x1);
          out(n, c, y, x) = static_cast<T>((1.0 - fy) * top + fy * bot);
        }
      }
    }
  }
  return out;
}

/// Per-pixel argmax over channels; ties resolve to the lower class index.
template <typename T>
Tensor<std::uint8_t> argmax_channels(const Tensor<T>& logits) {
  const auto& s = logits.shape();
  Tensor<std::uint8_t> out({s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        int best = 0;
        for (int c = 1; c < s.c; ++c)
          if (logits(n, c, y, x) > logits(n, best, y, x)) best = c;
        out(n, 0, y, x) = static_cast<std::uint8_t>(best);
      }
  return out;
}

}  // namespace crackseg
