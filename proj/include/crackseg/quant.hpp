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

// Integer quantization primitives: affine quantize/dequantize, fixed-point
// requantization and int4 packing.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "crackseg/error.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// Round half to even under the default floating-point environment.
inline double round_half_even(double x) { return std::nearbyint(x); }

inline std::int32_t saturate_i32(std::int64_t v) {
  constexpr std::int64_t lo = std::numeric_limits<std::int32_t>::min();
  constexpr std::int64_t hi = std::numeric_limits<std::int32_t>::max();
  return static_cast<std::int32_t>(std::clamp(v, lo, hi));
}

/// Fixed-point multiplier: real ~= multiplier * 2^-shift, multiplier in
/// [2^30, 2^31) whenever the real value allows it.
struct Requant {
  std::int32_t multiplier = 1 << 30;
  int shift = 30;

  double real() const { return std::ldexp(static_cast<double>(multiplier), -shift); }

  friend bool operator==(const Requant&, const Requant&) = default;
};

inline constexpr int kMaxRequantShift = 62;

inline Requant make_requant(double real) {
  if (!(real > 0.0) || !std::isfinite(real))
    detail::fail(Errc::invalid_parameter, "requant multiplier must be positive and finite, got ", real);
  int exp = 0;
  const double frac = std::frexp(real, &exp);  // real = frac * 2^exp, frac in [0.5, 1)
  auto m = static_cast<std::int64_t>(round_half_even(std::ldexp(frac, 31)));
  if (m == (std::int64_t{1} << 31)) {
    m >>= 1;
    ++exp;
  }
  int shift = 31 - exp;
  if (shift < 0) {
    // too large to represent; saturate
    return {std::numeric_limits<std::int32_t>::max(), 0};
  }
  if (shift > kMaxRequantShift) {
    m = static_cast<std::int64_t>(round_half_even(std::ldexp(real, kMaxRequantShift)));
    shift = kMaxRequantShift;
  }
  return {static_cast<std::int32_t>(m), shift};
}

/// round_half_even(acc * multiplier / 2^shift). The accumulator is first
/// saturated to int32, so the product always fits in int64.
inline std::int32_t requantize(std::int64_t acc, const Requant& r) {
  const std::int64_t a = saturate_i32(acc);
  const std::int64_t prod = a * static_cast<std::int64_t>(r.multiplier);
  if (r.shift == 0) return saturate_i32(prod);
  const std::int64_t q = prod >> r.shift;  // floor
  const std::int64_t rem = prod - (q * (std::int64_t{1} << r.shift));
  const std::int64_t half = std::int64_t{1} << (r.shift - 1);
  std::int64_t res = q;
  if (rem > half || (rem == half && (q & 1) != 0)) ++res;
  return saturate_i32(res);
}

inline std::int32_t clamp_q(std::int64_t v, std::int32_t lo, std::int32_t hi) {
  return static_cast<std::int32_t>(std::clamp<std::int64_t>(v, lo, hi));
}

struct QuantizeResult {
  QuantizedTensor tensor;
  std::size_t saturated = 0;
};

/// q = clamp(round_half_even(x / scale) + zero_point, qmin, qmax).
/// Per-channel params index `axis` (0 = dim n, 1 = dim c).
inline QuantizeResult quantize_tensor(const Tensor<float>& t, const QuantParams& qp, int axis = 0) {
  qp.validate();
  const auto& s = t.shape();
  if (axis != 0 && axis != 1) detail::fail(Errc::invalid_parameter, "channel axis must be 0 or 1");
  const int nch = axis == 0 ? s.n : s.c;
  if (qp.granularity == Granularity::per_channel && static_cast<int>(qp.channels()) != nch)
    detail::fail(Errc::shape, "per-channel params for ", qp.channels(), " channels, tensor has ", nch);
  QuantizeResult r;
  r.tensor.params = qp;
  r.tensor.values = Tensor<std::int8_t>(s);
  const std::int32_t lo = qp.qmin();
  const std::int32_t hi = qp.qmax();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t k =
          qp.granularity == Granularity::per_channel ? static_cast<std::size_t>(axis == 0 ? n : c) : 0;
      const double scale = qp.scale[k];
      const std::int64_t zp = qp.zero_point[k];
      auto src = t.plane(n, c);
      auto dst = r.tensor.values.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) {
        const double v = round_half_even(static_cast<double>(src[i]) / scale);
        const double q = v + static_cast<double>(zp);
        if (q < lo || q > hi) ++r.saturated;
        dst[i] = static_cast<std::int8_t>(std::clamp<double>(q, lo, hi));
      }
    }
  }
  return r;
}

inline Tensor<float> dequantize(const QuantizedTensor& q, int axis = 0) {
  const auto& s = q.values.shape();
  Tensor<float> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const std::size_t k = q.params.granularity == Granularity::per_channel
                                ? static_cast<std::size_t>(axis == 0 ? n : c)
                                : 0;
      const double scale = q.params.scale[k];
      const std::int32_t zp = q.params.zero_point[k];
      auto src = q.values.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i)
        dst[i] = static_cast<float>(scale * (static_cast<std::int32_t>(src[i]) - zp));
    }
  return out;
}

/// Per-tensor asymmetric parameters covering [lo, hi] (widened to include 0
/// so that zero padding is exact).
inline QuantParams activation_params(double lo, double hi, int bits = 8) {
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  QuantParams qp;
  qp.bits = bits;
  const double levels = static_cast<double>((1 << bits) - 1);
  double scale = (hi - lo) / levels;
  if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;
  const double qmin = qp.qmin();
  const auto zp = static_cast<std::int32_t>(
      std::clamp(round_half_even(qmin - lo / scale), qmin, static_cast<double>(qp.qmax())));
  qp.scale = {scale};
  qp.zero_point = {zp};
  return qp;
}

/// Per-channel symmetric weight parameters: scale = max|w| / (2^(bits-1) - 1),
/// zero point 0. `axis` selects the output-channel dimension.
inline QuantParams weight_params(const Tensor<float>& w, int bits, int axis = 0) {
  const auto& s = w.shape();
  const int nch = axis == 0 ? s.n : s.c;
  std::vector<double> amax(static_cast<std::size_t>(nch), 0.0);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (float v : w.plane(n, c)) {
        auto& m = amax[static_cast<std::size_t>(axis == 0 ? n : c)];
        m = std::max(m, std::fabs(static_cast<double>(v)));
      }
  QuantParams qp;
  qp.bits = bits;
  qp.granularity = Granularity::per_channel;
  const double qmax = static_cast<double>((1 << (bits - 1)) - 1);
  qp.scale.clear();
  for (double m : amax) qp.scale.push_back(m > 0.0 ? m / qmax : 1.0);
  qp.zero_point.assign(static_cast<std::size_t>(nch), 0);
  return qp;
}

/// Packs int4 values two per byte, low nibble first. Each row of
/// `row_len` values starts on a fresh byte; odd rows end in a zero nibble.
inline std::vector<std::uint8_t> pack_int4(std::span<const std::int8_t> values, std::size_t row_len) {
  if (row_len == 0 || values.size() % row_len != 0)
    detail::fail(Errc::shape, "int4 row length ", row_len, " does not divide ", values.size());
  const std::size_t rows = values.size() / row_len;
  const std::size_t row_bytes = (row_len + 1) / 2;
  std::vector<std::uint8_t> out(rows * row_bytes, 0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < row_len; ++i) {
      const std::int8_t v = values[r * row_len + i];
      if (v < -8 || v > 7) detail::fail(Errc::invalid_parameter, "value ", int{v}, " outside int4 range");
      const auto nib = static_cast<std::uint8_t>(v & 0x0F);
      out[r * row_bytes + i / 2] |= static_cast<std::uint8_t>(i % 2 == 0 ? nib : nib << 4);
    }
  return out;
}

inline std::size_t packed_int4_bytes(std::size_t count, std::size_t row_len) {
  return (count / row_len) * ((row_len + 1) / 2);
}

inline std::vector<std::int8_t> unpack_int4(std::span<const std::uint8_t> bytes, std::size_t count,
                                            std::size_t row_len) {
  if (row_len == 0 || count % row_len != 0)
    detail::fail(Errc::shape, "int4 row length ", row_len, " does not divide ", count);
  if (bytes.size() != packed_int4_bytes(count, row_len))
    detail::fail(Errc::shape, "packed int4 payload is ", bytes.size(), " bytes, expected ",
                 packed_int4_bytes(count, row_len));
  const std::size_t row_bytes = (row_len + 1) / 2;
  std::vector<std::int8_t> out(count);
  for (std::size_t r = 0; r < count / row_len; ++r)
    for (std::size_t i = 0; i < row_len; ++i) {
      std::uint8_t nib = bytes[r * row_bytes + i / 2];
      nib = i % 2 == 0 ? (nib & 0x0F) : (nib >> 4);
      out[r * row_len + i] = static_cast<std::int8_t>(nib >= 8 ? static_cast<int>(nib) - 16 : nib);
    }
  return out;
}

}  // namespace crackseg
