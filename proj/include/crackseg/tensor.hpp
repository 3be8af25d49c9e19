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

#include <cstddef>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "crackseg/error.hpp"

namespace crackseg {

/// Four-dimensional NCHW extent. Weight tensors reuse it as
/// (out, in, kh, kw), or (in, out, kh, kw) for transposed convolutions.
struct TensorShape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }

  bool valid() const {
    if (n < 1 || c < 1 || h < 1 || w < 1) return false;
    // n*c*h*w must stay addressable
    const auto lim = std::numeric_limits<std::ptrdiff_t>::max();
    std::size_t acc = 1;
    for (int d : {n, c, h, w}) {
      if (acc > static_cast<std::size_t>(lim) / static_cast<std::size_t>(d))
        return false;
      acc *= static_cast<std::size_t>(d);
    }
    return true;
  }

  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const TensorShape& s) {
  return os << s.n << "x" << s.c << "x" << s.h << "x" << s.w;
}

enum class DType : std::uint8_t { f32 = 0, i8 = 1, i4 = 2, i32 = 3, f64 = 4 };

template <typename T>
struct dtype_of;
template <>
struct dtype_of<float> {
  static constexpr DType value = DType::f32;
};
template <>
struct dtype_of<double> {
  static constexpr DType value = DType::f64;
};
template <>
struct dtype_of<std::int8_t> {
  static constexpr DType value = DType::i8;
};
template <>
struct dtype_of<std::int32_t> {
  static constexpr DType value = DType::i32;
};

/// Dense row-major NCHW array.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(TensorShape shape, T fill = T{}) : shape_(shape) {
    if (!shape.valid()) detail::fail(Errc::shape, "invalid tensor shape ", shape);
    data_.assign(shape.numel(), fill);
  }

  Tensor(TensorShape shape, std::vector<T> data)
      : shape_(shape), data_(std::move(data)) {
    if (!shape.valid()) detail::fail(Errc::shape, "invalid tensor shape ", shape);
    if (data_.size() != shape.numel())
      detail::fail(Errc::shape, "data length ", data_.size(),
                   " does not match shape ", shape);
  }

  const TensorShape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& vec() const { return data_; }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w +
           w;
  }

  T& operator()(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  const T& operator()(int n, int c, int h, int w) const {
    return data_[index(n, c, h, w)];
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Contiguous h*w plane of one (n, c) pair.
  std::span<const T> plane(int n, int c) const {
    return {data_.data() + index(n, c, 0, 0),
            static_cast<std::size_t>(shape_.h) * shape_.w};
  }
  std::span<T> plane(int n, int c) {
    return {data_.data() + index(n, c, 0, 0),
            static_cast<std::size_t>(shape_.h) * shape_.w};
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  TensorShape shape_{};
  std::vector<T> data_;
};

enum class Granularity : std::uint8_t { per_tensor = 0, per_channel = 1 };

/// Affine integer encoding real = scale * (q - zero_point). Per-channel
/// parameters hold one (scale, zero_point) pair per output channel.
struct QuantParams {
  std::vector<double> scale{1.0};
  std::vector<std::int32_t> zero_point{0};
  int bits = 8;
  Granularity granularity = Granularity::per_tensor;

  static QuantParams per_tensor(double s, std::int32_t zp, int bits = 8) {
    return QuantParams{{s}, {zp}, bits, Granularity::per_tensor};
  }

  std::int32_t qmin() const { return -(1 << (bits - 1)); }
  std::int32_t qmax() const { return (1 << (bits - 1)) - 1; }
  std::size_t channels() const { return scale.size(); }

  void validate() const {
    if (bits != 4 && bits != 8)
      detail::fail(Errc::invalid_parameter, "unsupported bit width ", bits);
    if (scale.empty() || scale.size() != zero_point.size())
      detail::fail(Errc::invalid_parameter, "scale/zero_point length mismatch");
    if (granularity == Granularity::per_tensor && scale.size() != 1)
      detail::fail(Errc::invalid_parameter,
                   "per-tensor params must hold exactly one scale");
    for (std::size_t i = 0; i < scale.size(); ++i) {
      if (!(scale[i] > 0.0))
        detail::fail(Errc::invalid_parameter, "scale must be positive");
      if (zero_point[i] < qmin() || zero_point[i] > qmax())
        detail::fail(Errc::invalid_parameter, "zero point ", zero_point[i],
                     " outside int", bits, " range");
    }
  }

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// Integer tensor together with its encoding. Int4 values are held
/// unpacked in int8 lanes; packing happens only at the storage boundary.
struct QuantizedTensor {
  Tensor<std::int8_t> values;
  QuantParams params;
};

}  // namespace crackseg
