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

// Two-class segmentation scores and platform energy efficiency.

#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "crackseg/error.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// Pixel counts with class 1 (crack) as the positive class. The background
/// class sees the same table with the roles of fp and fn swapped.
struct ConfusionMatrix {
  std::uint64_t tp = 0;  // pred 1, gt 1
  std::uint64_t fp = 0;  // pred 1, gt 0
  std::uint64_t fn = 0;  // pred 0, gt 1
  std::uint64_t tn = 0;  // pred 0, gt 0

  std::uint64_t total() const { return tp + fp + fn + tn; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b) { return a += b; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size())
    detail::fail(Errc::shape, "prediction has ", pred.size(), " pixels, ground truth ", gt.size());
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::uint8_t p = pred[i], g = gt[i];
    if (p > 1 || g > 1)
      detail::fail(Errc::invalid_parameter, "mask value ", int{p > 1 ? p : g}, " at pixel ", i,
                   " is not 0 or 1");
    if (p && g) ++cm.tp;
    else if (p) ++cm.fp;
    else if (g) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

inline ConfusionMatrix confusion(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& gt) {
  if (pred.shape() != gt.shape())
    detail::fail(Errc::shape, "prediction ", pred.shape(), " vs ground truth ", gt.shape());
  return confusion(std::span<const std::uint8_t>(pred.data()), std::span<const std::uint8_t>(gt.data()));
}

inline constexpr double kDefaultBackgroundWeight = 0.068;
inline constexpr double kDefaultCrackWeight = 0.932;

struct SegScores {
  double iou_bg = 0.0;
  double iou_crack = 0.0;
  double miou = 0.0;
  double wiou = 0.0;
  double w_bg = kDefaultBackgroundWeight;
  double w_crack = kDefaultCrackWeight;
};

/// IoU of a class with an empty union (absent and never predicted) is 1.
inline double iou(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  const std::uint64_t u = tp + fp + fn;
  return u == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(u);
}

inline SegScores scores(const ConfusionMatrix& cm, double w_bg = kDefaultBackgroundWeight,
                        double w_crack = kDefaultCrackWeight) {
  if (!(w_bg >= 0.0) || !(w_crack >= 0.0) || std::fabs(w_bg + w_crack - 1.0) > 1e-9)
    detail::fail(Errc::invalid_parameter, "class weights ", w_bg, " + ", w_crack, " must be >= 0 and sum to 1");
  SegScores s;
  s.w_bg = w_bg;
  s.w_crack = w_crack;
  s.iou_crack = iou(cm.tp, cm.fp, cm.fn);
  s.iou_bg = iou(cm.tn, cm.fn, cm.fp);
  s.miou = 0.5 * s.iou_bg + 0.5 * s.iou_crack;
  s.wiou = w_bg * s.iou_bg + w_crack * s.iou_crack;
  return s;
}

enum class Averaging : std::uint8_t {
  micro,  // sum confusion matrices, then score
  macro,  // score each image, then average
};

/// Dataset-level scores over per-image confusion matrices.
inline SegScores dataset_scores(std::span<const ConfusionMatrix> per_image, Averaging avg = Averaging::micro,
                                double w_bg = kDefaultBackgroundWeight, double w_crack = kDefaultCrackWeight) {
  if (per_image.empty()) detail::fail(Errc::invalid_parameter, "no images to score");
  if (avg == Averaging::micro) {
    ConfusionMatrix sum;
    for (const auto& cm : per_image) sum += cm;
    return scores(sum, w_bg, w_crack);
  }
  SegScores acc = scores(per_image.front(), w_bg, w_crack);
  acc.iou_bg = acc.iou_crack = acc.miou = acc.wiou = 0.0;
  for (const auto& cm : per_image) {
    const auto s = scores(cm, w_bg, w_crack);
    acc.iou_bg += s.iou_bg;
    acc.iou_crack += s.iou_crack;
    acc.miou += s.miou;
    acc.wiou += s.wiou;
  }
  const auto n = static_cast<double>(per_image.size());
  acc.iou_bg /= n;
  acc.iou_crack /= n;
  acc.miou /= n;
  acc.wiou /= n;
  return acc;
}

struct PlatformMeasurement {
  std::string device;
  std::string precision;  // e.g. "fp32/fp32", "int8/int8"
  double fps = 0.0;
  double idle_w = 0.0;
  double runtime_w = 0.0;
};

struct Efficiency {
  double dynamic_eff = 0.0;  // frames/J above idle
  double runtime_eff = 0.0;  // frames/J total
};

inline Efficiency energy_efficiency(const PlatformMeasurement& m) {
  if (!(m.fps > 0.0)) detail::fail(Errc::invalid_parameter, "fps must be > 0, got ", m.fps);
  if (!(m.idle_w >= 0.0)) detail::fail(Errc::invalid_parameter, "idle power must be >= 0, got ", m.idle_w);
  if (!(m.runtime_w > m.idle_w))
    detail::fail(Errc::invalid_parameter, "runtime power ", m.runtime_w, " W must exceed idle power ", m.idle_w,
                 " W");
  return {m.fps / (m.runtime_w - m.idle_w), m.fps / m.runtime_w};
}

inline std::string fixed2(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

inline std::string scores_csv_header() { return "name,iou_bg,iou_crack,miou,wiou"; }

/// IoUs as percentages with two decimals.
inline std::string scores_csv_row(const std::string& name, const SegScores& s) {
  return name + "," + fixed2(100.0 * s.iou_bg) + "," + fixed2(100.0 * s.iou_crack) + "," +
         fixed2(100.0 * s.miou) + "," + fixed2(100.0 * s.wiou);
}

}  // namespace crackseg
