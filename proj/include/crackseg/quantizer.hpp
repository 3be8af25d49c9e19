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

// Post-training quantization of a U-Net graph.
//
// Pipeline: fold_bn -> calibrate -> quantize_model -> integer_forward.
//
// Scheme: weights per-output-channel symmetric (int8 or int4, zero point 0),
// activations per-tensor asymmetric int8 from calibration min/max, biases
// int32 at scale s_in * s_w. A conv layer computes
//
//   acc = bias + sum((q_in - zp_in) * q_w)             (int32, saturating)
//   q_out = clamp(zp_out + requantize(acc, M), lo, 127)
//
// with M = s_in * s_w / s_out as a fixed-point (multiplier, shift) pair and
// lo = zp_out when a ReLU is fused, -128 otherwise. The head conv skips the
// requantization and dequantizes its accumulator straight to float logits.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "crackseg/error.hpp"
#include "crackseg/model.hpp"
#include "crackseg/quant.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// Folds every batch norm into the convolution in front of it:
///   w' = w * gamma / sqrt(var + eps),  b' = beta + (b - mean) * gamma / sqrt(var + eps).
inline ModelGraph fold_bn(const ModelGraph& g) {
  if (g.bn_folded) return g;
  const auto consumers = g.consumers();
  ModelGraph out;
  out.config = g.config;
  out.bn_folded = true;
  std::vector<int> remap(g.nodes.size(), -1);
  for (int id = 0; id < g.size(); ++id) {
    const auto& n = g.node(id);
    if (n.kind == LayerKind::bn) {
      const int src = n.inputs.at(0);
      const auto& prev = g.node(src);
      if (prev.kind != LayerKind::conv3x3 && prev.kind != LayerKind::conv1x1)
        detail::fail(Errc::structure, "batch norm '", n.name, "' does not follow a convolution");
      if (consumers[static_cast<std::size_t>(src)].size() != 1)
        detail::fail(Errc::structure, "convolution '", prev.name, "' feeding '", n.name,
                     "' has other consumers");
      auto& conv = out.node(remap[static_cast<std::size_t>(src)]);
      const auto& bn = n.bn;
      if (bn.channels() != static_cast<std::size_t>(conv.out_channels))
        detail::fail(Errc::shape, "batch norm '", n.name, "' has ", bn.channels(), " channels");
      const auto per_oc = conv.weights.size() / static_cast<std::size_t>(conv.out_channels);
      std::vector<float> bias(static_cast<std::size_t>(conv.out_channels), 0.0f);
      for (int oc = 0; oc < conv.out_channels; ++oc) {
        const auto k = static_cast<std::size_t>(oc);
        if (bn.var[k] < 0.0f || bn.var[k] + bn.eps <= 0.0f)
          detail::fail(Errc::invalid_parameter, "batch norm '", n.name, "' has invalid variance");
        const double f = static_cast<double>(bn.gamma[k]) /
                         std::sqrt(static_cast<double>(bn.var[k]) + static_cast<double>(bn.eps));
        auto w = conv.weights.data().subspan(k * per_oc, per_oc);
        for (float& v : w) v = static_cast<float>(static_cast<double>(v) * f);
        const double b0 = conv.bias.empty() ? 0.0 : static_cast<double>(conv.bias[k]);
        bias[k] = static_cast<float>(static_cast<double>(bn.beta[k]) + (b0 - bn.mean[k]) * f);
      }
      conv.bias = std::move(bias);
      remap[static_cast<std::size_t>(id)] = remap[static_cast<std::size_t>(src)];
      continue;
    }
    LayerSpec copy = n;
    for (int& in : copy.inputs) in = remap[static_cast<std::size_t>(in)];
    out.nodes.push_back(std::move(copy));
    remap[static_cast<std::size_t>(id)] = out.size() - 1;
  }
  return out;
}

struct ActRange {
  float min = std::numeric_limits<float>::infinity();
  float max = -std::numeric_limits<float>::infinity();

  bool seen() const { return min <= max; }
  void merge(const ActRange& o) {
    min = std::min(min, o.min);
    max = std::max(max, o.max);
  }
  friend bool operator==(const ActRange&, const ActRange&) = default;
};

/// Per-node output ranges, indexed by node id of the calibrated graph.
struct CalibrationStats {
  std::vector<ActRange> ranges;
  std::size_t count = 0;

  /// Associative and commutative.
  void merge(const CalibrationStats& o) {
    if (ranges.empty()) ranges.resize(o.ranges.size());
    if (ranges.size() != o.ranges.size())
      detail::fail(Errc::calibration, "cannot merge stats of different graphs");
    for (std::size_t i = 0; i < ranges.size(); ++i) ranges[i].merge(o.ranges[i]);
    count += o.count;
  }

  friend bool operator==(const CalibrationStats&, const CalibrationStats&) = default;
};

struct CalibrationOptions {
  // 100 = plain min/max. Lower values clip each image's range to the
  // [100 - p, p] percentiles before merging.
  double percentile = 100.0;
};

namespace detail {

inline ActRange range_of(std::span<const float> v, double percentile) {
  ActRange r;
  if (v.empty()) return r;
  if (percentile >= 100.0) {
    const auto [lo, hi] = std::ranges::minmax_element(v);
    r.min = *lo;
    r.max = *hi;
    return r;
  }
  std::vector<float> tmp(v.begin(), v.end());
  const auto last = static_cast<double>(tmp.size() - 1);
  const auto lo_i = static_cast<std::size_t>(std::floor(last * (100.0 - percentile) / 100.0));
  const auto hi_i = static_cast<std::size_t>(std::ceil(last * percentile / 100.0));
  std::ranges::nth_element(tmp, tmp.begin() + static_cast<std::ptrdiff_t>(lo_i));
  r.min = tmp[lo_i];
  std::ranges::nth_element(tmp, tmp.begin() + static_cast<std::ptrdiff_t>(hi_i));
  r.max = tmp[hi_i];
  return r;
}

}  // namespace detail

/// Runs the float graph on every calibration image and records each node's
/// output range.
inline CalibrationStats calibrate(const ModelGraph& g, const std::vector<Tensor<float>>& images,
                                  const CalibrationOptions& opt = {}) {
  if (images.empty()) detail::fail(Errc::calibration, "calibration set is empty");
  if (!(opt.percentile > 50.0 && opt.percentile <= 100.0))
    detail::fail(Errc::invalid_parameter, "percentile must be in (50, 100], got ", opt.percentile);
  CalibrationStats stats;
  stats.ranges.resize(g.nodes.size());
  for (const auto& img : images) {
    const auto act = forward_all(g, img);
    for (std::size_t i = 0; i < act.size(); ++i)
      stats.ranges[i].merge(detail::range_of(act[i].data(), opt.percentile));
    stats.count += static_cast<std::size_t>(img.shape().n);
  }
  return stats;
}

enum class QOp : std::uint8_t {
  input,
  conv3x3,
  conv1x1,
  tconv2x2,
  maxpool2x2,
  upsample_nearest2x,
  concat,
};

inline std::string_view to_string(QOp op) {
  switch (op) {
    case QOp::input: return "input";
    case QOp::conv3x3: return "conv3x3";
    case QOp::conv1x1: return "conv1x1";
    case QOp::tconv2x2: return "tconv2x2";
    case QOp::maxpool2x2: return "maxpool2x2";
    case QOp::upsample_nearest2x: return "upsample_nearest2x";
    case QOp::concat: return "concat";
  }
  return "?";
}

struct QLayer {
  QOp op = QOp::input;
  std::string name;
  std::vector<int> inputs;
  int in_channels = 0;
  int out_channels = 0;
  int level = 0;
  bool relu = false;
  bool head = false;  // emits float logits instead of an int8 edge

  // Weighted layers. Layout matches the float layer; values hold int4 or
  // int8 integers depending on weight_q.bits.
  Tensor<std::int8_t> weights;
  QuantParams weight_q;
  std::vector<std::int32_t> bias;

  // conv/tconv: one per output channel; concat: one per input port.
  std::vector<Requant> requant;
  QuantParams out_q;                // output edge encoding (unused for the head)
  std::vector<double> logit_scale;  // head only: s_in * s_w per output channel

  bool weighted() const {
    return op == QOp::conv3x3 || op == QOp::conv1x1 || op == QOp::tconv2x2;
  }
  std::int32_t out_lo() const {
    return relu ? std::max(out_q.zero_point[0], out_q.qmin()) : out_q.qmin();
  }
  std::int32_t out_hi() const { return out_q.qmax(); }
};

struct LayerSaturation {
  std::string name;
  std::size_t weights = 0;
  std::size_t weight_saturated = 0;
  std::size_t bias_saturated = 0;
};

struct QuantizedGraph {
  ModelConfig config;
  int weight_bits = 8;
  int act_bits = 8;
  std::vector<QLayer> layers;
  std::vector<LayerSaturation> saturation;

  int size() const { return static_cast<int>(layers.size()); }
  const QLayer& layer(int i) const { return layers.at(static_cast<std::size_t>(i)); }
  int output_layer() const { return size() - 1; }
  const QuantParams& input_params() const { return layers.front().out_q; }

  std::size_t saturated_weights() const {
    std::size_t s = 0;
    for (const auto& l : saturation) s += l.weight_saturated;
    return s;
  }

  /// (source layer, concat layer) pairs, shallowest level first.
  std::vector<std::pair<int, int>> skip_edges() const {
    std::vector<std::pair<int, int>> e;
    for (int i = 0; i < size(); ++i)
      if (layers[static_cast<std::size_t>(i)].op == QOp::concat)
        e.emplace_back(layers[static_cast<std::size_t>(i)].inputs.at(1), i);
    std::ranges::sort(e, [&](auto a, auto b) { return layer(a.second).level < layer(b.second).level; });
    return e;
  }
};

struct QuantizeOptions {
  int weight_bits = 8;
  int act_bits = 8;
};

/// Builds the integer graph from a BN-folded float graph and calibration
/// stats collected on that same graph.
inline QuantizedGraph quantize_model(const ModelGraph& folded, const CalibrationStats& stats,
                                     const QuantizeOptions& opt = {}) {
  if (!folded.bn_folded) detail::fail(Errc::structure, "quantize_model needs a BN-folded graph");
  if (opt.weight_bits != 8 && opt.weight_bits != 4)
    detail::fail(Errc::invalid_parameter, "weight bits must be 4 or 8, got ", opt.weight_bits);
  if (opt.act_bits != 8)
    detail::fail(Errc::invalid_parameter, "activation bits must be 8, got ", opt.act_bits);
  if (stats.ranges.size() != folded.nodes.size())
    detail::fail(Errc::missing_edge_stats, "stats cover ", stats.ranges.size(), " nodes, graph has ",
                 folded.size());

  auto edge_params = [&](int node) {
    const auto& r = stats.ranges[static_cast<std::size_t>(node)];
    if (!r.seen())
      detail::fail(Errc::missing_edge_stats, "no calibration stats for edge '", folded.node(node).name, "'");
    return activation_params(r.min, r.max, opt.act_bits);
  };

  const auto consumers = folded.consumers();
  QuantizedGraph qg;
  qg.config = folded.config;
  qg.weight_bits = opt.weight_bits;
  qg.act_bits = opt.act_bits;
  std::vector<int> remap(folded.nodes.size(), -1);
  const int out_node = folded.output_node();

  for (int id = 0; id < folded.size(); ++id) {
    const auto& n = folded.node(id);
    if (n.kind == LayerKind::relu) {
      const int src = remap[static_cast<std::size_t>(n.inputs.at(0))];
      auto& l = qg.layers.at(static_cast<std::size_t>(src));
      if (!l.weighted() || !l.relu || l.head)
        detail::fail(Errc::structure, "relu '", n.name, "' does not follow a convolution");
      remap[static_cast<std::size_t>(id)] = src;
      continue;
    }
    if (n.kind == LayerKind::output) {
      remap[static_cast<std::size_t>(id)] = remap[static_cast<std::size_t>(n.inputs.at(0))];
      continue;
    }
    if (n.kind == LayerKind::bn) detail::fail(Errc::structure, "unfolded batch norm '", n.name, "'");

    QLayer l;
    l.name = n.name;
    l.in_channels = n.in_channels;
    l.out_channels = n.out_channels;
    l.level = n.level;
    for (int in : n.inputs) l.inputs.push_back(remap[static_cast<std::size_t>(in)]);
    // The edge leaving this layer is the relu's when one follows.
    int edge_node = id;
    const auto& cons = consumers[static_cast<std::size_t>(id)];
    if (cons.size() == 1 && folded.node(cons[0]).kind == LayerKind::relu) {
      l.relu = true;
      edge_node = cons[0];
    }
    l.head = cons.size() == 1 && cons[0] == out_node;

    switch (n.kind) {
      case LayerKind::input:
        l.op = QOp::input;
        l.out_q = edge_params(id);
        break;
      case LayerKind::maxpool2x2:
      case LayerKind::upsample_nearest2x:
        l.op = n.kind == LayerKind::maxpool2x2 ? QOp::maxpool2x2 : QOp::upsample_nearest2x;
        l.out_q = qg.layer(l.inputs[0]).out_q;
        break;
      case LayerKind::concat: {
        l.op = QOp::concat;
        l.out_q = edge_params(id);
        for (int src : l.inputs)
          l.requant.push_back(make_requant(qg.layer(src).out_q.scale[0] / l.out_q.scale[0]));
        break;
      }
      case LayerKind::conv3x3:
      case LayerKind::conv1x1:
      case LayerKind::tconv2x2: {
        l.op = n.kind == LayerKind::conv3x3   ? QOp::conv3x3
               : n.kind == LayerKind::conv1x1 ? QOp::conv1x1
                                              : QOp::tconv2x2;
        const int axis = n.kind == LayerKind::tconv2x2 ? 1 : 0;
        const double s_in = qg.layer(l.inputs[0]).out_q.scale[0];
        l.weight_q = weight_params(n.weights, opt.weight_bits, axis);
        auto qw = quantize_tensor(n.weights, l.weight_q, axis);
        l.weights = std::move(qw.tensor.values);
        LayerSaturation sat{n.name, n.weights.size(), qw.saturated, 0};
        l.bias.assign(static_cast<std::size_t>(n.out_channels), 0);
        for (int oc = 0; oc < n.out_channels; ++oc) {
          const auto k = static_cast<std::size_t>(oc);
          const double acc_scale = s_in * l.weight_q.scale[k];
          if (!n.bias.empty()) {
            const double b = round_half_even(static_cast<double>(n.bias[k]) / acc_scale);
            if (b < std::numeric_limits<std::int32_t>::min() || b > std::numeric_limits<std::int32_t>::max())
              ++sat.bias_saturated;
            l.bias[k] = saturate_i32(static_cast<std::int64_t>(std::clamp(b, -0x1p62, 0x1p62)));
          }
          if (l.head) {
            l.logit_scale.push_back(acc_scale);
          }
        }
        if (!l.head) {
          l.out_q = edge_params(edge_node);
          for (int oc = 0; oc < n.out_channels; ++oc)
            l.requant.push_back(make_requant(s_in * l.weight_q.scale[static_cast<std::size_t>(oc)] /
                                             l.out_q.scale[0]));
        }
        qg.saturation.push_back(std::move(sat));
        break;
      }
      default:
        detail::fail(Errc::structure, "cannot quantize node '", n.name, "'");
    }
    qg.layers.push_back(std::move(l));
    remap[static_cast<std::size_t>(id)] = qg.size() - 1;
  }
  if (!qg.layers.back().head) detail::fail(Errc::structure, "graph does not end in a head convolution");
  return qg;
}

/// Encodes a float image with the graph's input edge parameters.
inline QuantizedTensor quantize_input(const QuantizedGraph& qg, const Tensor<float>& x) {
  return quantize_tensor(x, qg.input_params()).tensor;
}

namespace qkernel {

// Shared fixed-point helpers; the per-layer loops live with each executor.

inline std::int8_t finish(const QLayer& l, std::int64_t acc, int oc) {
  const std::int64_t v = static_cast<std::int64_t>(l.out_q.zero_point[0]) +
                         requantize(acc, l.requant[static_cast<std::size_t>(oc)]);
  return static_cast<std::int8_t>(clamp_q(v, l.out_lo(), l.out_hi()));
}

inline float logit(const QLayer& l, std::int64_t acc, int oc) {
  return static_cast<float>(static_cast<double>(saturate_i32(acc)) *
                            l.logit_scale[static_cast<std::size_t>(oc)]);
}

inline std::int8_t concat_requant(const QLayer& l, const QuantParams& in_q, std::int8_t q, int port) {
  const std::int64_t v =
      static_cast<std::int64_t>(l.out_q.zero_point[0]) +
      requantize(static_cast<std::int64_t>(q) - in_q.zero_point[0], l.requant[static_cast<std::size_t>(port)]);
  return static_cast<std::int8_t>(clamp_q(v, l.out_q.qmin(), l.out_q.qmax()));
}

}  // namespace qkernel

namespace detail {

struct IntAct {
  Tensor<std::int8_t> q;
  Tensor<float> logits;  // head only
};

inline void integer_layer(const QuantizedGraph& qg, const QLayer& l, std::vector<IntAct>& act,
                          IntAct& out) {
  const auto& in = act[static_cast<std::size_t>(l.inputs.at(0))].q;
  const auto& s = in.shape();
  const std::int32_t zp = qg.layer(l.inputs[0]).out_q.zero_point[0];
  switch (l.op) {
    case QOp::conv3x3:
    case QOp::conv1x1: {
      const int k = l.op == QOp::conv3x3 ? 3 : 1;
      const int r = k / 2;
      TensorShape os{s.n, l.out_channels, s.h, s.w};
      if (l.head) out.logits = Tensor<float>(os);
      else out.q = Tensor<std::int8_t>(os);
      std::vector<std::int64_t> acc(static_cast<std::size_t>(s.h) * s.w);
      for (int n = 0; n < s.n; ++n) {
        for (int oc = 0; oc < l.out_channels; ++oc) {
          std::fill(acc.begin(), acc.end(), l.bias[static_cast<std::size_t>(oc)]);
          for (int ic = 0; ic < s.c; ++ic) {
            const auto src = in.plane(n, ic);
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const std::int64_t wv = l.weights(oc, ic, ky, kx);
                if (wv == 0) continue;
                const int dy = ky - r, dx = kx - r;
                for (int y = std::max(0, -dy); y < std::min(s.h, s.h - dy); ++y) {
                  const std::int8_t* row = src.data() + static_cast<std::size_t>(y + dy) * s.w;
                  std::int64_t* a = acc.data() + static_cast<std::size_t>(y) * s.w;
                  for (int x = std::max(0, -dx); x < std::min(s.w, s.w - dx); ++x)
                    a[x] += wv * (static_cast<std::int64_t>(row[x + dx]) - zp);
                }
              }
          }
          if (l.head) {
            auto dst = out.logits.plane(n, oc);
            for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = qkernel::logit(l, acc[i], oc);
          } else {
            auto dst = out.q.plane(n, oc);
            for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = qkernel::finish(l, acc[i], oc);
          }
        }
      }
      break;
    }
    case QOp::tconv2x2: {
      out.q = Tensor<std::int8_t>({s.n, l.out_channels, s.h * 2, s.w * 2});
      for (int n = 0; n < s.n; ++n)
        for (int oc = 0; oc < l.out_channels; ++oc)
          for (int y = 0; y < s.h * 2; ++y)
            for (int x = 0; x < s.w * 2; ++x) {
              std::int64_t acc = l.bias[static_cast<std::size_t>(oc)];
              for (int ic = 0; ic < s.c; ++ic)
                acc += static_cast<std::int64_t>(l.weights(ic, oc, y % 2, x % 2)) *
                       (static_cast<std::int64_t>(in(n, ic, y / 2, x / 2)) - zp);
              out.q(n, oc, y, x) = qkernel::finish(l, acc, oc);
            }
      break;
    }
    case QOp::maxpool2x2: out.q = maxpool2x2(in); break;
    case QOp::upsample_nearest2x: out.q = upsample_nearest2x(in); break;
    case QOp::concat: {
      const auto& b = act[static_cast<std::size_t>(l.inputs.at(1))].q;
      Tensor<std::int8_t> cat = concat(in, b);
      const auto& qa = qg.layer(l.inputs[0]).out_q;
      const auto& qb = qg.layer(l.inputs[1]).out_q;
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < cat.shape().c; ++c) {
          const bool first = c < s.c;
          for (auto& v : cat.plane(n, c))
            v = qkernel::concat_requant(l, first ? qa : qb, v, first ? 0 : 1);
        }
      out.q = std::move(cat);
      break;
    }
    case QOp::input: break;
  }
}

}  // namespace detail

/// Integer inference. `x` must carry the graph's input edge parameters.
/// Everything up to the head's logit dequantization is integer arithmetic.
inline Tensor<float> integer_forward(const QuantizedGraph& qg, const QuantizedTensor& x) {
  if (x.params != qg.input_params())
    detail::fail(Errc::dtype, "input encoding does not match the graph's input edge parameters");
  const auto& s = x.values.shape();
  if (s.c != qg.config.in_channels)
    detail::fail(Errc::shape, "input has ", s.c, " channels, model expects ", qg.config.in_channels);
  if (s.h % 16 != 0 || s.w % 16 != 0)
    detail::fail(Errc::shape, "input ", s.h, "x", s.w, " is not divisible by 16");
  std::vector<detail::IntAct> act(qg.layers.size());
  act[0].q = x.values;
  for (int i = 1; i < qg.size(); ++i) {
    const auto& l = qg.layer(i);
    try {
      detail::integer_layer(qg, l, act, act[static_cast<std::size_t>(i)]);
    } catch (const Error& e) {
      throw Error(e.code(), "layer '" + l.name + "': " + e.message());
    }
  }
  return std::move(act.back().logits);
}

/// Convenience: fold, calibrate and quantize in one step.
inline QuantizedGraph quantize_float_model(const ModelGraph& g, const std::vector<Tensor<float>>& calib,
                                           const QuantizeOptions& opt = {},
                                           const CalibrationOptions& copt = {}) {
  const auto folded = fold_bn(g);
  return quantize_model(folded, calibrate(folded, calib, copt), opt);
}

}  // namespace crackseg
