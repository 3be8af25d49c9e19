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

// Channel-scaled U-Net family as an explicit layer DAG.
//
// Topology for scale c (widths c, 2c, 4c, 8c, bottleneck 16c):
//
//   input -> [conv3x3 bn relu conv3x3 bn relu] x4 (maxpool between stages)
//         -> bottleneck [conv3x3 bn relu conv3x3 bn relu]
//         -> [up, concat(up, skip), conv3x3 bn relu conv3x3 bn relu] x4
//         -> conv1x1 (with bias) -> output
//
// "up" is a biased 2x2 transposed convolution halving the channel count, or
// for the nearest variant a nearest 2x upsample followed by a biased 1x1
// convolution that performs the same halving. Concatenation always places
// the upsampled decoder tensor first and the encoder skip second.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/error.hpp"
#include "crackseg/layers.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

enum class UpsampleMode : std::uint8_t { tconv = 0, nearest = 1 };

inline std::string_view to_string(UpsampleMode m) {
  return m == UpsampleMode::tconv ? "tconv" : "nearest";
}

inline UpsampleMode parse_upsample_mode(std::string_view s) {
  if (s == "tconv") return UpsampleMode::tconv;
  if (s == "nearest") return UpsampleMode::nearest;
  detail::fail(Errc::config, "unknown upsample mode '", s, "'");
}

struct ModelConfig {
  int c = 2;
  UpsampleMode upsample = UpsampleMode::tconv;
  int in_channels = 3;
  int num_classes = 2;
  int input_h = 256;
  int input_w = 256;

  static constexpr std::array<int, 5> kScales{2, 4, 8, 16, 32};

  void validate() const {
    if (std::ranges::find(kScales, c) == kScales.end())
      detail::fail(Errc::config, "channel scale c=", c,
                   " not in {2,4,8,16,32}");
    if (in_channels != 3)
      detail::fail(Errc::config, "in_channels must be 3, got ", in_channels);
    if (num_classes != 2)
      detail::fail(Errc::config, "num_classes must be 2, got ", num_classes);
    if (input_h < 16 || input_w < 16 || input_h % 16 != 0 || input_w % 16 != 0)
      detail::fail(Errc::config, "input size ", input_h, "x", input_w,
                   " must be a positive multiple of 16");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class LayerKind : std::uint8_t {
  input,
  conv3x3,
  conv1x1,
  bn,
  relu,
  maxpool2x2,
  upsample_nearest2x,
  tconv2x2,
  concat,
  output,
};

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::input: return "input";
    case LayerKind::conv3x3: return "conv3x3";
    case LayerKind::conv1x1: return "conv1x1";
    case LayerKind::bn: return "bn";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::upsample_nearest2x: return "upsample_nearest2x";
    case LayerKind::tconv2x2: return "tconv2x2";
    case LayerKind::concat: return "concat";
    case LayerKind::output: return "output";
  }
  return "?";
}

/// One node of the graph. `level` is the resolution level of the node's
/// output: spatial size is input / 2^level.
struct LayerSpec {
  LayerKind kind = LayerKind::input;
  std::string name;
  std::vector<int> inputs;
  int in_channels = 0;
  int out_channels = 0;
  int level = 0;

  // conv3x3: (out, in, 3, 3); conv1x1: (out, in, 1, 1); tconv2x2: (in, out, 2, 2)
  Tensor<float> weights;
  std::vector<float> bias;  // empty when the layer has no bias
  BatchNormParams bn;

  bool has_weights() const {
    return kind == LayerKind::conv3x3 || kind == LayerKind::conv1x1 ||
           kind == LayerKind::tconv2x2;
  }

  /// Learnable parameters. BN contributes gamma and beta; its running
  /// statistics are buffers, not parameters.
  std::size_t param_count() const {
    if (kind == LayerKind::bn) return 2 * static_cast<std::size_t>(out_channels);
    if (!has_weights()) return 0;
    return weights.size() + bias.size();
  }
};

struct ModelGraph {
  ModelConfig config;
  std::vector<LayerSpec> nodes;
  bool bn_folded = false;

  int size() const { return static_cast<int>(nodes.size()); }
  const LayerSpec& node(int id) const { return nodes.at(static_cast<std::size_t>(id)); }
  LayerSpec& node(int id) { return nodes.at(static_cast<std::size_t>(id)); }

  int output_node() const {
    for (int i = size() - 1; i >= 0; --i)
      if (nodes[i].kind == LayerKind::output) return i;
    detail::fail(Errc::structure, "graph has no output node");
  }

  /// (encoder source node, decoder concat node) pairs, shallowest level first.
  std::vector<std::pair<int, int>> skip_edges() const {
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < size(); ++i)
      if (nodes[i].kind == LayerKind::concat) edges.emplace_back(nodes[i].inputs.at(1), i);
    std::ranges::sort(edges, [&](auto a, auto b) { return nodes[a.second].level < nodes[b.second].level; });
    return edges;
  }

  /// Consumers of each node, in node order.
  std::vector<std::vector<int>> consumers() const {
    std::vector<std::vector<int>> out(nodes.size());
    for (int i = 0; i < size(); ++i)
      for (int in : nodes[i].inputs) out[static_cast<std::size_t>(in)].push_back(i);
    return out;
  }

  std::size_t param_count() const {
    std::size_t total = 0;
    for (const auto& n : nodes) total += n.param_count();
    return total;
  }
};

namespace detail {

class GraphBuilder {
 public:
  explicit GraphBuilder(ModelGraph& g) : g_(g) {}

  int add(LayerKind kind, std::string name, std::vector<int> inputs, int in_ch,
          int out_ch, int level) {
    LayerSpec n;
    n.kind = kind;
    n.name = std::move(name);
    n.inputs = std::move(inputs);
    n.in_channels = in_ch;
    n.out_channels = out_ch;
    n.level = level;
    switch (kind) {
      case LayerKind::conv3x3:
        n.weights = Tensor<float>({out_ch, in_ch, 3, 3});
        break;
      case LayerKind::conv1x1:
        n.weights = Tensor<float>({out_ch, in_ch, 1, 1});
        n.bias.assign(static_cast<std::size_t>(out_ch), 0.0f);
        break;
      case LayerKind::tconv2x2:
        n.weights = Tensor<float>({in_ch, out_ch, 2, 2});
        n.bias.assign(static_cast<std::size_t>(out_ch), 0.0f);
        break;
      case LayerKind::bn:
        n.bn = BatchNormParams::identity(out_ch);
        break;
      default:
        break;
    }
    g_.nodes.push_back(std::move(n));
    return g_.size() - 1;
  }

  /// conv3x3 -> bn -> relu; returns the relu node.
  int conv_block(const std::string& prefix, int idx, int input, int in_ch,
                 int out_ch, int level) {
    const auto s = std::to_string(idx);
    int c = add(LayerKind::conv3x3, prefix + ".conv" + s, {input}, in_ch, out_ch, level);
    int b = add(LayerKind::bn, prefix + ".bn" + s, {c}, out_ch, out_ch, level);
    return add(LayerKind::relu, prefix + ".relu" + s, {b}, out_ch, out_ch, level);
  }

 private:
  ModelGraph& g_;
};

}  // namespace detail

/// Builds the U-Net topology for `cfg` with placeholder parameters: zero
/// weights and biases, identity batch norms. Use init_params to fill them.
inline ModelGraph build_model(const ModelConfig& cfg) {
  cfg.validate();
  ModelGraph g;
  g.config = cfg;
  detail::GraphBuilder b(g);
  const int c = cfg.c;

  int cur = b.add(LayerKind::input, "input", {}, cfg.in_channels, cfg.in_channels, 0);
  int ch = cfg.in_channels;
  std::array<int, 4> skips{};
  for (int lvl = 0; lvl < 4; ++lvl) {
    const int width = c << lvl;
    const std::string p = "enc" + std::to_string(lvl);
    cur = b.conv_block(p, 0, cur, ch, width, lvl);
    cur = b.conv_block(p, 1, cur, width, width, lvl);
    skips[static_cast<std::size_t>(lvl)] = cur;
    cur = b.add(LayerKind::maxpool2x2, p + ".pool", {cur}, width, width, lvl + 1);
    ch = width;
  }
  const int mid = 16 * c;
  cur = b.conv_block("mid", 0, cur, ch, mid, 4);
  cur = b.conv_block("mid", 1, cur, mid, mid, 4);
  ch = mid;
  for (int lvl = 3; lvl >= 0; --lvl) {
    const int width = c << lvl;
    const std::string p = "dec" + std::to_string(lvl);
    int up;
    if (cfg.upsample == UpsampleMode::tconv) {
      up = b.add(LayerKind::tconv2x2, p + ".up", {cur}, ch, width, lvl);
    } else {
      int u = b.add(LayerKind::upsample_nearest2x, p + ".up", {cur}, ch, ch, lvl);
      up = b.add(LayerKind::conv1x1, p + ".up_proj", {u}, ch, width, lvl);
    }
    cur = b.add(LayerKind::concat, p + ".concat", {up, skips[static_cast<std::size_t>(lvl)]},
                2 * width, 2 * width, lvl);
    cur = b.conv_block(p, 0, cur, 2 * width, width, lvl);
    cur = b.conv_block(p, 1, cur, width, width, lvl);
    ch = width;
  }
  cur = b.add(LayerKind::conv1x1, "head.conv", {cur}, ch, cfg.num_classes, 0);
  b.add(LayerKind::output, "output", {cur}, cfg.num_classes, cfg.num_classes, 0);
  return g;
}

struct ModelStats {
  std::size_t param_count = 0;
  std::uint64_t mac_count = 0;
  double gops = 0.0;  // 2 * mac_count / 1e9
  // Not part of gops: bn (2/elem), relu (1/elem), maxpool (3 compares per
  // output), bias adds (1/elem).
  std::uint64_t elementwise_ops = 0;
};

/// Multiply-accumulates per output pixel of a weighted node.
inline std::uint64_t macs_per_pixel(const LayerSpec& n) {
  const auto in = static_cast<std::uint64_t>(n.in_channels);
  const auto out = static_cast<std::uint64_t>(n.out_channels);
  switch (n.kind) {
    case LayerKind::conv3x3: return 9 * in * out;
    case LayerKind::conv1x1: return in * out;
    case LayerKind::tconv2x2: return in * out;  // one tap per output pixel
    default: return 0;
  }
}

inline ModelStats count_stats(const ModelGraph& g, int input_h, int input_w) {
  if (input_h < 16 || input_w < 16 || input_h % 16 != 0 || input_w % 16 != 0)
    detail::fail(Errc::shape, "input ", input_h, "x", input_w,
                 " is not divisible by 16");
  ModelStats st;
  st.param_count = g.param_count();
  for (const auto& n : g.nodes) {
    const std::uint64_t pixels = static_cast<std::uint64_t>(input_h >> n.level) *
                                 static_cast<std::uint64_t>(input_w >> n.level);
    const std::uint64_t elems = pixels * static_cast<std::uint64_t>(n.out_channels);
    st.mac_count += macs_per_pixel(n) * pixels;
    switch (n.kind) {
      case LayerKind::bn: st.elementwise_ops += 2 * elems; break;
      case LayerKind::relu: st.elementwise_ops += elems; break;
      case LayerKind::maxpool2x2: st.elementwise_ops += 3 * elems; break;
      default:
        if (n.has_weights() && !n.bias.empty()) st.elementwise_ops += elems;
        break;
    }
  }
  st.gops = 2.0 * static_cast<double>(st.mac_count) / 1e9;
  return st;
}

/// Deterministic parameter fill. Generator: Rng(seed) (std::mt19937_64 with
/// Box-Muller normals), nodes visited in graph order. Conv weights are
/// N(0, sqrt(2 / fan_in)) with fan_in = in_channels * kernel area
/// (in_channels for the transposed conv, whose outputs see one tap each);
/// biases U(-0.1, 0.1); BN gamma U(0.5, 1.5), beta U(-0.1, 0.1),
/// mean U(-0.1, 0.1), var U(0.5, 1.5).
inline ModelGraph init_params(ModelGraph g, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& n : g.nodes) {
    if (n.has_weights()) {
      int fan_in = n.in_channels;
      if (n.kind == LayerKind::conv3x3) fan_in *= 9;
      const double stddev = std::sqrt(2.0 / fan_in);
      for (float& v : n.weights.data()) v = static_cast<float>(rng.normal(0.0, stddev));
      for (float& v : n.bias) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    } else if (n.kind == LayerKind::bn) {
      for (float& v : n.bn.gamma) v = static_cast<float>(rng.uniform(0.5, 1.5));
      for (float& v : n.bn.beta) v = static_cast<float>(rng.uniform(-0.1, 0.1));
      for (float& v : n.bn.mean) v = static_cast<float>(rng.uniform(-0.1, 0.1));
      for (float& v : n.bn.var) v = static_cast<float>(rng.uniform(0.5, 1.5));
    }
  }
  return g;
}

/// Natural node order (graph construction order is topological).
inline std::vector<int> default_order(const ModelGraph& g) {
  std::vector<int> order(g.nodes.size());
  std::iota(order.begin(), order.end(), 0);
  return order;
}

namespace detail {

inline void check_order(const ModelGraph& g, const std::vector<int>& order) {
  if (order.size() != g.nodes.size())
    fail(Errc::structure, "execution order has ", order.size(), " entries, graph has ", g.size());
  std::vector<char> done(g.nodes.size(), 0);
  for (int id : order) {
    if (id < 0 || id >= g.size() || done[static_cast<std::size_t>(id)])
      fail(Errc::structure, "execution order is not a permutation");
    for (int in : g.node(id).inputs)
      if (!done[static_cast<std::size_t>(in)])
        fail(Errc::structure, "node '", g.node(id).name, "' scheduled before its input '",
             g.node(in).name, "'");
    done[static_cast<std::size_t>(id)] = 1;
  }
}

inline Tensor<float> eval_node(const LayerSpec& n, const std::vector<const Tensor<float>*>& in) {
  switch (n.kind) {
    case LayerKind::conv3x3: return conv3x3<float>(*in[0], n.weights, n.bias);
    case LayerKind::conv1x1: return conv1x1<float>(*in[0], n.weights, n.bias);
    case LayerKind::bn: return batch_norm(*in[0], n.bn);
    case LayerKind::relu: return relu(*in[0]);
    case LayerKind::maxpool2x2: return maxpool2x2(*in[0]);
    case LayerKind::upsample_nearest2x: return upsample_nearest2x(*in[0]);
    case LayerKind::tconv2x2: return tconv2x2<float>(*in[0], n.weights, n.bias);
    case LayerKind::concat: return concat(*in[0], *in[1]);
    case LayerKind::output: return *in[0];
    case LayerKind::input: break;
  }
  fail(Errc::structure, "cannot evaluate node '", n.name, "'");
}

}  // namespace detail

/// Runs the float graph and returns every node's activation, indexed by
/// node id. `order` must be a topological order of the node ids.
inline std::vector<Tensor<float>> forward_all(const ModelGraph& g, const Tensor<float>& x,
                                              const std::vector<int>& order) {
  const auto& s = x.shape();
  if (s.c != g.config.in_channels)
    detail::fail(Errc::shape, "input has ", s.c, " channels, model expects ", g.config.in_channels);
  if (s.h % 16 != 0 || s.w % 16 != 0)
    detail::fail(Errc::shape, "input ", s.h, "x", s.w, " is not divisible by 16");
  detail::check_order(g, order);
  std::vector<Tensor<float>> act(g.nodes.size());
  for (int id : order) {
    const auto& n = g.node(id);
    if (n.kind == LayerKind::input) {
      act[static_cast<std::size_t>(id)] = x;
      continue;
    }
    std::vector<const Tensor<float>*> ins;
    for (int i : n.inputs) ins.push_back(&act[static_cast<std::size_t>(i)]);
    try {
      act[static_cast<std::size_t>(id)] = detail::eval_node(n, ins);
    } catch (const Error& e) {
      throw Error(e.code(), "node '" + n.name + "': " + e.message());
    }
  }
  return act;
}

inline std::vector<Tensor<float>> forward_all(const ModelGraph& g, const Tensor<float>& x) {
  return forward_all(g, x, default_order(g));
}

/// Float reference forward pass; returns (n, num_classes, h, w) logits.
inline Tensor<float> forward(const ModelGraph& g, const Tensor<float>& x) {
  auto act = forward_all(g, x);
  return std::move(act[static_cast<std::size_t>(g.output_node())]);
}

inline Tensor<float> forward(const ModelGraph& g, const Tensor<float>& x,
                             const std::vector<int>& order) {
  auto act = forward_all(g, x, order);
  return std::move(act[static_cast<std::size_t>(g.output_node())]);
}

/// Deterministic text dump, one node per line:
///   <id> <kind> <name> <in>-><out> <h>x<w> params=<n> [inputs=a,b]
inline std::string describe(const ModelGraph& g) {
  std::ostringstream os;
  const auto& cfg = g.config;
  os << "# unet c=" << cfg.c << " upsample=" << to_string(cfg.upsample)
     << " input=" << cfg.in_channels << "x" << cfg.input_h << "x" << cfg.input_w
     << " classes=" << cfg.num_classes << (g.bn_folded ? " folded" : "") << "\n";
  for (int i = 0; i < g.size(); ++i) {
    const auto& n = g.node(i);
    os << i << " " << to_string(n.kind) << " " << n.name << " " << n.in_channels << "->"
       << n.out_channels << " " << (cfg.input_h >> n.level) << "x" << (cfg.input_w >> n.level)
       << " params=" << n.param_count();
    if (!n.inputs.empty()) {
      os << " inputs=";
      for (std::size_t k = 0; k < n.inputs.size(); ++k) os << (k ? "," : "") << n.inputs[k];
    }
    os << "\n";
  }
  const auto st = count_stats(g, cfg.input_h, cfg.input_w);
  os << "# params=" << st.param_count << " macs=" << st.mac_count << " gops=" << std::fixed
     << std::setprecision(2) << st.gops << "\n";
  return os.str();
}

}  // namespace crackseg
