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

// Cycle-approximate model of a fully pipelined streaming accelerator for a
// quantized U-Net: one hardware stage per layer, stages connected by
// bounded FIFOs, skip connections either buffered on chip or spilled to
// external memory through one write and one read port per skip.
//
// Streams carry pixels in raster order. One stream element ("token") is a
// whole pixel: all channels of that pixel, one byte each. FIFO depths and
// line-buffer capacities are counted in tokens.
//
// Timing model, per cycle:
//   * a stage accepts at most one token per input port, into its line
//     buffer, as long as the buffer has room;
//   * it fires output j once every input token that output depends on has
//     arrived, its previous firing is at least cycles_per_pixel cycles old
//     and every output FIFO has room;
//   * FIFO pushes become visible to the consumer on the next cycle and
//     pops free space on the next cycle, so the outcome does not depend on
//     the order in which stages are stepped within a cycle.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/error.hpp"
#include "crackseg/quantizer.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg::dataflow {

enum class SkipPlacement : std::uint8_t { on_chip = 0, off_chip = 1 };

inline std::string_view to_string(SkipPlacement p) {
  return p == SkipPlacement::on_chip ? "on_chip" : "off_chip";
}

inline SkipPlacement parse_skip_placement(std::string_view s) {
  if (s == "on_chip" || s == "on-chip" || s == "onchip") return SkipPlacement::on_chip;
  if (s == "off_chip" || s == "off-chip" || s == "offchip") return SkipPlacement::off_chip;
  detail::fail(Errc::config, "unknown skip placement '", s, "'");
}

/// External memory port model: fixed latency plus a token-bucket bandwidth
/// limit, one independent bucket per port.
struct OffchipConfig {
  double read_bw = 16.0;   // bytes per cycle per read port
  double write_bw = 16.0;  // bytes per cycle per write port
  int latency_cycles = 100;
  int bridge_depth = 256;  // tokens; reads in flight are bounded by it
};

struct DataflowConfig {
  SkipPlacement skip = SkipPlacement::on_chip;
  double clock_mhz = 300.0;
  // Folding per layer name. Unlisted layers are rate-matched: a layer at
  // resolution level l sees one pixel every 4^l input cycles, so its
  // folding defaults to 4^l.
  std::map<std::string, int> folding;
  int folding_slack = 2;  // default folding = max(1, 4^l / folding_slack)
  int stream_depth = 4;  // tokens, for every ordinary edge
  // Depth overrides by edge name (see Plan::edges[i].name).
  std::map<std::string, int> stream_depths;
  double skip_safety = 2.0;  // on-chip skip FIFO = ceil(safety * minimum depth)
  bool allow_unsafe_depths = false;  // skip the deadlock check (diagnostics)
  OffchipConfig offchip;
  int frame_h = 0;  // 0 = model input size
  int frame_w = 0;
  // Buffers up to this size map to registers/LUT RAM and cost no BRAM.
  std::uint64_t lutram_threshold_bits = 2048;

  void validate() const {
    if (!(clock_mhz > 0.0)) detail::fail(Errc::config, "clock_mhz must be > 0");
    if (stream_depth < 1) detail::fail(Errc::config, "stream depth must be >= 1");
    for (const auto& [k, v] : stream_depths)
      if (v < 1) detail::fail(Errc::config, "stream depth for '", k, "' must be >= 1");
    for (const auto& [k, v] : folding)
      if (v < 1) detail::fail(Errc::config, "folding for '", k, "' must be >= 1");
    if (!(skip_safety >= 1.0)) detail::fail(Errc::config, "skip_safety must be >= 1");
    if (!(offchip.read_bw > 0.0) || !(offchip.write_bw > 0.0))
      detail::fail(Errc::config, "off-chip bandwidths must be > 0");
    if (offchip.latency_cycles < 1) detail::fail(Errc::config, "off-chip latency must be >= 1");
    if (offchip.bridge_depth < 1) detail::fail(Errc::config, "bridge depth must be >= 1");
  }
};

enum class StageKind : std::uint8_t {
  source,
  conv3x3,
  conv1x1,
  tconv2x2,
  maxpool2x2,
  upsample_nearest2x,
  concat,
  head,
  dram_writer,
  dram_reader,
};

inline std::string_view to_string(StageKind k) {
  switch (k) {
    case StageKind::source: return "source";
    case StageKind::conv3x3: return "conv3x3";
    case StageKind::conv1x1: return "conv1x1";
    case StageKind::tconv2x2: return "tconv2x2";
    case StageKind::maxpool2x2: return "maxpool2x2";
    case StageKind::upsample_nearest2x: return "upsample_nearest2x";
    case StageKind::concat: return "concat";
    case StageKind::head: return "head";
    case StageKind::dram_writer: return "dram_writer";
    case StageKind::dram_reader: return "dram_reader";
  }
  return "?";
}

struct StagePlan {
  std::string name;
  StageKind kind = StageKind::source;
  int layer = -1;  // quantized layer index, -1 for memory ports
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  int in_channels = 0, out_channels = 0;
  int folding = 1;
  std::uint64_t macs_per_pixel = 0;
  std::uint64_t lanes = 0;  // parallel MAC units
  int cycles_per_pixel = 1;
  int buffer_tokens = 0;  // line buffer / input register capacity per port
  std::uint64_t buffer_bits = 0;
  std::uint64_t weight_bits = 0;
  std::vector<int> in_edges;   // by port
  std::vector<int> out_edges;
  int peer = -1;  // dram_reader: its writer stage

  std::uint64_t out_pixels() const { return static_cast<std::uint64_t>(out_h) * out_w; }
  std::uint64_t in_pixels() const { return static_cast<std::uint64_t>(in_h) * in_w; }
};

struct EdgePlan {
  std::string name;
  int producer = -1;
  int consumer = -1;
  int port = 0;
  int channels = 0;
  int capacity = 1;
  bool skip = false;    // on-chip skip FIFO
  bool bridge = false;  // off-chip bridge buffer
  std::int64_t lag = 0;  // minimum deadlock-free depth (skip FIFOs)

  std::uint64_t bits() const { return static_cast<std::uint64_t>(capacity) * channels * 8; }
};

struct SkipInfo {
  int level = 0;
  int channels = 0;
  int h = 0, w = 0;
  int edge = -1;  // on-chip FIFO, or -1 when off chip
  int writer = -1, reader = -1;
  std::uint64_t tensor_bytes() const { return static_cast<std::uint64_t>(h) * w * channels; }
};

struct Plan {
  QuantizedGraph graph;
  DataflowConfig config;
  int frame_h = 0, frame_w = 0;
  std::vector<StagePlan> stages;
  std::vector<EdgePlan> edges;
  std::vector<SkipInfo> skips;
  std::uint64_t onchip_buffer_bits = 0;
  std::uint64_t bram36k_estimate = 0;
  std::uint64_t dsp_estimate = 0;

  std::uint64_t skip_bytes_per_frame() const {
    std::uint64_t b = 0;
    for (const auto& s : skips) b += s.tensor_bytes();
    return b;
  }
};

namespace detail {

using crackseg::detail::fail;

inline bool windowed(StageKind k) {
  return k == StageKind::conv3x3 || k == StageKind::maxpool2x2 || k == StageKind::tconv2x2 ||
         k == StageKind::upsample_nearest2x;
}

/// Last local input index output (y, x) depends on.
inline std::int64_t local_last(const StagePlan& s, int y, int x) {
  const std::int64_t w = s.in_w;
  switch (s.kind) {
    case StageKind::conv3x3:
      return std::min(y + 1, s.in_h - 1) * w + std::min(x + 1, s.in_w - 1);
    case StageKind::maxpool2x2:
      return (2 * y + 1) * w + 2 * x + 1;
    case StageKind::tconv2x2:
    case StageKind::upsample_nearest2x:
      return (y / 2) * w + x / 2;
    default:
      return static_cast<std::int64_t>(y) * w + x;
  }
}

/// First local input index output (y, x) depends on.
inline std::int64_t local_first(const StagePlan& s, int y, int x) {
  const std::int64_t w = s.in_w;
  switch (s.kind) {
    case StageKind::conv3x3:
      return std::max(y - 1, 0) * w + std::max(x - 1, 0);
    case StageKind::maxpool2x2:
      return (2 * y) * w + 2 * x;
    case StageKind::tconv2x2:
    case StageKind::upsample_nearest2x:
      return (y / 2) * w + x / 2;
    default:
      return static_cast<std::int64_t>(y) * w + x;
  }
}

/// retain[j]: earliest local input index that output j or any later output
/// of the same frame still needs.
inline std::vector<std::int64_t> retain_table(const StagePlan& s) {
  std::vector<std::int64_t> r(s.out_pixels());
  std::int64_t m = static_cast<std::int64_t>(s.in_pixels());
  for (int y = s.out_h - 1; y >= 0; --y)
    for (int x = s.out_w - 1; x >= 0; --x) {
      m = std::min(m, local_first(s, y, x));
      r[static_cast<std::size_t>(y) * s.out_w + x] = m;
    }
  return r;
}

inline int window_span(const StagePlan& s) {
  const auto r = retain_table(s);
  std::int64_t span = 1;
  for (int y = 0; y < s.out_h; ++y)
    for (int x = 0; x < s.out_w; ++x)
      span = std::max(span, local_last(s, y, x) - r[static_cast<std::size_t>(y) * s.out_w + x] + 1);
  return static_cast<int>(span);
}

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

inline std::uint64_t bram_blocks(std::uint64_t bits, std::uint64_t threshold) {
  return bits <= threshold ? 0 : ceil_div(bits, 36864);
}

}  // namespace detail

/// Maps the quantized graph onto stages and FIFOs and sizes every buffer.
inline Plan plan(const QuantizedGraph& qg, const DataflowConfig& cfg) {
  cfg.validate();
  Plan p;
  p.graph = qg;
  p.config = cfg;
  p.frame_h = cfg.frame_h > 0 ? cfg.frame_h : qg.config.input_h;
  p.frame_w = cfg.frame_w > 0 ? cfg.frame_w : qg.config.input_w;
  if (p.frame_h % 16 != 0 || p.frame_w % 16 != 0)
    detail::fail(Errc::config, "frame ", p.frame_h, "x", p.frame_w, " is not divisible by 16");
  if (qg.act_bits != 8) detail::fail(Errc::planning, "streaming stages expect int8 activations");

  std::vector<int> layer_stage(qg.layers.size(), -1);
  auto add_edge = [&](int producer, int consumer, int port, int channels, std::string name) {
    EdgePlan e;
    e.name = std::move(name);
    e.producer = producer;
    e.consumer = consumer;
    e.port = port;
    e.channels = channels;
    e.capacity = cfg.stream_depth;
    p.edges.push_back(std::move(e));
    const int id = static_cast<int>(p.edges.size()) - 1;
    p.stages[static_cast<std::size_t>(producer)].out_edges.push_back(id);
    auto& in = p.stages[static_cast<std::size_t>(consumer)].in_edges;
    if (static_cast<int>(in.size()) <= port) in.resize(static_cast<std::size_t>(port) + 1, -1);
    in[static_cast<std::size_t>(port)] = id;
    return id;
  };

  for (int li = 0; li < qg.size(); ++li) {
    const auto& l = qg.layer(li);
    StagePlan s;
    s.name = l.name;
    s.layer = li;
    s.out_channels = l.out_channels;
    s.out_h = p.frame_h >> l.level;
    s.out_w = p.frame_w >> l.level;
    switch (l.op) {
      case QOp::input: s.kind = StageKind::source; break;
      case QOp::conv3x3: s.kind = StageKind::conv3x3; break;
      case QOp::conv1x1: s.kind = l.head ? StageKind::head : StageKind::conv1x1; break;
      case QOp::tconv2x2: s.kind = StageKind::tconv2x2; break;
      case QOp::maxpool2x2: s.kind = StageKind::maxpool2x2; break;
      case QOp::upsample_nearest2x: s.kind = StageKind::upsample_nearest2x; break;
      case QOp::concat: s.kind = StageKind::concat; break;
    }
    if (s.kind == StageKind::source) {
      s.in_h = s.out_h;
      s.in_w = s.out_w;
      s.in_channels = l.out_channels;
    } else {
      const auto& src = qg.layer(l.inputs.at(0));
      s.in_h = p.frame_h >> src.level;
      s.in_w = p.frame_w >> src.level;
      s.in_channels = l.in_channels;
    }
    if (l.weighted()) {
      s.macs_per_pixel = static_cast<std::uint64_t>(l.in_channels) * l.out_channels *
                         (s.kind == StageKind::conv3x3 ? 9u : 1u);
      const auto it = cfg.folding.find(l.name);
      s.folding = it != cfg.folding.end() ? it->second : std::max(1, (1 << (2 * l.level)) / cfg.folding_slack);
      s.lanes = std::max<std::uint64_t>(1, detail::ceil_div(s.macs_per_pixel, static_cast<std::uint64_t>(s.folding)));
      s.cycles_per_pixel = static_cast<int>(detail::ceil_div(s.macs_per_pixel, s.lanes));
      s.weight_bits = l.weights.size() * static_cast<std::uint64_t>(l.weight_q.bits) + l.bias.size() * 32;
    }
    if (s.kind != StageKind::source) {
      s.buffer_tokens = detail::windowed(s.kind) ? detail::window_span(s) : 1;
      const int ports = s.kind == StageKind::concat ? 2 : 1;
      // concat holds one register per port; port widths differ
      s.buffer_bits = s.kind == StageKind::concat
                          ? static_cast<std::uint64_t>(l.in_channels) * 8
                          : static_cast<std::uint64_t>(s.buffer_tokens) * s.in_channels * 8 * ports;
    }

    // memory ports for an off-chip skip are created ahead of the concat
    int writer = -1, reader = -1;
    if (l.op == QOp::concat && cfg.skip == SkipPlacement::off_chip) {
      const auto& sk = qg.layer(l.inputs.at(1));
      const int ch = sk.out_channels;
      const int h = p.frame_h >> sk.level, w = p.frame_w >> sk.level;
      StagePlan wr;
      wr.name = l.name + ".axi_w";
      wr.kind = StageKind::dram_writer;
      wr.in_h = wr.out_h = h;
      wr.in_w = wr.out_w = w;
      wr.in_channels = wr.out_channels = ch;
      p.stages.push_back(wr);
      writer = static_cast<int>(p.stages.size()) - 1;
      add_edge(layer_stage[static_cast<std::size_t>(l.inputs[1])], writer, 0, ch, sk.name + " -> " + wr.name);
      p.edges.back().bridge = true;
      p.edges.back().capacity = cfg.offchip.bridge_depth;
      StagePlan rd = wr;
      rd.name = l.name + ".axi_r";
      rd.kind = StageKind::dram_reader;
      rd.peer = writer;
      p.stages.push_back(rd);
      reader = static_cast<int>(p.stages.size()) - 1;
    }

    p.stages.push_back(std::move(s));
    const int sid = static_cast<int>(p.stages.size()) - 1;
    layer_stage[static_cast<std::size_t>(li)] = sid;
    for (std::size_t port = 0; port < l.inputs.size(); ++port) {
      const int src_layer = l.inputs[port];
      const auto& src = qg.layer(src_layer);
      if (l.op == QOp::concat && port == 1 && cfg.skip == SkipPlacement::off_chip) {
        add_edge(reader, sid, 1, src.out_channels, p.stages[static_cast<std::size_t>(reader)].name + " -> " + l.name + ":1");
        p.edges.back().bridge = true;
        p.edges.back().capacity = cfg.offchip.bridge_depth;
        SkipInfo si{l.level, src.out_channels, p.frame_h >> l.level, p.frame_w >> l.level, -1, writer, reader};
        p.skips.push_back(si);
        continue;
      }
      std::string name = src.name + " -> " + l.name;
      if (l.inputs.size() > 1) name += ":" + std::to_string(port);
      const int e = add_edge(layer_stage[static_cast<std::size_t>(src_layer)], sid, static_cast<int>(port),
                             src.out_channels, name);
      if (l.op == QOp::concat && port == 1) {
        p.edges[static_cast<std::size_t>(e)].skip = true;
        p.skips.push_back({l.level, src.out_channels, p.frame_h >> l.level, p.frame_w >> l.level, e, -1, -1});
      }
    }
  }

  // Depth overrides for ordinary edges.
  for (auto& e : p.edges) {
    if (e.skip) continue;
    const auto it = cfg.stream_depths.find(e.name);
    if (it != cfg.stream_depths.end()) e.capacity = it->second;
  }

  // Minimum deadlock-free skip FIFO depth from a unit-rate symbolic
  // schedule: dep[s][j] is the last token of the skip producer that stage s
  // needs before it can emit output j.
  for (auto& e : p.edges) {
    if (!e.skip) continue;
    const int producer = e.producer;
    const int concat = e.consumer;
    std::vector<std::vector<std::int64_t>> dep(p.stages.size());
    auto& d0 = dep[static_cast<std::size_t>(producer)];
    d0.resize(p.stages[static_cast<std::size_t>(producer)].out_pixels());
    std::iota(d0.begin(), d0.end(), std::int64_t{0});
    for (int sid = producer + 1; sid < concat; ++sid) {
      const auto& st = p.stages[static_cast<std::size_t>(sid)];
      std::vector<std::int64_t> d;
      for (int ein : st.in_edges) {
        if (ein < 0) continue;
        const auto& src = dep[static_cast<std::size_t>(p.edges[static_cast<std::size_t>(ein)].producer)];
        if (src.empty()) continue;
        if (d.empty()) d.assign(st.out_pixels(), -1);
        for (int y = 0; y < st.out_h; ++y)
          for (int x = 0; x < st.out_w; ++x) {
            auto& v = d[static_cast<std::size_t>(y) * st.out_w + x];
            v = std::max(v, src[static_cast<std::size_t>(detail::local_last(st, y, x))]);
          }
      }
      dep[static_cast<std::size_t>(sid)] = std::move(d);
    }
    const auto& cst = p.stages[static_cast<std::size_t>(concat)];
    const int up_edge = cst.in_edges.at(0);
    const auto& up = dep[static_cast<std::size_t>(p.edges[static_cast<std::size_t>(up_edge)].producer)];
    if (up.empty()) detail::fail(Errc::planning, "skip '", e.name, "' does not reconverge");
    std::int64_t lag = 1;
    for (std::size_t j = 0; j < up.size(); ++j) lag = std::max(lag, up[j] - static_cast<std::int64_t>(j));
    e.lag = lag;
    const auto it = cfg.stream_depths.find(e.name);
    if (it != cfg.stream_depths.end()) {
      if (it->second < lag && !cfg.allow_unsafe_depths)
        detail::fail(Errc::planning, "skip FIFO '", e.name, "' depth ", it->second,
                     " deadlocks; minimum is ", lag);
      e.capacity = it->second;
    } else {
      e.capacity = static_cast<int>(std::ceil(cfg.skip_safety * static_cast<double>(lag)));
    }
  }

  // Resource accounting.
  const auto thr = cfg.lutram_threshold_bits;
  for (const auto& s : p.stages) {
    p.onchip_buffer_bits += s.buffer_bits + s.weight_bits;
    p.bram36k_estimate += detail::bram_blocks(s.buffer_bits, thr) + detail::bram_blocks(s.weight_bits, thr);
    p.dsp_estimate += s.lanes;
  }
  for (const auto& e : p.edges) {
    p.onchip_buffer_bits += e.bits();
    p.bram36k_estimate += detail::bram_blocks(e.bits(), thr);
  }
  return p;
}

/// Deterministic text dump of a plan, one stage or edge per line.
inline std::string describe(const Plan& p) {
  std::ostringstream os;
  os << "# plan c=" << p.graph.config.c << " frame=" << p.frame_h << "x" << p.frame_w
     << " skip=" << to_string(p.config.skip) << " wbits=" << p.graph.weight_bits << "\n";
  for (std::size_t i = 0; i < p.stages.size(); ++i) {
    const auto& s = p.stages[i];
    os << "stage " << i << " " << to_string(s.kind) << " " << s.name << " " << s.in_channels << "->"
       << s.out_channels << " " << s.out_h << "x" << s.out_w << " fold=" << s.folding
       << " lanes=" << s.lanes << " cpp=" << s.cycles_per_pixel << " buf=" << s.buffer_tokens
       << " buf_bits=" << s.buffer_bits << " w_bits=" << s.weight_bits << "\n";
  }
  for (std::size_t i = 0; i < p.edges.size(); ++i) {
    const auto& e = p.edges[i];
    os << "edge " << i << " " << e.name << " ch=" << e.channels << " depth=" << e.capacity;
    if (e.skip) os << " skip lag=" << e.lag;
    if (e.bridge) os << " bridge";
    os << "\n";
  }
  os << "# onchip_bits=" << p.onchip_buffer_bits << " bram36k=" << p.bram36k_estimate
     << " dsp=" << p.dsp_estimate << "\n";
  return os.str();
}

struct ThroughputEstimate {
  std::uint64_t cycles_per_frame = 0;
  double fps = 0.0;
  std::string bottleneck;
};

/// Steady-state estimate: the frame interval is set by the busiest stage,
/// pixels_processed * cycles_per_pixel (memory ports: tokens * cycles per
/// token at the port bandwidth).
inline ThroughputEstimate estimate_throughput(const Plan& p) {
  ThroughputEstimate est;
  for (const auto& s : p.stages) {
    std::uint64_t cycles = s.out_pixels() * static_cast<std::uint64_t>(s.cycles_per_pixel);
    if (s.kind == StageKind::dram_writer || s.kind == StageKind::dram_reader) {
      const double bw = s.kind == StageKind::dram_writer ? p.config.offchip.write_bw : p.config.offchip.read_bw;
      const auto per_token = static_cast<std::uint64_t>(std::max(1.0, std::ceil(s.out_channels / bw)));
      cycles = s.out_pixels() * per_token;
    }
    if (cycles > est.cycles_per_frame) {
      est.cycles_per_frame = cycles;
      est.bottleneck = s.name;
    }
  }
  est.fps = p.config.clock_mhz * 1e6 / static_cast<double>(est.cycles_per_frame);
  return est;
}

struct StageCounters {
  std::string name;
  std::vector<std::uint64_t> consumed;  // per input port
  std::uint64_t produced = 0;
  std::uint64_t stall_output = 0;  // ready to fire but an output FIFO was full
  std::uint64_t stall_input = 0;   // waiting for input tokens
};

struct SimReport {
  int frames = 0;
  std::uint64_t total_cycles = 0;
  std::uint64_t first_frame_latency = 0;
  double cycles_per_frame = 0.0;  // steady-state interval (latency for one frame)
  double fps = 0.0;
  std::uint64_t onchip_buffer_bits = 0;
  std::uint64_t bram36k_estimate = 0;
  std::uint64_t dsp_estimate = 0;
  std::uint64_t input_bytes = 0;
  std::uint64_t output_bytes = 0;
  std::uint64_t skip_write_bytes = 0;
  std::uint64_t skip_read_bytes = 0;
  std::uint64_t offchip_traffic_bytes = 0;
  bool deadlock = false;
  std::vector<std::string> blocked_edges;
  std::vector<StageCounters> stages;
  std::vector<std::uint64_t> fifo_peak;  // per edge, tokens

  std::string diagnostic() const {
    std::string d;
    for (const auto& b : blocked_edges) d += (d.empty() ? "" : "; ") + b;
    return d;
  }
};

struct SimResult {
  std::vector<Tensor<float>> logits;  // one (1, classes, h, w) tensor per frame
  SimReport report;
};

enum class SchedulePolicy : std::uint8_t { forward, reverse, shuffled };

struct SimOptions {
  SchedulePolicy policy = SchedulePolicy::forward;
  std::uint64_t shuffle_seed = 1;
  std::uint64_t max_cycles = 0;  // 0 = automatic bound
};

namespace detail {

/// Bounded FIFO of fixed-width tokens with cycle-registered visibility.
class Fifo {
 public:
  Fifo(int capacity, int width)
      : cap_(capacity), width_(width), buf_(static_cast<std::size_t>(capacity) * width) {}

  bool can_push() const { return start_size_ + pushes_ < cap_; }
  bool can_pop() const { return start_size_ - pops_ > 0; }
  int occupancy() const { return start_size_; }
  int pushes() const { return pushes_; }
  int capacity() const { return cap_; }
  bool full_now() const { return start_size_ >= cap_; }

  std::int8_t* push_slot() {
    const auto slot = static_cast<std::size_t>((head_ + start_size_ - pops_ + pushes_) % cap_);
    ++pushes_;
    return buf_.data() + slot * static_cast<std::size_t>(width_);
  }
  const std::int8_t* front() const {
    return buf_.data() + static_cast<std::size_t>(head_) * static_cast<std::size_t>(width_);
  }
  void pop() {
    head_ = (head_ + 1) % cap_;
    ++pops_;
  }
  bool touched() const { return pushes_ > 0 || pops_ > 0; }
  void commit() {
    start_size_ += pushes_ - pops_;
    pushes_ = pops_ = 0;
    peak_ = std::max(peak_, start_size_);
  }
  int peak() const { return peak_; }

 private:
  int cap_;
  int width_;
  std::vector<std::int8_t> buf_;
  int head_ = 0;
  int start_size_ = 0;
  int pushes_ = 0;
  int pops_ = 0;
  int peak_ = 0;
};

/// Line buffer keyed by global input index; holds [retired, received).
class TokenRing {
 public:
  TokenRing() = default;
  TokenRing(int capacity, int width)
      : cap_(capacity), width_(width), buf_(static_cast<std::size_t>(capacity) * width) {}

  std::int64_t received = 0;
  std::int64_t retired = 0;

  bool has_room() const { return received - retired < cap_; }
  std::int8_t* append() {
    auto* p = slot(received);
    ++received;
    return p;
  }
  const std::int8_t* at(std::int64_t idx) const {
    if (idx < retired || idx >= received)
      fail(Errc::verification, "line buffer access ", idx, " outside window [", retired, ", ", received, ")");
    return buf_.data() + static_cast<std::size_t>(idx % cap_) * static_cast<std::size_t>(width_);
  }
  void retire_to(std::int64_t idx) { retired = std::max(retired, std::min(idx, received)); }

 private:
  std::int8_t* slot(std::int64_t idx) {
    return buf_.data() + static_cast<std::size_t>(idx % cap_) * static_cast<std::size_t>(width_);
  }
  int cap_ = 1;
  int width_ = 1;
  std::vector<std::int8_t> buf_;
};

struct InFlight {
  std::uint64_t arrive = 0;
  std::int64_t index = 0;
};

struct StageState {
  std::vector<TokenRing> ports;
  std::vector<std::int64_t> retain;
  std::int64_t produced = 0;
  std::uint64_t next_fire = 0;
  // memory ports
  double budget = 0.0;
  std::vector<std::int8_t> memory;  // writer: every token written so far
  std::vector<std::uint64_t> visible_at;
  std::int64_t next_read = 0;
  std::deque<InFlight> inflight;
};

class Simulator {
 public:
  Simulator(const Plan& p, const std::vector<QuantizedTensor>& frames, const SimOptions& opt)
      : p_(p), frames_(frames), opt_(opt) {
    for (const auto& e : p.edges) fifos_.emplace_back(e.capacity, e.channels);
    states_.resize(p.stages.size());
    for (std::size_t i = 0; i < p.stages.size(); ++i) {
      const auto& s = p.stages[i];
      for (std::size_t port = 0; port < s.in_edges.size(); ++port) {
        const int width = p.edges[static_cast<std::size_t>(s.in_edges[port])].channels;
        states_[i].ports.emplace_back(std::max(1, s.buffer_tokens), width);
      }
      if (!s.in_edges.empty() && s.kind != StageKind::dram_writer) states_[i].retain = retain_table(s);
    }
    nframes_ = static_cast<std::int64_t>(frames.size());
    report_.frames = static_cast<int>(frames.size());
    const auto& cfg = p.graph.config;
    for (std::size_t f = 0; f < frames.size(); ++f)
      logits_.emplace_back(TensorShape{1, cfg.num_classes, p.frame_h, p.frame_w});
    frame_done_.assign(frames.size(), 0);
    order_.resize(p.stages.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (opt.policy == SchedulePolicy::reverse) std::ranges::reverse(order_);
    for (const auto& s : p.stages) {
      StageCounters c;
      c.name = s.name;
      c.consumed.assign(std::max<std::size_t>(s.in_edges.size(), s.kind == StageKind::dram_reader ? 1 : 0), 0);
      report_.stages.push_back(std::move(c));
    }
  }

  SimResult run() {
    const auto& head = p_.stages.back();
    if (head.kind != StageKind::head) fail(Errc::planning, "plan does not end in a head stage");
    const std::int64_t total_out = static_cast<std::int64_t>(head.out_pixels()) * nframes_;
    const std::uint64_t max_cycles =
        opt_.max_cycles ? opt_.max_cycles
                        : 64 * (static_cast<std::uint64_t>(p_.frame_h) * p_.frame_w * (nframes_ + 1)) *
                                  static_cast<std::uint64_t>(max_cpp()) + 1000000;
    Rng shuffle(opt_.shuffle_seed);
    std::uint64_t cycle = 0;
    while (states_.back().produced < total_out) {
      if (cycle >= max_cycles) {
        deadlock("cycle limit reached");
        break;
      }
      if (opt_.policy == SchedulePolicy::shuffled)
        for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[shuffle.below(i)]);
      active_ = false;
      pending_ = false;
      for (int sid : order_) step(sid, cycle);
      for (auto& f : fifos_) {
        if (f.touched()) active_ = true;
        f.commit();
      }
      if (!active_ && !pending_) {
        deadlock("no stage can make progress");
        break;
      }
      ++cycle;
    }
    report_.total_cycles = cycle;
    finish_report();
    SimResult r;
    r.report = std::move(report_);
    if (!r.report.deadlock) r.logits = std::move(logits_);
    return r;
  }

 private:
  int max_cpp() const {
    int m = 1;
    for (const auto& s : p_.stages) m = std::max(m, s.cycles_per_pixel);
    for (const auto& s : p_.stages)
      if (s.kind == StageKind::dram_reader || s.kind == StageKind::dram_writer)
        m = std::max(m, static_cast<int>(std::ceil(s.out_channels /
                                                   std::min(p_.config.offchip.read_bw, p_.config.offchip.write_bw))) +
                            p_.config.offchip.latency_cycles);
    return m;
  }

  Fifo& in_fifo(const StagePlan& s, std::size_t port) {
    return fifos_[static_cast<std::size_t>(s.in_edges[port])];
  }

  bool outputs_ready(const StagePlan& s) {
    for (int e : s.out_edges)
      if (!fifos_[static_cast<std::size_t>(e)].can_push()) return false;
    return true;
  }

  void emit(const StagePlan& s, const std::vector<std::int8_t>& tok) {
    for (int e : s.out_edges) std::ranges::copy(tok, fifos_[static_cast<std::size_t>(e)].push_slot());
  }

  void step(int sid, std::uint64_t cycle) {
    const auto& s = p_.stages[static_cast<std::size_t>(sid)];
    auto& st = states_[static_cast<std::size_t>(sid)];
    auto& cnt = report_.stages[static_cast<std::size_t>(sid)];
    switch (s.kind) {
      case StageKind::source: return step_source(s, st, cnt, cycle);
      case StageKind::dram_writer: return step_writer(s, st, cnt, cycle);
      case StageKind::dram_reader: return step_reader(s, st, cnt, cycle);
      default: return step_compute(s, st, cnt, cycle);
    }
  }

  void step_source(const StagePlan& s, StageState& st, StageCounters& cnt, std::uint64_t cycle) {
    const std::int64_t px = static_cast<std::int64_t>(s.out_pixels());
    if (st.produced >= px * nframes_) return;
    if (cycle < st.next_fire) {
      pending_ = true;
      return;
    }
    if (!outputs_ready(s)) {
      ++cnt.stall_output;
      return;
    }
    const auto f = static_cast<std::size_t>(st.produced / px);
    const auto local = st.produced % px;
    const int y = static_cast<int>(local / s.out_w), x = static_cast<int>(local % s.out_w);
    tok_.resize(static_cast<std::size_t>(s.out_channels));
    for (int c = 0; c < s.out_channels; ++c) tok_[static_cast<std::size_t>(c)] = frames_[f].values(0, c, y, x);
    emit(s, tok_);
    report_.input_bytes += static_cast<std::uint64_t>(s.out_channels);
    ++st.produced;
    ++cnt.produced;
    st.next_fire = cycle + static_cast<std::uint64_t>(s.cycles_per_pixel);
    active_ = true;
  }

  void step_writer(const StagePlan& s, StageState& st, StageCounters& cnt, std::uint64_t cycle) {
    const double bytes = s.in_channels;
    const double bw = p_.config.offchip.write_bw;
    auto& in = in_fifo(s, 0);
    if (!in.can_pop()) {
      st.budget = std::min(st.budget + bw, bytes + bw);
      return;
    }
    st.budget = std::min(st.budget + bw, bytes + bw);
    if (st.budget < bytes) {
      pending_ = true;
      return;
    }
    st.budget -= bytes;
    const auto* src = in.front();
    st.memory.insert(st.memory.end(), src, src + s.in_channels);
    in.pop();
    st.visible_at.push_back(cycle + static_cast<std::uint64_t>(p_.config.offchip.latency_cycles));
    ++cnt.consumed[0];
    ++cnt.produced;
    report_.skip_write_bytes += static_cast<std::uint64_t>(s.in_channels);
    active_ = true;
  }

  void step_reader(const StagePlan& s, StageState& st, StageCounters& cnt, std::uint64_t cycle) {
    const auto& writer = states_[static_cast<std::size_t>(s.peer)];
    auto& out = fifos_[static_cast<std::size_t>(s.out_edges.at(0))];
    const auto width = static_cast<std::size_t>(s.out_channels);
    // deliver returning reads in order
    while (!st.inflight.empty() && st.inflight.front().arrive <= cycle) {
      const auto idx = static_cast<std::size_t>(st.inflight.front().index);
      std::copy_n(writer.memory.data() + idx * width, width, out.push_slot());
      st.inflight.pop_front();
      ++cnt.produced;
      active_ = true;
    }
    if (!st.inflight.empty()) pending_ = true;
    const double bytes = s.out_channels;
    const double bw = p_.config.offchip.read_bw;
    st.budget = std::min(st.budget + bw, bytes + bw);
    const auto written = static_cast<std::int64_t>(writer.visible_at.size());
    if (st.next_read >= written) return;
    if (writer.visible_at[static_cast<std::size_t>(st.next_read)] > cycle || st.budget < bytes) {
      pending_ = true;
      return;
    }
    if (out.occupancy() + out.pushes() + static_cast<int>(st.inflight.size()) >= out.capacity()) {
      ++cnt.stall_output;
      return;
    }
    st.budget -= bytes;
    st.inflight.push_back({cycle + static_cast<std::uint64_t>(p_.config.offchip.latency_cycles), st.next_read});
    ++st.next_read;
    ++cnt.consumed[0];
    report_.skip_read_bytes += static_cast<std::uint64_t>(s.out_channels);
    active_ = true;
  }

  void step_compute(const StagePlan& s, StageState& st, StageCounters& cnt, std::uint64_t cycle) {
    const std::int64_t in_px = static_cast<std::int64_t>(s.in_pixels());
    const std::int64_t out_px = static_cast<std::int64_t>(s.out_pixels());
    // accept
    for (std::size_t port = 0; port < st.ports.size(); ++port) {
      auto& ring = st.ports[port];
      auto& f = in_fifo(s, port);
      if (ring.received >= in_px * nframes_ || !f.can_pop() || !ring.has_room()) continue;
      std::copy_n(f.front(), static_cast<std::size_t>(p_.edges[static_cast<std::size_t>(s.in_edges[port])].channels),
                  ring.append());
      f.pop();
      ++cnt.consumed[port];
      active_ = true;
    }
    if (st.produced >= out_px * nframes_) return;
    const std::int64_t f = st.produced / out_px;
    const std::int64_t local = st.produced % out_px;
    const int y = static_cast<int>(local / s.out_w), x = static_cast<int>(local % s.out_w);
    const std::int64_t need = f * in_px + local_last(s, y, x);
    for (const auto& ring : st.ports)
      if (ring.received <= need) {
        ++cnt.stall_input;
        return;
      }
    if (cycle < st.next_fire) {
      pending_ = true;
      return;
    }
    if (s.kind != StageKind::head && !outputs_ready(s)) {
      ++cnt.stall_output;
      return;
    }
    try {
      compute(s, st, f, y, x);
    } catch (const Error& e) {
      throw Error(e.code(), "stage '" + s.name + "': " + e.message());
    }
    ++st.produced;
    ++cnt.produced;
    st.next_fire = cycle + static_cast<std::uint64_t>(s.cycles_per_pixel);
    active_ = true;
    if (s.kind == StageKind::head && st.produced % out_px == 0)
      frame_done_[static_cast<std::size_t>(f)] = cycle;
    // retire what no later output needs
    std::int64_t keep;
    if (st.produced >= out_px * nframes_) {
      keep = in_px * nframes_;
    } else {
      const std::int64_t nf = st.produced / out_px;
      const std::int64_t nl = st.produced % out_px;
      keep = nf * in_px + st.retain[static_cast<std::size_t>(nl)];
    }
    for (auto& ring : st.ports) ring.retire_to(keep);
  }

  void compute(const StagePlan& s, StageState& st, std::int64_t f, int y, int x) {
    const auto& l = p_.graph.layer(s.layer);
    const std::int64_t base = f * static_cast<std::int64_t>(s.in_pixels());
    auto tok_at = [&](std::size_t port, int yy, int xx) {
      return st.ports[port].at(base + static_cast<std::int64_t>(yy) * s.in_w + xx);
    };
    tok_.assign(static_cast<std::size_t>(s.out_channels), 0);
    switch (s.kind) {
      case StageKind::conv3x3: {
        const std::int64_t zp = p_.graph.layer(l.inputs[0]).out_q.zero_point[0];
        const std::int8_t* win[9] = {};
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int yy = y + ky - 1, xx = x + kx - 1;
            if (yy >= 0 && yy < s.in_h && xx >= 0 && xx < s.in_w) win[ky * 3 + kx] = tok_at(0, yy, xx);
          }
        for (int oc = 0; oc < s.out_channels; ++oc) {
          std::int64_t acc = l.bias[static_cast<std::size_t>(oc)];
          for (int k = 0; k < 9; ++k) {
            if (!win[k]) continue;
            for (int ic = 0; ic < s.in_channels; ++ic)
              acc += static_cast<std::int64_t>(l.weights(oc, ic, k / 3, k % 3)) * (win[k][ic] - zp);
          }
          tok_[static_cast<std::size_t>(oc)] = qkernel::finish(l, acc, oc);
        }
        break;
      }
      case StageKind::conv1x1:
      case StageKind::head: {
        const std::int64_t zp = p_.graph.layer(l.inputs[0]).out_q.zero_point[0];
        const auto* in = tok_at(0, y, x);
        for (int oc = 0; oc < s.out_channels; ++oc) {
          std::int64_t acc = l.bias[static_cast<std::size_t>(oc)];
          for (int ic = 0; ic < s.in_channels; ++ic)
            acc += static_cast<std::int64_t>(l.weights(oc, ic, 0, 0)) * (in[ic] - zp);
          if (s.kind == StageKind::head)
            logits_[static_cast<std::size_t>(f)](0, oc, y, x) = qkernel::logit(l, acc, oc);
          else
            tok_[static_cast<std::size_t>(oc)] = qkernel::finish(l, acc, oc);
        }
        if (s.kind == StageKind::head)
          report_.output_bytes += static_cast<std::uint64_t>(s.out_channels) * sizeof(float);
        break;
      }
      case StageKind::tconv2x2: {
        const std::int64_t zp = p_.graph.layer(l.inputs[0]).out_q.zero_point[0];
        const auto* in = tok_at(0, y / 2, x / 2);
        for (int oc = 0; oc < s.out_channels; ++oc) {
          std::int64_t acc = l.bias[static_cast<std::size_t>(oc)];
          for (int ic = 0; ic < s.in_channels; ++ic)
            acc += static_cast<std::int64_t>(l.weights(ic, oc, y % 2, x % 2)) * (in[ic] - zp);
          tok_[static_cast<std::size_t>(oc)] = qkernel::finish(l, acc, oc);
        }
        break;
      }
      case StageKind::maxpool2x2: {
        const auto* a = tok_at(0, 2 * y, 2 * x);
        const auto* b = tok_at(0, 2 * y, 2 * x + 1);
        const auto* c = tok_at(0, 2 * y + 1, 2 * x);
        const auto* d = tok_at(0, 2 * y + 1, 2 * x + 1);
        for (int ch = 0; ch < s.out_channels; ++ch)
          tok_[static_cast<std::size_t>(ch)] = std::max(std::max(a[ch], b[ch]), std::max(c[ch], d[ch]));
        break;
      }
      case StageKind::upsample_nearest2x: {
        const auto* in = tok_at(0, y / 2, x / 2);
        std::copy_n(in, s.out_channels, tok_.begin());
        break;
      }
      case StageKind::concat: {
        const auto& qa = p_.graph.layer(l.inputs[0]).out_q;
        const auto& qb = p_.graph.layer(l.inputs[1]).out_q;
        const int ca = p_.edges[static_cast<std::size_t>(s.in_edges[0])].channels;
        const auto* a = tok_at(0, y, x);
        const auto* b = tok_at(1, y, x);
        for (int ch = 0; ch < s.out_channels; ++ch)
          tok_[static_cast<std::size_t>(ch)] =
              ch < ca ? qkernel::concat_requant(l, qa, a[ch], 0) : qkernel::concat_requant(l, qb, b[ch - ca], 1);
        break;
      }
      default:
        fail(Errc::planning, "stage '", s.name, "' cannot compute");
    }
    if (s.kind != StageKind::head) emit(s, tok_);
  }

  void deadlock(const std::string& why) {
    report_.deadlock = true;
    for (std::size_t i = 0; i < p_.edges.size(); ++i) {
      const auto& f = fifos_[i];
      const auto& e = p_.edges[i];
      if (f.full_now())
        report_.blocked_edges.push_back("full: " + e.name + " (" + std::to_string(f.occupancy()) + "/" +
                                        std::to_string(f.capacity()) + ")");
    }
    for (std::size_t i = 0; i < p_.edges.size(); ++i) {
      const auto& f = fifos_[i];
      const auto& e = p_.edges[i];
      const auto& consumer = p_.stages[static_cast<std::size_t>(e.consumer)];
      const auto& cs = states_[static_cast<std::size_t>(e.consumer)];
      const bool consumer_done = cs.produced >= static_cast<std::int64_t>(consumer.out_pixels()) * nframes_;
      if (f.occupancy() == 0 && !consumer_done) report_.blocked_edges.push_back("empty: " + e.name);
    }
    report_.blocked_edges.insert(report_.blocked_edges.begin(), why);
  }

  void finish_report() {
    auto& r = report_;
    r.onchip_buffer_bits = p_.onchip_buffer_bits;
    r.bram36k_estimate = p_.bram36k_estimate;
    r.dsp_estimate = p_.dsp_estimate;
    r.offchip_traffic_bytes = r.input_bytes + r.output_bytes + r.skip_read_bytes + r.skip_write_bytes;
    for (const auto& f : fifos_) r.fifo_peak.push_back(static_cast<std::uint64_t>(f.peak()));
    if (r.deadlock || frame_done_.empty()) return;
    r.first_frame_latency = frame_done_.front() + 1;
    if (frame_done_.size() >= 2)
      r.cycles_per_frame = static_cast<double>(frame_done_.back() - frame_done_.front()) /
                           static_cast<double>(frame_done_.size() - 1);
    else
      r.cycles_per_frame = static_cast<double>(r.first_frame_latency);
    r.fps = p_.config.clock_mhz * 1e6 / r.cycles_per_frame;
  }

  const Plan& p_;
  const std::vector<QuantizedTensor>& frames_;
  SimOptions opt_;
  std::vector<Fifo> fifos_;
  std::vector<StageState> states_;
  std::vector<int> order_;
  std::vector<Tensor<float>> logits_;
  std::vector<std::uint64_t> frame_done_;
  std::int64_t nframes_ = 0;
  SimReport report_;
  std::vector<std::int8_t> tok_;
  bool active_ = false;
  bool pending_ = false;
};

}  // namespace detail

/// Streams the frames through the planned pipeline. Each frame must be a
/// single image encoded with the graph's input parameters. On deadlock the
/// report carries the diagnostic and no logits are returned.
inline SimResult simulate(const Plan& p, const std::vector<QuantizedTensor>& frames, const SimOptions& opt = {}) {
  if (frames.empty()) detail::fail(Errc::invalid_parameter, "no frames to simulate");
  for (const auto& f : frames) {
    if (f.params != p.graph.input_params())
      detail::fail(Errc::dtype, "frame encoding does not match the graph's input edge parameters");
    const auto& s = f.values.shape();
    if (s.n != 1 || s.c != p.graph.config.in_channels || s.h != p.frame_h || s.w != p.frame_w)
      detail::fail(Errc::shape, "frame shape ", s, " does not match plan frame 1x",
                   p.graph.config.in_channels, "x", p.frame_h, "x", p.frame_w);
  }
  detail::Simulator sim(p, frames, opt);
  return sim.run();
}

inline SimResult simulate(const Plan& p, const QuantizedTensor& frame, const SimOptions& opt = {}) {
  return simulate(p, std::vector<QuantizedTensor>{frame}, opt);
}

inline std::string report_csv_header() {
  return "frames,total_cycles,first_frame_latency,cycles_per_frame,fps,onchip_buffer_bits,"
         "bram36k_estimate,dsp_estimate,input_bytes,output_bytes,skip_write_bytes,skip_read_bytes,"
         "offchip_traffic_bytes,deadlock";
}

inline std::string report_csv_row(const SimReport& r) {
  std::ostringstream os;
  os << r.frames << "," << r.total_cycles << "," << r.first_frame_latency << "," << std::fixed
     << std::setprecision(2) << r.cycles_per_frame << "," << r.fps << "," << r.onchip_buffer_bits << ","
     << r.bram36k_estimate << "," << r.dsp_estimate << "," << r.input_bytes << "," << r.output_bytes << ","
     << r.skip_write_bytes << "," << r.skip_read_bytes << "," << r.offchip_traffic_bytes << ","
     << (r.deadlock ? 1 : 0);
  return os.str();
}

inline std::string report_text(const SimReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "frames                 " << r.frames << "\n"
     << "total cycles           " << r.total_cycles << "\n"
     << "first-frame latency    " << r.first_frame_latency << " cycles\n"
     << "cycles per frame       " << r.cycles_per_frame << "\n"
     << "throughput             " << r.fps << " fps\n"
     << "on-chip buffer bits    " << r.onchip_buffer_bits << "\n"
     << "BRAM36K estimate       " << r.bram36k_estimate << "\n"
     << "DSP estimate           " << r.dsp_estimate << "\n"
     << "off-chip traffic       " << r.offchip_traffic_bytes << " bytes (input " << r.input_bytes
     << ", output " << r.output_bytes << ", skip writes " << r.skip_write_bytes << ", skip reads "
     << r.skip_read_bytes << ")\n"
     << "deadlock               " << (r.deadlock ? "yes" : "no") << "\n";
  if (r.deadlock) os << "blocked                " << r.diagnostic() << "\n";
  return os.str();
}

}  // namespace crackseg::dataflow
