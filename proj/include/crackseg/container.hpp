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

// "CFW1" weight container: a little-endian record store with a trailing
// CRC-32, plus adapters for float and quantized graphs. The byte layout is
// documented in docs/formats.md.

#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crackseg/error.hpp"
#include "crackseg/model.hpp"
#include "crackseg/quant.hpp"
#include "crackseg/quantizer.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

inline std::string_view to_string(DType t) {
  switch (t) {
    case DType::f32: return "f32";
    case DType::i8: return "i8";
    case DType::i4: return "i4";
    case DType::i32: return "i32";
    case DType::f64: return "f64";
  }
  return "?";
}

enum class ContainerKind : std::uint8_t { float_model = 0, quantized_model = 1 };

struct TensorRecord {
  std::string name;
  DType type = DType::f32;
  std::vector<std::uint32_t> shape;
  std::optional<QuantParams> quant;
  std::vector<std::uint8_t> payload;  // little-endian; i4 packed per innermost row

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

struct WeightContainer {
  ContainerKind kind = ContainerKind::float_model;
  ModelConfig config;
  bool bn_folded = false;
  int weight_bits = 8;  // quantized models
  int act_bits = 8;
  std::vector<TensorRecord> records;

  const TensorRecord* find(std::string_view name) const {
    for (const auto& r : records)
      if (r.name == name) return &r;
    return nullptr;
  }
  friend bool operator==(const WeightContainer&, const WeightContainer&) = default;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

class Writer {
 public:
  std::vector<std::uint8_t> buf;

  template <std::unsigned_integral U>
  void u(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::span<const std::uint8_t> b) { buf.insert(buf.end(), b.begin(), b.end()); }
  void str(const std::string& s) {
    if (s.size() > 0xFFFF) fail(Errc::invalid_parameter, "record name too long");
    u(static_cast<std::uint16_t>(s.size()));
    buf.insert(buf.end(), s.begin(), s.end());
  }
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  template <std::unsigned_integral U>
  U u() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(u<std::uint64_t>()); }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() {
    const auto n = u<std::uint16_t>();
    auto s = bytes(n);
    return {s.begin(), s.end()};
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) fail(Errc::truncated, "container truncated at byte ", pos_);
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

inline constexpr std::uint32_t kContainerVersion = 1;

inline std::size_t payload_bytes(DType t, std::size_t count, std::size_t row_len) {
  switch (t) {
    case DType::f32:
    case DType::i32: return count * 4;
    case DType::i8: return count;
    case DType::i4: return row_len == 0 ? 0 : packed_int4_bytes(count, row_len);
    case DType::f64: return count * 8;
  }
  return 0;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const WeightContainer& c) {
  detail::Writer w;
  w.bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("CFW1"), 4));
  w.u(detail::kContainerVersion);
  w.u(static_cast<std::uint8_t>(c.kind));
  w.i32(c.config.c);
  w.u(static_cast<std::uint8_t>(c.config.upsample));
  w.i32(c.config.in_channels);
  w.i32(c.config.num_classes);
  w.i32(c.config.input_h);
  w.i32(c.config.input_w);
  w.u(static_cast<std::uint8_t>(c.bn_folded ? 1 : 0));
  w.u(static_cast<std::uint8_t>(c.weight_bits));
  w.u(static_cast<std::uint8_t>(c.act_bits));
  w.u(static_cast<std::uint32_t>(c.records.size()));
  for (const auto& r : c.records) {
    w.str(r.name);
    w.u(static_cast<std::uint8_t>(r.type));
    w.u(static_cast<std::uint8_t>(r.shape.size()));
    for (auto d : r.shape) w.u(d);
    w.u(static_cast<std::uint8_t>(r.quant ? 1 : 0));
    if (r.quant) {
      w.u(static_cast<std::uint8_t>(r.quant->bits));
      w.u(static_cast<std::uint8_t>(r.quant->granularity));
      w.u(static_cast<std::uint32_t>(r.quant->scale.size()));
      for (std::size_t i = 0; i < r.quant->scale.size(); ++i) {
        w.f64(r.quant->scale[i]);
        w.i32(r.quant->zero_point[i]);
      }
    }
    const std::size_t row = r.shape.empty() ? 1 : r.shape.back();
    if (r.payload.size() != detail::payload_bytes(r.type, r.count(), row))
      detail::fail(Errc::shape_mismatch, "record '", r.name, "' payload is ", r.payload.size(), " bytes, shape needs ",
                   detail::payload_bytes(r.type, r.count(), row));
    w.u(static_cast<std::uint64_t>(r.payload.size()));
    w.bytes(r.payload);
  }
  w.u(crc32_of(w.buf));
  return std::move(w.buf);
}

inline WeightContainer decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "CFW1", 4) != 0)
    detail::fail(Errc::bad_magic, "not a CFW1 container");
  const auto body = bytes.first(bytes.size() - 4);
  detail::Reader tail(bytes.last(4));
  const auto stored = tail.u<std::uint32_t>();
  if (crc32_of(body) != stored) detail::fail(Errc::crc_mismatch, "container CRC-32 mismatch");
  detail::Reader r(body);
  r.bytes(4);
  const auto version = r.u<std::uint32_t>();
  if (version != detail::kContainerVersion) detail::fail(Errc::bad_magic, "unsupported container version ", version);
  WeightContainer c;
  const auto kind = r.u<std::uint8_t>();
  if (kind > 1) detail::fail(Errc::parse, "unknown container kind ", int{kind});
  c.kind = static_cast<ContainerKind>(kind);
  c.config.c = r.i32();
  const auto up = r.u<std::uint8_t>();
  if (up > 1) detail::fail(Errc::parse, "unknown upsample mode ", int{up});
  c.config.upsample = static_cast<UpsampleMode>(up);
  c.config.in_channels = r.i32();
  c.config.num_classes = r.i32();
  c.config.input_h = r.i32();
  c.config.input_w = r.i32();
  c.bn_folded = r.u<std::uint8_t>() != 0;
  c.weight_bits = r.u<std::uint8_t>();
  c.act_bits = r.u<std::uint8_t>();
  const auto n = r.u<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    TensorRecord t;
    t.name = r.str();
    const auto type = r.u<std::uint8_t>();
    if (type > 4) detail::fail(Errc::dtype, "record '", t.name, "' has unknown dtype ", int{type});
    t.type = static_cast<DType>(type);
    const auto rank = r.u<std::uint8_t>();
    for (int d = 0; d < rank; ++d) t.shape.push_back(r.u<std::uint32_t>());
    if (r.u<std::uint8_t>() != 0) {
      QuantParams q;
      q.bits = r.u<std::uint8_t>();
      const auto gran = r.u<std::uint8_t>();
      if (gran > 1) detail::fail(Errc::parse, "record '", t.name, "' has unknown granularity");
      q.granularity = static_cast<Granularity>(gran);
      const auto nch = r.u<std::uint32_t>();
      q.scale.clear();
      q.zero_point.clear();
      for (std::uint32_t k = 0; k < nch; ++k) {
        q.scale.push_back(r.f64());
        q.zero_point.push_back(r.i32());
      }
      t.quant = std::move(q);
    }
    const auto len = r.u<std::uint64_t>();
    const std::size_t row = t.shape.empty() ? 1 : t.shape.back();
    if (len != detail::payload_bytes(t.type, t.count(), row))
      detail::fail(Errc::shape_mismatch, "record '", t.name, "' payload length ", len, " does not match its shape");
    auto p = r.bytes(static_cast<std::size_t>(len));
    t.payload.assign(p.begin(), p.end());
    c.records.push_back(std::move(t));
  }
  if (r.pos() != body.size()) detail::fail(Errc::parse, "trailing bytes after the last record");
  return c;
}

inline void write_container(const std::string& path, const WeightContainer& c) {
  const auto bytes = encode(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) detail::fail(Errc::io, "cannot write '", path, "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) detail::fail(Errc::io, "write to '", path, "' failed");
}

inline WeightContainer read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) detail::fail(Errc::io, "cannot open '", path, "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

// ---- typed records --------------------------------------------------------

namespace detail {

inline std::vector<std::uint32_t> dims_of(const TensorShape& s) {
  return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
          static_cast<std::uint32_t>(s.w)};
}

template <typename T, typename Put>
TensorRecord make_record(std::string name, DType type, std::vector<std::uint32_t> shape, std::span<const T> v,
                         Put put) {
  TensorRecord r;
  r.name = std::move(name);
  r.type = type;
  r.shape = std::move(shape);
  Writer w;
  for (const T& x : v) put(w, x);
  r.payload = std::move(w.buf);
  return r;
}

}  // namespace detail

inline TensorRecord f32_record(std::string name, std::vector<std::uint32_t> shape, std::span<const float> v) {
  return detail::make_record(std::move(name), DType::f32, std::move(shape), v,
                             [](detail::Writer& w, float x) { w.u(std::bit_cast<std::uint32_t>(x)); });
}

inline TensorRecord f64_record(std::string name, std::vector<std::uint32_t> shape, std::span<const double> v) {
  return detail::make_record(std::move(name), DType::f64, std::move(shape), v,
                             [](detail::Writer& w, double x) { w.f64(x); });
}

inline TensorRecord i32_record(std::string name, std::vector<std::uint32_t> shape, std::span<const std::int32_t> v) {
  return detail::make_record(std::move(name), DType::i32, std::move(shape), v,
                             [](detail::Writer& w, std::int32_t x) { w.i32(x); });
}

/// int8 values, or int4 values (each in [-8, 7]) packed per innermost row.
inline TensorRecord int_record(std::string name, std::vector<std::uint32_t> shape, std::span<const std::int8_t> v,
                               int bits, std::optional<QuantParams> q = std::nullopt) {
  TensorRecord r;
  r.name = std::move(name);
  r.shape = std::move(shape);
  r.quant = std::move(q);
  if (bits == 8) {
    r.type = DType::i8;
    for (auto x : v) r.payload.push_back(static_cast<std::uint8_t>(x));
  } else if (bits == 4) {
    r.type = DType::i4;
    r.payload = pack_int4(v, r.shape.empty() ? 1 : r.shape.back());
  } else {
    detail::fail(Errc::invalid_parameter, "unsupported integer width ", bits);
  }
  return r;
}

namespace detail {

inline void expect(const TensorRecord& r, DType t, std::size_t count) {
  if (r.type != t)
    fail(Errc::dtype, "record '", r.name, "' is ", to_string(r.type), ", expected ", to_string(t));
  if (r.count() != count)
    fail(Errc::shape_mismatch, "record '", r.name, "' holds ", r.count(), " values, expected ", count);
}

}  // namespace detail

inline std::vector<float> read_f32(const TensorRecord& r, std::size_t count) {
  detail::expect(r, DType::f32, count);
  detail::Reader rd(r.payload);
  std::vector<float> v(count);
  for (auto& x : v) x = std::bit_cast<float>(rd.u<std::uint32_t>());
  return v;
}

inline std::vector<double> read_f64(const TensorRecord& r, std::size_t count) {
  detail::expect(r, DType::f64, count);
  detail::Reader rd(r.payload);
  std::vector<double> v(count);
  for (auto& x : v) x = rd.f64();
  return v;
}

inline std::vector<std::int32_t> read_i32(const TensorRecord& r, std::size_t count) {
  detail::expect(r, DType::i32, count);
  detail::Reader rd(r.payload);
  std::vector<std::int32_t> v(count);
  for (auto& x : v) x = rd.i32();
  return v;
}

inline std::vector<std::int8_t> read_int(const TensorRecord& r, std::size_t count, int bits) {
  detail::expect(r, bits == 4 ? DType::i4 : DType::i8, count);
  if (bits == 4) return unpack_int4(r.payload, count, r.shape.empty() ? 1 : r.shape.back());
  std::vector<std::int8_t> v(count);
  for (std::size_t i = 0; i < count; ++i) v[i] = static_cast<std::int8_t>(r.payload[i]);
  return v;
}

/// Teacher logits and similar standalone f32 tensors.
inline TensorRecord tensor_record(std::string name, const Tensor<float>& t) {
  return f32_record(std::move(name), detail::dims_of(t.shape()), t.data());
}

inline Tensor<float> tensor_from_record(const TensorRecord& r) {
  if (r.shape.size() != 4) detail::fail(Errc::shape_mismatch, "record '", r.name, "' is not a 4-d tensor");
  TensorShape s{static_cast<int>(r.shape[0]), static_cast<int>(r.shape[1]), static_cast<int>(r.shape[2]),
                static_cast<int>(r.shape[3])};
  return Tensor<float>(s, read_f32(r, s.numel()));
}

// ---- graph adapters -------------------------------------------------------

namespace detail {

/// Tracks that every expected record is consumed exactly once.
class RecordIndex {
 public:
  explicit RecordIndex(const WeightContainer& c) {
    for (const auto& r : c.records) {
      if (!by_name_.emplace(r.name, &r).second) fail(Errc::structure, "duplicate record '", r.name, "'");
    }
  }
  const TensorRecord& take(const std::string& name) {
    const auto it = by_name_.find(name);
    if (it == by_name_.end()) fail(Errc::missing_tensor, "missing record '", name, "'");
    const auto* r = it->second;
    by_name_.erase(it);
    return *r;
  }
  void finish() const {
    if (!by_name_.empty()) fail(Errc::structure, "unexpected record '", by_name_.begin()->first, "'");
  }

 private:
  std::map<std::string, const TensorRecord*> by_name_;
};

inline std::vector<std::uint32_t> vec_dims(std::size_t n) { return {static_cast<std::uint32_t>(n)}; }

inline void check_config(const WeightContainer& c, ContainerKind want) {
  if (c.kind != want)
    fail(Errc::structure, "container holds a ", c.kind == ContainerKind::float_model ? "float" : "quantized",
         " model");
  try {
    c.config.validate();
  } catch (const Error& e) {
    fail(Errc::structure, "container config: ", e.message());
  }
}

}  // namespace detail

inline WeightContainer to_container(const ModelGraph& g) {
  WeightContainer c;
  c.kind = ContainerKind::float_model;
  c.config = g.config;
  c.bn_folded = g.bn_folded;
  for (const auto& n : g.nodes) {
    if (n.has_weights()) {
      c.records.push_back(f32_record(n.name + ".weight", detail::dims_of(n.weights.shape()), n.weights.data()));
      if (!n.bias.empty()) c.records.push_back(f32_record(n.name + ".bias", detail::vec_dims(n.bias.size()), n.bias));
    } else if (n.kind == LayerKind::bn) {
      const auto d = detail::vec_dims(n.bn.channels());
      c.records.push_back(f32_record(n.name + ".gamma", d, n.bn.gamma));
      c.records.push_back(f32_record(n.name + ".beta", d, n.bn.beta));
      c.records.push_back(f32_record(n.name + ".mean", d, n.bn.mean));
      c.records.push_back(f32_record(n.name + ".var", d, n.bn.var));
      const float eps[] = {n.bn.eps};
      c.records.push_back(f32_record(n.name + ".eps", {1}, eps));
    }
  }
  return c;
}

inline ModelGraph graph_from_container(const WeightContainer& c) {
  detail::check_config(c, ContainerKind::float_model);
  ModelGraph g = build_model(c.config);
  if (c.bn_folded) g = fold_bn(g);
  detail::RecordIndex idx(c);
  for (auto& n : g.nodes) {
    if (n.has_weights()) {
      const auto& r = idx.take(n.name + ".weight");
      if (r.shape != detail::dims_of(n.weights.shape()))
        detail::fail(Errc::shape_mismatch, "record '", r.name, "' shape does not match layer ", n.weights.shape());
      n.weights = Tensor<float>(n.weights.shape(), read_f32(r, n.weights.size()));
      if (!n.bias.empty()) n.bias = read_f32(idx.take(n.name + ".bias"), n.bias.size());
    } else if (n.kind == LayerKind::bn) {
      const auto ch = n.bn.channels();
      n.bn.gamma = read_f32(idx.take(n.name + ".gamma"), ch);
      n.bn.beta = read_f32(idx.take(n.name + ".beta"), ch);
      n.bn.mean = read_f32(idx.take(n.name + ".mean"), ch);
      n.bn.var = read_f32(idx.take(n.name + ".var"), ch);
      n.bn.eps = read_f32(idx.take(n.name + ".eps"), 1)[0];
    }
  }
  idx.finish();
  return g;
}

inline WeightContainer to_container(const QuantizedGraph& qg) {
  WeightContainer c;
  c.kind = ContainerKind::quantized_model;
  c.config = qg.config;
  c.bn_folded = true;
  c.weight_bits = qg.weight_bits;
  c.act_bits = qg.act_bits;
  auto act = [&](const QLayer& l) {
    const double v[] = {l.out_q.scale[0], static_cast<double>(l.out_q.zero_point[0])};
    c.records.push_back(f64_record(l.name + ".act", {2}, v));
  };
  auto requant = [&](const QLayer& l) {
    std::vector<std::int32_t> v;
    for (const auto& q : l.requant) {
      v.push_back(q.multiplier);
      v.push_back(q.shift);
    }
    c.records.push_back(i32_record(l.name + ".requant", {static_cast<std::uint32_t>(l.requant.size()), 2}, v));
  };
  for (const auto& l : qg.layers) {
    switch (l.op) {
      case QOp::input: act(l); break;
      case QOp::concat:
        act(l);
        requant(l);
        break;
      case QOp::conv3x3:
      case QOp::conv1x1:
      case QOp::tconv2x2:
        c.records.push_back(int_record(l.name + ".weight", detail::dims_of(l.weights.shape()), l.weights.data(),
                                       l.weight_q.bits, l.weight_q));
        c.records.push_back(i32_record(l.name + ".bias", detail::vec_dims(l.bias.size()), l.bias));
        if (l.head) {
          c.records.push_back(f64_record(l.name + ".logit_scale", detail::vec_dims(l.logit_scale.size()),
                                         l.logit_scale));
        } else {
          act(l);
          requant(l);
        }
        break;
      case QOp::maxpool2x2:
      case QOp::upsample_nearest2x: break;
    }
  }
  return c;
}

inline QuantizedGraph quantized_from_container(const WeightContainer& c) {
  detail::check_config(c, ContainerKind::quantized_model);
  if ((c.weight_bits != 8 && c.weight_bits != 4) || c.act_bits != 8)
    detail::fail(Errc::structure, "unsupported precision w", c.weight_bits, "/a", c.act_bits);
  // Layer structure comes from the config; every number is then replaced.
  const ModelGraph folded = fold_bn(build_model(c.config));
  CalibrationStats stub;
  stub.ranges.assign(folded.nodes.size(), ActRange{0.0f, 1.0f});
  stub.count = 1;
  QuantizedGraph qg = quantize_model(folded, stub, {c.weight_bits, c.act_bits});
  qg.saturation.clear();
  detail::RecordIndex idx(c);
  auto act = [&](QLayer& l) {
    const auto v = read_f64(idx.take(l.name + ".act"), 2);
    const double zp = v[1];
    if (zp != static_cast<double>(static_cast<std::int32_t>(zp)))
      detail::fail(Errc::parse, "record '", l.name, ".act' zero point is not an integer");
    l.out_q = QuantParams::per_tensor(v[0], static_cast<std::int32_t>(zp), c.act_bits);
    try {
      l.out_q.validate();
    } catch (const Error& e) {
      detail::fail(Errc::parse, "record '", l.name, ".act': ", e.message());
    }
  };
  auto requant = [&](QLayer& l) {
    const auto v = read_i32(idx.take(l.name + ".requant"), l.requant.size() * 2);
    for (std::size_t k = 0; k < l.requant.size(); ++k) {
      l.requant[k].multiplier = v[2 * k];
      l.requant[k].shift = v[2 * k + 1];
      if (l.requant[k].shift < 0 || l.requant[k].shift > kMaxRequantShift)
        detail::fail(Errc::parse, "record '", l.name, ".requant' has shift ", l.requant[k].shift);
    }
  };
  for (auto& l : qg.layers) {
    switch (l.op) {
      case QOp::input: act(l); break;
      case QOp::concat:
        act(l);
        requant(l);
        break;
      case QOp::maxpool2x2:
      case QOp::upsample_nearest2x: l.out_q = qg.layer(l.inputs[0]).out_q; break;
      case QOp::conv3x3:
      case QOp::conv1x1:
      case QOp::tconv2x2: {
        const auto& r = idx.take(l.name + ".weight");
        if (r.shape != detail::dims_of(l.weights.shape()))
          detail::fail(Errc::shape_mismatch, "record '", r.name, "' shape does not match layer ", l.weights.shape());
        if (!r.quant) detail::fail(Errc::missing_tensor, "record '", r.name, "' carries no quantization parameters");
        l.weights = Tensor<std::int8_t>(l.weights.shape(), read_int(r, l.weights.size(), c.weight_bits));
        l.weight_q = *r.quant;
        try {
          l.weight_q.validate();
        } catch (const Error& e) {
          detail::fail(Errc::parse, "record '", r.name, "': ", e.message());
        }
        if (l.weight_q.channels() != static_cast<std::size_t>(l.out_channels))
          detail::fail(Errc::shape_mismatch, "record '", r.name, "' has ", l.weight_q.channels(),
                       " channel scales for ", l.out_channels, " channels");
        l.bias = read_i32(idx.take(l.name + ".bias"), l.bias.size());
        if (l.head) {
          l.logit_scale = read_f64(idx.take(l.name + ".logit_scale"), l.logit_scale.size());
        } else {
          act(l);
          requant(l);
        }
        break;
      }
    }
  }
  idx.finish();
  return qg;
}

}  // namespace crackseg
