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

#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "crackseg/metrics.hpp"
#include "crackseg/quantizer.hpp"
#include "support.hpp"

namespace crackseg {
namespace {

using namespace crackseg::testing;
using boost::multiprecision::cpp_int;

// ---- requantization --------------------------------------------------------

__extension__ typedef __int128 i128;

std::int64_t round_shift_oracle(std::int64_t a, std::int32_t m, int shift) {
  // exact a*m / 2^shift with ties to even, in 128-bit arithmetic
  const i128 p = static_cast<i128>(a) * m;
  if (shift == 0) return static_cast<std::int64_t>(p);
  const i128 d = static_cast<i128>(1) << shift;
  i128 q = p / d;
  i128 r = p % d;
  if (r < 0) {
    r += d;
    --q;
  }
  if (2 * r > d || (2 * r == d && (q & 1) != 0)) ++q;
  return static_cast<std::int64_t>(q);
}

TEST(RequantTest, MultiplierIsAccurate) {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double real = std::exp(rng.uniform(std::log(1e-6), std::log(4.0)));
    const auto r = make_requant(real);
    EXPECT_LT(std::fabs(r.real() - real) / real, 0x1p-20) << real;
    EXPECT_GE(r.multiplier, 1 << 30);
  }
}

TEST(RequantTest, ExhaustiveSweepWithinOneLsb) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const double real = std::exp(rng.uniform(std::log(1e-5), std::log(1.0)));
    const auto r = make_requant(real);
    int bad_exact = 0, bad_real = 0;
    for (std::int64_t a = -(1 << 20); a <= (1 << 20); ++a) {
      const std::int64_t got = requantize(a, r);
      bad_exact += got != round_shift_oracle(a, r.multiplier, r.shift);
      bad_real += std::llabs(got - std::llround(static_cast<double>(a) * real)) > 1;
    }
    EXPECT_EQ(bad_exact, 0) << "m=" << r.multiplier << " shift=" << r.shift;
    EXPECT_EQ(bad_real, 0) << "real=" << real;
  }
}

TEST(RequantTest, TiesGoToEven) {
  const Requant half{1 << 30, 31};  // 0.5
  EXPECT_EQ(requantize(1, half), 0);
  EXPECT_EQ(requantize(3, half), 2);
  EXPECT_EQ(requantize(5, half), 2);
  EXPECT_EQ(requantize(-1, half), 0);
  EXPECT_EQ(requantize(-3, half), -2);
}

TEST(RequantTest, RejectsNonPositive) {
  expect_errc([] { make_requant(0.0); }, Errc::invalid_parameter);
  expect_errc([] { make_requant(-1.0); }, Errc::invalid_parameter);
  expect_errc([] { make_requant(INFINITY); }, Errc::invalid_parameter);
}

// ---- quantize_tensor ---------------------------------------------------------

TEST(QuantizeTensorTest, ZeroMapsToZeroPoint) {
  const auto q = quantize_tensor(Tensor<float>({1, 1, 2, 2}), QuantParams::per_tensor(0.3, -17));
  for (auto v : q.tensor.values.data()) EXPECT_EQ(v, -17);
}

TEST(QuantizeTensorTest, SaturatesAndCounts) {
  Tensor<float> t({1, 1, 1, 2}, std::vector<float>{13.0f, 1.0f});
  const auto q = quantize_tensor(t, QuantParams::per_tensor(0.1, 0));
  EXPECT_EQ(q.tensor.values[0], 127);
  EXPECT_EQ(q.tensor.values[1], 10);
  EXPECT_EQ(q.saturated, 1u);
}

TEST(QuantizeTensorTest, RoundTripWithinHalfScale) {
  Rng rng(3);
  const auto t = random_tensor({2, 3, 8, 8}, rng, -3.0, 3.0);
  const auto qp = QuantParams::per_tensor(0.02, 5);
  const auto q = quantize_tensor(t, qp);
  const auto back = dequantize(q.tensor);
  std::size_t sat = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double ideal = std::nearbyint(static_cast<double>(t[i]) / 0.02) + 5;
    if (ideal < -128 || ideal > 127) {
      ++sat;
      EXPECT_EQ(q.tensor.values[i], ideal < 0 ? -128 : 127);
      continue;
    }
    EXPECT_LE(std::fabs(back[i] - t[i]), 0.01 + 1e-6);
  }
  EXPECT_EQ(sat, q.saturated);
}

TEST(QuantizeTensorTest, ConstantWeightsHitQmax) {
  for (int bits : {8, 4}) {
    for (float v : {0.37f, -2.5f}) {
      Tensor<float> w({3, 2, 3, 3}, v);
      const auto qp = weight_params(w, bits);
      const auto q = quantize_tensor(w, qp);
      const int qmax = (1 << (bits - 1)) - 1;
      for (auto x : q.tensor.values.data()) EXPECT_EQ(x, v > 0 ? qmax : -qmax);
      const auto deq = dequantize(q.tensor);
      for (float d : deq.data()) EXPECT_NEAR(d, v, qp.scale[0] / 2);
    }
  }
}

TEST(QuantizeTensorTest, Int4SaturatesAtLeastAsOftenAsInt8) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = random_tensor({8, 4, 3, 3}, rng, -1.0, 1.0);
    const double scale = rng.uniform(0.002, 0.3);
    const auto s8 = quantize_tensor(w, QuantParams::per_tensor(scale, 0, 8)).saturated;
    const auto s4 = quantize_tensor(w, QuantParams::per_tensor(scale, 0, 4)).saturated;
    EXPECT_GE(s4, s8);
  }
}

// ---- bn folding --------------------------------------------------------------

TEST(FoldBnTest, IdentityBnLeavesWeights) {
  auto g = seeded_model(2, 32, 5);
  for (auto& n : g.nodes)
    if (n.kind == LayerKind::bn) n.bn = BatchNormParams::identity(n.out_channels, 0.0f);
  const auto f = fold_bn(g);
  EXPECT_TRUE(f.bn_folded);
  for (const auto& n : f.nodes) {
    EXPECT_NE(n.kind, LayerKind::bn);
    if (n.kind != LayerKind::conv3x3) continue;
    for (const auto& o : g.nodes)
      if (o.name == n.name) {
        EXPECT_EQ(o.weights, n.weights);
      }
    for (float b : n.bias) EXPECT_EQ(b, 0.0f);
  }
}

TEST(FoldBnTest, GammaScalesChannel) {
  auto g = seeded_model(2, 32, 6);
  for (auto& n : g.nodes)
    if (n.kind == LayerKind::bn) n.bn = BatchNormParams::identity(n.out_channels, 0.0f);
  auto g2 = g;
  for (auto& n : g2.nodes)
    if (n.name == "enc1.bn0") n.bn.gamma[1] = 2.0f;
  const auto a = fold_bn(g), b = fold_bn(g2);
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    if (a.nodes[i].name != "enc1.conv0") {
      EXPECT_EQ(a.nodes[i].weights, b.nodes[i].weights);
      continue;
    }
    const auto& wa = a.nodes[i].weights;
    const auto& wb = b.nodes[i].weights;
    for (int oc = 0; oc < wa.shape().n; ++oc)
      for (int ic = 0; ic < wa.shape().c; ++ic)
        for (int k = 0; k < 9; ++k)
          EXPECT_EQ(wb(oc, ic, k / 3, k % 3), (oc == 1 ? 2.0f : 1.0f) * wa(oc, ic, k / 3, k % 3));
  }
}

TEST(FoldBnTest, ForwardEquivalence) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const int c = seed % 2 ? 2 : 4;
    const auto up = seed % 3 ? UpsampleMode::tconv : UpsampleMode::nearest;
    const auto g = seeded_model(c, 32, seed, up);
    const auto f = fold_bn(g);
    const auto x = random_image(32, 32, seed + 100);
    const auto a = forward(g, x), b = forward(f, x);
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
    EXPECT_LT(m, 1e-4) << "seed " << seed;
  }
}

TEST(FoldBnTest, BnWithoutConvIsStructureError) {
  ModelGraph g;
  g.config.c = 2;
  LayerSpec in;
  in.kind = LayerKind::input;
  in.name = "input";
  in.out_channels = 3;
  LayerSpec bn;
  bn.kind = LayerKind::bn;
  bn.name = "stray.bn";
  bn.inputs = {0};
  bn.in_channels = bn.out_channels = 3;
  bn.bn = BatchNormParams::identity(3);
  g.nodes = {in, bn};
  expect_errc([&] { fold_bn(g); }, Errc::structure, "stray.bn");
}

// ---- calibration -------------------------------------------------------------

TEST(CalibrateTest, PostReluEdgesNonNegative) {
  const auto g = fold_bn(seeded_model(2, 32, 7));
  const auto stats = calibrate(g, {Tensor<float>({1, 3, 32, 32}, 0.5f)});
  EXPECT_EQ(stats.count, 1u);
  for (int i = 0; i < g.size(); ++i)
    if (g.node(i).kind == LayerKind::relu) {
      EXPECT_GE(stats.ranges[static_cast<std::size_t>(i)].min, 0.0f);
    }
}

TEST(CalibrateTest, OrderIndependent) {
  const auto g = fold_bn(seeded_model(2, 32, 8));
  auto imgs = random_images(5, 32, 32, 9);
  const auto a = calibrate(g, imgs);
  std::ranges::reverse(imgs);
  std::swap(imgs[1], imgs[3]);
  EXPECT_EQ(calibrate(g, imgs), a);
}

TEST(CalibrateTest, MatchesStoredActivations) {
  const auto g = fold_bn(seeded_model(2, 32, 10));
  const auto imgs = random_images(3, 32, 32, 11);
  const auto stats = calibrate(g, imgs);
  std::vector<float> lo(g.nodes.size(), INFINITY), hi(g.nodes.size(), -INFINITY);
  for (const auto& x : imgs) {
    const auto act = forward_all(g, x);
    for (std::size_t i = 0; i < act.size(); ++i)
      for (float v : act[i].data()) {
        lo[i] = std::min(lo[i], v);
        hi[i] = std::max(hi[i], v);
      }
  }
  for (std::size_t i = 0; i < lo.size(); ++i) {
    EXPECT_EQ(stats.ranges[i].min, lo[i]);
    EXPECT_EQ(stats.ranges[i].max, hi[i]);
  }
}

TEST(CalibrateTest, EmptySetRejected) {
  const auto g = fold_bn(seeded_model(2, 32, 8));
  expect_errc([&] { calibrate(g, {}); }, Errc::calibration);
}

// ---- quantize_model ----------------------------------------------------------

TEST(QuantizeModelTest, NeedsFoldedGraph) {
  expect_errc([] { quantize_model(seeded_model(2, 32), CalibrationStats{}); }, Errc::structure);
}

TEST(QuantizeModelTest, MissingEdgeNamed) {
  const auto g = fold_bn(seeded_model(2, 32, 12));
  auto stats = calibrate(g, random_images(1, 32, 32, 13));
  for (int i = 0; i < g.size(); ++i)
    if (g.node(i).name == "enc2.relu1") stats.ranges[static_cast<std::size_t>(i)] = ActRange{};
  expect_errc([&] { quantize_model(g, stats); }, Errc::missing_edge_stats, "enc2.relu1");
}

TEST(QuantizeModelTest, StructuralInvariants) {
  for (int bits : {8, 4}) {
    const auto qg = seeded_quantized(4, 32, bits);
    for (const auto& l : qg.layers) {
      if (!l.weighted()) continue;
      EXPECT_EQ(l.weight_q.granularity, Granularity::per_channel);
      EXPECT_EQ(l.weight_q.bits, bits);
      for (auto z : l.weight_q.zero_point) EXPECT_EQ(z, 0);
      for (auto w : l.weights.data()) {
        EXPECT_GE(w, -(1 << (bits - 1)));
        EXPECT_LE(w, (1 << (bits - 1)) - 1);
      }
      if (l.head) continue;
      EXPECT_EQ(l.out_q.granularity, Granularity::per_tensor);
      ASSERT_EQ(l.requant.size(), static_cast<std::size_t>(l.out_channels));
      const double s_in = qg.layer(l.inputs[0]).out_q.scale[0];
      for (int oc = 0; oc < l.out_channels; ++oc) {
        const double want = s_in * l.weight_q.scale[static_cast<std::size_t>(oc)] / l.out_q.scale[0];
        EXPECT_LT(std::fabs(l.requant[static_cast<std::size_t>(oc)].real() - want) / want, 0x1p-20);
      }
    }
  }
}

TEST(QuantizeModelTest, Int4SaturationAtLeastInt8) {
  const auto q8 = seeded_quantized(4, 32, 8);
  const auto q4 = seeded_quantized(4, 32, 4);
  EXPECT_GE(q4.saturated_weights(), q8.saturated_weights());
}

double argmax_agreement(const Tensor<float>& a, const Tensor<float>& b) {
  const auto ma = argmax_channels(a), mb = argmax_channels(b);
  std::size_t same = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) same += ma[i] == mb[i];
  return static_cast<double>(same) / static_cast<double>(ma.size());
}

TEST(IntegerForwardTest, Int8AgreesWithFloat) {
  const auto g = seeded_model(4, 32, 1);
  const auto qg = seeded_quantized(4, 32, 8, 1);
  const auto folded = fold_bn(g);
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto x = random_image(32, 32, 500 + s);
    const double agree = argmax_agreement(forward(folded, x), integer_forward(qg, quantize_input(qg, x)));
    EXPECT_GE(agree, 0.98) << "image " << s;
  }
}

TEST(IntegerForwardTest, Int8ChangesMiouLessThanInt4) {
  // float argmax serves as ground truth on a seeded toy set
  const auto g = fold_bn(seeded_model(4, 32, 21));
  const auto calib = random_images(4, 32, 32, 22);
  const auto q8 = quantize_float_model(g, calib, {8, 8});
  const auto q4 = quantize_float_model(g, calib, {4, 8});
  std::vector<ConfusionMatrix> c8, c4;
  for (const auto& x : random_images(8, 32, 32, 23)) {
    const auto gt = argmax_channels(forward(g, x));
    c8.push_back(confusion(argmax_channels(integer_forward(q8, quantize_input(q8, x))), gt));
    c4.push_back(confusion(argmax_channels(integer_forward(q4, quantize_input(q4, x))), gt));
  }
  const double d8 = 1.0 - dataset_scores(c8).miou;
  const double d4 = 1.0 - dataset_scores(c4).miou;
  EXPECT_LT(d8, d4);
}

TEST(IntegerForwardTest, ZeroWeightsZeroLogits) {
  ModelConfig cfg;
  cfg.c = 2;
  cfg.input_h = cfg.input_w = 16;
  const auto g = build_model(cfg);  // zero weights and biases
  const auto qg = quantize_float_model(g, random_images(1, 16, 16, 1));
  QuantizedTensor x{Tensor<std::int8_t>({1, 3, 16, 16}), qg.input_params()};
  std::ranges::fill(x.values.data(), static_cast<std::int8_t>(qg.input_params().zero_point[0]));
  const auto logits = integer_forward(qg, x);
  for (float v : logits.data()) EXPECT_EQ(v, 0.0f);
}

TEST(IntegerForwardTest, Deterministic) {
  const auto qg = seeded_quantized(2, 32);
  const auto x = quantize_input(qg, random_image(32, 32, 3));
  EXPECT_EQ(integer_forward(qg, x), integer_forward(qg, x));
}

TEST(IntegerForwardTest, WrongEncodingIsDtypeError) {
  const auto qg = seeded_quantized(2, 32);
  auto x = quantize_input(qg, random_image(32, 32, 3));
  x.params.scale[0] *= 2;
  expect_errc([&] { integer_forward(qg, x); }, Errc::dtype);
}

// Scalar reference in arbitrary precision. Every accumulator is exact; the
// int32 saturation and the rounding rule are applied explicitly.
class BigIntReference {
 public:
  explicit BigIntReference(const QuantizedGraph& qg) : qg_(qg) {}

  Tensor<float> run(const QuantizedTensor& x) {
    std::vector<std::vector<cpp_int>> act(qg_.layers.size());
    std::vector<TensorShape> shape(qg_.layers.size());
    act[0].assign(x.values.data().begin(), x.values.data().end());
    shape[0] = x.values.shape();
    Tensor<float> logits;
    for (std::size_t i = 1; i < qg_.layers.size(); ++i) {
      const auto& l = qg_.layers[i];
      const auto in_id = static_cast<std::size_t>(l.inputs[0]);
      const auto& in = act[in_id];
      const auto s = shape[in_id];
      const cpp_int zp = qg_.layer(l.inputs[0]).out_q.zero_point[0];
      auto at = [&](const std::vector<cpp_int>& v, const TensorShape& sh, int c, int y, int xx) -> const cpp_int& {
        return v[(static_cast<std::size_t>(c) * sh.h + y) * sh.w + xx];
      };
      switch (l.op) {
        case QOp::conv3x3:
        case QOp::conv1x1: {
          const int k = l.op == QOp::conv3x3 ? 3 : 1;
          shape[i] = {1, l.out_channels, s.h, s.w};
          if (l.head) logits = Tensor<float>(shape[i]);
          for (int oc = 0; oc < l.out_channels; ++oc)
            for (int y = 0; y < s.h; ++y)
              for (int xx = 0; xx < s.w; ++xx) {
                cpp_int acc = l.bias[static_cast<std::size_t>(oc)];
                for (int ic = 0; ic < s.c; ++ic)
                  for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                      const int yy = y + ky - k / 2, xk = xx + kx - k / 2;
                      if (yy < 0 || yy >= s.h || xk < 0 || xk >= s.w) continue;
                      acc += cpp_int(l.weights(oc, ic, ky, kx)) * (at(in, s, ic, yy, xk) - zp);
                    }
                if (l.head) {
                  const double a = static_cast<double>(saturate(acc).convert_to<long long>());
                  logits(0, oc, y, xx) = static_cast<float>(a * l.logit_scale[static_cast<std::size_t>(oc)]);
                } else {
                  act[i].push_back(finish(l, acc, oc, l.out_lo()));
                }
              }
          break;
        }
        case QOp::tconv2x2: {
          shape[i] = {1, l.out_channels, 2 * s.h, 2 * s.w};
          for (int oc = 0; oc < l.out_channels; ++oc)
            for (int y = 0; y < 2 * s.h; ++y)
              for (int xx = 0; xx < 2 * s.w; ++xx) {
                cpp_int acc = l.bias[static_cast<std::size_t>(oc)];
                for (int ic = 0; ic < s.c; ++ic)
                  acc += cpp_int(l.weights(ic, oc, y % 2, xx % 2)) * (at(in, s, ic, y / 2, xx / 2) - zp);
                act[i].push_back(finish(l, acc, oc, l.out_lo()));
              }
          break;
        }
        case QOp::maxpool2x2:
          shape[i] = {1, s.c, s.h / 2, s.w / 2};
          for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h / 2; ++y)
              for (int xx = 0; xx < s.w / 2; ++xx)
                act[i].push_back(std::max({at(in, s, c, 2 * y, 2 * xx), at(in, s, c, 2 * y, 2 * xx + 1),
                                           at(in, s, c, 2 * y + 1, 2 * xx), at(in, s, c, 2 * y + 1, 2 * xx + 1)}));
          break;
        case QOp::upsample_nearest2x:
          shape[i] = {1, s.c, 2 * s.h, 2 * s.w};
          for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < 2 * s.h; ++y)
              for (int xx = 0; xx < 2 * s.w; ++xx) act[i].push_back(at(in, s, c, y / 2, xx / 2));
          break;
        case QOp::concat: {
          const auto b_id = static_cast<std::size_t>(l.inputs[1]);
          shape[i] = {1, s.c + shape[b_id].c, s.h, s.w};
          const cpp_int zb = qg_.layer(l.inputs[1]).out_q.zero_point[0];
          for (const cpp_int& v : in) act[i].push_back(rescale(v - zp, l.requant[0], l.out_q.zero_point[0], l.out_q.qmin(), l.out_q.qmax()));
          for (const cpp_int& v : act[b_id]) act[i].push_back(rescale(v - zb, l.requant[1], l.out_q.zero_point[0], l.out_q.qmin(), l.out_q.qmax()));
          break;
        }
        case QOp::input: break;
      }
    }
    return logits;
  }

 private:
  static cpp_int saturate(const cpp_int& v) {
    const cpp_int lo = std::numeric_limits<std::int32_t>::min(), hi = std::numeric_limits<std::int32_t>::max();
    return v < lo ? lo : v > hi ? hi : v;
  }

  static cpp_int round_shift(const cpp_int& p, int shift) {
    if (shift == 0) return p;
    const cpp_int d = cpp_int(1) << shift;
    cpp_int q = p / d, r = p % d;  // truncating
    if (r < 0) {
      r += d;
      q -= 1;
    }
    if (2 * r > d || (2 * r == d && (q & 1) != 0)) q += 1;
    return q;
  }

  static cpp_int rescale(const cpp_int& acc, const Requant& rq, std::int32_t zp_out, std::int32_t lo, std::int32_t hi) {
    cpp_int v = zp_out + saturate(round_shift(saturate(acc) * rq.multiplier, rq.shift));
    if (v < lo) v = lo;
    if (v > hi) v = hi;
    return v;
  }

  cpp_int finish(const QLayer& l, const cpp_int& acc, int oc, std::int32_t lo) const {
    return rescale(acc, l.requant[static_cast<std::size_t>(oc)], l.out_q.zero_point[0], lo, l.out_hi());
  }

  const QuantizedGraph& qg_;
};

TEST(IntegerForwardTest, MatchesBigIntegerReference) {
  for (auto up : {UpsampleMode::tconv, UpsampleMode::nearest})
    for (int bits : {8, 4}) {
      const auto qg = seeded_quantized(2, 16, bits, 31, up);
      for (std::uint64_t s = 0; s < 2; ++s) {
        const auto x = quantize_input(qg, random_image(16, 16, 40 + s));
        EXPECT_EQ(integer_forward(qg, x), BigIntReference(qg).run(x)) << "bits " << bits;
      }
    }
}

std::string hex_logits(const Tensor<float>& t) {
  std::ostringstream os;
  os << t.shape() << "\n";
  char buf[16];
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%08x", std::bit_cast<std::uint32_t>(t[i]));
    os << buf << ((i + 1) % 16 == 0 ? "\n" : " ");
  }
  return os.str();
}

TEST(IntegerForwardTest, MatchesGoldenLogits) {
  const auto qg = seeded_quantized(2, 16, 8, 1);
  const auto text = hex_logits(integer_forward(qg, quantize_input(qg, random_image(16, 16, 77))));
  const std::string path = std::string(CRACKSEG_GOLDEN_DIR) + "/int8_c2_16x16_logits.txt";
  if (std::getenv("CRACKSEG_UPDATE_GOLDEN")) std::ofstream(path, std::ios::binary) << text;
  const auto golden = slurp(path);
  ASSERT_FALSE(golden.empty()) << "golden file missing";
  EXPECT_EQ(text, golden);
}

}  // namespace
}  // namespace crackseg
