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
#include <cstring>
#include <fstream>
#include <set>

#include "crackseg/augment.hpp"
#include "crackseg/container.hpp"
#include "crackseg/image_io.hpp"
#include "support.hpp"

namespace crackseg {
namespace {

using namespace crackseg::testing;

std::vector<std::uint8_t> bytes_of(std::string_view s) { return {s.begin(), s.end()}; }

void write_file(const std::filesystem::path& p, std::string_view s) {
  std::ofstream(p, std::ios::binary) << s;
}

TEST(Crc32Test, CheckValue) {
  EXPECT_EQ(crc32_of(bytes_of("123456789")), 0xCBF43926u);
  EXPECT_EQ(crc32_of(bytes_of("")), 0u);
}

WeightContainer mixed_container() {
  WeightContainer c;
  c.config.c = 2;
  c.weight_bits = 4;
  const float f[] = {1.5f, -0.0f, 3.25e-7f, 1e30f, -2.0f, 0.5f};
  const double d[] = {0.1, -1e-300};
  const std::int32_t i[] = {INT32_MIN, -1, 0, INT32_MAX};
  const std::int8_t q8[] = {-128, 127, 0, -1, 5, 6};
  const std::int8_t q4[] = {-8, 7, 1, -1, 0, 3};
  auto qp = QuantParams::per_tensor(0.05, -3, 8);
  c.records.push_back(f32_record("f", {2, 3}, f));
  c.records.push_back(f64_record("d", {2}, d));
  c.records.push_back(i32_record("i", {4}, i));
  c.records.push_back(int_record("q8", {3, 2}, q8, 8, qp));
  c.records.push_back(int_record("q4", {2, 3}, q4, 4));
  return c;
}

TEST(ContainerTest, RoundTripAllTypes) {
  const auto c = mixed_container();
  const auto bytes = encode(c);
  EXPECT_EQ(std::memcmp(bytes.data(), "CFW1", 4), 0);
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  const auto back = decode(bytes);
  ASSERT_EQ(back.records.size(), c.records.size());
  for (std::size_t k = 0; k < c.records.size(); ++k) {
    EXPECT_EQ(back.records[k].name, c.records[k].name);
    EXPECT_EQ(back.records[k].type, c.records[k].type);
    EXPECT_EQ(back.records[k].shape, c.records[k].shape);
    EXPECT_EQ(back.records[k].payload, c.records[k].payload);
  }
  EXPECT_EQ(back.weight_bits, 4);
  EXPECT_EQ(encode(back), bytes);
  const auto f = read_f32(*back.find("f"), 6);
  EXPECT_EQ(std::bit_cast<std::uint32_t>(f[1]), 0x80000000u);
  EXPECT_EQ(f[2], 3.25e-7f);
  EXPECT_EQ(read_f64(*back.find("d"), 2)[1], -1e-300);
  EXPECT_EQ(read_i32(*back.find("i"), 4)[0], INT32_MIN);
  EXPECT_EQ(read_int(*back.find("q8"), 6, 8), (std::vector<std::int8_t>{-128, 127, 0, -1, 5, 6}));
  EXPECT_EQ(read_int(*back.find("q4"), 6, 4), (std::vector<std::int8_t>{-8, 7, 1, -1, 0, 3}));
  ASSERT_TRUE(back.find("q8")->quant.has_value());
  EXPECT_EQ(back.find("q8")->quant->scale[0], 0.05);
  EXPECT_EQ(back.find("q8")->quant->zero_point[0], -3);
  EXPECT_EQ(back.find("nope"), nullptr);
}

TEST(ContainerTest, Int4OddRowsPadPerRow) {
  const std::int8_t v[] = {1, 2, 3, -4, -5, -6};
  const auto r = int_record("x", {2, 3}, v, 4);
  EXPECT_EQ(r.payload.size(), 4u);
  EXPECT_EQ(read_int(r, 6, 4), (std::vector<std::int8_t>{1, 2, 3, -4, -5, -6}));
  expect_errc([&] { int_record("x", {6}, v, 5); }, Errc::invalid_parameter);
}

TEST(ContainerTest, CorruptionDetected) {
  auto bytes = encode(mixed_container());
  for (std::size_t pos : {std::size_t{9}, bytes.size() / 2, bytes.size() - 5}) {
    auto b = bytes;
    b[pos] ^= 0x10;
    expect_errc([&] { decode(b); }, Errc::crc_mismatch);
  }
  auto b = bytes;
  b[0] = 'X';
  expect_errc([&] { decode(b); }, Errc::bad_magic);
  expect_errc([&] { decode(std::span(bytes).first(3)); }, Errc::bad_magic);
}

TEST(ContainerTest, PayloadShapeMismatch) {
  auto c = mixed_container();
  c.records[0].payload.pop_back();
  expect_errc([&] { encode(c); }, Errc::shape_mismatch, "'f'");
}

TEST(ContainerTest, FloatModelRoundTrip) {
  const auto g = seeded_model(2, 32, 3);
  const auto dir = scratch_dir("float_model");
  write_container((dir / "m.cfw").string(), to_container(g));
  const auto back = graph_from_container(read_container((dir / "m.cfw").string()));
  const auto x = random_image(32, 32, 4);
  EXPECT_EQ(forward(back, x), forward(g, x));
  const auto folded = fold_bn(g);
  const auto fb = graph_from_container(decode(encode(to_container(folded))));
  EXPECT_TRUE(fb.bn_folded);
  EXPECT_EQ(forward(fb, x), forward(folded, x));
}

TEST(ContainerTest, QuantizedModelRoundTrip) {
  for (int bits : {8, 4}) {
    const auto qg = seeded_quantized(2, 16, bits, 5);
    const auto back = quantized_from_container(decode(encode(to_container(qg))));
    EXPECT_EQ(back.weight_bits, bits);
    const auto in = quantize_input(qg, random_image(16, 16, 6));
    EXPECT_EQ(integer_forward(back, in), integer_forward(qg, in));
  }
}

TEST(ContainerTest, StructuralErrors) {
  auto c = to_container(seeded_model(2, 32));
  auto missing = c;
  missing.records.erase(missing.records.begin() + 2);
  expect_errc([&] { graph_from_container(missing); }, Errc::missing_tensor, c.records[2].name);
  auto extra = c;
  const float one[] = {1.0f};
  extra.records.push_back(f32_record("stowaway", {1}, one));
  expect_errc([&] { graph_from_container(extra); }, Errc::structure, "stowaway");
  auto wrong_shape = c;
  wrong_shape.records[0].shape = {1, 2, 3, 3, 3};
  expect_errc([&] { graph_from_container(decode(encode(wrong_shape))); }, Errc::shape_mismatch);
  auto wrong_type = c;
  wrong_type.records[0] = i32_record(c.records[0].name, c.records[0].shape,
                                     std::vector<std::int32_t>(c.records[0].count(), 0));
  expect_errc([&] { graph_from_container(wrong_type); }, Errc::dtype);
  expect_errc([&] { quantized_from_container(c); }, Errc::structure);
  expect_errc([] { read_container("/nonexistent/m.cfw"); }, Errc::io);
}

TEST(PnmTest, DecodeExample) {
  const std::string p5 = std::string("P5\n# comment\n2 2\n255\n") + std::string("\x00\xff\x80\x40", 4);
  const auto img = decode_pnm(p5);
  EXPECT_EQ(img.width, 2);
  EXPECT_EQ(img.channels, 1);
  const auto t = image_tensor(img);
  EXPECT_FLOAT_EQ(t[0], 0.0f);
  EXPECT_FLOAT_EQ(t[1], 1.0f);
  EXPECT_NEAR(t[2], 0.50196, 1e-5);
  EXPECT_NEAR(t[3], 0.25098, 1e-5);
  EXPECT_EQ(decode_pnm(encode_pnm(img)).pixels, img.pixels);
}

TEST(PnmTest, ColourLayout) {
  const std::string p6 = std::string("P6 2 1 255\n") + std::string("\x01\x02\x03\x04\x05\x06", 6);
  const auto t = image_tensor(decode_pnm(p6));
  EXPECT_EQ(t.shape(), (TensorShape{1, 3, 1, 2}));
  EXPECT_FLOAT_EQ(t(0, 0, 0, 1) * 255.0f, 4.0f);
  EXPECT_FLOAT_EQ(t(0, 2, 0, 0) * 255.0f, 3.0f);
}

TEST(PnmTest, Rejections) {
  expect_errc([] { decode_pnm("P5 2 2 65535\n" + std::string(8, '\0')); }, Errc::parse);
  expect_errc([] { decode_pnm("P3 1 1 255\n1 2 3"); }, Errc::parse);
  expect_errc([] { decode_pnm("P5 2 2 255\n" + std::string(3, '\0')); }, Errc::truncated);
  expect_errc([] { decode_pnm("P5 2"); }, Errc::truncated);
  expect_errc([] { decode_pnm("P5 x 2 255\n"); }, Errc::parse);
}

TEST(PnmTest, ImageRoundTripThroughBytes) {
  const auto dir = scratch_dir("pnm");
  auto img = random_image(5, 7, 1);
  write_image((dir / "a.ppm").string(), img);
  const auto back = load_image((dir / "a.ppm").string());
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back[i], img[i], 0.5 / 255.0 + 1e-6);
}

TEST(MaskTest, ValuesAndRoundTrip) {
  const auto dir = scratch_dir("mask");
  write_file(dir / "ok.pgm", std::string("P5 3 1 255\n") + std::string("\x00\xff\x00", 3));
  const auto m = load_mask((dir / "ok.pgm").string());
  EXPECT_EQ(std::vector<std::uint8_t>(m.data().begin(), m.data().end()), (std::vector<std::uint8_t>{0, 1, 0}));
  write_mask((dir / "copy.pgm").string(), m);
  EXPECT_EQ(load_mask((dir / "copy.pgm").string()), m);
  write_file(dir / "bad.pgm", std::string("P5 3 1 255\n") + std::string("\x00\x80\x00", 3));
  expect_errc([&] { load_mask((dir / "bad.pgm").string()); }, Errc::parse, "128");
}

TEST(DatasetTest, OpenAndLoad) {
  const auto root = scratch_dir("dataset");
  std::filesystem::create_directories(root / "splits");
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  write_file(root / "splits" / "val.txt", "# held out\na\n\nb\r\n");
  for (const char* s : {"a", "b"}) {
    write_image((root / "images" / (std::string(s) + ".ppm")).string(), random_image(8, 8, 2));
    write_mask((root / "masks" / (std::string(s) + ".pgm")).string(), Tensor<std::uint8_t>({1, 1, 8, 8}));
  }
  const auto idx = DatasetIndex::open(root, parse_split("val"));
  ASSERT_EQ(idx.size(), 2u);
  EXPECT_EQ(idx.items[1].stem, "b");
  const auto [img, mask] = idx.load(0);
  EXPECT_EQ(img.shape(), (TensorShape{1, 3, 8, 8}));
  EXPECT_EQ(mask.shape(), (TensorShape{1, 1, 8, 8}));
  write_mask((root / "masks" / "b.pgm").string(), Tensor<std::uint8_t>({1, 1, 8, 4}));
  expect_errc([&] { idx.load(1); }, Errc::shape, "b");
  expect_errc([&] { DatasetIndex::open(root, Split::test); }, Errc::io);
  write_file(root / "splits" / "train.txt", "ghost\n");
  expect_errc([&] { DatasetIndex::open(root, Split::train); }, Errc::io, "ghost");
  expect_errc([] { parse_split("holdout"); }, Errc::config);
}

Tensor<std::uint8_t> stripe_mask(int h, int w) {
  Tensor<std::uint8_t> m({1, 1, h, w});
  for (int y = 0; y < h; ++y) m(0, 0, y, w / 3) = 1;
  return m;
}

TEST(AugmentTest, NothingFiresIsIdentity) {
  AugmentConfig cfg;
  cfg.p_flip = cfg.p_rotate = cfg.p_noise = cfg.p_blur = 0.0;
  const auto img = random_image(16, 16, 3);
  const auto m = stripe_mask(16, 16);
  const auto a = augment_item(img, m, cfg, 0);
  EXPECT_EQ(a.image, img);
  EXPECT_EQ(a.mask, m);
}

TEST(AugmentTest, FlipTwiceAndZeroRotation) {
  const auto img = random_image(9, 7, 4);
  EXPECT_EQ(hflip(hflip(img)), img);
  EXPECT_NE(hflip(img), img);
  EXPECT_EQ(hflip(img)(0, 1, 2, 0), img(0, 1, 2, 6));
  const auto r = rotate_image(img, 0.0);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(r[i], img[i], 1e-6);
  EXPECT_EQ(rotate_mask(stripe_mask(9, 7), 0.0), stripe_mask(9, 7));
}

TEST(AugmentTest, HalfTurnMatchesOracle) {
  const auto img = random_image(6, 6, 5);
  const auto r = rotate_image(img, 180.0);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) EXPECT_NEAR(r(0, 0, y, x), img(0, 0, 5 - y, 5 - x), 1e-5);
}

TEST(AugmentTest, MaskStaysBinaryAndGeometryPaired) {
  AugmentConfig cfg;
  cfg.p_flip = cfg.p_rotate = cfg.p_noise = cfg.p_blur = 1.0;
  const auto m = stripe_mask(32, 32);
  auto img = Tensor<float>({1, 3, 32, 32});
  for (int y = 0; y < 32; ++y)
    for (int c = 0; c < 3; ++c) img(0, c, y, 32 / 3) = 1.0f;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto a = augment_item(img, m, cfg, i);
    std::set<std::uint8_t> vals(a.mask.data().begin(), a.mask.data().end());
    for (auto v : vals) EXPECT_LE(v, 1);
    for (float v : a.image.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    EXPECT_LE(std::fabs(a.draw.angle_deg), cfg.max_rotation_deg);
  }
}

TEST(AugmentTest, DeterministicPerItem) {
  AugmentConfig cfg;
  cfg.seed = 77;
  const auto img = random_image(16, 16, 6);
  const auto m = stripe_mask(16, 16);
  const auto a = augment_item(img, m, cfg, 3);
  const auto b = augment_item(img, m, cfg, 3);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.mask, b.mask);
  bool differs = false;
  for (std::uint64_t i = 4; i < 12 && !differs; ++i) differs = augment_item(img, m, cfg, i).image != a.image;
  EXPECT_TRUE(differs);
}

TEST(AugmentTest, Validation) {
  AugmentConfig cfg;
  cfg.p_flip = 1.5;
  expect_errc([&] { cfg.validate(); }, Errc::invalid_parameter);
  cfg = {};
  cfg.blur_length = 4;
  expect_errc([&] { cfg.validate(); }, Errc::invalid_parameter);
  cfg = {};
  Rng rng(1);
  expect_errc([&] { augment(random_image(8, 8, 1), Tensor<std::uint8_t>({1, 1, 8, 4}), cfg, rng); }, Errc::shape);
}

TEST(AugmentTest, MotionBlurPreservesConstant) {
  Tensor<float> img({1, 3, 8, 8});
  for (auto& v : img.data()) v = 0.25f;
  for (bool h : {true, false}) {
    const auto b = motion_blur(img, 5, h);
    for (float v : b.data()) EXPECT_NEAR(v, 0.25f, 1e-6);
  }
}

}  // namespace
}  // namespace crackseg
