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

// Binary PGM (P5) / PPM (P6) with maxval 255, and the dataset layout
//
//   <root>/images/<stem>.ppm
//   <root>/masks/<stem>.pgm
//   <root>/splits/{train,val,test}.txt   one stem per line

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "crackseg/error.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

struct PnmImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 for P5, 3 for P6
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

namespace detail {

inline void pnm_skip_space(std::string_view b, std::size_t& p, const std::string& src) {
  for (;;) {
    if (p >= b.size()) fail(Errc::truncated, src, ": truncated PNM header");
    if (b[p] == '#') {
      while (p < b.size() && b[p] != '\n') ++p;
    } else if (b[p] == ' ' || b[p] == '\t' || b[p] == '\n' || b[p] == '\r') {
      ++p;
    } else {
      return;
    }
  }
}

inline int pnm_int(std::string_view b, std::size_t& p, const std::string& src) {
  pnm_skip_space(b, p, src);
  long v = 0;
  const std::size_t start = p;
  while (p < b.size() && b[p] >= '0' && b[p] <= '9') {
    v = v * 10 + (b[p] - '0');
    if (v > (1 << 24)) fail(Errc::parse, src, ": PNM header value too large");
    ++p;
  }
  if (p == start) fail(Errc::parse, src, ": malformed PNM header");
  return static_cast<int>(v);
}

}  // namespace detail

inline PnmImage decode_pnm(std::string_view bytes, const std::string& source = "<pnm>") {
  if (bytes.size() < 2 || bytes[0] != 'P') detail::fail(Errc::parse, source, ": not a PNM file");
  PnmImage img;
  if (bytes[1] == '5') img.channels = 1;
  else if (bytes[1] == '6') img.channels = 3;
  else detail::fail(Errc::parse, source, ": only binary P5/P6 is supported, got P", bytes[1]);
  std::size_t p = 2;
  img.width = detail::pnm_int(bytes, p, source);
  img.height = detail::pnm_int(bytes, p, source);
  const int maxval = detail::pnm_int(bytes, p, source);
  if (img.width <= 0 || img.height <= 0) detail::fail(Errc::parse, source, ": empty image");
  if (maxval != 255) detail::fail(Errc::parse, source, ": maxval ", maxval, " unsupported, need 255");
  if (p >= bytes.size() || !(bytes[p] == ' ' || bytes[p] == '\t' || bytes[p] == '\n' || bytes[p] == '\r'))
    detail::fail(Errc::parse, source, ": missing whitespace after PNM header");
  ++p;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  if (bytes.size() - p < n) detail::fail(Errc::truncated, source, ": payload has ", bytes.size() - p, " of ", n, " bytes");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(p),
                    bytes.begin() + static_cast<std::ptrdiff_t>(p + n));
  return img;
}

inline std::string encode_pnm(const PnmImage& img) {
  if (img.channels != 1 && img.channels != 3) detail::fail(Errc::invalid_parameter, "PNM needs 1 or 3 channels");
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    detail::fail(Errc::shape, "pixel buffer does not match ", img.width, "x", img.height, "x", img.channels);
  std::string out = (img.channels == 1 ? "P5\n" : "P6\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.append(img.pixels.begin(), img.pixels.end());
  return out;
}

inline PnmImage read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) detail::fail(Errc::io, "cannot open '", path, "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_pnm(ss.str(), path);
}

inline void write_pnm(const std::string& path, const PnmImage& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) detail::fail(Errc::io, "cannot write '", path, "'");
  const auto bytes = encode_pnm(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) detail::fail(Errc::io, "write to '", path, "' failed");
}

/// (1, channels, h, w) with values byte / 255.
inline Tensor<float> image_tensor(const PnmImage& img) {
  Tensor<float> t({1, img.channels, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        t(0, c, y, x) =
            static_cast<float>(img.pixels[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c]) / 255.0f;
  return t;
}

/// Values are clamped to [0, 1] and rounded to the nearest byte.
inline PnmImage image_pnm(const Tensor<float>& t) {
  const auto& s = t.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) detail::fail(Errc::shape, "cannot store ", s, " as PNM");
  PnmImage img{s.w, s.h, s.c, {}};
  img.pixels.resize(t.size());
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < s.c; ++c) {
        const float v = std::clamp(t(0, c, y, x), 0.0f, 1.0f);
        img.pixels[(static_cast<std::size_t>(y) * s.w + x) * s.c + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  return img;
}

inline Tensor<float> load_image(const std::string& path) { return image_tensor(read_pnm(path)); }

inline void write_image(const std::string& path, const Tensor<float>& t) { write_pnm(path, image_pnm(t)); }

/// Single-channel mask with bytes {0, 255} mapped to {0, 1}.
inline Tensor<std::uint8_t> load_mask(const std::string& path) {
  const auto img = read_pnm(path);
  if (img.channels != 1) detail::fail(Errc::parse, path, ": masks must be P5");
  Tensor<std::uint8_t> m({1, 1, img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const auto v = img.pixels[i];
    if (v != 0 && v != 255) detail::fail(Errc::parse, path, ": mask value ", int{v}, " at pixel ", i);
    m[i] = v ? 1 : 0;
  }
  return m;
}

inline void write_mask(const std::string& path, const Tensor<std::uint8_t>& m) {
  const auto& s = m.shape();
  if (s.n != 1 || s.c != 1) detail::fail(Errc::shape, "mask must be 1x1xHxW, got ", s);
  PnmImage img{s.w, s.h, 1, {}};
  img.pixels.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] > 1) detail::fail(Errc::invalid_parameter, "mask value ", int{m[i]}, " is not 0 or 1");
    img.pixels[i] = m[i] ? 255 : 0;
  }
  write_pnm(path, img);
}

enum class Split : std::uint8_t { train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  detail::fail(Errc::config, "unknown split '", s, "'");
}

struct DatasetItem {
  std::string stem;
  std::filesystem::path image;
  std::filesystem::path mask;
};

struct DatasetIndex {
  std::filesystem::path root;
  Split split = Split::train;
  std::vector<DatasetItem> items;

  static DatasetIndex open(const std::filesystem::path& root, Split split) {
    DatasetIndex d{root, split, {}};
    const auto list = root / "splits" / (std::string(to_string(split)) + ".txt");
    std::ifstream in(list);
    if (!in) detail::fail(Errc::io, "cannot open split list '", list.string(), "'");
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      DatasetItem it{line, root / "images" / (line + ".ppm"), root / "masks" / (line + ".pgm")};
      if (!std::filesystem::exists(it.image)) detail::fail(Errc::io, "missing image '", it.image.string(), "'");
      if (!std::filesystem::exists(it.mask)) detail::fail(Errc::io, "missing mask '", it.mask.string(), "'");
      d.items.push_back(std::move(it));
    }
    return d;
  }

  std::size_t size() const { return items.size(); }

  std::pair<Tensor<float>, Tensor<std::uint8_t>> load(std::size_t i) const {
    const auto& it = items.at(i);
    auto img = load_image(it.image.string());
    auto mask = load_mask(it.mask.string());
    if (img.shape().c != 3) detail::fail(Errc::parse, it.image.string(), ": images must be P6");
    if (img.shape().h != mask.shape().h || img.shape().w != mask.shape().w)
      detail::fail(Errc::shape, it.stem, ": image ", img.shape(), " and mask ", mask.shape(), " differ in size");
    return {std::move(img), std::move(mask)};
  }
};

}  // namespace crackseg
