// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0

#include "vidlora/gif.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <unordered_map>

namespace vidlora {

namespace {

struct BitWriter {
  std::vector<uint8_t>& out;
  uint32_t acc = 0;
  int nbits = 0;
  std::vector<uint8_t> block;

  explicit BitWriter(std::vector<uint8_t>& o) : out(o) { block.reserve(256); }

  void push(uint32_t code, int bits) {
    acc |= code << nbits;
    nbits += bits;
    while (nbits >= 8) {
      byte(static_cast<uint8_t>(acc & 0xff));
      acc >>= 8;
      nbits -= 8;
    }
  }
  void byte(uint8_t b) {
    block.push_back(b);
    if (block.size() == 255) flush_block();
  }
  void flush_block() {
    if (block.empty()) return;
    out.push_back(static_cast<uint8_t>(block.size()));
    out.insert(out.end(), block.begin(), block.end());
    block.clear();
  }
  void finish() {
    if (nbits > 0) byte(static_cast<uint8_t>(acc & 0xff));
    acc = 0;
    nbits = 0;
    flush_block();
    out.push_back(0);  // block terminator
  }
};

void lzw_encode(const std::vector<uint8_t>& indices, std::vector<uint8_t>& out) {
  constexpr int kMinCodeSize = 8;
  constexpr int kClear = 256, kEoi = 257;
  out.push_back(kMinCodeSize);
  BitWriter bw(out);

  int code_size = kMinCodeSize + 1;
  int next_code = kEoi + 1;
  std::unordered_map<uint32_t, int> dict;
  dict.reserve(4096);

  auto emit = [&](int code) {
    bw.push(static_cast<uint32_t>(code), code_size);
    if (next_code >= (1 << code_size) && code_size < 12) ++code_size;
  };

  emit(kClear);
  if (indices.empty()) {
    emit(kEoi);
    bw.finish();
    return;
  }
  int prefix = indices[0];
  for (size_t i = 1; i < indices.size(); ++i) {
    const int k = indices[i];
    const uint32_t key = (static_cast<uint32_t>(prefix) << 8) | static_cast<uint32_t>(k);
    auto it = dict.find(key);
    if (it != dict.end()) {
      prefix = it->second;
      continue;
    }
    emit(prefix);
    if (next_code >= 4096) {
      emit(kClear);
      dict.clear();
      code_size = kMinCodeSize + 1;
      next_code = kEoi + 1;
    } else {
      dict.emplace(key, next_code++);
    }
    prefix = k;
  }
  emit(prefix);
  emit(kEoi);
  bw.finish();
}

void put_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back(static_cast<uint8_t>(x & 0xff));
  v.push_back(static_cast<uint8_t>(x >> 8));
}

uint8_t quantize(const uint8_t* rgb) {
  const int r = rgb[0], g = rgb[1], b = rgb[2];
  const int mx = std::max({r, g, b}), mn = std::min({r, g, b});
  if (mx - mn < 10) {
    int gi = (r + g + b) / 3 * 39 / 255;
    return static_cast<uint8_t>(216 + gi);
  }
  const int ri = (r + 25) / 51, gi = (g + 25) / 51, bi = (b + 25) / 51;
  return static_cast<uint8_t>(36 * ri + 6 * gi + bi);
}

}  // namespace

void write_gif(const std::string& path, int width, int height,
               const std::vector<std::vector<uint8_t>>& frames_rgb8, int delay_cs, bool loop) {
  VL_CHECK(width > 0 && height > 0 && !frames_rgb8.empty(), "write_gif: bad arguments");
  for (auto& f : frames_rgb8)
    VL_CHECK(f.size() == static_cast<size_t>(width) * height * 3, "write_gif: frame size");

  std::vector<uint8_t> out;
  out.reserve(1024 + frames_rgb8.size() * static_cast<size_t>(width) * height);
  const char* hdr = "GIF89a";
  out.insert(out.end(), hdr, hdr + 6);
  put_u16(out, static_cast<uint16_t>(width));
  put_u16(out, static_cast<uint16_t>(height));
  out.push_back(0xF7);  // global color table, 256 entries
  out.push_back(0);     // background color index
  out.push_back(0);     // aspect

  // palette: 6x6x6 cube then 40 grays
  static const int levels[6] = {0, 51, 102, 153, 204, 255};
  for (int r = 0; r < 6; ++r)
    for (int g = 0; g < 6; ++g)
      for (int b = 0; b < 6; ++b) {
        out.push_back(static_cast<uint8_t>(levels[r]));
        out.push_back(static_cast<uint8_t>(levels[g]));
        out.push_back(static_cast<uint8_t>(levels[b]));
      }
  for (int i = 0; i < 40; ++i) {
    uint8_t g = static_cast<uint8_t>(i * 255 / 39);
    out.push_back(g);
    out.push_back(g);
    out.push_back(g);
  }

  if (loop) {
    const uint8_t app[] = {0x21, 0xFF, 0x0B, 'N', 'E', 'T', 'S', 'C', 'A', 'P',
                           'E',  '2',  '.',  '0', 0x03, 0x01, 0x00, 0x00, 0x00};
    out.insert(out.end(), app, app + sizeof(app));
  }

  std::vector<uint8_t> indices(static_cast<size_t>(width) * height);
  for (const auto& frame : frames_rgb8) {
    // graphic control extension
    out.push_back(0x21);
    out.push_back(0xF9);
    out.push_back(0x04);
    out.push_back(0x04);  // disposal: do not dispose
    put_u16(out, static_cast<uint16_t>(delay_cs));
    out.push_back(0);
    out.push_back(0);
    // image descriptor
    out.push_back(0x2C);
    put_u16(out, 0);
    put_u16(out, 0);
    put_u16(out, static_cast<uint16_t>(width));
    put_u16(out, static_cast<uint16_t>(height));
    out.push_back(0);
    for (size_t i = 0; i < indices.size(); ++i) indices[i] = quantize(&frame[i * 3]);
    lzw_encode(indices, out);
  }
  out.push_back(0x3B);

  std::ofstream f(path, std::ios::binary);
  VL_CHECK(f.good(), "write_gif: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  VL_CHECK(f.good(), "write_gif: write failed " + path);
}

}  // namespace vidlora
