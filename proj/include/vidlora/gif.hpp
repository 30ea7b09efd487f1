// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "vidlora/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vidlora {

// Animated GIF89a with a fixed 6x6x6 color cube + 40 grays. Deterministic bytes.
void write_gif(const std::string& path, int width, int height,
               const std::vector<std::vector<uint8_t>>& frames_rgb8, int delay_cs = 12,
               bool loop = true);

// Clip values are clamped from [-1, 1] to RGB8. Batch entry `b` only.
template <typename S>
std::vector<std::vector<uint8_t>> clip_to_rgb8(const Tensor<S>& video, Index b = 0) {
  check_video_shape(video);
  const Index F = video.shape[1], H = video.shape[2], W = video.shape[3], C = video.shape[4];
  VL_CHECK(C == 3, "clip_to_rgb8: need 3 channels");
  std::vector<std::vector<uint8_t>> frames;
  frames.reserve(static_cast<size_t>(F));
  const Index per = H * W * C;
  for (Index f = 0; f < F; ++f) {
    std::vector<uint8_t> buf(static_cast<size_t>(per));
    const S* src = video.data.data() + (b * F + f) * per;
    for (Index i = 0; i < per; ++i) {
      double v = (static_cast<double>(src[i]) + 1.0) * 0.5;
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      buf[static_cast<size_t>(i)] = static_cast<uint8_t>(v * 255.0 + 0.5);
    }
    frames.push_back(std::move(buf));
  }
  return frames;
}

template <typename S>
void write_clip_gif(const std::string& path, const Tensor<S>& video, int delay_cs = 12) {
  auto frames = clip_to_rgb8(video);
  write_gif(path, static_cast<int>(video.shape[3]), static_cast<int>(video.shape[2]), frames,
            delay_cs);
}

}  // namespace vidlora
