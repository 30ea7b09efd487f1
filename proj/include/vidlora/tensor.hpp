// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "vidlora/common.hpp"
#include "vidlora/rng.hpp"

#include <initializer_list>

namespace vidlora {

// Dense n-d array, row-major (last index fastest). Video clips use the
// (batch, frame, height, width, channel) convention throughout.
template <typename S>
struct Tensor {
  Shape shape;
  ArrX<S> data;

  Tensor() = default;
  Tensor(Shape s, ArrX<S> d) : shape(std::move(s)), data(std::move(d)) {
    VL_CHECK(numel(shape) == data.size(), "tensor shape/data mismatch " + shape_str(shape));
  }

  static Tensor zeros(const Shape& s) { return Tensor(s, ArrX<S>::Zero(numel(s))); }
  static Tensor full(const Shape& s, S v) { return Tensor(s, ArrX<S>::Constant(numel(s), v)); }
  static Tensor randn(const Shape& s, Rng& rng, double stddev = 1.0) {
    ArrX<S> d(numel(s));
    rng.normal_fill(d, stddev);
    return Tensor(s, std::move(d));
  }

  Index size() const { return data.size(); }
  Index dim(size_t i) const { return shape.at(i); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  S& at(std::initializer_list<Index> idx) { return data[offset(idx)]; }
  S at(std::initializer_list<Index> idx) const { return data[offset(idx)]; }

  Index offset(std::initializer_list<Index> idx) const {
    VL_CHECK(idx.size() == shape.size(), "index rank mismatch");
    Index off = 0;
    size_t k = 0;
    for (Index i : idx) {
      off = off * shape[k] + i;
      ++k;
    }
    return off;
  }

  Tensor reshaped(const Shape& s) const {
    VL_CHECK(numel(s) == data.size(), "reshape numel mismatch");
    return Tensor(s, data);
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data = data.template cast<T>();
    return out;
  }
};

// Video clips: shape (b, f, h, w, c).
template <typename S>
using Video = Tensor<S>;

template <typename S>
inline void check_video_shape(const Tensor<S>& v) {
  VL_CHECK(v.shape.size() == 5, "video tensor must be rank 5 (b,f,h,w,c), got " + shape_str(v.shape));
  for (Index d : v.shape) VL_CHECK(d > 0, "video dims must be positive");
}

// Extracts frame i as a one-frame clip (b, 1, h, w, c).
template <typename S>
inline Tensor<S> take_frame(const Tensor<S>& v, Index frame) {
  check_video_shape(v);
  const Index b = v.shape[0], f = v.shape[1];
  VL_CHECK(frame >= 0 && frame < f, "frame index out of range");
  const Index per = v.size() / (b * f);
  Tensor<S> out = Tensor<S>::zeros({b, 1, v.shape[2], v.shape[3], v.shape[4]});
  for (Index bi = 0; bi < b; ++bi)
    out.data.segment(bi * per, per) = v.data.segment((bi * f + frame) * per, per);
  return out;
}

}  // namespace vidlora
