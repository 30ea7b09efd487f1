// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "vidlora/autodiff.hpp"

#include <array>
#include <cmath>

namespace vidlora {

// ---- permute ---------------------------------------------------------------

namespace detail {

// Generic n-d transpose; when the innermost axis is unchanged, copies whole
// C-runs instead of scalars.
template <typename S, bool Accumulate>
inline void permute_copy(const ArrX<S>& src, const Shape& in_shape,
                         const std::vector<int>& perm, ArrX<S>& dst) {
  const int rank = static_cast<int>(in_shape.size());
  Shape out_shape(rank);
  for (int d = 0; d < rank; ++d) out_shape[d] = in_shape[perm[d]];

  std::array<Index, 8> in_strides{}, out_strides{};
  {
    Index s = 1;
    for (int d = rank - 1; d >= 0; --d) { in_strides[d] = s; s *= in_shape[d]; }
    s = 1;
    for (int d = rank - 1; d >= 0; --d) { out_strides[d] = s; s *= out_shape[d]; }
  }
  const bool run_copy = perm[rank - 1] == rank - 1;
  const Index run = run_copy ? in_shape[rank - 1] : 1;
  const int loop_rank = run_copy ? rank - 1 : rank;

  Index total = 1;
  for (int d = 0; d < loop_rank; ++d) total *= out_shape[d];

  for_chunks(total, kGemmChunks, [&](Index lo, Index hi) {
    std::array<Index, 8> idx{};
    // decompose lo into the out multi-index
    Index rem = lo;
    for (int d = loop_rank - 1; d >= 0; --d) { idx[d] = rem % out_shape[d]; rem /= out_shape[d]; }
    for (Index o = lo; o < hi; ++o) {
      Index src_off = 0;
      for (int d = 0; d < loop_rank; ++d) src_off += idx[d] * in_strides[perm[d]];
      if constexpr (Accumulate) {
        dst.segment(o * run, run) += src.segment(src_off, run);
      } else {
        dst.segment(o * run, run) = src.segment(src_off, run);
      }
      for (int d = loop_rank - 1; d >= 0; --d) {
        if (++idx[d] < out_shape[d]) break;
        idx[d] = 0;
      }
    }
  });
}

inline std::vector<int> inverse_perm(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (size_t d = 0; d < perm.size(); ++d) inv[perm[d]] = static_cast<int>(d);
  return inv;
}

}  // namespace detail

template <typename S>
inline Var<S> permute(Var<S> x, std::vector<int> perm) {
  const Shape& in = x.shape();
  VL_CHECK(perm.size() == in.size() && in.size() <= 8, "permute: bad perm");
  Shape out(in.size());
  for (size_t d = 0; d < in.size(); ++d) out[d] = in[perm[d]];
  auto n = detail::make_op<S>(out, {x});
  n->value.resize(x.size());
  detail::permute_copy<S, false>(x.value(), in, perm, n->value);
  n->backward_fn = [px = x.node(), out, inv = detail::inverse_perm(perm)](Node<S>& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    detail::permute_copy<S, true>(self.grad, out, inv, px->grad);
  };
  return Var<S>(n);
}

// (N, T, C) -> (N*nh, T, C/nh)
template <typename S>
inline Var<S> split_heads(Var<S> x, Index nh) {
  const Shape& s = x.shape();
  VL_CHECK(s.size() == 3 && s[2] % nh == 0, "split_heads: bad shape");
  Var<S> r = reshape(x, {s[0], s[1], nh, s[2] / nh});
  r = permute(r, {0, 2, 1, 3});
  return reshape(r, {s[0] * nh, s[1], s[2] / nh});
}

// inverse of split_heads
template <typename S>
inline Var<S> merge_heads(Var<S> x, Index nh) {
  const Shape& s = x.shape();
  VL_CHECK(s.size() == 3 && s[0] % nh == 0, "merge_heads: bad shape");
  Var<S> r = reshape(x, {s[0] / nh, nh, s[1], s[2]});
  r = permute(r, {0, 2, 1, 3});
  return reshape(r, {s[0] / nh, s[1], nh * s[2]});
}

// ---- broadcast adds ----------------------------------------------------------

// t's shape must be a suffix of x's shape.
template <typename S>
inline Var<S> add_broadcast_trailing(Var<S> x, Var<S> t) {
  const Shape& xs = x.shape();
  const Shape& ts = t.shape();
  VL_CHECK(ts.size() <= xs.size(), "add_broadcast_trailing: rank");
  for (size_t d = 0; d < ts.size(); ++d)
    VL_CHECK(ts[ts.size() - 1 - d] == xs[xs.size() - 1 - d], "add_broadcast_trailing: suffix mismatch");
  const Index M = t.size();
  const Index reps = x.size() / M;
  auto n = detail::make_op<S>(xs, {x, t});
  n->value.resize(x.size());
  {
    auto X = as_cmat(x.value(), reps, M);
    auto Y = as_mat(n->value, reps, M);
    auto T_ = as_cmat(t.value(), 1, M);
    for_chunks(reps, kGemmChunks, [&](Index lo, Index hi) {
      Y.middleRows(lo, hi - lo) = X.middleRows(lo, hi - lo).rowwise() + T_.row(0);
    });
  }
  n->backward_fn = [px = x.node(), pt = t.node(), reps, M](Node<S>& self) {
    detail::accum(px, self.grad);
    if (pt->requires_grad) {
      pt->ensure_grad();
      auto dY = as_cmat(self.grad, reps, M);
      as_mat(pt->grad, 1, M).row(0) += dY.colwise().sum();
    }
  };
  return Var<S>(n);
}

// x (B,F,H,W,C) + v (B,F,C) broadcast over positions; the per-frame conditioning add.
template <typename S>
inline Var<S> add_frame_channel(Var<S> x, Var<S> v) {
  const Shape& xs = x.shape();
  VL_CHECK(xs.size() == 5, "add_frame_channel: x must be rank 5");
  const Index BF = xs[0] * xs[1], P = xs[2] * xs[3], C = xs[4];
  VL_CHECK(v.shape() == Shape({xs[0], xs[1], C}), "add_frame_channel: v shape");
  auto n = detail::make_op<S>(xs, {x, v});
  n->value.resize(x.size());
  parallel_for(BF, [&](int64_t i) {
    CMapMatRM<S> X(x.value().data() + i * P * C, P, C);
    CMapMatRM<S> V(v.value().data() + i * C, 1, C);
    MapMatRM<S> Y(n->value.data() + i * P * C, P, C);
    Y = X.rowwise() + V.row(0);
  });
  n->backward_fn = [px = x.node(), pv = v.node(), BF, P, C](Node<S>& self) {
    detail::accum(px, self.grad);
    if (pv->requires_grad) {
      pv->ensure_grad();
      parallel_for(BF, [&](int64_t i) {
        CMapMatRM<S> dY(self.grad.data() + i * P * C, P, C);
        MapMatRM<S> dV(pv->grad.data() + i * C, 1, C);
        dV.row(0) += dY.colwise().sum();
      });
    }
  };
  return Var<S>(n);
}

// ---- concat (channel axis) ---------------------------------------------------

template <typename S>
inline Var<S> concat_lastdim(Var<S> a, Var<S> b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  VL_CHECK(as.size() == bs.size(), "concat: rank mismatch");
  for (size_t d = 0; d + 1 < as.size(); ++d) VL_CHECK(as[d] == bs[d], "concat: leading dims");
  const Index Ca = as.back(), Cb = bs.back();
  const Index T = a.size() / Ca;
  Shape out = as;
  out.back() = Ca + Cb;
  auto n = detail::make_op<S>(out, {a, b});
  n->value.resize(T * (Ca + Cb));
  {
    auto A = as_cmat(a.value(), T, Ca);
    auto B = as_cmat(b.value(), T, Cb);
    auto Y = as_mat(n->value, T, Ca + Cb);
    for_chunks(T, kGemmChunks, [&](Index lo, Index hi) {
      Y.middleRows(lo, hi - lo).leftCols(Ca) = A.middleRows(lo, hi - lo);
      Y.middleRows(lo, hi - lo).rightCols(Cb) = B.middleRows(lo, hi - lo);
    });
  }
  n->backward_fn = [pa = a.node(), pb = b.node(), T, Ca, Cb](Node<S>& self) {
    auto dY = as_cmat(self.grad, T, Ca + Cb);
    if (pa->requires_grad) {
      pa->ensure_grad();
      as_mat(pa->grad, T, Ca) += dY.leftCols(Ca);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      as_mat(pb->grad, T, Cb) += dY.rightCols(Cb);
    }
  };
  return Var<S>(n);
}

// ---- conv2d (3x3, pad 1) -------------------------------------------------------

namespace detail {

// Patch layout: (dy, dx, c) fastest-last, matching weight (C_out, 9*C_in).
template <typename S>
inline void im2col_frame(const S* x, Index H, Index W, Index C, Index stride,
                         Index Ho, Index Wo, S* out) {
  for (Index oy = 0; oy < Ho; ++oy) {
    for (Index ox = 0; ox < Wo; ++ox) {
      S* row = out + (oy * Wo + ox) * 9 * C;
      for (Index dy = 0; dy < 3; ++dy) {
        const Index iy = oy * stride - 1 + dy;
        for (Index dx = 0; dx < 3; ++dx) {
          const Index ix = ox * stride - 1 + dx;
          S* dst = row + (dy * 3 + dx) * C;
          if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
            std::fill(dst, dst + C, S(0));
          } else {
            const S* src = x + (iy * W + ix) * C;
            std::copy(src, src + C, dst);
          }
        }
      }
    }
  }
}

template <typename S>
inline void col2im_frame_accum(const S* dp, Index H, Index W, Index C, Index stride,
                               Index Ho, Index Wo, S* dx) {
  for (Index oy = 0; oy < Ho; ++oy) {
    for (Index ox = 0; ox < Wo; ++ox) {
      const S* row = dp + (oy * Wo + ox) * 9 * C;
      for (Index dy = 0; dy < 3; ++dy) {
        const Index iy = oy * stride - 1 + dy;
        if (iy < 0 || iy >= H) continue;
        for (Index dx_ = 0; dx_ < 3; ++dx_) {
          const Index ix = ox * stride - 1 + dx_;
          if (ix < 0 || ix >= W) continue;
          const S* src = row + (dy * 3 + dx_) * C;
          S* dst = dx + (iy * W + ix) * C;
          for (Index c = 0; c < C; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace detail

// x (B,F,H,W,Cin), W (Cout, 9*Cin), b (Cout); stride 1 or 2, padding 1.
template <typename S>
inline Var<S> conv2d(Var<S> x, Var<S> W, Var<S> b, Index stride = 1) {
  const Shape& xs = x.shape();
  VL_CHECK(xs.size() == 5, "conv2d: x must be (B,F,H,W,C)");
  const Index B = xs[0], F = xs[1], H = xs[2], Wd = xs[3], C = xs[4];
  const Index Cout = W.shape()[0];
  VL_CHECK(W.shape() == Shape({Cout, 9 * C}), "conv2d: weight shape");
  VL_CHECK(b.shape() == Shape({Cout}), "conv2d: bias shape");
  const Index Ho = (H + 2 - 3) / stride + 1;
  const Index Wo = (Wd + 2 - 3) / stride + 1;
  const Index BF = B * F, P = Ho * Wo, K = 9 * C;

  auto n = detail::make_op<S>({B, F, Ho, Wo, Cout}, {x, W, b});
  n->value.resize(BF * P * Cout);

  // Patches are only needed for dW; conv weights are never adapter targets, so the
  // whole buffer is skipped during adapter-only training and at inference.
  const bool needs_patches = W.requires_grad();
  auto patches = std::make_shared<ArrX<S>>();
  if (needs_patches) patches->resize(BF * P * K);

  parallel_for(BF, [&](int64_t i) {
    ArrX<S> local;
    S* pbuf;
    if (needs_patches) {
      pbuf = patches->data() + i * P * K;
    } else {
      local.resize(P * K);
      pbuf = local.data();
    }
    detail::im2col_frame(x.value().data() + i * H * Wd * C, H, Wd, C, stride, Ho, Wo, pbuf);
    CMapMatRM<S> Pm(pbuf, P, K);
    CMapMatRM<S> Wm(W.value().data(), Cout, K);
    MapMatRM<S> Y(n->value.data() + i * P * Cout, P, Cout);
    Y.noalias() = Pm * Wm.transpose();
    Y.rowwise() += CMapMatRM<S>(b.value().data(), 1, Cout).row(0);
  });

  n->backward_fn = [px = x.node(), pw = W.node(), pb = b.node(), patches, B, F, H, Wd, C,
                    Cout, Ho, Wo, stride](Node<S>& self) {
    const Index BF = B * F, P = Ho * Wo, K = 9 * C;
    auto dY_all = as_cmat(self.grad, BF * P, Cout);
    if (pw->requires_grad) {
      VL_CHECK(patches->size() == BF * P * K, "conv2d: weight became trainable after forward");
      pw->ensure_grad();
      std::vector<MatRM<S>> parts(BF);
      parallel_for(BF, [&](int64_t i) {
        CMapMatRM<S> Pm(patches->data() + i * P * K, P, K);
        CMapMatRM<S> dY(self.grad.data() + i * P * Cout, P, Cout);
        parts[i].noalias() = dY.transpose() * Pm;
      });
      auto dW = as_mat(pw->grad, Cout, K);
      for (auto& part : parts) dW += part;
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      as_mat(pb->grad, 1, Cout).row(0) += dY_all.colwise().sum();
    }
    if (px->requires_grad) {
      px->ensure_grad();
      parallel_for(BF, [&](int64_t i) {
        CMapMatRM<S> dY(self.grad.data() + i * P * Cout, P, Cout);
        CMapMatRM<S> Wm(pw->value.data(), Cout, K);
        ArrX<S> dP(P * K);
        MapMatRM<S>(dP.data(), P, K).noalias() = dY * Wm;
        detail::col2im_frame_accum(dP.data(), H, Wd, C, stride, Ho, Wo,
                                   px->grad.data() + i * H * Wd * C);
      });
    }
  };
  return Var<S>(n);
}

// ---- resampling -----------------------------------------------------------------

template <typename S>
inline Var<S> upsample_nearest2(Var<S> x) {
  const Shape& xs = x.shape();
  VL_CHECK(xs.size() == 5, "upsample: rank 5 required");
  const Index B = xs[0], F = xs[1], H = xs[2], W = xs[3], C = xs[4];
  auto n = detail::make_op<S>({B, F, 2 * H, 2 * W, C}, {x});
  n->value.resize(x.size() * 4);
  parallel_for(B * F, [&](int64_t i) {
    const S* src = x.value().data() + i * H * W * C;
    S* dst = n->value.data() + i * 4 * H * W * C;
    for (Index y = 0; y < 2 * H; ++y) {
      for (Index xw = 0; xw < 2 * W; ++xw) {
        const S* s = src + ((y / 2) * W + (xw / 2)) * C;
        std::copy(s, s + C, dst + (y * 2 * W + xw) * C);
      }
    }
  });
  n->backward_fn = [px = x.node(), B, F, H, W, C](Node<S>& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    parallel_for(B * F, [&](int64_t i) {
      const S* g = self.grad.data() + i * 4 * H * W * C;
      S* dst = px->grad.data() + i * H * W * C;
      for (Index y = 0; y < 2 * H; ++y) {
        for (Index xw = 0; xw < 2 * W; ++xw) {
          const S* s = g + (y * 2 * W + xw) * C;
          S* d = dst + ((y / 2) * W + (xw / 2)) * C;
          for (Index c = 0; c < C; ++c) d[c] += s[c];
        }
      }
    });
  };
  return Var<S>(n);
}

// ---- normalization ----------------------------------------------------------------

// x (B,F,H,W,C); stats per (b, f, group) over H*W*(C/groups); affine per channel.
template <typename S>
inline Var<S> group_norm(Var<S> x, Var<S> gamma, Var<S> beta, Index groups, S eps = S(1e-5)) {
  const Shape& xs = x.shape();
  VL_CHECK(xs.size() == 5, "group_norm: rank 5 required");
  const Index BF = xs[0] * xs[1], P = xs[2] * xs[3], C = xs[4];
  VL_CHECK(C % groups == 0, "group_norm: C % groups != 0");
  VL_CHECK(gamma.shape() == Shape({C}) && beta.shape() == Shape({C}), "group_norm: affine shape");
  const Index Cg = C / groups;
  const Index m = P * Cg;

  auto n = detail::make_op<S>(xs, {x, gamma, beta});
  n->value.resize(x.size());
  auto xhat = std::make_shared<ArrX<S>>(x.size());
  auto inv_std = std::make_shared<ArrX<S>>(BF * groups);

  parallel_for(BF, [&](int64_t i) {
    CMapMatRM<S> X(x.value().data() + i * P * C, P, C);
    MapMatRM<S> Y(n->value.data() + i * P * C, P, C);
    MapMatRM<S> Xh(xhat->data() + i * P * C, P, C);
    auto G = as_cmat(gamma.value(), 1, C);
    auto Bt = as_cmat(beta.value(), 1, C);
    for (Index g = 0; g < groups; ++g) {
      auto blk = X.middleCols(g * Cg, Cg);
      S mu = blk.sum() / static_cast<S>(m);
      S var = (blk.array() - mu).square().sum() / static_cast<S>(m);
      S is = S(1) / std::sqrt(var + eps);
      (*inv_std)[i * groups + g] = is;
      Xh.middleCols(g * Cg, Cg) = (blk.array() - mu) * is;
      Y.middleCols(g * Cg, Cg) =
          (Xh.middleCols(g * Cg, Cg).array().rowwise() * G.row(0).segment(g * Cg, Cg).array())
              .rowwise() +
          Bt.row(0).segment(g * Cg, Cg).array();
    }
  });

  n->backward_fn = [px = x.node(), pg = gamma.node(), pbta = beta.node(), xhat, inv_std, BF, P, C,
                    groups, Cg, m](Node<S>& self) {
    if (pg->requires_grad || pbta->requires_grad) {
      if (pg->requires_grad) pg->ensure_grad();
      if (pbta->requires_grad) pbta->ensure_grad();
      std::vector<MatRM<S>> gparts(BF), bparts(BF);
      parallel_for(BF, [&](int64_t i) {
        CMapMatRM<S> dY(self.grad.data() + i * P * C, P, C);
        CMapMatRM<S> Xh(xhat->data() + i * P * C, P, C);
        gparts[i] = (dY.array() * Xh.array()).colwise().sum().matrix();
        bparts[i] = dY.colwise().sum();
      });
      for (Index i = 0; i < BF; ++i) {
        if (pg->requires_grad) as_mat(pg->grad, 1, C) += gparts[i];
        if (pbta->requires_grad) as_mat(pbta->grad, 1, C) += bparts[i];
      }
    }
    if (!px->requires_grad) return;
    px->ensure_grad();
    parallel_for(BF, [&](int64_t i) {
      CMapMatRM<S> dY(self.grad.data() + i * P * C, P, C);
      CMapMatRM<S> Xh(xhat->data() + i * P * C, P, C);
      MapMatRM<S> dX(px->grad.data() + i * P * C, P, C);
      auto G = as_cmat(pg->value, 1, C);
      for (Index g = 0; g < groups; ++g) {
        auto dYg = dY.middleCols(g * Cg, Cg);
        auto Xhg = Xh.middleCols(g * Cg, Cg);
        // dxhat = dy * gamma
        MatRM<S> dXh = (dYg.array().rowwise() * G.row(0).segment(g * Cg, Cg).array()).matrix();
        S mean_dxh = dXh.sum() / static_cast<S>(m);
        S mean_dxh_xh = (dXh.array() * Xhg.array()).sum() / static_cast<S>(m);
        S is = (*inv_std)[i * groups + g];
        dX.middleCols(g * Cg, Cg).array() +=
            is * (dXh.array() - mean_dxh - Xhg.array() * mean_dxh_xh);
      }
    });
  };
  return Var<S>(n);
}

// x (..., C): per-token stats over the last dim; affine per channel.
template <typename S>
inline Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-5)) {
  const Index C = x.shape().back();
  const Index T = x.size() / C;
  VL_CHECK(gamma.shape() == Shape({C}) && beta.shape() == Shape({C}), "layer_norm: affine shape");
  auto n = detail::make_op<S>(x.shape(), {x, gamma, beta});
  n->value.resize(x.size());
  auto xhat = std::make_shared<ArrX<S>>(x.size());
  auto inv_std = std::make_shared<ArrX<S>>(T);
  {
    auto X = as_cmat(x.value(), T, C);
    auto Y = as_mat(n->value, T, C);
    MapMatRM<S> Xh(xhat->data(), T, C);
    auto G = as_cmat(gamma.value(), 1, C);
    auto Bt = as_cmat(beta.value(), 1, C);
    for_chunks(T, kGemmChunks, [&](Index lo, Index hi) {
      for (Index r = lo; r < hi; ++r) {
        S mu = X.row(r).sum() / static_cast<S>(C);
        S var = (X.row(r).array() - mu).square().sum() / static_cast<S>(C);
        S is = S(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        Xh.row(r) = (X.row(r).array() - mu) * is;
        Y.row(r) = Xh.row(r).array() * G.row(0).array() + Bt.row(0).array();
      }
    });
  }
  n->backward_fn = [px = x.node(), pg = gamma.node(), pbta = beta.node(), xhat, inv_std, T,
                    C](Node<S>& self) {
    auto dY = as_cmat(self.grad, T, C);
    CMapMatRM<S> Xh(xhat->data(), T, C);
    if (pg->requires_grad || pbta->requires_grad) {
      if (pg->requires_grad) {
        pg->ensure_grad();
        as_mat(pg->grad, 1, C) += (dY.array() * Xh.array()).colwise().sum().matrix();
      }
      if (pbta->requires_grad) {
        pbta->ensure_grad();
        as_mat(pbta->grad, 1, C) += dY.colwise().sum();
      }
    }
    if (!px->requires_grad) return;
    px->ensure_grad();
    auto dX = as_mat(px->grad, T, C);
    auto G = as_cmat(pg->value, 1, C);
    for_chunks(T, kGemmChunks, [&](Index lo, Index hi) {
      for (Index r = lo; r < hi; ++r) {
        Eigen::Array<S, 1, Eigen::Dynamic> dXh = dY.row(r).array() * G.row(0).array();
        S mean_dxh = dXh.sum() / static_cast<S>(C);
        S mean_dxh_xh = (dXh * Xh.row(r).array()).sum() / static_cast<S>(C);
        dX.row(r).array() +=
            (*inv_std)[r] * (dXh - mean_dxh - Xh.row(r).array() * mean_dxh_xh);
      }
    });
  };
  return Var<S>(n);
}

// ---- embedding ------------------------------------------------------------------

template <typename S>
inline Var<S> embedding(Var<S> table, const std::vector<Index>& ids) {
  VL_CHECK(table.shape().size() == 2, "embedding: table rank 2");
  const Index V = table.shape()[0], E = table.shape()[1];
  const Index L = static_cast<Index>(ids.size());
  for (Index id : ids) VL_CHECK(id >= 0 && id < V, "embedding: id out of vocabulary");
  auto n = detail::make_op<S>({L, E}, {table});
  n->value.resize(L * E);
  for (Index i = 0; i < L; ++i)
    n->value.segment(i * E, E) = table.value().segment(ids[i] * E, E);
  n->backward_fn = [pt = table.node(), ids, E](Node<S>& self) {
    if (!pt->requires_grad) return;
    pt->ensure_grad();
    for (size_t i = 0; i < ids.size(); ++i)
      pt->grad.segment(ids[i] * E, E) += self.grad.segment(static_cast<Index>(i) * E, E);
  };
  return Var<S>(n);
}

// ---- appearance debias ------------------------------------------------------------

// y_i = sqrt(beta^2+1) * x_i - beta * x_anchor, frame-wise with one shared anchor.
// x (B, F, ...), anchor indexes the frame axis.
template <typename S>
inline Var<S> debias_frames(Var<S> x, Index anchor, S beta) {
  const Shape& xs = x.shape();
  VL_CHECK(xs.size() >= 2, "debias_frames: rank >= 2 required");
  const Index B = xs[0], F = xs[1];
  VL_CHECK(anchor >= 0 && anchor < F, "debias_frames: anchor out of range");
  const Index M = x.size() / (B * F);
  const S c1 = std::sqrt(beta * beta + S(1));
  auto n = detail::make_op<S>(xs, {x});
  n->value.resize(x.size());
  for (Index b = 0; b < B; ++b) {
    const S* xa = x.value().data() + (b * F + anchor) * M;
    for (Index f = 0; f < F; ++f) {
      const S* xi = x.value().data() + (b * F + f) * M;
      S* yi = n->value.data() + (b * F + f) * M;
      for (Index j = 0; j < M; ++j) yi[j] = c1 * xi[j] - beta * xa[j];
    }
  }
  n->backward_fn = [px = x.node(), B, F, M, anchor, c1, beta](Node<S>& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (Index b = 0; b < B; ++b) {
      S* ga = px->grad.data() + (b * F + anchor) * M;
      for (Index f = 0; f < F; ++f) {
        const S* gy = self.grad.data() + (b * F + f) * M;
        S* gx = px->grad.data() + (b * F + f) * M;
        for (Index j = 0; j < M; ++j) gx[j] += c1 * gy[j];
        for (Index j = 0; j < M; ++j) ga[j] -= beta * gy[j];
      }
    }
  };
  return Var<S>(n);
}

// ---- dropout --------------------------------------------------------------------

// Inverted dropout mask; multiply with the branch being regularized.
template <typename S>
inline Tensor<S> dropout_mask(const Shape& shape, S p, Rng& rng) {
  VL_CHECK(p >= S(0) && p < S(1), "dropout_mask: p in [0,1)");
  Tensor<S> m = Tensor<S>::zeros(shape);
  const S keep = S(1) - p;
  for (Index i = 0; i < m.size(); ++i)
    m.data[i] = rng.uniform() < static_cast<double>(p) ? S(0) : S(1) / keep;
  return m;
}

}  // namespace vidlora
