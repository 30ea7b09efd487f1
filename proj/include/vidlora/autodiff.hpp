// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over flat row-major arrays. The graph is rebuilt per step
// (define-by-run); leaves are long-lived parameters, everything else is freed when
// the loss handle goes out of scope. A node carries requires_grad = "some trainable
// leaf is an ancestor", which prunes backward work below the lowest adapter or
// trainable layer.

#pragma once

#include "vidlora/parallel.hpp"
#include "vidlora/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>

namespace vidlora {

template <typename S>
struct Node {
  ArrX<S> value;
  Shape shape;
  ArrX<S> grad;  // allocated on demand
  bool requires_grad = false;
  bool is_leaf = false;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad = ArrX<S>::Zero(value.size());
  }
};

template <typename S>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<S>> n) : n_(std::move(n)) {}

  static Var leaf(Tensor<S> t, bool trainable) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(t.data);
    n->shape = std::move(t.shape);
    n->is_leaf = true;
    n->requires_grad = trainable;
    return Var(n);
  }
  static Var constant(Tensor<S> t) { return leaf(std::move(t), false); }

  bool defined() const { return static_cast<bool>(n_); }
  Node<S>* node() const { return n_.get(); }
  const std::shared_ptr<Node<S>>& ptr() const { return n_; }

  const Shape& shape() const { return n_->shape; }
  Index size() const { return n_->value.size(); }
  ArrX<S>& value() { return n_->value; }
  const ArrX<S>& value() const { return n_->value; }
  ArrX<S>& grad() { n_->ensure_grad(); return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }
  void set_trainable(bool t) const {
    VL_CHECK(n_->is_leaf, "set_trainable on non-leaf");
    n_->requires_grad = t;
  }
  void zero_grad() const {
    if (n_->grad.size()) n_->grad.setZero();
  }
  Tensor<S> tensor() const { return Tensor<S>(n_->shape, n_->value); }

 private:
  std::shared_ptr<Node<S>> n_;
};

namespace detail {

template <typename S>
inline std::shared_ptr<Node<S>> make_op(Shape shape, std::vector<Var<S>> parents) {
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  bool rg = false;
  n->parents.reserve(parents.size());
  for (auto& p : parents) {
    rg = rg || p.node()->requires_grad;
    n->parents.push_back(p.ptr());
  }
  n->requires_grad = rg;
  return n;
}

template <typename S>
inline void accum(Node<S>* p, const ArrX<S>& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  p->grad += g;
}

}  // namespace detail

// ---- backward driver ----------------------------------------------------

template <typename S>
inline void backward(Var<S> loss) {
  VL_CHECK(loss.size() == 1, "backward target must be scalar");
  Node<S>* root = loss.node();
  if (!root->requires_grad) return;

  // iterative post-order topo sort
  std::vector<Node<S>*> topo;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, size_t>> stack;
  stack.push_back({root, 0});
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<S>* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += S(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// ---- map helpers ---------------------------------------------------------

template <typename S>
inline MapMatRM<S> as_mat(ArrX<S>& a, Index rows, Index cols) {
  return MapMatRM<S>(a.data(), rows, cols);
}
template <typename S>
inline CMapMatRM<S> as_cmat(const ArrX<S>& a, Index rows, Index cols) {
  return CMapMatRM<S>(a.data(), rows, cols);
}

// Fixed-count chunking: boundaries depend only on `total`, not on thread count.
inline void for_chunks(Index total, int chunks, const std::function<void(Index, Index)>& fn) {
  if (total <= 0) return;
  int nc = static_cast<int>(std::min<Index>(chunks, total));
  parallel_for(nc, [&](int64_t c) {
    Index lo = total * c / nc;
    Index hi = total * (c + 1) / nc;
    fn(lo, hi);
  });
}

inline constexpr int kGemmChunks = 8;

// ---- elementwise / arithmetic --------------------------------------------

template <typename S>
inline Var<S> add(Var<S> a, Var<S> b) {
  VL_CHECK(a.shape() == b.shape(), "add shape mismatch");
  auto n = detail::make_op<S>(a.shape(), {a, b});
  n->value = a.value() + b.value();
  n->backward_fn = [pa = a.node(), pb = b.node()](Node<S>& self) {
    detail::accum(pa, self.grad);
    detail::accum(pb, self.grad);
  };
  return Var<S>(n);
}

template <typename S>
inline Var<S> sub(Var<S> a, Var<S> b) {
  VL_CHECK(a.shape() == b.shape(), "sub shape mismatch");
  auto n = detail::make_op<S>(a.shape(), {a, b});
  n->value = a.value() - b.value();
  n->backward_fn = [pa = a.node(), pb = b.node()](Node<S>& self) {
    detail::accum(pa, self.grad);
    if (pb->requires_grad) {
      pb->ensure_grad();
      pb->grad -= self.grad;
    }
  };
  return Var<S>(n);
}

template <typename S>
inline Var<S> mul(Var<S> a, Var<S> b) {
  VL_CHECK(a.shape() == b.shape(), "mul shape mismatch");
  auto n = detail::make_op<S>(a.shape(), {a, b});
  n->value = a.value() * b.value();
  n->backward_fn = [pa = a.node(), pb = b.node()](Node<S>& self) {
    if (pa->requires_grad) detail::accum(pa, ArrX<S>(self.grad * pb->value));
    if (pb->requires_grad) detail::accum(pb, ArrX<S>(self.grad * pa->value));
  };
  return Var<S>(n);
}

template <typename S>
inline Var<S> scale(Var<S> a, S c) {
  auto n = detail::make_op<S>(a.shape(), {a});
  n->value = a.value() * c;
  n->backward_fn = [pa = a.node(), c](Node<S>& self) {
    if (pa->requires_grad) detail::accum(pa, ArrX<S>(self.grad * c));
  };
  return Var<S>(n);
}

// a + c * b
template <typename S>
inline Var<S> add_scaled(Var<S> a, Var<S> b, S c) {
  VL_CHECK(a.shape() == b.shape(), "add_scaled shape mismatch");
  auto n = detail::make_op<S>(a.shape(), {a, b});
  n->value = a.value() + c * b.value();
  n->backward_fn = [pa = a.node(), pb = b.node(), c](Node<S>& self) {
    detail::accum(pa, self.grad);
    if (pb->requires_grad) detail::accum(pb, ArrX<S>(self.grad * c));
  };
  return Var<S>(n);
}

template <typename S>
inline Var<S> silu(Var<S> a) {
  auto n = detail::make_op<S>(a.shape(), {a});
  ArrX<S> sig = (S(1) / (S(1) + (-a.value()).exp()));
  n->value = a.value() * sig;
  n->backward_fn = [pa = a.node(), sig = std::move(sig)](Node<S>& self) {
    if (!pa->requires_grad) return;
    // d/dx x*s(x) = s(x) (1 + x (1 - s(x)))
    detail::accum(pa, ArrX<S>(self.grad * sig * (S(1) + pa->value * (S(1) - sig))));
  };
  return Var<S>(n);
}

// ---- reshape / shape-only ------------------------------------------------

template <typename S>
inline Var<S> reshape(Var<S> a, Shape s) {
  VL_CHECK(numel(s) == a.size(), "reshape numel mismatch");
  auto n = detail::make_op<S>(std::move(s), {a});
  n->value = a.value();
  n->backward_fn = [pa = a.node()](Node<S>& self) { detail::accum(pa, self.grad); };
  return Var<S>(n);
}

// ---- matmul family ---------------------------------------------------------

// y = x * W^T + b, applied over the last dim of x: x (..., K), W (D, K), b (D).
template <typename S>
inline Var<S> linear(Var<S> x, Var<S> W, Var<S> b) {
  const Shape& xs = x.shape();
  VL_CHECK(!xs.empty() && W.shape().size() == 2, "linear: bad ranks");
  const Index K = xs.back();
  const Index D = W.shape()[0];
  VL_CHECK(W.shape()[1] == K, "linear: inner dim mismatch");
  const Index T = x.size() / K;
  const bool has_bias = b.defined();
  if (has_bias) VL_CHECK(b.shape() == Shape{D}, "linear: bias shape");

  Shape out_shape(xs.begin(), xs.end() - 1);
  out_shape.push_back(D);
  std::vector<Var<S>> parents = has_bias ? std::vector<Var<S>>{x, W, b} : std::vector<Var<S>>{x, W};
  auto n = detail::make_op<S>(out_shape, parents);
  n->value.resize(T * D);
  {
    auto X = as_cmat(x.value(), T, K);
    auto Wm = as_cmat(W.value(), D, K);
    auto Y = as_mat(n->value, T, D);
    for_chunks(T, kGemmChunks, [&](Index lo, Index hi) {
      Y.middleRows(lo, hi - lo).noalias() = X.middleRows(lo, hi - lo) * Wm.transpose();
    });
    if (has_bias) Y.rowwise() += as_cmat(b.value(), 1, D).row(0);
  }
  Node<S>* pb = has_bias ? b.node() : nullptr;
  n->backward_fn = [px = x.node(), pw = W.node(), pb, T, K, D](Node<S>& self) {
    auto dY = as_cmat(self.grad, T, D);
    auto X = as_cmat(px->value, T, K);
    auto Wm = as_cmat(pw->value, D, K);
    if (px->requires_grad) {
      px->ensure_grad();
      auto dX = as_mat(px->grad, T, K);
      for_chunks(T, kGemmChunks, [&](Index lo, Index hi) {
        dX.middleRows(lo, hi - lo).noalias() += dY.middleRows(lo, hi - lo) * Wm;
      });
    }
    if (pw->requires_grad) {
      pw->ensure_grad();
      // chunked partials reduced in fixed order for determinism
      int nc = static_cast<int>(std::min<Index>(kGemmChunks, T));
      std::vector<MatRM<S>> parts(nc);
      parallel_for(nc, [&](int64_t c) {
        Index lo = T * c / nc, hi = T * (c + 1) / nc;
        parts[c].noalias() = dY.middleRows(lo, hi - lo).transpose() * X.middleRows(lo, hi - lo);
      });
      auto dW = as_mat(pw->grad, D, K);
      for (auto& p : parts) dW += p;
    }
    if (pb && pb->requires_grad) {
      pb->ensure_grad();
      auto db = as_mat(pb->grad, 1, D);
      db.row(0) += dY.colwise().sum();
    }
  };
  return Var<S>(n);
}

template <typename S>
inline Var<S> linear_nobias(Var<S> x, Var<S> W) {
  return linear(x, W, Var<S>());
}

// 2-D matmul, mostly for tests and small compositions.
template <typename S>
inline Var<S> matmul(Var<S> a, Var<S> b) {
  VL_CHECK(a.shape().size() == 2 && b.shape().size() == 2, "matmul: rank 2 required");
  const Index M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  VL_CHECK(b.shape()[0] == K, "matmul: inner dim mismatch");
  auto n = detail::make_op<S>({M, N}, {a, b});
  n->value.resize(M * N);
  as_mat(n->value, M, N).noalias() = as_cmat(a.value(), M, K) * as_cmat(b.value(), K, N);
  n->backward_fn = [pa = a.node(), pb = b.node(), M, K, N](Node<S>& self) {
    auto dY = as_cmat(self.grad, M, N);
    if (pa->requires_grad) {
      pa->ensure_grad();
      as_mat(pa->grad, M, K).noalias() += dY * as_cmat(pb->value, K, N).transpose();
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      as_mat(pb->grad, K, N).noalias() += as_cmat(pa->value, M, K).transpose() * dY;
    }
  };
  return Var<S>(n);
}

// Batched a (N,T1,K) x b (N,T2,K)^T -> (N,T1,T2)
template <typename S>
inline Var<S> bmm_nt(Var<S> a, Var<S> b) {
  VL_CHECK(a.shape().size() == 3 && b.shape().size() == 3, "bmm_nt: rank 3");
  const Index N = a.shape()[0], T1 = a.shape()[1], K = a.shape()[2], T2 = b.shape()[1];
  VL_CHECK(b.shape()[0] == N && b.shape()[2] == K, "bmm_nt shape mismatch");
  auto n = detail::make_op<S>({N, T1, T2}, {a, b});
  n->value.resize(N * T1 * T2);
  parallel_for(N, [&](int64_t i) {
    CMapMatRM<S> A(a.value().data() + i * T1 * K, T1, K);
    CMapMatRM<S> B(b.value().data() + i * T2 * K, T2, K);
    MapMatRM<S> Y(n->value.data() + i * T1 * T2, T1, T2);
    Y.noalias() = A * B.transpose();
  });
  n->backward_fn = [pa = a.node(), pb = b.node(), N, T1, T2, K](Node<S>& self) {
    bool ga = pa->requires_grad, gb = pb->requires_grad;
    if (ga) pa->ensure_grad();
    if (gb) pb->ensure_grad();
    parallel_for(N, [&](int64_t i) {
      CMapMatRM<S> dY(self.grad.data() + i * T1 * T2, T1, T2);
      if (ga) {
        CMapMatRM<S> B(pb->value.data() + i * T2 * K, T2, K);
        MapMatRM<S> dA(pa->grad.data() + i * T1 * K, T1, K);
        dA.noalias() += dY * B;
      }
      if (gb) {
        CMapMatRM<S> A(pa->value.data() + i * T1 * K, T1, K);
        MapMatRM<S> dB(pb->grad.data() + i * T2 * K, T2, K);
        dB.noalias() += dY.transpose() * A;
      }
    });
  };
  return Var<S>(n);
}

// Batched a (N,T1,T2) x b (N,T2,K) -> (N,T1,K)
template <typename S>
inline Var<S> bmm_nn(Var<S> a, Var<S> b) {
  VL_CHECK(a.shape().size() == 3 && b.shape().size() == 3, "bmm_nn: rank 3");
  const Index N = a.shape()[0], T1 = a.shape()[1], T2 = a.shape()[2], K = b.shape()[2];
  VL_CHECK(b.shape()[0] == N && b.shape()[1] == T2, "bmm_nn shape mismatch");
  auto n = detail::make_op<S>({N, T1, K}, {a, b});
  n->value.resize(N * T1 * K);
  parallel_for(N, [&](int64_t i) {
    CMapMatRM<S> A(a.value().data() + i * T1 * T2, T1, T2);
    CMapMatRM<S> B(b.value().data() + i * T2 * K, T2, K);
    MapMatRM<S> Y(n->value.data() + i * T1 * K, T1, K);
    Y.noalias() = A * B;
  });
  n->backward_fn = [pa = a.node(), pb = b.node(), N, T1, T2, K](Node<S>& self) {
    bool ga = pa->requires_grad, gb = pb->requires_grad;
    if (ga) pa->ensure_grad();
    if (gb) pb->ensure_grad();
    parallel_for(N, [&](int64_t i) {
      CMapMatRM<S> dY(self.grad.data() + i * T1 * K, T1, K);
      if (ga) {
        CMapMatRM<S> B(pb->value.data() + i * T2 * K, T2, K);
        MapMatRM<S> dA(pa->grad.data() + i * T1 * T2, T1, T2);
        dA.noalias() += dY * B.transpose();
      }
      if (gb) {
        CMapMatRM<S> A(pa->value.data() + i * T1 * T2, T1, T2);
        MapMatRM<S> dB(pb->grad.data() + i * T2 * K, T2, K);
        dB.noalias() += A.transpose() * dY;
      }
    });
  };
  return Var<S>(n);
}

// a (N,T1,K) x shared b (T2,K)^T -> (N,T1,T2). Used for cross-attention where the
// key/value set is one prompt shared by all (batch, frame, head % nh) sequences:
// the shared operand cycles with period `cycle` (b has shape (cycle, T2, K)).
template <typename S>
inline Var<S> bmm_nt_cycle(Var<S> a, Var<S> b) {
  VL_CHECK(a.shape().size() == 3 && b.shape().size() == 3, "bmm_nt_cycle: rank 3");
  const Index N = a.shape()[0], T1 = a.shape()[1], K = a.shape()[2];
  const Index C = b.shape()[0], T2 = b.shape()[1];
  VL_CHECK(b.shape()[2] == K && N % C == 0, "bmm_nt_cycle shape mismatch");
  auto n = detail::make_op<S>({N, T1, T2}, {a, b});
  n->value.resize(N * T1 * T2);
  parallel_for(N, [&](int64_t i) {
    CMapMatRM<S> A(a.value().data() + i * T1 * K, T1, K);
    CMapMatRM<S> B(b.value().data() + (i % C) * T2 * K, T2, K);
    MapMatRM<S> Y(n->value.data() + i * T1 * T2, T1, T2);
    Y.noalias() = A * B.transpose();
  });
  n->backward_fn = [pa = a.node(), pb = b.node(), N, T1, T2, K, C](Node<S>& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      parallel_for(N, [&](int64_t i) {
        CMapMatRM<S> dY(self.grad.data() + i * T1 * T2, T1, T2);
        CMapMatRM<S> B(pb->value.data() + (i % C) * T2 * K, T2, K);
        MapMatRM<S> dA(pa->grad.data() + i * T1 * K, T1, K);
        dA.noalias() += dY * B;
      });
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      // serial: accumulation order over i is fixed
      for (Index i = 0; i < N; ++i) {
        CMapMatRM<S> dY(self.grad.data() + i * T1 * T2, T1, T2);
        CMapMatRM<S> A(pa->value.data() + i * T1 * K, T1, K);
        MapMatRM<S> dB(pb->grad.data() + (i % C) * T2 * K, T2, K);
        dB.noalias() += dY.transpose() * A;
      }
    }
  };
  return Var<S>(n);
}

// a (N,T1,T2) x shared b (cycle,T2,K) -> (N,T1,K)
template <typename S>
inline Var<S> bmm_nn_cycle(Var<S> a, Var<S> b) {
  VL_CHECK(a.shape().size() == 3 && b.shape().size() == 3, "bmm_nn_cycle: rank 3");
  const Index N = a.shape()[0], T1 = a.shape()[1], T2 = a.shape()[2];
  const Index C = b.shape()[0], K = b.shape()[2];
  VL_CHECK(b.shape()[1] == T2 && N % C == 0, "bmm_nn_cycle shape mismatch");
  auto n = detail::make_op<S>({N, T1, K}, {a, b});
  n->value.resize(N * T1 * K);
  parallel_for(N, [&](int64_t i) {
    CMapMatRM<S> A(a.value().data() + i * T1 * T2, T1, T2);
    CMapMatRM<S> B(b.value().data() + (i % C) * T2 * K, T2, K);
    MapMatRM<S> Y(n->value.data() + i * T1 * K, T1, K);
    Y.noalias() = A * B;
  });
  n->backward_fn = [pa = a.node(), pb = b.node(), N, T1, T2, K, C](Node<S>& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      parallel_for(N, [&](int64_t i) {
        CMapMatRM<S> dY(self.grad.data() + i * T1 * K, T1, K);
        CMapMatRM<S> B(pb->value.data() + (i % C) * T2 * K, T2, K);
        MapMatRM<S> dA(pa->grad.data() + i * T1 * T2, T1, T2);
        dA.noalias() += dY * B.transpose();
      });
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (Index i = 0; i < N; ++i) {
        CMapMatRM<S> dY(self.grad.data() + i * T1 * K, T1, K);
        CMapMatRM<S> A(pa->value.data() + i * T1 * T2, T1, T2);
        MapMatRM<S> dB(pb->grad.data() + (i % C) * T2 * K, T2, K);
        dB.noalias() += A.transpose() * dY;
      }
    }
  };
  return Var<S>(n);
}

// ---- softmax / reductions --------------------------------------------------

template <typename S>
inline Var<S> softmax_lastdim(Var<S> x) {
  const Index C = x.shape().back();
  const Index T = x.size() / C;
  auto n = detail::make_op<S>(x.shape(), {x});
  n->value.resize(x.size());
  {
    auto X = as_cmat(x.value(), T, C);
    auto Y = as_mat(n->value, T, C);
    for_chunks(T, kGemmChunks, [&](Index lo, Index hi) {
      for (Index r = lo; r < hi; ++r) {
        S m = X.row(r).maxCoeff();
        Y.row(r) = (X.row(r).array() - m).exp();
        Y.row(r) /= Y.row(r).sum();
      }
    });
  }
  n->backward_fn = [px = x.node(), T, C](Node<S>& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    auto Y = as_cmat(self.value, T, C);
    auto dY = as_cmat(self.grad, T, C);
    auto dX = as_mat(px->grad, T, C);
    for_chunks(T, kGemmChunks, [&](Index lo, Index hi) {
      for (Index r = lo; r < hi; ++r) {
        S dot = (dY.row(r).array() * Y.row(r).array()).sum();
        dX.row(r).array() += (dY.row(r).array() - dot) * Y.row(r).array();
      }
    });
  };
  return Var<S>(n);
}

template <typename S>
inline Var<S> mean_all(Var<S> x) {
  auto n = detail::make_op<S>({1}, {x});
  n->value.resize(1);
  n->value[0] = x.value().sum() / static_cast<S>(x.size());
  n->backward_fn = [px = x.node()](Node<S>& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    px->grad += self.grad[0] / static_cast<S>(px->value.size());
  };
  return Var<S>(n);
}

// mean((x - target)^2) against a constant target
template <typename S>
inline Var<S> mse_vs(Var<S> x, const Tensor<S>& target) {
  VL_CHECK(x.shape() == target.shape, "mse_vs shape mismatch");
  auto n = detail::make_op<S>({1}, {x});
  ArrX<S> diff = x.value() - target.data;
  n->value.resize(1);
  n->value[0] = diff.square().sum() / static_cast<S>(diff.size());
  n->backward_fn = [px = x.node(), diff = std::move(diff)](Node<S>& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    px->grad += (S(2) * self.grad[0] / static_cast<S>(diff.size())) * diff;
  };
  return Var<S>(n);
}

}  // namespace vidlora
