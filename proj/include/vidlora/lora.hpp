// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapter algebra and the injection policy: spatial sets touch spatial
// self-attention and feed-forward linears, temporal sets touch their temporal
// counterparts, and cross-attention is never adapted.

#pragma once

#include "vidlora/autodiff.hpp"

#include <map>
#include <string>
#include <vector>

namespace vidlora {

enum class AdapterKind { spatial, temporal };

inline const char* adapter_kind_name(AdapterKind k) {
  return k == AdapterKind::spatial ? "spatial" : "temporal";
}
inline AdapterKind adapter_kind_from_name(const std::string& s) {
  if (s == "spatial") return AdapterKind::spatial;
  if (s == "temporal") return AdapterKind::temporal;
  fail("unknown adapter kind '" + s + "'");
}

// Delta = B * A with B (d x r), A (r x k); applied as x -> x + gamma * x A^T B^T.
// A and B are long-lived autodiff leaves so optimizer state can key off them.
template <typename S>
struct LoRAAdapter {
  std::string target_path;
  Index d = 0, k = 0, rank = 0;
  S scale = S(1);
  Var<S> A;  // (rank, k)
  Var<S> B;  // (d, rank)
};

template <typename S>
inline LoRAAdapter<S> init_adapter(const std::string& target_path, Index d, Index k, Index rank,
                                   uint64_t seed, S init_std = S(0.02)) {
  VL_CHECK(d >= 1 && k >= 1 && rank >= 1, "init_adapter: bad dims");
  VL_CHECK(rank <= std::min(d, k),
           "init_adapter: rank " + std::to_string(rank) + " exceeds min(d,k) for " + target_path);
  LoRAAdapter<S> a;
  a.target_path = target_path;
  a.d = d;
  a.k = k;
  a.rank = rank;
  a.scale = S(1);
  Rng rng(mix_seed(seed, std::hash<std::string>{}(target_path)));
  a.A = Var<S>::leaf(Tensor<S>::randn({rank, k}, rng, static_cast<double>(init_std)), false);
  a.B = Var<S>::leaf(Tensor<S>::zeros({d, rank}), false);
  return a;
}

// W0 + gamma * B A, densely. The factored forward path never forms this product;
// it exists as the algebraic reference and for tests.
template <typename S>
inline MatRM<S> effective_weight(const MatRM<S>& W0, const LoRAAdapter<S>& adapter, S gamma) {
  VL_CHECK(W0.rows() == adapter.d && W0.cols() == adapter.k, "effective_weight: dim mismatch");
  CMapMatRM<S> B(adapter.B.value().data(), adapter.d, adapter.rank);
  CMapMatRM<S> A(adapter.A.value().data(), adapter.rank, adapter.k);
  return W0 + gamma * (B * A);
}

template <typename S>
struct AdapterSet {
  AdapterKind kind = AdapterKind::spatial;
  std::string source_id;
  Index rank = 0;
  std::map<std::string, LoRAAdapter<S>> adapters;  // ordered by path

  std::vector<Var<S>> parameters() {
    std::vector<Var<S>> out;
    out.reserve(adapters.size() * 2);
    for (auto& [path, a] : adapters) {
      out.push_back(a.A);
      out.push_back(a.B);
    }
    return out;
  }

  void set_trainable(bool t) {
    for (auto& [path, a] : adapters) {
      a.A.set_trainable(t);
      a.B.set_trainable(t);
    }
  }

  Index param_count() const {
    Index n = 0;
    for (const auto& [path, a] : adapters) n += a.A.size() + a.B.size();
    return n;
  }
};

// Runtime binding of one adapter to a layer: the layer adds gamma * x A^T B^T.
template <typename S>
struct AdapterBinding {
  const LoRAAdapter<S>* adapter = nullptr;
  S gamma = S(1);
};

struct InjectSpec {
  bool trainable = false;
  bool use_set_scale = true;  // gamma falls back to the adapter's own scale
  double gamma = 1.0;
};

// RAII injection: binds every adapter of the given sets into the model, validates the
// kind/path policy, and restores the model exactly on destruction.
template <typename S, typename Model>
class Injection {
 public:
  Injection(Model& model, std::vector<std::pair<AdapterSet<S>*, InjectSpec>> sets)
      : model_(&model), sets_(std::move(sets)) {
    for (auto& [set, spec] : sets_) {
      VL_CHECK(set != nullptr, "inject: null adapter set");
      for (auto& [path, adapter] : set->adapters) {
        model_->bind_adapter(path, set->kind, AdapterBinding<S>{
            &adapter, spec.use_set_scale ? adapter.scale : static_cast<S>(spec.gamma)});
        touched_.push_back(path);
      }
      set->set_trainable(spec.trainable);
    }
  }

  Injection(const Injection&) = delete;
  Injection& operator=(const Injection&) = delete;

  ~Injection() {
    for (auto& [set, spec] : sets_) {
      for (auto& [path, adapter] : set->adapters) model_->unbind_adapter(path);
      set->set_trainable(false);
    }
  }

  const std::vector<std::string>& touched_paths() const { return touched_; }

 private:
  Model* model_;
  std::vector<std::pair<AdapterSet<S>*, InjectSpec>> sets_;
  std::vector<std::string> touched_;
};

}  // namespace vidlora
