// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0
//
// Miniature text-conditioned 3D U-Net denoiser. Blocks follow the usual video
// diffusion anatomy: per-frame convolutions and spatial transformers (spatial
// self-attention + cross-attention to the prompt), plus temporal transformers
// (self-attention along the frame axis with sinusoidal frame encodings). Every
// transformer linear carries a stable string path so adapters can address it.

#pragma once

#include "vidlora/lora.hpp"
#include "vidlora/ops_nn.hpp"
#include "vidlora/vocab.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace vidlora {

struct UNetConfig {
  Index base_channels = 16;
  std::vector<Index> channel_multipliers = {1, 2, 4};
  std::vector<Index> attn_levels = {1, 2};  // levels that carry transformer pairs
  Index attention_head_dim = 8;
  Index num_frames = 8;
  Index frame_size = 32;
  Index in_channels = 3;
  Index text_embed_dim = 32;
  Index time_embed_dim = 64;
  Index ff_mult = 4;
  Index norm_groups = 8;
  Index vocab_size = 0;  // 0: use the built-in vocabulary
  // Temporal attention/ff output projections start at zero so a fresh model is
  // frame-independent; temporal mixing is learned, never baked in at init.
  bool zero_init_projections = true;

  void validate() const {
    VL_CHECK(base_channels >= 4, "config: base_channels too small");
    VL_CHECK(!channel_multipliers.empty(), "config: need at least one level");
    for (Index m : channel_multipliers) VL_CHECK(m >= 1, "config: bad multiplier");
    const Index levels = static_cast<Index>(channel_multipliers.size());
    for (Index l : attn_levels)
      VL_CHECK(l >= 0 && l < levels, "config: attn level out of range");
    VL_CHECK(frame_size >= 4 && frame_size % (Index(1) << (levels - 1)) == 0,
             "config: frame_size not divisible across levels");
    for (size_t i = 0; i < channel_multipliers.size(); ++i) {
      const Index c = base_channels * channel_multipliers[i];
      VL_CHECK(c % attention_head_dim == 0, "config: head dim must divide channels");
    }
    VL_CHECK(num_frames >= 1 && in_channels >= 1 && text_embed_dim >= 4, "config: bad dims");
    VL_CHECK(time_embed_dim >= 8 && ff_mult >= 1 && norm_groups >= 1, "config: bad dims");
    VL_CHECK(text_embed_dim % 2 == 0 && time_embed_dim % 2 == 0,
             "config: embedding dims must be even");
  }

  Index channels(Index level) const { return base_channels * channel_multipliers[level]; }
  Index resolved_vocab() const { return vocab_size > 0 ? vocab_size : Vocab::instance().size(); }
  bool has_attn(Index level) const {
    for (Index l : attn_levels)
      if (l == level) return true;
    return false;
  }
};

template <typename S>
struct ForwardCtx {
  bool training = false;
  Rng* rng = nullptr;
  S adapter_dropout = S(0);
};

// ---- sinusoidal tables -------------------------------------------------------

template <typename S>
inline Tensor<S> sinusoid_table(Index positions, Index dim) {
  Tensor<S> t = Tensor<S>::zeros({positions, dim});
  const Index half = dim / 2;
  for (Index p = 0; p < positions; ++p) {
    for (Index i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                   static_cast<double>(half));
      const double arg = static_cast<double>(p) * freq;
      t.data[p * dim + i] = static_cast<S>(std::sin(arg));
      t.data[p * dim + half + i] = static_cast<S>(std::cos(arg));
    }
  }
  return t;
}

template <typename S>
inline Tensor<S> value_sinusoid(double value, Index dim) {
  Tensor<S> t = Tensor<S>::zeros({dim});
  const Index half = dim / 2;
  for (Index i = 0; i < half; ++i) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    t.data[i] = static_cast<S>(std::sin(value * freq));
    t.data[half + i] = static_cast<S>(std::cos(value * freq));
  }
  return t;
}

// ---- layers -------------------------------------------------------------------

template <typename S>
struct LinearLayer {
  Var<S> W, b;
  AdapterBinding<S> binding;

  static LinearLayer make(Index d, Index k, Rng& rng, bool zero = false) {
    LinearLayer l;
    if (zero) {
      l.W = Var<S>::leaf(Tensor<S>::zeros({d, k}), false);
    } else {
      l.W = Var<S>::leaf(Tensor<S>::randn({d, k}, rng, 1.0 / std::sqrt(static_cast<double>(k))),
                         false);
    }
    l.b = Var<S>::leaf(Tensor<S>::zeros({d}), false);
    return l;
  }

  Var<S> forward(Var<S> x, ForwardCtx<S>& ctx) const {
    Var<S> y = linear(x, W, b);
    if (binding.adapter != nullptr && binding.gamma != S(0)) {
      Var<S> h = x;
      const bool branch_training =
          ctx.training && ctx.adapter_dropout > S(0) && binding.adapter->A.requires_grad();
      if (branch_training) {
        VL_CHECK(ctx.rng != nullptr, "adapter dropout needs a noise source");
        h = mul(h, Var<S>::constant(dropout_mask<S>(x.shape(), ctx.adapter_dropout, *ctx.rng)));
      }
      h = linear_nobias(h, binding.adapter->A);
      h = linear_nobias(h, binding.adapter->B);
      y = add_scaled(y, h, binding.gamma);
    }
    return y;
  }
};

template <typename S>
struct ConvLayer {
  Var<S> W, b;
  Index stride = 1;

  static ConvLayer make(Index cout, Index cin, Index stride, Rng& rng, bool zero = false) {
    ConvLayer c;
    c.stride = stride;
    const double stdev = 1.0 / std::sqrt(9.0 * static_cast<double>(cin));
    c.W = zero ? Var<S>::leaf(Tensor<S>::zeros({cout, 9 * cin}), false)
               : Var<S>::leaf(Tensor<S>::randn({cout, 9 * cin}, rng, stdev), false);
    c.b = Var<S>::leaf(Tensor<S>::zeros({cout}), false);
    return c;
  }

  Var<S> forward(Var<S> x) const { return conv2d(x, W, b, stride); }
};

template <typename S>
struct GroupNormLayer {
  Var<S> g, b;
  Index groups = 1;

  static GroupNormLayer make(Index c, Index want_groups) {
    GroupNormLayer n;
    Index groups = std::min<Index>(want_groups, c);
    while (c % groups != 0) --groups;
    n.groups = groups;
    n.g = Var<S>::leaf(Tensor<S>::full({c}, S(1)), false);
    n.b = Var<S>::leaf(Tensor<S>::zeros({c}), false);
    return n;
  }
  Var<S> forward(Var<S> x) const { return group_norm(x, g, b, groups); }
};

template <typename S>
struct LayerNormLayer {
  Var<S> g, b;
  static LayerNormLayer make(Index c) {
    LayerNormLayer n;
    n.g = Var<S>::leaf(Tensor<S>::full({c}, S(1)), false);
    n.b = Var<S>::leaf(Tensor<S>::zeros({c}), false);
    return n;
  }
  Var<S> forward(Var<S> x) const { return layer_norm(x, g, b); }
};

template <typename S>
struct AttentionLinears {
  LinearLayer<S> q, k, v, o;
};

template <typename S>
struct FeedForward {
  LinearLayer<S> lin1, lin2;
};

// tokens (N, T, C) self-attention
template <typename S>
inline Var<S> self_attention(Var<S> t, const AttentionLinears<S>& a, Index heads,
                             ForwardCtx<S>& ctx) {
  const Index C = t.shape()[2];
  const Index hd = C / heads;
  Var<S> q = split_heads(a.q.forward(t, ctx), heads);
  Var<S> k = split_heads(a.k.forward(t, ctx), heads);
  Var<S> v = split_heads(a.v.forward(t, ctx), heads);
  Var<S> s = scale(bmm_nt(q, k), S(1) / std::sqrt(static_cast<S>(hd)));
  Var<S> o = merge_heads(bmm_nn(softmax_lastdim(s), v), heads);
  return a.o.forward(o, ctx);
}

// tokens (N, T, C) attending to a shared prompt (L, E)
template <typename S>
inline Var<S> cross_attention(Var<S> t, Var<S> cond, const AttentionLinears<S>& a, Index heads,
                              ForwardCtx<S>& ctx) {
  const Index C = t.shape()[2];
  const Index hd = C / heads;
  const Index L = cond.shape()[0];
  Var<S> q = split_heads(a.q.forward(t, ctx), heads);
  Var<S> k = split_heads(reshape(a.k.forward(cond, ctx), {1, L, C}), heads);  // (heads, L, hd)
  Var<S> v = split_heads(reshape(a.v.forward(cond, ctx), {1, L, C}), heads);
  Var<S> s = scale(bmm_nt_cycle(q, k), S(1) / std::sqrt(static_cast<S>(hd)));
  Var<S> o = merge_heads(bmm_nn_cycle(softmax_lastdim(s), v), heads);
  return a.o.forward(o, ctx);
}

template <typename S>
inline Var<S> feed_forward(Var<S> t, const FeedForward<S>& ff, ForwardCtx<S>& ctx) {
  return ff.lin2.forward(silu(ff.lin1.forward(t, ctx)), ctx);
}

// One spatial + temporal transformer pair.
template <typename S>
struct TransformerBlock {
  Index channels = 0, heads = 1;
  LayerNormLayer<S> s_norm1, s_norm2, s_norm3, t_norm1, t_norm2;
  AttentionLinears<S> s_self, s_cross;
  FeedForward<S> s_ff;
  AttentionLinears<S> t_self;
  FeedForward<S> t_ff;

  static TransformerBlock make(Index c, Index head_dim, Index ff_mult, Index text_dim, Rng& rng,
                               bool zero_proj) {
    TransformerBlock b;
    b.channels = c;
    b.heads = c / head_dim;
    b.s_norm1 = LayerNormLayer<S>::make(c);
    b.s_norm2 = LayerNormLayer<S>::make(c);
    b.s_norm3 = LayerNormLayer<S>::make(c);
    b.t_norm1 = LayerNormLayer<S>::make(c);
    b.t_norm2 = LayerNormLayer<S>::make(c);
    auto lin = [&](Index d, Index k, bool zero = false) {
      return LinearLayer<S>::make(d, k, rng, zero);
    };
    b.s_self = {lin(c, c), lin(c, c), lin(c, c), lin(c, c)};
    b.s_cross = {lin(c, c), lin(c, text_dim), lin(c, text_dim), lin(c, c)};
    b.s_ff = {lin(c * ff_mult, c), lin(c, c * ff_mult)};
    b.t_self = {lin(c, c), lin(c, c), lin(c, c), lin(c, c, zero_proj)};
    b.t_ff = {lin(c * ff_mult, c), lin(c, c * ff_mult, zero_proj)};
    return b;
  }

  // x (B,F,H,W,C), cond (L,E)
  Var<S> forward(Var<S> x, Var<S> cond, ForwardCtx<S>& ctx) const {
    const Shape& xs = x.shape();
    const Index B = xs[0], F = xs[1], H = xs[2], W = xs[3], C = xs[4];

    // spatial: attention over the H*W positions of each frame
    Var<S> t = reshape(x, {B * F, H * W, C});
    t = add(t, self_attention(s_norm1.forward(t), s_self, heads, ctx));
    t = add(t, cross_attention(s_norm2.forward(t), cond, s_cross, heads, ctx));
    t = add(t, feed_forward(s_norm3.forward(t), s_ff, ctx));

    // temporal: attention over the F frames of each pixel position
    Var<S> p = permute(reshape(t, {B, F, H, W, C}), {0, 2, 3, 1, 4});  // (B,H,W,F,C)
    t = reshape(p, {B * H * W, F, C});
    Var<S> pe = Var<S>::constant(sinusoid_table<S>(F, C));
    Var<S> h = add_broadcast_trailing(t_norm1.forward(t), pe);
    t = add(t, self_attention(h, t_self, heads, ctx));
    t = add(t, feed_forward(t_norm2.forward(t), t_ff, ctx));
    p = permute(reshape(t, {B, H, W, F, C}), {0, 3, 1, 2, 4});
    return p;
  }
};

template <typename S>
struct ResBlock {
  Index cin = 0, cout = 0;
  GroupNormLayer<S> gn1, gn2;
  ConvLayer<S> conv1, conv2;
  LinearLayer<S> temb_proj;
  std::optional<LinearLayer<S>> skip;  // 1x1 projection when channels change

  static ResBlock make(Index cin, Index cout, Index temb_dim, Index groups, Rng& rng) {
    ResBlock r;
    r.cin = cin;
    r.cout = cout;
    r.gn1 = GroupNormLayer<S>::make(cin, groups);
    r.conv1 = ConvLayer<S>::make(cout, cin, 1, rng);
    r.temb_proj = LinearLayer<S>::make(cout, temb_dim, rng);
    r.gn2 = GroupNormLayer<S>::make(cout, groups);
    r.conv2 = ConvLayer<S>::make(cout, cout, 1, rng);
    if (cin != cout) r.skip = LinearLayer<S>::make(cout, cin, rng);
    return r;
  }

  Var<S> forward(Var<S> x, Var<S> temb, ForwardCtx<S>& ctx) const {
    Var<S> h = conv1.forward(silu(gn1.forward(x)));
    Var<S> tv = reshape(temb_proj.forward(reshape(temb, {1, temb.size()}), ctx), {cout});
    h = add_broadcast_trailing(h, tv);
    h = conv2.forward(silu(gn2.forward(h)));
    Var<S> s = skip ? skip->forward(x, ctx) : x;
    return add(h, s);
  }
};

// ---- the denoiser -----------------------------------------------------------------

struct LayerClasses {
  std::vector<std::string> spatial_self_attn;
  std::vector<std::string> spatial_cross_attn;
  std::vector<std::string> spatial_ff;
  std::vector<std::string> temporal_self_attn;
  std::vector<std::string> temporal_ff;
  std::vector<std::string> other;
};

template <typename S>
class UNet {
 public:
  UNet(UNetConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(mix_seed(seed, 0xD1FFu));
    build(rng);
    register_all();
  }

  UNet(const UNet&) = delete;
  UNet& operator=(const UNet&) = delete;

  const UNetConfig& config() const { return cfg_; }

  // eps prediction; z (B,F,H,W,Cin), cond (L, text_embed_dim)
  Var<S> denoise(Var<S> z, Index t, Var<S> cond, ForwardCtx<S>& ctx) const {
    const Shape& zs = z.shape();
    VL_CHECK(zs.size() == 5, "denoise: z must be (B,F,H,W,C)");
    VL_CHECK(zs[4] == cfg_.in_channels, "denoise: channel mismatch");
    VL_CHECK(zs[2] == zs[3], "denoise: square frames required");
    const Index levels = static_cast<Index>(cfg_.channel_multipliers.size());
    VL_CHECK(zs[2] % (Index(1) << (levels - 1)) == 0, "denoise: resolution not divisible");
    VL_CHECK(t >= 1, "denoise: t must be >= 1");

    Var<S> temb = time_embedding(t, ctx);
    Var<S> x = conv_in_.forward(z);
    std::vector<Var<S>> skips;
    for (Index l = 0; l < levels; ++l) {
      x = down_res_[l].forward(x, temb, ctx);
      if (down_attn_[l]) x = down_attn_[l]->forward(x, cond, ctx);
      skips.push_back(x);
      if (l + 1 < levels) x = down_conv_[l].forward(x);
    }
    x = mid_res1_.forward(x, temb, ctx);
    x = mid_attn_.forward(x, cond, ctx);
    x = mid_res2_.forward(x, temb, ctx);
    for (Index l = levels - 1; l >= 0; --l) {
      x = concat_lastdim(x, skips[l]);
      x = up_res_[l].forward(x, temb, ctx);
      if (up_attn_[l]) x = up_attn_[l]->forward(x, cond, ctx);
      if (l > 0) x = up_conv_[l - 1].forward(upsample_nearest2(x));
    }
    x = silu(out_norm_.forward(x));
    return out_conv_.forward(x);
  }

  Var<S> encode_prompt_var(const PromptSpec& prompt) const {
    VL_CHECK(!prompt.tokens.empty(), "encode_prompt: empty prompt");
    Var<S> e = embedding(token_table_, prompt.tokens);
    Var<S> pe = Var<S>::constant(
        sinusoid_table<S>(static_cast<Index>(prompt.tokens.size()), cfg_.text_embed_dim));
    return add(e, pe);
  }

  Tensor<S> encode_prompt(const PromptSpec& prompt) const {
    return encode_prompt_var(prompt).tensor();
  }

  // Convenience graph-free forward used by samplers and probes.
  Tensor<S> denoise_tensor(const Tensor<S>& z, Index t, const PromptSpec& prompt) const {
    ForwardCtx<S> ctx;
    Var<S> zv = Var<S>::constant(z);
    Var<S> out = denoise(zv, t, encode_prompt_var(prompt), ctx);
    return out.tensor();
  }

  const LayerClasses& enumerate_layers() const { return classes_; }

  std::pair<Index, Index> injectable_dims(const std::string& path) const {
    auto it = injectable_.find(path);
    VL_CHECK(it != injectable_.end(), "unknown injectable path '" + path + "'");
    return {it->second->W.shape()[0], it->second->W.shape()[1]};
  }

  void bind_adapter(const std::string& path, AdapterKind kind, AdapterBinding<S> binding) {
    auto it = injectable_.find(path);
    if (it == injectable_.end()) {
      std::string msg = "inject: unknown target path '" + path + "'; known paths:";
      for (const auto& [p, l] : injectable_) msg += " " + p;
      fail(msg);
    }
    const std::string& cls = injectable_class_.at(path);
    VL_CHECK(cls != "spatial_cross_attn", "inject: cross-attention may not be adapted: " + path);
    if (kind == AdapterKind::spatial)
      VL_CHECK(cls == "spatial_self_attn" || cls == "spatial_ff",
               "inject: spatial set may not target " + cls + " (" + path + ")");
    else
      VL_CHECK(cls == "temporal_self_attn" || cls == "temporal_ff",
               "inject: temporal set may not target " + cls + " (" + path + ")");
    LinearLayer<S>* lin = it->second;
    VL_CHECK(lin->binding.adapter == nullptr, "inject: path already carries an adapter: " + path);
    VL_CHECK(binding.adapter->d == lin->W.shape()[0] && binding.adapter->k == lin->W.shape()[1],
             "inject: adapter dims mismatch for " + path);
    lin->binding = binding;
  }

  void unbind_adapter(const std::string& path) {
    auto it = injectable_.find(path);
    VL_CHECK(it != injectable_.end(), "eject: unknown path " + path);
    VL_CHECK(it->second->binding.adapter != nullptr, "eject: path has no adapter: " + path);
    it->second->binding = AdapterBinding<S>{};
  }

  bool has_bound_adapters() const {
    for (const auto& [p, l] : injectable_)
      if (l->binding.adapter != nullptr) return true;
    return false;
  }

  const std::vector<std::pair<std::string, Var<S>>>& named_parameters() const { return params_; }

  std::vector<Var<S>> parameters() const {
    std::vector<Var<S>> out;
    out.reserve(params_.size());
    for (const auto& [n, v] : params_) out.push_back(v);
    return out;
  }

  Var<S> param(const std::string& name) const {
    auto it = param_map_.find(name);
    VL_CHECK(it != param_map_.end(), "unknown parameter '" + name + "'");
    return it->second;
  }

  Index param_count() const {
    Index n = 0;
    for (const auto& [name, v] : params_) n += v.size();
    return n;
  }

  void set_all_trainable(bool t) {
    for (auto& [name, v] : params_) v.set_trainable(t);
  }

 private:
  Var<S> time_embedding(Index t, ForwardCtx<S>& ctx) const {
    Var<S> sin = Var<S>::constant(value_sinusoid<S>(static_cast<double>(t), cfg_.time_embed_dim));
    Var<S> h = silu(time_lin1_.forward(reshape(sin, {Index(1), cfg_.time_embed_dim}), ctx));
    return reshape(time_lin2_.forward(h, ctx), {cfg_.time_embed_dim});
  }

  void build(Rng& rng) {
    const Index levels = static_cast<Index>(cfg_.channel_multipliers.size());
    const Index c0 = cfg_.channels(0);
    conv_in_ = ConvLayer<S>::make(c0, cfg_.in_channels, 1, rng);
    time_lin1_ = LinearLayer<S>::make(cfg_.time_embed_dim, cfg_.time_embed_dim, rng);
    time_lin2_ = LinearLayer<S>::make(cfg_.time_embed_dim, cfg_.time_embed_dim, rng);
    token_table_ = Var<S>::leaf(
        Tensor<S>::randn({cfg_.resolved_vocab(), cfg_.text_embed_dim}, rng, 0.3), false);

    down_res_.reserve(levels);
    down_attn_.resize(levels);
    up_res_.reserve(levels);
    up_attn_.resize(levels);
    for (Index l = 0; l < levels; ++l) {
      const Index cin = l == 0 ? c0 : cfg_.channels(l);
      const Index c = cfg_.channels(l);
      down_res_.push_back(ResBlock<S>::make(cin, c, cfg_.time_embed_dim, cfg_.norm_groups, rng));
      if (cfg_.has_attn(l))
        down_attn_[l] = std::make_unique<TransformerBlock<S>>(TransformerBlock<S>::make(
            c, cfg_.attention_head_dim, cfg_.ff_mult, cfg_.text_embed_dim, rng,
            cfg_.zero_init_projections));
      if (l + 1 < levels)
        down_conv_.push_back(ConvLayer<S>::make(cfg_.channels(l + 1), c, 2, rng));
    }
    const Index cm = cfg_.channels(levels - 1);
    mid_res1_ = ResBlock<S>::make(cm, cm, cfg_.time_embed_dim, cfg_.norm_groups, rng);
    mid_attn_ = TransformerBlock<S>::make(cm, cfg_.attention_head_dim, cfg_.ff_mult,
                                          cfg_.text_embed_dim, rng, cfg_.zero_init_projections);
    mid_res2_ = ResBlock<S>::make(cm, cm, cfg_.time_embed_dim, cfg_.norm_groups, rng);
    for (Index l = 0; l < levels; ++l) {
      const Index c = cfg_.channels(l);
      up_res_.push_back(ResBlock<S>::make(2 * c, c, cfg_.time_embed_dim, cfg_.norm_groups, rng));
      if (cfg_.has_attn(l))
        up_attn_[l] = std::make_unique<TransformerBlock<S>>(TransformerBlock<S>::make(
            c, cfg_.attention_head_dim, cfg_.ff_mult, cfg_.text_embed_dim, rng,
            cfg_.zero_init_projections));
      if (l + 1 < levels)
        up_conv_.push_back(ConvLayer<S>::make(cfg_.channels(l), cfg_.channels(l + 1), 1, rng));
    }
    out_norm_ = GroupNormLayer<S>::make(c0, cfg_.norm_groups);
    out_conv_ = ConvLayer<S>::make(cfg_.in_channels, c0, 1, rng);
  }

  void reg(const std::string& name, Var<S> v) {
    params_.emplace_back(name, v);
    param_map_.emplace(name, v);
  }
  void reg_conv(const std::string& p, ConvLayer<S>& c) {
    reg(p + ".w", c.W);
    reg(p + ".b", c.b);
    classes_.other.push_back(p);
  }
  void reg_norm(const std::string& p, GroupNormLayer<S>& n) {
    reg(p + ".g", n.g);
    reg(p + ".b", n.b);
  }
  void reg_norm(const std::string& p, LayerNormLayer<S>& n) {
    reg(p + ".g", n.g);
    reg(p + ".b", n.b);
  }
  void reg_linear(const std::string& p, LinearLayer<S>& l, const std::string& cls) {
    reg(p + ".w", l.W);
    reg(p + ".b", l.b);
    if (cls.empty()) {
      classes_.other.push_back(p);
      return;
    }
    injectable_[p] = &l;
    injectable_class_[p] = cls;
    if (cls == "spatial_self_attn") classes_.spatial_self_attn.push_back(p);
    else if (cls == "spatial_cross_attn") classes_.spatial_cross_attn.push_back(p);
    else if (cls == "spatial_ff") classes_.spatial_ff.push_back(p);
    else if (cls == "temporal_self_attn") classes_.temporal_self_attn.push_back(p);
    else if (cls == "temporal_ff") classes_.temporal_ff.push_back(p);
  }
  void reg_res(const std::string& p, ResBlock<S>& r) {
    reg_norm(p + ".gn1", r.gn1);
    reg_conv(p + ".conv1", r.conv1);
    reg_linear(p + ".temb_proj", r.temb_proj, "");
    reg_norm(p + ".gn2", r.gn2);
    reg_conv(p + ".conv2", r.conv2);
    if (r.skip) reg_linear(p + ".skip", *r.skip, "");
  }
  void reg_attn(const std::string& p, TransformerBlock<S>& t) {
    reg_norm(p + ".spatial.norm1", t.s_norm1);
    reg_linear(p + ".spatial.self_attn.q", t.s_self.q, "spatial_self_attn");
    reg_linear(p + ".spatial.self_attn.k", t.s_self.k, "spatial_self_attn");
    reg_linear(p + ".spatial.self_attn.v", t.s_self.v, "spatial_self_attn");
    reg_linear(p + ".spatial.self_attn.o", t.s_self.o, "spatial_self_attn");
    reg_norm(p + ".spatial.norm2", t.s_norm2);
    reg_linear(p + ".spatial.cross_attn.q", t.s_cross.q, "spatial_cross_attn");
    reg_linear(p + ".spatial.cross_attn.k", t.s_cross.k, "spatial_cross_attn");
    reg_linear(p + ".spatial.cross_attn.v", t.s_cross.v, "spatial_cross_attn");
    reg_linear(p + ".spatial.cross_attn.o", t.s_cross.o, "spatial_cross_attn");
    reg_norm(p + ".spatial.norm3", t.s_norm3);
    reg_linear(p + ".spatial.ff.lin1", t.s_ff.lin1, "spatial_ff");
    reg_linear(p + ".spatial.ff.lin2", t.s_ff.lin2, "spatial_ff");
    reg_norm(p + ".temporal.norm1", t.t_norm1);
    reg_linear(p + ".temporal.self_attn.q", t.t_self.q, "temporal_self_attn");
    reg_linear(p + ".temporal.self_attn.k", t.t_self.k, "temporal_self_attn");
    reg_linear(p + ".temporal.self_attn.v", t.t_self.v, "temporal_self_attn");
    reg_linear(p + ".temporal.self_attn.o", t.t_self.o, "temporal_self_attn");
    reg_norm(p + ".temporal.norm2", t.t_norm2);
    reg_linear(p + ".temporal.ff.lin1", t.t_ff.lin1, "temporal_ff");
    reg_linear(p + ".temporal.ff.lin2", t.t_ff.lin2, "temporal_ff");
  }

  void register_all() {
    const Index levels = static_cast<Index>(cfg_.channel_multipliers.size());
    reg_conv("conv_in", conv_in_);
    reg_linear("time_mlp.lin1", time_lin1_, "");
    reg_linear("time_mlp.lin2", time_lin2_, "");
    reg("token_embed.table", token_table_);
    classes_.other.push_back("token_embed");
    for (Index l = 0; l < levels; ++l) {
      const std::string p = "down." + std::to_string(l);
      reg_res(p + ".res", down_res_[l]);
      if (down_attn_[l]) reg_attn(p + ".attn", *down_attn_[l]);
      if (l + 1 < levels) reg_conv(p + ".downsample", down_conv_[l]);
    }
    reg_res("mid.res1", mid_res1_);
    reg_attn("mid.attn", mid_attn_);
    reg_res("mid.res2", mid_res2_);
    for (Index l = levels - 1; l >= 0; --l) {
      const std::string p = "up." + std::to_string(l);
      reg_res(p + ".res", up_res_[l]);
      if (up_attn_[l]) reg_attn(p + ".attn", *up_attn_[l]);
      if (l > 0) reg_conv(p + ".upsample", up_conv_[l - 1]);
    }
    reg_norm("out.norm", out_norm_);
    reg_conv("out.conv", out_conv_);
  }

  UNetConfig cfg_;
  ConvLayer<S> conv_in_, out_conv_;
  GroupNormLayer<S> out_norm_;
  LinearLayer<S> time_lin1_, time_lin2_;
  Var<S> token_table_;
  std::vector<ResBlock<S>> down_res_, up_res_;
  std::vector<std::unique_ptr<TransformerBlock<S>>> down_attn_, up_attn_;
  std::vector<ConvLayer<S>> down_conv_, up_conv_;
  ResBlock<S> mid_res1_, mid_res2_;
  TransformerBlock<S> mid_attn_;

  std::vector<std::pair<std::string, Var<S>>> params_;
  std::map<std::string, Var<S>> param_map_;
  std::map<std::string, LinearLayer<S>*> injectable_;
  std::map<std::string, std::string> injectable_class_;
  LayerClasses classes_;
};

// Builds one adapter per injectable path of the given kind, zero delta at init.
template <typename S, typename Model>
inline AdapterSet<S> make_adapter_set(const Model& model, AdapterKind kind,
                                      const std::string& source_id, Index rank, uint64_t seed) {
  const LayerClasses& cls = model.enumerate_layers();
  std::vector<std::string> paths;
  if (kind == AdapterKind::spatial) {
    paths = cls.spatial_self_attn;
    paths.insert(paths.end(), cls.spatial_ff.begin(), cls.spatial_ff.end());
  } else {
    paths = cls.temporal_self_attn;
    paths.insert(paths.end(), cls.temporal_ff.begin(), cls.temporal_ff.end());
  }
  VL_CHECK(!paths.empty(), "make_adapter_set: model has no injectable layers of this kind");
  AdapterSet<S> set;
  set.kind = kind;
  set.source_id = source_id;
  set.rank = rank;
  for (const auto& p : paths) {
    auto [d, k] = model.injectable_dims(p);
    set.adapters.emplace(p, init_adapter<S>(p, d, k, rank, seed));
  }
  return set;
}

}  // namespace vidlora
