#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cgf/nn/layers.hpp"
#include "cgf/tensor/attention.hpp"

namespace cgf::dsr {

enum class TokenLayout { channel, spatial };

struct DsrConfig {
  std::size_t d = 32;
  std::size_t heads = 8;
  std::size_t stages = 2;
  bool ncb = true;
  bool gating = true;
  TokenLayout mgb_tokens = TokenLayout::channel;
};

// [1,d,H,W] -> [h, d/h, H*W]: each head is a contiguous channel group.
template <typename T>
BasicTensor<T> split_heads(const BasicTensor<T>& x, std::size_t heads) {
  const std::size_t d = x.size(1), hw = x.size(2) * x.size(3);
  if (d % heads != 0) throw ShapeError("split_heads: channels " + std::to_string(d) + " not divisible by heads " + std::to_string(heads));
  return reshape(x, {heads, d / heads, hw});
}

template <typename T>
BasicTensor<T> merge_heads(const BasicTensor<T>& x, std::size_t H, std::size_t W) {
  return reshape(x, {1, x.size(0) * x.size(1), H, W});
}

// Multi-head attention over [1,d,H,W] feature maps. Channel layout: tokens
// are channels, features are pixels, scale 1/sqrt(H*W). Spatial layout:
// tokens are pixels, features are the d/h channels of a head.
template <typename T>
BasicTensor<T> feature_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v, std::size_t heads,
                                 TokenLayout layout) {
  const std::size_t H = q.size(2), W = q.size(3);
  BasicTensor<T> qh = split_heads(q, heads), kh = split_heads(k, heads), vh = split_heads(v, heads);
  if (layout == TokenLayout::channel) {
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(H * W)));
    return merge_heads(attention(qh, kh, vh, scale), H, W);
  }
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(qh.size(1))));
  qh = permute(qh, {0, 2, 1});
  kh = permute(kh, {0, 2, 1});
  vh = permute(vh, {0, 2, 1});
  return merge_heads(permute(attention(qh, kh, vh, scale), {0, 2, 1}), H, W);
}

// Noise calibration: estimate a noise map, fuse it with the features, then
// reweight with spatial and channel attention maps.
template <typename T>
struct Ncb {
  nn::Conv2d<T> est1, est2, est3, fuse, sp1, sp2, ce1, ce2, out;

  Ncb() = default;
  Ncb(nn::ParamStore<T>& s, const std::string& name, std::size_t d) {
    const std::size_t r = std::max<std::size_t>(1, d / 4);
    est1 = nn::Conv2d<T>(s, name + ".est1", d, d, 3);
    est2 = nn::Conv2d<T>(s, name + ".est2", d, d, 3);
    est3 = nn::Conv2d<T>(s, name + ".est3", d, d, 3);
    fuse = nn::Conv2d<T>(s, name + ".fuse", 2 * d, d, 3);
    sp1 = nn::Conv2d<T>(s, name + ".spatial1", d, d, 3, 2);
    sp2 = nn::Conv2d<T>(s, name + ".spatial2", d, 1, 3, 2);
    ce1 = nn::Conv2d<T>(s, name + ".excite1", d, r, 1);
    ce2 = nn::Conv2d<T>(s, name + ".excite2", r, d, 1);
    out = nn::Conv2d<T>(s, name + ".out", 2 * d, d, 1);
  }

  struct Trace {
    BasicTensor<T> noise, spatial_map, channel_map, out;
  };

  Trace trace(const BasicTensor<T>& x) const {
    Trace t;
    t.noise = est3(relu(est2(relu(est1(x)))));
    const BasicTensor<T> fc = fuse(concat<T>({x, t.noise}, 1));
    t.spatial_map = sigmoid(sp2(relu(sp1(fc))));
    t.channel_map = sigmoid(ce2(relu(ce1(global_avg_pool(fc)))));
    t.out = out(concat<T>({mul(fc, t.spatial_map), mul(fc, t.channel_map)}, 1));
    return t;
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return trace(x).out; }
};

// Mutual guidance: each stream queries the other; a shared zero-initialized
// 1x1 conv maps the attended features back onto a residual.
template <typename T>
struct Mgb {
  std::size_t heads = 8;
  TokenLayout layout = TokenLayout::channel;
  nn::ChannelNorm<T> norm_h, norm_l;
  nn::PointDepthwise<T> fq, fk, fv;
  nn::Conv2d<T> proj;

  Mgb() = default;
  Mgb(nn::ParamStore<T>& s, const std::string& name, std::size_t d, std::size_t heads_, TokenLayout layout_)
      : heads(heads_), layout(layout_) {
    if (heads == 0 || d % heads != 0) throw InvalidArgument(name + ": channels must be divisible by heads");
    norm_h = nn::ChannelNorm<T>(s, name + ".norm_h", d);
    norm_l = nn::ChannelNorm<T>(s, name + ".norm_l", d);
    fq = nn::PointDepthwise<T>(s, name + ".f_q", d, d);
    fk = nn::PointDepthwise<T>(s, name + ".f_k", d, d);
    fv = nn::PointDepthwise<T>(s, name + ".f_v", d, d);
    proj = nn::Conv2d<T>(s, name + ".proj", d, d, 1, 1, 1, nn::Init::zeros);
  }

  std::pair<BasicTensor<T>, BasicTensor<T>> operator()(const BasicTensor<T>& h, const BasicTensor<T>& l) const {
    if (h.shape() != l.shape()) throw ShapeError("mgb: stream shapes differ, " + to_string(h.shape()) + " vs " + to_string(l.shape()));
    const BasicTensor<T> nh = norm_h(h), nl = norm_l(l);
    // Q from one stream, K/V from the other.
    const BasicTensor<T> attn_h = feature_attention(fq(nh), fk(nl), fv(nl), heads, layout);
    const BasicTensor<T> attn_l = feature_attention(fq(nl), fk(nh), fv(nh), heads, layout);
    return {add(h, proj(attn_l)), add(l, proj(attn_h))};
  }
};

// Feature gating: x + Map(GELU(f_a(LN x)) * f_b(LN x)), Map zero-initialized.
template <typename T>
struct Fgb {
  nn::ChannelNorm<T> norm;
  nn::PointDepthwise<T> fa, fb;
  nn::Conv2d<T> map;

  Fgb() = default;
  Fgb(nn::ParamStore<T>& s, const std::string& name, std::size_t d) {
    norm = nn::ChannelNorm<T>(s, name + ".norm", d);
    fa = nn::PointDepthwise<T>(s, name + ".f1_a", d, 2 * d);
    fb = nn::PointDepthwise<T>(s, name + ".f1_b", d, 2 * d);
    map = nn::Conv2d<T>(s, name + ".map", 2 * d, d, 1, 1, 1, nn::Init::zeros);
  }

  BasicTensor<T> gate(const BasicTensor<T>& x) const {
    const BasicTensor<T> n = norm(x);
    return mul(gelu(fa(n)), fb(n));
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return add(x, map(gate(x))); }
};

template <typename T>
struct Stage {
  Mgb<T> mgb;
  Fgb<T> fgb_h, fgb_l;
};

// NCB per stream, then `stages` cascaded MGB+FGB refinements.
template <typename T>
struct Dsr {
  DsrConfig cfg;
  Ncb<T> ncb_h, ncb_l;
  std::vector<Stage<T>> stages;

  Dsr() = default;
  Dsr(nn::ParamStore<T>& s, const std::string& name, const DsrConfig& c) : cfg(c) {
    if (cfg.ncb) {
      ncb_h = Ncb<T>(s, name + ".ncb_h", cfg.d);
      ncb_l = Ncb<T>(s, name + ".ncb_l", cfg.d);
    }
    for (std::size_t i = 0; i < cfg.stages; ++i) {
      const std::string p = name + ".stage" + std::to_string(i);
      Stage<T> st;
      st.mgb = Mgb<T>(s, p + ".mgb", cfg.d, cfg.heads, cfg.mgb_tokens);
      if (cfg.gating) {
        st.fgb_h = Fgb<T>(s, p + ".fgb_h", cfg.d);
        st.fgb_l = Fgb<T>(s, p + ".fgb_l", cfg.d);
      }
      stages.push_back(std::move(st));
    }
  }

  std::pair<BasicTensor<T>, BasicTensor<T>> denoise(const BasicTensor<T>& h_e, const BasicTensor<T>& l_e) const {
    if (!cfg.ncb) return {h_e, l_e};
    return {ncb_h(h_e), ncb_l(l_e)};
  }

  std::pair<BasicTensor<T>, BasicTensor<T>> operator()(const BasicTensor<T>& h_e, const BasicTensor<T>& l_e) const {
    auto [h, l] = denoise(h_e, l_e);
    for (const auto& st : stages) {
      auto [hg, lg] = st.mgb(h, l);
      if (cfg.gating) {
        h = st.fgb_h(hg);
        l = st.fgb_l(lg);
      } else {
        h = hg;
        l = lg;
      }
    }
    return {h, l};
  }
};

}  // namespace cgf::dsr
