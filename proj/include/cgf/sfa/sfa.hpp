#pragma once

#include <cstddef>
#include <string>

#include "cgf/dsr/dsr.hpp"
#include "cgf/nn/layers.hpp"

namespace cgf::sfa {

// Largest H*W accepted by the spatial attention; scores are quadratic in it.
inline constexpr std::size_t kMaxTokens = 16384;

enum class SfaMode { full, no_sfa, no_sfa_s, no_sfa_f };

inline SfaMode parse_mode(const std::string& s) {
  if (s == "full") return SfaMode::full;
  if (s == "no-sfa" || s == "none") return SfaMode::no_sfa;
  if (s == "no-sfa-s") return SfaMode::no_sfa_s;
  if (s == "no-sfa-f") return SfaMode::no_sfa_f;
  throw InvalidArgument("unknown sfa mode '" + s + "' (expected full, no-sfa, no-sfa-s, no-sfa-f)");
}

inline std::string to_string(SfaMode m) {
  switch (m) {
    case SfaMode::full: return "full";
    case SfaMode::no_sfa: return "no-sfa";
    case SfaMode::no_sfa_s: return "no-sfa-s";
    case SfaMode::no_sfa_f: return "no-sfa-f";
  }
  return "full";
}

struct SfaConfig {
  std::size_t d = 32;
  std::size_t heads = 8;
  std::size_t channels = 4;
  SfaMode mode = SfaMode::full;
  bool global_skip = false;
};

// Spatial enhancement: two sigmoid-gated pixelwise linear layers over
// concat(pan, ms_up).
template <typename T>
struct SfaS {
  nn::Conv2d<T> se1, se2;

  SfaS() = default;
  SfaS(nn::ParamStore<T>& s, const std::string& name, std::size_t in, std::size_t d) {
    se1 = nn::Conv2d<T>(s, name + ".se1", in, d, 1);
    se2 = nn::Conv2d<T>(s, name + ".se2", d, d, 1);
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return sigmoid(se2(sigmoid(se1(x)))); }
};

// Output head: y = a + MLP(a) on the attended tensor a, then d -> C.
template <typename T>
struct OutputHead {
  nn::PixelMlp<T> mlp;
  nn::Conv2d<T> proj;

  OutputHead() = default;
  OutputHead(nn::ParamStore<T>& s, const std::string& name, std::size_t d, std::size_t channels) {
    mlp = nn::PixelMlp<T>(s, name + ".mlp", d, 2 * d, d);
    proj = nn::Conv2d<T>(s, name + ".proj", d, channels, 1);
  }

  BasicTensor<T> operator()(const BasicTensor<T>& a) const { return proj(add(a, mlp(a))); }
};

template <typename T>
struct Sfa {
  SfaConfig cfg;
  SfaS<T> sfa_s;
  nn::Conv2d<T> embed;  // no-sfa-s replacement for sfa_s
  nn::ChannelNorm<T> norm_qh, norm_ql, norm_kv;
  nn::PixelMlp<T> mlp_qh, mlp_ql, mlp_kv;
  OutputHead<T> f_i;
  nn::Conv2d<T> bypass;  // no-sfa: conv(h + l) -> C

  struct Trace {
    BasicTensor<T> f_s, q_h, q_l, k, v, attn_h, attn_l, out;
  };

  Sfa() = default;
  Sfa(nn::ParamStore<T>& s, const std::string& name, const SfaConfig& c) : cfg(c) {
    const std::size_t d = cfg.d;
    if (cfg.heads == 0 || d % cfg.heads != 0) throw InvalidArgument(name + ": width must be divisible by heads");
    if (cfg.channels == 0) throw InvalidArgument(name + ": zero output channels");
    switch (cfg.mode) {
      case SfaMode::no_sfa:
        bypass = nn::Conv2d<T>(s, name + ".bypass", d, cfg.channels, 3);
        return;
      case SfaMode::no_sfa_f:
        f_i.proj = nn::Conv2d<T>(s, name + ".f_i.proj", d, cfg.channels, 1);
        return;
      case SfaMode::no_sfa_s:
        embed = nn::Conv2d<T>(s, name + ".embed", cfg.channels + 1, d, 1);
        break;
      case SfaMode::full:
        sfa_s = SfaS<T>(s, name + ".sfa_s", cfg.channels + 1, d);
        break;
    }
    norm_qh = nn::ChannelNorm<T>(s, name + ".norm_qh", d);
    norm_ql = nn::ChannelNorm<T>(s, name + ".norm_ql", d);
    norm_kv = nn::ChannelNorm<T>(s, name + ".norm_kv", d);
    mlp_qh = nn::PixelMlp<T>(s, name + ".mlp_qh", d, 2 * d, d);
    mlp_ql = nn::PixelMlp<T>(s, name + ".mlp_ql", d, 2 * d, d);
    mlp_kv = nn::PixelMlp<T>(s, name + ".mlp_kv", d, 2 * d, 2 * d);
    f_i = OutputHead<T>(s, name + ".f_i", d, cfg.channels);
  }

  bool uses_attention() const { return cfg.mode == SfaMode::full || cfg.mode == SfaMode::no_sfa_s; }

  BasicTensor<T> spatial_features(const BasicTensor<T>& pan, const BasicTensor<T>& ms_up) const {
    if (pan.dim() != 4 || ms_up.dim() != 4 || pan.size(1) != 1 || pan.size(2) != ms_up.size(2) || pan.size(3) != ms_up.size(3)) {
      throw ShapeError("sfa_s: pan " + cgf::to_string(pan.shape()) + " and ms_up " + cgf::to_string(ms_up.shape()) + " disagree");
    }
    if (ms_up.size(1) != cfg.channels) throw ShapeError("sfa_s: expected " + std::to_string(cfg.channels) + " ms channels");
    const BasicTensor<T> x = concat<T>({pan, ms_up}, 1);
    return cfg.mode == SfaMode::no_sfa_s ? embed(x) : sfa_s(x);
  }

  // h, l: DSR outputs [1,d,H,W]; pan [1,1,H,W]; ms_up [1,C,H,W].
  Trace trace(const BasicTensor<T>& pan, const BasicTensor<T>& ms_up, const BasicTensor<T>& h, const BasicTensor<T>& l) const {
    if (h.shape() != l.shape() || h.dim() != 4 || h.size(1) != cfg.d) {
      throw ShapeError("sfa: stream shapes " + cgf::to_string(h.shape()) + " and " + cgf::to_string(l.shape()) + " invalid for d=" +
                       std::to_string(cfg.d));
    }
    const std::size_t H = h.size(2), W = h.size(3);
    if (H * W == 0) throw ShapeError("sfa: zero tokens");
    if (pan.size(2) != H || pan.size(3) != W) throw ShapeError("sfa: pan and stream geometry differ");
    Trace t;
    if (cfg.mode == SfaMode::no_sfa) {
      t.out = bypass(add(h, l));
    } else if (cfg.mode == SfaMode::no_sfa_f) {
      t.out = add(f_i.proj(h), f_i.proj(l));
    } else {
      if (H * W > kMaxTokens) {
        throw InvalidArgument("sfa: " + std::to_string(H * W) + " spatial tokens exceed the limit of " + std::to_string(kMaxTokens) +
                              "; use smaller patches");
      }
      t.f_s = spatial_features(pan, ms_up);
      t.q_h = mlp_qh(norm_qh(h));
      t.q_l = mlp_ql(norm_ql(l));
      const BasicTensor<T> kv = mlp_kv(norm_kv(t.f_s));
      t.k = slice(kv, 1, 0, cfg.d);
      t.v = slice(kv, 1, cfg.d, cfg.d);
      t.attn_h = dsr::feature_attention(t.q_h, t.k, t.v, cfg.heads, dsr::TokenLayout::spatial);
      t.attn_l = dsr::feature_attention(t.q_l, t.k, t.v, cfg.heads, dsr::TokenLayout::spatial);
      t.out = add(f_i(t.attn_h), f_i(t.attn_l));
    }
    if (cfg.global_skip) t.out = add(t.out, ms_up);
    return t;
  }

  BasicTensor<T> operator()(const BasicTensor<T>& pan, const BasicTensor<T>& ms_up, const BasicTensor<T>& h,
                            const BasicTensor<T>& l) const {
    return trace(pan, ms_up, h, l).out;
  }
};

}  // namespace cgf::sfa
