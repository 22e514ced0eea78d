#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cgf/tensor/kernels.hpp"
#include "cgf/tensor/tensor.hpp"

namespace cgf {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  std::size_t groups = 1;
};

namespace detail {

struct ConvGeometry {
  std::size_t N, C, H, W;        // input
  std::size_t CO, KH, KW;        // kernel
  std::size_t OH, OW;            // output
  std::size_t stride, pad, dil, groups;
  std::size_t cin_g() const { return C / groups; }
  std::size_t cout_g() const { return CO / groups; }
  std::size_t rows() const { return cin_g() * KH * KW; }
  std::size_t cols() const { return OH * OW; }
};

// Column buffer [cin_g*KH*KW, OH*OW] for one image and one group.
template <typename T>
void im2col(const ConvGeometry& g, const T* img, std::vector<T>& col) {
  col.assign(g.rows() * g.cols(), T(0));
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.cin_g(); ++c) {
    const T* plane = img + c * g.H * g.W;
    for (std::size_t ky = 0; ky < g.KH; ++ky) {
      for (std::size_t kx = 0; kx < g.KW; ++kx, ++r) {
        T* dst = col.data() + r * g.cols();
        for (std::size_t oy = 0; oy < g.OH; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dil) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.H)) continue;
          const T* src = plane + static_cast<std::size_t>(iy) * g.W;
          T* drow = dst + oy * g.OW;
          for (std::size_t ox = 0; ox < g.OW; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dil) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.W)) drow[ox] = src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* img) {
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.cin_g(); ++c) {
    T* plane = img + c * g.H * g.W;
    for (std::size_t ky = 0; ky < g.KH; ++ky) {
      for (std::size_t kx = 0; kx < g.KW; ++kx, ++r) {
        const T* src = col + r * g.cols();
        for (std::size_t oy = 0; oy < g.OH; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dil) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.H)) continue;
          T* drow = plane + static_cast<std::size_t>(iy) * g.W;
          const T* srow = src + oy * g.OW;
          for (std::size_t ox = 0; ox < g.OW; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dil) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.W)) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& x, const BasicTensor<T>& w, const Conv2dOptions& o) {
  if (x.dim() != 4) throw ShapeError("conv2d: input must be [N,C,H,W], got " + to_string(x.shape()));
  if (w.dim() != 4) throw ShapeError("conv2d: weight must be [C_out,C_in/groups,kh,kw], got " + to_string(w.shape()));
  if (o.stride == 0 || o.dilation == 0 || o.groups == 0) throw InvalidArgument("conv2d: stride, dilation and groups must be positive");
  ConvGeometry g{};
  g.N = x.size(0);
  g.C = x.size(1);
  g.H = x.size(2);
  g.W = x.size(3);
  g.CO = w.size(0);
  g.KH = w.size(2);
  g.KW = w.size(3);
  g.stride = o.stride;
  g.pad = o.padding;
  g.dil = o.dilation;
  g.groups = o.groups;
  if (g.KH % 2 == 0 || g.KW % 2 == 0) {
    throw ShapeError("conv2d: kernel extents must be odd, got " + std::to_string(g.KH) + "x" + std::to_string(g.KW));
  }
  if (g.C % g.groups != 0 || g.CO % g.groups != 0) {
    throw ShapeError("conv2d: channel axis (C_in=" + std::to_string(g.C) + ", C_out=" + std::to_string(g.CO) +
                     ") not divisible by groups=" + std::to_string(g.groups));
  }
  if (w.size(1) != g.C / g.groups) {
    throw ShapeError("conv2d: input-channel axis mismatch, input has " + std::to_string(g.C) + " channels, weight expects " +
                     std::to_string(w.size(1) * g.groups));
  }
  const std::size_t eff_h = (g.KH - 1) * g.dil + 1;
  const std::size_t eff_w = (g.KW - 1) * g.dil + 1;
  if (g.H + 2 * g.pad < eff_h || g.W + 2 * g.pad < eff_w) {
    throw ShapeError("conv2d: spatial axes " + std::to_string(g.H) + "x" + std::to_string(g.W) + " smaller than the dilated kernel");
  }
  g.OH = (g.H + 2 * g.pad - eff_h) / g.stride + 1;
  g.OW = (g.W + 2 * g.pad - eff_w) / g.stride + 1;
  return g;
}

}  // namespace detail

// Cross-correlation. x: [N,C_in,H,W], w: [C_out,C_in/groups,kh,kw], bias: [C_out] or undefined.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias,
                      const Conv2dOptions& opt = {}) {
  const detail::ConvGeometry g = detail::conv_geometry(x, w, opt);
  if (bias.defined() && bias.numel() != g.CO) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.numel()) + " does not match output-channel axis " +
                     std::to_string(g.CO));
  }
  const std::size_t in_img = g.C * g.H * g.W;
  const std::size_t out_img = g.CO * g.OH * g.OW;
  const std::size_t w_group = g.cout_g() * g.rows();
  std::vector<T> out(g.N * out_img, T(0));
  std::vector<T> col;
  const T* xd = x.data().data();
  const T* wd = w.data().data();
  for (std::size_t n = 0; n < g.N; ++n) {
    for (std::size_t gr = 0; gr < g.groups; ++gr) {
      detail::im2col(g, xd + n * in_img + gr * g.cin_g() * g.H * g.W, col);
      kernels::gemm_nn(g.cout_g(), g.cols(), g.rows(), wd + gr * w_group, col.data(),
                       out.data() + n * out_img + gr * g.cout_g() * g.cols());
    }
    if (bias.defined()) {
      for (std::size_t co = 0; co < g.CO; ++co) {
        const T b = bias.data()[co];
        T* o = out.data() + n * out_img + co * g.cols();
        for (std::size_t p = 0; p < g.cols(); ++p) o[p] += b;
      }
    }
  }
  return record("conv2d", Shape{g.N, g.CO, g.OH, g.OW}, std::move(out), {x, w, bias}, [x, w, bias, g](Node<T>& node) {
    T* gx = grad_of(x);
    T* gw = grad_of(w);
    T* gb = grad_of(bias);
    const std::size_t in_img = g.C * g.H * g.W;
    const std::size_t out_img = g.CO * g.OH * g.OW;
    const std::size_t w_group = g.cout_g() * g.rows();
    const T* xd = x.data().data();
    const T* wd = w.data().data();
    std::vector<T> col;
    std::vector<T> dcol;
    for (std::size_t n = 0; n < g.N; ++n) {
      const T* go_img = node.grad.data() + n * out_img;
      if (gb) {
        for (std::size_t co = 0; co < g.CO; ++co) {
          T acc = T(0);
          for (std::size_t p = 0; p < g.cols(); ++p) acc += go_img[co * g.cols() + p];
          gb[co] += acc;
        }
      }
      for (std::size_t gr = 0; gr < g.groups; ++gr) {
        const T* go = go_img + gr * g.cout_g() * g.cols();
        if (gw) {
          detail::im2col(g, xd + n * in_img + gr * g.cin_g() * g.H * g.W, col);
          kernels::gemm_nt(g.cout_g(), g.rows(), g.cols(), go, col.data(), gw + gr * w_group);
        }
        if (gx) {
          dcol.assign(g.rows() * g.cols(), T(0));
          kernels::gemm_tn(g.rows(), g.cols(), g.cout_g(), wd + gr * w_group, go, dcol.data());
          detail::col2im(g, dcol.data(), gx + n * in_img + gr * g.cin_g() * g.H * g.W);
        }
      }
    }
  });
}

// Zero-padded k x k neighborhoods. [C,H,W] -> [H,W,k*k*C] (or batched
// [N,C,H,W] -> [N,H,W,k*k*C]); within a row the layout is channel-major,
// then window row, then window column.
template <typename T>
BasicTensor<T> unfold(const BasicTensor<T>& x, std::size_t k) {
  if (k % 2 == 0) throw InvalidArgument("unfold: window size must be odd, got " + std::to_string(k));
  if (x.dim() != 3 && x.dim() != 4) throw ShapeError("unfold expects [C,H,W] or [N,C,H,W], got " + to_string(x.shape()));
  const bool batched = x.dim() == 4;
  const std::size_t N = batched ? x.size(0) : 1;
  const std::size_t C = x.size(-3);
  const std::size_t H = x.size(-2);
  const std::size_t W = x.size(-1);
  const std::size_t F = k * k * C;
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k / 2);
  // Source offset per output element, or -1 for padding.
  auto index = std::make_shared<std::vector<std::ptrdiff_t>>(N * H * W * F);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < W; ++xx) {
        std::ptrdiff_t* row = index->data() + ((n * H + y) * W + xx) * F;
        std::size_t f = 0;
        for (std::size_t c = 0; c < C; ++c) {
          for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
            for (std::ptrdiff_t dx = -r; dx <= r; ++dx, ++f) {
              const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx) + dx;
              const bool inside = sy >= 0 && sy < static_cast<std::ptrdiff_t>(H) && sx >= 0 && sx < static_cast<std::ptrdiff_t>(W);
              row[f] = inside ? static_cast<std::ptrdiff_t>(((n * C + c) * H + static_cast<std::size_t>(sy)) * W +
                                                            static_cast<std::size_t>(sx))
                              : -1;
            }
          }
        }
      }
    }
  }
  std::vector<T> out(index->size());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::ptrdiff_t s = (*index)[i];
    out[i] = s < 0 ? T(0) : xd[static_cast<std::size_t>(s)];
  }
  Shape shape = batched ? Shape{N, H, W, F} : Shape{H, W, F};
  return record("unfold", shape, std::move(out), {x}, [x, index](Node<T>& node) {
    T* g = grad_of(x);
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      const std::ptrdiff_t s = (*index)[i];
      if (s >= 0) g[s] += node.grad[i];
    }
  });
}

}  // namespace cgf
