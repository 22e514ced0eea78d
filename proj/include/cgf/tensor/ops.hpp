#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "cgf/core/tolerances.hpp"
#include "cgf/tensor/kernels.hpp"
#include "cgf/tensor/tensor.hpp"

namespace cgf {

namespace stats {
// Instrumentation: number of softmax evaluations (standalone or fused in
// attention) since process start.
inline std::atomic<std::uint64_t> softmax_calls{0};
}  // namespace stats

namespace detail {

inline std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " +
                       to_string(b) + " (axis " + std::to_string(i) + ")");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Row-major strides of `in` viewed against `out`, zero on broadcast axes.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    const std::size_t o = i + out.size() - in.size();
    strides[o] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) over the broadcast output.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& as, const Shape& bs, F&& f) {
  const std::size_t total = numel_of(out);
  if (as == out && bs == out) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const auto sa = broadcast_strides(as, out);
  const auto sb = broadcast_strides(bs, out);
  const std::size_t rank = out.size();
  const std::size_t inner = out[rank - 1];
  const std::size_t ia = sa[rank - 1];
  const std::size_t ib = sb[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, oa + j * ia, ob + j * ib);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (numpy-style broadcasting).

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Shape shape = detail::broadcast_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(numel_of(shape));
  const auto ad = a.data();
  const auto bd = b.data();
  detail::for_each_broadcast(shape, a.shape(), b.shape(),
                             [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = ad[i] + bd[j]; });
  return record("add", shape, std::move(out), {a, b}, [a, b](Node<T>& n) {
    T* ga = grad_of(a);
    T* gb = grad_of(b);
    detail::for_each_broadcast(n.shape, a.shape(), b.shape(), [&](std::size_t o, std::size_t i, std::size_t j) {
      if (ga) ga[i] += n.grad[o];
      if (gb) gb[j] += n.grad[o];
    });
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Shape shape = detail::broadcast_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(numel_of(shape));
  const auto ad = a.data();
  const auto bd = b.data();
  detail::for_each_broadcast(shape, a.shape(), b.shape(),
                             [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = ad[i] - bd[j]; });
  return record("sub", shape, std::move(out), {a, b}, [a, b](Node<T>& n) {
    T* ga = grad_of(a);
    T* gb = grad_of(b);
    detail::for_each_broadcast(n.shape, a.shape(), b.shape(), [&](std::size_t o, std::size_t i, std::size_t j) {
      if (ga) ga[i] += n.grad[o];
      if (gb) gb[j] -= n.grad[o];
    });
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Shape shape = detail::broadcast_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(numel_of(shape));
  const auto ad = a.data();
  const auto bd = b.data();
  detail::for_each_broadcast(shape, a.shape(), b.shape(),
                             [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = ad[i] * bd[j]; });
  return record("mul", shape, std::move(out), {a, b}, [a, b](Node<T>& n) {
    T* ga = grad_of(a);
    T* gb = grad_of(b);
    const auto ad = a.data();
    const auto bd = b.data();
    detail::for_each_broadcast(n.shape, a.shape(), b.shape(), [&](std::size_t o, std::size_t i, std::size_t j) {
      if (ga) ga[i] += n.grad[o] * bd[j];
      if (gb) gb[j] += n.grad[o] * ad[i];
    });
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T s) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v *= s;
  return record("scale", x.shape(), std::move(out), {x}, [x, s](Node<T>& n) {
    T* g = grad_of(x);
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += s * n.grad[i];
  });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T s) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v += s;
  return record("add_scalar", x.shape(), std::move(out), {x}, [x](Node<T>& n) {
    T* g = grad_of(x);
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(xd[i]);
  return record("abs", x.shape(), std::move(out), {x}, [x](Node<T>& n) {
    T* g = grad_of(x);
    const auto xd = x.data();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const T s = xd[i] > T(0) ? T(1) : (xd[i] < T(0) ? T(-1) : T(0));
      g[i] += s * n.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Activations.

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
  return record("relu", x.shape(), std::move(out), {x}, [x](Node<T>& n) {
    T* g = grad_of(x);
    const auto xd = x.data();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (xd[i] > T(0)) g[i] += n.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-xd[i]));
  auto result = record("sigmoid", x.shape(), std::move(out), {x}, [x](Node<T>& n) {
    T* g = grad_of(x);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const T y = n.data[i];
      g[i] += n.grad[i] * y * (T(1) - y);
    }
  });
  return result;
}

// Exact (erf-based) GELU.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(0.5) * xd[i] * (T(1) + std::erf(xd[i] * kInvSqrt2));
  return record("gelu", x.shape(), std::move(out), {x}, [x](Node<T>& n) {
    constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
    T* g = grad_of(x);
    const auto xd = x.data();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const T v = xd[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
      const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
      g[i] += n.grad[i] * (cdf + v * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions.

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T acc = T(0);
  for (const T v : x.data()) acc += v;
  return record("sum", Shape{1}, std::vector<T>{acc}, {x}, [x](Node<T>& n) {
    T* g = grad_of(x);
    const T go = n.grad[0];
    for (std::size_t i = 0; i < x.numel(); ++i) g[i] += go;
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  T acc = T(0);
  for (const T v : x.data()) acc += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  return record("mean", Shape{1}, std::vector<T>{acc * inv}, {x}, [x, inv](Node<T>& n) {
    T* g = grad_of(x);
    const T go = n.grad[0] * inv;
    for (std::size_t i = 0; i < x.numel(); ++i) g[i] += go;
  });
}

// [N,C,H,W] -> [N,C,1,1].
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  if (x.dim() != 4) throw ShapeError("global_avg_pool expects [N,C,H,W], got " + to_string(x.shape()));
  const std::size_t nc = x.size(0) * x.size(1);
  const std::size_t hw = x.size(2) * x.size(3);
  std::vector<T> out(nc);
  const auto xd = x.data();
  for (std::size_t i = 0; i < nc; ++i) {
    T acc = T(0);
    for (std::size_t p = 0; p < hw; ++p) acc += xd[i * hw + p];
    out[i] = acc / static_cast<T>(hw);
  }
  return record("global_avg_pool", Shape{x.size(0), x.size(1), 1, 1}, std::move(out), {x},
                [x, nc, hw](Node<T>& n) {
                  T* g = grad_of(x);
                  for (std::size_t i = 0; i < nc; ++i) {
                    const T go = n.grad[i] / static_cast<T>(hw);
                    for (std::size_t p = 0; p < hw; ++p) g[i * hw + p] += go;
                  }
                });
}

// ---------------------------------------------------------------------------
// Layout.

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape " + to_string(x.shape()) + " -> " + to_string(shape) + " changes element count");
  }
  return record("reshape", std::move(shape), x.to_vector(), {x}, [x](Node<T>& n) {
    T* g = grad_of(x);
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t rank = x.dim();
  if (perm.size() != rank) throw ShapeError("permute: permutation rank mismatch for " + to_string(x.shape()));
  std::vector<bool> seen(rank, false);
  for (std::size_t p : perm) {
    if (p >= rank || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.shape()[perm[i]];
  std::vector<std::size_t> in_strides(rank);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_strides[i] = s;
    s *= x.shape()[i];
  }
  std::vector<std::size_t> src_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) src_strides[i] = in_strides[perm[i]];

  // Maps every output offset to its source offset.
  auto gather_index = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < x.numel(); ++o) {
    (*gather_index)[o] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += src_strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xd[(*gather_index)[o]];
  return record("permute", out_shape, std::move(out), {x}, [x, gather_index](Node<T>& n) {
    T* g = grad_of(x);
    for (std::size_t o = 0; o < n.grad.size(); ++o) g[(*gather_index)[o]] += n.grad[o];
  });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  const std::size_t rank = xs[0].dim();
  const std::size_t ax = detail::normalize_axis(axis, rank, "concat");
  Shape shape = xs[0].shape();
  shape[ax] = 0;
  for (const auto& x : xs) {
    if (x.dim() != rank) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < rank; ++d) {
      if (d != ax && x.shape()[d] != xs[0].shape()[d]) {
        throw ShapeError("concat: extent mismatch on axis " + std::to_string(d) + ": " + to_string(x.shape()) +
                         " vs " + to_string(xs[0].shape()));
      }
    }
    shape[ax] += x.shape()[ax];
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= shape[d];
  std::size_t inner = 1;
  for (std::size_t d = ax + 1; d < rank; ++d) inner *= shape[d];
  const std::size_t out_row = shape[ax] * inner;
  std::vector<T> out(numel_of(shape));
  std::size_t offset = 0;
  for (const auto& x : xs) {
    const std::size_t row = x.shape()[ax] * inner;
    const auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(xd.begin() + static_cast<std::ptrdiff_t>(o * row), xd.begin() + static_cast<std::ptrdiff_t>((o + 1) * row),
                out.begin() + static_cast<std::ptrdiff_t>(o * out_row + offset));
    }
    offset += row;
  }
  return record("concat", shape, std::move(out), xs, [xs, outer, inner, out_row, ax](Node<T>& n) {
    std::size_t offset = 0;
    for (const auto& x : xs) {
      const std::size_t row = x.shape()[ax] * inner;
      if (T* g = grad_of(x)) {
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < row; ++i) g[o * row + i] += n.grad[o * out_row + offset + i];
        }
      }
      offset += row;
    }
  });
}

// Contiguous range [start, start+length) along an axis.
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = detail::normalize_axis(axis, x.dim(), "slice");
  if (length == 0 || start + length > x.shape()[ax]) {
    throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(start + length) + ") out of range on axis " +
                     std::to_string(ax) + " of " + to_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[ax] = length;
  std::size_t outer = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= shape[d];
  std::size_t inner = 1;
  for (std::size_t d = ax + 1; d < x.dim(); ++d) inner *= shape[d];
  const std::size_t in_row = x.shape()[ax] * inner;
  const std::size_t out_row = length * inner;
  std::vector<T> out(numel_of(shape));
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < out_row; ++i) out[o * out_row + i] = xd[o * in_row + start * inner + i];
  }
  return record("slice", shape, std::move(out), {x}, [x, outer, inner, in_row, out_row, start](Node<T>& n) {
    T* g = grad_of(x);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < out_row; ++i) g[o * in_row + start * inner + i] += n.grad[o * out_row + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix products: [M,K]x[K,N] or batched [B,M,K]x[B,K,N].

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const bool batched = a.dim() == 3;
  if (a.dim() != b.dim() || (a.dim() != 2 && a.dim() != 3)) {
    throw ShapeError("matmul expects two rank-2 or two rank-3 tensors, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const std::size_t B = batched ? a.size(0) : 1;
  if (batched && b.size(0) != B) throw ShapeError("matmul: batch axis mismatch");
  const std::size_t M = a.size(-2);
  const std::size_t K = a.size(-1);
  const std::size_t N = b.size(-1);
  if (b.size(-2) != K) {
    throw ShapeError("matmul: inner axis mismatch, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<T> out(B * M * N, T(0));
  for (std::size_t i = 0; i < B; ++i) {
    kernels::gemm_nn(M, N, K, a.data().data() + i * M * K, b.data().data() + i * K * N, out.data() + i * M * N);
  }
  Shape shape = batched ? Shape{B, M, N} : Shape{M, N};
  return record("matmul", shape, std::move(out), {a, b}, [a, b, B, M, K, N](Node<T>& n) {
    T* ga = grad_of(a);
    T* gb = grad_of(b);
    for (std::size_t i = 0; i < B; ++i) {
      const T* go = n.grad.data() + i * M * N;
      if (ga) kernels::gemm_nt(M, K, N, go, b.data().data() + i * K * N, ga + i * M * K);
      if (gb) kernels::gemm_tn(K, N, M, a.data().data() + i * M * K, go, gb + i * K * N);
    }
  });
}

// ---------------------------------------------------------------------------
// Normalizations.

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int axis) {
  const std::size_t ax = detail::normalize_axis(axis, x.dim(), "softmax");
  ++stats::softmax_calls;
  std::size_t outer = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= x.shape()[d];
  std::size_t inner = 1;
  for (std::size_t d = ax + 1; d < x.dim(); ++d) inner *= x.shape()[d];
  const std::size_t len = x.shape()[ax];
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T m = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < len; ++i) m = std::max(m, xd[base + i * inner]);
      T s = T(0);
      for (std::size_t i = 0; i < len; ++i) {
        const T e = std::exp(xd[base + i * inner] - m);
        out[base + i * inner] = e;
        s += e;
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= s;
    }
  }
  return record("softmax", x.shape(), std::move(out), {x}, [x, outer, inner, len](Node<T>& n) {
    T* g = grad_of(x);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot = T(0);
        for (std::size_t i = 0; i < len; ++i) dot += n.grad[base + i * inner] * n.data[base + i * inner];
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t k = base + i * inner;
          g[k] += n.data[k] * (n.grad[k] - dot);
        }
      }
    }
  });
}

// Normalizes over one axis; gamma/beta (optional) have that axis' extent.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta, int axis) {
  const std::size_t ax = detail::normalize_axis(axis, x.dim(), "layer_norm");
  const std::size_t len = x.shape()[ax];
  if (gamma.defined() && gamma.numel() != len) throw ShapeError("layer_norm: gamma length mismatch on axis " + std::to_string(ax));
  if (beta.defined() && beta.numel() != len) throw ShapeError("layer_norm: beta length mismatch on axis " + std::to_string(ax));
  std::size_t outer = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= x.shape()[d];
  std::size_t inner = 1;
  for (std::size_t d = ax + 1; d < x.dim(); ++d) inner *= x.shape()[d];

  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(outer * inner);
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  const T eps = static_cast<T>(tol::kLayerNormEps);
  const T inv_len = T(1) / static_cast<T>(len);
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * len * inner;
    std::vector<T> mu(inner, T(0));
    std::vector<T> var(inner, T(0));
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t in = 0; in < inner; ++in) mu[in] += xd[base + i * inner + in];
    }
    for (std::size_t in = 0; in < inner; ++in) mu[in] *= inv_len;
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t in = 0; in < inner; ++in) {
        const T dlt = xd[base + i * inner + in] - mu[in];
        var[in] += dlt * dlt;
      }
    }
    for (std::size_t in = 0; in < inner; ++in) (*rstd)[o * inner + in] = T(1) / std::sqrt(var[in] * inv_len + eps);
    for (std::size_t i = 0; i < len; ++i) {
      const T gm = gamma.defined() ? gamma.data()[i] : T(1);
      const T bt = beta.defined() ? beta.data()[i] : T(0);
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t k = base + i * inner + in;
        const T h = (xd[k] - mu[in]) * (*rstd)[o * inner + in];
        (*xhat)[k] = h;
        out[k] = h * gm + bt;
      }
    }
  }
  return record("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat, rstd, outer, inner, len](Node<T>& n) {
                  T* gx = grad_of(x);
                  T* gg = grad_of(gamma);
                  T* gb = grad_of(beta);
                  const T inv_len = T(1) / static_cast<T>(len);
                  std::vector<T> s1(inner);
                  std::vector<T> s2(inner);
                  for (std::size_t o = 0; o < outer; ++o) {
                    const std::size_t base = o * len * inner;
                    std::fill(s1.begin(), s1.end(), T(0));
                    std::fill(s2.begin(), s2.end(), T(0));
                    for (std::size_t i = 0; i < len; ++i) {
                      const T gm = gamma.defined() ? gamma.data()[i] : T(1);
                      for (std::size_t in = 0; in < inner; ++in) {
                        const std::size_t k = base + i * inner + in;
                        const T dy = n.grad[k];
                        if (gg) gg[i] += dy * (*xhat)[k];
                        if (gb) gb[i] += dy;
                        const T dh = dy * gm;
                        s1[in] += dh;
                        s2[in] += dh * (*xhat)[k];
                      }
                    }
                    if (!gx) continue;
                    for (std::size_t i = 0; i < len; ++i) {
                      const T gm = gamma.defined() ? gamma.data()[i] : T(1);
                      for (std::size_t in = 0; in < inner; ++in) {
                        const std::size_t k = base + i * inner + in;
                        const T dh = n.grad[k] * gm;
                        gx[k] += (*rstd)[o * inner + in] * (dh - s1[in] * inv_len - (*xhat)[k] * s2[in] * inv_len);
                      }
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Resampling.

namespace detail {

struct LinearTap {
  std::size_t i0;
  std::size_t i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

// Half-pixel-center (align_corners = false) source taps for upsampling by an
// integer factor; sources left of the first center clamp to it.
inline std::vector<LinearTap> bilinear_taps(std::size_t in, std::size_t factor) {
  std::vector<LinearTap> taps(in * factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = i0 + 1 < in ? i0 + 1 : in - 1;
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace detail

// [N,C,H,W] -> [N,C,H*factor,W*factor].
template <typename T>
BasicTensor<T> bilinear_upsample(const BasicTensor<T>& x, std::size_t factor) {
  if (x.dim() != 4) throw ShapeError("bilinear_upsample expects [N,C,H,W], got " + to_string(x.shape()));
  if (factor == 0) throw InvalidArgument("bilinear_upsample factor must be positive");
  const std::size_t nc = x.size(0) * x.size(1);
  const std::size_t H = x.size(2);
  const std::size_t W = x.size(3);
  const std::size_t OH = H * factor;
  const std::size_t OW = W * factor;
  const auto ty = detail::bilinear_taps(H, factor);
  const auto tx = detail::bilinear_taps(W, factor);
  std::vector<T> out(nc * OH * OW);
  const auto xd = x.data();
  for (std::size_t c = 0; c < nc; ++c) {
    const T* src = xd.data() + c * H * W;
    T* dst = out.data() + c * OH * OW;
    for (std::size_t oy = 0; oy < OH; ++oy) {
      const auto& a = ty[oy];
      const T wy1 = static_cast<T>(a.w1);
      const T wy0 = T(1) - wy1;
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const auto& b = tx[ox];
        const T wx1 = static_cast<T>(b.w1);
        const T wx0 = T(1) - wx1;
        dst[oy * OW + ox] = wy0 * (wx0 * src[a.i0 * W + b.i0] + wx1 * src[a.i0 * W + b.i1]) +
                            wy1 * (wx0 * src[a.i1 * W + b.i0] + wx1 * src[a.i1 * W + b.i1]);
      }
    }
  }
  return record("bilinear_upsample", Shape{x.size(0), x.size(1), OH, OW}, std::move(out), {x},
                [x, ty, tx, nc, H, W, OH, OW](Node<T>& n) {
                  T* g = grad_of(x);
                  for (std::size_t c = 0; c < nc; ++c) {
                    T* gs = g + c * H * W;
                    const T* go = n.grad.data() + c * OH * OW;
                    for (std::size_t oy = 0; oy < OH; ++oy) {
                      const auto& a = ty[oy];
                      const T wy1 = static_cast<T>(a.w1);
                      const T wy0 = T(1) - wy1;
                      for (std::size_t ox = 0; ox < OW; ++ox) {
                        const auto& b = tx[ox];
                        const T wx1 = static_cast<T>(b.w1);
                        const T wx0 = T(1) - wx1;
                        const T v = go[oy * OW + ox];
                        gs[a.i0 * W + b.i0] += v * wy0 * wx0;
                        gs[a.i0 * W + b.i1] += v * wy0 * wx1;
                        gs[a.i1 * W + b.i0] += v * wy1 * wx0;
                        gs[a.i1 * W + b.i1] += v * wy1 * wx1;
                      }
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Losses.

// Element-mean absolute difference.
template <typename T>
BasicTensor<T> l1_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("l1_loss: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
  }
  return mean(abs(sub(pred, target)));
}

}  // namespace cgf
