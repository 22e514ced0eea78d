#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <vector>

#include "cgf/tensor/kernels.hpp"
#include "cgf/tensor/ops.hpp"

namespace cgf {

namespace detail {

template <typename T>
void transpose_into(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

// scores[j] = scale * <q, K[j]> for K stored transposed as kt[D][M].
template <typename T>
void score_row(const T* q, const T* kt, std::size_t D, std::size_t M, T scale, T* scores) {
  std::fill(scores, scores + M, T(0));
  for (std::size_t d = 0; d < D; ++d) {
    const T qd = q[d] * scale;
    const T* krow = kt + d * M;
#pragma omp simd
    for (std::size_t j = 0; j < M; ++j) scores[j] += qd * krow[j];
  }
}

template <typename T>
T row_max(const T* p, std::size_t M) {
  T m = -std::numeric_limits<T>::infinity();
#pragma omp simd reduction(max : m)
  for (std::size_t j = 0; j < M; ++j) m = p[j] > m ? p[j] : m;
  return m;
}

// p[j] <- exp(p[j] - shift); returns the sum. Exponentials and the sum are
// separate passes so the exponential loop vectorizes cleanly.
template <typename T>
T exp_shift_sum(T* p, std::size_t M, T shift) {
#pragma omp simd
  for (std::size_t j = 0; j < M; ++j) p[j] = kernels::exp_fast(p[j] - shift);
  T s = T(0);
#pragma omp simd reduction(+ : s)
  for (std::size_t j = 0; j < M; ++j) s += p[j];
  return s;
}

}  // namespace detail

namespace detail {

// One query row, any widths. p and ds are M-long scratch. Writes the output
// row and returns the row's log-sum-exp.
template <typename T>
T attention_row_forward(const T* qi, const T* kt, const T* vt, std::size_t D, std::size_t Dv, std::size_t M, T scale, T* p,
                        T* o) {
  score_row(qi, kt, D, M, scale, p);
  const T m = row_max(p, M);
  const T s = exp_shift_sum(p, M, m);
  const T inv = T(1) / s;
  for (std::size_t e = 0; e < Dv; ++e) o[e] = kernels::dot(p, vt + e * M, M) * inv;
  return m + std::log(s);
}

// Accumulates dQ_i into gqi and this row's share of dK^T, dV^T into gkt, gvt.
template <typename T>
void attention_row_backward(const T* qi, const T* go, const T* oi, T l, const T* kt, const T* vt, std::size_t D, std::size_t Dv,
                            std::size_t M, T scale, T* p, T* ds, T* gqi, T* gkt, T* gvt) {
  score_row(qi, kt, D, M, scale, p);
#pragma omp simd
  for (std::size_t j = 0; j < M; ++j) p[j] = kernels::exp_fast(p[j] - l);
  // dP_j = <dO_i, V_j>; delta = <dO_i, O_i>.
  std::fill(ds, ds + M, T(0));
  T delta = T(0);
  for (std::size_t e = 0; e < Dv; ++e) {
    const T ge = go[e];
    delta += ge * oi[e];
    const T* vrow = vt + e * M;
#pragma omp simd
    for (std::size_t j = 0; j < M; ++j) ds[j] += ge * vrow[j];
  }
#pragma omp simd
  for (std::size_t j = 0; j < M; ++j) ds[j] = p[j] * (ds[j] - delta) * scale;
  for (std::size_t e = 0; e < Dv; ++e) kernels::axpy(go[e], p, gvt + e * M, M);
  for (std::size_t d = 0; d < D; ++d) gqi[d] += kernels::dot(ds, kt + d * M, M);
  for (std::size_t d = 0; d < D; ++d) kernels::axpy(qi[d], ds, gkt + d * M, M);
}

// Same contracts with D == Dv == K known at compile time: two sweeps over the
// keys instead of one per feature, which matters for narrow heads.
template <int K, typename T>
T attention_row_forward_k(const T* qi, const T* kt, const T* vt, std::size_t, std::size_t, std::size_t M, T scale, T* p, T* o) {
  T qs[K];
  for (int d = 0; d < K; ++d) qs[d] = qi[d] * scale;
  T m = -std::numeric_limits<T>::infinity();
#pragma omp simd reduction(max : m)
  for (std::size_t j = 0; j < M; ++j) {
    T s = T(0);
    for (int d = 0; d < K; ++d) s += qs[d] * kt[d * M + j];
    p[j] = s;
    m = s > m ? s : m;
  }
  T sum = T(0);
#pragma omp simd reduction(+ : sum)
  for (std::size_t j = 0; j < M; ++j) {
    p[j] = kernels::exp_fast(p[j] - m);
    sum += p[j];
  }
  const T inv = T(1) / sum;
  for (int d = 0; d < K; ++d) o[d] = kernels::dot(p, vt + d * M, M) * inv;
  return m + std::log(sum);
}

template <int K, typename T>
void attention_row_backward_k(const T* qi, const T* go, const T* oi, T l, const T* kt, const T* vt, std::size_t, std::size_t,
                              std::size_t M, T scale, T*, T* ds, T* gqi, T* gkt, T* gvt) {
  T qs[K], g[K];
  T delta = T(0);
  for (int d = 0; d < K; ++d) {
    qs[d] = qi[d] * scale;
    g[d] = go[d];
    delta += go[d] * oi[d];
  }
#pragma omp simd
  for (std::size_t j = 0; j < M; ++j) {
    T s = T(0), dp = T(0);
    for (int d = 0; d < K; ++d) {
      s += qs[d] * kt[d * M + j];
      dp += g[d] * vt[d * M + j];
    }
    const T pj = kernels::exp_fast(s - l);
    const T dsj = pj * (dp - delta) * scale;
    ds[j] = dsj;
    for (int d = 0; d < K; ++d) {
      gvt[d * M + j] += g[d] * pj;
      gkt[d * M + j] += qi[d] * dsj;
    }
  }
  for (int d = 0; d < K; ++d) gqi[d] += kernels::dot(ds, kt + d * M, M);
}

template <typename T>
struct AttentionRows {
  using Forward = T (*)(const T*, const T*, const T*, std::size_t, std::size_t, std::size_t, T, T*, T*);
  using Backward = void (*)(const T*, const T*, const T*, T, const T*, const T*, std::size_t, std::size_t, std::size_t, T, T*, T*,
                            T*, T*, T*);
  Forward forward;
  Backward backward;
};

template <typename T, int K>
AttentionRows<T> fixed_rows() {
  return {&attention_row_forward_k<K, T>, &attention_row_backward_k<K, T>};
}

template <typename T>
AttentionRows<T> select_rows(std::size_t D, std::size_t Dv) {
  if (D == Dv) {
    switch (D) {
      case 1: return fixed_rows<T, 1>();
      case 2: return fixed_rows<T, 2>();
      case 4: return fixed_rows<T, 4>();
      case 8: return fixed_rows<T, 8>();
      default: break;
    }
  }
  return {&attention_row_forward<T>, &attention_row_backward<T>};
}

}  // namespace detail

// softmax(scale * Q K^T) V for q: [B,N,D], k: [B,M,D], v: [B,M,Dv] -> [B,N,Dv].
// Rows are processed one query at a time; backward recomputes probabilities
// from the stored log-sum-exp, so memory stays linear in N and M.
template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v, T scale) {
  if (q.dim() != 3 || k.dim() != 3 || v.dim() != 3) {
    throw ShapeError("attention expects rank-3 [B,tokens,dim] tensors, got " + to_string(q.shape()) + ", " +
                     to_string(k.shape()) + ", " + to_string(v.shape()));
  }
  const std::size_t B = q.size(0);
  const std::size_t N = q.size(1);
  const std::size_t D = q.size(2);
  const std::size_t M = k.size(1);
  const std::size_t Dv = v.size(2);
  if (k.size(0) != B || v.size(0) != B) throw ShapeError("attention: batch axis mismatch");
  if (k.size(2) != D) throw ShapeError("attention: query/key feature axis mismatch");
  if (v.size(1) != M) throw ShapeError("attention: key/value token axis mismatch");
  ++stats::softmax_calls;

  const detail::AttentionRows<T> rows = detail::select_rows<T>(D, Dv);
  auto lse = std::make_shared<std::vector<T>>(B * N);
  std::vector<T> out(B * N * Dv, T(0));
  std::vector<T> kt(D * M);
  std::vector<T> vt(Dv * M);
  std::vector<T> p(M);
  const T* qd = q.data().data();
  const T* kd = k.data().data();
  const T* vd = v.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    detail::transpose_into(kd + b * M * D, M, D, kt.data());
    detail::transpose_into(vd + b * M * Dv, M, Dv, vt.data());
    for (std::size_t i = 0; i < N; ++i) {
      (*lse)[b * N + i] =
          rows.forward(qd + (b * N + i) * D, kt.data(), vt.data(), D, Dv, M, scale, p.data(), out.data() + (b * N + i) * Dv);
    }
  }

  return record("attention", Shape{B, N, Dv}, std::move(out), {q, k, v},
                [q, k, v, scale, lse, rows, B, N, D, M, Dv](Node<T>& node) {
                  T* gq = grad_of(q);
                  T* gk = grad_of(k);
                  T* gv = grad_of(v);
                  std::vector<T> kt(D * M), vt(Dv * M), gkt(D * M), gvt(Dv * M), p(M), ds(M), gq_row(D);
                  const T* qd = q.data().data();
                  const T* kd = k.data().data();
                  const T* vd = v.data().data();
                  for (std::size_t b = 0; b < B; ++b) {
                    detail::transpose_into(kd + b * M * D, M, D, kt.data());
                    detail::transpose_into(vd + b * M * Dv, M, Dv, vt.data());
                    std::fill(gkt.begin(), gkt.end(), T(0));
                    std::fill(gvt.begin(), gvt.end(), T(0));
                    for (std::size_t i = 0; i < N; ++i) {
                      const std::size_t r = b * N + i;
                      T* gqi = gq ? gq + r * D : gq_row.data();
                      rows.backward(qd + r * D, node.grad.data() + r * Dv, node.data.data() + r * Dv, (*lse)[r], kt.data(), vt.data(), D,
                                    Dv, M, scale, p.data(), ds.data(), gqi, gkt.data(), gvt.data());
                    }
                    if (gk) {
                      T* gkb = gk + b * M * D;
                      for (std::size_t j = 0; j < M; ++j) {
                        for (std::size_t d = 0; d < D; ++d) gkb[j * D + d] += gkt[d * M + j];
                      }
                    }
                    if (gv) {
                      T* gvb = gv + b * M * Dv;
                      for (std::size_t j = 0; j < M; ++j) {
                        for (std::size_t e = 0; e < Dv; ++e) gvb[j * Dv + e] += gvt[e * M + j];
                      }
                    }
                  }
                });
}

// Row-normalized attention weights softmax(scale * Q K^T): [B,N,M]. Off-tape;
// uses the same score and exponential path as attention().
template <typename T>
BasicTensor<T> attention_weights(const BasicTensor<T>& q, const BasicTensor<T>& k, T scale) {
  if (q.dim() != 3 || k.dim() != 3 || q.size(0) != k.size(0) || q.size(2) != k.size(2)) {
    throw ShapeError("attention_weights: incompatible " + to_string(q.shape()) + " and " + to_string(k.shape()));
  }
  const std::size_t B = q.size(0);
  const std::size_t N = q.size(1);
  const std::size_t D = q.size(2);
  const std::size_t M = k.size(1);
  std::vector<T> out(B * N * M);
  std::vector<T> kt(D * M);
  for (std::size_t b = 0; b < B; ++b) {
    detail::transpose_into(k.data().data() + b * M * D, M, D, kt.data());
    for (std::size_t i = 0; i < N; ++i) {
      T* p = out.data() + (b * N + i) * M;
      detail::score_row(q.data().data() + (b * N + i) * D, kt.data(), D, M, scale, p);
      const T s = detail::exp_shift_sum(p, M, detail::row_max(p, M));
      for (std::size_t j = 0; j < M; ++j) p[j] /= s;
    }
  }
  return BasicTensor<T>(Shape{B, N, M}, std::move(out));
}

}  // namespace cgf
