#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>

// Inner loops shared by the primitives. Written so that GCC/Clang vectorize
// them at -O2/-O3 with -fopenmp-simd; no intrinsics.

namespace cgf::kernels {

// exp for the softmax hot loops. Cody-Waite range reduction plus a degree-6
// minimax polynomial; about 1 ulp over the clamped domain. Branch-free so the
// calling loop vectorizes.
inline float exp_fast(float x) noexcept {
  x = x < -87.0f ? -87.0f : (x > 88.0f ? 88.0f : x);
  const float fi = std::floor(x * 1.44269504088896341f + 0.5f);
  float r = x - fi * 0.693359375f;
  r = r - fi * -2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const std::int32_t e = (static_cast<std::int32_t>(fi) + 127) << 23;
  return p * std::bit_cast<float>(e);
}

inline double exp_fast(double x) noexcept { return std::exp(x); }

// C[M,N] += A[M,K] * B[K,N], all row-major.
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  constexpr std::size_t kBlock = 512;
  for (std::size_t j0 = 0; j0 < N; j0 += kBlock) {
    const std::size_t j1 = j0 + kBlock < N ? j0 + kBlock : N;
    for (std::size_t i = 0; i < M; ++i) {
      T* c = C + i * N;
      const T* a = A + i * K;
      for (std::size_t k = 0; k < K; ++k) {
        const T av = a[k];
        if (av == T(0)) continue;
        const T* b = B + k * N;
#pragma omp simd
        for (std::size_t j = j0; j < j1; ++j) c[j] += av * b[j];
      }
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T.
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const T* b = B + j * K;
      T acc = T(0);
#pragma omp simd reduction(+ : acc)
      for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
      C[i * N + j] += acc;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N].
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  constexpr std::size_t kBlock = 512;
  for (std::size_t j0 = 0; j0 < N; j0 += kBlock) {
    const std::size_t j1 = j0 + kBlock < N ? j0 + kBlock : N;
    for (std::size_t k = 0; k < K; ++k) {
      const T* a = A + k * M;
      const T* b = B + k * N;
      for (std::size_t i = 0; i < M; ++i) {
        const T av = a[i];
        if (av == T(0)) continue;
        T* c = C + i * N;
#pragma omp simd
        for (std::size_t j = j0; j < j1; ++j) c[j] += av * b[j];
      }
    }
  }
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc = T(0);
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace cgf::kernels
