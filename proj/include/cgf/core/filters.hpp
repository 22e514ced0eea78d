#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "cgf/core/error.hpp"

namespace cgf {

// Sampled Gaussian, normalized to sum 1, taps -radius..radius.
inline std::vector<double> gaussian_kernel_1d(double sigma, std::size_t radius) {
  if (!(sigma > 0.0)) throw InvalidArgument("gaussian kernel needs sigma > 0");
  std::vector<double> k(2 * radius + 1);
  double s = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double t = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-t * t / (2.0 * sigma * sigma));
    s += k[i];
  }
  for (double& v : k) v /= s;
  return k;
}

inline std::size_t gaussian_radius(double sigma) { return static_cast<std::size_t>(std::ceil(3.0 * sigma)); }

// Separable filter of one H x W plane with replicated borders.
template <typename T>
std::vector<T> separable_filter(const T* plane, std::size_t H, std::size_t W, const std::vector<double>& k) {
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k.size() / 2);
  auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  std::vector<double> tmp(H * W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t t = -r; t <= r; ++t) {
        acc += k[static_cast<std::size_t>(t + r)] * plane[y * W + clampi(static_cast<std::ptrdiff_t>(x) + t, W)];
      }
      tmp[y * W + x] = acc;
    }
  }
  std::vector<T> out(H * W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t t = -r; t <= r; ++t) {
        acc += k[static_cast<std::size_t>(t + r)] * tmp[clampi(static_cast<std::ptrdiff_t>(y) + t, H) * W + x];
      }
      out[y * W + x] = static_cast<T>(acc);
    }
  }
  return out;
}

}  // namespace cgf
