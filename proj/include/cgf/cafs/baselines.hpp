#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include <fftw3.h>

#include "cgf/cafs/can.hpp"
#include "cgf/core/filters.hpp"

namespace cgf::cafs {

enum class Separator { cluster, gaussian, fourier, local };

inline Separator parse_separator(const std::string& s) {
  if (s == "cluster" || s == "can") return Separator::cluster;
  if (s == "gaussian") return Separator::gaussian;
  if (s == "fourier") return Separator::fourier;
  if (s == "local") return Separator::local;
  throw InvalidArgument("unknown separator '" + s + "' (expected cluster, gaussian, fourier or local)");
}

inline std::string to_string(Separator s) {
  switch (s) {
    case Separator::cluster: return "cluster";
    case Separator::gaussian: return "gaussian";
    case Separator::fourier: return "fourier";
    case Separator::local: return "local";
  }
  return "?";
}

inline constexpr double kBaselineGaussianSigma = 1.0;
inline constexpr std::size_t kBaselineGaussianWindow = 5;
inline constexpr std::size_t kLocalSmallWindow = 3;
inline constexpr std::size_t kLocalLargeWindow = 7;

namespace detail {

// Box mean over a (2r+1)^2 window with replicated borders.
inline std::vector<double> box_mean(const std::vector<double>& plane, std::size_t H, std::size_t W, std::size_t window) {
  return separable_filter(plane.data(), H, W, std::vector<double>(window, 1.0 / static_cast<double>(window)));
}

inline std::vector<double> gaussian_low(const std::vector<double>& plane, std::size_t H, std::size_t W) {
  return separable_filter(plane.data(), H, W, gaussian_kernel_1d(kBaselineGaussianSigma, kBaselineGaussianWindow / 2));
}

// Keep DFT coefficients within radius min(H,W)/8 of DC (signed frequencies).
inline std::vector<double> fourier_low(const std::vector<double>& plane, std::size_t H, std::size_t W) {
  const std::size_t n = H * W;
  fftw_complex* buf = fftw_alloc_complex(n);
  fftw_plan fwd = fftw_plan_dft_2d(static_cast<int>(H), static_cast<int>(W), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_plan inv = fftw_plan_dft_2d(static_cast<int>(H), static_cast<int>(W), buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
  for (std::size_t i = 0; i < n; ++i) {
    buf[i][0] = plane[i];
    buf[i][1] = 0.0;
  }
  fftw_execute(fwd);
  const double radius = static_cast<double>(std::min(H, W)) / 8.0;
  for (std::size_t u = 0; u < H; ++u) {
    const double fu = u <= H / 2 ? static_cast<double>(u) : static_cast<double>(u) - static_cast<double>(H);
    for (std::size_t v = 0; v < W; ++v) {
      const double fv = v <= W / 2 ? static_cast<double>(v) : static_cast<double>(v) - static_cast<double>(W);
      if (fu * fu + fv * fv > radius * radius) buf[u * W + v][0] = buf[u * W + v][1] = 0.0;
    }
  }
  fftw_execute(inv);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = buf[i][0] / static_cast<double>(n);
  fftw_destroy_plan(fwd);
  fftw_destroy_plan(inv);
  fftw_free(buf);
  return out;
}

// Two-scale box filter: small window where the local (3x3) variance exceeds
// the image median, large window elsewhere.
inline std::vector<double> local_low(const std::vector<double>& plane, std::size_t H, std::size_t W) {
  const auto mean3 = box_mean(plane, H, W, 3);
  std::vector<double> sq(plane.size());
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = plane[i] * plane[i];
  const auto sq3 = box_mean(sq, H, W, 3);
  std::vector<double> var(plane.size());
  for (std::size_t i = 0; i < var.size(); ++i) var[i] = std::max(0.0, sq3[i] - mean3[i] * mean3[i]);
  std::vector<double> sorted = var;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  const double threshold = sorted[sorted.size() / 2];
  const auto small = box_mean(plane, H, W, kLocalSmallWindow);
  const auto large = box_mean(plane, H, W, kLocalLargeWindow);
  std::vector<double> out(plane.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = var[i] > threshold ? small[i] : large[i];
  return out;
}

}  // namespace detail

// Fixed (non-learned) separators. img: [1,C,H,W]; result is off-tape.
template <typename T>
FreqPair<T> baseline_separate(const BasicTensor<T>& img, Separator kind) {
  if (img.dim() != 4 || img.size(0) != 1) throw ShapeError("baseline_separate expects [1,C,H,W], got " + cgf::to_string(img.shape()));
  if (kind == Separator::cluster) throw InvalidArgument("baseline_separate: the cluster separator needs learned parameters");
  const std::size_t C = img.size(1), H = img.size(2), W = img.size(3);
  std::vector<T> low(C * H * W), high(C * H * W);
  const auto d = img.data();
  for (std::size_t c = 0; c < C; ++c) {
    const std::vector<double> plane(d.begin() + static_cast<std::ptrdiff_t>(c * H * W), d.begin() + static_cast<std::ptrdiff_t>((c + 1) * H * W));
    std::vector<double> lp;
    switch (kind) {
      case Separator::gaussian: lp = detail::gaussian_low(plane, H, W); break;
      case Separator::fourier: lp = detail::fourier_low(plane, H, W); break;
      case Separator::local: lp = detail::local_low(plane, H, W); break;
      case Separator::cluster: break;
    }
    for (std::size_t i = 0; i < H * W; ++i) {
      low[c * H * W + i] = static_cast<T>(lp[i]);
      high[c * H * W + i] = d[c * H * W + i] - low[c * H * W + i];
    }
  }
  return {BasicTensor<T>(img.shape(), std::move(high)), BasicTensor<T>(img.shape(), std::move(low))};
}

}  // namespace cgf::cafs
