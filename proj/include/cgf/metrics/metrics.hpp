#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "cgf/core/error.hpp"
#include "cgf/core/filters.hpp"
#include "cgf/core/tolerances.hpp"
#include "cgf/data/image.hpp"
#include "cgf/data/synth.hpp"

namespace cgf::metrics {

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;
inline constexpr std::size_t kQBlock = 32;
inline constexpr double kPanDegradeSigma = 1.0;

namespace detail {

inline void require_same(const data::Image& a, const data::Image& b, const char* what) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw ShapeError(std::string(what) + ": " + data::geometry(a) + " vs " + data::geometry(b));
  }
}

inline std::vector<double> band(const data::Image& img, std::size_t c) {
  std::vector<double> out(img.height * img.width);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.pixels[i * img.channels + c];
  return out;
}

// Weighted local mean with the window truncated at the borders and the
// remaining weights renormalized. The truncated window is a product of 1-D
// supports, so the filter stays separable.
inline std::vector<double> local_mean(const std::vector<double>& x, std::size_t H, std::size_t W, const std::vector<double>& k) {
  const long r = static_cast<long>(k.size() / 2);
  std::vector<double> tmp(H * W), out(H * W);
  for (std::size_t y = 0; y < H; ++y) {
    for (long xx = 0; xx < static_cast<long>(W); ++xx) {
      double acc = 0.0, wsum = 0.0;
      for (long t = -r; t <= r; ++t) {
        const long s = xx + t;
        if (s < 0 || s >= static_cast<long>(W)) continue;
        acc += k[static_cast<std::size_t>(t + r)] * x[y * W + static_cast<std::size_t>(s)];
        wsum += k[static_cast<std::size_t>(t + r)];
      }
      tmp[y * W + static_cast<std::size_t>(xx)] = acc / wsum;
    }
  }
  for (long yy = 0; yy < static_cast<long>(H); ++yy) {
    for (std::size_t xx = 0; xx < W; ++xx) {
      double acc = 0.0, wsum = 0.0;
      for (long t = -r; t <= r; ++t) {
        const long s = yy + t;
        if (s < 0 || s >= static_cast<long>(H)) continue;
        acc += k[static_cast<std::size_t>(t + r)] * tmp[static_cast<std::size_t>(s) * W + xx];
        wsum += k[static_cast<std::size_t>(t + r)];
      }
      out[static_cast<std::size_t>(yy) * W + xx] = acc / wsum;
    }
  }
  return out;
}

// 3x3 Laplacian response on the interior (no padding).
inline std::vector<double> laplacian(const std::vector<double>& x, std::size_t H, std::size_t W) {
  std::vector<double> out;
  if (H < 3 || W < 3) return out;
  out.reserve((H - 2) * (W - 2));
  for (std::size_t y = 1; y + 1 < H; ++y) {
    for (std::size_t xx = 1; xx + 1 < W; ++xx) {
      out.push_back(4.0 * x[y * W + xx] - x[(y - 1) * W + xx] - x[(y + 1) * W + xx] - x[y * W + xx - 1] - x[y * W + xx + 1]);
    }
  }
  return out;
}

// Pearson correlation; two constant signals correlate 1 when equal, else 0.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return a == b ? 1.0 : 0.0;
  return sab / std::sqrt(saa * sbb);
}

// Universal image quality index of one block (population moments).
// Degenerate blocks: equal constants score 1; otherwise the factors whose
// denominators vanish are dropped.
inline double q_block(const double* x, const double* y, std::size_t H0, std::size_t W0, std::size_t bh, std::size_t bw, std::size_t W) {
  const double n = static_cast<double>(bh * bw);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < bh; ++i) {
    for (std::size_t j = 0; j < bw; ++j) {
      mx += x[(H0 + i) * W + W0 + j];
      my += y[(H0 + i) * W + W0 + j];
    }
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < bh; ++i) {
    for (std::size_t j = 0; j < bw; ++j) {
      const double dx = x[(H0 + i) * W + W0 + j] - mx, dy = y[(H0 + i) * W + W0 + j] - my;
      sxx += dx * dx;
      syy += dy * dy;
      sxy += dx * dy;
    }
  }
  sxx /= n;
  syy /= n;
  sxy /= n;
  const double mean_den = mx * mx + my * my, var_den = sxx + syy;
  if (mean_den == 0.0 && var_den == 0.0) return 1.0;
  if (var_den == 0.0) return 2.0 * mx * my / mean_den;
  if (mean_den == 0.0) return 2.0 * sxy / var_den;
  return 4.0 * sxy * mx * my / (var_den * mean_den);
}

inline std::size_t scale_ratio(const data::Image& fused, const data::Image& lrms, const char* what) {
  if (fused.channels != lrms.channels || fused.height % lrms.height != 0 || fused.width % lrms.width != 0 ||
      fused.height / lrms.height != fused.width / lrms.width) {
    throw ShapeError(std::string(what) + ": fused " + data::geometry(fused) + " is not an integer upscale of lrms " + data::geometry(lrms));
  }
  return fused.height / lrms.height;
}

}  // namespace detail

// Q averaged over non-overlapping blocks of kQBlock (clipped to the image).
inline double q_index(const std::vector<double>& x, const std::vector<double>& y, std::size_t H, std::size_t W, std::size_t block = kQBlock) {
  if (x.size() != H * W || y.size() != H * W) throw ShapeError("q_index: plane size mismatch");
  const std::size_t bh = std::min(block, H), bw = std::min(block, W);
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + bh <= H; y0 += bh) {
    for (std::size_t x0 = 0; x0 + bw <= W; x0 += bw) {
      acc += detail::q_block(x.data(), y.data(), y0, x0, bh, bw, W);
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

// All bands jointly, capped for (near-)identical inputs.
inline double psnr(const data::Image& pred, const data::Image& gt) {
  detail::require_same(pred, gt, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    const double d = static_cast<double>(pred.pixels[i]) - static_cast<double>(gt.pixels[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(pred.pixels.size());
  if (mse < tol::kPsnrMseFloor) return tol::kPsnrCapDb;
  return std::min(tol::kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

inline double ssim(const data::Image& a, const data::Image& b) {
  detail::require_same(a, b, "ssim");
  const auto k = gaussian_kernel_1d(kSsimSigma, kSsimWindow / 2);
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
  const std::size_t H = a.height, W = a.width, n = H * W;
  double total = 0.0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    const auto x = detail::band(a, c), y = detail::band(b, c);
    std::vector<double> xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = detail::local_mean(x, H, W, k), my = detail::local_mean(y, H, W, k);
    const auto exx = detail::local_mean(xx, H, W, k), eyy = detail::local_mean(yy, H, W, k), exy = detail::local_mean(xy, H, W, k);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double vx = exx[i] - mx[i] * mx[i], vy = eyy[i] - my[i] * my[i], cxy = exy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(n);
  }
  return total / static_cast<double>(a.channels);
}

inline double scc(const data::Image& a, const data::Image& b) {
  detail::require_same(a, b, "scc");
  if (a.height < 3 || a.width < 3) throw ShapeError("scc needs at least 3x3 pixels, got " + data::geometry(a));
  double total = 0.0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    total += detail::pearson(detail::laplacian(detail::band(a, c), a.height, a.width), detail::laplacian(detail::band(b, c), b.height, b.width));
  }
  return total / static_cast<double>(a.channels);
}

// Mean spectral angle in degrees; pixels where either vector is ~0 are skipped.
inline double sam(const data::Image& a, const data::Image& b) {
  detail::require_same(a, b, "sam");
  double acc = 0.0;
  std::size_t counted = 0;
  for (std::size_t p = 0; p < a.height * a.width; ++p) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t c = 0; c < a.channels; ++c) {
      const double x = a.pixels[p * a.channels + c], y = b.pixels[p * b.channels + c];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    if (std::sqrt(na) < tol::kSamNormFloor || std::sqrt(nb) < tol::kSamNormFloor) continue;
    // sqrt(x * x) == x exactly, so identical vectors give cos == 1.
    acc += std::acos(std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0));
    ++counted;
  }
  return counted == 0 ? 0.0 : acc / static_cast<double>(counted) * 180.0 / std::numbers::pi;
}

inline double ergas(const data::Image& pred, const data::Image& gt, std::size_t ratio) {
  detail::require_same(pred, gt, "ergas");
  if (ratio == 0) throw InvalidArgument("ergas: ratio must be positive");
  const std::size_t n = gt.height * gt.width;
  double acc = 0.0;
  for (std::size_t c = 0; c < gt.channels; ++c) {
    double se = 0.0, mu = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const double g = gt.pixels[p * gt.channels + c], d = static_cast<double>(pred.pixels[p * pred.channels + c]) - g;
      se += d * d;
      mu += g;
    }
    mu /= static_cast<double>(n);
    if (std::abs(mu) < tol::kErgasMeanFloor) throw InvalidArgument("ergas: band " + std::to_string(c) + " has (near-)zero mean");
    const double rel = std::sqrt(se / static_cast<double>(n)) / mu;
    acc += rel * rel;
  }
  return 100.0 / static_cast<double>(ratio) * std::sqrt(acc / static_cast<double>(gt.channels));
}

inline double d_lambda(const data::Image& fused, const data::Image& lrms) {
  const std::size_t ratio = detail::scale_ratio(fused, lrms, "d_lambda");
  if (fused.channels < 2) throw InvalidArgument("d_lambda needs at least 2 bands");
  const std::size_t low_block = std::max<std::size_t>(1, kQBlock / ratio);
  const std::size_t C = fused.channels;
  std::vector<std::vector<double>> f(C), l(C);
  for (std::size_t c = 0; c < C; ++c) {
    f[c] = detail::band(fused, c);
    l[c] = detail::band(lrms, c);
  }
  double acc = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < C; ++i) {
    for (std::size_t j = i + 1; j < C; ++j) {
      acc += std::abs(q_index(f[i], f[j], fused.height, fused.width) - q_index(l[i], l[j], lrms.height, lrms.width, low_block));
      ++pairs;
    }
  }
  return acc / static_cast<double>(pairs);
}

// Q blocks cover the same ground footprint at both scales: kQBlock pixels at
// PAN scale, kQBlock / ratio at LRMS scale.

// The PAN is degraded to LRMS scale with a Gaussian (sigma 1) blur and
// decimation, a surrogate for the sensor MTF.
inline double d_s(const data::Image& fused, const data::Image& pan, const data::Image& lrms) {
  if (pan.channels != 1) throw ShapeError("d_s: pan must have one band, got " + data::geometry(pan));
  if (pan.height != fused.height || pan.width != fused.width) throw ShapeError("d_s: pan " + data::geometry(pan) + " vs fused " + data::geometry(fused));
  const std::size_t ratio = detail::scale_ratio(fused, lrms, "d_s");
  const std::size_t low_block = std::max<std::size_t>(1, kQBlock / ratio);
  const data::Image pan_lr = data::blur_decimate(pan, ratio, kPanDegradeSigma);
  const auto p = detail::band(pan, 0), p_lr = detail::band(pan_lr, 0);
  double acc = 0.0;
  for (std::size_t c = 0; c < fused.channels; ++c) {
    acc += std::abs(q_index(detail::band(fused, c), p, fused.height, fused.width) -
                    q_index(detail::band(lrms, c), p_lr, lrms.height, lrms.width, low_block));
  }
  return acc / static_cast<double>(fused.channels);
}

struct ReducedMetrics {
  double psnr = 0, ssim = 0, scc = 0, sam = 0, ergas = 0;
};

struct FullMetrics {
  double d_lambda = 0, d_s = 0, hqnr = 0;
};

inline ReducedMetrics reduced(const data::Image& pred, const data::Image& gt, std::size_t ratio) {
  return {psnr(pred, gt), ssim(pred, gt), scc(pred, gt), sam(pred, gt), ergas(pred, gt, ratio)};
}

inline FullMetrics full(const data::Image& fused, const data::Image& pan, const data::Image& lrms) {
  FullMetrics m{d_lambda(fused, lrms), d_s(fused, pan, lrms), 0.0};
  m.hqnr = (1.0 - m.d_lambda) * (1.0 - m.d_s);
  return m;
}

inline double hqnr(const data::Image& fused, const data::Image& pan, const data::Image& lrms) { return full(fused, pan, lrms).hqnr; }

}  // namespace cgf::metrics
