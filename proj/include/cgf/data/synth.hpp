#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "cgf/core/error.hpp"
#include "cgf/core/filters.hpp"
#include "cgf/core/rng.hpp"
#include "cgf/data/image.hpp"

namespace cgf::data {

inline constexpr double kDefaultBlurSigma = 1.0;
inline constexpr std::size_t kDefaultRatio = 4;

struct SceneLayers {
  Image image;
  std::vector<std::uint8_t> object_mask;  // 1 where a sharp-edged object was drawn
};

// Deterministic multispectral scene: a smooth two-material background under a
// slow illumination gradient, overlaid with sharp-edged rectangles and disks.
// Each material has a smooth (band-correlated) spectrum; object materials are
// redrawn until they sit at least 0.15 away from the background blend in some
// band.
inline SceneLayers synth_scene_layers(std::uint64_t seed, std::size_t size, std::size_t channels) {
  if (channels != 4 && channels != 8) throw InvalidArgument("synth_scene: channels must be 4 or 8, got " + std::to_string(channels));
  if (size == 0 || size % 4 != 0) throw InvalidArgument("synth_scene: size must be a positive multiple of 4");
  Rng rng(seed);
  const std::size_t n_materials = 6;
  std::vector<std::vector<double>> spectra(n_materials, std::vector<double>(channels));
  auto draw = [&](std::vector<double>& s) {
    const double base = rng.uniform(0.2, 0.8);
    const double slope = rng.uniform(-0.4, 0.4);
    const double bend = rng.uniform(-0.15, 0.15);
    for (std::size_t c = 0; c < channels; ++c) {
      const double t = static_cast<double>(c) / static_cast<double>(channels - 1) - 0.5;
      s[c] = std::clamp(base + slope * t + bend * (4.0 * t * t - 1.0 / 3.0) + 0.03 * rng.normal(), 0.05, 0.95);
    }
  };
  auto distinct = [&](const std::vector<double>& s) {
    double gap = 0.0;
    for (std::size_t c = 0; c < channels; ++c) gap = std::max(gap, std::abs(s[c] - 0.5 * (spectra[0][c] + spectra[1][c])));
    return gap >= 0.15;
  };
  draw(spectra[0]);
  draw(spectra[1]);
  for (std::size_t m = 2; m < n_materials; ++m) {
    do draw(spectra[m]);
    while (!distinct(spectra[m]));
  }

  const double S = static_cast<double>(size);
  const double fx = rng.uniform(0.5, 1.5) * 2.0 * M_PI / S;
  const double fy = rng.uniform(0.5, 1.5) * 2.0 * M_PI / S;
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  const double tilt = rng.uniform(-0.2, 0.2);

  Image img(size, size, channels);
  std::vector<std::uint8_t> mask(size * size, 0);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double w = 0.5 + 0.5 * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
      const double light = 1.0 + tilt * (static_cast<double>(y) / S - 0.5);
      for (std::size_t c = 0; c < channels; ++c) {
        img.at(y, x, c) = static_cast<float>(light * (w * spectra[0][c] + (1.0 - w) * spectra[1][c]));
      }
    }
  }

  const std::size_t n_shapes = 4 + static_cast<std::size_t>(rng.below(4));
  for (std::size_t s = 0; s < n_shapes; ++s) {
    const auto& spec = spectra[2 + rng.below(n_materials - 2)];
    const bool disk = rng.uniform() < 0.5;
    const double cy = rng.uniform(0.0, S), cx = rng.uniform(0.0, S);
    const double a = rng.uniform(S / 16.0, S / 6.0), b = rng.uniform(S / 16.0, S / 6.0);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
        const bool inside = disk ? dy * dy + dx * dx <= a * a : std::abs(dy) <= a && std::abs(dx) <= b;
        if (!inside) continue;
        mask[y * size + x] = 1;
        for (std::size_t c = 0; c < channels; ++c) img.at(y, x, c) = static_cast<float>(spec[c]);
      }
    }
  }
  img.clamp_unit();
  return {std::move(img), std::move(mask)};
}

inline Image synth_scene(std::uint64_t seed, std::size_t size, std::size_t channels) {
  return synth_scene_layers(seed, size, channels).image;
}

// Equal-weight band average.
inline Image pan_of(const Image& ms) {
  Image pan(ms.height, ms.width, 1);
  for (std::size_t p = 0; p < ms.height * ms.width; ++p) {
    double s = 0.0;
    for (std::size_t c = 0; c < ms.channels; ++c) s += ms.pixels[p * ms.channels + c];
    pan.pixels[p] = static_cast<float>(s / static_cast<double>(ms.channels));
  }
  return pan;
}

// Gaussian blur (replicated borders) then decimation, sampling every
// ratio-th pixel starting at ratio/2.
inline Image blur_decimate(const Image& img, std::size_t ratio, double sigma) {
  if (ratio == 0) throw InvalidArgument("ratio must be positive");
  if (img.height % ratio != 0 || img.width % ratio != 0) {
    throw InvalidArgument("image " + geometry(img) + " not divisible by ratio " + std::to_string(ratio));
  }
  const auto k = gaussian_kernel_1d(sigma, gaussian_radius(sigma));
  Image out(img.height / ratio, img.width / ratio, img.channels);
  const std::size_t off = ratio / 2;
  for (std::size_t c = 0; c < img.channels; ++c) {
    const std::vector<float> band = img.band(c);
    const std::vector<float> blurred = separable_filter(band.data(), img.height, img.width, k);
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) out.at(y, x, c) = blurred[(y * ratio + off) * img.width + x * ratio + off];
    }
  }
  return out;
}

// Reduced-resolution triple: LRMS = blur+decimate(gt), PAN = band mean of gt.
inline SamplePair wald_degrade(const Image& gt, std::size_t ratio = kDefaultRatio, double blur_sigma = kDefaultBlurSigma) {
  SamplePair pair;
  pair.ratio = ratio;
  pair.lrms = blur_decimate(gt, ratio, blur_sigma);
  pair.pan = pan_of(gt);
  pair.gt = gt;
  return pair;
}

inline Image crop(const Image& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  Image out(h, w, img.channels);
  for (std::size_t y = 0; y < h; ++y) {
    std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(((y0 + y) * img.width + x0) * img.channels),
                w * img.channels, out.pixels.begin() + static_cast<std::ptrdiff_t>(y * w * img.channels));
  }
  return out;
}

// Aligned PAN/LRMS/GT crops on an LRMS grid with the given stride.
inline std::vector<SamplePair> extract_patches(const SamplePair& pair, std::size_t ms_patch, long stride) {
  if (stride <= 0) throw InvalidArgument("extract_patches: stride must be positive");
  if (ms_patch == 0 || ms_patch > pair.lrms.height || ms_patch > pair.lrms.width) {
    throw InvalidArgument("extract_patches: patch size " + std::to_string(ms_patch) + " exceeds lrms " + geometry(pair.lrms));
  }
  pair.validate();
  const std::size_t st = static_cast<std::size_t>(stride);
  const std::size_t r = pair.ratio;
  std::vector<SamplePair> out;
  for (std::size_t y = 0; y + ms_patch <= pair.lrms.height; y += st) {
    for (std::size_t x = 0; x + ms_patch <= pair.lrms.width; x += st) {
      SamplePair p;
      p.ratio = r;
      p.lrms = crop(pair.lrms, y, x, ms_patch, ms_patch);
      p.pan = crop(pair.pan, y * r, x * r, ms_patch * r, ms_patch * r);
      if (pair.gt) p.gt = crop(*pair.gt, y * r, x * r, ms_patch * r, ms_patch * r);
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace cgf::data
