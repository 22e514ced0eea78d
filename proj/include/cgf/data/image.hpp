#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "cgf/core/error.hpp"
#include "cgf/tensor/tensor.hpp"

namespace cgf::data {

// H x W x C raster, pixel-interleaved (H-major, then W, then C).
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f) : height(h), width(w), channels(c), pixels(h * w * c, fill) {
    if (h == 0 || w == 0 || c == 0) throw ShapeError("image dimensions must be positive");
  }

  std::size_t size() const { return pixels.size(); }
  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }

  // Contiguous copy of one band.
  std::vector<float> band(std::size_t c) const {
    std::vector<float> out(height * width);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pixels[i * channels + c];
    return out;
  }

  bool same_geometry(const Image& o) const { return height == o.height && width == o.width && channels == o.channels; }

  bool in_unit_range() const {
    return std::all_of(pixels.begin(), pixels.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
  }

  void clamp_unit() {
    for (float& v : pixels) v = std::clamp(v, 0.0f, 1.0f);
  }
};

inline std::string geometry(const Image& img) {
  return std::to_string(img.height) + "x" + std::to_string(img.width) + "x" + std::to_string(img.channels);
}

// PAN + LRMS (+ optional GT) at scale ratio r.
struct SamplePair {
  Image pan;
  Image lrms;
  std::optional<Image> gt;
  std::size_t ratio = 4;

  void validate() const {
    if (pan.channels != 1) throw ShapeError("pan must have one channel, got " + geometry(pan));
    if (pan.height != ratio * lrms.height || pan.width != ratio * lrms.width) {
      throw ShapeError("pan " + geometry(pan) + " is not ratio " + std::to_string(ratio) + " times lrms " + geometry(lrms));
    }
    if (gt && (gt->height != pan.height || gt->width != pan.width || gt->channels != lrms.channels)) {
      throw ShapeError("gt " + geometry(*gt) + " inconsistent with pan/lrms");
    }
  }
};

// HWC image -> [1,C,H,W] tensor.
template <typename T = float>
BasicTensor<T> to_tensor(const Image& img) {
  std::vector<T> out(img.size());
  const std::size_t hw = img.height * img.width;
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t c = 0; c < img.channels; ++c) out[c * hw + p] = static_cast<T>(img.pixels[p * img.channels + c]);
  }
  return BasicTensor<T>(Shape{1, img.channels, img.height, img.width}, std::move(out));
}

// [1,C,H,W] or [C,H,W] tensor -> HWC image (values copied as-is).
template <typename T>
Image from_tensor(const BasicTensor<T>& t) {
  if (!(t.dim() == 3 || (t.dim() == 4 && t.size(0) == 1))) {
    throw ShapeError("from_tensor expects [1,C,H,W] or [C,H,W], got " + to_string(t.shape()));
  }
  Image img(t.size(-2), t.size(-1), t.size(-3));
  const std::size_t hw = img.height * img.width;
  const auto d = t.data();
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t c = 0; c < img.channels; ++c) img.pixels[p * img.channels + c] = static_cast<float>(d[c * hw + p]);
  }
  return img;
}

}  // namespace cgf::data
