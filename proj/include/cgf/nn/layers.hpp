#pragma once

#include <cstddef>
#include <string>

#include "cgf/nn/params.hpp"
#include "cgf/tensor/conv.hpp"
#include "cgf/tensor/ops.hpp"

namespace cgf::nn {

template <typename T>
struct Conv2d {
  BasicTensor<T> weight;
  BasicTensor<T> bias;
  Conv2dOptions options;

  Conv2d() = default;

  // "Same" padding for stride 1 is derived from kernel size and dilation.
  Conv2d(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         std::size_t dilation = 1, std::size_t groups = 1, Init init = Init::trunc_normal, bool with_bias = true) {
    if (in % groups != 0) throw ShapeError(name + ": input channels not divisible by groups");
    options.dilation = dilation;
    options.groups = groups;
    options.padding = dilation * (kernel / 2);
    weight = store.add(name + ".weight", Shape{out, in / groups, kernel, kernel}, init);
    if (with_bias) bias = store.add(name + ".bias", Shape{out}, Init::zeros);
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return conv2d(x, weight, bias, options); }
};

// Row-wise affine map on [rows, in] -> [rows, out].
template <typename T>
struct Linear {
  BasicTensor<T> weight;  // [in, out]
  BasicTensor<T> bias;    // [out]

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Init init = Init::trunc_normal) {
    weight = store.add(name + ".weight", Shape{in, out}, init);
    bias = store.add(name + ".bias", Shape{out}, Init::zeros);
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return add(matmul(x, weight), bias); }
};

// LayerNorm over the channel axis of [N,C,H,W] (per pixel).
template <typename T>
struct ChannelNorm {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;

  ChannelNorm() = default;
  ChannelNorm(ParamStore<T>& store, const std::string& name, std::size_t channels) {
    gamma = store.add(name + ".gamma", Shape{channels}, Init::ones);
    beta = store.add(name + ".beta", Shape{channels}, Init::zeros);
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return layer_norm(x, gamma, beta, 1); }
};

// Per-pixel two-layer MLP: 1x1 conv, GELU, 1x1 conv.
template <typename T>
struct PixelMlp {
  Conv2d<T> fc1;
  Conv2d<T> fc2;

  PixelMlp() = default;
  PixelMlp(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
           Init last = Init::trunc_normal) {
    fc1 = Conv2d<T>(store, name + ".fc1", in, hidden, 1);
    fc2 = Conv2d<T>(store, name + ".fc2", hidden, out, 1, 1, 1, last);
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return fc2(gelu(fc1(x))); }
};

// 1x1 pointwise conv followed by 3x3 depthwise conv.
template <typename T>
struct PointDepthwise {
  Conv2d<T> point;
  Conv2d<T> depth;

  PointDepthwise() = default;
  PointDepthwise(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out) {
    point = Conv2d<T>(store, name + ".point", in, out, 1);
    depth = Conv2d<T>(store, name + ".depth", out, out, 3, 1, out);
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return depth(point(x)); }
};

}  // namespace cgf::nn
