#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "cgf/tensor/attention.hpp"
#include "cgf/tensor/conv.hpp"
#include "cgf/tensor/ops.hpp"
#include "support/gradcheck.hpp"

using namespace cgf;
using cgf::testing::grad_check;
using cgf::testing::random_leaf;
using cgf::testing::random_tensor;

namespace {

// Six-loop direct convolution in double.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad,
                               std::size_t dil, std::size_t& oh, std::size_t& ow) {
  const std::size_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  const std::size_t CO = w.size(0), KH = w.size(2), KW = w.size(3);
  oh = (H + 2 * pad - (KH - 1) * dil - 1) / stride + 1;
  ow = (W + 2 * pad - (KW - 1) * dil - 1) / stride + 1;
  std::vector<double> out(N * CO * oh * ow, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < CO; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = b.defined() ? b.data()[co] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < KH; ++ky)
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const long iy = static_cast<long>(y * stride + ky * dil) - static_cast<long>(pad);
                const long ix = static_cast<long>(xx * stride + kx * dil) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                acc += static_cast<double>(x.at({n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)})) *
                       w.at({co, c, ky, kx});
              }
          out[((n * CO + co) * oh + y) * ow + xx] = acc;
        }
  return out;
}

}  // namespace

TEST(Conv2d, OnesKernelCountsNeighbours) {
  Tensor x(Shape{1, 1, 3, 3}, 1.0f);
  Tensor w(Shape{1, 1, 3, 3}, 1.0f);
  const Tensor y = conv2d(x, w, Tensor(), {.padding = 1});
  EXPECT_EQ(y.at({0, 0, 1, 1}), 9.0f);
  EXPECT_EQ(y.at({0, 0, 0, 0}), 4.0f);
  EXPECT_EQ(y.at({0, 0, 2, 2}), 4.0f);
  EXPECT_EQ(y.at({0, 0, 0, 1}), 6.0f);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(3);
  const Tensor x = random_tensor({2, 1, 5, 4}, rng);
  const Tensor y = conv2d(x, Tensor(Shape{1, 1, 1, 1}, 1.0f), Tensor());
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  Rng rng(7);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const Tensor w = random_tensor({4, 3, 3, 3}, rng);
  const Tensor b = random_tensor({4}, rng);
  const Tensor y = conv2d(x, w, b, {.padding = 1});
  std::size_t oh, ow;
  const auto ref = naive_conv(x, w, b, 1, 1, 1, oh, ow);
  ASSERT_EQ(y.numel(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    EXPECT_LE(std::abs(y.data()[i] - ref[i]), tol::kConvRelative * std::max(1.0, std::abs(ref[i])));
  }
}

TEST(Conv2d, ExhaustiveSmallShapeSweep) {
  Rng rng(11);
  int cases = 0;
  for (std::size_t n : {1, 2, 4})
    for (std::size_t ci : {1, 2, 4})
      for (std::size_t co : {1, 3, 4})
        for (std::size_t hw : {3, 5, 8})
          for (std::size_t k : {1, 3})
            for (std::size_t stride : {1, 2})
              for (std::size_t dil : {1, 2}) {
                const std::size_t pad = dil * (k / 2);
                const Tensor x = random_tensor({n, ci, hw, hw + 1 > 8 ? 8 : hw + 1}, rng);
                const Tensor w = random_tensor({co, ci, k, k}, rng);
                const Tensor b = random_tensor({co}, rng);
                const Tensor y = conv2d(x, w, b, {.stride = stride, .padding = pad, .dilation = dil});
                std::size_t oh, ow;
                const auto ref = naive_conv(x, w, b, stride, pad, dil, oh, ow);
                ASSERT_EQ(y.shape(), (Shape{n, co, oh, ow}));
                for (std::size_t i = 0; i < ref.size(); ++i) {
                  ASSERT_LE(std::abs(y.data()[i] - ref[i]), tol::kConvRelative * std::max(1.0, std::abs(ref[i])));
                }
                ++cases;
              }
  EXPECT_EQ(cases, 3 * 3 * 3 * 3 * 2 * 2 * 2);
}

TEST(Conv2d, DepthwiseGroupsMatchPerChannelConvolution) {
  Rng rng(5);
  const Tensor x = random_tensor({1, 3, 6, 6}, rng);
  const Tensor w = random_tensor({3, 1, 3, 3}, rng);
  const Tensor y = conv2d(x, w, Tensor(), {.padding = 1, .groups = 3});
  for (std::size_t c = 0; c < 3; ++c) {
    const Tensor xc = slice(x, 1, c, 1);
    const Tensor wc = slice(w, 0, c, 1);
    const Tensor yc = conv2d(xc, wc, Tensor(), {.padding = 1});
    for (std::size_t i = 0; i < 36; ++i) EXPECT_FLOAT_EQ(y.data()[c * 36 + i], yc.data()[i]);
  }
}

TEST(Conv2d, ShapeMismatchNamesAxis) {
  const Tensor x(Shape{1, 3, 4, 4});
  const Tensor w(Shape{2, 2, 3, 3});
  try {
    conv2d(x, w, Tensor(), {.padding = 1});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("input-channel axis"), std::string::npos);
  }
  EXPECT_THROW(conv2d(x, Tensor(Shape{2, 3, 3, 3}), Tensor(Shape{3})), ShapeError);
  EXPECT_THROW(conv2d(x, Tensor(Shape{2, 3, 2, 2}), Tensor()), ShapeError);
}

TEST(Unfold, SinglePixelPlacesValueAtCenter) {
  const Tensor x(Shape{1, 1, 1}, 5.0f);
  const Tensor u = unfold(x, 3);
  ASSERT_EQ(u.shape(), (Shape{1, 1, 9}));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(u.data()[i], i == 4 ? 5.0f : 0.0f);
}

TEST(Unfold, CenterTapIsPixel) {
  Rng rng(2);
  const Tensor x = random_tensor({2, 5, 7}, rng);
  const Tensor u = unfold(x, 5);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t xx = 0; xx < 7; ++xx) EXPECT_EQ(u.at({y, xx, c * 25 + 12}), x.at({c, y, xx}));
}

TEST(Unfold, MatchesManualWindowGather) {
  Rng rng(9);
  const Tensor x = random_tensor({2, 4, 4}, rng);
  const Tensor u = unfold(x, 3);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t xx = 0; xx < 4; ++xx) {
      std::size_t f = 0;
      for (std::size_t c = 0; c < 2; ++c)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx, ++f) {
            const int sy = static_cast<int>(y) + dy, sx = static_cast<int>(xx) + dx;
            const float expect = (sy < 0 || sx < 0 || sy >= 4 || sx >= 4)
                                     ? 0.0f
                                     : x.at({c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)});
            EXPECT_EQ(u.at({y, xx, f}), expect);
          }
    }
}

TEST(Unfold, EvenWindowRejected) { EXPECT_THROW(unfold(Tensor(Shape{1, 3, 3}), 2), InvalidArgument); }

TEST(Softmax, FixedPointsAndStabilization) {
  const Tensor a = softmax(Tensor(Shape{2}, std::vector<float>{0.0f, 0.0f}), 0);
  EXPECT_FLOAT_EQ(a.data()[0], 0.5f);
  EXPECT_FLOAT_EQ(a.data()[1], 0.5f);
  const Tensor b = softmax(Tensor(Shape{2}, std::vector<float>{1000.0f, 0.0f}), 0);
  EXPECT_EQ(b.data()[0], 1.0f);
  EXPECT_EQ(b.data()[1], 0.0f);
}

TEST(Softmax, MatchesDoubleFormula) {
  Rng rng(21);
  const Tensor64 x = random_leaf({5}, rng, -3.0, 3.0);
  const Tensor64 y = softmax(x, 0);
  long double z = 0;
  for (double v : x.data()) z += std::exp(static_cast<long double>(v));
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(y.data()[i], static_cast<double>(std::exp(static_cast<long double>(x.data()[i])) / z), 1e-7);
  }
  const Tensor yf = softmax(x.cast<float>(), 0);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(yf.data()[i], y.data()[i], 1e-6);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(4);
  const Tensor x = random_tensor({3, 7, 2}, rng, -5, 5);
  const Tensor y = softmax(x, 1);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < 7; ++i) s += y.at({a, i, c});
      EXPECT_NEAR(s, 1.0, tol::kSoftmaxRowSum);
    }
  const Tensor y2 = softmax(add_scalar(x, 3.0f), 1);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.data()[i], y2.data()[i], 1e-6);
  EXPECT_THROW(softmax(x, 3), ShapeError);
}

TEST(LayerNorm, NormalizesPerPosition) {
  Rng rng(8);
  const Tensor x = random_tensor({2, 6, 3, 3}, rng, -4, 9);
  const Tensor y = layer_norm(x, Tensor(), Tensor(), 1);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < 9; ++p) {
      double m = 0, v = 0;
      for (std::size_t c = 0; c < 6; ++c) m += y.at({n, c, p / 3, p % 3});
      m /= 6;
      for (std::size_t c = 0; c < 6; ++c) v += std::pow(y.at({n, c, p / 3, p % 3}) - m, 2);
      v /= 6;
      EXPECT_NEAR(m, 0.0, tol::kLayerNormMean);
      EXPECT_NEAR(v, 1.0, tol::kLayerNormVar);
    }
}

TEST(LayerNorm, ConstantVectorGivesZeros) {
  const Tensor y = layer_norm(Tensor(Shape{1, 8}, 3.5f), Tensor(), Tensor(), -1);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(layer_norm(Tensor(Shape{1, 8}), Tensor(), Tensor(), 2), ShapeError);
}

TEST(Activations, FixedPoints) {
  EXPECT_EQ(gelu(Tensor(Shape{1}, 0.0f)).item(), 0.0f);
  EXPECT_EQ(sigmoid(Tensor(Shape{1}, 0.0f)).item(), 0.5f);
  EXPECT_EQ(relu(Tensor(Shape{1}, -2.0f)).item(), 0.0f);
  // Exact GELU, not the tanh approximation.
  EXPECT_NEAR(gelu(Tensor64(Shape{1}, 1.0)).item(), 0.5 * (1 + std::erf(1 / std::sqrt(2.0))), 1e-15);
}

TEST(BilinearUpsample, MatchesInterpolationFormula) {
  const Tensor x(Shape{1, 1, 2, 2}, std::vector<float>{0, 1, 2, 3});
  const Tensor y = bilinear_upsample(x, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  auto src = [](double o) { return std::clamp((o + 0.5) / 2.0 - 0.5, 0.0, 1.0); };
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double ry = src(static_cast<double>(i)), rx = src(static_cast<double>(j));
      // f(y, x) = 2y + x is reproduced exactly by bilinear interpolation.
      EXPECT_NEAR(y.at({0, 0, i, j}), 2 * ry + rx, 1e-6);
    }
  EXPECT_FLOAT_EQ(y.at({0, 0, 1, 1}), 0.75f);
  EXPECT_FLOAT_EQ(y.at({0, 0, 3, 3}), 3.0f);
}

TEST(Backward, SumGivesOnes) {
  Tensor x(Shape{3}, std::vector<float>{1, 2, 3});
  x.set_requires_grad(true);
  backward(sum(x));
  for (float g : x.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, SquareGivesTwiceX) {
  Tensor x(Shape{2}, std::vector<float>{1, 2});
  x.set_requires_grad(true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad()[0], 2.0f);
  EXPECT_EQ(x.grad()[1], 4.0f);
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x(Shape{2}, 1.0f);
  x.set_requires_grad(true);
  EXPECT_THROW(backward(scale(x, 2.0f)), ShapeError);
}

TEST(Backward, ConsumedTapeRejected) {
  Tensor x(Shape{2}, 1.0f);
  x.set_requires_grad(true);
  const Tensor l = sum(scale(x, 2.0f));
  backward(l);
  EXPECT_THROW(backward(l), InvalidArgument);
}

TEST(Backward, EachLeafPopulatedOncePerCall) {
  // x feeds two branches; the tape must sum both contributions exactly once.
  Tensor x(Shape{1}, 3.0f);
  x.set_requires_grad(true);
  const Tensor y = add(mul(x, x), scale(x, 5.0f));
  backward(sum(y));
  EXPECT_EQ(x.grad()[0], 11.0f);
}

TEST(Numerics, NonFiniteSurfacesAsError) {
  Tensor x(Shape{2}, std::vector<float>{1.0f, std::numeric_limits<float>::infinity()});
  EXPECT_THROW(scale(x, 1.0f), NumericError);
  Tensor big(Shape{1}, 3e38f);
  EXPECT_THROW(add(big, big), NumericError);
}

TEST(Broadcast, ChannelAndSpatialMaps) {
  Rng rng(12);
  Tensor64 f = random_leaf({1, 3, 2, 2}, rng);
  Tensor64 ms = random_leaf({1, 1, 2, 2}, rng);
  Tensor64 mc = random_leaf({1, 3, 1, 1}, rng);
  const Tensor64 a = mul(f, ms);
  const Tensor64 b = mul(f, mc);
  EXPECT_DOUBLE_EQ(a.at({0, 2, 1, 0}), f.at({0, 2, 1, 0}) * ms.at({0, 0, 1, 0}));
  EXPECT_DOUBLE_EQ(b.at({0, 2, 1, 0}), f.at({0, 2, 1, 0}) * mc.at({0, 2, 0, 0}));
  EXPECT_THROW(add(f, Tensor64(Shape{1, 2, 2, 2})), ShapeError);
}

// ---------------------------------------------------------------------------
// Finite-difference checks, one per primitive.

class PrimitiveGrad : public ::testing::Test {
 protected:
  Rng rng{77};
  void expect_ok(const std::function<Tensor64()>& f, const std::vector<Tensor64>& in) {
    const auto r = grad_check(f, in);
    EXPECT_LT(r.worst_rel, tol::kGradRel) << "worst input: " << r.worst_input;
  }
};

TEST_F(PrimitiveGrad, Elementwise) {
  auto a = random_leaf({2, 3, 4}, rng);
  auto b = random_leaf({1, 3, 1}, rng);
  auto w = random_leaf({2, 3, 4}, rng);
  expect_ok([&] { return sum(mul(w, add(a, b))); }, {a, b});
  expect_ok([&] { return sum(mul(w, sub(a, b))); }, {a, b});
  expect_ok([&] { return sum(mul(w, mul(a, b))); }, {a, b});
  expect_ok([&] { return sum(mul(w, add_scalar(scale(a, 1.7), 0.3))); }, {a});
  expect_ok([&] { return mean(abs(add_scalar(a, 0.05))); }, {a});
}

TEST_F(PrimitiveGrad, Activations) {
  auto a = random_leaf({4, 8}, rng, -2, 2);
  auto w = random_leaf({4, 8}, rng);
  expect_ok([&] { return sum(mul(w, gelu(a))); }, {a});
  expect_ok([&] { return sum(mul(w, sigmoid(a))); }, {a});
  expect_ok([&] { return sum(mul(w, relu(add_scalar(a, 0.013)))); }, {a});
}

TEST_F(PrimitiveGrad, Normalizations) {
  auto a = random_leaf({2, 5, 3}, rng);
  auto g = random_leaf({5}, rng);
  auto bt = random_leaf({5}, rng);
  auto w = random_leaf({2, 5, 3}, rng);
  expect_ok([&] { return sum(mul(w, layer_norm(a, g, bt, 1))); }, {a, g, bt});
  expect_ok([&] { return sum(mul(w, softmax(a, 1))); }, {a});
  expect_ok([&] { return sum(mul(w, softmax(a, -1))); }, {a});
}

TEST_F(PrimitiveGrad, MatmulBothRanks) {
  auto a = random_leaf({3, 4}, rng);
  auto b = random_leaf({4, 5}, rng);
  auto w = random_leaf({3, 5}, rng);
  expect_ok([&] { return sum(mul(w, matmul(a, b))); }, {a, b});
  auto a3 = random_leaf({2, 3, 4}, rng);
  auto b3 = random_leaf({2, 4, 2}, rng);
  auto w3 = random_leaf({2, 3, 2}, rng);
  expect_ok([&] { return sum(mul(w3, matmul(a3, b3))); }, {a3, b3});
}

TEST_F(PrimitiveGrad, Convolutions) {
  auto x = random_leaf({2, 2, 5, 4}, rng);
  auto w = random_leaf({3, 2, 3, 3}, rng);
  auto b = random_leaf({3}, rng);
  auto out_w = random_leaf({2, 3, 3, 2}, rng);
  expect_ok([&] { return sum(mul(out_w, conv2d(x, w, b, {.stride = 2, .padding = 1}))); }, {x, w, b});
  auto dw = random_leaf({2, 1, 3, 3}, rng);
  auto out_d = random_leaf({2, 2, 5, 4}, rng);
  expect_ok([&] { return sum(mul(out_d, conv2d(x, dw, Tensor64(), {.padding = 2, .dilation = 2, .groups = 2}))); },
            {x, dw});
  auto ux = random_leaf({2, 3, 3}, rng);
  auto uw = random_leaf({3, 3, 18}, rng);
  expect_ok([&] { return sum(mul(uw, unfold(ux, 3))); }, {ux});
}

TEST_F(PrimitiveGrad, LayoutAndPooling) {
  auto x = random_leaf({2, 3, 2, 2}, rng);
  auto y = random_leaf({2, 1, 2, 2}, rng);
  auto w = random_leaf({2, 4, 2, 2}, rng);
  expect_ok([&] { return sum(mul(w, concat<double>({x, y}, 1))); }, {x, y});
  auto wp = random_leaf({2, 2, 3, 2}, rng);
  expect_ok([&] { return sum(mul(wp, permute(x, {0, 2, 1, 3}))); }, {x});
  auto ws = random_leaf({2, 2, 2, 2}, rng);
  expect_ok([&] { return sum(mul(ws, slice(x, 1, 1, 2))); }, {x});
  auto wg = random_leaf({2, 3, 1, 1}, rng);
  expect_ok([&] { return sum(mul(wg, global_avg_pool(x))); }, {x});
  auto wu = random_leaf({2, 3, 6, 6}, rng);
  expect_ok([&] { return sum(mul(wu, bilinear_upsample(x, 3))); }, {x});
  auto wr = random_leaf({6, 4}, rng);
  expect_ok([&] { return sum(mul(wr, reshape(x, {6, 4}))); }, {x});
}

TEST_F(PrimitiveGrad, FusedAttention) {
  auto q = random_leaf({2, 5, 3}, rng);
  auto k = random_leaf({2, 4, 3}, rng);
  auto v = random_leaf({2, 4, 2}, rng);
  auto w = random_leaf({2, 5, 2}, rng);
  expect_ok([&] { return sum(mul(w, attention(q, k, v, 0.7))); }, {q, k, v});
}

TEST_F(PrimitiveGrad, ComposedMiniNetwork) {
  auto x = random_leaf({1, 2, 4, 4}, rng);
  auto w = random_leaf({3, 2, 3, 3}, rng);
  auto b = random_leaf({3}, rng);
  auto g = random_leaf({3}, rng);
  auto bt = random_leaf({3}, rng);
  expect_ok([&] { return sum(gelu(layer_norm(conv2d(x, w, b, {.padding = 1}), g, bt, 1))); }, {x, w, b, g, bt});
}

TEST(Attention, MatchesUnfusedComposition) {
  Rng rng(31);
  const Tensor64 q = random_leaf({3, 6, 4}, rng);
  const Tensor64 k = random_leaf({3, 5, 4}, rng);
  const Tensor64 v = random_leaf({3, 5, 2}, rng);
  const Tensor64 fused = attention(q, k, v, 0.5);
  const Tensor64 ref = matmul(softmax(scale(matmul(q, permute(k, {0, 2, 1})), 0.5), -1), v);
  for (std::size_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(fused.data()[i], ref.data()[i], 1e-12);

  const Tensor qf = q.cast<float>(), kf = k.cast<float>(), vf = v.cast<float>();
  const Tensor fusedf = attention(qf, kf, vf, 0.5f);
  for (std::size_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(fusedf.data()[i], ref.data()[i], 1e-5);
  const Tensor wts = attention_weights(qf, kf, 0.5f);
  for (std::size_t r = 0; r < 18; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 5; ++j) s += wts.data()[r * 5 + j];
    EXPECT_NEAR(s, 1.0, tol::kSoftmaxRowSum);
  }
}

TEST(Determinism, IdenticalSeedsGiveIdenticalBits) {
  auto run = [] {
    Rng rng(99);
    const Tensor x = random_tensor({1, 3, 8, 8}, rng);
    const Tensor w = random_tensor({4, 3, 3, 3}, rng);
    const Tensor h = gelu(conv2d(x, w, Tensor(), {.padding = 1}));
    const Tensor q = reshape(h, {1, 4, 64});
    return attention(permute(q, {0, 2, 1}), permute(q, {0, 2, 1}), permute(q, {0, 2, 1}), 0.5f).to_vector();
  };
  EXPECT_EQ(run(), run());
}

TEST(GradCheckOracle, DetectsWrongBackwardRule) {
  // y = 3x with a backward rule that claims dy/dx = 2.
  Rng rng(5);
  auto x = random_leaf({6}, rng);
  auto bad = [&] {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 3.0 * x.data()[i];
    return sum(record("bad", x.shape(), std::move(out), {x}, [x](Node<double>& n) {
      double* g = grad_of(x);
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += 2.0 * n.grad[i];
    }));
  };
  EXPECT_GT(grad_check(bad, {x}).worst_rel, 0.1);
}
