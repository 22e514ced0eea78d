#include <gtest/gtest.h>

#include <algorithm>

#include "cgf/sfa/sfa.hpp"
#include "support/gradcheck.hpp"
#include "support/params.hpp"

using namespace cgf;
using namespace cgf::sfa;
using cgf::testing::grad_check;
using cgf::testing::names_of;
using cgf::testing::random_leaf;
using cgf::testing::random_tensor;
using cgf::testing::randomize;
using cgf::testing::tensors_of;

namespace {

struct Inputs {
  Tensor pan, ms_up, h, l;
};

Inputs random_inputs(std::size_t d, std::size_t c, std::size_t H, std::size_t W, std::uint64_t seed) {
  Rng rng(seed);
  return {random_tensor({1, 1, H, W}, rng, 0, 1), random_tensor({1, c, H, W}, rng, 0, 1), random_tensor({1, d, H, W}, rng),
          random_tensor({1, d, H, W}, rng)};
}

}  // namespace

TEST(SfaS, OutputInOpenUnitInterval) {
  nn::ParamStore<float> s(1);
  const SfaS<float> se(s, "se", 5, 8);
  randomize(s, 2, 0.5);
  Rng rng(3);
  const Tensor y = se(random_tensor({1, 5, 6, 7}, rng, 0, 1));
  EXPECT_EQ(y.shape(), (Shape{1, 8, 6, 7}));
  for (float v : y.data()) EXPECT_TRUE(v > 0.0f && v < 1.0f);
}

TEST(SfaS, ZeroWeightsGiveHalf) {
  nn::ParamStore<float> s(4);
  const SfaS<float> se(s, "se", 5, 8);
  for (const auto& e : s.entries()) {
    Tensor t = e.tensor;
    for (float& v : t.mutable_data()) v = 0.0f;
  }
  Rng rng(5);
  const Tensor y = se(random_tensor({1, 5, 4, 4}, rng));
  for (float v : y.data()) EXPECT_EQ(v, 0.5f);
}

TEST(SfaS, PixelPermutationCommutes) {
  nn::ParamStore<float> s(6);
  const SfaS<float> se(s, "se", 3, 4);
  randomize(s, 7);
  Rng rng(8);
  const Tensor x = random_tensor({1, 3, 1, 12}, rng);
  std::vector<std::size_t> perm(12);
  for (std::size_t i = 0; i < 12; ++i) perm[i] = (5 * i + 3) % 12;
  auto permuted = [&](const Tensor& t) {
    Tensor out(t.shape());
    auto o = out.mutable_data();
    for (std::size_t c = 0; c < t.size(1); ++c) {
      for (std::size_t i = 0; i < 12; ++i) o[c * 12 + i] = t.data()[c * 12 + perm[i]];
    }
    return out;
  };
  EXPECT_EQ(se(permuted(x)).to_vector(), permuted(se(x)).to_vector());
}

TEST(SfaS, GeometryMismatchRejected) {
  nn::ParamStore<float> s(9);
  const Sfa<float> sfa(s, "sfa", {.d = 8, .heads = 8, .channels = 4});
  EXPECT_THROW(sfa.spatial_features(Tensor(Shape{1, 1, 8, 8}), Tensor(Shape{1, 4, 8, 6})), ShapeError);
  EXPECT_THROW(sfa.spatial_features(Tensor(Shape{1, 1, 8, 8}), Tensor(Shape{1, 3, 8, 8})), ShapeError);
}

TEST(SfaMode, ParseRoundTripAndUnknown) {
  for (auto m : {SfaMode::full, SfaMode::no_sfa, SfaMode::no_sfa_s, SfaMode::no_sfa_f}) EXPECT_EQ(parse_mode(to_string(m)), m);
  EXPECT_THROW(parse_mode("sideways"), InvalidArgument);
}

TEST(SfaF, AttentionRowsSumToOne) {
  nn::ParamStore<float> s(10);
  const Sfa<float> sfa(s, "sfa", {.d = 16, .heads = 8, .channels = 4});
  randomize(s, 11);
  const auto in = random_inputs(16, 4, 6, 6, 12);
  const auto t = sfa.trace(in.pan, in.ms_up, in.h, in.l);
  const Tensor q = permute(dsr::split_heads(t.q_h, 8), {0, 2, 1});
  const Tensor k = permute(dsr::split_heads(t.k, 8), {0, 2, 1});
  const Tensor w = attention_weights(q, k, 1.0f / std::sqrt(2.0f));
  EXPECT_EQ(w.shape(), (Shape{8, 36, 36}));
  for (std::size_t r = 0; r < 8 * 36; ++r) {
    double sum = 0;
    for (std::size_t j = 0; j < 36; ++j) sum += w.data()[r * 36 + j];
    EXPECT_NEAR(sum, 1.0, tol::kSoftmaxRowSum);
  }
}

TEST(SfaF, AttendedVectorsStayInsideValueHull) {
  nn::ParamStore<float> s(13);
  const Sfa<float> sfa(s, "sfa", {.d = 16, .heads = 8, .channels = 4});
  randomize(s, 14);
  const auto in = random_inputs(16, 4, 8, 8, 15);
  const auto t = sfa.trace(in.pan, in.ms_up, in.h, in.l);
  const std::size_t hw = 64;
  for (const Tensor* a : {&t.attn_h, &t.attn_l}) {
    for (std::size_t c = 0; c < 16; ++c) {
      const auto vc = t.v.data().subspan(c * hw, hw);
      const auto [lo, hi] = std::minmax_element(vc.begin(), vc.end());
      for (std::size_t p = 0; p < hw; ++p) {
        const float x = a->data()[c * hw + p];
        EXPECT_GE(x, *lo - 1e-6f);
        EXPECT_LE(x, *hi + 1e-6f);
      }
    }
  }
}

TEST(SfaF, ConstantValuesGiveConstantAttention) {
  Rng rng(16);
  const Tensor q = random_tensor({1, 8, 5, 5}, rng), k = random_tensor({1, 8, 5, 5}, rng);
  Tensor v(Shape{1, 8, 5, 5});
  auto vd = v.mutable_data();
  for (std::size_t c = 0; c < 8; ++c) {
    for (std::size_t p = 0; p < 25; ++p) vd[c * 25 + p] = 0.1f * static_cast<float>(c) - 0.3f;
  }
  const Tensor a = dsr::feature_attention(q, k, v, 4, dsr::TokenLayout::spatial);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], vd[i], 1e-6f);
}

TEST(Sfa, OutputShapeDefaultMode) {
  nn::ParamStore<float> s(17);
  const Sfa<float> sfa(s, "sfa", {.d = 8, .heads = 8, .channels = 4});
  const auto in = random_inputs(8, 4, 64, 64, 18);
  EXPECT_EQ(sfa(in.pan, in.ms_up, in.h, in.l).shape(), (Shape{1, 4, 64, 64}));
}

TEST(Sfa, AllModesProduceImageShape) {
  for (auto m : {SfaMode::full, SfaMode::no_sfa, SfaMode::no_sfa_s, SfaMode::no_sfa_f}) {
    nn::ParamStore<float> s(19);
    const Sfa<float> sfa(s, "sfa", {.d = 8, .heads = 8, .channels = 8, .mode = m});
    const auto in = random_inputs(8, 8, 8, 12, 20);
    EXPECT_EQ(sfa(in.pan, in.ms_up, in.h, in.l).shape(), (Shape{1, 8, 8, 12})) << to_string(m);
  }
}

TEST(Sfa, BypassEvaluatesNoSoftmax) {
  const auto in = random_inputs(8, 4, 8, 8, 21);
  for (auto m : {SfaMode::no_sfa, SfaMode::no_sfa_f}) {
    nn::ParamStore<float> s(22);
    const Sfa<float> sfa(s, "sfa", {.d = 8, .heads = 8, .channels = 4, .mode = m});
    const auto before = stats::softmax_calls.load();
    sfa(in.pan, in.ms_up, in.h, in.l);
    EXPECT_EQ(stats::softmax_calls.load(), before) << to_string(m);
  }
  nn::ParamStore<float> s(23);
  const Sfa<float> full(s, "sfa", {.d = 8, .heads = 8, .channels = 4});
  const auto before = stats::softmax_calls.load();
  full(in.pan, in.ms_up, in.h, in.l);
  EXPECT_EQ(stats::softmax_calls.load(), before + 2);
}

TEST(Sfa, BypassIsConvOfStreamSum) {
  nn::ParamStore<float> s(24);
  const Sfa<float> sfa(s, "sfa", {.d = 8, .heads = 8, .channels = 4, .mode = SfaMode::no_sfa});
  const auto in = random_inputs(8, 4, 6, 6, 25);
  const Tensor direct = conv2d(add(in.h, in.l), sfa.bypass.weight, sfa.bypass.bias, sfa.bypass.options);
  EXPECT_EQ(sfa(in.pan, in.ms_up, in.h, in.l).to_vector(), direct.to_vector());
}

TEST(Sfa, GlobalSkipAddsUpsampledMs) {
  const auto in = random_inputs(8, 4, 6, 6, 26);
  nn::ParamStore<float> s0(27), s1(27);
  const Sfa<float> plain(s0, "sfa", {.d = 8, .heads = 8, .channels = 4});
  const Sfa<float> skip(s1, "sfa", {.d = 8, .heads = 8, .channels = 4, .global_skip = true});
  const Tensor a = plain(in.pan, in.ms_up, in.h, in.l);
  const Tensor b = skip(in.pan, in.ms_up, in.h, in.l);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(b.data()[i], a.data()[i] + in.ms_up.data()[i]);
}

TEST(Sfa, TokenLimitRejected) {
  nn::ParamStore<float> s(28);
  const Sfa<float> sfa(s, "sfa", {.d = 8, .heads = 8, .channels = 4});
  const auto in = random_inputs(8, 4, 129, 128, 29);
  EXPECT_THROW(sfa(in.pan, in.ms_up, in.h, in.l), InvalidArgument);
}

TEST(Sfa, InvalidConfigAndShapesRejected) {
  nn::ParamStore<float> s(30);
  EXPECT_THROW(Sfa<float>(s, "bad", {.d = 12, .heads = 8, .channels = 4}), InvalidArgument);
  const Sfa<float> sfa(s, "sfa", {.d = 8, .heads = 8, .channels = 4});
  const auto in = random_inputs(8, 4, 6, 6, 31);
  EXPECT_THROW(sfa(in.pan, in.ms_up, in.h, Tensor(Shape{1, 8, 6, 5})), ShapeError);
  EXPECT_THROW(sfa(in.pan, in.ms_up, Tensor(Shape{1, 8, 0, 6}), Tensor(Shape{1, 8, 0, 6})), ShapeError);
}

TEST(Sfa, GradientMatchesFiniteDifferences) {
  for (auto m : {SfaMode::full, SfaMode::no_sfa_s, SfaMode::no_sfa_f, SfaMode::no_sfa}) {
    nn::ParamStore<double> s(32);
    const Sfa<double> sfa(s, "sfa", {.d = 8, .heads = 8, .channels = 4, .mode = m});
    randomize(s, 33);
    Rng rng(34);
    Tensor64 pan = random_leaf({1, 1, 8, 8}, rng, 0, 1), ms = random_leaf({1, 4, 8, 8}, rng, 0, 1);
    Tensor64 h = random_leaf({1, 8, 8, 8}, rng), l = random_leaf({1, 8, 8, 8}, rng);
    const Tensor64 w = random_leaf({1, 4, 8, 8}, rng);
    auto inputs = tensors_of(s);
    auto names = names_of(s);
    for (auto [t, n] : {std::pair{pan, "pan"}, {ms, "ms_up"}, {h, "H_BG"}, {l, "L_BG"}}) {
      inputs.push_back(t);
      names.push_back(n);
    }
    const auto r = grad_check([&] { return sum(mul(w, sfa(pan, ms, h, l))); }, inputs, names, 16);
    EXPECT_LT(r.worst_rel, tol::kGradRel) << to_string(m) << ": " << r.worst_input;
  }
}

TEST(Sfa, EveryParameterReceivesGradient) {
  nn::ParamStore<float> s(35);
  const Sfa<float> sfa(s, "sfa", {.d = 16, .heads = 8, .channels = 4});
  randomize(s, 36);
  const auto in = random_inputs(16, 4, 8, 8, 37);
  Rng rng(38);
  backward(l1_loss(sfa(in.pan, in.ms_up, in.h, in.l), random_tensor({1, 4, 8, 8}, rng)));
  for (const auto& e : s.entries()) {
    double n = 0;
    for (float g : e.tensor.grad()) n += static_cast<double>(g) * g;
    EXPECT_GT(n, 0.0) << e.name;
  }
}
