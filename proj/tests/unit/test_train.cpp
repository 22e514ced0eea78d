#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "cgf/data/synth.hpp"
#include "cgf/train/checkpoint.hpp"
#include "cgf/train/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/params.hpp"

using namespace cgf;
using namespace cgf::train;
using cgf::testing::grad_check;
using cgf::testing::random_leaf;
using cgf::testing::random_tensor;
using cgf::testing::randomize;

namespace {

model::ModelConfig small_config(std::size_t channels = 4) {
  model::ModelConfig c;
  c.channels = channels;
  c.d = 8;
  c.heads = 2;
  c.clusters = 4;
  c.can_hidden = 16;
  c.kmeans_iters = 10;
  return c;
}

std::vector<float> checkpoint_values(const Checkpoint& ck) {
  std::vector<float> out;
  for (const auto& [name, t] : ck.tensors) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

}  // namespace

TEST(L1Loss, ZeroOnEqualInputs) {
  Rng rng(1);
  const Tensor a = random_tensor({1, 4, 8, 8}, rng);
  EXPECT_EQ(l1_loss(a, a).item(), 0.0f);
}

TEST(L1Loss, ConstantOffset) {
  Tensor64 a({1, 3, 5, 5}), b({1, 3, 5, 5});
  Rng rng(2);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    a.mutable_data()[i] = rng.uniform();
    b.mutable_data()[i] = a.data()[i] + 0.1;
  }
  EXPECT_NEAR(l1_loss(b, a).item(), 0.1, 1e-12);
}

TEST(L1Loss, MatchesDirectFormula) {
  Rng rng(3);
  const Tensor a = random_tensor({1, 4, 8, 8}, rng, 0, 1), b = random_tensor({1, 4, 8, 8}, rng, 0, 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]));
  EXPECT_NEAR(l1_loss(a, b).item(), acc / static_cast<double>(a.numel()), 1e-7);
}

TEST(L1Loss, ShapeMismatchRejected) {
  EXPECT_THROW(l1_loss(Tensor(Shape{1, 4, 8, 8}), Tensor(Shape{1, 4, 8, 4})), ShapeError);
}

TEST(AdamW, QuadraticToyConverges) {
  Tensor64 w(Shape{1}, std::vector<double>{-1.5});
  w.set_requires_grad(true);
  AdamW<double> opt({{"w", w}}, {.lr = 0.05});
  const double target = 2.25;
  for (int s = 0; s < 500; ++s) {
    opt.zero_grad();
    const Tensor64 diff = sub(w, Tensor64(Shape{1}, std::vector<double>{target}));
    backward(sum(mul(diff, diff)));
    opt.step();
  }
  EXPECT_NEAR(w.item(), target, 1e-3);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  // Bias-corrected first step is lr * g / (|g| + eps) = lr * sign(g).
  Tensor64 w(Shape{2}, std::vector<double>{1.0, -1.0});
  w.set_requires_grad(true);
  AdamW<double> opt({{"w", w}}, {.lr = 0.01, .eps = 0.0});
  backward(sum(mul(w, Tensor64(Shape{2}, std::vector<double>{3.0, -0.5}))));
  opt.step();
  EXPECT_NEAR(w.data()[0], 0.99, 1e-12);
  EXPECT_NEAR(w.data()[1], -0.99, 1e-12);
}

TEST(AdamW, DecayOnlyOnMatrices) {
  Tensor64 m(Shape{2, 2}, std::vector<double>{1, 1, 1, 1}), b(Shape{2}, std::vector<double>{1, 1});
  m.set_requires_grad(true);
  b.set_requires_grad(true);
  AdamW<double> opt({{"m", m}, {"b", b}}, {.lr = 0.1, .weight_decay = 0.5});
  backward(add(scale(sum(m), 0.0), scale(sum(b), 0.0)));
  opt.step();
  EXPECT_NEAR(m.data()[0], 1.0 - 0.1 * 0.5, 1e-12);
  EXPECT_EQ(b.data()[0], 1.0);
}

TEST(AdamW, InvalidConfigRejected) {
  EXPECT_THROW(AdamW<double>(std::vector<std::pair<std::string, Tensor64>>{}, {.lr = 0.0}), InvalidArgument);
  EXPECT_THROW(AdamW<double>(std::vector<std::pair<std::string, Tensor64>>{}, {.beta1 = 1.0}), InvalidArgument);
  TrainConfig tc;
  tc.batch = 0;
  EXPECT_THROW(tc.validate(), InvalidArgument);
  tc.batch = 1;
  tc.lr = -1;
  EXPECT_THROW(tc.validate(), InvalidArgument);
}

TEST(ModelConfig, ValidationAndJsonRoundTrip) {
  auto c = small_config();
  c.separator = cafs::Separator::fourier;
  c.sfa_mode = sfa::SfaMode::no_sfa_f;
  c.mgb_tokens = dsr::TokenLayout::spatial;
  const auto back = model::model_config_from_json(model::to_json(c));
  EXPECT_EQ(model::to_json(back), model::to_json(c));
  c.heads = 3;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.heads = 2;
  c.window = 4;
  EXPECT_THROW(c.validate(), InvalidArgument);
  EXPECT_THROW(model::model_config_from_json(nlohmann::json{{"channels", 4}}), FormatError);
}

TEST(Model, ShapeTheorem) {
  for (std::size_t C : {4, 8}) {
    model::Model<float> m(small_config(C));
    for (std::size_t H : {8, 16}) {
      for (std::size_t W : {8, 16}) {
        Rng rng(H * 100 + W + C);
        const Tensor pan = random_tensor({1, 1, 4 * H, 4 * W}, rng, 0, 1);
        const Tensor lrms = random_tensor({1, C, H, W}, rng, 0, 1);
        NoGradGuard ng;
        EXPECT_EQ(m.forward(m.prepare(pan, lrms)).shape(), (Shape{1, C, 4 * H, 4 * W})) << H << "x" << W << "x" << C;
      }
    }
  }
}

TEST(Model, DefaultGeometries) {
  for (std::size_t C : {4, 8}) {
    auto cfg = small_config(C);
    model::Model<float> m(cfg);
    const auto pair = data::wald_degrade(data::synth_scene(5, 64, C));
    EXPECT_EQ(pair.lrms.height, 16u);
    const data::Image out = m.predict(pair);
    EXPECT_EQ(out.channels, C);
    EXPECT_EQ(out.height, 64u);
    EXPECT_EQ(out.width, 64u);
  }
}

TEST(Model, ForwardIsDeterministic) {
  const auto pair = data::wald_degrade(data::synth_scene(6, 32, 4));
  model::Model<float> a(small_config()), b(small_config());
  EXPECT_EQ(a.predict(pair).pixels, b.predict(pair).pixels);
  EXPECT_EQ(a.predict(pair).pixels, a.predict(pair).pixels);
}

TEST(Model, PairMismatchRejected) {
  model::Model<float> m(small_config());
  auto pair = data::wald_degrade(data::synth_scene(7, 32, 8));
  EXPECT_THROW(m.prepare(pair), ShapeError);
  auto cfg = small_config();
  cfg.ratio = 2;
  model::Model<float> m2(cfg);
  EXPECT_THROW(m2.prepare(data::wald_degrade(data::synth_scene(7, 32, 4))), ShapeError);
}

TEST(Model, EveryAblationBuildsAndRuns) {
  const auto pair = data::wald_degrade(data::synth_scene(8, 32, 4));
  for (auto sep : {cafs::Separator::cluster, cafs::Separator::gaussian, cafs::Separator::fourier, cafs::Separator::local}) {
    for (std::size_t stages : {0, 1, 2}) {
      for (auto mode : {sfa::SfaMode::full, sfa::SfaMode::no_sfa}) {
        auto cfg = small_config();
        cfg.separator = sep;
        cfg.dsr_stages = stages;
        cfg.sfa_mode = mode;
        cfg.ncb = stages != 1;
        cfg.gating = stages != 2;
        model::Model<float> m(cfg);
        const auto out = m.predict(pair);
        EXPECT_EQ(out.channels, 4u);
        for (float v : out.pixels) ASSERT_TRUE(std::isfinite(v));
      }
    }
  }
}

// Micro config: 8x8 PAN, 2x2 LRMS, d=8, K=2. About 1% of each parameter
// tensor (at least one coordinate) is perturbed.
TEST(Model, EndToEndGradientMatchesFiniteDifferences) {
  model::ModelConfig cfg = small_config();
  cfg.clusters = 2;
  model::Model<double> m(cfg);
  randomize(m.params(), 11, 0.2);
  Rng rng(12);
  Tensor64 pan({1, 1, 8, 8}), lrms({1, 4, 2, 2});
  for (double& v : pan.mutable_data()) v = rng.uniform();
  for (double& v : lrms.mutable_data()) v = rng.uniform();
  const auto prepared = m.prepare(pan, lrms);
  Tensor64 target({1, 4, 8, 8});
  for (double& v : target.mutable_data()) v = rng.uniform();
  std::size_t sampled = 0, total = 0;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& e : m.params().entries()) {
    const std::size_t n = std::max<std::size_t>(1, (e.tensor.numel() + 99) / 100);
    const auto r = grad_check([&] { return l1_loss(m.forward(prepared), target); }, {e.tensor}, {e.name}, n, tol::kFiniteDiffStep, true);
    sampled += n;
    total += e.tensor.numel();
    if (r.worst_rel > worst) {
      worst = r.worst_rel;
      worst_name = e.name;
    }
  }
  EXPECT_GE(sampled * 100, total);
  EXPECT_LT(worst, tol::kGradRelEndToEnd) << worst_name;
}

TEST(Model, EveryParameterReceivesGradient) {
  model::Model<float> m(small_config());
  randomize(m.params(), 13, 0.2);
  const auto pair = data::wald_degrade(data::synth_scene(14, 32, 4));
  const auto ex = make_example(m, pair);
  backward(l1_loss(m.forward(ex.input), ex.target));
  for (const auto& e : m.params().entries()) {
    ASSERT_TRUE(e.tensor.has_grad()) << e.name;
    double n = 0;
    for (float g : e.tensor.grad()) n += static_cast<double>(g) * g;
    EXPECT_GT(n, 0.0) << e.name;
  }
}

TEST(Trainer, ZeroStepsKeepInitialization) {
  model::Model<float> trained(small_config()), fresh(small_config());
  std::vector<Example<float>> ex{make_example(trained, data::wald_degrade(data::synth_scene(15, 32, 4)))};
  TrainConfig tc;
  tc.steps = 0;
  EXPECT_TRUE(train_loop(trained, ex, tc).empty());
  EXPECT_EQ(checkpoint_values(snapshot(trained.params(), {})), checkpoint_values(snapshot(fresh.params(), {})));
}

TEST(Trainer, StepsReduceLossAndAreReproducible) {
  auto run = [] {
    model::Model<float> m(small_config());
    std::vector<Example<float>> ex;
    for (std::uint64_t s = 0; s < 3; ++s) ex.push_back(make_example(m, data::wald_degrade(data::synth_scene(20 + s, 32, 4))));
    TrainConfig tc;
    tc.steps = 12;
    tc.batch = 2;
    tc.lr = 2e-3;
    std::vector<double> seen;
    const auto log = train_loop(m, ex, tc, [&](const StepRecord& r) { seen.push_back(r.loss); });
    EXPECT_EQ(seen.size(), log.size());
    for (std::size_t i = 0; i < log.size(); ++i) {
      EXPECT_EQ(log[i].step, i + 1);
      EXPECT_TRUE(std::isfinite(log[i].grad_norm));
      EXPECT_GT(log[i].grad_norm, 0.0);
    }
    return std::pair{log, checkpoint_values(snapshot(m.params(), {}))};
  };
  const auto [log_a, w_a] = run();
  const auto [log_b, w_b] = run();
  EXPECT_EQ(w_a, w_b);
  for (std::size_t i = 0; i < log_a.size(); ++i) EXPECT_EQ(log_a[i].loss, log_b[i].loss);
  EXPECT_LT(log_a.back().loss, log_a.front().loss);
}

TEST(Trainer, NanDiagnosticNamesParameter) {
  model::Model<float> m(small_config());
  std::vector<Example<float>> ex{make_example(m, data::wald_degrade(data::synth_scene(30, 32, 4)))};
  const auto& entries = m.params().entries();
  const auto& victim = entries[entries.size() / 2];
  Tensor t = victim.tensor;
  t.mutable_data()[0] = std::nanf("");
  AdamW<float> opt(m.params(), {});
  try {
    train_step(m, opt, {&ex[0]});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find(victim.name + " (value)"), std::string::npos) << e.what();
  }
}

TEST(Trainer, EmptyInputsRejected) {
  model::Model<float> m(small_config());
  AdamW<float> opt(m.params(), {});
  EXPECT_THROW(train_step(m, opt, {}), InvalidArgument);
  EXPECT_THROW(train_loop(m, std::vector<Example<float>>{}, TrainConfig{}), InvalidArgument);
  data::SamplePair p = data::wald_degrade(data::synth_scene(31, 32, 4));
  p.gt.reset();
  EXPECT_THROW(make_example(m, p), InvalidArgument);
}

TEST(Trainer, MovingAverage) {
  const auto ma = moving_average({4, 2, 6, 0}, 2);
  EXPECT_EQ(ma, (std::vector<double>{4, 3, 4, 3}));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  model::Model<float> m(small_config());
  randomize(m.params(), 40);
  const Checkpoint ck = snapshot(m.params(), model::to_json(m.config()));
  const auto bytes = encode_checkpoint(ck);
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(back.config, ck.config);
  ASSERT_EQ(back.tensors.size(), ck.tensors.size());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    EXPECT_EQ(back.tensors[i].first, ck.tensors[i].first);
    EXPECT_EQ(back.tensors[i].second.shape(), ck.tensors[i].second.shape());
  }
  EXPECT_EQ(checkpoint_values(back), checkpoint_values(ck));
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, ReloadPreservesForwardBitExactly) {
  const auto dir = std::filesystem::temp_directory_path() / "cgf_test_train";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.cgf";
  const auto pair = data::wald_degrade(data::synth_scene(41, 32, 4));
  model::Model<float> m(small_config());
  randomize(m.params(), 42);
  save_checkpoint(path, snapshot(m.params(), model::to_json(m.config())));
  const Checkpoint ck = load_checkpoint(path);
  model::Model<float> r(model::model_config_from_json(ck.config));
  randomize(r.params(), 99);
  restore(r.params(), ck);
  EXPECT_EQ(r.predict(pair).pixels, m.predict(pair).pixels);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CorruptInputsRejected) {
  model::Model<float> m(small_config());
  const auto bytes = encode_checkpoint(snapshot(m.params(), {{"x", 1}}));
  auto kind_of = [](const std::vector<std::uint8_t>& b) {
    try {
      decode_checkpoint(b);
    } catch (const FormatError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "decode accepted corrupt bytes";
    return FormatError::Kind::malformed;
  };
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(kind_of(bad), FormatError::Kind::bad_magic);
  bad = bytes;
  bad[4] = 2;
  EXPECT_EQ(kind_of(bad), FormatError::Kind::bad_version);
  EXPECT_EQ(kind_of({bytes.begin(), bytes.end() - 3}), FormatError::Kind::truncated);
  bad = bytes;
  bad.push_back(0);
  EXPECT_EQ(kind_of(bad), FormatError::Kind::malformed);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.cgf"), Error);
}

TEST(Checkpoint, RestoreRejectsMismatchedModel) {
  model::Model<float> m(small_config());
  const Checkpoint ck = snapshot(m.params(), {});
  auto cfg = small_config();
  cfg.d = 16;
  model::Model<float> other(cfg);
  EXPECT_THROW(restore(other.params(), ck), FormatError);
  auto cfg2 = small_config();
  cfg2.separator = cafs::Separator::gaussian;
  model::Model<float> fewer(cfg2);
  EXPECT_THROW(restore(fewer.params(), ck), FormatError);
}
