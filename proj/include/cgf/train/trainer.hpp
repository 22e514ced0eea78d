#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgf/core/rng.hpp"
#include "cgf/model/model.hpp"
#include "cgf/train/adamw.hpp"

namespace cgf::train {

// The reference setting trains with batch 128; desk runs default to 4.
struct TrainConfig {
  double lr = 6e-4;
  std::size_t batch = 4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;
  std::size_t steps = 300;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0)) throw InvalidArgument("lr must be positive");
    if (batch == 0) throw InvalidArgument("batch must be at least 1");
  }

  AdamWConfig adamw() const { return {lr, beta1, beta2, eps, weight_decay}; }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},       {"batch", c.batch}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"weight_decay", c.weight_decay},
          {"eps", c.eps},     {"steps", c.steps}, {"seed", c.seed}};
}

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

inline nlohmann::json to_json(const StepRecord& r) {
  return {{"step", r.step}, {"loss", r.loss}, {"grad_norm", r.grad_norm}, {"wall_ms", r.wall_ms}};
}

template <typename T>
struct Example {
  model::Prepared<T> input;
  BasicTensor<T> target;  // [1,C,H,W]
};

template <typename T>
Example<T> make_example(const model::Model<T>& m, const data::SamplePair& pair) {
  if (!pair.gt) throw InvalidArgument("training pair has no reference image");
  return {m.prepare(pair), data::to_tensor<T>(*pair.gt)};
}

namespace detail {

template <typename T>
bool finite(std::span<const T> xs) {
  for (T x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// Values are scanned before gradients: one bad weight poisons the gradients of
// everything upstream of it, so only a value hit names the actual source.
template <typename T>
std::string first_nonfinite_parameter(const nn::ParamStore<T>& store) {
  for (const auto& e : store.entries()) {
    if (!finite(e.tensor.data())) return e.name + " (value)";
  }
  for (const auto& e : store.entries()) {
    if (e.tensor.has_grad() && !finite(e.tensor.grad())) return e.name + " (gradient)";
  }
  return "";
}

}  // namespace detail

// One optimizer step on the mean l1 loss over `batch`. Items are processed in
// order and their gradients accumulate, so the reduction order is fixed.
template <typename T>
StepRecord train_step(model::Model<T>& m, AdamW<T>& opt, const std::vector<const Example<T>*>& batch) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  const auto t0 = std::chrono::steady_clock::now();
  StepRecord rec;
  rec.step = opt.steps() + 1;
  opt.zero_grad();
  const T inv = T(1) / static_cast<T>(batch.size());
  auto diverged = [&](const std::string& what) {
    const std::string p = detail::first_nonfinite_parameter(m.params());
    return NumericError("step " + std::to_string(rec.step) + ": " + what + (p.empty() ? "" : "; first non-finite parameter: " + p));
  };
  try {
    for (const Example<T>* ex : batch) {
      const BasicTensor<T> loss = l1_loss(m.forward(ex->input), ex->target);
      rec.loss += static_cast<double>(loss.item()) / static_cast<double>(batch.size());
      backward(scale(loss, inv));
    }
  } catch (const NumericError& e) {
    throw diverged(e.what());
  }
  if (!std::isfinite(rec.loss)) throw diverged("non-finite loss");
  double sq = 0.0;
  for (const auto& e : m.params().entries()) {
    if (!e.tensor.has_grad()) continue;
    for (T g : e.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  rec.grad_norm = std::sqrt(sq);
  if (!std::isfinite(rec.grad_norm)) throw diverged("non-finite gradient norm");
  opt.step();
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// Batches are drawn without replacement from a per-epoch shuffle seeded by
// cfg.seed. `on_step` sees every record as it is produced.
template <typename T>
std::vector<StepRecord> train_loop(model::Model<T>& m, const std::vector<Example<T>>& examples, const TrainConfig& cfg,
                                   const std::function<void(const StepRecord&)>& on_step = {}) {
  cfg.validate();
  if (examples.empty()) throw InvalidArgument("training set is empty");
  AdamW<T> opt(m.params(), cfg.adamw());
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t B = std::min(cfg.batch, examples.size());
  std::vector<StepRecord> log;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    std::vector<const Example<T>*> batch;
    while (batch.size() < B) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        cursor = 0;
      }
      batch.push_back(&examples[order[cursor++]]);
    }
    log.push_back(train_step(m, opt, batch));
    if (on_step) on_step(log.back());
  }
  return log;
}

// Trailing moving average with window w (shorter at the start).
inline std::vector<double> moving_average(const std::vector<double>& xs, std::size_t w) {
  std::vector<double> out(xs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    acc += xs[i];
    if (i >= w) acc -= xs[i - w];
    out[i] = acc / static_cast<double>(std::min(i + 1, w));
  }
  return out;
}

}  // namespace cgf::train
