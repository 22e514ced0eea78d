#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cgf/core/error.hpp"
#include "cgf/nn/params.hpp"

namespace cgf::train {

struct AdamWConfig {
  double lr = 6e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay; biases and norm affines (rank <= 1) are not decayed.
// Moments are kept in double regardless of T.
template <typename T>
class AdamW {
 public:
  struct Slot {
    std::string name;
    BasicTensor<T> tensor;
    bool decay = true;
    std::vector<double> m, v;
  };

  AdamW(const std::vector<std::pair<std::string, BasicTensor<T>>>& params, const AdamWConfig& cfg) : cfg_(cfg) {
    if (!(cfg.lr > 0)) throw InvalidArgument("learning rate must be positive");
    if (cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1) throw InvalidArgument("betas must lie in [0,1)");
    for (const auto& [name, t] : params) {
      slots_.push_back({name, t, t.dim() > 1, std::vector<double>(t.numel(), 0.0), std::vector<double>(t.numel(), 0.0)});
    }
  }

  explicit AdamW(const nn::ParamStore<T>& store, const AdamWConfig& cfg) : AdamW(pairs_of(store), cfg) {}

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& s : slots_) {
      if (!s.tensor.has_grad()) continue;
      auto w = s.tensor.mutable_data();
      const auto g = s.tensor.grad();
      const double decay = s.decay ? cfg_.lr * cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
        s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mh = s.m[i] / bc1, vh = s.v[i] / bc2;
        double wi = static_cast<double>(w[i]);
        wi -= decay * wi;
        wi -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        w[i] = static_cast<T>(wi);
      }
    }
  }

  void zero_grad() {
    for (auto& s : slots_) s.tensor.zero_grad();
  }

  std::size_t steps() const { return t_; }
  const std::vector<Slot>& slots() const { return slots_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  static std::vector<std::pair<std::string, BasicTensor<T>>> pairs_of(const nn::ParamStore<T>& store) {
    std::vector<std::pair<std::string, BasicTensor<T>>> out;
    for (const auto& e : store.entries()) out.emplace_back(e.name, e.tensor);
    return out;
  }

  AdamWConfig cfg_;
  std::vector<Slot> slots_;
  std::size_t t_ = 0;
};

}  // namespace cgf::train
