#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cgf/core/error.hpp"
#include "cgf/core/rng.hpp"
#include "cgf/tensor/tensor.hpp"

namespace cgf::nn {

enum class Init { trunc_normal, zeros, ones };

inline constexpr double kInitStd = 0.02;

// Ordered, named collection of trainable leaves. Registration order is the
// iteration order, which fixes checkpoint layout and optimizer traversal.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    BasicTensor<T> tensor;
  };

  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  BasicTensor<T> add(const std::string& name, Shape shape, Init init) {
    if (index_.count(name)) throw InvalidArgument("duplicate parameter name: " + name);
    BasicTensor<T> t(std::move(shape));
    auto values = t.mutable_data();
    switch (init) {
      case Init::trunc_normal:
        for (T& v : values) v = static_cast<T>(rng_.truncated_normal(kInitStd));
        break;
      case Init::zeros:
        break;
      case Init::ones:
        for (T& v : values) v = T(1);
        break;
    }
    t.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.push_back({name, t});
    return t;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  BasicTensor<T> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter: " + name);
    return entries_[it->second].tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  Rng rng_;
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace cgf::nn
