#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cgf/cafs/kmeans.hpp"
#include "cgf/nn/layers.hpp"
#include "cgf/tensor/conv.hpp"
#include "cgf/tensor/ops.hpp"

namespace cgf::cafs {

// {high, low} with high + low == source.
template <typename T>
struct FreqPair {
  BasicTensor<T> high;
  BasicTensor<T> low;
};

using Labels = std::vector<std::uint32_t>;

// Per-cluster mean of patch rows. patches: [N,F] -> [K,F]. Row i averages
// the members of cluster sources[i] (sources[i] == i unless cluster i is
// empty). Assignments are constants; the mean is differentiable.
template <typename T>
BasicTensor<T> cluster_mean(const BasicTensor<T>& patches, std::shared_ptr<const Labels> labels,
                            std::shared_ptr<const Labels> sources) {
  if (patches.dim() != 2) throw ShapeError("cluster_mean expects [N,F] patches, got " + to_string(patches.shape()));
  const std::size_t N = patches.size(0), F = patches.size(1), K = sources->size();
  if (labels->size() != N) throw ShapeError("cluster_mean: label count does not match patch rows");
  auto counts = std::make_shared<std::vector<std::size_t>>(K, 0);
  for (std::uint32_t l : *labels) {
    if (l >= K) throw InvalidArgument("cluster_mean: label outside [0, K)");
    ++(*counts)[l];
  }
  std::vector<double> sums(K * F, 0.0);
  const auto p = patches.data();
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t l = (*labels)[i];
    for (std::size_t f = 0; f < F; ++f) sums[l * F + f] += p[i * F + f];
  }
  std::vector<T> out(K * F);
  for (std::size_t j = 0; j < K; ++j) {
    const std::size_t s = (*sources)[j];
    if ((*counts)[s] == 0) throw InvalidArgument("cluster_mean: source cluster " + std::to_string(s) + " is empty");
    for (std::size_t f = 0; f < F; ++f) out[j * F + f] = static_cast<T>(sums[s * F + f] / static_cast<double>((*counts)[s]));
  }
  return record("cluster_mean", Shape{K, F}, std::move(out), {patches}, [patches, labels, sources, counts, N, F, K](Node<T>& node) {
    // Fold each row's gradient onto the cluster it was read from.
    std::vector<T> per_cluster(K * F, T(0));
    for (std::size_t j = 0; j < K; ++j) {
      const std::size_t s = (*sources)[j];
      const T inv = T(1) / static_cast<T>((*counts)[s]);
      for (std::size_t f = 0; f < F; ++f) per_cluster[s * F + f] += node.grad[j * F + f] * inv;
    }
    T* g = grad_of(patches);
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t l = (*labels)[i];
      for (std::size_t f = 0; f < F; ++f) g[i * F + f] += per_cluster[l * F + f];
    }
  });
}

// Row-wise filtering with the filter of each row's cluster:
// out[i] = patches[i] . W[labels[i]]. patches: [N,F], W: [K,F,Co] -> [N,Co].
template <typename T>
BasicTensor<T> cluster_apply(const BasicTensor<T>& patches, const BasicTensor<T>& W, std::shared_ptr<const Labels> labels) {
  if (patches.dim() != 2 || W.dim() != 3) {
    throw ShapeError("cluster_apply expects [N,F] patches and [K,F,Co] filters, got " + to_string(patches.shape()) + " and " +
                     to_string(W.shape()));
  }
  const std::size_t N = patches.size(0), F = patches.size(1), K = W.size(0), Co = W.size(2);
  if (W.size(1) != F) throw ShapeError("cluster_apply: filter input axis " + std::to_string(W.size(1)) + " != patch width " + std::to_string(F));
  if (labels->size() != N) throw ShapeError("cluster_apply: label count does not match patch rows");
  std::vector<T> out(N * Co, T(0));
  const T* p = patches.data().data();
  const T* w = W.data().data();
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t l = (*labels)[i];
    if (l >= K) throw InvalidArgument("cluster_apply: label outside [0, K)");
    kernels::gemm_nn(1, Co, F, p + i * F, w + l * F * Co, out.data() + i * Co);
  }
  return record("cluster_apply", Shape{N, Co}, std::move(out), {patches, W}, [patches, W, labels, N, F, Co](Node<T>& node) {
    T* gp = grad_of(patches);
    T* gw = grad_of(W);
    const T* p = patches.data().data();
    const T* w = W.data().data();
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t l = (*labels)[i];
      const T* go = node.grad.data() + i * Co;
      if (gp) kernels::gemm_nt(1, F, Co, go, w + l * F * Co, gp + i * F);
      if (gw) kernels::gemm_tn(F, Co, 1, p + i * F, go, gw + l * F * Co);
    }
  });
}

// Clustering of one image: everything that depends only on the input data.
template <typename T>
struct ClusterPlan {
  std::size_t C = 0, H = 0, W = 0, k = 0, K = 0;
  std::shared_ptr<const Labels> labels;
  std::shared_ptr<const Labels> sources;
  BasicTensor<T> patches;  // [H*W, k*k*C]
  std::vector<double> inertia_trace;
};

// Window-mean features -> k-means -> unfolded patches. K is clamped to the
// pixel count so oversized inference-time K values degrade gracefully.
template <typename T>
ClusterPlan<T> plan_clusters(const BasicTensor<T>& img, std::size_t K, std::size_t k, std::uint64_t seed, std::size_t max_iter = 50) {
  if (img.dim() != 4 || img.size(0) != 1) throw ShapeError("plan_clusters expects [1,C,H,W], got " + to_string(img.shape()));
  ClusterPlan<T> plan;
  plan.C = img.size(1);
  plan.H = img.size(2);
  plan.W = img.size(3);
  plan.k = k;
  const std::size_t N = plan.H * plan.W;
  plan.K = std::min(K, N);
  const BasicTensor<T> feats = window_features(img, k);
  const std::vector<double> points(feats.data().begin(), feats.data().end());
  KMeansResult km = kmeans(points, N, plan.C, plan.K, seed, max_iter);
  plan.sources = std::make_shared<const Labels>(fill_sources(km));
  plan.labels = std::make_shared<const Labels>(std::move(km.labels));
  plan.inertia_trace = std::move(km.inertia_trace);
  plan.patches = reshape(unfold(reshape(img, {plan.C, plan.H, plan.W}), k), {N, k * k * plan.C});
  return plan;
}

// One CAN branch: centroid -> low-rank filter via two independent MLPs.
template <typename T>
struct CanBranch {
  std::size_t c_in = 0, c_out = 0, k = 0, rank = 0;
  nn::Linear<T> a1, a2, b1, b2;

  CanBranch() = default;
  CanBranch(nn::ParamStore<T>& store, const std::string& name, std::size_t channels, std::size_t window, std::size_t rank_,
            std::size_t hidden = 64)
      : c_in(channels), c_out(channels), k(window), rank(rank_) {
    if (rank == 0) throw InvalidArgument(name + ": rank must be positive");
    if (k % 2 == 0) throw InvalidArgument(name + ": window size must be odd");
    const std::size_t F = feature_width();
    a1 = nn::Linear<T>(store, name + ".mlp_a.fc1", F, hidden);
    a2 = nn::Linear<T>(store, name + ".mlp_a.fc2", hidden, F * rank);
    b1 = nn::Linear<T>(store, name + ".mlp_b.fc1", F, hidden);
    b2 = nn::Linear<T>(store, name + ".mlp_b.fc2", hidden, rank * c_out);
  }

  std::size_t feature_width() const { return k * k * c_in; }

  // centroids: [K,F] -> filters W_i = A_i B_i: [K,F,C_out].
  BasicTensor<T> filters(const BasicTensor<T>& centroids) const {
    const std::size_t K = centroids.size(0);
    const BasicTensor<T> A = reshape(a2(gelu(a1(centroids))), {K, feature_width(), rank});
    const BasicTensor<T> B = reshape(b2(gelu(b1(centroids))), {K, rank, c_out});
    return matmul(A, B);
  }
};

// Low = per-cluster filtering of the unfolded neighborhoods, high = img - low.
template <typename T>
FreqPair<T> can_apply(const BasicTensor<T>& img, const ClusterPlan<T>& plan, const CanBranch<T>& branch) {
  if (plan.C != branch.c_in) {
    throw ShapeError("can_apply: image channel axis " + std::to_string(plan.C) + " != branch input channels " + std::to_string(branch.c_in));
  }
  if (plan.k != branch.k) throw ShapeError("can_apply: plan window size differs from branch window size");
  const BasicTensor<T> centroids = cluster_mean(plan.patches, plan.labels, plan.sources);
  const BasicTensor<T> filters = branch.filters(centroids);
  const BasicTensor<T> flat = cluster_apply(plan.patches, filters, plan.labels);
  FreqPair<T> out;
  out.low = permute(reshape(flat, {1, plan.H, plan.W, branch.c_out}), {0, 3, 1, 2});
  out.high = sub(img, out.low);
  return out;
}

template <typename T>
std::pair<FreqPair<T>, ClusterPlan<T>> can_separate(const BasicTensor<T>& img, const CanBranch<T>& branch, std::size_t K,
                                                    std::uint64_t seed) {
  ClusterPlan<T> plan = plan_clusters(img, K, branch.k, seed);
  FreqPair<T> pair = can_apply(img, plan, branch);
  return {std::move(pair), std::move(plan)};
}

// Shared 3x3 projection of concat(PAN part, MS part) for both bands.
template <typename T>
struct Projection {
  nn::Conv2d<T> conv;

  Projection() = default;
  Projection(nn::ParamStore<T>& store, const std::string& name, std::size_t ms_channels, std::size_t d)
      : conv(store, name, 1 + ms_channels, d, 3) {}

  std::pair<BasicTensor<T>, BasicTensor<T>> operator()(const BasicTensor<T>& high_p, const BasicTensor<T>& high_m,
                                                      const BasicTensor<T>& low_p, const BasicTensor<T>& low_m) const {
    return {conv(concat<T>({high_p, high_m}, 1)), conv(concat<T>({low_p, low_m}, 1))};
  }
};

}  // namespace cgf::cafs
