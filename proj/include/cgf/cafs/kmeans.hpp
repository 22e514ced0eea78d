#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "cgf/core/error.hpp"
#include "cgf/core/rng.hpp"
#include "cgf/core/tolerances.hpp"
#include "cgf/tensor/tensor.hpp"

namespace cgf::cafs {

// Per-pixel mean over the zero-padded k x k window. img: [C,H,W] or
// [1,C,H,W] -> [H,W,C]. Off-tape: the clustering feature is data only.
template <typename T>
BasicTensor<T> window_features(const BasicTensor<T>& img, std::size_t k) {
  if (k % 2 == 0) throw InvalidArgument("window_features: window size must be odd, got " + std::to_string(k));
  if (!(img.dim() == 3 || (img.dim() == 4 && img.size(0) == 1))) {
    throw ShapeError("window_features expects [C,H,W] or [1,C,H,W], got " + to_string(img.shape()));
  }
  const std::size_t C = img.size(-3), H = img.size(-2), W = img.size(-1);
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k / 2);
  const double inv = 1.0 / static_cast<double>(k * k);
  const auto d = img.data();
  std::vector<T> out(H * W * C);
  for (std::size_t c = 0; c < C; ++c) {
    const T* plane = d.data() + c * H * W;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double s = 0.0;
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
            s += plane[static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)];
          }
        }
        out[(y * W + x) * C + c] = static_cast<T>(s * inv);
      }
    }
  }
  return BasicTensor<T>(Shape{H, W, C}, std::move(out));
}

struct KMeansResult {
  std::size_t K = 0;
  std::size_t dim = 0;
  std::vector<std::uint32_t> labels;  // one per point, in [0, K)
  std::vector<double> centroids;      // K x dim
  std::vector<double> inertia_trace;  // after each assignment step
  std::vector<std::size_t> counts;    // points per cluster
};

namespace detail {

inline double sq_dist(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

// Nearest centroid; ties go to the lower index.
inline std::uint32_t nearest(const double* p, const std::vector<double>& cent, std::size_t K, std::size_t D, double& best) {
  std::uint32_t arg = 0;
  best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < K; ++j) {
    const double d = sq_dist(p, cent.data() + j * D, D);
    if (d < best) {
      best = d;
      arg = static_cast<std::uint32_t>(j);
    }
  }
  return arg;
}

}  // namespace detail

// Lloyd iterations from k-means++ seeding. points: N x D row-major.
// Stops after max_iter updates, when assignments stop changing, or when the
// relative inertia change drops below the configured threshold.
inline KMeansResult kmeans(const std::vector<double>& points, std::size_t N, std::size_t D, std::size_t K, std::uint64_t seed,
                           std::size_t max_iter = 50) {
  if (K == 0) throw InvalidArgument("kmeans: K must be at least 1");
  if (N == 0 || points.size() != N * D) throw ShapeError("kmeans: point buffer does not match N x D");
  if (K > N) throw InvalidArgument("kmeans: K=" + std::to_string(K) + " exceeds the point count " + std::to_string(N));
  Rng rng(seed);
  KMeansResult r;
  r.K = K;
  r.dim = D;
  r.centroids.assign(K * D, 0.0);

  // k-means++: first center uniform, then proportional to squared distance.
  std::vector<double> d2(N, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(rng.below(N));
  for (std::size_t j = 0; j < K; ++j) {
    std::copy_n(points.data() + pick * D, D, r.centroids.data() + j * D);
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      d2[i] = std::min(d2[i], detail::sq_dist(points.data() + i * D, r.centroids.data() + j * D, D));
      total += d2[i];
    }
    if (j + 1 == K) break;
    if (total <= 0.0) {
      // Every point coincides with a chosen center; duplicates are unavoidable.
      pick = static_cast<std::size_t>(rng.below(N));
      continue;
    }
    double u = rng.uniform() * total;
    std::size_t last_positive = 0;
    bool found = false;
    for (std::size_t i = 0; i < N && !found; ++i) {
      if (d2[i] <= 0.0) continue;
      last_positive = i;
      u -= d2[i];
      found = u < 0.0;
    }
    pick = last_positive;
  }

  r.labels.assign(N, 0);
  auto assign = [&] {
    double inertia = 0.0;
    bool changed = false;
    for (std::size_t i = 0; i < N; ++i) {
      double best;
      const std::uint32_t a = detail::nearest(points.data() + i * D, r.centroids, K, D, best);
      changed = changed || a != r.labels[i];
      r.labels[i] = a;
      inertia += best;
    }
    r.inertia_trace.push_back(inertia);
    return changed;
  };
  assign();

  std::vector<double> sums(K * D);
  r.counts.assign(K, 0);
  for (std::size_t it = 0; it < max_iter; ++it) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(r.counts.begin(), r.counts.end(), 0);
    for (std::size_t i = 0; i < N; ++i) {
      const std::uint32_t a = r.labels[i];
      ++r.counts[a];
      for (std::size_t d = 0; d < D; ++d) sums[a * D + d] += points[i * D + d];
    }
    // Empty clusters keep their previous centroid.
    for (std::size_t j = 0; j < K; ++j) {
      if (r.counts[j] == 0) continue;
      for (std::size_t d = 0; d < D; ++d) r.centroids[j * D + d] = sums[j * D + d] / static_cast<double>(r.counts[j]);
    }
    const double before = r.inertia_trace.back();
    const bool changed = assign();
    const double after = r.inertia_trace.back();
    if (!changed) break;
    if (before > 0.0 && (before - after) / before < tol::kKmeansRelStop) break;
  }
  std::fill(r.counts.begin(), r.counts.end(), 0);
  for (std::uint32_t a : r.labels) ++r.counts[a];
  return r;
}

// For each cluster, itself if non-empty, else the non-empty cluster whose
// centroid is nearest (ties to the lower index).
inline std::vector<std::uint32_t> fill_sources(const KMeansResult& r) {
  std::vector<std::uint32_t> src(r.K);
  for (std::size_t j = 0; j < r.K; ++j) {
    if (r.counts[j] > 0) {
      src[j] = static_cast<std::uint32_t>(j);
      continue;
    }
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < r.K; ++i) {
      if (r.counts[i] == 0) continue;
      const double d = detail::sq_dist(r.centroids.data() + j * r.dim, r.centroids.data() + i * r.dim, r.dim);
      if (d < best) {
        best = d;
        src[j] = static_cast<std::uint32_t>(i);
      }
    }
  }
  return src;
}

}  // namespace cgf::cafs
