// SPDX-License-Identifier: Apache-2.0
//
// Brute-force reference implementations. Slow by design; every function here
// follows the textbook definition and shares no code with the optimized paths
// it is used to check.

#pragma once

#include "lcd/core.hpp"

#include <random>
#include <utility>

namespace lcd::oracle {

/// Y = X * W^T with X n x k and W m x k (row-major). Y is n x m.
inline std::vector<double> dense_matmul(std::span<const double> x, std::size_t n, std::span<const double> w,
                                        std::size_t m, std::size_t k) {
  if (x.size() != n * k || w.size() != m * k) throw PreconditionError("dense_matmul shape mismatch");
  std::vector<double> y(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += x[i * k + t] * w[j * k + t];
      y[i * m + j] = acc;
    }
  return y;
}

/// Value at 1-based rank ceil(p * n) of an ascending sequence, p in [0, 1].
inline double percentile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw PreconditionError("percentile of empty sequence");
  auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sorted.size())));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

struct ScanResult {
  std::vector<std::vector<std::size_t>> clusters;
  std::vector<std::size_t> noise;
};

/// Textbook DBSCAN with O(n^2) neighborhood queries over scalar points.
/// Points are visited in ascending value order (ties by position) so border
/// points reachable from two clusters go to the one started first.
inline ScanResult dbscan_quadratic(std::span<const double> points, double eps, std::size_t min_pts) {
  const std::size_t n = points.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return points[a] < points[b]; });

  auto region = [&](std::size_t p) {
    std::vector<std::size_t> out;
    for (std::size_t q : order)
      if (std::abs(points[p] - points[q]) <= eps) out.push_back(q);
    return out;
  };

  constexpr long kUnvisited = -2, kNoise = -1;
  std::vector<long> label(n, kUnvisited);
  long next = 0;
  for (std::size_t p : order) {
    if (label[p] != kUnvisited) continue;
    auto nb = region(p);
    if (nb.size() < min_pts) {
      label[p] = kNoise;
      continue;
    }
    const long c = next++;
    label[p] = c;
    std::vector<std::size_t> seeds = nb;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const std::size_t q = seeds[i];
      if (label[q] == kNoise) label[q] = c;
      if (label[q] != kUnvisited) continue;
      label[q] = c;
      auto nq = region(q);
      if (nq.size() >= min_pts) seeds.insert(seeds.end(), nq.begin(), nq.end());
    }
  }

  ScanResult out;
  out.clusters.resize(static_cast<std::size_t>(next));
  for (std::size_t p = 0; p < n; ++p) {
    if (label[p] == kNoise)
      out.noise.push_back(p);
    else
      out.clusters[static_cast<std::size_t>(label[p])].push_back(p);
  }
  return out;
}

/// Nearest point on a symmetric uniform grid of 2^bits levels over
/// [-max|w|, max|w|].
inline std::vector<double> uniform_quantize(std::span<const double> weights, int bits) {
  if (bits < 2 || bits > 16) throw PreconditionError("uniform_quantize needs bits in [2, 16]");
  double m = 0.0;
  for (double v : weights) m = std::max(m, std::abs(v));
  std::vector<double> out(weights.size(), 0.0);
  if (m == 0.0) return out;
  const double levels = std::ldexp(1.0, bits) - 1.0;
  const double step = 2.0 * m / levels;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double best = -m, best_d = std::abs(weights[i] + m);
    for (int l = 1; l <= static_cast<int>(levels); ++l) {
      const double level = -m + step * l;
      const double d = std::abs(weights[i] - level);
      if (d < best_d) {
        best_d = d;
        best = level;
      }
    }
    out[i] = best;
  }
  return out;
}

inline double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw PreconditionError("mse size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

inline std::size_t distinct_count(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

/// Lloyd's algorithm on scalars from k-means++ seeding. Returns a Clustering
/// with nearest-centroid assignments and shadow = input weights.
inline Clustering kmeans(std::span<const double> weights, std::size_t k, std::size_t iters, std::uint64_t seed) {
  if (k < 1) throw PreconditionError("kmeans needs k >= 1");
  if (k > distinct_count(weights)) throw PreconditionError("kmeans k exceeds the number of distinct values");
  const std::size_t n = weights.size();

  // Sorted copy with prefix sums: nearest-centroid cells are contiguous ranges.
  std::vector<double> sorted(weights.begin(), weights.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + sorted[i];

  std::mt19937_64 rng(seed);
  std::vector<double> centers;
  centers.push_back(sorted[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
  std::vector<double> d2(n);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (sorted[i] - c) * (sorted[i] - c));
      d2[i] = best;
      total += best;
    }
    double r = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      r -= d2[i];
      if (r < 0 && d2[i] > 0) {
        pick = i;
        break;
      }
    }
    while (d2[pick] == 0) --pick;  // float slop at the tail
    centers.push_back(sorted[pick]);
  }
  std::sort(centers.begin(), centers.end());

  // Cell boundaries: end index (exclusive) of each centroid's range.
  auto cells = [&](const std::vector<double>& c) {
    std::vector<std::size_t> end(c.size());
    for (std::size_t j = 0; j + 1 < c.size(); ++j) {
      const double mid = 0.5 * (c[j] + c[j + 1]);
      end[j] = static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), mid) - sorted.begin());
    }
    end.back() = n;
    return end;
  };

  for (std::size_t it = 0; it < iters; ++it) {
    auto end = cells(centers);
    std::vector<double> next;
    std::size_t begin = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t e = std::max(end[j], begin);
      if (e > begin) next.push_back((prefix[e] - prefix[begin]) / static_cast<double>(e - begin));
      begin = e;
    }
    next.erase(std::unique(next.begin(), next.end()), next.end());
    // Empty cells: re-seed at the point farthest from every surviving centroid.
    while (next.size() < k) {
      double worst = -1;
      double at = sorted[0];
      for (double w : sorted) {
        auto pos = std::lower_bound(next.begin(), next.end(), w);
        double d = std::numeric_limits<double>::infinity();
        if (pos != next.end()) d = *pos - w;
        if (pos != next.begin()) d = std::min(d, w - *(pos - 1));
        if (d > worst) {
          worst = d;
          at = w;
        }
      }
      next.insert(std::upper_bound(next.begin(), next.end(), at), at);
    }
    const bool converged = next == centers;
    centers = std::move(next);
    if (converged) break;
  }

  Clustering c;
  c.centroids = centers;
  c.assignment.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights[i];
    auto it = std::lower_bound(centers.begin(), centers.end(), w);
    std::size_t j = static_cast<std::size_t>(it - centers.begin());
    if (j == centers.size() || (j > 0 && w - centers[j - 1] <= centers[j] - w)) --j;
    c.assignment[i] = static_cast<std::uint32_t>(j);
  }
  c.shadow.assign(weights.begin(), weights.end());
  normalize_clustering(c);
  return c;
}

/// Minimum within-cluster sum of squares for k contiguous groups of the
/// sorted input (the optimal 1-D k-clustering), by O(k n^2) dynamic program
/// over prefix sums.
inline double optimal_kmeans_sse(std::span<const double> weights, std::size_t k) {
  const std::size_t n = weights.size();
  if (k < 1 || k > n) throw PreconditionError("optimal_kmeans_sse needs 1 <= k <= n");
  std::vector<double> v(weights.begin(), weights.end());
  std::sort(v.begin(), v.end());
  std::vector<double> s1(n + 1, 0.0), s2(n + 1, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    s1[t + 1] = s1[t] + v[t];
    s2[t + 1] = s2[t] + v[t] * v[t];
  }
  auto cost = [&](std::size_t i, std::size_t j) {  // group v[i..j)
    const double sum = s1[j] - s1[i];
    return std::max(0.0, (s2[j] - s2[i]) - sum * sum / static_cast<double>(j - i));
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> dp(k + 1, std::vector<double>(n + 1, inf));
  dp[0][0] = 0;
  for (std::size_t g = 1; g <= k; ++g)
    for (std::size_t j = g; j <= n; ++j)
      for (std::size_t i = g - 1; i < j; ++i)
        if (dp[g - 1][i] < inf) dp[g][j] = std::min(dp[g][j], dp[g - 1][i] + cost(i, j));
  return dp[k][n];
}

/// Mean squared error of a clustering's reconstruction against weights.
inline double clustering_mse(std::span<const double> weights, const Clustering& c) {
  return mse(weights, c.reconstruct());
}

}  // namespace lcd::oracle
