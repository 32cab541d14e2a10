// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include <gtest/gtest.h>

#include <functional>

namespace lcd {
namespace {

using testing::Rng;

LayerBundle identity_bundle(std::vector<double> weights, std::size_t cols) {
  LayerBundle b;
  b.cols = cols;
  b.rows = weights.size() / cols;
  b.weights = std::move(weights);
  b.calib.assign(cols * cols, 0.0);
  for (std::size_t i = 0; i < cols; ++i) b.calib[i * cols + i] = 1.0;
  return b;
}

TEST(DenseMatmul, Examples) {
  const std::vector<double> x{1, 2, 3, 4};     // 2 x 2
  const std::vector<double> eye{1, 0, 0, 1};   // 2 x 2
  EXPECT_EQ(oracle::dense_matmul(x, 2, eye, 2, 2), x);
  const std::vector<double> w{1, 1, 2, -1, 0, 3};  // 3 x 2
  EXPECT_EQ(oracle::dense_matmul(x, 2, w, 3, 2), (std::vector<double>{3, 0, 6, 7, 2, 12}));
  EXPECT_THROW(oracle::dense_matmul(x, 3, eye, 2, 2), PreconditionError);
}

TEST(Percentile, Examples) {
  const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  EXPECT_EQ(oracle::percentile(v, 1.0), 10);
  EXPECT_EQ(oracle::percentile(v, 0.0), 1);
  EXPECT_EQ(oracle::percentile(v, 0.5), 5);
  EXPECT_EQ(oracle::percentile(v, 0.51), 6);
  EXPECT_THROW(oracle::percentile(std::vector<double>{}, 0.5), PreconditionError);
}

TEST(DbscanQuadratic, Example) {
  const std::vector<double> p{0.0, 0.1, 0.2, 5.0, 5.1, 5.2, 9.0};
  const auto r = oracle::dbscan_quadratic(p, 0.15, 2);
  ASSERT_EQ(r.clusters.size(), 2u);
  EXPECT_EQ(r.clusters[0], (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(r.clusters[1], (std::vector<std::size_t>{3, 4, 5}));
  EXPECT_EQ(r.noise, (std::vector<std::size_t>{6}));
}

TEST(UniformQuantize, OnGridValuesAreExact) {
  const std::vector<double> w{-1.5, -0.5, 0.5, 1.5};
  EXPECT_EQ(oracle::uniform_quantize(w, 2), w);
}

TEST(UniformQuantize, TwoBitExample) {
  // Levels -3, -1, 1, 3.
  const auto q = oracle::uniform_quantize(std::vector<double>{3.0, 0.2, -1.9, -2.1, 2.0}, 2);
  EXPECT_EQ(q, (std::vector<double>{3.0, 1.0, -1.0, -3.0, 1.0}));
  EXPECT_EQ(oracle::uniform_quantize(std::vector<double>{0.0, 0.0}, 4), (std::vector<double>{0.0, 0.0}));
  EXPECT_THROW(oracle::uniform_quantize(std::vector<double>{1.0}, 1), PreconditionError);
}

TEST(UniformQuantize, MatchesRoundingToTheGrid) {
  Rng rng(1);
  for (int bits : {2, 3, 4, 8}) {
    const auto w = testing::normal_vector(rng, 500);
    const auto q = oracle::uniform_quantize(w, bits);
    double m = 0;
    for (double v : w) m = std::max(m, std::abs(v));
    const double step = 2 * m / (std::ldexp(1.0, bits) - 1);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double level = -m + step * std::round((w[i] + m) / step);
      EXPECT_NEAR(q[i], level, 1e-12);
      EXPECT_LE(std::abs(q[i] - w[i]), step / 2 + 1e-12);
    }
  }
}

TEST(Mse, Examples) {
  EXPECT_EQ(oracle::mse(std::vector<double>{1, 2}, std::vector<double>{1, 4}), 2.0);
  EXPECT_THROW(oracle::mse(std::vector<double>{1}, std::vector<double>{1, 2}), PreconditionError);
}

TEST(Kmeans, RecoversDistinctValuesExactly) {
  Rng rng(2);
  std::vector<double> w(300);
  const std::vector<double> levels{-2.5, -0.25, 0.75, 4.0};
  for (auto& v : w) v = levels[testing::uniform_size(rng, 0, 3)];
  const auto c = oracle::kmeans(w, 4, 100, 7);
  EXPECT_EQ(c.centroids, levels);
  EXPECT_EQ(oracle::clustering_mse(w, c), 0.0);
}

TEST(Kmeans, SingleCentroidIsTheMean) {
  const std::vector<double> w{1, 2, 3, 10};
  const auto c = oracle::kmeans(w, 1, 10, 1);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_DOUBLE_EQ(c.centroids[0], 4.0);
}

TEST(Kmeans, TooManyCentroidsThrows) {
  EXPECT_THROW(oracle::kmeans(std::vector<double>{1, 1, 2}, 3, 10, 1), PreconditionError);
  EXPECT_THROW(oracle::kmeans(std::vector<double>{1, 2}, 0, 10, 1), PreconditionError);
}

TEST(Kmeans, IsALloydFixedPointWithValidClustering) {
  Rng rng(3);
  const auto w = testing::normal_vector(rng, 1000);
  const auto c = oracle::kmeans(w, 16, 200, 5);
  c.validate();
  EXPECT_EQ(c.size(), 16u);
  std::vector<double> sum(16, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) sum[c.assignment[i]] += w[i];
  for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(c.centroids[k], sum[k] / c.counts[k], 1e-9);
  for (std::size_t i = 0; i < w.size(); ++i)
    for (double other : c.centroids) EXPECT_LE(std::abs(w[i] - c.reconstructed(i)), std::abs(w[i] - other) + 1e-12);
}

// Exhaustive search over every contiguous partition of the sorted values.
double brute_force_sse(std::vector<double> v, std::size_t k) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> cuts(k - 1);
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t depth, std::size_t start) {
    if (depth == k - 1) {
      double total = 0;
      std::size_t lo = 0;
      for (std::size_t g = 0; g < k; ++g) {
        const std::size_t hi = g + 1 < k ? cuts[g] : n;
        double mean = 0;
        for (std::size_t i = lo; i < hi; ++i) mean += v[i];
        mean /= static_cast<double>(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) total += (v[i] - mean) * (v[i] - mean);
        lo = hi;
      }
      best = std::min(best, total);
      return;
    }
    for (std::size_t c = start; c + (k - 1 - depth) <= n; ++c) {
      cuts[depth] = c;
      rec(depth + 1, c + 1);
    }
  };
  rec(0, 1);
  return best;
}

TEST(OptimalKmeansSse, MatchesExhaustiveSearch) {
  Rng rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const auto n = testing::uniform_size(rng, 1, 12);
    const auto k = testing::uniform_size(rng, 1, std::min<std::size_t>(n, 4));
    const auto w = testing::normal_vector(rng, n);
    EXPECT_NEAR(oracle::optimal_kmeans_sse(w, k), brute_force_sse(w, k), 1e-9);
  }
  EXPECT_THROW(oracle::optimal_kmeans_sse(std::vector<double>{1.0}, 2), PreconditionError);
}

TEST(OptimalKmeansSse, LowerBoundsLloydOnSmallInputs) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto n = testing::uniform_size(rng, 4, 64);
    const auto k = testing::uniform_size(rng, 1, 4);
    const auto w = testing::normal_vector(rng, n);
    const double sse = oracle::clustering_mse(w, oracle::kmeans(w, k, 100, trial)) * static_cast<double>(n);
    EXPECT_GE(sse, oracle::optimal_kmeans_sse(w, k) - 1e-9);
  }
}

TEST(OptimalKmeansSse, LowerBoundsFixedCountDistillation) {
  Rng rng(6);
  HyperParams hyper;
  for (int trial = 0; trial < 3; ++trial) {
    const auto b = identity_bundle(testing::normal_vector(rng, 16 * 16), 16);
    for (std::size_t k : {2u, 4u, 8u}) {
      const auto c = fit_fixed_count(b, k, hyper, 100);
      const double sse = oracle::clustering_mse(b.weights, c) * static_cast<double>(b.weights.size());
      EXPECT_GE(sse, oracle::optimal_kmeans_sse(b.weights, c.size()) - 1e-9);
    }
  }
}

TEST(Baselines, SixteenCentroidsBeatFourUniformBits) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const auto w = testing::normal_vector(rng, 4096);
    const double km = oracle::clustering_mse(w, oracle::kmeans(w, 16, 200, seed));
    const double uni = oracle::mse(w, oracle::uniform_quantize(w, 4));
    EXPECT_LT(km, uni) << "seed " << seed;
  }
}

TEST(DistinctCount, Examples) {
  EXPECT_EQ(oracle::distinct_count(std::vector<double>{3, 1, 3, 2, 1}), 3u);
  EXPECT_EQ(oracle::distinct_count(std::vector<double>{}), 0u);
}

}  // namespace
}  // namespace lcd
