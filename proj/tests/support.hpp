// SPDX-License-Identifier: Apache-2.0
//
// Seeded generators shared by the unit tests.

#pragma once

#include "lcd/lcd.hpp"

#include <random>

namespace lcd::testing {

using Rng = std::mt19937_64;

inline std::vector<double> normal_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline std::size_t uniform_size(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline LayerBundle random_bundle(Rng& rng, std::size_t rows, std::size_t cols, std::size_t samples) {
  LayerBundle b;
  b.rows = rows;
  b.cols = cols;
  b.weights = normal_vector(rng, rows * cols);
  b.calib = normal_vector(rng, samples * cols);
  return b;
}

/// A valid clustering of `weights` with k evenly spread centroids.
inline Clustering random_clustering(Rng& rng, std::span<const double> weights, std::size_t k) {
  Clustering c;
  c.centroids.resize(k);
  for (std::size_t j = 0; j < k; ++j) c.centroids[j] = -2.0 + 4.0 * (static_cast<double>(j) + 0.5) / static_cast<double>(k);
  c.assignment.resize(weights.size());
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(k - 1));
  for (auto& a : c.assignment) a = pick(rng);
  normalize_clustering(c);
  c.anchor_shadow();
  return c;
}

/// Random compressed layer with K evenly spread centroids in (-1, 1).
inline CompressedLayer random_layer(Rng& rng, std::size_t rows, std::size_t cols, std::size_t k, int b,
                                    double s_m = 1.0, double s_q = 0.05) {
  Clustering c;
  c.centroids.resize(k);
  for (std::size_t j = 0; j < k; ++j) c.centroids[j] = -1.0 + 2.0 * (static_cast<double>(j) + 0.5) / static_cast<double>(k);
  c.assignment.resize(rows * cols);
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(k - 1));
  for (auto& a : c.assignment) a = pick(rng);
  c.recount();
  c.anchor_shadow();
  return make_compressed_layer(rows, cols, c, s_m, s_q, b);
}

}  // namespace lcd::testing
