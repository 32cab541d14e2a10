// SPDX-License-Identifier: Apache-2.0
//
// Diagonal Hessian of the layer-output squared error and the two losses the
// optimizer watches: the Hessian-weighted L1 clustering error and the output
// reconstruction error on calibration data.

#pragma once

#include "lcd/core.hpp"

#include <Eigen/Dense>

namespace lcd {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

/// diag[j] = 2 * sum_s calib[s, j]^2, undamped.
inline std::vector<double> raw_hessian_diag(std::span<const double> calib, std::size_t cols) {
  if (cols == 0 || calib.empty() || calib.size() % cols != 0)
    throw PreconditionError("calibration matrix shape mismatch");
  std::vector<double> diag(cols, 0.0);
  const std::size_t n = calib.size() / cols;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < cols; ++j) diag[j] += calib[s * cols + j] * calib[s * cols + j];
  for (auto& d : diag) d *= 2.0;
  return diag;
}

inline constexpr double kDampingFraction = 0.01;
inline constexpr double kDampingFloor = 1e-8;

/// Damped diagonal: every entry gets lambda = max(0.01 * mean(raw), 1e-8).
inline HessianDiag compute_hessian_diag(std::span<const double> calib, std::size_t cols) {
  HessianDiag h;
  h.diag = raw_hessian_diag(calib, cols);
  const double mean = std::accumulate(h.diag.begin(), h.diag.end(), 0.0) / static_cast<double>(cols);
  const double lambda = std::max(kDampingFraction * mean, kDampingFloor);
  for (auto& d : h.diag) d += lambda;
  h.trace = std::accumulate(h.diag.begin(), h.diag.end(), 0.0);
  return h;
}

inline HessianDiag compute_hessian_diag(const LayerBundle& b) { return compute_hessian_diag(b.calib, b.cols); }

/// Hessian-weighted L1 clustering error: sum over (i, j) of
/// H_jj * |weights[i, j] - centroid(i, j)| / 2.
inline double clustering_loss(std::span<const double> weights, std::size_t cols, const Clustering& c,
                              const HessianDiag& h) {
  if (weights.size() != c.assignment.size() || h.diag.size() != cols || weights.size() % cols != 0)
    throw PreconditionError("clustering_loss shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    total += h.diag[i % cols] * std::abs(weights[i] - c.centroids[c.assignment[i]]);
  return total / 2.0;
}

inline double clustering_loss(const LayerBundle& b, const Clustering& c, const HessianDiag& h) {
  return clustering_loss(b.weights, b.cols, c, h);
}

/// Residual E = X * (W' - W)^T, n_samples x rows, row-major.
inline RowMatrix output_residual(const LayerBundle& b, std::span<const double> reconstructed) {
  if (reconstructed.size() != b.weights.size()) throw PreconditionError("reconstruction shape mismatch");
  ConstRowMap x(b.calib.data(), static_cast<Eigen::Index>(b.n_samples()), static_cast<Eigen::Index>(b.cols));
  ConstRowMap w(b.weights.data(), static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols));
  ConstRowMap wq(reconstructed.data(), static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols));
  RowMatrix delta = wq - w;
  RowMatrix e = x * delta.transpose();
  return e;
}

/// ||X W'^T - X W^T||_F^2 / (n_samples * rows) for an explicit W'.
inline double output_reconstruction_loss(const LayerBundle& b, std::span<const double> reconstructed) {
  const RowMatrix e = output_residual(b, reconstructed);
  return e.squaredNorm() / static_cast<double>(b.n_samples() * b.rows);
}

inline double output_reconstruction_loss(const LayerBundle& b, const Clustering& c) {
  return output_reconstruction_loss(b, c.reconstruct());
}

}  // namespace lcd
