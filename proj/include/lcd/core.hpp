// SPDX-License-Identifier: Apache-2.0
//
// Domain model shared by every stage of the toolkit: layer bundles,
// clusterings, Hessian diagonals, hyperparameters and the compressed layer.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lcd {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad magic, bad version, unknown enum value in a file.
struct FormatError : Error {
  using Error::Error;
};

/// Truncated or over-long payload.
struct LengthError : Error {
  using Error::Error;
};

/// Non-finite or otherwise unusable numeric data.
struct DataError : Error {
  using Error::Error;
};

/// A value violates a type invariant (unsorted centroids, index >= K, ...).
struct InvariantError : Error {
  using Error::Error;
};

/// Caller violated an operation precondition.
struct PreconditionError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// LayerBundle
// ---------------------------------------------------------------------------

/// One layer's full-precision weights plus calibration activations.
/// Weights are rows x cols row-major (rows = output features); calib is
/// n_samples x cols row-major.
struct LayerBundle {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weights;
  std::vector<double> calib;

  std::size_t n_samples() const { return cols == 0 ? 0 : calib.size() / cols; }

  double weight(std::size_t r, std::size_t c) const { return weights[r * cols + c]; }
  double activation(std::size_t s, std::size_t c) const { return calib[s * cols + c]; }

  /// Throws InvariantError / DataError when the bundle is malformed.
  void validate() const {
    if (rows == 0 || cols == 0) throw InvariantError("layer bundle has an empty dimension");
    if (weights.size() != rows * cols) throw InvariantError("weights length != rows * cols");
    if (calib.empty() || calib.size() % cols != 0)
      throw InvariantError("calibration length is not a positive multiple of cols");
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(weights.begin(), weights.end(), finite))
      throw DataError("non-finite weight");
    if (!std::all_of(calib.begin(), calib.end(), finite))
      throw DataError("non-finite calibration value");
  }

  friend bool operator==(const LayerBundle&, const LayerBundle&) = default;
};

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

/// The student's compressed weight representation.
///
/// centroids are strictly increasing; assignment[i] indexes centroids for
/// weight i; counts[k] is the number of weights assigned to k (never zero);
/// shadow[i] is the student's continuous weight for position i.
struct Clustering {
  std::vector<double> centroids;
  std::vector<std::uint32_t> assignment;
  std::vector<std::size_t> counts;
  std::vector<double> shadow;

  std::size_t size() const { return centroids.size(); }

  double reconstructed(std::size_t i) const { return centroids[assignment[i]]; }

  std::vector<double> reconstruct() const {
    std::vector<double> out(assignment.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = centroids[assignment[i]];
    return out;
  }

  /// Points every shadow weight back at its centroid.
  void anchor_shadow() {
    shadow.resize(assignment.size());
    for (std::size_t i = 0; i < assignment.size(); ++i) shadow[i] = centroids[assignment[i]];
  }

  void recount() {
    counts.assign(centroids.size(), 0);
    for (auto a : assignment) ++counts[a];
  }

  /// Throws InvariantError if any Clustering invariant is broken.
  void validate() const {
    if (centroids.empty()) throw InvariantError("clustering has no centroids");
    for (std::size_t k = 1; k < centroids.size(); ++k)
      if (!(centroids[k - 1] < centroids[k]))
        throw InvariantError("centroids are not strictly increasing");
    if (counts.size() != centroids.size()) throw InvariantError("counts size != centroid count");
    if (shadow.size() != assignment.size()) throw InvariantError("shadow size != weight count");
    std::vector<std::size_t> seen(centroids.size(), 0);
    for (auto a : assignment) {
      if (a >= centroids.size()) throw InvariantError("assignment index out of range");
      ++seen[a];
    }
    if (seen != counts) throw InvariantError("counts disagree with assignment");
    for (auto c : counts)
      if (c == 0) throw InvariantError("empty cluster");
  }

  friend bool operator==(const Clustering&, const Clustering&) = default;
};

/// Restores the Clustering invariants after centroid values changed:
/// drops empty clusters, sorts centroids and merges exact ties.
/// Assignments follow their centroid through the renumbering.
inline void normalize_clustering(Clustering& c) {
  c.recount();
  const std::size_t k = c.centroids.size();
  std::vector<std::uint32_t> order;
  order.reserve(k);
  for (std::uint32_t i = 0; i < k; ++i)
    if (c.counts[i] > 0) order.push_back(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return c.centroids[a] < c.centroids[b]; });

  std::vector<std::uint32_t> remap(k, 0);
  std::vector<double> centroids;
  std::vector<std::size_t> counts;
  for (auto old : order) {
    if (!centroids.empty() && centroids.back() == c.centroids[old]) {
      counts.back() += c.counts[old];
    } else {
      centroids.push_back(c.centroids[old]);
      counts.push_back(c.counts[old]);
    }
    remap[old] = static_cast<std::uint32_t>(centroids.size() - 1);
  }
  for (auto& a : c.assignment) a = remap[a];
  c.centroids = std::move(centroids);
  c.counts = std::move(counts);
}

// ---------------------------------------------------------------------------
// HessianDiag
// ---------------------------------------------------------------------------

/// Per-input-column diagonal Hessian approximation (damped) and its trace.
struct HessianDiag {
  std::vector<double> diag;
  double trace = 0.0;
};

// ---------------------------------------------------------------------------
// HyperParams
// ---------------------------------------------------------------------------

struct HyperParams {
  double eta = 1.0;          // preconditioned step size
  std::size_t backtracks = 8;  // step halvings tried before a round gives up
  double theta = 0.05;       // relative near-zero merge threshold
  double Theta = 1.05;       // relative accuracy bound on reconstruction loss
  std::size_t p = 30;        // speculative distillation rounds per restart
  std::size_t T = 2000;      // total round limit
  int b = 8;                 // activation bit-width
  std::vector<double> eps_multipliers{2.0, 1.5};
  std::size_t plateau_window = 5;
  std::size_t stability_window = 50;  // rounds without a merge before the phase counts as stable
  int reference_bits = 4;             // k-means baseline uses 2^reference_bits centroids
  std::uint64_t seed = 1;
  bool literal_update = false;  // unnormalized centroid offsets
  bool literal_merge = false;   // count-transposed merge weights

  void validate() const {
    if (!(eta > 0)) throw PreconditionError("eta must be > 0");
    if (!(theta > 0)) throw PreconditionError("theta must be > 0");
    if (!(Theta >= 1.0)) throw PreconditionError("Theta must be >= 1");
    if (p < 1) throw PreconditionError("p must be >= 1");
    if (b != 4 && b != 8) throw PreconditionError("b must be 4 or 8");
    if (eps_multipliers.empty()) throw PreconditionError("eps multiplier schedule is empty");
    for (double m : eps_multipliers)
      if (!(m > 0)) throw PreconditionError("eps multipliers must be positive");
    if (plateau_window < 2) throw PreconditionError("plateau window must be >= 2");
    if (reference_bits < 1 || reference_bits > 8) throw PreconditionError("reference_bits out of range");
  }
};

// ---------------------------------------------------------------------------
// Index packing
// ---------------------------------------------------------------------------

/// Packs small integers into bytes. Width 4 puts the first index of each
/// pair in the low nibble and zero-pads an odd tail.
inline std::vector<std::uint8_t> pack_indices(std::span<const std::uint32_t> indices, int width) {
  std::vector<std::uint8_t> out;
  if (width == 8) {
    out.reserve(indices.size());
    for (auto v : indices) {
      if (v > 0xFF) throw PreconditionError("index does not fit in 8 bits");
      out.push_back(static_cast<std::uint8_t>(v));
    }
    return out;
  }
  if (width != 4) throw PreconditionError("index width must be 4 or 8");
  out.assign((indices.size() + 1) / 2, 0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] > 0xF) throw PreconditionError("index does not fit in 4 bits");
    out[i / 2] |= static_cast<std::uint8_t>(indices[i] << ((i & 1) * 4));
  }
  return out;
}

inline std::size_t packed_size(std::size_t n, int width) { return width == 4 ? (n + 1) / 2 : n; }

inline std::uint32_t packed_index_at(std::span<const std::uint8_t> bytes, int width, std::size_t i) {
  if (width == 8) return bytes[i];
  return (bytes[i / 2] >> ((i & 1) * 4)) & 0xF;
}

inline std::vector<std::uint32_t> unpack_indices(std::span<const std::uint8_t> bytes, int width,
                                                 std::size_t n) {
  if (width != 4 && width != 8) throw PreconditionError("index width must be 4 or 8");
  if (bytes.size() < packed_size(n, width)) throw LengthError("packed index buffer too short");
  std::vector<std::uint32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = packed_index_at(bytes, width, i);
  return out;
}

// ---------------------------------------------------------------------------
// CompressedLayer
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMaxCentroids = 256;

/// Final artifact of compressing one layer. Centroids live in the smoothed
/// weight domain and are stored as f32.
struct CompressedLayer {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  int b = 8;
  std::vector<float> centroids;
  std::vector<std::uint8_t> packed_indices;
  float s_m = 1.0f;
  float s_q = 1.0f;

  int index_width() const { return centroids.size() <= 16 ? 4 : 8; }
  std::size_t weight_count() const { return static_cast<std::size_t>(rows) * cols; }

  std::uint32_t index(std::size_t r, std::size_t c) const {
    return packed_index_at(packed_indices, index_width(), r * cols + c);
  }

  /// Materializes W' (rows x cols) in the smoothed domain.
  std::vector<float> reconstruct() const {
    std::vector<float> out(weight_count());
    const int w = index_width();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = centroids[packed_index_at(packed_indices, w, i)];
    return out;
  }

  void validate() const {
    if (rows == 0 || cols == 0) throw InvariantError("compressed layer has an empty dimension");
    if (b != 4 && b != 8) throw InvariantError("bit-width must be 4 or 8");
    if (centroids.empty() || centroids.size() > kMaxCentroids)
      throw InvariantError("centroid count must be in [1, 256]");
    for (float c : centroids)
      if (!std::isfinite(c)) throw InvariantError("non-finite centroid");
    for (std::size_t k = 1; k < centroids.size(); ++k)
      if (!(centroids[k - 1] < centroids[k])) throw InvariantError("centroids are not strictly increasing");
    if (!(s_m > 0) || !std::isfinite(s_m)) throw InvariantError("s_m must be positive");
    if (!(s_q > 0) || !std::isfinite(s_q)) throw InvariantError("s_q must be positive");
    const int w = index_width();
    if (packed_indices.size() != packed_size(weight_count(), w))
      throw InvariantError("packed index length does not match rows * cols");
    for (std::size_t i = 0; i < weight_count(); ++i)
      if (packed_index_at(packed_indices, w, i) >= centroids.size())
        throw InvariantError("weight index >= centroid count");
    if (w == 4 && (weight_count() & 1) && (packed_indices.back() >> 4) != 0)
      throw InvariantError("non-zero padding nibble");
  }

  friend bool operator==(const CompressedLayer&, const CompressedLayer&) = default;
};

/// Builds a CompressedLayer from a clustering. Centroids are rounded to f32;
/// any that collide after rounding are merged so the stored sequence stays
/// strictly increasing.
inline CompressedLayer make_compressed_layer(std::size_t rows, std::size_t cols, const Clustering& c,
                                             double s_m, double s_q, int b) {
  if (c.assignment.size() != rows * cols) throw InvariantError("clustering does not match layer shape");
  std::vector<float> rounded;
  std::vector<std::uint32_t> remap(c.centroids.size());
  for (std::size_t k = 0; k < c.centroids.size(); ++k) {
    const float v = static_cast<float>(c.centroids[k]);
    if (rounded.empty() || rounded.back() != v) rounded.push_back(v);
    remap[k] = static_cast<std::uint32_t>(rounded.size() - 1);
  }
  if (rounded.size() > kMaxCentroids) throw InvariantError("more than 256 centroids cannot be stored");

  CompressedLayer out;
  out.rows = static_cast<std::uint32_t>(rows);
  out.cols = static_cast<std::uint32_t>(cols);
  out.b = b;
  out.centroids = std::move(rounded);
  out.s_m = static_cast<float>(s_m);
  out.s_q = static_cast<float>(s_q);
  std::vector<std::uint32_t> idx(c.assignment.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = remap[c.assignment[i]];
  out.packed_indices = pack_indices(idx, out.index_width());
  out.validate();
  return out;
}

}  // namespace lcd
