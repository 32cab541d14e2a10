// SPDX-License-Identifier: Apache-2.0
//
// Multiplication-free inference over a compressed layer.
//
// Inputs are mapped to b-bit integer codes with one multiply by
// 1 / (s_m * s_q). Each centroid owns a bucket of precomputed products
// centroid * m for m = 0 .. 2^(b-1); the matmul reads bucket entries by
// |q|, flips the sign for negative codes and accumulates.

#pragma once

#include "lcd/smooth.hpp"

#include <chrono>
#include <random>
#include <string>

namespace lcd {

struct QuantParams {
  double s_q = 1.0;
  double s_m = 1.0;
  int b = 8;
  double combined = 1.0;  // 1 / (s_m * s_q)

  static QuantParams make(double s_m, double s_q, int b) {
    if (!(s_m > 0) || !std::isfinite(s_m) || !(s_q > 0) || !std::isfinite(s_q))
      throw PreconditionError("quantization scales must be positive and finite");
    if (b < 2 || b > 16) throw PreconditionError("bit-width out of range");
    return {s_q, s_m, b, 1.0 / (s_m * s_q)};
  }

  static QuantParams of(const CompressedLayer& l) { return make(l.s_m, l.s_q, l.b); }

  int qmin() const { return -(1 << (b - 1)); }
  int qmax() const { return (1 << (b - 1)) - 1; }
};

/// max|calib| / (2^(b-1) - 1); 1 for all-zero data.
inline double derive_activation_scale(std::span<const double> calib, int b) {
  if (calib.empty()) throw PreconditionError("empty calibration data");
  double m = 0.0;
  for (double x : calib) m = std::max(m, std::abs(x));
  return m == 0.0 ? 1.0 : m / lcd::qmax(b);
}

/// q_i = clip(round_half_even(x_i * combined), -2^(b-1), 2^(b-1) - 1).
inline std::vector<std::int32_t> quantize_input(std::span<const double> x, const QuantParams& p) {
  std::vector<std::int32_t> q(x.size());
  const auto lo = static_cast<double>(p.qmin()), hi = static_cast<double>(p.qmax());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw DataError("non-finite activation");
    q[i] = static_cast<std::int32_t>(std::clamp(std::nearbyint(x[i] * p.combined), lo, hi));
  }
  return q;
}

/// q * s_m * s_q, the real value a code stands for.
inline std::vector<double> dequantize_input(std::span<const std::int32_t> q, const QuantParams& p) {
  std::vector<double> x(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) x[i] = static_cast<double>(q[i]) * p.s_m * p.s_q;
  return x;
}

/// K buckets of 2^(b-1) + 1 float entries; entry(k, m) = centroids[k] * m.
class BucketLUT {
 public:
  BucketLUT(std::span<const float> centroids, int b) : k_(centroids.size()), b_(b) {
    if (centroids.empty()) throw PreconditionError("bucket LUT needs at least one centroid");
    if (b < 2 || b > 16) throw PreconditionError("bit-width out of range");
    width_ = (std::size_t{1} << (b - 1)) + 1;
    table_.resize(k_ * width_);
    for (std::size_t k = 0; k < k_; ++k)
      for (std::size_t m = 0; m < width_; ++m) table_[k * width_ + m] = centroids[k] * static_cast<float>(m);
  }

  std::size_t centroids() const { return k_; }
  int bits() const { return b_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return table_.size(); }
  float at(std::size_t k, std::size_t m) const { return table_[k * width_ + m]; }
  const float* bucket(std::size_t k) const { return table_.data() + k * width_; }

 private:
  std::size_t k_;
  int b_;
  std::size_t width_ = 0;
  std::vector<float> table_;
};

inline BucketLUT build_bucket_lut(std::span<const float> centroids, int b) { return BucketLUT(centroids, b); }

namespace detail {

inline void check_lut(std::span<const std::int32_t> q, const CompressedLayer& layer, const BucketLUT& lut) {
  if (q.size() != layer.cols) throw PreconditionError("input length does not match layer columns");
  if (lut.centroids() != layer.centroids.size() || lut.bits() != layer.b)
    throw PreconditionError("LUT was not built for this layer");
}

}  // namespace detail

/// y_r = s_q * sum_j sign(q_j) * lut[index(r, j)][|q_j|]. The inner loop only
/// reads, negates and adds; `Acc` selects the accumulator precision.
template <typename Acc = float>
std::vector<Acc> lut_matmul(std::span<const std::int32_t> q, const CompressedLayer& layer, const BucketLUT& lut) {
  detail::check_lut(q, layer, lut);
  const std::size_t rows = layer.rows, cols = layer.cols;
  std::vector<std::uint32_t> mag(cols);
  std::vector<bool> neg(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    mag[j] = static_cast<std::uint32_t>(q[j] < 0 ? -static_cast<std::int64_t>(q[j]) : q[j]);
    if (mag[j] >= lut.width()) throw InvariantError("activation code outside the LUT range");
    neg[j] = q[j] < 0;
  }
  const std::size_t width = lut.width();
  const float* table = lut.bucket(0);
  std::vector<std::uint32_t> idx(cols);
  std::vector<Acc> y(rows);
  const int w = layer.index_width();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * cols;
    for (std::size_t j = 0; j < cols; ++j) idx[j] = packed_index_at(layer.packed_indices, w, base + j);
    Acc acc = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      const Acc v = table[idx[j] * width + mag[j]];
      acc += neg[j] ? -v : v;
    }
    y[r] = static_cast<Acc>(layer.s_q) * acc;
  }
  return y;
}

/// Quantizes x, then multiplies the reconstructed W' by the integer codes in
/// floats, summing in the same order as lut_matmul.
template <typename Acc = float>
std::vector<Acc> reference_forward(std::span<const double> x, const CompressedLayer& layer) {
  if (x.size() != layer.cols) throw PreconditionError("input length does not match layer columns");
  const auto q = quantize_input(x, QuantParams::of(layer));
  const auto wq = layer.reconstruct();
  std::vector<Acc> y(layer.rows);
  for (std::size_t r = 0; r < layer.rows; ++r) {
    Acc acc = 0;
    for (std::size_t j = 0; j < layer.cols; ++j)
      acc += static_cast<Acc>(wq[r * layer.cols + j] * static_cast<float>(q[j]));
    y[r] = static_cast<Acc>(layer.s_q) * acc;
  }
  return y;
}

/// Quantize-then-lookup forward pass for one real input vector.
template <typename Acc = float>
std::vector<Acc> lut_forward(std::span<const double> x, const CompressedLayer& layer, const BucketLUT& lut) {
  return lut_matmul<Acc>(quantize_input(x, QuantParams::of(layer)), layer, lut);
}

/// Row-by-row batch over one shared LUT. `x` is batch x cols.
template <typename Acc = float>
std::vector<Acc> lut_forward_batch(std::span<const double> x, std::size_t batch, const CompressedLayer& layer,
                                   const BucketLUT& lut) {
  if (x.size() != batch * layer.cols) throw PreconditionError("batch shape mismatch");
  std::vector<Acc> y;
  y.reserve(batch * layer.rows);
  for (std::size_t i = 0; i < batch; ++i) {
    auto row = lut_forward<Acc>(x.subspan(i * layer.cols, layer.cols), layer, lut);
    y.insert(y.end(), row.begin(), row.end());
  }
  return y;
}

/// max|a - b| / max|b|, with a tiny floor on the denominator.
template <typename A, typename B>
double max_relative_deviation(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size()) throw PreconditionError("deviation size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    den = std::max(den, std::abs(static_cast<double>(b[i])));
  }
  return num / std::max(den, 1e-30);
}

/// Dense float matmul y = W' x, the baseline the LUT kernel is timed against.
inline void dense_forward(std::span<const float> w, std::size_t rows, std::size_t cols, std::span<const float> x,
                          std::span<float> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    float acc = 0.0f;
    const float* row = w.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
    y[r] = acc;
  }
}

struct BenchConfig {
  std::size_t rows = 1024;
  std::size_t cols = 1024;
  std::size_t centroids = 8;
  int bits = 8;
  std::size_t batch = 1;
  std::size_t iters = 10;
  std::uint64_t seed = 1;
};

struct BenchRow {
  std::string kernel;
  double ns_per_matmul = 0.0;
  double ratio_vs_naive = 0.0;  // naive time / kernel time
};

/// Times the dense float kernel ("naive") and the bucket-LUT kernel ("lut")
/// on a random layer. Each timed unit is one batch of matrix-vector products.
inline std::vector<BenchRow> bench_kernels(const BenchConfig& cfg) {
  if (cfg.rows == 0 || cfg.cols == 0 || cfg.batch == 0 || cfg.iters == 0)
    throw PreconditionError("bench dimensions must be positive");
  if (cfg.centroids < 1 || cfg.centroids > kMaxCentroids) throw PreconditionError("bench centroid count out of range");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal;

  Clustering c;
  c.centroids.resize(cfg.centroids);
  for (std::size_t k = 0; k < cfg.centroids; ++k)
    c.centroids[k] = -1.0 + 2.0 * (static_cast<double>(k) + 0.5) / static_cast<double>(cfg.centroids);
  c.assignment.resize(cfg.rows * cfg.cols);
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(cfg.centroids - 1));
  for (auto& a : c.assignment) a = pick(rng);
  c.recount();
  normalize_clustering(c);
  c.anchor_shadow();

  std::vector<double> x(cfg.batch * cfg.cols);
  for (auto& v : x) v = normal(rng);
  const double s_q = derive_activation_scale(x, cfg.bits);
  const auto layer = make_compressed_layer(cfg.rows, cfg.cols, c, 1.0, s_q, cfg.bits);
  const auto lut = build_bucket_lut(layer.centroids, layer.b);
  const auto wq = layer.reconstruct();
  std::vector<float> xf(x.begin(), x.end());
  std::vector<float> y(cfg.rows);

  using clock = std::chrono::steady_clock;
  volatile float sink = 0.0f;
  auto time_ns = [&](auto&& body) {
    body();  // warm-up
    const auto t0 = clock::now();
    for (std::size_t it = 0; it < cfg.iters; ++it) body();
    const auto t1 = clock::now();
    return std::chrono::duration<double, std::nano>(t1 - t0).count() / static_cast<double>(cfg.iters);
  };
  const double naive = time_ns([&] {
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      dense_forward(wq, cfg.rows, cfg.cols, std::span<const float>(xf).subspan(i * cfg.cols, cfg.cols), y);
      sink = sink + y[0];
    }
  });
  const double lut_ns = time_ns([&] {
    auto out = lut_forward_batch(std::span<const double>(x), cfg.batch, layer, lut);
    sink = sink + out[0];
  });
  const double naive_ns = std::max(naive, 1.0), lut_t = std::max(lut_ns, 1.0);
  return {{"naive", naive_ns, 1.0}, {"lut", lut_t, naive_ns / lut_t}};
}

}  // namespace lcd
