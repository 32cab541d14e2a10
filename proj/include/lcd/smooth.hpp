// SPDX-License-Identifier: Apache-2.0
//
// Per-layer activation smoothing. A scalar s_m divides the activations and
// multiplies the weights, so layer outputs are unchanged while the smoothed
// activations land on a friendlier scale for b-bit integer quantization.

#pragma once

#include "lcd/core.hpp"

namespace lcd {

/// Largest representable magnitude of a b-bit symmetric integer code.
inline double qmax(int b) { return std::ldexp(1.0, b - 1) - 1.0; }

/// clip(round_half_even(v), -2^(b-1), 2^(b-1) - 1).
inline double quantize_code(double v, int b) {
  const double lo = -std::ldexp(1.0, b - 1), hi = qmax(b);
  return std::clamp(std::nearbyint(v), lo, hi);
}

/// Mean of (x - s_m * Q_b(x / s_m))^2 over every calibration entry, where
/// Q_b is the unit-step b-bit integer cast above.
inline double smoothing_mse(std::span<const double> calib, int b, double s_m) {
  if (!(s_m > 0) || !std::isfinite(s_m)) throw PreconditionError("smoothing factor must be positive");
  if (calib.empty()) throw PreconditionError("empty calibration data");
  double total = 0.0;
  for (double x : calib) {
    const double e = x - s_m * quantize_code(x / s_m, b);
    total += e * e;
  }
  return total / static_cast<double>(calib.size());
}

inline constexpr std::size_t kGridPoints = 33;
inline constexpr double kGridSpread = 16.0;

/// 33 geometric points from max|X| / (2^(b-1) - 1) / 16 to max|X| * 16.
/// All-zero data uses max|X| = 1.
inline std::vector<double> default_grid(std::span<const double> calib, int b) {
  double m = 0.0;
  for (double x : calib) m = std::max(m, std::abs(x));
  if (m == 0.0) m = 1.0;
  const double lo = m / qmax(b) / kGridSpread, hi = m * kGridSpread;
  std::vector<double> grid(kGridPoints);
  const double ratio = std::log(hi / lo) / static_cast<double>(kGridPoints - 1);
  for (std::size_t i = 0; i < kGridPoints; ++i) grid[i] = lo * std::exp(ratio * static_cast<double>(i));
  grid.back() = hi;
  return grid;
}

struct SmoothingChoice {
  double s_m = 1.0;
  double mse = 0.0;
};

/// MSE for every grid candidate, in grid order.
inline std::vector<SmoothingChoice> smoothing_curve(std::span<const double> calib, int b,
                                                    std::span<const double> grid) {
  if (grid.empty()) throw PreconditionError("smoothing grid is empty");
  for (double s : grid)
    if (!(s > 0) || !std::isfinite(s)) throw PreconditionError("smoothing candidates must be positive");
  std::vector<SmoothingChoice> out;
  out.reserve(grid.size());
  for (double s : grid) out.push_back({s, smoothing_mse(calib, b, s)});
  return out;
}

/// The grid candidate with the lowest MSE; ties go to the smaller s_m. For
/// all-zero data every candidate scores 0 and the first one is returned.
inline SmoothingChoice search_smoothing(std::span<const double> calib, int b, std::span<const double> grid) {
  const auto curve = smoothing_curve(calib, b, grid);
  bool all_zero = std::all_of(calib.begin(), calib.end(), [](double x) { return x == 0.0; });
  if (all_zero) return {grid.front(), 0.0};
  SmoothingChoice best = curve.front();
  for (const auto& c : curve)
    if (c.mse < best.mse || (c.mse == best.mse && c.s_m < best.s_m)) best = c;
  return best;
}

inline constexpr std::size_t kRefinePoints = 17;
inline constexpr std::size_t kRefinePasses = 3;

/// Grid search over `grid`, then `kRefinePasses` geometric grids of
/// `kRefinePoints` between the current best's neighbours in the previous grid.
inline SmoothingChoice refine_smoothing(std::span<const double> calib, int b, std::span<const double> grid) {
  std::vector<double> g(grid.begin(), grid.end());
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  SmoothingChoice best = search_smoothing(calib, b, g);
  for (std::size_t pass = 0; pass < kRefinePasses && g.size() > 1; ++pass) {
    const auto at = static_cast<std::size_t>(std::lower_bound(g.begin(), g.end(), best.s_m) - g.begin());
    const double lo = g[at == 0 ? 0 : at - 1], hi = g[std::min(at + 1, g.size() - 1)];
    std::vector<double> fine(kRefinePoints);
    const double step = std::log(hi / lo) / static_cast<double>(kRefinePoints - 1);
    for (std::size_t i = 0; i < kRefinePoints; ++i) fine[i] = lo * std::exp(step * static_cast<double>(i));
    fine.back() = hi;
    const auto c = search_smoothing(calib, b, fine);
    if (c.mse < best.mse || (c.mse == best.mse && c.s_m < best.s_m)) best = c;
    g = std::move(fine);
  }
  return best;
}

/// The default grid followed by refinement.
inline SmoothingChoice adaptive_smoothing(std::span<const double> calib, int b) {
  return refine_smoothing(calib, b, default_grid(calib, b));
}

/// W <- s_m * W and X <- X / s_m.
inline LayerBundle apply_smoothing(const LayerBundle& b, double s_m) {
  if (!(s_m > 0) || !std::isfinite(s_m)) throw PreconditionError("smoothing factor must be positive");
  LayerBundle out = b;
  for (auto& w : out.weights) w *= s_m;
  for (auto& x : out.calib) x /= s_m;
  return out;
}

}  // namespace lcd
