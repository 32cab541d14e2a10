// SPDX-License-Identifier: Apache-2.0
//
// Density-based centroid initialization for scalar weights.
//
// The scale sigma comes from sign-split percentiles of the weights, the two
// extreme points seed two clusters of radius sigma, the smaller seed size
// becomes MinPts, and a 1-D DBSCAN with eps = m * sigma / MinPts partitions
// the rest. Noise points join the nearest cluster, clusters wider than
// eps_multiplier * sigma / 2 are cut into equal-width slabs, and slab
// medians become the initial centroids.

#pragma once

#include "lcd/core.hpp"

#include <array>

namespace lcd {

struct DbciParams {
  double sigma = 0.0;
  std::size_t min_pts = 1;
  double eps = 0.0;
  double eps_multiplier = 1.0;
};

/// Weights sorted ascending together with the permutation that sorts them.
/// Ties keep their original order, which fixes the density scan order.
struct SortedWeights {
  std::vector<double> values;
  std::vector<std::size_t> index;  // values[i] == weights[index[i]]

  explicit SortedWeights(std::span<const double> weights) : index(weights.size()) {
    std::iota(index.begin(), index.end(), 0);
    std::stable_sort(index.begin(), index.end(), [&](auto a, auto b) { return weights[a] < weights[b]; });
    values.resize(weights.size());
    for (std::size_t i = 0; i < index.size(); ++i) values[i] = weights[index[i]];
  }

  std::size_t size() const { return values.size(); }
};

namespace detail {

// Value at 1-based rank ceil(p * n) of an ascending magnitude list.
inline double rank_value(const std::vector<double>& ascending, double p) {
  const auto n = static_cast<double>(ascending.size());
  auto rank = static_cast<std::size_t>(std::ceil(p * n));
  rank = std::clamp<std::size_t>(rank, 1, ascending.size());
  return ascending[rank - 1];
}

}  // namespace detail

inline constexpr std::array<double, 3> kSigmaPercentiles{0.6827, 0.9544, 0.9974};

/// Scale estimate: the 68.27/95.44/99.74 percentiles of the positive weights
/// and of the negative weights' magnitudes, summed and divided by 12.
inline double estimate_sigma(std::span<const double> weights) {
  std::vector<double> pos, neg;
  for (double w : weights) {
    if (w > 0)
      pos.push_back(w);
    else if (w < 0)
      neg.push_back(-w);
  }
  if (pos.empty() || neg.empty())
    throw PreconditionError("estimate_sigma needs at least one positive and one negative weight");
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  double sum = 0.0;
  for (double p : kSigmaPercentiles) sum += detail::rank_value(pos, p) + detail::rank_value(neg, p);
  return sum / 12.0;
}

struct SeedClusters {
  std::vector<std::size_t> low;   // positions in sorted order near the minimum
  std::vector<std::size_t> high;  // positions near the maximum, excluding `low`
  DbciParams params;
};

/// Gathers every point within sigma of the minimum and of the maximum.
/// Returned positions index `sorted.values`.
inline SeedClusters seed_extreme_clusters(const SortedWeights& sorted, double sigma, double eps_multiplier = 1.0) {
  if (sorted.size() == 0) throw PreconditionError("no weights");
  if (!(sigma > 0)) throw PreconditionError("sigma must be positive");
  if (!(eps_multiplier > 0)) throw PreconditionError("eps multiplier must be positive");
  const auto& v = sorted.values;
  const double lo = v.front(), hi = v.back();

  const auto low_end = static_cast<std::size_t>(std::upper_bound(v.begin(), v.end(), lo + sigma) - v.begin());
  const auto high_begin = static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), hi - sigma) - v.begin());

  SeedClusters s;
  for (std::size_t i = 0; i < low_end; ++i) s.low.push_back(i);
  for (std::size_t i = std::max(high_begin, low_end); i < v.size(); ++i) s.high.push_back(i);

  // MinPts uses the full neighborhoods; overlap only affects membership.
  const std::size_t low_count = low_end;
  const std::size_t high_count = v.size() - high_begin;
  s.params.sigma = sigma;
  s.params.min_pts = std::min(low_count, high_count);
  s.params.eps_multiplier = eps_multiplier;
  s.params.eps = eps_multiplier * sigma / static_cast<double>(s.params.min_pts);
  return s;
}

struct DensityScan {
  std::vector<std::vector<std::size_t>> clusters;  // positions in sorted order
  std::vector<std::size_t> noise;
};

/// DBSCAN over the unvisited points of a sorted scalar set.
///
/// Neighborhoods are |a - b| <= eps among the unvisited points only. Points
/// are scanned in ascending order, so a border point that touches two clusters
/// joins the lower one. In one dimension the core points of a cluster form a
/// run in which consecutive cores are at most eps apart, which lets the whole
/// scan run in O(n) after sorting.
inline DensityScan run_density_scan(const SortedWeights& sorted, const std::vector<bool>& visited,
                                    const DbciParams& params) {
  if (visited.size() != sorted.size()) throw PreconditionError("visited mask size mismatch");
  std::vector<std::size_t> pos;  // sorted positions of the points being scanned
  for (std::size_t i = 0; i < sorted.size(); ++i)
    if (!visited[i]) pos.push_back(i);
  const std::size_t m = pos.size();
  auto val = [&](std::size_t i) { return sorted.values[pos[i]]; };

  // Neighborhood sizes by two pointers.
  std::vector<bool> core(m, false);
  {
    std::size_t left = 0, right = 0;
    for (std::size_t i = 0; i < m; ++i) {
      while (val(i) - val(left) > params.eps) ++left;
      if (right < i) right = i;
      while (right + 1 < m && val(right + 1) - val(i) <= params.eps) ++right;
      core[i] = right - left + 1 >= params.min_pts;
    }
  }

  // Cluster id per core point: runs of cores with gaps <= eps.
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> label(m, kNone);
  std::size_t clusters = 0;
  std::size_t last_core = kNone;
  for (std::size_t i = 0; i < m; ++i) {
    if (!core[i]) continue;
    if (last_core == kNone || val(i) - val(last_core) > params.eps) ++clusters;
    label[i] = clusters - 1;
    last_core = i;
  }

  // Border points: nearest core to the left within eps wins, else to the right.
  std::vector<std::size_t> prev_core(m, kNone), next_core(m, kNone);
  for (std::size_t i = 0, c = kNone; i < m; ++i) {
    if (core[i]) c = i;
    prev_core[i] = c;
  }
  for (std::size_t i = m, c = kNone; i-- > 0;) {
    if (core[i]) c = i;
    next_core[i] = c;
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (core[i]) continue;
    if (prev_core[i] != kNone && val(i) - val(prev_core[i]) <= params.eps)
      label[i] = label[prev_core[i]];
    else if (next_core[i] != kNone && val(next_core[i]) - val(i) <= params.eps)
      label[i] = label[next_core[i]];
  }

  DensityScan out;
  out.clusters.resize(clusters);
  for (std::size_t i = 0; i < m; ++i) {
    if (label[i] == kNone)
      out.noise.push_back(pos[i]);
    else
      out.clusters[label[i]].push_back(pos[i]);
  }
  return out;
}

/// Median of a non-empty ascending run; midpoint of the middle pair for
/// even sizes.
inline double sorted_median(std::span<const double> ascending) {
  const std::size_t n = ascending.size();
  if (n == 0) throw PreconditionError("median of empty set");
  if (n % 2 == 1) return ascending[n / 2];
  return 0.5 * (ascending[n / 2 - 1] + ascending[n / 2]);
}

/// Turns clusters (positions in sorted order) into a Clustering over the
/// original weight order. Centroids are cluster medians; noise points join
/// the nearest centroid (the lower one on a tie).
inline Clustering finalize_centroids(const SortedWeights& sorted, const std::vector<std::vector<std::size_t>>& clusters,
                                     const std::vector<std::size_t>& noise) {
  std::size_t members = 0;
  for (const auto& c : clusters) members += c.size();
  if (members == 0) throw PreconditionError("finalize_centroids needs at least one non-empty cluster");

  const std::size_t n = sorted.size();
  Clustering out;
  out.assignment.assign(n, 0);
  std::vector<double> buf;
  for (const auto& c : clusters) {
    if (c.empty()) continue;
    buf.clear();
    for (auto p : c) buf.push_back(sorted.values[p]);
    std::sort(buf.begin(), buf.end());
    const auto id = static_cast<std::uint32_t>(out.centroids.size());
    out.centroids.push_back(sorted_median(buf));
    for (auto p : c) out.assignment[sorted.index[p]] = id;
  }

  // Noise points sit on centroid 0 until the centroids are sorted and equal
  // medians merged; then each moves to its nearest centroid.
  out.shadow.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) out.shadow[sorted.index[i]] = sorted.values[i];
  normalize_clustering(out);
  const auto& cs = out.centroids;
  for (auto p : noise) {
    const double w = sorted.values[p];
    auto it = std::lower_bound(cs.begin(), cs.end(), w);
    std::size_t j = static_cast<std::size_t>(it - cs.begin());
    if (j == cs.size() || (j > 0 && w - cs[j - 1] <= cs[j] - w)) --j;
    out.assignment[sorted.index[p]] = static_cast<std::uint32_t>(j);
  }
  out.recount();
  return out;
}

/// Cuts every cluster whose value span exceeds `max_span` into the fewest
/// equal-width slabs of at most that span. Empty slabs are dropped.
inline std::vector<std::vector<std::size_t>> split_wide_clusters(const SortedWeights& sorted,
                                                                 std::vector<std::vector<std::size_t>> clusters,
                                                                 double max_span) {
  if (!(max_span > 0)) throw PreconditionError("max_span must be positive");
  std::vector<std::vector<std::size_t>> out;
  for (auto& c : clusters) {
    if (c.empty()) continue;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (auto p : c) {
      lo = std::min(lo, sorted.values[p]);
      hi = std::max(hi, sorted.values[p]);
    }
    const double span = hi - lo;
    if (span <= max_span) {
      out.push_back(std::move(c));
      continue;
    }
    const auto slabs = static_cast<std::size_t>(std::ceil(span / max_span));
    const double width = span / static_cast<double>(slabs);
    std::vector<std::vector<std::size_t>> parts(slabs);
    for (auto p : c) {
      auto s = static_cast<std::size_t>((sorted.values[p] - lo) / width);
      parts[std::min(s, slabs - 1)].push_back(p);
    }
    for (auto& part : parts)
      if (!part.empty()) out.push_back(std::move(part));
  }
  return out;
}

/// Moves every noise point into the cluster whose median is nearest (the
/// lower one on a tie).
inline void attach_noise(const SortedWeights& sorted, std::vector<std::vector<std::size_t>>& clusters,
                         const std::vector<std::size_t>& noise) {
  std::vector<std::pair<double, std::size_t>> medians;
  std::vector<double> buf;
  for (std::size_t k = 0; k < clusters.size(); ++k) {
    if (clusters[k].empty()) continue;
    buf.clear();
    for (auto p : clusters[k]) buf.push_back(sorted.values[p]);
    std::sort(buf.begin(), buf.end());
    medians.emplace_back(sorted_median(buf), k);
  }
  if (medians.empty()) throw PreconditionError("attach_noise needs at least one non-empty cluster");
  std::sort(medians.begin(), medians.end());
  for (auto p : noise) {
    const double w = sorted.values[p];
    auto it = std::lower_bound(medians.begin(), medians.end(), std::pair{w, std::size_t{0}});
    auto j = static_cast<std::size_t>(it - medians.begin());
    if (j == medians.size() || (j > 0 && w - medians[j - 1].first <= medians[j].first - w)) --j;
    clusters[medians[j].second].push_back(p);
  }
}

/// Output of a full DBCI pass: the clustering plus the derived parameters.
struct DbciResult {
  Clustering clustering;
  DbciParams params;
  std::size_t density_clusters = 0;  // clusters found by the scan (excluding seeds)
  std::size_t noise_points = 0;
};

/// Full DBCI pass. Weights that do not straddle zero are centered on their
/// median for the scale estimate; a constant input yields one centroid.
inline DbciResult dbci_run(std::span<const double> weights, double eps_multiplier = 1.0) {
  if (weights.empty()) throw PreconditionError("dbci on empty weights");
  for (double w : weights)
    if (!std::isfinite(w)) throw DataError("non-finite weight");
  SortedWeights sorted(weights);
  DbciResult r;

  if (sorted.values.front() == sorted.values.back()) {
    r.clustering.centroids = {sorted.values.front()};
    r.clustering.assignment.assign(weights.size(), 0);
    r.clustering.counts = {weights.size()};
    r.clustering.shadow.assign(weights.begin(), weights.end());
    r.params.eps_multiplier = eps_multiplier;
    return r;
  }

  double sigma = 0.0;
  if (sorted.values.front() < 0 && sorted.values.back() > 0) {
    sigma = estimate_sigma(sorted.values);
  } else {
    const double med = sorted_median(sorted.values);
    std::vector<double> centered(sorted.values);
    for (auto& v : centered) v -= med;
    bool straddles = centered.front() < 0 && centered.back() > 0;
    sigma = straddles ? estimate_sigma(centered) : (sorted.values.back() - sorted.values.front()) / 2.0;
  }

  auto seeds = seed_extreme_clusters(sorted, sigma, eps_multiplier);
  std::vector<bool> visited(sorted.size(), false);
  for (auto p : seeds.low) visited[p] = true;
  for (auto p : seeds.high) visited[p] = true;

  auto scan = run_density_scan(sorted, visited, seeds.params);
  std::vector<std::vector<std::size_t>> clusters;
  clusters.push_back(seeds.low);
  if (!seeds.high.empty()) clusters.push_back(seeds.high);
  for (auto& c : scan.clusters) clusters.push_back(std::move(c));

  r.params = seeds.params;
  r.density_clusters = scan.clusters.size();
  r.noise_points = scan.noise.size();
  attach_noise(sorted, clusters, scan.noise);
  clusters = split_wide_clusters(sorted, std::move(clusters), eps_multiplier * sigma / 2.0);
  r.clustering = finalize_centroids(sorted, clusters, {});
  return r;
}

inline Clustering dbci_init(std::span<const double> weights, double eps_multiplier = 1.0) {
  return dbci_run(weights, eps_multiplier).clustering;
}

}  // namespace lcd
