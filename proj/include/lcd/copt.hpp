// SPDX-License-Identifier: Apache-2.0
//
// Outer optimization of the centroid count.
//
// Progressive phase: distillation rounds; whenever the step metric falls
// below theta times its value at the start of the current count and the
// reconstruction loss is within the accuracy bound, the two closest
// centroids merge and the survivors are re-centered.
//
// Speculative phase: once the progressive phase has gone `stability_window`
// rounds without a merge and the metric oscillates, DBCI is re-run with a
// wider eps and given p rounds to reach the accuracy bound; failure reverts
// to the pre-search clustering.

#pragma once

#include "lcd/dbci.hpp"
#include "lcd/distill.hpp"
#include "lcd/oracle.hpp"

#include <map>
#include <string>

namespace lcd {

struct Snapshot {
  Clustering clustering;
  double recon_loss = std::numeric_limits<double>::infinity();
};

struct OptState {
  Clustering clustering;
  std::vector<double> loss_history;  // step metric per main-line round
  std::size_t round = 0;             // == loss_history.size()
  Snapshot best;                     // lowest reconstruction loss observed
  std::size_t eps_schedule_pos = 0;
  std::size_t phase_start = 0;       // history index where the current centroid count began
  double reference_loss = 0.0;       // accuracy bound is Theta * reference_loss

  void record(double metric) {
    loss_history.push_back(metric);
    round = loss_history.size();
  }
};

/// True iff the latest metric is zero or below theta times the first metric
/// recorded at the current centroid count.
inline bool should_merge(const OptState& state, double theta) {
  if (state.loss_history.empty()) throw PreconditionError("should_merge needs a recorded metric");
  const double latest = state.loss_history.back();
  const std::size_t start = std::min(state.phase_start, state.loss_history.size() - 1);
  const double initial = state.loss_history[start];
  return latest == 0.0 || latest < theta * initial;
}

namespace detail {

/// Merges the pair (best, best + 1). The default new centroid is the
/// count-weighted mean; `literal` swaps the weights:
/// (n_b * C_a + n_a * C_b) / (n_a + n_b).
inline Clustering merge_pair(const Clustering& in, std::size_t best, bool literal) {
  const double ca = in.centroids[best], cb = in.centroids[best + 1];
  const auto na = static_cast<double>(in.counts[best]), nb = static_cast<double>(in.counts[best + 1]);
  double merged = literal ? (nb * ca + na * cb) / (na + nb) : (na * ca + nb * cb) / (na + nb);
  merged = std::clamp(merged, ca, cb);

  Clustering out;
  out.centroids.reserve(in.size() - 1);
  out.counts.reserve(in.size() - 1);
  for (std::size_t k = 0; k < in.size(); ++k) {
    if (k == best + 1) continue;
    out.centroids.push_back(k == best ? merged : in.centroids[k]);
    out.counts.push_back(k == best ? in.counts[k] + in.counts[k + 1] : in.counts[k]);
  }
  out.assignment = in.assignment;
  out.shadow = in.shadow;
  for (std::size_t i = 0; i < out.assignment.size(); ++i) {
    auto& a = out.assignment[i];
    if (a == best || a == best + 1) {
      a = static_cast<std::uint32_t>(best);
      out.shadow[i] = merged;
    } else if (a > best + 1) {
      --a;
    }
  }
  return out;
}

}  // namespace detail

/// Merges the adjacent pair with the smallest gap (ties: smaller combined
/// count, then leftmost).
inline Clustering merge_closest(const Clustering& in, bool literal = false) {
  if (in.size() < 2) throw PreconditionError("merge_closest needs at least two centroids");
  std::size_t best = 0;
  for (std::size_t k = 1; k + 1 < in.size(); ++k) {
    const double gap = in.centroids[k + 1] - in.centroids[k];
    const double best_gap = in.centroids[best + 1] - in.centroids[best];
    if (gap < best_gap ||
        (gap == best_gap && in.counts[k] + in.counts[k + 1] < in.counts[best] + in.counts[best + 1]))
      best = k;
  }
  return detail::merge_pair(in, best, literal);
}

/// Reassigns every weight to the centroid nearest its teacher value (the
/// lower one on a tie), then drops emptied clusters and re-anchors shadows.
inline void assign_nearest(Clustering& c, std::span<const double> weights) {
  if (weights.size() != c.assignment.size()) throw PreconditionError("assign_nearest size mismatch");
  const auto& cs = c.centroids;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = weights[i];
    auto j = static_cast<std::size_t>(std::lower_bound(cs.begin(), cs.end(), w) - cs.begin());
    if (j == cs.size() || (j > 0 && w - cs[j - 1] <= cs[j] - w)) --j;
    c.assignment[i] = static_cast<std::uint32_t>(j);
  }
  normalize_clustering(c);
  c.anchor_shadow();
}

inline constexpr std::size_t kRecenterIterations = 100;

/// Moves each centroid to the mean teacher value of its members and
/// reassigns every weight to its nearest centroid, until nothing changes or
/// `iters` passes have run.
inline void recenter(Clustering& c, std::span<const double> weights, std::size_t iters = kRecenterIterations) {
  assign_nearest(c, weights);
  for (std::size_t it = 0; it < iters; ++it) {
    std::vector<double> sum(c.size(), 0.0);
    for (std::size_t i = 0; i < weights.size(); ++i) sum[c.assignment[i]] += weights[i];
    auto before = c.centroids;
    for (std::size_t k = 0; k < sum.size(); ++k) c.centroids[k] = sum[k] / static_cast<double>(c.counts[k]);
    normalize_clustering(c);
    assign_nearest(c, weights);
    if (c.centroids == before) break;
  }
}

/// True iff the last `window` values are neither non-increasing nor
/// non-decreasing.
inline bool detect_nonmonotonic(std::span<const double> history, std::size_t window) {
  if (window < 2 || history.size() < window) return false;
  auto tail = history.subspan(history.size() - window);
  bool up = false, down = false;
  for (std::size_t i = 1; i < tail.size(); ++i) {
    if (tail[i] > tail[i - 1]) up = true;
    if (tail[i] < tail[i - 1]) down = true;
  }
  return up && down;
}

struct TrajectoryRow {
  std::size_t round = 0;
  std::size_t centroid_count = 0;
  double cluster_metric = 0.0;
  double recon_loss = 0.0;
  std::string phase;
};

/// Reconstruction loss of the 2^bits-centroid k-means clustering of the
/// teacher weights (fewer centroids when the weights have fewer distinct
/// values). This is the baseline the accuracy bound is relative to.
inline double reference_loss(const LayerBundle& b, int bits, std::uint64_t seed) {
  const std::size_t k = std::min<std::size_t>(std::size_t{1} << bits, oracle::distinct_count(b.weights));
  return output_reconstruction_loss(b, oracle::kmeans(b.weights, k, 100, seed));
}

enum class SpeculativeOutcome { Accepted, Reverted };

struct SpeculativeResult {
  SpeculativeOutcome outcome = SpeculativeOutcome::Reverted;
  Clustering clustering;  // accepted clustering, or the untouched input on revert
  double recon_loss = 0.0;
  std::size_t rounds = 0;
  double multiplier = 0.0;
};

/// Tries the remaining eps multipliers in order: DBCI with eps scaled by the
/// multiplier, up to p rounds, accepted once the reconstruction loss is within
/// Theta * state.reference_loss. Advances state.eps_schedule_pos per attempt.
/// `round_budget` caps the total rounds spent; `on_round` sees every round.
template <typename OnRound>
SpeculativeResult speculative_search(Distiller& d, OptState& state, const HyperParams& hyper,
                                     std::size_t round_budget, OnRound&& on_round) {
  SpeculativeResult res;
  res.clustering = state.clustering;
  const double bound = hyper.Theta * state.reference_loss;
  while (state.eps_schedule_pos < hyper.eps_multipliers.size() && res.rounds < round_budget) {
    const double m = hyper.eps_multipliers[state.eps_schedule_pos++];
    Clustering trial = dbci_init(d.bundle().weights, m);
    double loss = d.recon_loss(trial);
    for (std::size_t r = 0; r < hyper.p && res.rounds < round_budget && loss > bound; ++r) {
      const auto st = d.round(trial);
      ++res.rounds;
      loss = st.recon_loss;
      on_round(trial, st);
    }
    if (loss <= bound) {
      res.outcome = SpeculativeOutcome::Accepted;
      res.clustering = std::move(trial);
      res.recon_loss = loss;
      res.multiplier = m;
      return res;
    }
  }
  res.recon_loss = d.recon_loss(res.clustering);
  return res;
}

inline SpeculativeResult speculative_search(Distiller& d, OptState& state, const HyperParams& hyper) {
  return speculative_search(d, state, hyper, std::numeric_limits<std::size_t>::max(),
                            [](const Clustering&, const RoundStats&) {});
}

struct LayerReport {
  Clustering clustering;
  Clustering initial;  // DBCI output
  DbciParams dbci_params;
  std::vector<TrajectoryRow> trajectory;
  double reference_loss = 0.0;
  double recon_loss = 0.0;
  double cluster_metric = 0.0;  // teacher-relative Hessian-weighted L1 error of the result
  std::size_t rounds = 0;
  bool met_bound = false;
};

/// Full count optimization on one (already smoothed) bundle.
inline LayerReport optimize_layer(const LayerBundle& bundle, const HyperParams& hyper) {
  hyper.validate();
  bundle.validate();
  LayerReport rep;
  auto dbci = dbci_run(bundle.weights, 1.0);
  rep.initial = dbci.clustering;
  rep.dbci_params = dbci.params;
  rep.reference_loss = reference_loss(bundle, hyper.reference_bits, hyper.seed);

  Distiller d(bundle, compute_hessian_diag(bundle), hyper.eta, hyper.literal_update, hyper.backtracks);
  const double bound = hyper.Theta * rep.reference_loss;

  OptState state;
  state.clustering = rep.initial;
  state.reference_loss = rep.reference_loss;
  state.best = {state.clustering, d.recon_loss(state.clustering)};

  // Lowest-loss clustering seen at each centroid count on the main line.
  std::map<std::size_t, Snapshot> per_count;
  auto offer = [&](const Clustering& c, double loss) {
    auto& s = per_count[c.size()];
    if (loss < s.recon_loss) s = {c, loss};
    if (loss < state.best.recon_loss) state.best = {c, loss};
  };
  offer(state.clustering, state.best.recon_loss);
  rep.trajectory.push_back({0, state.clustering.size(), d.teacher_metric(state.clustering), state.best.recon_loss,
                            "init"});

  std::size_t total = 0;
  std::size_t since_merge = 0;
  auto push_row = [&](const Clustering& c, const RoundStats& st, const char* phase) {
    rep.trajectory.push_back({total, c.size(), st.monitor, st.recon_loss, phase});
  };

  while (total < hyper.T) {
    const std::size_t count_before = state.clustering.size();
    const auto st = d.round(state.clustering);
    ++total;
    if (state.clustering.size() != count_before) state.phase_start = state.loss_history.size();
    state.record(st.monitor);
    offer(state.clustering, st.recon_loss);

    // Merging is only tried while the current count still meets the bound.
    if (state.clustering.size() >= 2 && st.recon_loss <= bound && should_merge(state, hyper.theta)) {
      push_row(state.clustering, st, "merge");
      state.clustering = merge_closest(state.clustering, hyper.literal_merge);
      recenter(state.clustering, bundle.weights);
      state.phase_start = state.loss_history.size();
      since_merge = 0;
      continue;
    }
    push_row(state.clustering, st, "progressive");

    if (++since_merge < hyper.stability_window) continue;
    if (detect_nonmonotonic(state.loss_history, hyper.plateau_window)) {
      if (state.eps_schedule_pos >= hyper.eps_multipliers.size()) break;
      auto res = speculative_search(d, state, hyper, hyper.T - total, [&](const Clustering& c, const RoundStats& s) {
        ++total;
        push_row(c, s, "speculative");
      });
      if (res.outcome == SpeculativeOutcome::Accepted) {
        state.clustering = std::move(res.clustering);
        offer(state.clustering, res.recon_loss);
        rep.trajectory.push_back({total, state.clustering.size(), 0.0, res.recon_loss, "accept"});
      } else {
        rep.trajectory.push_back({total, state.clustering.size(), 0.0, res.recon_loss, "revert"});
      }
      state.phase_start = state.loss_history.size();
      since_merge = 0;
      continue;
    }
    // Monotone: stop once the metric has gone flat.
    auto tail = std::span<const double>(state.loss_history).last(hyper.plateau_window);
    const auto [lo, hi] = std::minmax_element(tail.begin(), tail.end());
    if (*hi - *lo <= 1e-12 * std::max(1.0, std::abs(*hi))) break;
  }
  rep.rounds = total;

  // Fewest centroids within the bound, else the DBCI initialization.
  const Snapshot* pick = nullptr;
  for (const auto& [k, s] : per_count) {
    if (s.recon_loss <= bound) {
      pick = &s;
      break;
    }
  }
  if (pick) {
    rep.clustering = pick->clustering;
    rep.recon_loss = pick->recon_loss;
    rep.met_bound = true;
  } else {
    rep.clustering = rep.initial;
    rep.recon_loss = d.recon_loss(rep.initial);
  }
  rep.clustering.anchor_shadow();
  rep.cluster_metric = d.teacher_metric(rep.clustering);
  return rep;
}

namespace detail {

// Splits the cluster with the largest squared error about its centroid at
// its median. Returns false when no cluster has two distinct members.
inline bool split_worst_cluster(Clustering& c, std::span<const double> weights) {
  std::vector<double> sse(c.size(), 0.0);
  std::vector<double> lo(c.size(), std::numeric_limits<double>::infinity());
  std::vector<double> hi(c.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const auto a = c.assignment[i];
    const double e = weights[i] - c.centroids[a];
    sse[a] += e * e;
    lo[a] = std::min(lo[a], weights[i]);
    hi[a] = std::max(hi[a], weights[i]);
  }
  std::size_t worst = c.size();
  for (std::size_t k = 0; k < c.size(); ++k)
    if (hi[k] > lo[k] && (worst == c.size() || sse[k] > sse[worst])) worst = k;
  if (worst == c.size()) return false;

  std::vector<double> members;
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (c.assignment[i] == worst) members.push_back(weights[i]);
  std::sort(members.begin(), members.end());
  // Split between distinct values nearest the middle.
  std::size_t cut = members.size() / 2;
  while (cut < members.size() && members[cut] == members[cut - 1]) ++cut;
  if (cut == members.size()) {
    cut = members.size() / 2;
    while (members[cut] == members[cut - 1]) --cut;
  }
  const std::span<const double> left(members.data(), cut), right(members.data() + cut, members.size() - cut);
  const double threshold = members[cut - 1];
  const double cl = sorted_median(left), cr = sorted_median(right);

  const auto new_id = static_cast<std::uint32_t>(c.size());
  c.centroids[worst] = cl;
  c.centroids.push_back(cr);
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (c.assignment[i] == worst && weights[i] > threshold) c.assignment[i] = new_id;
  normalize_clustering(c);
  return true;
}

/// Adjacent pair whose merge adds the least squared error,
/// n_a n_b / (n_a + n_b) * (C_a - C_b)^2.
inline std::size_t cheapest_pair(const Clustering& c) {
  std::size_t best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < c.size(); ++k) {
    const auto na = static_cast<double>(c.counts[k]), nb = static_cast<double>(c.counts[k + 1]);
    const double gap = c.centroids[k + 1] - c.centroids[k];
    const double cost = na * nb / (na + nb) * gap * gap;
    if (cost < best_cost) {
      best_cost = cost;
      best = k;
    }
  }
  return best;
}

}  // namespace detail

inline constexpr std::size_t kMaxSwaps = 64;

/// Distills at a fixed centroid count, merging disabled. DBCI, then merges or
/// median splits until `k` centroids remain, then distillation rounds until a
/// round leaves the reconstruction unchanged. A converged clustering is then
/// perturbed by merging its cheapest pair and splitting its worst cluster;
/// the perturbed copy is distilled and kept when its reconstruction loss is
/// lower. `rounds` caps the distillation rounds over all attempts.
inline Clustering fit_fixed_count(const LayerBundle& bundle, std::size_t k, const HyperParams& hyper,
                                  std::size_t rounds) {
  if (k < 1) throw PreconditionError("fit_fixed_count needs k >= 1");
  Clustering c = dbci_init(bundle.weights, 1.0);
  while (c.size() > k) {
    c = merge_closest(c, hyper.literal_merge);
    recenter(c, bundle.weights);
  }
  for (std::size_t tries = 0; c.size() < k && tries < 4 * k; ++tries) {
    if (!detail::split_worst_cluster(c, bundle.weights)) break;
    recenter(c, bundle.weights);
  }
  c.anchor_shadow();

  Distiller d(bundle, compute_hessian_diag(bundle), hyper.eta, hyper.literal_update, hyper.backtracks);
  std::size_t used = 0;
  auto descend = [&](Clustering& x) {
    while (used < rounds) {
      ++used;
      if (d.round(x).monitor == 0.0) break;
    }
  };
  descend(c);
  double loss = d.recon_loss(c);
  for (std::size_t swap = 0; swap < kMaxSwaps && used < rounds && c.size() == k && k >= 2; ++swap) {
    Clustering t = detail::merge_pair(c, detail::cheapest_pair(c), hyper.literal_merge);
    normalize_clustering(t);
    if (!detail::split_worst_cluster(t, bundle.weights)) break;
    recenter(t, bundle.weights);
    if (t.size() != k) break;
    descend(t);
    const double t_loss = d.recon_loss(t);
    if (!(t_loss < loss)) break;
    c = std::move(t);
    loss = t_loss;
  }
  return c;
}

}  // namespace lcd
