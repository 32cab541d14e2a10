// SPDX-License-Identifier: Apache-2.0
//
// One distillation round over a clustering:
//   1. Hessian-preconditioned step of every weight (distill_step)
//   2. one-hop reclassification across half-gap boundaries (reclassify)
//   3. centroid offsets from the members' updated positions (update_centroids)

#pragma once

#include "lcd/hessian.hpp"

namespace lcd {

/// Gradient of S(W') = ||X W'^T - X W^T||_F^2 with respect to W', given the
/// residual E = X (W' - W)^T. Returns G = 2 E^T X, rows x cols.
inline RowMatrix reconstruction_gradient(const LayerBundle& b, const RowMatrix& residual) {
  ConstRowMap x(b.calib.data(), static_cast<Eigen::Index>(b.n_samples()), static_cast<Eigen::Index>(b.cols));
  RowMatrix g = 2.0 * residual.transpose() * x;
  return g;
}

inline RowMatrix reconstruction_gradient(const LayerBundle& b, std::span<const double> reconstructed) {
  return reconstruction_gradient(b, output_residual(b, reconstructed));
}

namespace detail {

inline std::vector<double> preconditioned_step(const RowMatrix& g, const HessianDiag& h, double eta) {
  const auto rows = static_cast<std::size_t>(g.rows());
  const auto cols = static_cast<std::size_t>(g.cols());
  std::vector<double> dw(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      dw[r * cols + c] = -eta * g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) / h.diag[c];
  return dw;
}

}  // namespace detail

/// Per-weight update dw = -eta * G / diag(H), with G evaluated at the
/// clustering's reconstructed weights. Adds dw to the shadow weights and
/// leaves assignments untouched.
inline std::vector<double> distill_step(const LayerBundle& b, Clustering& c, const HessianDiag& h, double eta) {
  if (c.assignment.size() != b.weights.size() || h.diag.size() != b.cols)
    throw PreconditionError("distill_step shape mismatch");
  auto dw = detail::preconditioned_step(reconstruction_gradient(b, c.reconstruct()), h, eta);
  if (c.shadow.size() != dw.size()) c.shadow.assign(b.weights.begin(), b.weights.end());
  for (std::size_t i = 0; i < dw.size(); ++i) c.shadow[i] += dw[i];
  return dw;
}

struct BoundaryDistance {
  double left;
  double right;
};

/// Half the gap to each neighbouring centroid; +inf on a missing side.
inline std::vector<BoundaryDistance> boundary_distances(std::span<const double> centroids) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<BoundaryDistance> d(centroids.size(), {inf, inf});
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    if (k > 0) d[k].left = (centroids[k] - centroids[k - 1]) / 2.0;
    if (k + 1 < centroids.size()) d[k].right = (centroids[k + 1] - centroids[k]) / 2.0;
  }
  return d;
}

struct Move {
  std::size_t index;
  std::uint32_t from;
  std::uint32_t to;
};

/// Moves each weight at most one cluster: left when dw < -d_left, right when
/// dw > d_right. Counts follow; centroid values do not change.
inline std::vector<Move> reclassify(Clustering& c, std::span<const double> dw) {
  if (dw.size() != c.assignment.size()) throw PreconditionError("reclassify size mismatch");
  const auto bounds = boundary_distances(c.centroids);
  std::vector<Move> moves;
  for (std::size_t i = 0; i < dw.size(); ++i) {
    const std::uint32_t a = c.assignment[i];
    std::uint32_t to = a;
    if (dw[i] < -bounds[a].left)
      to = a - 1;
    else if (dw[i] > bounds[a].right)
      to = a + 1;
    if (to != a) {
      moves.push_back({i, a, to});
      c.assignment[i] = to;
      --c.counts[a];
      ++c.counts[to];
    }
  }
  return moves;
}

/// Offsets every centroid by the summed displacement of its members: dw for
/// weights that stayed, (C_from - C_i) + dw for weights that moved in. The sum
/// is divided by the member count unless `literal` is set. Empty clusters are
/// dropped, ties merged, and shadows re-anchored to the new centroids.
inline void update_centroids(Clustering& c, std::span<const double> dw, std::span<const Move> moves,
                             bool literal = false) {
  if (dw.size() != c.assignment.size()) throw PreconditionError("update_centroids size mismatch");
  const std::size_t k = c.centroids.size();
  std::vector<double> offset(k, 0.0);
  for (std::size_t i = 0; i < dw.size(); ++i) offset[c.assignment[i]] += dw[i];
  for (const auto& m : moves) offset[m.to] += c.centroids[m.from] - c.centroids[m.to];
  for (std::size_t j = 0; j < k; ++j) {
    if (c.counts[j] == 0) continue;
    c.centroids[j] += literal ? offset[j] : offset[j] / static_cast<double>(c.counts[j]);
  }
  normalize_clustering(c);
  c.anchor_shadow();
}

struct RoundStats {
  std::size_t moves = 0;
  double monitor = 0.0;     // Hessian-weighted L1 change of the reconstructed weights
  double recon_loss = 0.0;  // after the round
  double eta = 0.0;         // step size applied; 0 when rejected
};

/// Runs distillation rounds against one bundle, caching X W^T and the last
/// residual so an accepted round costs two dense products.
///
/// A round tries eta, eta/2, ... (up to `backtracks` halvings) and keeps the
/// first step that does not raise the reconstruction loss. When none does,
/// the clustering is left untouched and the round reports a zero step.
class Distiller {
 public:
  Distiller(const LayerBundle& bundle, HessianDiag h, double eta, bool literal_update = false,
            std::size_t backtracks = 8)
      : bundle_(bundle), h_(std::move(h)), eta_(eta), literal_(literal_update), backtracks_(backtracks) {
    ConstRowMap x(bundle_.calib.data(), n(), cols());
    ConstRowMap w(bundle_.weights.data(), rows(), cols());
    teacher_out_ = x * w.transpose();
  }

  const HessianDiag& hessian() const { return h_; }
  const LayerBundle& bundle() const { return bundle_; }

  double recon_loss(const Clustering& c) {
    residual(c);
    return cached_loss_;
  }

  /// Hessian-weighted L1 clustering error of `c` against the teacher.
  double teacher_metric(const Clustering& c) const { return clustering_loss(bundle_, c, h_); }

  RoundStats round(Clustering& c) {
    RoundStats st;
    residual(c);
    const double base = cached_loss_;
    st.recon_loss = base;
    if (stuck_ && same_as_cache(c, stuck_centroids_, stuck_assignment_)) return st;

    const RowMatrix g = reconstruction_gradient(bundle_, cached_e_);
    double eta = eta_;
    for (std::size_t t = 0; t <= backtracks_; ++t, eta /= 2.0) {
      Clustering trial = c;
      auto dw = detail::preconditioned_step(g, h_, eta);
      for (std::size_t i = 0; i < dw.size(); ++i) trial.shadow[i] += dw[i];
      auto moves = reclassify(trial, dw);
      update_centroids(trial, dw, moves, literal_);
      if (recon_loss(trial) <= base) {
        for (std::size_t i = 0; i < dw.size(); ++i)
          st.monitor += h_.diag[i % bundle_.cols] * std::abs(trial.reconstructed(i) - c.reconstructed(i));
        st.monitor /= 2.0;
        st.moves = moves.size();
        st.recon_loss = cached_loss_;
        st.eta = eta;
        c = std::move(trial);
        stuck_ = false;
        return st;
      }
    }
    stuck_ = true;
    stuck_centroids_ = c.centroids;
    stuck_assignment_ = c.assignment;
    return st;
  }

 private:
  Eigen::Index n() const { return static_cast<Eigen::Index>(bundle_.n_samples()); }
  Eigen::Index rows() const { return static_cast<Eigen::Index>(bundle_.rows); }
  Eigen::Index cols() const { return static_cast<Eigen::Index>(bundle_.cols); }

  bool same_as_cache(const Clustering& c, const std::vector<double>& centroids,
                     const std::vector<std::uint32_t>& assignment) const {
    return c.centroids == centroids && c.assignment == assignment;
  }

  const RowMatrix& residual(const Clustering& c) {
    if (cache_valid_ && same_as_cache(c, cached_centroids_, cached_assignment_)) return cached_e_;
    const auto wq_vec = c.reconstruct();
    ConstRowMap x(bundle_.calib.data(), n(), cols());
    ConstRowMap wq(wq_vec.data(), rows(), cols());
    cached_e_.noalias() = x * wq.transpose();
    cached_e_ -= teacher_out_;
    cached_loss_ = cached_e_.squaredNorm() / static_cast<double>(bundle_.n_samples() * bundle_.rows);
    cached_centroids_ = c.centroids;
    cached_assignment_ = c.assignment;
    cache_valid_ = true;
    return cached_e_;
  }

  const LayerBundle& bundle_;
  HessianDiag h_;
  double eta_;
  bool literal_;
  std::size_t backtracks_;
  RowMatrix teacher_out_;
  RowMatrix cached_e_;
  double cached_loss_ = 0.0;
  std::vector<double> cached_centroids_;
  std::vector<std::uint32_t> cached_assignment_;
  bool cache_valid_ = false;
  bool stuck_ = false;
  std::vector<double> stuck_centroids_;
  std::vector<std::uint32_t> stuck_assignment_;
};

}  // namespace lcd
