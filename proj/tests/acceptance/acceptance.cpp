// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include "support.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace {

using namespace lcd;
using testing::Rng;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void run(int id, const char* title, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s %2d %s (%s; %.1fs)\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), seconds_since(t0));
  std::fflush(stdout);
}

std::string format(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

LayerBundle identity_calib_bundle(std::vector<double> weights, std::size_t cols) {
  LayerBundle b;
  b.cols = cols;
  b.rows = weights.size() / cols;
  b.weights = std::move(weights);
  b.calib.assign(cols * cols, 0.0);
  for (std::size_t i = 0; i < cols; ++i) b.calib[i * cols + i] = 1.0;
  return b;
}

// 1. Sixteen clusters against four uniform bits, and fixed-count distillation
//    against k-means at the same count.
Outcome clustering_vs_quantization() {
  const auto t0 = Clock::now();
  double worst = 0;
  bool ok = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const auto b = identity_calib_bundle(testing::normal_vector(rng, 4096), 64);
    const double km = oracle::clustering_mse(b.weights, oracle::kmeans(b.weights, 16, 100, seed));
    const double uni = oracle::mse(b.weights, oracle::uniform_quantize(b.weights, 4));
    HyperParams h;
    h.seed = seed;
    const auto c = fit_fixed_count(b, 16, h, 200);
    const double lcd = oracle::clustering_mse(b.weights, c);
    ok = ok && km < uni && c.size() == 16 && lcd <= 1.1 * km;
    worst = std::max(worst, lcd / km);
  }
  const double t = seconds_since(t0);
  return {ok && t < 60, format("worst lcd/kmeans %.4f <= 1.1, kmeans < uniform on all seeds, %.1fs < 60s", worst, t)};
}

// 2. LUT kernel against the reference forward pass.
Outcome lut_equivalence() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int b = trial % 2 ? 4 : 8;
    const auto rows = testing::uniform_size(rng, 1, 256), cols = testing::uniform_size(rng, 1, 256);
    const auto k = testing::uniform_size(rng, 1, 16);
    auto x = testing::normal_vector(rng, cols);
    x[testing::uniform_size(rng, 0, cols - 1)] *= 30.0;
    const double s_m = std::exp(std::uniform_real_distribution<double>(-2.0, 2.0)(rng));
    double m = 0;
    for (double v : x) m = std::max(m, std::abs(v / s_m));
    const auto layer = testing::random_layer(rng, rows, cols, k, b, s_m, m / lcd::qmax(b));
    const auto lut = build_bucket_lut(layer.centroids, b);
    const auto y = lut_forward(x, layer, lut);
    const auto ref = reference_forward(x, layer);
    worst = std::max(worst, max_relative_deviation(std::span<const float>(y), std::span<const float>(ref)));
  }

  bool exact = true;
  for (int trial = 0; trial < 50; ++trial) {
    CompressedLayer layer;
    layer.rows = static_cast<std::uint32_t>(testing::uniform_size(rng, 1, 64));
    layer.cols = static_cast<std::uint32_t>(testing::uniform_size(rng, 1, 256));
    layer.b = trial % 2 ? 4 : 8;
    const auto k = testing::uniform_size(rng, 1, 16);
    std::vector<int> levels;
    for (int v = -8; v <= 8; ++v) levels.push_back(v);
    std::shuffle(levels.begin(), levels.end(), rng);
    levels.resize(k);
    std::sort(levels.begin(), levels.end());
    layer.centroids.assign(levels.begin(), levels.end());
    std::vector<std::uint32_t> idx(layer.weight_count());
    for (auto& v : idx) v = static_cast<std::uint32_t>(testing::uniform_size(rng, 0, k - 1));
    layer.packed_indices = pack_indices(idx, layer.index_width());
    layer.s_m = 1.0f;
    layer.s_q = 1.0f;
    const auto p = QuantParams::of(layer);
    std::vector<double> x(layer.cols);
    for (auto& v : x) v = static_cast<double>(testing::uniform_size(rng, 0, p.qmax() - p.qmin())) + p.qmin();
    const auto lut = build_bucket_lut(layer.centroids, layer.b);
    const auto y = lut_forward(x, layer, lut);
    const auto ref = reference_forward(x, layer);
    for (std::size_t r = 0; r < layer.rows; ++r) {
      std::int64_t dot = 0;
      for (std::size_t j = 0; j < layer.cols; ++j)
        dot += levels[idx[r * layer.cols + j]] * static_cast<std::int64_t>(x[j]);
      exact = exact && y[r] == ref[r] && static_cast<double>(y[r]) == static_cast<double>(dot);
    }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-5 && exact && t < 120,
          format("max rel dev %.3g <= 1e-5 over 200 layers, integer cases %s, %.1fs < 120s", worst,
                 exact ? "bit-exact" : "NOT bit-exact", t)};
}

// 3. Analytic gradient of the output loss against central differences.
Outcome gradient_check() {
  Rng rng(3);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto rows = testing::uniform_size(rng, 1, 16), cols = testing::uniform_size(rng, 1, 16);
    const auto b = testing::random_bundle(rng, rows, cols, testing::uniform_size(rng, 1, 32));
    auto c = testing::random_clustering(rng, b.weights, testing::uniform_size(rng, 1, 8));
    const auto h = compute_hessian_diag(b);
    const double eta = 0.5;
    const auto wq = c.reconstruct();
    const auto dw = distill_step(b, c, h, eta);

    const double scale = static_cast<double>(b.n_samples() * b.rows);
    std::vector<double> analytic(dw.size()), numeric(dw.size());
    double gmax = 0;
    for (std::size_t i = 0; i < dw.size(); ++i) {
      analytic[i] = -dw[i] * h.diag[i % cols] / eta;
      auto plus = wq, minus = wq;
      const double step = 1e-4;
      plus[i] += step;
      minus[i] -= step;
      numeric[i] = (output_reconstruction_loss(b, plus) - output_reconstruction_loss(b, minus)) * scale / (2 * step);
      gmax = std::max(gmax, std::abs(numeric[i]));
    }
    for (std::size_t i = 0; i < dw.size(); ++i) {
      const double den = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-9 * gmax, 1e-12});
      worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / den);
    }
  }
  return {worst <= 1e-3, format("worst per-entry relative error %.3g <= 1e-3 over 20 layers", worst)};
}

// 4. Linear density scan against quadratic DBSCAN, plus centroid counts on
//    Gaussian weights.
Outcome dbscan_equivalence() {
  Rng rng(4);
  int mismatches = 0;
  auto canonical = [](std::vector<std::vector<std::size_t>> cs) {
    for (auto& c : cs) std::sort(c.begin(), c.end());
    std::sort(cs.begin(), cs.end());
    return cs;
  };
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = testing::uniform_size(rng, 1, 2000);
    auto w = testing::normal_vector(rng, n);
    if (trial % 4 == 0)
      for (auto& x : w) x = std::round(x * 16.0) / 16.0;
    SortedWeights s(w);
    std::vector<bool> visited(n, false);
    DbciParams params;
    if (trial % 2 == 0 && s.values.front() < s.values.back()) {
      // The parameters and seed mask DBCI itself would use.
      const auto seeds = seed_extreme_clusters(s, estimate_sigma(s.values));
      for (auto p : seeds.low) visited[p] = true;
      for (auto p : seeds.high) visited[p] = true;
      params = seeds.params;
    } else {
      for (std::size_t i = 0; i < n; ++i) visited[i] = testing::uniform_size(rng, 0, 9) == 0;
      params = {1.0, testing::uniform_size(rng, 1, 20), std::uniform_real_distribution<double>(1e-3, 0.2)(rng), 1.0};
    }
    const auto scan = run_density_scan(s, visited, params);
    std::vector<double> pts;
    std::vector<std::size_t> where;
    for (std::size_t i = 0; i < n; ++i)
      if (!visited[i]) {
        pts.push_back(s.values[i]);
        where.push_back(i);
      }
    const auto ref = oracle::dbscan_quadratic(pts, params.eps, params.min_pts);
    std::vector<std::vector<std::size_t>> ref_clusters;
    for (const auto& c : ref.clusters) {
      ref_clusters.emplace_back();
      for (auto p : c) ref_clusters.back().push_back(where[p]);
    }
    std::vector<std::size_t> ref_noise;
    for (auto p : ref.noise) ref_noise.push_back(where[p]);
    std::sort(ref_noise.begin(), ref_noise.end());
    auto noise = scan.noise;
    std::sort(noise.begin(), noise.end());
    if (canonical(scan.clusters) != canonical(ref_clusters) || noise != ref_noise) ++mismatches;
  }

  std::string counts;
  for (std::size_t n : {4096u, 65536u, 1048576u}) {
    Rng g(n);
    const auto k = dbci_init(testing::normal_vector(g, n)).size();
    counts += format(" n=%zu:K=%zu", n, k);
    if (k < 10 || k > 30) std::printf("WARN  4 DBCI centroid count %zu for n=%zu outside [10, 30]\n", k, n);
  }
  return {mismatches == 0, format("%d/50 scans differ from quadratic DBSCAN; Gaussian DBCI counts%s", mismatches,
                                  counts.c_str())};
}

// 5. Exactly representable layers converge to their distinct values.
Outcome exact_representability() {
  bool ok = true;
  std::string detail;
  for (std::size_t k : {2u, 4u, 8u}) {
    std::size_t max_rounds = 0;
    double max_metric = 0;
    bool all_k = true;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      GenConfig g;
      g.kind = GenKind::KDistinct;
      g.k = k;
      g.seed = seed;
      HyperParams h;
      h.T = 200;
      const auto r = optimize_layer(generate_bundle(g), h);
      all_k = all_k && r.clustering.size() == k;
      max_metric = std::max(max_metric, r.cluster_metric);
      max_rounds = std::max(max_rounds, r.rounds);
    }
    ok = ok && all_k && max_metric < 1e-9 && max_rounds <= 200;
    detail += format("%sk=%zu: K %s, metric %.3g, rounds %zu", detail.empty() ? "" : "; ", k,
                     all_k ? "exact" : "WRONG", max_metric, max_rounds);
  }
  return {ok, detail};
}

// 6. Default hyper-parameters on a 1024 x 1024 Gaussian layer.
Outcome centroid_count_target() {
  const auto t0 = Clock::now();
  Rng rng(6);
  const auto raw = testing::random_bundle(rng, 1024, 1024, 128);
  const auto r = compress_bundle(raw, HyperParams{}, "toy");
  const auto smoothed = apply_smoothing(raw, r.layer.s_m);
  const auto wq = r.layer.reconstruct();
  const double lcd = output_reconstruction_loss(smoothed, std::vector<double>(wq.begin(), wq.end()));
  const double km = output_reconstruction_loss(smoothed, oracle::kmeans(smoothed.weights, 16, 100, 1));
  const std::size_t k = r.layer.centroids.size();
  const double t = seconds_since(t0);
  return {k <= 10 && lcd <= 1.05 * km && t < 600,
          format("K=%zu <= 10, recon %.5g <= 1.05 x k-means-16 %.5g (ratio %.4f), %zu rounds, %.0fs < 600s", k, lcd,
                 km, lcd / km, r.report.rounds, t)};
}

// 7. Adaptive smoothing beats no smoothing on outlier activations.
Outcome smoothing_direction() {
  bool better = true;
  double worst_ratio = 0, worst_dev = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    GenConfig g;
    g.kind = GenKind::Outliers;
    g.rows = 64;
    g.cols = 256;
    g.samples = 64;
    g.seed = seed;
    const auto b = generate_bundle(g);
    const auto best = adaptive_smoothing(b.calib, 8);
    const double base = smoothing_mse(b.calib, 8, 1.0);
    better = better && best.mse < base;
    worst_ratio = std::max(worst_ratio, best.mse / base);

    const auto s = apply_smoothing(b, best.s_m);
    auto as_float = [](const std::vector<double>& v) { return std::vector<float>(v.begin(), v.end()); };
    const auto w0 = as_float(b.weights), w1 = as_float(s.weights);
    const auto x0 = as_float(b.calib), x1 = as_float(s.calib);
    std::vector<float> y0(b.rows), y1(b.rows);
    for (std::size_t i = 0; i < b.n_samples(); ++i) {
      dense_forward(w0, b.rows, b.cols, std::span<const float>(x0).subspan(i * b.cols, b.cols), y0);
      dense_forward(w1, b.rows, b.cols, std::span<const float>(x1).subspan(i * b.cols, b.cols), y1);
      worst_dev = std::max(worst_dev, max_relative_deviation(std::span<const float>(y1), std::span<const float>(y0)));
    }
  }
  return {better && worst_dev <= 1e-5,
          format("adaptive < s_m=1 on %s seeds (worst mse ratio %.3f), output deviation %.3g <= 1e-5",
                 better ? "all 10" : "NOT all", worst_ratio, worst_dev)};
}

// 8. Merge formulas.
Outcome merge_formulas() {
  auto pair = [](double ca, std::size_t na, double cb, std::size_t nb) {
    Clustering c;
    c.centroids = {ca, cb};
    c.assignment.assign(na, 0);
    c.assignment.insert(c.assignment.end(), nb, 1);
    c.recount();
    c.anchor_shadow();
    return c;
  };
  const double literal = merge_closest(pair(1.0, 3, 2.0, 1), true).centroids[0];
  const double weighted = merge_closest(pair(1.0, 3, 2.0, 1), false).centroids[0];
  const double mid_l = merge_closest(pair(1.0, 2, 2.0, 2), true).centroids[0];
  const double mid_d = merge_closest(pair(1.0, 2, 2.0, 2), false).centroids[0];
  return {literal == 1.75 && weighted == 1.25 && mid_l == 1.5 && mid_d == 1.5,
          format("literal %.17g, mass-weighted %.17g, equal counts %.17g / %.17g", literal, weighted, mid_l, mid_d)};
}

// 9. Benchmark reporting at 4096 x 4096.
Outcome bench_reporting() {
  BenchConfig cfg;
  cfg.rows = cfg.cols = 4096;
  cfg.centroids = 8;
  cfg.bits = 8;
  cfg.iters = 5;
  std::ostringstream out;
  const int rc = cmd_bench(cfg, out);
  std::stringstream ss(out.str());
  std::string line, header;
  std::getline(ss, header);
  double ratio = -1;
  while (std::getline(ss, line))
    if (line.rfind("lut,", 0) == 0) ratio = std::stod(line.substr(line.rfind(',') + 1));
  return {rc == 0 && header == "kernel,ns_per_matmul,ratio_vs_naive" && ratio > 0,
          format("lut ratio vs naive %.3f > 0", ratio)};
}

// 10. Two compress runs produce identical bytes.
Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "lcd_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::string manifest;
  const std::pair<GenKind, const char*> layers[] = {
      {GenKind::Gaussian, "gauss"}, {GenKind::Outliers, "outliers"}, {GenKind::KDistinct, "kdistinct"}};
  for (const auto& [kind, name] : layers) {
    GenConfig g;
    g.kind = kind;
    g.rows = 64;
    g.cols = 128;
    g.seed = 10;
    cmd_gen(g, dir / (std::string(name) + ".lbf"));
    manifest += std::string(name) + ".lbf\n";
  }
  std::ofstream(dir / "manifest.txt") << manifest;
  Config cfg;
  cfg.hyper.seed = 10;
  std::ostringstream o1, o2, err;
  const int rc1 = cmd_compress(dir / "manifest.txt", dir / "run1", cfg, o1, err);
  const int rc2 = cmd_compress(dir / "manifest.txt", dir / "run2", cfg, o2, err);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  std::size_t files = 0, differ = 0;
  for (const auto& e : fs::directory_iterator(dir / "run1")) {
    ++files;
    const auto other = dir / "run2" / e.path().filename();
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) ++differ;
  }
  const std::size_t expected = 2 * std::size(layers) + 1;
  fs::remove_all(dir);
  return {rc1 == 0 && rc2 == 0 && files == expected && differ == 0 && o1.str() == o2.str(),
          format("%zu files compared (.lcl, trajectories, summary), %zu differ", files, differ)};
}

}  // namespace

int main() {
  run(1, "clustering vs uniform quantization", clustering_vs_quantization);
  run(2, "LUT kernel equivalence", lut_equivalence);
  run(3, "gradient check", gradient_check);
  run(4, "density scan equivalence", dbscan_equivalence);
  run(5, "exact representability", exact_representability);
  run(6, "centroid count target", centroid_count_target);
  run(7, "smoothing direction", smoothing_direction);
  run(8, "merge formulas", merge_formulas);
  run(9, "bench reporting", bench_reporting);
  run(10, "determinism", determinism);
  std::printf("%s: %d of 10 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
