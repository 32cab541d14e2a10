// SPDX-License-Identifier: Apache-2.0
//
// The command-line subcommands as library functions, so they can be driven
// in-process. Every function writes to the streams it is given and returns
// a process exit code.

#pragma once

#include "lcd/copt.hpp"
#include "lcd/io.hpp"
#include "lcd/lutkernel.hpp"
#include "lcd/oracle.hpp"
#include "lcd/smooth.hpp"

#include <atomic>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <thread>

namespace lcd {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kData = 2;
inline constexpr int kInvariant = 3;
}  // namespace exit_code

/// Maps an exception to the process exit code.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const PreconditionError*>(&e)) return exit_code::kUsage;
  if (dynamic_cast<const InvariantError*>(&e)) return exit_code::kInvariant;
  return exit_code::kData;
}

/// Shortest decimal that reads back as the same double.
inline std::string fmt(double v) {
  char buf[40];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct Config {
  HyperParams hyper;
  std::size_t jobs = 1;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw PreconditionError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_count(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v.front() == '-')
    throw PreconditionError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw PreconditionError("config: " + key + " expects true or false, got '" + v + "'");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_real(key, trim(item)));
  if (out.empty()) throw PreconditionError("config: " + key + " expects a comma-separated list");
  return out;
}

}  // namespace detail

/// Applies one key=value setting.
inline void set_config_value(Config& c, const std::string& key, const std::string& value) {
  using namespace detail;
  auto& h = c.hyper;
  if (key == "eta") h.eta = parse_real(key, value);
  else if (key == "theta") h.theta = parse_real(key, value);
  else if (key == "Theta") h.Theta = parse_real(key, value);
  else if (key == "p") h.p = parse_count(key, value);
  else if (key == "T") h.T = parse_count(key, value);
  else if (key == "b") h.b = static_cast<int>(parse_count(key, value));
  else if (key == "eps_multipliers") h.eps_multipliers = parse_list(key, value);
  else if (key == "plateau_window") h.plateau_window = parse_count(key, value);
  else if (key == "stability_window") h.stability_window = parse_count(key, value);
  else if (key == "reference_bits") h.reference_bits = static_cast<int>(parse_count(key, value));
  else if (key == "backtracks") h.backtracks = parse_count(key, value);
  else if (key == "seed") h.seed = parse_count(key, value);
  else if (key == "literal_eq7") h.literal_update = parse_bool(key, value);
  else if (key == "literal_eq8") h.literal_merge = parse_bool(key, value);
  else if (key == "jobs") c.jobs = parse_count(key, value);
  else throw PreconditionError("config: unknown key '" + key + "'");
}

/// key=value lines; '#' starts a comment; blank lines are ignored.
inline Config parse_config(std::string_view text, Config base = {}) {
  std::stringstream ss{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw PreconditionError("config line " + std::to_string(lineno) + ": expected key=value");
    set_config_value(base, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  return base;
}

inline Config load_config(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return parse_config(std::string_view(bytes.data(), bytes.size()));
}

/// One .lbf path per non-blank line, relative to the manifest's directory.
inline std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  std::stringstream ss(std::string(bytes.begin(), bytes.end()));
  std::vector<std::filesystem::path> out;
  std::string line;
  while (std::getline(ss, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    std::filesystem::path p(t);
    out.push_back(p.is_absolute() ? p : path.parent_path() / p);
  }
  return out;
}

inline std::string layer_name(const std::filesystem::path& p) { return p.stem().string(); }

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct LayerResult {
  std::string name;
  CompressedLayer layer;
  LayerReport report;
  SmoothingChoice smoothing;
};

/// smooth-search -> apply -> optimize -> derive s_q -> CompressedLayer.
inline LayerResult compress_bundle(const LayerBundle& raw, const HyperParams& hyper, std::string name = {}) {
  raw.validate();
  hyper.validate();
  LayerResult r;
  r.name = std::move(name);
  r.smoothing = adaptive_smoothing(raw.calib, hyper.b);
  const LayerBundle smoothed = apply_smoothing(raw, r.smoothing.s_m);
  r.report = optimize_layer(smoothed, hyper);
  const double s_q = derive_activation_scale(smoothed.calib, hyper.b);
  r.layer = make_compressed_layer(raw.rows, raw.cols, r.report.clustering, r.smoothing.s_m, s_q, hyper.b);
  return r;
}

inline void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows) {
  out << "round,centroid_count,eq4_metric,recon_loss,phase\n";
  for (const auto& r : rows)
    out << r.round << ',' << r.centroid_count << ',' << fmt(r.cluster_metric) << ',' << fmt(r.recon_loss) << ','
        << r.phase << '\n';
}

inline std::string summary_header() { return "layer,K,equivalent_bits,eq4_metric,recon_loss"; }

inline std::string summary_line(const LayerResult& r) {
  const auto k = r.layer.centroids.size();
  return r.name + ',' + std::to_string(k) + ',' + fmt(std::log2(static_cast<double>(k))) + ',' +
         fmt(r.report.cluster_metric) + ',' + fmt(r.report.recon_loss);
}

/// Runs `work(i)` for i in [0, n) on up to `jobs` threads.
template <typename Work>
void parallel_for(std::size_t n, std::size_t jobs, Work&& work) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) work(i);
    });
  for (auto& th : pool) th.join();
}

/// Compresses every layer of a manifest into `out_dir`: <layer>.lcl,
/// <layer>.trajectory.csv and summary.csv. Layers run on `jobs` workers;
/// output order always follows the manifest.
inline int cmd_compress(const std::filesystem::path& manifest, const std::filesystem::path& out_dir,
                        const Config& cfg, std::ostream& out, std::ostream& err) {
  cfg.hyper.validate();
  const auto layers = read_manifest(manifest);
  std::filesystem::create_directories(out_dir);

  std::vector<LayerResult> results(layers.size());
  std::vector<std::string> errors(layers.size());
  std::vector<int> codes(layers.size(), exit_code::kOk);
  parallel_for(layers.size(), cfg.jobs, [&](std::size_t i) {
    try {
      results[i] = compress_bundle(load_layer_bundle(layers[i]), cfg.hyper, layer_name(layers[i]));
    } catch (const std::exception& e) {
      errors[i] = e.what();
      codes[i] = exit_code_for(e);
    }
  });

  int code = exit_code::kOk;
  std::ostringstream summary;
  summary << summary_header() << '\n';
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (codes[i] != exit_code::kOk) {
      err << "error: " << layers[i].string() << ": " << errors[i] << '\n';
      code = std::max(code, codes[i]);
      continue;
    }
    const auto& r = results[i];
    save_compressed_layer(r.layer, out_dir / (r.name + ".lcl"));
    std::ostringstream traj;
    write_trajectory_csv(traj, r.report.trajectory);
    const auto t = traj.str();
    detail::write_file(out_dir / (r.name + ".trajectory.csv"), std::vector<char>(t.begin(), t.end()));
    summary << summary_line(r) << '\n';
  }
  const auto s = summary.str();
  detail::write_file(out_dir / "summary.csv", std::vector<char>(s.begin(), s.end()));
  out << s;
  return code;
}

struct EvalRow {
  std::string layer;
  std::size_t k = 0;
  double lcd_recon = 0.0;
  double kmeans_recon = 0.0;
  int uniform_bits = 0;
  double uniform_recon = 0.0;
  double lut_max_rel_dev = 0.0;
};

/// Compares a compressed layer against its source bundle: LCD, k-means at the
/// same K, and uniform quantization at ceil(log2 K) bits (at least 2), all
/// measured as output reconstruction loss in the smoothed domain; plus the
/// LUT kernel's worst normwise deviation from the reference forward pass
/// over the calibration rows.
inline EvalRow evaluate_layer(const LayerBundle& raw, const CompressedLayer& layer, std::uint64_t seed,
                              std::string name = {}) {
  raw.validate();
  layer.validate();
  if (raw.rows != layer.rows || raw.cols != layer.cols) throw InvariantError("compressed layer shape mismatch");
  EvalRow row;
  row.layer = std::move(name);
  row.k = layer.centroids.size();
  const LayerBundle smoothed = apply_smoothing(raw, layer.s_m);
  const auto wq = layer.reconstruct();
  row.lcd_recon = output_reconstruction_loss(smoothed, std::vector<double>(wq.begin(), wq.end()));
  const std::size_t k = std::min(row.k, oracle::distinct_count(smoothed.weights));
  row.kmeans_recon = output_reconstruction_loss(smoothed, oracle::kmeans(smoothed.weights, k, 100, seed));
  row.uniform_bits = std::max(2, static_cast<int>(std::ceil(std::log2(static_cast<double>(row.k)))));
  row.uniform_recon = output_reconstruction_loss(smoothed, oracle::uniform_quantize(smoothed.weights, row.uniform_bits));
  const auto lut = build_bucket_lut(layer.centroids, layer.b);
  for (std::size_t s = 0; s < raw.n_samples(); ++s) {
    const auto x = std::span<const double>(raw.calib).subspan(s * raw.cols, raw.cols);
    const auto a = lut_forward(x, layer, lut);
    const auto b = reference_forward(x, layer);
    row.lut_max_rel_dev =
        std::max(row.lut_max_rel_dev, max_relative_deviation(std::span<const float>(a), std::span<const float>(b)));
  }
  return row;
}

inline int cmd_eval(const std::filesystem::path& manifest, const std::filesystem::path& compressed_dir,
                    const Config& cfg, std::ostream& out, std::ostream& err) {
  const auto layers = read_manifest(manifest);
  std::vector<EvalRow> rows(layers.size());
  std::vector<std::string> errors(layers.size());
  std::vector<int> codes(layers.size(), exit_code::kOk);
  parallel_for(layers.size(), cfg.jobs, [&](std::size_t i) {
    try {
      const auto name = layer_name(layers[i]);
      rows[i] = evaluate_layer(load_layer_bundle(layers[i]), load_compressed_layer(compressed_dir / (name + ".lcl")),
                               cfg.hyper.seed, name);
    } catch (const std::exception& e) {
      errors[i] = e.what();
      codes[i] = exit_code_for(e);
    }
  });
  int code = exit_code::kOk;
  out << "layer,K,lcd_recon,kmeans_recon,uniform_bits,uniform_recon,lut_max_rel_dev\n";
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (codes[i] != exit_code::kOk) {
      err << "error: " << layers[i].string() << ": " << errors[i] << '\n';
      code = std::max(code, codes[i]);
      continue;
    }
    const auto& r = rows[i];
    out << r.layer << ',' << r.k << ',' << fmt(r.lcd_recon) << ',' << fmt(r.kmeans_recon) << ',' << r.uniform_bits
        << ',' << fmt(r.uniform_recon) << ',' << fmt(r.lut_max_rel_dev) << '\n';
  }
  return code;
}

inline int cmd_bench(const BenchConfig& cfg, std::ostream& out) {
  const auto rows = bench_kernels(cfg);
  out << "kernel,ns_per_matmul,ratio_vs_naive\n";
  for (const auto& r : rows) out << r.kernel << ',' << fmt(r.ns_per_matmul) << ',' << fmt(r.ratio_vs_naive) << '\n';
  return exit_code::kOk;
}

inline int cmd_inspect(const std::filesystem::path& path, std::ostream& out) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() < 4) throw LengthError("file too short for a magic");
  if (std::equal(kBundleMagic.begin(), kBundleMagic.end(), bytes.begin())) {
    const auto b = decode_layer_bundle(bytes);
    b.validate();
    const auto [lo, hi] = std::minmax_element(b.weights.begin(), b.weights.end());
    const double mean = std::accumulate(b.weights.begin(), b.weights.end(), 0.0) / static_cast<double>(b.weights.size());
    out << "kind: layer bundle\n"
        << "rows: " << b.rows << "\ncols: " << b.cols << "\nn_samples: " << b.n_samples() << '\n'
        << "weight_min: " << fmt(*lo) << "\nweight_max: " << fmt(*hi) << "\nweight_mean: " << fmt(mean) << '\n';
    const auto d = dbci_run(b.weights, 1.0);
    out << "dbci_sigma: " << fmt(d.params.sigma) << "\ndbci_min_pts: " << d.params.min_pts
        << "\ndbci_eps: " << fmt(d.params.eps) << "\ndbci_eps_multiplier: " << fmt(d.params.eps_multiplier)
        << "\ndbci_centroids: " << d.clustering.size() << "\ndbci_noise_points: " << d.noise_points << '\n';
    return exit_code::kOk;
  }
  if (std::equal(kCompressedMagic.begin(), kCompressedMagic.end(), bytes.begin())) {
    const auto l = decode_compressed_layer(bytes);
    out << "kind: compressed layer\n"
        << "rows: " << l.rows << "\ncols: " << l.cols << "\nb: " << l.b << "\nindex_width: " << l.index_width()
        << "\nK: " << l.centroids.size() << "\ns_m: " << fmt(l.s_m) << "\ns_q: " << fmt(l.s_q) << "\ncentroids:";
    for (float c : l.centroids) out << ' ' << fmt(c);
    out << '\n';
    return exit_code::kOk;
  }
  throw FormatError("bad magic");
}

/// The MSE curve over the default grid, then the refined choice as the one
/// row marked selected.
inline int cmd_smooth_search(const std::filesystem::path& path, int b, std::ostream& out) {
  const auto bundle = load_layer_bundle(path);
  const auto grid = default_grid(bundle.calib, b);
  out << "s_m,mse,selected\n";
  for (const auto& c : smoothing_curve(bundle.calib, b, grid)) out << fmt(c.s_m) << ',' << fmt(c.mse) << ",0\n";
  const auto best = refine_smoothing(bundle.calib, b, grid);
  out << fmt(best.s_m) << ',' << fmt(best.mse) << ",1\n";
  return exit_code::kOk;
}

// ---------------------------------------------------------------------------
// Synthetic bundles
// ---------------------------------------------------------------------------

enum class GenKind { Gaussian, Outliers, KDistinct };

struct GenConfig {
  GenKind kind = GenKind::Gaussian;
  std::size_t rows = 64;
  std::size_t cols = 64;
  std::size_t samples = 32;
  std::size_t k = 4;  // distinct weight values for KDistinct
  std::uint64_t seed = 1;
};

inline GenKind parse_gen_kind(std::string_view s) {
  if (s == "gaussian") return GenKind::Gaussian;
  if (s == "outliers") return GenKind::Outliers;
  if (s == "kdistinct") return GenKind::KDistinct;
  throw PreconditionError("unknown generator '" + std::string(s) + "'");
}

/// Levels -(k-1)/2 .. (k-1)/2 in unit steps.
inline std::vector<double> distinct_levels(std::size_t k) {
  std::vector<double> levels(k);
  for (std::size_t i = 0; i < k; ++i) levels[i] = static_cast<double>(i) - static_cast<double>(k - 1) / 2.0;
  return levels;
}

/// N(0,1) weights and activations. Outliers: max(1, cols / 64) distinct
/// activation channels scaled by a factor drawn from [20, 50]. KDistinct:
/// weights drawn uniformly from distinct_levels(k). Values are rounded to f32
/// so the bundle survives a save/load unchanged.
inline LayerBundle generate_bundle(const GenConfig& g) {
  if (g.rows == 0 || g.cols == 0 || g.samples == 0) throw PreconditionError("generator dimensions must be positive");
  if (g.kind == GenKind::KDistinct && g.k < 1) throw PreconditionError("kdistinct needs k >= 1");
  std::mt19937_64 rng(g.seed);
  std::normal_distribution<double> normal;
  LayerBundle b;
  b.rows = g.rows;
  b.cols = g.cols;
  b.weights.resize(g.rows * g.cols);
  b.calib.resize(g.samples * g.cols);
  if (g.kind == GenKind::KDistinct) {
    const auto levels = distinct_levels(g.k);
    std::uniform_int_distribution<std::size_t> pick(0, g.k - 1);
    for (auto& w : b.weights) w = levels[pick(rng)];
  } else {
    for (auto& w : b.weights) w = normal(rng);
  }
  for (auto& x : b.calib) x = normal(rng);
  if (g.kind == GenKind::Outliers) {
    const std::size_t channels = std::max<std::size_t>(1, g.cols / 64);
    std::vector<std::size_t> cols(g.cols);
    std::iota(cols.begin(), cols.end(), std::size_t{0});
    std::uniform_real_distribution<double> scale(20.0, 50.0);
    for (std::size_t c = 0; c < channels; ++c) {
      // Partial Fisher-Yates: distinct channels.
      std::uniform_int_distribution<std::size_t> pick(c, g.cols - 1);
      std::swap(cols[c], cols[pick(rng)]);
      const std::size_t j = cols[c];
      const double s = scale(rng);
      for (std::size_t i = 0; i < g.samples; ++i) b.calib[i * g.cols + j] *= s;
    }
  }
  for (auto& w : b.weights) w = static_cast<float>(w);
  for (auto& x : b.calib) x = static_cast<float>(x);
  return b;
}

inline int cmd_gen(const GenConfig& g, const std::filesystem::path& path) {
  save_layer_bundle(generate_bundle(g), path);
  return exit_code::kOk;
}

}  // namespace lcd
