// SPDX-License-Identifier: Apache-2.0
//
// lcd: compress, evaluate and benchmark clustered layers.

#include "lcd/lcd.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>

namespace {

struct HyperFlags {
  std::string config;
  std::vector<std::pair<std::string, std::string>> overrides;
};

// Every config key is mirrored by a --flag; flags override the file.
void add_hyper_flags(CLI::App* app, HyperFlags& f) {
  app->add_option("--config", f.config, "key=value config file")->check(CLI::ExistingFile);
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"eta", "--eta"},
      {"theta", "--theta"},
      {"Theta", "--Theta"},
      {"p", "-p,--speculative-rounds"},
      {"T", "-T,--max-rounds"},
      {"b", "--bits"},
      {"eps_multipliers", "--eps-multipliers"},
      {"plateau_window", "--plateau-window"},
      {"stability_window", "--stability-window"},
      {"reference_bits", "--reference-bits"},
      {"backtracks", "--backtracks"},
      {"seed", "--seed"},
      {"literal_eq7", "--literal-eq7"},
      {"literal_eq8", "--literal-eq8"},
      {"jobs", "--jobs"},
  };
  for (const auto& [key, flag] : keys) {
    app->add_option_function<std::string>(
        flag, [&f, key = key](const std::string& v) { f.overrides.emplace_back(key, v); }, "overrides " + key);
  }
}

lcd::Config resolve_config(const HyperFlags& f) {
  lcd::Config cfg = f.config.empty() ? lcd::Config{} : lcd::load_config(f.config);
  for (const auto& [key, value] : f.overrides) lcd::set_config_value(cfg, key, value);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise clustering compression toolkit"};
  app.require_subcommand(1);

  std::function<int()> run;

  HyperFlags compress_flags;
  std::string manifest, out_dir = ".";
  auto* compress = app.add_subcommand("compress", "compress every layer of a manifest");
  compress->add_option("manifest", manifest, "file listing one .lbf per line")->required();
  compress->add_option("-o,--out", out_dir, "output directory");
  add_hyper_flags(compress, compress_flags);
  compress->callback([&] {
    run = [&] { return lcd::cmd_compress(manifest, out_dir, resolve_config(compress_flags), std::cout, std::cerr); };
  });

  HyperFlags eval_flags;
  std::string eval_manifest, compressed_dir = ".";
  auto* eval = app.add_subcommand("eval", "compare compressed layers against baselines");
  eval->add_option("manifest", eval_manifest, "file listing one .lbf per line")->required();
  eval->add_option("-d,--compressed", compressed_dir, "directory holding the .lcl files");
  add_hyper_flags(eval, eval_flags);
  eval->callback([&] {
    run = [&] { return lcd::cmd_eval(eval_manifest, compressed_dir, resolve_config(eval_flags), std::cout, std::cerr); };
  });

  lcd::BenchConfig bench_cfg;
  auto* bench = app.add_subcommand("bench", "time the LUT kernel against a dense float matmul");
  bench->add_option("--rows", bench_cfg.rows);
  bench->add_option("--cols", bench_cfg.cols);
  bench->add_option("--centroids", bench_cfg.centroids);
  bench->add_option("--bits", bench_cfg.bits);
  bench->add_option("--batch", bench_cfg.batch);
  bench->add_option("--iters", bench_cfg.iters);
  bench->add_option("--seed", bench_cfg.seed);
  bench->callback([&] { run = [&] { return lcd::cmd_bench(bench_cfg, std::cout); }; });

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "print the contents of a .lbf or .lcl file");
  inspect->add_option("file", inspect_path)->required();
  inspect->callback([&] { run = [&] { return lcd::cmd_inspect(inspect_path, std::cout); }; });

  std::string smooth_path;
  int smooth_bits = 8;
  auto* smooth = app.add_subcommand("smooth-search", "print the quantization MSE for each smoothing candidate");
  smooth->add_option("file", smooth_path, ".lbf bundle")->required();
  smooth->add_option("--bits", smooth_bits);
  smooth->callback([&] { run = [&] { return lcd::cmd_smooth_search(smooth_path, smooth_bits, std::cout); }; });

  lcd::GenConfig gen_cfg;
  std::string gen_kind, gen_out;
  auto* gen = app.add_subcommand("gen", "write a synthetic layer bundle");
  gen->group("");
  gen->add_option("kind", gen_kind, "gaussian | outliers | kdistinct")->required();
  gen->add_option("-o,--out", gen_out)->required();
  gen->add_option("--rows", gen_cfg.rows);
  gen->add_option("--cols", gen_cfg.cols);
  gen->add_option("--samples", gen_cfg.samples);
  gen->add_option("--k", gen_cfg.k);
  gen->add_option("--seed", gen_cfg.seed);
  gen->callback([&] {
    run = [&] {
      gen_cfg.kind = lcd::parse_gen_kind(gen_kind);
      return lcd::cmd_gen(gen_cfg, gen_out);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? lcd::exit_code::kOk : lcd::exit_code::kUsage;
  }
  try {
    return run();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return lcd::exit_code_for(e);
  }
}
