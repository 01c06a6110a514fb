// fedsim: run federated training experiments, dump partitions, compare runs.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedsim/config.hpp"
#include "fedsim/experiment.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_run(const std::string& config_path, const std::vector<std::uint64_t>& seeds,
            const std::string& out, bool deterministic, bool force) {
  fedsim::RunConfig cfg = fedsim::load_config(config_path);
  if (deterministic) {
    cfg.deterministic = true;
    cfg.federation.deterministic = true;
  }
  const fs::path base = out.empty() ? fs::path(cfg.output_dir) : fs::path(out);

  std::vector<std::uint64_t> run_seeds = seeds;
  if (run_seeds.empty()) run_seeds.push_back(cfg.federation.seed);

  int status = 0;
  for (const auto seed : run_seeds) {
    fedsim::RunConfig c = cfg;
    c.federation.seed = seed;
    fedsim::RunOptions opts;
    opts.force = force;
    opts.out_dir = run_seeds.size() > 1 ? base / ("seed_" + std::to_string(seed)) : base;
    c.output_dir = opts.out_dir.string();
    const auto report = fedsim::run_experiment(c, opts, std::cerr);
    if (report.exit_status == 0) {
      const auto& last = report.history.back();
      std::cout << opts.out_dir.string() << ": " << report.history.size()
                << " rounds, val_acc " << last.val_acc << ", val_loss " << last.val_loss
                << '\n';
    } else {
      status = report.exit_status;
    }
  }
  return status;
}

int cmd_partition(const std::string& config_path, const std::string& manifest,
                  std::uint64_t seed, bool seed_given) {
  fedsim::RunConfig cfg = fedsim::load_config(config_path);
  if (seed_given) cfg.federation.seed = seed;
  const auto data = fedsim::prepare_data(cfg.data, cfg.federation.seed);
  fedsim::write_partition_manifest(manifest, data.clients);
  std::cout << manifest << ": " << data.clients.size() << " clients\n";
  return 0;
}

int cmd_compare(const std::string& metric, double target, const std::vector<std::string>& dirs,
                const std::string& csv, const std::string& curves) {
  std::vector<fs::path> paths(dirs.begin(), dirs.end());
  const auto c = fedsim::compare_runs(paths, fedsim::stop_metric_from_string(metric), target);
  std::cout << fedsim::format_comparison(c);
  auto write = [](const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f || !(f << text)) throw std::runtime_error("cannot write " + path);
  };
  if (!csv.empty()) write(csv, fedsim::comparison_csv(c));
  if (!curves.empty()) write(curves, fedsim::curves_csv(c));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning simulator with dynamic gradient aggregation"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::string out;
  bool deterministic = false;
  bool force = false;
  auto* run = app.add_subcommand("run", "Train one run per seed");
  run->add_option("--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seeds, "Master seed; repeat for a sweep (one subdirectory per seed)");
  run->add_option("--out", out, "Output directory (default: output_dir from the config)");
  run->add_flag("--deterministic", deterministic, "Force deterministic mode");
  run->add_flag("--force", force, "Overwrite an existing run");

  std::string manifest;
  std::uint64_t part_seed = 0;
  auto* part = app.add_subcommand("partition", "Write the client partition manifest");
  part->add_option("--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  part->add_option("--manifest", manifest, "Output manifest path")->required();
  auto* part_seed_opt = part->add_option("--seed", part_seed, "Override the config seed");

  std::string metric = "val_acc";
  double target = 0.0;
  std::vector<std::string> dirs;
  std::string csv;
  std::string curves;
  auto* cmp = app.add_subcommand("compare", "Rounds-to-target across run directories");
  cmp->add_option("--metric", metric, "val_acc or val_loss")
      ->check(CLI::IsMember({"val_acc", "val_loss"}));
  cmp->add_option("--target", target, "Target metric value")->required();
  cmp->add_option("--csv", csv, "Also write the comparison table as CSV");
  cmp->add_option("--curves", curves, "Write per-round metric curves as CSV");
  cmp->add_option("dirs", dirs, "Run directories")->required()->expected(2, -1);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, seeds, out, deterministic, force);
    if (*part) return cmd_partition(config_path, manifest, part_seed, part_seed_opt->count() > 0);
    if (*cmp) return cmd_compare(metric, target, dirs, csv, curves);
  } catch (const std::exception& e) {
    std::cerr << "fedsim: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
