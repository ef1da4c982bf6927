#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "plume/checkpoint.hpp"
#include "plume/config.hpp"
#include "plume/dataset.hpp"
#include "plume/error.hpp"
#include "plume/pipeline.hpp"

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

void log_line(const std::string& s) { std::cerr << s << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"plume: CO2 plume posterior inference with a conditional normalizing flow"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  const auto common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", config_path, "YAML run configuration (defaults when omitted)")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the seed used by this command");
    auto* o = sub->add_option("--out", out, "output directory");
    if (needs_out) o->required();
  };

  auto* gen = app.add_subcommand("gen-data", "simulate training pairs into a dataset directory");
  common(gen, true);
  std::optional<int> n_total;
  std::optional<double> leak_fraction;
  std::optional<int> workers;
  gen->add_option("--n", n_total, "number of simulations")->check(CLI::PositiveNumber);
  gen->add_option("--leak-fraction", leak_fraction, "fraction of leak scenarios")
      ->check(CLI::Range(0.0, 1.0));
  gen->add_option("--workers", workers, "parallel simulation workers (0: all cores)")
      ->check(CLI::NonNegativeNumber);

  auto* tr = app.add_subcommand("train", "fit the flow on the dataset's training split");
  common(tr, true);
  std::string data_dir;
  std::optional<int> epochs;
  tr->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--epochs", epochs, "override the number of epochs")->check(CLI::PositiveNumber);

  auto* inf = app.add_subcommand("infer", "posterior sampling and evaluation");
  common(inf, true);
  std::string checkpoint;
  std::optional<int> sample_id;
  std::string split = "test";
  std::optional<int> samples;
  inf->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  inf->add_option("--checkpoint", checkpoint, "trained model")->required()->check(CLI::ExistingFile);
  inf->add_option("--id", sample_id, "evaluate one record instead of a split")
      ->check(CLI::NonNegativeNumber);
  inf->add_option("--split", split, "split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  inf->add_option("--samples", samples, "posterior samples per observation (M)")
      ->check(CLI::Range(2, 1 << 20));

  auto* rep = app.add_subcommand("report", "render PNG panels for an inference run");
  common(rep, true);
  std::string infer_dir;
  rep->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--infer", infer_dir, "inference output directory")
      ->required()
      ->check(CLI::ExistingDirectory);

  auto* val = app.add_subcommand("validate-config", "parse and check a configuration file");
  common(val, false);
  bool print = false;
  val->add_flag("--print", print, "print the fully resolved configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  plume::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = plume::load_config(config_path);
    if (*gen) {
      if (seed) cfg.data.seed = *seed;
      if (n_total) cfg.data.n_total = *n_total;
      if (leak_fraction) cfg.data.leak_fraction = *leak_fraction;
      if (workers) cfg.data.workers = *workers;
    } else if (*tr) {
      if (seed) cfg.training.seed = *seed;
      if (epochs) cfg.training.epochs = *epochs;
    } else if (*inf) {
      if (seed) cfg.posterior.seed = *seed;
      if (samples) cfg.posterior.samples = *samples;
    }
    cfg.validate();
  } catch (const plume::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  } catch (const plume::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  }

  try {
    if (*val) {
      if (print) std::cout << plume::dump_config(cfg);
      std::cerr << "configuration OK (hash " << plume::config_hash(cfg) << ")\n";
    } else if (*gen) {
      plume::GenerateOptions opts;
      opts.workers = cfg.data.workers;
      opts.log = log_line;
      const auto m = plume::generate_dataset(cfg, out, cfg.data.n_total, cfg.data.leak_fraction,
                                             cfg.data.seed, opts);
      int gaps = 0;
      for (const auto& r : m.records) gaps += !r.ok;
      std::cerr << "dataset: " << m.n_total << " records (" << m.n_leak << " leak), " << gaps
                << " gaps\n";
      if (gaps == m.n_total) return kRuntimeError;
    } else if (*tr) {
      const auto run = plume::run_training(cfg, data_dir, out, log_line);
      std::cerr << "best epoch " << run.result.best_epoch << ", validation loss "
                << run.result.best_val_loss << "\ncheckpoint: " << run.checkpoint.string() << '\n';
    } else if (*inf) {
      const auto run = plume::run_inference(cfg, data_dir, checkpoint, out, sample_id, split, log_line);
      std::fprintf(stderr,
                   "%zu samples: mean SSIM %.4f, mean RMSE %.4f, std/error correlation %.3f, "
                   "false positives %d, false negatives %d\n",
                   run.reports.size(), run.mean_ssim, run.mean_rmse, run.mean_corr,
                   run.false_positives, run.false_negatives);
    } else if (*rep) {
      plume::run_report(data_dir, infer_dir, out, log_line);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}
