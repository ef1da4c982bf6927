#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "plume/config.hpp"
#include "plume/dataset.hpp"
#include "plume/posterior.hpp"
#include "plume/train.hpp"

namespace plume {

using LogFn = std::function<void(const std::string&)>;

/// Assigns the default stratified split if the dataset has none yet.
void ensure_split(Dataset& ds, const RunConfig& cfg);

struct TrainRun {
  TrainResult result;
  std::filesystem::path checkpoint;  // best-validation model
  std::filesystem::path loss_csv;
};

/// Trains on the dataset's train split; writes model.ckpt, loss.csv and run.json into out_dir.
TrainRun run_training(const RunConfig& cfg, const std::filesystem::path& dataset_dir,
                      const std::filesystem::path& out_dir, const LogFn& log = {});

struct InferenceRun {
  std::vector<EvalReport> reports;
  double tau = 0.0;
  double mean_ssim = 0.0;
  double mean_rmse = 0.0;
  double mean_corr = 0.0;
  int false_positives = 0;
  int false_negatives = 0;
};

/// Posterior sampling for a split (or one record). Writes eval.csv, summary.json and
/// per-sample mean/std/normalized-std planes (raw float32, H x W) into out_dir.
InferenceRun run_inference(const RunConfig& cfg, const std::filesystem::path& dataset_dir,
                           const std::filesystem::path& checkpoint,
                           const std::filesystem::path& out_dir, std::optional<int> id = {},
                           const std::string& split = "test", const LogFn& log = {});

/// Renders ground truth | posterior mean | absolute error | normalized std per evaluated
/// sample and writes report_summary.csv.
void run_report(const std::filesystem::path& dataset_dir, const std::filesystem::path& infer_dir,
                const std::filesystem::path& out_dir, const LogFn& log = {});

/// Raw float32 plane I/O used for inference outputs.
void write_plane(const std::filesystem::path& path, const Field2D& f);
Field2D read_plane(const std::filesystem::path& path, int nx, int nz);

}  // namespace plume
