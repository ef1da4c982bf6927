#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "plume/cnf.hpp"
#include "plume/geomodel.hpp"
#include "plume/obs.hpp"
#include "plume/posterior.hpp"
#include "plume/resim.hpp"
#include "plume/train.hpp"

namespace plume {

/// Simulation grid (the flow and imaging run here; data are then area-averaged
/// to the training resolution).
struct GridConfig {
  int nx = 64;
  int nz = 64;
  double width = Grid2D::kDefaultWidth;
  double depth = Grid2D::kDefaultDepth;
  Grid2D grid() const { return Grid2D::with_cells(nx, nz, width, depth); }
};

/// Per-sample calibration of the leak threshold so that every leak run fractures.
struct ThresholdCalibration {
  bool enabled = true;
  double trigger_min_years = 0.5;
  double trigger_max_years = 2.5;
};

struct DataConfig {
  int n_total = 2000;
  double leak_fraction = 0.5;
  int test_count = 36;
  double val_fraction = 0.04;  // of the samples left after the test split
  int train_count = 0;         // 0: everything not in test or validation
  int val_count = 0;           // 0: derived from val_fraction
  std::uint64_t seed = 0;
  int workers = 0;             // 0: hardware concurrency
};

struct RunConfig {
  GridConfig grid;
  GeoConfig geo;
  FluidProps fluid;
  InjectionSchedule schedule;
  LeakConfig leak;
  ThresholdCalibration calibration;
  SolverOptions solver;
  ObservationConfig observation;
  FlowConfig model;
  TrainConfig training;
  PosteriorConfig posterior;
  DataConfig data;

  /// Cross-section checks (training resolution vs grid and flow shape).
  void validate() const;
};

/// Parses the YAML run configuration. Every key is optional; unknown sections
/// or keys are rejected with the offending line number.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Canonical YAML dump with every field.
std::string dump_config(const RunConfig& cfg);
/// CRC-32 of the canonical dump, as 8 hex digits.
std::string config_hash(const RunConfig& cfg);

}  // namespace plume
