#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "plume/config.hpp"
#include "plume/field.hpp"
#include "plume/obs.hpp"
#include "plume/tensor.hpp"
#include "plume/train.hpp"

namespace plume {

inline constexpr int kDatasetVersion = 1;

struct SampleRecord {
  int id = 0;
  std::uint64_t seed = 0;
  bool leak = false;             // leak scenario requested
  bool ok = false;               // arrays written and checksummed
  std::string error;             // failure diagnostic when !ok
  bool leak_triggered = false;
  std::optional<double> trigger_time;  // years
  double p_threshold = 0.0;      // Pa, leak runs only
  RowRange seal_rows;            // simulation grid rows
  int seal_top = 0;              // first row at training resolution that touches the seal
  int well_col = 0;              // simulation grid column
  int fracture_col = 0;
  double mass_injected = 0.0;    // kg per metre
  double mass_in_domain = 0.0;
  double mass_out = 0.0;
  double measured_snr_db = 0.0;
  std::uint32_t crc_x = 0;
  std::uint32_t crc_y = 0;
  std::string split;             // "train", "val", "test" or empty
};

struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
  int total() const { return train + val + test; }
};

struct DatasetManifest {
  int version = kDatasetVersion;
  int n_total = 0;
  int n_leak = 0;
  double leak_fraction = 0.0;
  std::uint64_t seed = 0;
  int height = 0;                // training resolution
  int width = 0;
  Grid2D sim_grid;
  std::vector<std::string> channel_order;
  std::string config_hash;
  std::string config_text;
  std::optional<SplitCounts> split;
  std::uint64_t split_seed = 0;
  std::vector<SampleRecord> records;  // indexed by id

  int n_no_leak() const { return n_total - n_leak; }
  std::size_t x_values() const { return static_cast<std::size_t>(height) * width; }
  std::size_t y_values() const { return 3 * x_values(); }
  std::vector<int> ids_in(const std::string& split_name) const;
};

/// The settings that determine generated arrays: model, training, posterior,
/// split sizes and worker count reset to their defaults. Its hash identifies a
/// dataset for resuming.
RunConfig generation_settings(const RunConfig& cfg);

/// Leak flags with exactly round(leak_fraction * n) leak entries, in seeded order.
std::vector<bool> leak_flags(int n, double leak_fraction, std::uint64_t seed);

/// One generated training pair and its metadata.
struct GeneratedSample {
  Field2D x;                 // saturation at training resolution
  ObservationTriple y;       // observations at training resolution
  SampleRecord record;
};

/// Pure function of its arguments: model, (calibrated) simulation, observation.
GeneratedSample generate_sample(const RunConfig& cfg, int id, bool leak, std::uint64_t seed);

struct GenerateOptions {
  int workers = 0;                       // 0: hardware concurrency
  std::function<void(const std::string&)> log;
  int flush_every = 16;                  // manifest rewrite interval, records
  int stop_after = -1;                   // testing hook: stop after this many new records
};

/// Generates (or resumes) a dataset directory: manifest.json, x.f32, y.f32.
DatasetManifest generate_dataset(const RunConfig& cfg, const std::filesystem::path& dir,
                                 int n_total, double leak_fraction, std::uint64_t seed,
                                 const GenerateOptions& opts = {});

/// Stratified, seeded assignment of ok records to train/val/test.
void split_dataset(DatasetManifest& manifest, const SplitCounts& counts, std::uint64_t seed);

/// 36 for test (fewer for small sets), 4% of the rest for validation, the remainder for training.
SplitCounts default_split(int n_ok, const DataConfig& data);

void write_manifest(const std::filesystem::path& dir, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& dir);

/// Read access to a dataset directory; shapes validated on open.
class Dataset {
 public:
  explicit Dataset(std::filesystem::path dir);

  const DatasetManifest& manifest() const { return manifest_; }
  DatasetManifest& manifest() { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }
  const SampleRecord& record(int id) const;

  Tensor<float> x(int id) const;
  Tensor<float> y(int id) const;
  /// Re-reads the arrays of one record and compares checksums.
  bool verify(int id) const;
  PairSet<float> pairs(const std::vector<int>& ids) const;
  void save_manifest() const { write_manifest(dir_, manifest_); }

 private:
  std::vector<float> read(const char* file, std::size_t offset, std::size_t count) const;

  std::filesystem::path dir_;
  DatasetManifest manifest_;
};

}  // namespace plume
