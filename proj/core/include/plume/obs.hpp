#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "plume/field.hpp"
#include "plume/geomodel.hpp"
#include "plume/resim.hpp"

namespace plume {

struct WaveletConfig {
  double peak_frequency = 15.0;         // Hz
  bool background_velocity_use = true;  // depth-convert with the local baseline velocity
  double reference_velocity = 2500.0;   // m/s, used when the flag is off

  void validate() const;
};

/// Noise disabled when snr_db is +infinity.
inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

struct ObservationConfig {
  WaveletConfig wavelet;
  double beta = 300.0;               // m/s velocity drop at full CO2 saturation
  double snr_db = 8.0;
  double pressure_scale = 7.5e7;     // Pa; overpressure mapped to [0,1]
  double zero_signal_noise_rms = 1.0e-3;  // noise level when the clean image is identically zero
  int out_nx = 64;                   // training resolution
  int out_nz = 64;
  bool monitoring_well = false;      // second well column
  double monitoring_well_fraction = 0.85;

  void validate() const;
};

/// Conditioning image y = (seismic, well saturation, well pressure), all on one grid.
struct ObservationTriple {
  Field2D y1_seismic;
  Field2D y2_well_sat;
  Field2D y3_well_pres;
  double snr_db = kNoNoise;
  double measured_snr_db = kNoNoise;
  Field2D y1_clean;  // before noise, kept for diagnostics
};

/// Ricker wavelet (1 - 2 pi^2 f^2 t^2) exp(-pi^2 f^2 t^2).
double ricker(double t, double f);

/// Ricker sampled in depth: w_j = ricker(j dz / v, f), j in [-half, half].
std::vector<double> ricker_depth_kernel(double dz, double velocity, double f);

Field2D saturation_to_dvel(const Field2D& s, const EarthModel& model, double beta = 300.0);

/// Per-trace convolutional image of (monitor - baseline). Wavelets are scaled by
/// the baseline velocity, so the output is linear in the reflectivity change.
Field2D image_timelapse(const EarthModel& model, const Field2D& s_monitor,
                        const Field2D* s_baseline = nullptr, const WaveletConfig& cfg = {},
                        double beta = 300.0);

/// Unit-variance white noise convolved along depth with `kernel` (seeded).
Field2D bandlimited_noise(int nx, int nz, std::uint64_t seed, const std::vector<double>& kernel);

/// Adds white noise band-limited by `kernel` along depth, rescaled so that
/// 10 log10(|y1|^2 / |noise|^2) == snr_db.
Field2D add_bandlimited_noise(const Field2D& y1, double snr_db, std::uint64_t seed,
                              const std::vector<double>& kernel);

double measure_snr_db(const Field2D& clean, const Field2D& noisy);

ObservationTriple assemble_observation(const SimResult& sim, const EarthModel& model,
                                       const ObservationConfig& cfg, std::uint64_t seed);

}  // namespace plume
