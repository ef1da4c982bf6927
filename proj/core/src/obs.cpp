#include "plume/obs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "plume/error.hpp"

namespace plume {

namespace {

constexpr double kWaveletHalfWidth = 1.5;  // in units of 1/f

double log_impedance(double v) {
  // Gardner density 310 v^0.25, Z = rho v.
  return std::log(310.0) + 1.25 * std::log(v);
}

std::vector<double> convolve_column(const std::vector<double>& x, const std::vector<double>& kernel) {
  const int n = static_cast<int>(x.size());
  const int half = static_cast<int>(kernel.size() / 2);
  std::vector<double> out(n, 0.0);
  for (int k = 0; k < n; ++k) {
    if (x[k] == 0.0) continue;
    for (int j = -half; j <= half; ++j) {
      const int t = k + j;
      if (t >= 0 && t < n) out[t] += x[k] * kernel[j + half];
    }
  }
  return out;
}

double energy(const Field2D& f) {
  double e = 0.0;
  for (double v : f.values()) e += v * v;
  return e;
}

// Vertical area-average of one column onto the coarse grid, placed in one coarse column.
void embed_column(const Field2D& src, int col, int rz, int coarse_col, Field2D& dst,
                  double (*map)(double, double), double scale) {
  for (int k = 0; k < dst.nz(); ++k) {
    double acc = 0.0;
    for (int kk = 0; kk < rz; ++kk) acc += map(src(k * rz + kk, col), scale);
    dst(k, coarse_col) = acc / rz;
  }
}

}  // namespace

void WaveletConfig::validate() const {
  if (!(peak_frequency > 0.0)) throw InvalidArgument("observation: peak_frequency must be > 0");
  if (!(reference_velocity > 0.0)) throw InvalidArgument("observation: reference_velocity must be > 0");
}

void ObservationConfig::validate() const {
  wavelet.validate();
  if (!(beta >= 0.0)) throw InvalidArgument("observation: beta must be >= 0");
  if (!(pressure_scale > 0.0)) throw InvalidArgument("observation: pressure_scale must be > 0");
  if (std::isnan(snr_db)) throw InvalidArgument("observation: snr_db is NaN");
  if (out_nx < 8 || out_nz < 8) throw InvalidArgument("observation: output grid below 8x8");
  if (!(zero_signal_noise_rms >= 0.0))
    throw InvalidArgument("observation: zero_signal_noise_rms must be >= 0");
}

double ricker(double t, double f) {
  const double a = std::numbers::pi * std::numbers::pi * f * f * t * t;
  return (1.0 - 2.0 * a) * std::exp(-a);
}

std::vector<double> ricker_depth_kernel(double dz, double velocity, double f) {
  if (!(dz > 0.0 && velocity > 0.0 && f > 0.0))
    throw InvalidArgument("ricker_depth_kernel: arguments must be positive");
  const int half = static_cast<int>(std::floor(kWaveletHalfWidth * velocity / (f * dz)));
  std::vector<double> w(2 * half + 1);
  for (int j = -half; j <= half; ++j) w[j + half] = ricker(j * dz / velocity, f);
  return w;
}

Field2D saturation_to_dvel(const Field2D& s, const EarthModel& model, double beta) {
  if (s.nx() != model.grid.nx || s.nz() != model.grid.nz)
    throw InvalidArgument("saturation_to_dvel: shape mismatch");
  Field2D dv(s.nx(), s.nz());
  for (std::size_t c = 0; c < s.size(); ++c) dv[c] = -beta * s[c];
  return dv;
}

Field2D image_timelapse(const EarthModel& model, const Field2D& s_monitor,
                        const Field2D* s_baseline, const WaveletConfig& cfg, double beta) {
  cfg.validate();
  const int nx = model.grid.nx;
  const int nz = model.grid.nz;
  if (s_monitor.nx() != nx || s_monitor.nz() != nz ||
      (s_baseline != nullptr && !s_baseline->same_shape(s_monitor)))
    throw InvalidArgument("image_timelapse: saturation fields must match the model grid");

  const Field2D dv_m = saturation_to_dvel(s_monitor, model, beta);
  const Field2D dv_b = s_baseline ? saturation_to_dvel(*s_baseline, model, beta) : Field2D(nx, nz);

  Field2D out(nx, nz);
  const double dz = model.grid.dz;
  const double f = cfg.peak_frequency;
  for (int i = 0; i < nx; ++i) {
    // Reflectivity change at the top interface of each cell.
    std::vector<double> dr(nz, 0.0);
    double prev_m = log_impedance(model.velocity(0, i) + dv_m(0, i));
    double prev_b = log_impedance(model.velocity(0, i) + dv_b(0, i));
    for (int k = 1; k < nz; ++k) {
      const double lm = log_impedance(model.velocity(k, i) + dv_m(k, i));
      const double lb = log_impedance(model.velocity(k, i) + dv_b(k, i));
      dr[k] = 0.5 * (lm - prev_m) - 0.5 * (lb - prev_b);
      prev_m = lm;
      prev_b = lb;
    }
    for (int k = 1; k < nz; ++k) {
      if (dr[k] == 0.0) continue;
      const double v = cfg.background_velocity_use ? model.velocity(k, i) : cfg.reference_velocity;
      const int half = static_cast<int>(std::floor(kWaveletHalfWidth * v / (f * dz)));
      for (int j = std::max(-half, -k); j <= half && k + j < nz; ++j)
        out(k + j, i) += dr[k] * ricker(j * dz / v, f);
    }
  }
  return out;
}

Field2D bandlimited_noise(int nx, int nz, std::uint64_t seed, const std::vector<double>& kernel) {
  if (kernel.empty()) throw InvalidArgument("bandlimited_noise: empty kernel");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Field2D white(nx, nz);
  for (double& v : white.raw()) v = normal(rng);
  Field2D noise(nx, nz);
  std::vector<double> col(nz);
  for (int i = 0; i < nx; ++i) {
    for (int k = 0; k < nz; ++k) col[k] = white(k, i);
    const auto filtered = convolve_column(col, kernel);
    for (int k = 0; k < nz; ++k) noise(k, i) = filtered[k];
  }
  return noise;
}

Field2D add_bandlimited_noise(const Field2D& y1, double snr_db, std::uint64_t seed,
                              const std::vector<double>& kernel) {
  if (std::isinf(snr_db) && snr_db > 0) return y1;
  const double sig = energy(y1);
  if (!(sig > 0.0)) throw InvalidArgument("add_bandlimited_noise: zero signal, SNR undefined");
  const Field2D noise = bandlimited_noise(y1.nx(), y1.nz(), seed, kernel);
  const double scale = std::sqrt(sig / (energy(noise) * std::pow(10.0, snr_db / 10.0)));
  Field2D out = y1;
  for (std::size_t c = 0; c < out.size(); ++c) out[c] += scale * noise[c];
  return out;
}

double measure_snr_db(const Field2D& clean, const Field2D& noisy) {
  if (!clean.same_shape(noisy)) throw InvalidArgument("measure_snr_db: shape mismatch");
  double n = 0.0;
  for (std::size_t c = 0; c < clean.size(); ++c) {
    const double d = noisy[c] - clean[c];
    n += d * d;
  }
  if (n == 0.0) return kNoNoise;
  return 10.0 * std::log10(energy(clean) / n);
}

ObservationTriple assemble_observation(const SimResult& sim, const EarthModel& model,
                                       const ObservationConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (sim.saturation.empty() || sim.overpressure.empty())
    throw InvalidArgument("assemble_observation: simulation has no snapshots");
  const Field2D& s = sim.saturation.back();
  const Field2D& dp = sim.overpressure.back();
  const int rx = model.grid.nx / cfg.out_nx;
  const int rz = model.grid.nz / cfg.out_nz;

  ObservationTriple y;
  y.snr_db = cfg.snr_db;
  y.y1_clean = area_downsample(image_timelapse(model, s, nullptr, cfg.wavelet, cfg.beta),
                               cfg.out_nx, cfg.out_nz);

  double vmean = 0.0;
  for (double v : model.velocity.values()) vmean += v;
  vmean /= static_cast<double>(model.velocity.size());
  const double dz_out = model.grid.dz * rz;
  const auto kernel = ricker_depth_kernel(
      dz_out, cfg.wavelet.background_velocity_use ? vmean : cfg.wavelet.reference_velocity,
      cfg.wavelet.peak_frequency);

  if (std::isinf(cfg.snr_db) && cfg.snr_db > 0) {
    y.y1_seismic = y.y1_clean;
  } else if (energy(y.y1_clean) > 0.0) {
    y.y1_seismic = add_bandlimited_noise(y.y1_clean, cfg.snr_db, seed, kernel);
    y.measured_snr_db = measure_snr_db(y.y1_clean, y.y1_seismic);
  } else {
    // Nothing to image: a pure noise realization at the configured floor.
    y.y1_seismic = bandlimited_noise(cfg.out_nx, cfg.out_nz, seed, kernel);
    const double rms = std::sqrt(energy(y.y1_seismic) / static_cast<double>(y.y1_seismic.size()));
    for (double& v : y.y1_seismic.raw()) v *= cfg.zero_signal_noise_rms / rms;
  }

  y.y2_well_sat = Field2D(cfg.out_nx, cfg.out_nz);
  y.y3_well_pres = Field2D(cfg.out_nx, cfg.out_nz);
  std::vector<int> wells{model.well_col};
  if (cfg.monitoring_well) {
    const int mw = std::clamp(static_cast<int>(cfg.monitoring_well_fraction * model.grid.nx), 0,
                              model.grid.nx - 1);
    if (mw / rx != model.well_col / rx) wells.push_back(mw);
  }
  for (int col : wells) {
    embed_column(s, col, rz, col / rx, y.y2_well_sat,
                 [](double v, double) { return std::clamp(v, 0.0, 1.0); }, 1.0);
    embed_column(dp, col, rz, col / rx, y.y3_well_pres,
                 [](double v, double scale) { return std::clamp(v / scale, 0.0, 1.0); },
                 cfg.pressure_scale);
  }
  return y;
}

}  // namespace plume
