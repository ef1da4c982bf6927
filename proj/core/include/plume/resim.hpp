#pragma once

#include <optional>
#include <vector>

#include "plume/field.hpp"
#include "plume/geomodel.hpp"

namespace plume {

struct FluidProps {
  double mu_brine = 6.0e-4;   // Pa s
  double mu_co2 = 6.0e-5;     // Pa s
  double rho_brine = 1020.0;  // kg/m^3
  double rho_co2 = 700.0;     // kg/m^3
  double corey_exponent = 2.0;
  double gravity = 9.81;      // m/s^2, 0 disables buoyancy

  void validate() const;
};

inline constexpr double kSecondsPerYear = 365.25 * 86400.0;

/// 1 Mt/yr spread over 1000 m of out-of-plane thickness, in kg/s per metre.
inline constexpr double kDefaultInjectionRate = 1.0e9 / kSecondsPerYear / 1000.0;

struct InjectionSchedule {
  double rate = kDefaultInjectionRate;  // kg/s per metre out of plane
  double duration = 8.0;                // years
  int n_report = 5;                     // snapshots, evenly spaced, t=0 and t=duration included
  int pressure_steps = 40;              // pressure solves over the run

  void validate() const;
};

struct LeakConfig {
  bool enabled = false;
  double p_threshold = 5.0e7;  // Pa of overpressure at the seal base above the injector
  double k_multiplier = 1000.0;

  void validate() const;
};

struct SolverOptions {
  double cg_tolerance = 1.0e-8;  // relative residual
  int cg_max_iterations = 20000;
  double cfl = 0.9;
  double p_surface = 1.0e5;      // Pa at z = 0
};

/// Volumetric fluxes per metre out of plane (m^2/s) on every cell face.
/// x-faces: nz rows of nx+1 faces, positive towards +x.
/// z-faces: nz+1 rows of nx faces, positive downwards; row 0 is the top boundary.
struct FaceFluxes {
  int nx = 0;
  int nz = 0;
  std::vector<double> x;
  std::vector<double> z;

  FaceFluxes() = default;
  FaceFluxes(int nx_, int nz_)
      : nx(nx_), nz(nz_), x(static_cast<std::size_t>(nz_) * (nx_ + 1), 0.0),
        z(static_cast<std::size_t>(nz_ + 1) * nx_, 0.0) {}
  double& xf(int k, int i) { return x[static_cast<std::size_t>(k) * (nx + 1) + i]; }
  double xf(int k, int i) const { return x[static_cast<std::size_t>(k) * (nx + 1) + i]; }
  double& zf(int k, int i) { return z[static_cast<std::size_t>(k) * nx + i]; }
  double zf(int k, int i) const { return z[static_cast<std::size_t>(k) * nx + i]; }
};

/// CO2 source (m^3/s per metre) in a single cell.
struct CellSource {
  int k = 0;
  int i = 0;
  double rate = 0.0;
};

struct PressureSolution {
  Field2D pressure;       // Pa, absolute
  Field2D overpressure;   // Pa, relative to brine hydrostatic
  FaceFluxes flux;
  int iterations = 0;
  double residual = 0.0;  // final relative residual
};

struct TransportReport {
  int substeps = 0;
  double injected_volume = 0.0;  // m^2 (per metre) of CO2 added by sources
  double outflow_volume = 0.0;   // m^2 of CO2 leaving through the boundary
};

struct SimResult {
  std::vector<double> times;         // years, one per snapshot
  std::vector<Field2D> saturation;
  std::vector<Field2D> pressure;     // Pa, absolute
  std::vector<Field2D> overpressure; // Pa above brine hydrostatic
  std::vector<double> mass_injected_history;
  std::vector<double> mass_in_domain_history;
  std::vector<double> mass_out_history;
  std::vector<double> seal_pressure_times;  // years, one per pressure solve
  std::vector<double> seal_overpressure;    // Pa at the seal base above the well
  bool leak_triggered = false;
  std::optional<double> trigger_time;       // years
  double mass_injected = 0.0;               // kg per metre
  double mass_in_domain = 0.0;
  double mass_out_boundaries = 0.0;
  long transport_substeps = 0;
  long cg_iterations = 0;

  double mass_balance_error() const;
};

/// Corey-type relative permeabilities.
double co2_mobility(double s, const FluidProps& props);
double brine_mobility(double s, const FluidProps& props);

/// CO2 fractional flow f_g(s) = lambda_g / (lambda_g + lambda_w).
double fractional_flow(double s, const FluidProps& props);

/// Brine-hydrostatic pressure at depth z (m).
double hydrostatic_pressure(double z, const FluidProps& props, const SolverOptions& opts = {});

/// Injector perforations as per-cell CO2 volumetric sources (split by permeability).
std::vector<CellSource> well_sources(const EarthModel& model, const FluidProps& props,
                                     const InjectionSchedule& schedule);

PressureSolution pressure_solve(const EarthModel& model, const Field2D& s, const FluidProps& props,
                                const std::vector<CellSource>& sources,
                                const SolverOptions& opts = {},
                                const Field2D* initial_overpressure = nullptr);

/// Convenience overload: sources from the model's injector and the schedule.
Field2D pressure_solve(const EarthModel& model, const Field2D& s, const FluidProps& props,
                       const InjectionSchedule& schedule);

/// Explicit upwind saturation update over dt seconds. Sub-steps internally so
/// every sub-step satisfies the CFL limit.
Field2D transport_step(const Field2D& s, const FaceFluxes& flux, const EarthModel& model,
                       const FluidProps& props, double dt,
                       const std::vector<CellSource>& sources = {},
                       const SolverOptions& opts = {}, TransportReport* report = nullptr);

SimResult simulate(const EarthModel& model, const FluidProps& props,
                   const InjectionSchedule& schedule, const LeakConfig& leak,
                   const SolverOptions& opts = {});

/// Earliest time at which `overpressure` reaches `threshold`, if ever.
std::optional<double> first_crossing(const std::vector<double>& times,
                                     const std::vector<double>& overpressure, double threshold);

/// Bisection on the trigger threshold: returns the largest threshold whose
/// first crossing happens no later than `target_time` on the recorded history.
double calibrate_threshold(const std::vector<double>& times,
                           const std::vector<double>& overpressure, double target_time,
                           int iterations = 60);

}  // namespace plume
