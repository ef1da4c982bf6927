#pragma once

#include <cstdint>
#include <vector>

#include "plume/field.hpp"

namespace plume {

/// Clamped linear velocity-to-porosity law plus Kozeny-Carman permeability.
struct RockPhysics {
  double phi_max = 0.36;
  double phi_min = 0.02;
  double v_ref = 1500.0;          // m/s
  double slope = 1.1e-4;          // porosity per (m/s)
  double d_grain = 1.0e-4;        // m, sand
  double d_grain_seal = 1.0e-6;   // m, clay-rich seal
  double d_grain_baffle = 3.0e-6; // m, shale interbeds in the overburden
};

/// Controls for the randomized layered earth models.
struct GeoConfig {
  int n_layers = 6;                  // total, including the seal
  double seal_depth_fraction = 1.0 / 3.0;
  double seal_depth_jitter = 0.04;   // fraction of depth
  double seal_thickness_min = 170.0; // m
  double seal_thickness_max = 240.0; // m
  int seal_min_rows = 4;
  double interface_amplitude = 40.0; // m, sub-horizontal interface undulation
  double overburden_v_min = 1800.0;
  double overburden_v_max = 2600.0;
  double seal_v_min = 3300.0;
  double seal_v_max = 3700.0;
  double reservoir_v_min = 2100.0;
  double reservoir_v_max = 3200.0;
  double velocity_noise = 30.0;      // m/s, cell-level jitter
  double well_min_fraction = 0.3;    // lateral window for the injector
  double well_max_fraction = 0.7;
  double fracture_offset_min = 0.03; // lateral offset of the fracture from the well, fraction of width
  double fracture_offset_max = 0.09;
  int n_baffles = 2;                 // thin shale interbeds in the overburden
  double baffle_thickness = 30.0;    // m, at least one row
  RockPhysics rock;

  void validate() const;
};

/// Half-open row range [begin, end).
struct RowRange {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  bool contains(int k) const { return k >= begin && k < end; }
  bool operator==(const RowRange&) const = default;
};

struct EarthModel {
  Grid2D grid;
  Field2D velocity;      // m/s
  Field2D porosity;      // fraction
  Field2D permeability;  // m^2
  RowRange seal_rows;
  int fracture_col = 0;
  int well_col = 0;
  std::vector<int> injection_rows;  // rows perforated at well_col
  std::uint64_t seed = 0;

  /// Median permeability over the cells below the seal.
  double median_reservoir_permeability() const;
  /// Throws InvalidArgument when any model invariant is violated.
  void check_invariants() const;
};

EarthModel make_layered_model(std::uint64_t seed, const Grid2D& grid, const GeoConfig& cfg);

double velocity_to_porosity(double v, const RockPhysics& rp = {});
double porosity_to_permeability(double phi, double d_grain);

}  // namespace plume
