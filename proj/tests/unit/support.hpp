#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "plume/geomodel.hpp"

namespace plume::test {

/// Uniform medium: every cell gets the same velocity, porosity and permeability.
inline EarthModel uniform_model(int nx, int nz, double dx, double dz, double phi = 0.25,
                                double perm = 1e-12, double vel = 2500.0) {
  EarthModel m;
  m.grid = Grid2D{nx, nz, dx, dz};
  m.velocity = Field2D(nx, nz, vel);
  m.porosity = Field2D(nx, nz, phi);
  m.permeability = Field2D(nx, nz, perm);
  m.seal_rows = {1, 2};
  m.well_col = nx / 2;
  m.fracture_col = nx / 2 + 1;
  m.injection_rows = {nz - 2};
  return m;
}

/// Fresh scratch directory under the test working directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::current_path() / "scratch" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline double above_seal_max(const Field2D& s, const RowRange& seal) {
  double mx = 0.0;
  for (int k = 0; k < seal.begin; ++k)
    for (int i = 0; i < s.nx(); ++i) mx = std::max(mx, s(k, i));
  return mx;
}

}  // namespace plume::test
