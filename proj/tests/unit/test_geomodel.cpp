#include <gtest/gtest.h>

#include <cmath>

#include "plume/error.hpp"
#include "plume/geomodel.hpp"

using namespace plume;

namespace {

const Grid2D kGrid = Grid2D::with_cells(64, 64);

}  // namespace

TEST(Geomodel, SameSeedGivesIdenticalFields) {
  const auto a = make_layered_model(7, kGrid, {});
  const auto b = make_layered_model(7, kGrid, {});
  EXPECT_EQ(a.velocity, b.velocity);
  EXPECT_EQ(a.porosity, b.porosity);
  EXPECT_EQ(a.permeability, b.permeability);
  EXPECT_EQ(a.seal_rows, b.seal_rows);
  EXPECT_EQ(a.well_col, b.well_col);
  EXPECT_EQ(a.fracture_col, b.fracture_col);
}

TEST(Geomodel, DifferentSeedsDifferInAtLeastOnePercentOfCells) {
  const auto a = make_layered_model(7, kGrid, {});
  const auto b = make_layered_model(8, kGrid, {});
  std::size_t diff = 0;
  for (std::size_t c = 0; c < kGrid.cells(); ++c) diff += a.velocity[c] != b.velocity[c];
  EXPECT_GE(diff, kGrid.cells() / 100);
}

TEST(Geomodel, SealPermeabilityBelowHundredthOfReservoirMedian) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = make_layered_model(seed, kGrid, {});
    double kmax = 0.0;
    for (int k = m.seal_rows.begin; k < m.seal_rows.end; ++k)
      for (int i = 0; i < kGrid.nx; ++i) kmax = std::max(kmax, m.permeability(k, i));
    EXPECT_LE(kmax, 0.01 * m.median_reservoir_permeability()) << "seed " << seed;
  }
}

TEST(Geomodel, InvariantsHoldOverHundredSeeds) {
  for (std::uint64_t seed = 100; seed < 200; ++seed) {
    const auto m = make_layered_model(seed, kGrid, {});
    EXPECT_NO_THROW(m.check_invariants()) << "seed " << seed;
    EXPECT_GE(m.seal_rows.size(), 1);
    EXPECT_GE(m.seal_rows.end, 8);
    EXPECT_LE(m.seal_rows.end, kGrid.nz - 8);
    for (int k : m.injection_rows) EXPECT_GE(k, m.seal_rows.end);
    EXPECT_NE(m.fracture_col, m.well_col);
  }
}

TEST(Geomodel, OverburdenBafflesSpanEveryColumn) {
  GeoConfig cfg;
  const auto m = make_layered_model(3, kGrid, cfg);
  const double kmed = m.median_reservoir_permeability();
  for (int i = 0; i < kGrid.nx; ++i) {
    int tight = 0;
    for (int k = 0; k < m.seal_rows.begin; ++k) tight += m.permeability(k, i) < 0.01 * kmed;
    EXPECT_GE(tight, cfg.n_baffles) << "column " << i;
  }
  cfg.n_baffles = 0;
  const auto open = make_layered_model(3, kGrid, cfg);
  for (int k = 0; k < open.seal_rows.begin; ++k)
    for (int i = 0; i < kGrid.nx; ++i) EXPECT_GE(open.permeability(k, i), 0.01 * kmed);
  cfg.n_baffles = -1;
  EXPECT_THROW(make_layered_model(3, kGrid, cfg), InvalidArgument);
}

TEST(Geomodel, RejectsGridWithoutRoomForSealAndReservoir) {
  EXPECT_THROW(make_layered_model(1, Grid2D::with_cells(64, 16), {}), InvalidArgument);
  EXPECT_THROW(make_layered_model(1, Grid2D{4, 64, 50.0, 33.0}, {}), InvalidArgument);
}

TEST(Geomodel, RejectsTooFewLayers) {
  GeoConfig cfg;
  cfg.n_layers = 2;
  EXPECT_THROW(make_layered_model(1, kGrid, cfg), InvalidArgument);
}

TEST(RockPhysics, VelocityToPorosityExamples) {
  EXPECT_DOUBLE_EQ(velocity_to_porosity(1500.0), 0.36);
  EXPECT_NEAR(velocity_to_porosity(2500.0), 0.36 - 1.1e-4 * 1000.0, 1e-15);
  EXPECT_DOUBLE_EQ(velocity_to_porosity(5500.0), 0.02);
  EXPECT_THROW(velocity_to_porosity(1499.0), InvalidArgument);
  EXPECT_THROW(velocity_to_porosity(5501.0), InvalidArgument);
}

TEST(RockPhysics, PorosityNonIncreasingInVelocity) {
  double prev = velocity_to_porosity(1500.0);
  for (double v = 1510.0; v <= 5500.0; v += 10.0) {
    const double phi = velocity_to_porosity(v);
    EXPECT_LE(phi, prev);
    prev = phi;
  }
}

TEST(RockPhysics, KozenyCarmanExample) {
  const double phi = 0.25, d = 1e-4;
  const double oracle = d * d * phi * phi * phi / (180.0 * (1 - phi) * (1 - phi));
  EXPECT_NEAR(porosity_to_permeability(phi, d), oracle, 1e-24);
  EXPECT_NEAR(porosity_to_permeability(phi, d), 1.543e-12, 0.001e-12);
}

TEST(RockPhysics, KozenyCarmanLimitsAndMonotonicity) {
  EXPECT_LT(porosity_to_permeability(1e-6, 1e-4), 1e-25);
  EXPECT_GT(porosity_to_permeability(0.3, 1e-4), porosity_to_permeability(0.2, 1e-4));
  double prev = 0.0;
  for (double phi = 0.01; phi < 0.99; phi += 0.01) {
    const double k = porosity_to_permeability(phi, 1e-4);
    EXPECT_GT(k, prev);
    prev = k;
  }
  EXPECT_THROW(porosity_to_permeability(0.0, 1e-4), InvalidArgument);
  EXPECT_THROW(porosity_to_permeability(1.0, 1e-4), InvalidArgument);
  EXPECT_THROW(porosity_to_permeability(0.2, 0.0), InvalidArgument);
}

TEST(RockPhysics, ComposedVelocityToPermeabilityNonIncreasing) {
  double prev = porosity_to_permeability(velocity_to_porosity(1500.0), 1e-4);
  for (double v = 1500.0; v <= 4500.0; v += 25.0) {
    const double k = porosity_to_permeability(velocity_to_porosity(v), 1e-4);
    EXPECT_LE(k, prev);
    prev = k;
  }
}
