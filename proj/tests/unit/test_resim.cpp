#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "plume/error.hpp"
#include "plume/geomodel.hpp"
#include "plume/resim.hpp"
#include "support.hpp"

using namespace plume;
using plume::test::uniform_model;

namespace {

FluidProps no_gravity() {
  FluidProps p;
  p.gravity = 0.0;
  return p;
}

double max_abs_overpressure(const PressureSolution& ps) {
  double m = 0.0;
  for (double v : ps.overpressure.values()) m = std::max(m, std::abs(v));
  return m;
}

double co2_volume(const Field2D& s, const EarthModel& m) {
  double v = 0.0;
  for (std::size_t c = 0; c < s.size(); ++c) v += s[c] * m.porosity[c];
  return v * m.grid.dx * m.grid.dz;
}

// Welge tangent for quadratic Corey curves, found by bisection on
// g(s) = f'(s) s - f(s) using a centred finite-difference derivative.
double welge_shock_saturation(const FluidProps& p) {
  const auto f = [&](double s) {
    const double a = s * s / p.mu_co2;
    const double b = (1 - s) * (1 - s) / p.mu_brine;
    return a / (a + b);
  };
  const auto df = [&](double s) { return (f(s + 1e-7) - f(s - 1e-7)) / 2e-7; };
  double lo = 0.05, hi = 0.99;  // g(lo) > 0 > g(hi)
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (df(mid) * mid - f(mid) > 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

EarthModel layered(std::uint64_t seed) { return make_layered_model(seed, Grid2D::with_cells(64, 64), {}); }

}  // namespace

TEST(FractionalFlow, Endpoints) {
  const FluidProps p;
  EXPECT_EQ(fractional_flow(0.0, p), 0.0);
  EXPECT_EQ(fractional_flow(1.0, p), 1.0);
}

TEST(FractionalFlow, EqualRelpermsCancelAtHalfSaturation) {
  const FluidProps p;
  EXPECT_NEAR(fractional_flow(0.5, p), 6e-4 / (6e-4 + 6e-5), 1e-12);
  EXPECT_NEAR(fractional_flow(0.5, p), 0.9091, 1e-4);
}

TEST(FractionalFlow, MonotoneAndRejectsOutOfRange) {
  const FluidProps p;
  EXPECT_LT(fractional_flow(0.3, p), fractional_flow(0.6, p));
  double prev = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double f = fractional_flow(j / 100.0, p);
    EXPECT_GE(f, prev);
    prev = f;
  }
  EXPECT_THROW(fractional_flow(-0.01, p), InvalidArgument);
  EXPECT_THROW(fractional_flow(1.01, p), InvalidArgument);
}

TEST(FluidProps, ValidationRejectsInvertedContrasts) {
  FluidProps p;
  p.mu_co2 = 1e-3;
  EXPECT_THROW(p.validate(), InvalidArgument);
  p = FluidProps{};
  p.rho_co2 = 1100.0;
  EXPECT_THROW(p.validate(), InvalidArgument);
  p = FluidProps{};
  p.mu_brine = 0.0;
  EXPECT_THROW(p.validate(), InvalidArgument);
}

TEST(PressureSolve, LaplaceWithConstantBoundaryIsConstant) {
  const auto m = uniform_model(32, 32, 50.0, 50.0);
  SolverOptions opts;
  const auto ps = pressure_solve(m, Field2D(m.grid), no_gravity(), {}, opts);
  for (double v : ps.pressure.values()) EXPECT_NEAR(v, opts.p_surface, 1e-6);
  EXPECT_LE(ps.residual, 1e-8);
}

TEST(PressureSolve, HydrostaticGradientMatchesColumnOracle) {
  const auto m = uniform_model(16, 40, 50.0, 25.0);
  const FluidProps p;
  const auto ps = pressure_solve(m, Field2D(m.grid), p, {}, {});
  const double oracle = p.rho_brine * p.gravity;  // Pa per metre, 1D column at rest
  for (int k = 0; k + 1 < m.grid.nz; ++k) {
    const double grad = (ps.pressure(k + 1, 5) - ps.pressure(k, 5)) / m.grid.dz;
    EXPECT_NEAR(grad, oracle, 0.01 * oracle) << "row " << k;
  }
  EXPECT_LT(max_abs_overpressure(ps), 1e-3);
}

TEST(PressureSolve, DoublingPermeabilityHalvesDeviation) {
  auto m = uniform_model(32, 32, 50.0, 50.0);
  const std::vector<CellSource> src{{24, 16, 1e-5}};
  const FluidProps p = no_gravity();
  const auto a = pressure_solve(m, Field2D(m.grid), p, src, {});
  for (double& k : m.permeability.raw()) k *= 2.0;
  const auto b = pressure_solve(m, Field2D(m.grid), p, src, {});
  ASSERT_GT(max_abs_overpressure(a), 0.0);
  for (std::size_t c = 0; c < a.overpressure.size(); ++c)
    EXPECT_NEAR(b.overpressure[c], 0.5 * a.overpressure[c], 1e-6 * max_abs_overpressure(a) + 1e-9);
}

TEST(PressureSolve, ReportsFailureWhenIterationCapTooSmall) {
  const auto m = uniform_model(32, 32, 50.0, 50.0);
  SolverOptions opts;
  opts.cg_max_iterations = 1;
  const std::vector<CellSource> src{{24, 16, 1e-5}};
  EXPECT_THROW(pressure_solve(m, Field2D(m.grid), no_gravity(), src, opts), SolverError);
}

TEST(PressureSolve, RejectsMismatchedSaturation) {
  const auto m = uniform_model(16, 16, 50.0, 50.0);
  EXPECT_THROW(pressure_solve(m, Field2D(8, 8), FluidProps{}, {}, {}), InvalidArgument);
}

TEST(Transport, ZeroVelocityZeroSourceIsIdentity) {
  const auto m = uniform_model(16, 16, 50.0, 50.0);
  Field2D s(m.grid);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : s.raw()) v = u(rng);
  const auto out = transport_step(s, FaceFluxes(16, 16), m, no_gravity(), 1e6);
  EXPECT_EQ(out, s);
}

TEST(Transport, BuckleyLeverettFrontMatchesWelge) {
  // Horizontal 1D displacement: CO2 source in column 0 of every row, uniform
  // total flux to the right, open right boundary.
  const int nx = 400, nz = 8;
  const double q = 1e-6;
  const auto m = uniform_model(nx, nz, 2.0, 5.0, 0.2);
  const FluidProps p = no_gravity();
  FaceFluxes flux(nx, nz);
  std::vector<CellSource> src;
  for (int k = 0; k < nz; ++k) {
    for (int i = 1; i <= nx; ++i) flux.xf(k, i) = q;
    src.push_back({k, 0, q});
  }
  const double pore_row = 0.2 * nx * m.grid.dx * m.grid.dz;
  const double t = 0.3 * pore_row / q;
  const auto s = transport_step(Field2D(m.grid), flux, m, p, t, src, {});

  const double s_shock = welge_shock_saturation(p);
  const double a = s_shock * s_shock / p.mu_co2, b = (1 - s_shock) * (1 - s_shock) / p.mu_brine;
  const double shock_speed = a / (a + b) / s_shock;  // d(x/L)/d(PVI) = f(s*)/s*
  const double oracle = 0.3 * shock_speed * nx * m.grid.dx;

  for (int k = 0; k < nz; ++k) {
    int i = 0;
    while (i < nx && s(k, i) > 0.5 * s_shock) ++i;
    const double front = i * m.grid.dx;
    EXPECT_NEAR(front, oracle, 0.05 * oracle) << "row " << k;
  }
}

TEST(Transport, MassBalanceAndBoundsOnRandomFields) {
  const auto m = uniform_model(24, 20, 40.0, 30.0);
  const FluidProps p;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0), flux_u(-1e-6, 1e-6);
  for (int trial = 0; trial < 20; ++trial) {
    Field2D s(m.grid);
    for (double& v : s.raw()) v = 0.2 + 0.6 * u(rng);
    // Divergence-free fluxes from a random stream function.
    Field2D psi(m.grid.nx + 1, m.grid.nz + 1);
    for (double& v : psi.raw()) v = flux_u(rng);
    FaceFluxes f(m.grid.nx, m.grid.nz);
    for (int k = 0; k < m.grid.nz; ++k)
      for (int i = 1; i < m.grid.nx; ++i) f.xf(k, i) = psi(k + 1, i) - psi(k, i);
    for (int k = 1; k < m.grid.nz; ++k)
      for (int i = 0; i < m.grid.nx; ++i) f.zf(k, i) = -(psi(k, i + 1) - psi(k, i));
    const std::vector<CellSource> src{{10, 12, 5e-7}};
    TransportReport rep;
    const double dt = 5e5;
    const auto out = transport_step(s, f, m, p, dt, src, {}, &rep);
    for (double v : out.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    const double change = co2_volume(out, m) - co2_volume(s, m);
    const double expected = rep.injected_volume - rep.outflow_volume;
    EXPECT_NEAR(change, expected, 1e-10 * co2_volume(s, m)) << "trial " << trial;
    EXPECT_NEAR(rep.injected_volume, 5e-7 * dt, 1e-12 * 5e-7 * dt);
  }
}

TEST(Simulate, IntactSealKeepsCO2BelowIt) {
  const auto m = layered(5);
  const auto r = simulate(m, FluidProps{}, InjectionSchedule{}, LeakConfig{});
  EXPECT_FALSE(r.leak_triggered);
  EXPECT_FALSE(r.trigger_time.has_value());
  for (const auto& s : r.saturation) EXPECT_LE(plume::test::above_seal_max(s, m.seal_rows), 1e-6);
}

TEST(Simulate, ZeroThresholdTriggersAtStartAndLeaks) {
  const auto m = layered(5);
  LeakConfig leak;
  leak.enabled = true;
  leak.p_threshold = 0.0;
  const auto r = simulate(m, FluidProps{}, InjectionSchedule{}, leak);
  ASSERT_TRUE(r.leak_triggered);
  EXPECT_DOUBLE_EQ(*r.trigger_time, 0.0);
  EXPECT_GT(plume::test::above_seal_max(r.saturation.back(), m.seal_rows), 0.01);
}

TEST(Simulate, ZeroRateLeavesHydrostaticState) {
  const auto m = layered(6);
  InjectionSchedule sch;
  sch.rate = 0.0;
  const auto r = simulate(m, FluidProps{}, sch, LeakConfig{});
  for (const auto& s : r.saturation)
    for (double v : s.values()) EXPECT_EQ(v, 0.0);
  for (const auto& dp : r.overpressure)
    for (double v : dp.values()) EXPECT_NEAR(v, 0.0, 1e-3);
}

TEST(Simulate, SnapshotsBoundsAndMassBalance) {
  const auto m = layered(9);
  InjectionSchedule sch;
  sch.n_report = 5;
  const auto r = simulate(m, FluidProps{}, sch, LeakConfig{});
  ASSERT_EQ(r.times.size(), 5u);
  ASSERT_EQ(r.saturation.size(), 5u);
  EXPECT_DOUBLE_EQ(r.times.front(), 0.0);
  EXPECT_DOUBLE_EQ(r.times.back(), 8.0);
  for (const auto& s : r.saturation)
    for (double v : s.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  EXPECT_GT(r.mass_injected, 0.0);
  EXPECT_LE(r.mass_in_domain, r.mass_injected * (1 + 1e-12));
  for (std::size_t j = 1; j < r.times.size(); ++j) {
    const double inj = r.mass_injected_history[j];
    EXPECT_LE(std::abs(r.mass_in_domain_history[j] + r.mass_out_history[j] - inj) / inj, 1e-2);
  }
  EXPECT_LE(r.mass_balance_error(), 1e-2);
  // 1 Mt/yr over 1000 m for 8 years
  EXPECT_NEAR(r.mass_injected, 8e9 / 1000.0, 1e-6 * 8e6);
}

TEST(Simulate, TriggerTimeMonotoneInThreshold) {
  const auto m = layered(12);
  const auto base = simulate(m, FluidProps{}, InjectionSchedule{}, LeakConfig{});
  const double pmax = *std::max_element(base.seal_overpressure.begin(), base.seal_overpressure.end());
  ASSERT_GT(pmax, 0.0);
  double prev = -1.0;
  for (double frac : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    LeakConfig leak;
    leak.enabled = true;
    leak.p_threshold = frac * pmax;
    const auto r = simulate(m, FluidProps{}, InjectionSchedule{}, leak);
    ASSERT_TRUE(r.leak_triggered) << frac;
    EXPECT_GE(*r.trigger_time, prev);
    EXPECT_LE(*r.trigger_time, 8.0);
    prev = *r.trigger_time;
  }
}

TEST(Simulate, Deterministic) {
  const auto m = layered(13);
  LeakConfig leak;
  leak.enabled = true;
  leak.p_threshold = 1e5;
  const auto a = simulate(m, FluidProps{}, InjectionSchedule{}, leak);
  const auto b = simulate(m, FluidProps{}, InjectionSchedule{}, leak);
  EXPECT_EQ(a.saturation, b.saturation);
  EXPECT_EQ(a.pressure, b.pressure);
  EXPECT_EQ(a.trigger_time, b.trigger_time);
}

TEST(Simulate, RejectsBadInputs) {
  const auto m = layered(1);
  InjectionSchedule sch;
  sch.n_report = 1;
  EXPECT_THROW(simulate(m, FluidProps{}, sch, LeakConfig{}), InvalidArgument);
  LeakConfig leak;
  leak.k_multiplier = 1.0;
  EXPECT_THROW(simulate(m, FluidProps{}, InjectionSchedule{}, leak), InvalidArgument);
}

TEST(Threshold, FirstCrossingAndCalibration) {
  const std::vector<double> t{0, 1, 2, 3, 4};
  const std::vector<double> p{0, 10, 20, 15, 30};
  EXPECT_EQ(first_crossing(t, p, 12.0), 2.0);
  EXPECT_EQ(first_crossing(t, p, 30.0), 4.0);
  EXPECT_FALSE(first_crossing(t, p, 31.0).has_value());
  const double thr = calibrate_threshold(t, p, 2.5);
  EXPECT_NEAR(thr, 20.0, 1e-9);
  EXPECT_LE(*first_crossing(t, p, thr), 2.5);
  EXPECT_DOUBLE_EQ(calibrate_threshold(t, p, 10.0), 30.0);
}
