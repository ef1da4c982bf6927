#include "plume/geomodel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "plume/error.hpp"

namespace plume {

namespace {

constexpr double kVelocityMin = 1500.0;
constexpr double kVelocityMax = 5500.0;

// Smooth random undulation built from a few low-wavenumber sinusoids.
std::vector<double> undulation(std::mt19937_64& rng, int nx, double amplitude) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> out(nx, 0.0);
  for (int mode = 1; mode <= 3; ++mode) {
    const double amp = amplitude * (unit(rng) - 0.5) * 2.0 / mode;
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    for (int i = 0; i < nx; ++i) {
      out[i] += amp * std::sin(std::numbers::pi * mode * (i + 0.5) / nx + phase);
    }
  }
  return out;
}

}  // namespace

void GeoConfig::validate() const {
  if (n_layers < 3) throw InvalidArgument("geo: n_layers must be >= 3");
  if (!(seal_thickness_min > 0.0) || seal_thickness_max < seal_thickness_min)
    throw InvalidArgument("geo: invalid seal thickness range");
  if (seal_min_rows < 1) throw InvalidArgument("geo: seal_min_rows must be >= 1");
  if (!(seal_depth_fraction > 0.0 && seal_depth_fraction < 1.0))
    throw InvalidArgument("geo: seal_depth_fraction must lie in (0,1)");
  for (double v : {overburden_v_min, overburden_v_max, seal_v_min, seal_v_max, reservoir_v_min,
                   reservoir_v_max}) {
    if (v < kVelocityMin || v > kVelocityMax)
      throw InvalidArgument("geo: layer velocities must lie in [1500, 5500] m/s");
  }
  if (overburden_v_max < overburden_v_min || seal_v_max < seal_v_min ||
      reservoir_v_max < reservoir_v_min)
    throw InvalidArgument("geo: velocity ranges must be ordered (min <= max)");
  if (!(well_min_fraction >= 0.0 && well_max_fraction <= 1.0 &&
        well_min_fraction <= well_max_fraction))
    throw InvalidArgument("geo: invalid well window");
  if (!(fracture_offset_min >= 0.0 && fracture_offset_max >= fracture_offset_min))
    throw InvalidArgument("geo: invalid fracture offset range");
  if (n_baffles < 0) throw InvalidArgument("geo: n_baffles must be >= 0");
  if (!(baffle_thickness > 0.0)) throw InvalidArgument("geo: baffle_thickness must be > 0");
  if (!(rock.d_grain > 0.0 && rock.d_grain_seal > 0.0 && rock.d_grain_baffle > 0.0))
    throw InvalidArgument("geo: grain diameters must be positive");
}

double velocity_to_porosity(double v, const RockPhysics& rp) {
  if (!(v >= kVelocityMin && v <= kVelocityMax)) {
    throw InvalidArgument("velocity_to_porosity: velocity " + std::to_string(v) +
                          " outside [1500, 5500] m/s");
  }
  return std::clamp(rp.phi_max - rp.slope * (v - rp.v_ref), rp.phi_min, rp.phi_max);
}

double porosity_to_permeability(double phi, double d_grain) {
  if (!(phi > 0.0 && phi < 1.0)) {
    throw InvalidArgument("porosity_to_permeability: porosity must lie in (0,1)");
  }
  if (!(d_grain > 0.0)) throw InvalidArgument("porosity_to_permeability: d_grain must be > 0");
  const double one_minus = 1.0 - phi;
  return d_grain * d_grain * phi * phi * phi / (180.0 * one_minus * one_minus);
}

double EarthModel::median_reservoir_permeability() const {
  std::vector<double> k;
  for (int r = seal_rows.end; r < grid.nz; ++r)
    for (int i = 0; i < grid.nx; ++i) k.push_back(permeability(r, i));
  if (k.empty()) return 0.0;
  auto mid = k.begin() + static_cast<std::ptrdiff_t>(k.size() / 2);
  std::nth_element(k.begin(), mid, k.end());
  return *mid;
}

void EarthModel::check_invariants() const {
  const auto fail = [](const std::string& m) { throw InvalidArgument("EarthModel: " + m); };
  for (std::size_t c = 0; c < grid.cells(); ++c) {
    if (velocity[c] < kVelocityMin || velocity[c] > kVelocityMax) fail("velocity out of range");
    if (!(porosity[c] > 0.0 && porosity[c] <= 0.4)) fail("porosity out of range");
    if (!(permeability[c] > 0.0)) fail("non-positive permeability");
  }
  if (seal_rows.begin < 1 || seal_rows.end <= seal_rows.begin || seal_rows.end >= grid.nz)
    fail("invalid seal rows");
  const double kmed = median_reservoir_permeability();
  for (int r = seal_rows.begin; r < seal_rows.end; ++r)
    for (int i = 0; i < grid.nx; ++i)
      if (permeability(r, i) > 0.01 * kmed) fail("seal permeability above 1/100 of reservoir median");
  if (well_col < 0 || well_col >= grid.nx) fail("well column outside grid");
  if (fracture_col < 0 || fracture_col >= grid.nx) fail("fracture column outside grid");
  if (injection_rows.empty()) fail("no perforated rows");
  for (int r : injection_rows) {
    if (r < seal_rows.end || r >= grid.nz) fail("perforation outside reservoir");
    if (permeability(r, well_col) < kmed) fail("perforation in low-permeability cell");
  }
}

EarthModel make_layered_model(std::uint64_t seed, const Grid2D& grid, const GeoConfig& cfg) {
  grid.validate();
  cfg.validate();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double depth = grid.nz * grid.dz;
  const double seal_top_m =
      depth * (cfg.seal_depth_fraction + cfg.seal_depth_jitter * (2.0 * unit(rng) - 1.0));
  const double seal_thick_m = uniform(cfg.seal_thickness_min, cfg.seal_thickness_max);

  RowRange seal;
  seal.begin = std::max(1, static_cast<int>(std::lround(seal_top_m / grid.dz)));
  const int seal_rows_n =
      std::max(cfg.seal_min_rows, static_cast<int>(std::lround(seal_thick_m / grid.dz)));
  seal.end = seal.begin + seal_rows_n;
  if (seal.end > grid.nz - 8 || seal.end < 8) {
    throw InvalidArgument("make_layered_model: grid of " + std::to_string(grid.nz) +
                          " rows cannot hold overburden+seal and reservoir with >= 8 rows each");
  }

  const int n_over = std::max(1, (cfg.n_layers - 1) / 2);
  const int n_res = std::max(1, cfg.n_layers - 1 - n_over);

  // Interface depths (m) per column: overburden interfaces between 0 and seal
  // top, reservoir interfaces between seal base and bottom.
  const double seal_top_depth = seal.begin * grid.dz;
  const double seal_base_depth = seal.end * grid.dz;
  const auto make_interfaces = [&](int n, double top, double bottom) {
    std::vector<std::vector<double>> ifs;
    for (int j = 1; j < n; ++j) {
      const double base = top + (bottom - top) * (j + 0.3 * (unit(rng) - 0.5)) / n;
      auto wiggle = undulation(rng, grid.nx, cfg.interface_amplitude);
      for (double& w : wiggle) w = std::clamp(base + w, top + 0.5 * grid.dz, bottom - 0.5 * grid.dz);
      ifs.push_back(std::move(wiggle));
    }
    return ifs;
  };
  const auto over_ifs = make_interfaces(n_over, 0.0, seal_top_depth);
  const auto res_ifs = make_interfaces(n_res, seal_base_depth, depth);

  std::vector<double> over_v(n_over), res_v(n_res);
  for (int j = 0; j < n_over; ++j) {
    // Mild compaction trend: deeper overburden layers are faster on average.
    const double t = (j + unit(rng)) / n_over;
    over_v[j] = cfg.overburden_v_min + t * (cfg.overburden_v_max - cfg.overburden_v_min);
  }
  for (int j = 0; j < n_res; ++j) res_v[j] = uniform(cfg.reservoir_v_min, cfg.reservoir_v_max);
  // At least one fast-flowing reservoir layer so the injector has a target.
  {
    const int fast = static_cast<int>(unit(rng) * n_res) % n_res;
    res_v[fast] = uniform(cfg.reservoir_v_min, 0.5 * (cfg.reservoir_v_min + cfg.reservoir_v_max));
  }
  const double seal_v = uniform(cfg.seal_v_min, cfg.seal_v_max);
  const double seal_grad = uniform(-0.02, 0.02);  // lateral trend in seal velocity

  // Shale interbeds: evenly spaced through the overburden, following the
  // interface undulation. They slow vertical migration above a breached seal
  // so leaked CO2 spreads laterally instead of rising as a single column.
  std::vector<std::vector<int>> baffle_top;
  const int baffle_rows = std::max(1, static_cast<int>(std::lround(cfg.baffle_thickness / grid.dz)));
  const int baffle_room = seal.begin - 1 - baffle_rows;
  for (int b = 1; b <= cfg.n_baffles && baffle_room >= 1; ++b) {
    const double base = seal_top_depth * b / (cfg.n_baffles + 1);
    const auto wiggle = undulation(rng, grid.nx, 0.5 * cfg.interface_amplitude);
    std::vector<int> top(grid.nx);
    for (int i = 0; i < grid.nx; ++i)
      top[i] = std::clamp(static_cast<int>(std::floor((base + wiggle[i]) / grid.dz)), 1, baffle_room);
    baffle_top.push_back(std::move(top));
  }
  const auto in_baffle = [&](int k, int i) {
    for (const auto& top : baffle_top)
      if (k >= top[i] && k < top[i] + baffle_rows) return true;
    return false;
  };

  EarthModel m;
  m.grid = grid;
  m.seed = seed;
  m.seal_rows = seal;
  m.velocity = Field2D(grid);
  m.porosity = Field2D(grid);
  m.permeability = Field2D(grid);

  std::normal_distribution<double> jitter(0.0, 1.0);
  for (int k = 0; k < grid.nz; ++k) {
    const double zc = (k + 0.5) * grid.dz;
    for (int i = 0; i < grid.nx; ++i) {
      double v;
      double lo = kVelocityMin;
      double hi = kVelocityMax;
      if (seal.contains(k)) {
        v = seal_v * (1.0 + seal_grad * ((i + 0.5) / grid.nx - 0.5));
        lo = cfg.seal_v_min;
        hi = cfg.seal_v_max;
      } else if (k < seal.begin) {
        int layer = 0;
        while (layer < static_cast<int>(over_ifs.size()) && zc > over_ifs[layer][i]) ++layer;
        v = over_v[layer];
        lo = cfg.overburden_v_min;
        hi = cfg.overburden_v_max;
      } else {
        int layer = 0;
        while (layer < static_cast<int>(res_ifs.size()) && zc > res_ifs[layer][i]) ++layer;
        v = res_v[layer];
        lo = cfg.reservoir_v_min;
        hi = cfg.reservoir_v_max;
      }
      v = std::clamp(v + cfg.velocity_noise * jitter(rng), lo, hi);
      m.velocity(k, i) = v;
      const double phi = velocity_to_porosity(v, cfg.rock);
      m.porosity(k, i) = phi;
      const double d = seal.contains(k)   ? cfg.rock.d_grain_seal
                       : in_baffle(k, i) ? cfg.rock.d_grain_baffle
                                         : cfg.rock.d_grain;
      m.permeability(k, i) = porosity_to_permeability(phi, d);
    }
  }

  // Seal must stay at most 1/100 of the reservoir median.
  const double kmed = m.median_reservoir_permeability();
  for (int k = seal.begin; k < seal.end; ++k)
    for (int i = 0; i < grid.nx; ++i)
      m.permeability(k, i) = std::min(m.permeability(k, i), 0.01 * kmed);

  // Injector: the column in the lateral window with the most high-permeability
  // reservoir cells; ties broken by a seeded draw.
  const int w_lo = std::clamp(static_cast<int>(cfg.well_min_fraction * grid.nx), 1, grid.nx - 2);
  const int w_hi = std::clamp(static_cast<int>(cfg.well_max_fraction * grid.nx), w_lo, grid.nx - 2);
  const int start = w_lo + static_cast<int>(unit(rng) * (w_hi - w_lo + 1)) % (w_hi - w_lo + 1);
  int best_col = start;
  int best_count = -1;
  for (int n = 0; n <= w_hi - w_lo; ++n) {
    const int i = w_lo + (start - w_lo + n) % (w_hi - w_lo + 1);
    int count = 0;
    for (int k = seal.end + 1; k < grid.nz; ++k) count += m.permeability(k, i) >= kmed;
    if (count > best_count) {
      best_count = count;
      best_col = i;
    }
  }
  m.well_col = best_col;
  // Perforate the lower part of the high-permeability interval (keeps the
  // cell directly under the seal unperforated).
  std::vector<int> hi_rows;
  for (int k = seal.end + 1; k < grid.nz; ++k)
    if (m.permeability(k, m.well_col) >= kmed) hi_rows.push_back(k);
  if (hi_rows.empty()) {
    int best = seal.end + 1;
    for (int k = seal.end + 1; k < grid.nz; ++k)
      if (m.permeability(k, m.well_col) > m.permeability(best, m.well_col)) best = k;
    m.permeability(best, m.well_col) = std::max(m.permeability(best, m.well_col), kmed);
    hi_rows.push_back(best);
  }
  const std::size_t keep = std::max<std::size_t>(1, (hi_rows.size() + 1) / 2);
  m.injection_rows.assign(hi_rows.end() - static_cast<std::ptrdiff_t>(keep), hi_rows.end());

  const double off_frac = uniform(cfg.fracture_offset_min, cfg.fracture_offset_max);
  const int off = std::max(1, static_cast<int>(std::lround(off_frac * grid.nx)));
  const int sign = unit(rng) < 0.5 ? -1 : 1;
  int frac = m.well_col + sign * off;
  if (frac < 1 || frac > grid.nx - 2) frac = m.well_col - sign * off;
  m.fracture_col = std::clamp(frac, 1, grid.nx - 2);

  return m;
}

}  // namespace plume
