#include "plume/resim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "plume/error.hpp"

namespace plume {

namespace {

double harmonic(double a, double b) { return (a > 0.0 && b > 0.0) ? 2.0 * a * b / (a + b) : 0.0; }

double relperm(double s, double n) {
  if (n == 2.0) return s * s;
  return std::pow(s, n);
}

// Geometric transmissibilities (m^2 per metre, mobility excluded) and the
// buoyancy coefficients of the vertical faces.
struct Transmissibility {
  int nx = 0;
  int nz = 0;
  std::vector<double> tx;  // nz * (nx + 1); boundary entries are zero
  std::vector<double> tz;  // (nz + 1) * nx; row 0 is the Dirichlet top
  std::vector<double> gz;  // (nz + 1) * nx; K_face * dx * (rho_w - rho_g) * g

  Transmissibility(const EarthModel& m, const FluidProps& p)
      : nx(m.grid.nx), nz(m.grid.nz),
        tx(static_cast<std::size_t>(nz) * (nx + 1), 0.0),
        tz(static_cast<std::size_t>(nz + 1) * nx, 0.0),
        gz(static_cast<std::size_t>(nz + 1) * nx, 0.0) {
    const double dx = m.grid.dx;
    const double dz = m.grid.dz;
    const double buoy = (p.rho_brine - p.rho_co2) * p.gravity;
    for (int k = 0; k < nz; ++k)
      for (int i = 1; i < nx; ++i)
        tx[static_cast<std::size_t>(k) * (nx + 1) + i] =
            harmonic(m.permeability(k, i - 1), m.permeability(k, i)) * dz / dx;
    for (int i = 0; i < nx; ++i) {
      tz[i] = m.permeability(0, i) * dx / (0.5 * dz);
      gz[i] = m.permeability(0, i) * dx * buoy;
    }
    for (int k = 1; k < nz; ++k)
      for (int i = 0; i < nx; ++i) {
        const double kh = harmonic(m.permeability(k - 1, i), m.permeability(k, i));
        tz[static_cast<std::size_t>(k) * nx + i] = kh * dx / dz;
        gz[static_cast<std::size_t>(k) * nx + i] = kh * dx * buoy;
      }
  }
};

// Lipschitz bounds of the upwind flux functions, used for the CFL limit.
struct FluxBounds {
  double df_max = 0.0;  // max |f'(s)|
  double dh_max = 0.0;  // max partial of lg(a) lw(b) / (lg(a) + lw(b))

  explicit FluxBounds(const FluidProps& p) {
    const double n = p.corey_exponent;
    const auto lg = [&](double s) { return relperm(s, n) / p.mu_co2; };
    const auto lw = [&](double s) { return relperm(1.0 - s, n) / p.mu_brine; };
    const auto dlg = [&](double s) { return n * std::pow(s, n - 1.0) / p.mu_co2; };
    const auto dlw = [&](double s) { return -n * std::pow(1.0 - s, n - 1.0) / p.mu_brine; };
    constexpr int kSamples = 400;
    for (int a = 0; a <= kSamples; ++a) {
      const double s = static_cast<double>(a) / kSamples;
      const double g = lg(s), w = lw(s), tot = g + w;
      df_max = std::max(df_max, std::abs(dlg(s) * w - g * dlw(s)) / (tot * tot));
    }
    constexpr int kGrid = 100;
    for (int a = 0; a <= kGrid; ++a) {
      const double sa = static_cast<double>(a) / kGrid;
      for (int b = 0; b <= kGrid; ++b) {
        const double sb = static_cast<double>(b) / kGrid;
        const double g = lg(sa), w = lw(sb), tot = g + w;
        if (tot <= 0.0) continue;
        const double inv2 = 1.0 / (tot * tot);
        dh_max = std::max(dh_max, std::abs(dlg(sa)) * w * w * inv2);
        dh_max = std::max(dh_max, std::abs(dlw(sb)) * g * g * inv2);
      }
    }
    // Sampling can miss the true maximum by a little.
    df_max *= 1.05;
    dh_max *= 1.05;
  }
};

struct Mobilities {
  std::vector<double> lg, lw;
  Mobilities(const Field2D& s, const FluidProps& p) : lg(s.size()), lw(s.size()) {
    for (std::size_t c = 0; c < s.size(); ++c) {
      lg[c] = relperm(s[c], p.corey_exponent) / p.mu_co2;
      lw[c] = relperm(1.0 - s[c], p.corey_exponent) / p.mu_brine;
    }
  }
};

// IC(0)-preconditioned conjugate gradient on the 5-point system
//   diag[c] x_c - wx[c] x_{c+1} - wz[c] x_{c+nx} = b_c   (symmetric).
struct FivePointSystem {
  int nx = 0;
  int nz = 0;
  std::vector<double> diag, wx, wz, rhs;

  std::size_t n() const { return diag.size(); }

  void apply(const std::vector<double>& x, std::vector<double>& y) const {
    for (int k = 0; k < nz; ++k) {
      const std::size_t row = static_cast<std::size_t>(k) * nx;
      const double* xr = x.data() + row;
      double* yr = y.data() + row;
      const double* d = diag.data() + row;
      const double* ax = wx.data() + row;
      const double* az = wz.data() + row;
      for (int i = 0; i < nx; ++i) yr[i] = d[i] * xr[i];
      for (int i = 0; i + 1 < nx; ++i) yr[i] -= ax[i] * xr[i + 1];
      for (int i = 1; i < nx; ++i) yr[i] -= ax[i - 1] * xr[i - 1];
      if (k + 1 < nz)
        for (int i = 0; i < nx; ++i) yr[i] -= az[i] * xr[i + nx];
      if (k > 0)
        for (int i = 0; i < nx; ++i) yr[i] -= az[i - nx] * xr[i - nx];
    }
  }

  // IC(0) factor L in scaled form. Forward sweep per row is the recurrence
  //   z_i = u_i + mf_i z_{i-1},  u_i = (r_i + lz_{i-nx} z_{i-nx}) / L_ii,
  // and the backward sweep mirrors it with mb_i = lx_i / L_ii.
  struct Factor {
    std::vector<double> inv_l, lz, mf, mb;
  };

  Factor factor() const {
    const std::size_t N = n();
    Factor f{std::vector<double>(N), std::vector<double>(N), std::vector<double>(N, 0.0),
             std::vector<double>(N, 0.0)};
    std::vector<double> lx(N);
    for (int k = 0; k < nz; ++k) {
      for (int i = 0; i < nx; ++i) {
        const std::size_t c = static_cast<std::size_t>(k) * nx + i;
        double d = diag[c];
        if (i > 0) d -= lx[c - 1] * lx[c - 1];
        if (k > 0) d -= f.lz[c - nx] * f.lz[c - nx];
        const double l = std::sqrt(std::max(d, 1e-12 * diag[c]));
        f.inv_l[c] = 1.0 / l;
        lx[c] = wx[c] / l;
        f.lz[c] = wz[c] / l;
        if (i > 0) f.mf[c] = lx[c - 1] / l;
        f.mb[c] = lx[c] / l;
      }
    }
    return f;
  }

  void precondition(const Factor& f, const std::vector<double>& r, std::vector<double>& z) const {
    for (int k = 0; k < nz; ++k) {
      const std::size_t row = static_cast<std::size_t>(k) * nx;
      double* zr = z.data() + row;
      const double* rr = r.data() + row;
      const double* il = f.inv_l.data() + row;
      if (k > 0) {
        const double* lzu = f.lz.data() + row - nx;
        const double* zu = zr - nx;
        for (int i = 0; i < nx; ++i) zr[i] = (rr[i] + lzu[i] * zu[i]) * il[i];
      } else {
        for (int i = 0; i < nx; ++i) zr[i] = rr[i] * il[i];
      }
      const double* m = f.mf.data() + row;
      double prev = 0.0;
      for (int i = 0; i < nx; ++i) prev = zr[i] = zr[i] + m[i] * prev;
    }
    for (int k = nz - 1; k >= 0; --k) {
      const std::size_t row = static_cast<std::size_t>(k) * nx;
      double* zr = z.data() + row;
      const double* il = f.inv_l.data() + row;
      if (k + 1 < nz) {
        const double* lz = f.lz.data() + row;
        const double* zd = zr + nx;
        for (int i = 0; i < nx; ++i) zr[i] = (zr[i] + lz[i] * zd[i]) * il[i];
      } else {
        for (int i = 0; i < nx; ++i) zr[i] *= il[i];
      }
      const double* m = f.mb.data() + row;
      double next = 0.0;
      for (int i = nx - 1; i >= 0; --i) next = zr[i] = zr[i] + m[i] * next;
    }
  }

  // Returns (iterations, relative residual); x holds the initial guess on entry.
  std::pair<int, double> solve(std::vector<double>& x, double tol, int max_iter) const {
    const std::size_t N = n();
    double bnorm = 0.0;
    for (double v : rhs) bnorm += v * v;
    bnorm = std::sqrt(bnorm);
    if (bnorm == 0.0) {
      std::fill(x.begin(), x.end(), 0.0);
      return {0, 0.0};
    }
    const auto fac = factor();
    std::vector<double> r(N), z(N), p(N), q(N);
    apply(x, q);
    double rr = 0.0;
    for (std::size_t c = 0; c < N; ++c) {
      r[c] = rhs[c] - q[c];
      rr += r[c] * r[c];
    }
    if (std::sqrt(rr) <= tol * bnorm) return {0, std::sqrt(rr) / bnorm};
    precondition(fac, r, z);
    p = z;
    double rz = 0.0;
    for (std::size_t c = 0; c < N; ++c) rz += r[c] * z[c];
    for (int it = 1; it <= max_iter; ++it) {
      apply(p, q);
      double pq = 0.0;
      for (std::size_t c = 0; c < N; ++c) pq += p[c] * q[c];
      const double alpha = rz / pq;
      rr = 0.0;
      for (std::size_t c = 0; c < N; ++c) {
        x[c] += alpha * p[c];
        r[c] -= alpha * q[c];
        rr += r[c] * r[c];
      }
      const double rel = std::sqrt(rr) / bnorm;
      if (rel <= tol) return {it, rel};
      precondition(fac, r, z);
      double rz_new = 0.0;
      for (std::size_t c = 0; c < N; ++c) rz_new += r[c] * z[c];
      const double beta = rz_new / rz;
      rz = rz_new;
      for (std::size_t c = 0; c < N; ++c) p[c] = z[c] + beta * p[c];
    }
    throw SolverError("pressure_solve: conjugate gradient did not converge (relative residual " +
                          std::to_string(std::sqrt(rr) / bnorm) + ")",
                      std::sqrt(rr) / bnorm, max_iter);
  }
};

PressureSolution solve_pressure(const EarthModel& model, const Transmissibility& tr,
                                const Field2D& s, const FluidProps& p,
                                const std::vector<CellSource>& sources, const SolverOptions& opts,
                                const Field2D* guess) {
  const int nx = model.grid.nx;
  const int nz = model.grid.nz;
  const double dz = model.grid.dz;
  const Mobilities mob(s, p);

  FivePointSystem sys;
  sys.nx = nx;
  sys.nz = nz;
  const std::size_t N = model.grid.cells();
  sys.diag.assign(N, 0.0);
  sys.wx.assign(N, 0.0);
  sys.wz.assign(N, 0.0);
  sys.rhs.assign(N, 0.0);

  // Face mobility and the buoyancy head (rho_w - rho_face) g * distance.
  const auto face = [&](std::size_t a, std::size_t b, double dist, double& lam, double& head) {
    const double lg = 0.5 * (mob.lg[a] + mob.lg[b]);
    const double lw = 0.5 * (mob.lw[a] + mob.lw[b]);
    lam = lg + lw;
    const double rho = (lg * p.rho_co2 + lw * p.rho_brine) / lam;
    head = (p.rho_brine - rho) * p.gravity * dist;
  };

  std::vector<double> wxf(N, 0.0), wzf(N + nx, 0.0), hz(N + nx, 0.0);
  for (int k = 0; k < nz; ++k) {
    for (int i = 0; i < nx; ++i) {
      const std::size_t c = static_cast<std::size_t>(k) * nx + i;
      if (i + 1 < nx) {
        double lam, head;
        face(c, c + 1, 0.0, lam, head);
        const double w = tr.tx[static_cast<std::size_t>(k) * (nx + 1) + i + 1] * lam;
        sys.wx[c] = w;
        sys.diag[c] += w;
        sys.diag[c + 1] += w;
      }
      if (k == 0) {
        double lam, head;
        face(c, c, 0.5 * dz, lam, head);
        const double w = tr.tz[i] * lam;
        sys.diag[c] += w;
        sys.rhs[c] -= w * head;
        wzf[i] = w;
        hz[i] = head;
      }
      if (k + 1 < nz) {
        double lam, head;
        face(c, c + nx, dz, lam, head);
        const std::size_t f = static_cast<std::size_t>(k + 1) * nx + i;
        const double w = tr.tz[f] * lam;
        sys.wz[c] = w;
        sys.diag[c] += w;
        sys.diag[c + nx] += w;
        sys.rhs[c] += w * head;
        sys.rhs[c + nx] -= w * head;
        wzf[f] = w;
        hz[f] = head;
      }
    }
  }
  for (const auto& src : sources) sys.rhs[static_cast<std::size_t>(src.k) * nx + src.i] += src.rate;

  std::vector<double> delta(N, 0.0);
  if (guess != nullptr && guess->size() == N) delta = guess->raw();
  const auto [iters, resid] = sys.solve(delta, opts.cg_tolerance, opts.cg_max_iterations);

  PressureSolution out;
  out.iterations = iters;
  out.residual = resid;
  out.overpressure = Field2D(nx, nz);
  out.overpressure.raw() = delta;
  out.pressure = Field2D(nx, nz);
  for (int k = 0; k < nz; ++k) {
    const double ph = hydrostatic_pressure((k + 0.5) * dz, p, opts);
    for (int i = 0; i < nx; ++i) out.pressure(k, i) = ph + out.overpressure(k, i);
  }
  out.flux = FaceFluxes(nx, nz);
  for (int k = 0; k < nz; ++k) {
    for (int i = 1; i < nx; ++i) {
      const std::size_t c = static_cast<std::size_t>(k) * nx + i;
      out.flux.xf(k, i) = sys.wx[c - 1] * (delta[c - 1] - delta[c]);
    }
  }
  for (int i = 0; i < nx; ++i) out.flux.zf(0, i) = -wzf[i] * (delta[i] + hz[i]);
  for (int k = 1; k < nz; ++k) {
    for (int i = 0; i < nx; ++i) {
      const std::size_t f = static_cast<std::size_t>(k) * nx + i;
      const std::size_t up = f - nx;
      out.flux.zf(k, i) = wzf[f] * (delta[up] - delta[f] - hz[f]);
    }
  }
  return out;
}

// One transport interval of dt seconds, sub-stepped to the CFL limit.
Field2D advance(const Field2D& s0, const FaceFluxes& flux, const EarthModel& model,
                const Transmissibility& tr, const FluxBounds& bounds, const FluidProps& p,
                double dt, const std::vector<CellSource>& sources, double cfl,
                TransportReport* report) {
  const int nx = model.grid.nx;
  const int nz = model.grid.nz;
  const std::size_t N = model.grid.cells();
  const double vol = model.grid.dx * model.grid.dz;
  const bool buoyant = p.gravity != 0.0 && p.rho_brine != p.rho_co2;

  // CFL rate per cell: sum over adjacent faces of the flux Lipschitz bounds.
  std::vector<double> rate(N, 0.0);
  for (int k = 0; k < nz; ++k) {
    for (int i = 0; i <= nx; ++i) {
      const double a = std::abs(flux.xf(k, i)) * bounds.df_max;
      if (i > 0) rate[static_cast<std::size_t>(k) * nx + i - 1] += a;
      if (i < nx) rate[static_cast<std::size_t>(k) * nx + i] += a;
    }
  }
  for (int k = 0; k <= nz; ++k) {
    for (int i = 0; i < nx; ++i) {
      double a = std::abs(flux.zf(k, i)) * bounds.df_max;
      if (buoyant && k < nz) a += std::abs(tr.gz[static_cast<std::size_t>(k) * nx + i]) * bounds.dh_max;
      if (k > 0) rate[static_cast<std::size_t>(k - 1) * nx + i] += a;
      if (k < nz) rate[static_cast<std::size_t>(k) * nx + i] += a;
    }
  }
  double max_rate = 0.0;
  for (std::size_t c = 0; c < N; ++c)
    max_rate = std::max(max_rate, rate[c] / (model.porosity[c] * vol));
  const int nsub = max_rate > 0.0 ? std::max(1, static_cast<int>(std::ceil(dt * max_rate / cfl))) : 1;
  const double h = dt / nsub;

  Field2D s = s0;
  std::vector<double> f(N), lg(N), lw(N), dv(N);
  double injected = 0.0;
  double outflow = 0.0;
  double src_total = 0.0;
  for (const auto& src : sources) src_total += src.rate;

  for (int step = 0; step < nsub; ++step) {
    for (std::size_t c = 0; c < N; ++c) {
      lg[c] = relperm(s[c], p.corey_exponent) / p.mu_co2;
      lw[c] = relperm(1.0 - s[c], p.corey_exponent) / p.mu_brine;
      const double tot = lg[c] + lw[c];
      f[c] = tot > 0.0 ? lg[c] / tot : 0.0;
    }
    std::fill(dv.begin(), dv.end(), 0.0);
    for (const auto& src : sources) dv[static_cast<std::size_t>(src.k) * nx + src.i] += src.rate;
    double out = 0.0;

    for (int k = 0; k < nz; ++k) {
      const std::size_t row = static_cast<std::size_t>(k) * nx;
      // Left / right boundaries: exterior fluid is brine.
      {
        const double u = flux.xf(k, 0);
        if (u < 0.0) {
          const double F = f[row] * u;
          dv[row] += F;
          out -= F;
        }
        const double ur = flux.xf(k, nx);
        if (ur > 0.0) {
          const double F = f[row + nx - 1] * ur;
          dv[row + nx - 1] -= F;
          out += F;
        }
      }
      for (int i = 1; i < nx; ++i) {
        const double u = flux.xf(k, i);
        const std::size_t l = row + i - 1;
        const double F = (u > 0.0 ? f[l] : f[l + 1]) * u;
        dv[l] -= F;
        dv[l + 1] += F;
      }
    }
    // Top boundary (exterior brine above).
    for (int i = 0; i < nx; ++i) {
      const double u = flux.zf(0, i);
      double F = u > 0.0 ? 0.0 : f[i] * u;
      if (buoyant) {
        const double g = lg[i];
        const double w = 1.0 / p.mu_brine;
        F -= tr.gz[i] * (g > 0.0 ? g * w / (g + w) : 0.0);
      }
      dv[i] += F;
      out -= F;
    }
    for (int k = 1; k < nz; ++k) {
      for (int i = 0; i < nx; ++i) {
        const std::size_t d = static_cast<std::size_t>(k) * nx + i;
        const std::size_t u_ = d - nx;
        const double u = flux.zf(k, i);
        double F = (u > 0.0 ? f[u_] : f[d]) * u;
        if (buoyant) {
          const double g = lg[d];
          const double w = lw[u_];
          const double tot = g + w;
          F -= tr.gz[d] * (tot > 0.0 ? g * w / tot : 0.0);
        }
        dv[u_] -= F;
        dv[d] += F;
      }
    }
    // Bottom boundary.
    for (int i = 0; i < nx; ++i) {
      const double u = flux.zf(nz, i);
      const std::size_t c = static_cast<std::size_t>(nz - 1) * nx + i;
      if (u > 0.0) {
        const double F = f[c] * u;
        dv[c] -= F;
        out += F;
      }
    }

    for (std::size_t c = 0; c < N; ++c) {
      const double v = s[c] + h * dv[c] / (model.porosity[c] * vol);
      s[c] = std::clamp(v, 0.0, 1.0);
    }
    injected += h * src_total;
    outflow += h * out;
  }
  if (report != nullptr) {
    report->substeps += nsub;
    report->injected_volume += injected;
    report->outflow_volume += outflow;
  }
  return s;
}

double co2_volume(const Field2D& s, const EarthModel& m) {
  double v = 0.0;
  for (std::size_t c = 0; c < s.size(); ++c) v += m.porosity[c] * s[c];
  return v * m.grid.dx * m.grid.dz;
}

void check_saturation(const Field2D& s, const EarthModel& m, const char* who) {
  if (s.nx() != m.grid.nx || s.nz() != m.grid.nz)
    throw InvalidArgument(std::string(who) + ": saturation field does not match the model grid");
}

}  // namespace

void FluidProps::validate() const {
  if (!(mu_brine > 0 && mu_co2 > 0 && rho_brine > 0 && rho_co2 > 0 && corey_exponent > 0))
    throw InvalidArgument("fluid: properties must be strictly positive");
  if (!(mu_co2 < mu_brine)) throw InvalidArgument("fluid: mu_co2 must be below mu_brine");
  if (!(rho_co2 < rho_brine)) throw InvalidArgument("fluid: rho_co2 must be below rho_brine");
  if (gravity < 0) throw InvalidArgument("fluid: gravity must be >= 0");
}

void InjectionSchedule::validate() const {
  if (!(rate >= 0.0)) throw InvalidArgument("schedule: rate must be >= 0");
  if (!(duration > 0.0)) throw InvalidArgument("schedule: duration must be > 0");
  if (n_report < 2) throw InvalidArgument("schedule: n_report must be >= 2");
  if (pressure_steps < 1) throw InvalidArgument("schedule: pressure_steps must be >= 1");
}

void LeakConfig::validate() const {
  if (!(p_threshold >= 0.0)) throw InvalidArgument("leak: p_threshold must be >= 0");
  if (!(k_multiplier > 1.0)) throw InvalidArgument("leak: k_multiplier must be > 1");
}

double SimResult::mass_balance_error() const {
  if (mass_injected <= 0.0) return std::abs(mass_in_domain + mass_out_boundaries);
  return std::abs(mass_in_domain + mass_out_boundaries - mass_injected) / mass_injected;
}

double co2_mobility(double s, const FluidProps& props) {
  return relperm(s, props.corey_exponent) / props.mu_co2;
}

double brine_mobility(double s, const FluidProps& props) {
  return relperm(1.0 - s, props.corey_exponent) / props.mu_brine;
}

double fractional_flow(double s, const FluidProps& props) {
  if (!(s >= 0.0 && s <= 1.0)) throw InvalidArgument("fractional_flow: saturation outside [0,1]");
  const double g = co2_mobility(s, props);
  const double w = brine_mobility(s, props);
  return g / (g + w);
}

double hydrostatic_pressure(double z, const FluidProps& props, const SolverOptions& opts) {
  return opts.p_surface + props.rho_brine * props.gravity * z;
}

std::vector<CellSource> well_sources(const EarthModel& model, const FluidProps& props,
                                     const InjectionSchedule& schedule) {
  std::vector<CellSource> out;
  if (schedule.rate <= 0.0 || model.injection_rows.empty()) return out;
  double ksum = 0.0;
  for (int k : model.injection_rows) ksum += model.permeability(k, model.well_col);
  const double q = schedule.rate / props.rho_co2;
  for (int k : model.injection_rows)
    out.push_back({k, model.well_col, q * model.permeability(k, model.well_col) / ksum});
  return out;
}

PressureSolution pressure_solve(const EarthModel& model, const Field2D& s, const FluidProps& props,
                                const std::vector<CellSource>& sources, const SolverOptions& opts,
                                const Field2D* initial_overpressure) {
  check_saturation(s, model, "pressure_solve");
  props.validate();
  const Transmissibility tr(model, props);
  return solve_pressure(model, tr, s, props, sources, opts, initial_overpressure);
}

Field2D pressure_solve(const EarthModel& model, const Field2D& s, const FluidProps& props,
                       const InjectionSchedule& schedule) {
  schedule.validate();
  return pressure_solve(model, s, props, well_sources(model, props, schedule)).pressure;
}

Field2D transport_step(const Field2D& s, const FaceFluxes& flux, const EarthModel& model,
                       const FluidProps& props, double dt, const std::vector<CellSource>& sources,
                       const SolverOptions& opts, TransportReport* report) {
  check_saturation(s, model, "transport_step");
  props.validate();
  if (flux.nx != model.grid.nx || flux.nz != model.grid.nz)
    throw InvalidArgument("transport_step: flux field does not match the model grid");
  if (!(dt >= 0.0)) throw InvalidArgument("transport_step: dt must be >= 0");
  const Transmissibility tr(model, props);
  const FluxBounds bounds(props);
  return advance(s, flux, model, tr, bounds, props, dt, sources, opts.cfl, report);
}

SimResult simulate(const EarthModel& model, const FluidProps& props,
                   const InjectionSchedule& schedule, const LeakConfig& leak,
                   const SolverOptions& opts) {
  props.validate();
  schedule.validate();
  leak.validate();
  model.grid.validate();

  EarthModel m = model;
  Transmissibility tr(m, props);
  const FluxBounds bounds(props);
  const auto sources = well_sources(m, props, schedule);
  const int seal_base = m.seal_rows.end - 1;

  SimResult res;
  Field2D s(m.grid);
  const double total = schedule.duration * kSecondsPerYear;
  const double dt_p = total / schedule.pressure_steps;
  double injected_vol = 0.0;
  double out_vol = 0.0;

  std::vector<double> report_times(schedule.n_report);
  for (int j = 0; j < schedule.n_report; ++j)
    report_times[j] = total * j / (schedule.n_report - 1);
  std::size_t next_report = 0;

  PressureSolution ps;
  bool have_guess = false;
  const auto solve = [&](double t) {
    ps = solve_pressure(m, tr, s, props, sources, opts, have_guess ? &ps.overpressure : nullptr);
    have_guess = true;
    res.cg_iterations += ps.iterations;
    res.seal_pressure_times.push_back(t / kSecondsPerYear);
    res.seal_overpressure.push_back(ps.overpressure(seal_base, m.well_col));
    if (leak.enabled && !res.leak_triggered &&
        ps.overpressure(seal_base, m.well_col) >= leak.p_threshold) {
      res.leak_triggered = true;
      res.trigger_time = t / kSecondsPerYear;
      for (int k = m.seal_rows.begin; k < m.seal_rows.end; ++k)
        m.permeability(k, m.fracture_col) *= leak.k_multiplier;
      tr = Transmissibility(m, props);
      ps = solve_pressure(m, tr, s, props, sources, opts, &ps.overpressure);
      res.cg_iterations += ps.iterations;
    }
  };
  const auto snapshot = [&](double t) {
    res.times.push_back(t / kSecondsPerYear);
    res.saturation.push_back(s);
    res.pressure.push_back(ps.pressure);
    res.overpressure.push_back(ps.overpressure);
    res.mass_injected_history.push_back(injected_vol * props.rho_co2);
    res.mass_in_domain_history.push_back(co2_volume(s, m) * props.rho_co2);
    res.mass_out_history.push_back(out_vol * props.rho_co2);
  };

  TransportReport rep;
  for (int step = 0; step < schedule.pressure_steps; ++step) {
    const double t0 = dt_p * step;
    const double t1 = step + 1 == schedule.pressure_steps ? total : dt_p * (step + 1);
    solve(t0);
    double t = t0;
    while (true) {
      if (next_report < report_times.size() && report_times[next_report] <= t + 1e-9 * dt_p) {
        if (next_report + 1 < report_times.size()) snapshot(t);
        ++next_report;
        continue;
      }
      double t_end = t1;
      if (next_report < report_times.size() && report_times[next_report] < t1 - 1e-9 * dt_p)
        t_end = report_times[next_report];
      if (t_end <= t) break;
      rep = TransportReport{};
      s = advance(s, ps.flux, m, tr, bounds, props, t_end - t, sources, opts.cfl, &rep);
      res.transport_substeps += rep.substeps;
      injected_vol += rep.injected_volume;
      out_vol += rep.outflow_volume;
      t = t_end;
      if (t_end >= t1) break;
    }
  }
  // Final snapshot with a pressure field consistent with the final saturation.
  solve(total);
  snapshot(total);

  res.mass_injected = injected_vol * props.rho_co2;
  res.mass_in_domain = co2_volume(s, m) * props.rho_co2;
  res.mass_out_boundaries = out_vol * props.rho_co2;
  return res;
}

std::optional<double> first_crossing(const std::vector<double>& times,
                                     const std::vector<double>& overpressure, double threshold) {
  for (std::size_t j = 0; j < times.size() && j < overpressure.size(); ++j)
    if (overpressure[j] >= threshold) return times[j];
  return std::nullopt;
}

double calibrate_threshold(const std::vector<double>& times,
                           const std::vector<double>& overpressure, double target_time,
                           int iterations) {
  if (times.empty() || overpressure.size() != times.size())
    throw InvalidArgument("calibrate_threshold: empty or mismatched history");
  double lo = 0.0;  // always triggers at the first sample
  double hi = *std::max_element(overpressure.begin(), overpressure.end());
  const auto ok = [&](double thr) {
    const auto t = first_crossing(times, overpressure, thr);
    return t.has_value() && *t <= target_time;
  };
  if (ok(hi)) return hi;
  for (int it = 0; it < iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    (ok(mid) ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace plume
