#include "plume/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "plume/error.hpp"
#include "plume/seed.hpp"

namespace plume {

namespace {

void require_same(const Field2D& a, const Field2D& b, const char* what) {
  if (!a.same_shape(b)) throw InvalidArgument(std::string(what) + ": shape mismatch");
}

std::vector<double> gaussian_taps(double sigma, int half) {
  std::vector<double> w(2 * half + 1);
  double sum = 0.0;
  for (int j = -half; j <= half; ++j) sum += w[j + half] = std::exp(-0.5 * j * j / (sigma * sigma));
  for (double& v : w) v /= sum;
  return w;
}

template <typename T>
Field2D to_field(const Tensor<T>& x) {
  Field2D f(x.w, x.h);
  for (std::size_t j = 0; j < f.size(); ++j) f[j] = std::clamp(static_cast<double>(x.v[j]), 0.0, 1.0);
  return f;
}

}  // namespace

void PosteriorConfig::validate() const {
  if (samples < 2) throw InvalidArgument("posterior: samples must be >= 2");
  if (!(envelope_sigma > 0.0)) throw InvalidArgument("posterior: envelope_sigma must be > 0");
  if (!(epsilon_fraction > 0.0)) throw InvalidArgument("posterior: epsilon_fraction must be > 0");
  if (!(epsilon_floor > 0.0)) throw InvalidArgument("posterior: epsilon_floor must be > 0");
  if (!(leak_tau >= 0.0 && leak_tau <= 1.0)) throw InvalidArgument("posterior: leak_tau must lie in [0, 1]");
}

Field2D gaussian_smooth(const Field2D& f, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("gaussian_smooth: sigma must be > 0");
  const int half = static_cast<int>(std::ceil(3.0 * sigma));
  const auto w = gaussian_taps(sigma, half);
  const int nx = f.nx(), nz = f.nz();
  const auto pass = [&](const Field2D& in, bool along_x) {
    Field2D out(nx, nz);
    for (int k = 0; k < nz; ++k) {
      for (int i = 0; i < nx; ++i) {
        double acc = 0.0, wsum = 0.0;
        for (int j = -half; j <= half; ++j) {
          const int kk = along_x ? k : k + j;
          const int ii = along_x ? i + j : i;
          if (kk < 0 || kk >= nz || ii < 0 || ii >= nx) continue;
          acc += w[j + half] * in(kk, ii);
          wsum += w[j + half];
        }
        out(k, i) = acc / wsum;
      }
    }
    return out;
  };
  return pass(pass(f, true), false);
}

Field2D normalized_std(const Field2D& mean, const Field2D& std, double sigma,
                       double epsilon_fraction, double epsilon_floor) {
  require_same(mean, std, "normalized_std");
  Field2D absm = mean;
  for (double& v : absm.raw()) v = std::abs(v);
  const Field2D env = gaussian_smooth(absm, sigma);
  const double peak = *std::max_element(env.raw().begin(), env.raw().end());
  const double eps = std::max(epsilon_fraction * peak, epsilon_floor);
  Field2D out(mean.nx(), mean.nz());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = std[j] / (env[j] + eps);
  return out;
}

PosteriorEnsemble summarize(std::vector<Field2D> samples, const PosteriorConfig& cfg) {
  if (samples.size() < 2) throw InvalidArgument("summarize: need at least two samples");
  for (const auto& s : samples) require_same(s, samples.front(), "summarize");
  PosteriorEnsemble e;
  const int nx = samples[0].nx(), nz = samples[0].nz();
  e.mean = Field2D(nx, nz);
  e.std = Field2D(nx, nz);
  // Moments of the deviations from the first sample: an ensemble of identical
  // images gets exactly that image as mean and exactly zero spread.
  const double m = static_cast<double>(samples.size());
  const Field2D& ref = samples.front();
  for (const auto& s : samples)
    for (std::size_t j = 0; j < s.size(); ++j) e.mean[j] += s[j] - ref[j];
  for (double& v : e.mean.raw()) v /= m;
  for (const auto& s : samples)
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double d = s[j] - ref[j] - e.mean[j];
      e.std[j] += d * d;
    }
  for (double& v : e.std.raw()) v = std::sqrt(v / m);
  for (std::size_t j = 0; j < e.mean.size(); ++j) e.mean[j] += ref[j];
  e.normalized_std = normalized_std(e.mean, e.std, cfg.envelope_sigma, cfg.epsilon_fraction,
                                    cfg.epsilon_floor);
  e.samples = std::move(samples);
  return e;
}

template <typename T>
PosteriorEnsemble posterior_from_latents(const FlowModel<T>& model, const Tensor<T>& y,
                                         std::span<const std::vector<T>> latents,
                                         const PosteriorConfig& cfg) {
  if (!model.actnorm_initialized())
    throw InvalidArgument("sample_posterior: model has not been initialized or trained");
  const auto cond = model.cond_pyramid(y);
  std::vector<Field2D> samples;
  samples.reserve(latents.size());
  for (const auto& z : latents) samples.push_back(to_field(model.inverse(z, cond).x));
  return summarize(std::move(samples), cfg);
}

template <typename T>
PosteriorEnsemble sample_posterior(const FlowModel<T>& model, const Tensor<T>& y, int m,
                                   std::uint64_t seed, const PosteriorConfig& cfg) {
  if (m < 2) throw InvalidArgument("sample_posterior: M must be >= 2");
  std::vector<std::vector<T>> zs(m, std::vector<T>(model.dim()));
  for (int j = 0; j < m; ++j) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(j)));
    std::normal_distribution<double> n(0.0, 1.0);
    for (T& v : zs[j]) v = static_cast<T>(n(rng));
  }
  return posterior_from_latents<T>(model, y, zs, cfg);
}

double ssim(const Field2D& a, const Field2D& b) {
  require_same(a, b, "ssim");
  constexpr int kWin = 11;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  if (a.nx() < kWin || a.nz() < kWin)
    throw InvalidArgument("ssim: images must be at least 11x11");
  const auto g = gaussian_taps(1.5, kWin / 2);
  const int ox = a.nx() - kWin + 1, oz = a.nz() - kWin + 1;
  double total = 0.0;
  for (int k = 0; k < oz; ++k) {
    for (int i = 0; i < ox; ++i) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int u = 0; u < kWin; ++u) {
        for (int v = 0; v < kWin; ++v) {
          const double w = g[u] * g[v];
          const double x = a(k + u, i + v), y = b(k + u, i + v);
          ma += w * x;
          mb += w * y;
          saa += w * x * x;
          sbb += w * y * y;
          sab += w * x * y;
        }
      }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  }
  return total / (static_cast<double>(ox) * oz);
}

double rmse(const Field2D& a, const Field2D& b) {
  require_same(a, b, "rmse");
  if (a.size() == 0) throw InvalidArgument("rmse: empty images");
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) acc += (a[j] - b[j]) * (a[j] - b[j]);
  return std::sqrt(acc / static_cast<double>(a.size()));
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("pearson: size mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    ma += a[j];
    mb += b[j];
  }
  ma /= n;
  mb /= n;
  double saa = 0, sbb = 0, sab = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    saa += (a[j] - ma) * (a[j] - ma);
    sbb += (b[j] - mb) * (b[j] - mb);
    sab += (a[j] - ma) * (b[j] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

LeakDecision classify_leak(const Field2D& mean, int seal_top, double tau) {
  if (seal_top < 0 || seal_top > mean.nz()) throw InvalidArgument("classify_leak: seal row out of range");
  double above = 0.0, total = 0.0;
  for (int k = 0; k < mean.nz(); ++k) {
    for (int i = 0; i < mean.nx(); ++i) {
      const double v = std::max(mean(k, i), 0.0);
      total += v;
      if (k < seal_top) above += v;
    }
  }
  LeakDecision d;
  if (total <= 0.0) return d;
  d.score = above / total;
  d.leak = d.score > tau;
  return d;
}

double calibrate_leak_tau(std::span<const double> leak_scores,
                          std::span<const double> no_leak_scores, double fallback) {
  if (leak_scores.empty() || no_leak_scores.empty()) return fallback;
  const double lo_leak = *std::min_element(leak_scores.begin(), leak_scores.end());
  const double hi_clean = *std::max_element(no_leak_scores.begin(), no_leak_scores.end());
  if (lo_leak > hi_clean) return 0.5 * (lo_leak + hi_clean);

  std::vector<double> all(leak_scores.begin(), leak_scores.end());
  all.insert(all.end(), no_leak_scores.begin(), no_leak_scores.end());
  std::sort(all.begin(), all.end());
  double best_tau = fallback;
  long best_err = -1;
  for (std::size_t j = 0; j + 1 < all.size(); ++j) {
    const double tau = 0.5 * (all[j] + all[j + 1]);
    long err = 0;
    for (double s : leak_scores) err += s <= tau;
    for (double s : no_leak_scores) err += s > tau;
    if (best_err < 0 || err < best_err) {
      best_err = err;
      best_tau = tau;
    }
  }
  return best_tau;
}

EvalReport evaluate(const PosteriorEnsemble& ens, const Field2D& truth, int seal_top, double tau,
                    int id, bool truth_leak) {
  require_same(ens.mean, truth, "evaluate");
  EvalReport r;
  r.id = id;
  r.truth_leak = truth_leak;
  r.ssim = ssim(ens.mean, truth);
  r.rmse = rmse(ens.mean, truth);
  const auto d = classify_leak(ens.mean, seal_top, tau);
  r.leak_decision = d.leak;
  r.leak_score = d.score;
  std::vector<double> err(truth.size());
  for (std::size_t j = 0; j < err.size(); ++j) err[j] = std::abs(ens.mean[j] - truth[j]);
  r.uncertainty_error_corr = pearson(ens.std.values(), err);
  return r;
}

std::string eval_csv_header() {
  return "id,truth_leak,ssim,rmse,leak_decision,leak_score,uncertainty_error_corr";
}

std::string eval_csv_row(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g,%d,%.9g,%.9g", r.id, r.truth_leak ? 1 : 0,
                r.ssim, r.rmse, r.leak_decision ? 1 : 0, r.leak_score, r.uncertainty_error_corr);
  return buf;
}

void write_eval_csv(const std::string& path, std::span<const EvalReport> rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << eval_csv_header() << '\n';
  for (const auto& r : rows) out << eval_csv_row(r) << '\n';
}

template PosteriorEnsemble sample_posterior<float>(const FlowModel<float>&, const Tensor<float>&,
                                                   int, std::uint64_t, const PosteriorConfig&);
template PosteriorEnsemble sample_posterior<double>(const FlowModel<double>&,
                                                    const Tensor<double>&, int, std::uint64_t,
                                                    const PosteriorConfig&);
template PosteriorEnsemble posterior_from_latents<float>(const FlowModel<float>&,
                                                         const Tensor<float>&,
                                                         std::span<const std::vector<float>>,
                                                         const PosteriorConfig&);
template PosteriorEnsemble posterior_from_latents<double>(const FlowModel<double>&,
                                                          const Tensor<double>&,
                                                          std::span<const std::vector<double>>,
                                                          const PosteriorConfig&);

}  // namespace plume
