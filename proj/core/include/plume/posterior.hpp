#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "plume/cnf.hpp"
#include "plume/field.hpp"

namespace plume {

struct PosteriorConfig {
  int samples = 64;               // M
  double envelope_sigma = 2.0;    // cells, Gaussian smoothing of |mean|
  double epsilon_fraction = 0.05; // stabilizer as a fraction of max(envelope)
  double epsilon_floor = 1.0e-6;  // stabilizer when the mean is identically zero
  double leak_tau = 0.01;         // default decision threshold on the leak score
  bool recalibrate_tau = true;    // refit tau on the validation split
  std::uint64_t seed = 0;

  void validate() const;
};

struct PosteriorEnsemble {
  std::vector<Field2D> samples;
  Field2D mean;
  Field2D std;             // population standard deviation
  Field2D normalized_std;
  int size() const { return static_cast<int>(samples.size()); }
};

/// Draws M seeded latents, inverts each conditioned on y, clamps to [0, 1].
template <typename T>
PosteriorEnsemble sample_posterior(const FlowModel<T>& model, const Tensor<T>& y, int m,
                                   std::uint64_t seed, const PosteriorConfig& cfg = {});

/// Same, with caller-supplied latents.
template <typename T>
PosteriorEnsemble posterior_from_latents(const FlowModel<T>& model, const Tensor<T>& y,
                                         std::span<const std::vector<T>> latents,
                                         const PosteriorConfig& cfg = {});

/// Mean, std and normalized std of a set of images.
PosteriorEnsemble summarize(std::vector<Field2D> samples, const PosteriorConfig& cfg = {});

/// Gaussian smoothing truncated at 3 sigma, weights renormalized at the borders.
Field2D gaussian_smooth(const Field2D& f, double sigma);

/// std / (envelope(mean) + eps), envelope = smoothed |mean|, eps = fraction * max(envelope).
Field2D normalized_std(const Field2D& mean, const Field2D& std, double sigma = 2.0,
                       double epsilon_fraction = 0.05, double epsilon_floor = 1.0e-6);

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5), dynamic range 1,
/// averaged over all fully contained windows.
double ssim(const Field2D& a, const Field2D& b);
double rmse(const Field2D& a, const Field2D& b);
/// Pearson correlation; 0 when either input has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

struct LeakDecision {
  bool leak = false;
  double score = 0.0;  // fraction of saturation mass above the seal
};

/// Rows [0, seal_top) lie above the seal.
LeakDecision classify_leak(const Field2D& mean, int seal_top, double tau);

/// Midpoint of the gap between the two score populations. When they overlap,
/// the midpoint between adjacent sorted scores that misclassifies the fewest.
double calibrate_leak_tau(std::span<const double> leak_scores,
                          std::span<const double> no_leak_scores, double fallback);

struct EvalReport {
  int id = 0;
  bool truth_leak = false;
  double ssim = 0.0;
  double rmse = 0.0;
  bool leak_decision = false;
  double leak_score = 0.0;
  double uncertainty_error_corr = 0.0;
};

EvalReport evaluate(const PosteriorEnsemble& ens, const Field2D& truth, int seal_top, double tau,
                    int id, bool truth_leak);

void write_eval_csv(const std::string& path, std::span<const EvalReport> rows);
std::string eval_csv_header();
std::string eval_csv_row(const EvalReport& r);

}  // namespace plume
