#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "plume/cnf.hpp"

namespace plume {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1.0e-8;
};

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 1.0e-3;
  int epochs = 20;
  double noise_magnitude = 0.005;  // std of Gaussian noise added to x
  AdamConfig adam;
  bool early_stop = false;
  int patience = 10;               // epochs without validation improvement
  bool normalize_conditioning = true;
  std::uint64_t seed = 0;

  void validate() const;
};

template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  long step = 0;
};

/// Bias-corrected Adam update in place.
template <typename T>
void adam_step(std::span<T> theta, std::span<const T> grad, AdamState<T>& state, double lr,
               const AdamConfig& cfg = {});

/// Paired training samples: x (1 x H x W saturation) and y (3 x H x W observations).
template <typename T>
struct PairSet {
  std::vector<Tensor<T>> x;
  std::vector<Tensor<T>> y;
  std::size_t size() const { return x.size(); }
};

/// Mean negative log-likelihood over the batch (0.5 |z|^2 - logdet per sample)
/// and its gradient, written into grad. When rng is given, x is perturbed by
/// N(0, noise^2) first. batch_index only labels errors.
template <typename T>
T nll_loss(const FlowModel<T>& model, std::span<const Tensor<T>> xs, std::span<const Tensor<T>> ys,
           std::span<T> grad, T noise = T(0), std::mt19937_64* rng = nullptr,
           long batch_index = -1);

/// Seed of the validation-noise streams used by train().
std::uint64_t validation_seed(std::uint64_t training_seed);

/// Mean NLL without gradient. Sample j gets noise from its own stream derived
/// from (seed, j), so the value does not depend on evaluation order.
template <typename T>
double evaluate_loss(const FlowModel<T>& model, const PairSet<T>& data, double noise,
                     std::uint64_t seed);

/// Reciprocal RMS of each observation channel over a set (1 for all-zero channels).
template <typename T>
std::vector<T> conditioning_scale(const PairSet<T>& data);

struct EpochRecord {
  int epoch = 0;            // 0 is the state before the first update
  double train_loss = 0.0;  // mean per-sample NLL in nats
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  bool early_stopped = false;
};

template <typename T>
struct TrainHooks {
  std::function<void(const FlowModel<T>&, const EpochRecord&)> on_best;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Adam training on the maximum-likelihood objective. Leaves the model at the
/// best-validation parameters.
template <typename T>
TrainResult train(FlowModel<T>& model, const PairSet<T>& train_set, const PairSet<T>& val_set,
                  const TrainConfig& cfg, const TrainHooks<T>& hooks = {});

void write_loss_csv(const std::string& path, const std::vector<EpochRecord>& history);

}  // namespace plume
