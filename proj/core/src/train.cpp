#include "plume/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "plume/error.hpp"
#include "plume/seed.hpp"

namespace plume {

namespace {

template <typename T>
Tensor<T> with_noise(const Tensor<T>& x, T sigma, std::mt19937_64& rng) {
  Tensor<T> out = x;
  std::normal_distribution<double> n(0.0, 1.0);
  for (T& v : out.v) v += static_cast<T>(sigma * n(rng));
  return out;
}

void check_pairs(std::size_t nx, std::size_t ny) {
  if (nx != ny) throw InvalidArgument("training: x and y counts differ");
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidArgument("training: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("training: learning_rate must be > 0");
  if (epochs < 1) throw InvalidArgument("training: epochs must be >= 1");
  if (!(noise_magnitude >= 0.0)) throw InvalidArgument("training: noise_magnitude must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw InvalidArgument("training: Adam betas must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw InvalidArgument("training: Adam eps must be > 0");
  if (patience < 1) throw InvalidArgument("training: patience must be >= 1");
}

std::uint64_t validation_seed(std::uint64_t training_seed) {
  return derive_seed(training_seed, 0x76616cULL);
}

template <typename T>
void adam_step(std::span<T> theta, std::span<const T> grad, AdamState<T>& state, double lr,
               const AdamConfig& cfg) {
  if (grad.size() != theta.size()) throw InvalidArgument("adam_step: gradient size mismatch");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(theta.size(), T(0));
    state.v.assign(theta.size(), T(0));
  }
  if (state.m.size() != theta.size() || state.v.size() != theta.size())
    throw InvalidArgument("adam_step: optimizer state size mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const T g = grad[j];
    state.m[j] = b1 * state.m[j] + (T(1) - b1) * g;
    state.v[j] = b2 * state.v[j] + (T(1) - b2) * g * g;
    const double mhat = state.m[j] / c1;
    const double vhat = state.v[j] / c2;
    theta[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

template <typename T>
T nll_loss(const FlowModel<T>& model, std::span<const Tensor<T>> xs, std::span<const Tensor<T>> ys,
           std::span<T> grad, T noise, std::mt19937_64* rng, long batch_index) {
  check_pairs(xs.size(), ys.size());
  if (xs.empty()) throw InvalidArgument("nll_loss: empty batch");
  std::fill(grad.begin(), grad.end(), T(0));
  const T w = T(1) / static_cast<T>(xs.size());
  double total = 0.0;
  for (std::size_t b = 0; b < xs.size(); ++b) {
    const auto cond = model.cond_pyramid(ys[b]);
    T loss;
    if (rng != nullptr && noise > T(0))
      loss = model.nll_grad(with_noise(xs[b], noise, *rng), cond, grad, w);
    else
      loss = model.nll_grad(xs[b], cond, grad, w);
    if (!std::isfinite(loss)) throw TrainingError("non-finite loss", batch_index);
    total += loss;
  }
  for (T g : grad)
    if (!std::isfinite(g)) throw TrainingError("non-finite gradient", batch_index);
  return static_cast<T>(total / static_cast<double>(xs.size()));
}

template <typename T>
double evaluate_loss(const FlowModel<T>& model, const PairSet<T>& data, double noise,
                     std::uint64_t seed) {
  check_pairs(data.x.size(), data.y.size());
  if (data.size() == 0) throw InvalidArgument("evaluate_loss: empty set");
  double total = 0.0;
  for (std::size_t j = 0; j < data.size(); ++j) {
    const auto cond = model.cond_pyramid(data.y[j]);
    if (noise > 0.0) {
      std::mt19937_64 rng(derive_seed(seed, j));
      total += model.nll(with_noise(data.x[j], static_cast<T>(noise), rng), cond);
    } else {
      total += model.nll(data.x[j], cond);
    }
  }
  return total / static_cast<double>(data.size());
}

template <typename T>
std::vector<T> conditioning_scale(const PairSet<T>& data) {
  if (data.size() == 0) throw InvalidArgument("conditioning_scale: empty set");
  const int nc = data.y[0].c;
  std::vector<double> sq(nc, 0.0);
  double n = 0.0;
  for (const auto& y : data.y) {
    for (int c = 0; c < nc; ++c) {
      const T* p = y.channel(c);
      for (std::size_t j = 0; j < y.plane(); ++j) sq[c] += static_cast<double>(p[j]) * p[j];
    }
    n += static_cast<double>(y.plane());
  }
  std::vector<T> scale(nc, T(1));
  for (int c = 0; c < nc; ++c) {
    const double rms = std::sqrt(sq[c] / n);
    if (rms > 0.0) scale[c] = static_cast<T>(1.0 / rms);
  }
  return scale;
}

template <typename T>
TrainResult train(FlowModel<T>& model, const PairSet<T>& train_set, const PairSet<T>& val_set,
                  const TrainConfig& cfg, const TrainHooks<T>& hooks) {
  cfg.validate();
  check_pairs(train_set.x.size(), train_set.y.size());
  check_pairs(val_set.x.size(), val_set.y.size());
  if (train_set.size() < static_cast<std::size_t>(cfg.batch_size))
    throw InvalidArgument("train: training set (" + std::to_string(train_set.size()) +
                          ") is smaller than one batch (" + std::to_string(cfg.batch_size) + ")");
  if (val_set.size() == 0) throw InvalidArgument("train: empty validation set");

  std::mt19937_64 rng(cfg.seed);
  const T noise = static_cast<T>(cfg.noise_magnitude);
  const std::uint64_t val_seed = validation_seed(cfg.seed);
  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  if (!model.actnorm_initialized()) {
    if (cfg.normalize_conditioning) model.set_cond_scale(conditioning_scale(train_set));
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t m = std::min(n, std::max<std::size_t>(cfg.batch_size, 8));
    std::vector<Tensor<T>> xs;
    std::vector<Conditioning<T>> conds;
    for (std::size_t j = 0; j < m; ++j) {
      xs.push_back(noise > T(0) ? with_noise(train_set.x[order[j]], noise, rng)
                                : train_set.x[order[j]]);
      conds.push_back(model.cond_pyramid(train_set.y[order[j]]));
    }
    model.actnorm_init(xs, conds);
  }

  TrainResult res;
  const auto t_start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };
  EpochRecord first;
  first.val_loss = evaluate_loss(model, val_set, cfg.noise_magnitude, val_seed);
  first.train_loss = std::nan("");
  first.seconds = elapsed();
  res.history.push_back(first);
  res.best_val_loss = first.val_loss;
  std::vector<T> best(model.params().begin(), model.params().end());
  if (hooks.on_epoch) hooks.on_epoch(first);
  if (hooks.on_best) hooks.on_best(model, first);

  AdamState<T> adam;
  std::vector<T> grad(model.num_params());
  long batch_index = 0;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::vector<Tensor<T>> xs, ys;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      xs.clear();
      ys.clear();
      for (std::size_t j = start; j < stop; ++j) {
        xs.push_back(train_set.x[order[j]]);
        ys.push_back(train_set.y[order[j]]);
      }
      const T loss = nll_loss<T>(model, xs, ys, grad, noise, &rng, batch_index);
      adam_step<T>(model.params(), grad, adam, cfg.learning_rate, cfg.adam);
      sum += static_cast<double>(loss) * static_cast<double>(stop - start);
      ++batch_index;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = sum / static_cast<double>(n);
    rec.val_loss = evaluate_loss(model, val_set, cfg.noise_magnitude, val_seed);
    rec.seconds = elapsed();
    if (!std::isfinite(rec.val_loss))
      throw TrainingError("non-finite validation loss after epoch " + std::to_string(epoch),
                          batch_index);
    res.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (rec.val_loss < res.best_val_loss) {
      res.best_val_loss = rec.val_loss;
      res.best_epoch = epoch;
      best.assign(model.params().begin(), model.params().end());
      since_best = 0;
      if (hooks.on_best) hooks.on_best(model, rec);
    } else if (cfg.early_stop && ++since_best >= cfg.patience) {
      res.early_stopped = true;
      break;
    }
  }
  std::copy(best.begin(), best.end(), model.params().begin());
  return res;
}

void write_loss_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,train_loss,val_loss,seconds\n";
  out.precision(10);
  for (const auto& r : history) {
    out << r.epoch << ',';
    if (std::isfinite(r.train_loss)) out << r.train_loss;
    out << ',' << r.val_loss << ',' << r.seconds << '\n';
  }
}

#define PLUME_INSTANTIATE(T)                                                                   \
  template void adam_step<T>(std::span<T>, std::span<const T>, AdamState<T>&, double,          \
                             const AdamConfig&);                                              \
  template T nll_loss<T>(const FlowModel<T>&, std::span<const Tensor<T>>,                      \
                         std::span<const Tensor<T>>, std::span<T>, T, std::mt19937_64*, long); \
  template double evaluate_loss<T>(const FlowModel<T>&, const PairSet<T>&, double,             \
                                   std::uint64_t);                                            \
  template std::vector<T> conditioning_scale<T>(const PairSet<T>&);                            \
  template TrainResult train<T>(FlowModel<T>&, const PairSet<T>&, const PairSet<T>&,           \
                                const TrainConfig&, const TrainHooks<T>&);

PLUME_INSTANTIATE(float)
PLUME_INSTANTIATE(double)
#undef PLUME_INSTANTIATE

}  // namespace plume
