#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "plume/error.hpp"
#include "plume/seed.hpp"
#include "plume/train.hpp"

using namespace plume;

namespace {

FlowConfig toy16() {
  FlowConfig c;
  c.height = 4;
  c.width = 4;
  c.levels = 2;
  c.steps_per_level = 2;
  c.hidden_channels = 4;
  c.seed = 1;
  return c;
}

// x is a blurred copy of the first observation channel plus a little noise, so
// the flow has something to learn from y.
PairSet<double> structured_set(int n, int hw, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  PairSet<double> set;
  for (int j = 0; j < n; ++j) {
    Tensor<double> y(3, hw, hw), x(1, hw, hw);
    const double a = g(rng), b = g(rng);
    for (int r = 0; r < hw; ++r)
      for (int c = 0; c < hw; ++c) {
        y.at(0, r, c) = a * std::sin(0.7 * r) + b * std::cos(0.5 * c);
        y.at(1, r, c) = 0.1 * g(rng);
        y.at(2, r, c) = (c == hw / 2) ? 0.5 * a : 0.0;
        x.at(0, r, c) = 0.5 * y.at(0, r, c) + 0.05 * g(rng);
      }
    set.x.push_back(x);
    set.y.push_back(y);
  }
  return set;
}

}  // namespace

TEST(Adam, FirstStepClosedForm) {
  std::vector<double> theta{0.0}, grad{1.0};
  AdamState<double> st;
  adam_step<double>(theta, grad, st, 1e-3);
  // m_hat = 1, v_hat = 1: -lr / (1 + eps)
  EXPECT_NEAR(theta[0], -1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(theta[0], -9.9999e-4, 1e-8);
}

TEST(Adam, ZeroGradientKeepsParameters) {
  std::vector<double> theta{1.5, -2.0}, grad{0.0, 0.0};
  AdamState<double> st;
  adam_step<double>(theta, grad, st, 1e-3);
  EXPECT_EQ(theta, (std::vector<double>{1.5, -2.0}));
}

TEST(Adam, FirstStepOpposesGradientSign) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 10.0);
  std::vector<double> theta(50, 0.0), grad(50);
  for (auto& g : grad) g = n(rng);
  AdamState<double> st;
  adam_step<double>(theta, grad, st, 1e-2);
  for (std::size_t j = 0; j < grad.size(); ++j) EXPECT_EQ(std::signbit(theta[j]), !std::signbit(grad[j]));
  std::vector<double> short_grad(3);
  EXPECT_THROW(adam_step<double>(theta, short_grad, st, 1e-2), InvalidArgument);
}

TEST(NllLoss, IdentityFlowExamples) {
  FlowModel<double> m(toy16());
  std::vector<double> grad(m.num_params());
  std::vector<Tensor<double>> ys{Tensor<double>(3, 4, 4)};
  std::vector<Tensor<double>> zero{Tensor<double>(1, 4, 4)};
  EXPECT_EQ(nll_loss<double>(m, zero, ys, grad), 0.0);
  std::vector<Tensor<double>> ones{Tensor<double>(1, 4, 4, 1.0)};
  EXPECT_DOUBLE_EQ(nll_loss<double>(m, ones, ys, grad), 8.0);
}

TEST(NllLoss, GradientOfEveryParameterMatchesFiniteDifferences) {
  FlowModel<double> m(toy16());
  m.randomize(5, 1.0);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Tensor<double>> xs(3, Tensor<double>(1, 4, 4)), ys(3, Tensor<double>(3, 4, 4));
  for (auto& x : xs)
    for (auto& v : x.v) v = n(rng);
  for (auto& y : ys)
    for (auto& v : y.v) v = n(rng);
  std::vector<double> grad(m.num_params());
  nll_loss<double>(m, xs, ys, grad);
  std::vector<double> scratch(m.num_params());
  auto p = m.params();
  const double h = 1e-5;
  int bad = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double o = p[k];
    p[k] = o + h;
    const double a = nll_loss<double>(m, xs, ys, scratch);
    p[k] = o - h;
    const double b = nll_loss<double>(m, xs, ys, scratch);
    p[k] = o;
    const double fd = (a - b) / (2 * h);
    // Relative error, with an absolute floor for parameters with ~zero gradient.
    const double rel = std::abs(fd - grad[k]) / std::max(std::abs(fd), 1e-4);
    if (rel >= 1e-3) {
      ++bad;
      ADD_FAILURE() << m.param_info().size() << " params; index " << k << " fd " << fd << " analytic " << grad[k];
    }
    if (bad > 5) break;
  }
  EXPECT_EQ(bad, 0);
}

TEST(NllLoss, NonFiniteLossReportsBatchIndex) {
  FlowModel<double> m(toy16());
  const auto& ls = m.param("l0.s0.actnorm.logscale");
  m.params()[ls.offset] = 1e4;  // exp overflows
  std::vector<double> grad(m.num_params());
  std::vector<Tensor<double>> xs{Tensor<double>(1, 4, 4, 1.0)}, ys{Tensor<double>(3, 4, 4)};
  try {
    nll_loss<double>(m, xs, ys, grad, 0.0, nullptr, 7);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.batch_index(), 7);
    EXPECT_NE(std::string(e.what()).find("batch 7"), std::string::npos);
  }
}

TEST(EvaluateLoss, InvariantUnderOrderPermutation) {
  FlowModel<double> m(toy16());
  m.randomize(2, 0.5);
  auto set = structured_set(12, 4, 1);
  const double a = evaluate_loss(m, set, 0.0, 0);
  std::reverse(set.x.begin(), set.x.end());
  std::reverse(set.y.begin(), set.y.end());
  EXPECT_NEAR(evaluate_loss(m, set, 0.0, 0), a, 1e-12);
}

TEST(ConditioningScale, ReciprocalRmsPerChannel) {
  PairSet<double> s;
  Tensor<double> y(3, 2, 2);
  for (int j = 0; j < 4; ++j) y.v[j] = 2.0;   // rms 2
  for (int j = 4; j < 8; ++j) y.v[j] = (j % 2) ? 3.0 : -3.0;  // rms 3
  s.x.push_back(Tensor<double>(1, 2, 2));
  s.y.push_back(y);
  const auto sc = conditioning_scale(s);
  EXPECT_DOUBLE_EQ(sc[0], 0.5);
  EXPECT_DOUBLE_EQ(sc[1], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(sc[2], 1.0);
}

TEST(Train, RejectsSetSmallerThanBatch) {
  FlowModel<double> m(toy16());
  const auto set = structured_set(10, 4, 1);
  TrainConfig cfg;
  cfg.batch_size = 32;
  EXPECT_THROW(train(m, set, set, cfg), InvalidArgument);
}

TEST(Train, ProgressesAndRestoresBest) {
  FlowConfig fc = toy16();
  fc.height = fc.width = 8;
  FlowModel<double> m(fc);
  const auto tr = structured_set(256, 8, 1), va = structured_set(32, 8, 2);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 16;
  cfg.seed = 5;
  int best_calls = 0;
  TrainHooks<double> hooks;
  hooks.on_best = [&](const FlowModel<double>&, const EpochRecord&) { ++best_calls; };
  const auto res = train(m, tr, va, cfg, hooks);
  ASSERT_EQ(res.history.size(), 7u);
  EXPECT_LT(res.history.back().val_loss, res.history.front().val_loss);
  EXPECT_GE(best_calls, 2);
  EXPECT_NEAR(evaluate_loss(m, va, cfg.noise_magnitude, validation_seed(cfg.seed)),
              res.best_val_loss, 1e-9);
}

TEST(Train, SameSeedSameHistory) {
  const auto tr = structured_set(64, 4, 1), va = structured_set(16, 4, 2);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 11;
  FlowModel<double> a(toy16()), b(toy16());
  const auto ra = train(a, tr, va, cfg), rb = train(b, tr, va, cfg);
  ASSERT_EQ(ra.history.size(), rb.history.size());
  for (std::size_t j = 0; j < ra.history.size(); ++j) {
    EXPECT_EQ(ra.history[j].val_loss, rb.history[j].val_loss);
    if (j > 0) {
      EXPECT_EQ(ra.history[j].train_loss, rb.history[j].train_loss);
    }
  }
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
}

TEST(Train, EarlyStopAfterPatience) {
  const auto tr = structured_set(32, 4, 1), va = structured_set(16, 4, 2);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.5;  // diverges quickly so validation never improves
  cfg.early_stop = true;
  cfg.patience = 2;
  FlowModel<double> m(toy16());
  try {
    const auto r = train(m, tr, va, cfg);
    EXPECT_TRUE(r.early_stopped);
    EXPECT_LT(r.history.size(), 51u);
  } catch (const TrainingError&) {
    SUCCEED() << "diverged to a non-finite loss, reported as a training error";
  }
}

TEST(Train, StandardGaussianReachesEntropyRate) {
  // x ~ N(0, I) with constant y: the per-dimension NLL of a good flow is the
  // Gaussian entropy 0.5 (1 + log 2 pi).
  const double entropy = 0.5 * (1.0 + std::log(2.0 * std::numbers::pi));
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto make = [&](int count) {
    PairSet<double> s;
    for (int j = 0; j < count; ++j) {
      Tensor<double> x(1, 4, 4), y(3, 4, 4, 1.0);
      for (auto& v : x.v) v = n(rng);
      s.x.push_back(x);
      s.y.push_back(y);
    }
    return s;
  };
  const auto tr = make(1024), va = make(1024);
  FlowModel<double> m(toy16());
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 2;
  train(m, tr, va, cfg);
  const double per_dim = evaluate_loss(m, va, 0.0, 0) / 16.0 + 0.5 * std::log(2.0 * std::numbers::pi);
  EXPECT_NEAR(per_dim, entropy, 0.05);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = TrainConfig{};
  c.adam.beta1 = 1.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}
