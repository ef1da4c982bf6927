#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

#include "plume/cnf.hpp"
#include "plume/error.hpp"

using namespace plume;

namespace {

FlowConfig small_config(int h = 8, int levels = 2, int steps = 2, int hidden = 6) {
  FlowConfig c;
  c.height = h;
  c.width = h;
  c.levels = levels;
  c.steps_per_level = steps;
  c.hidden_channels = hidden;
  c.seed = 3;
  return c;
}

template <typename T>
Tensor<T> random_tensor(int c, int h, int w, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Tensor<T> t(c, h, w);
  for (auto& v : t.v) v = static_cast<T>(n(rng));
  return t;
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) m = std::max(m, std::abs(double(a[j]) - double(b[j])));
  return m;
}

}  // namespace

TEST(Squeeze, RoundTripAndChannelLayout) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor<double>(2, 4, 6, rng);
  const auto s = squeeze(x);
  EXPECT_EQ(s.c, 8);
  EXPECT_EQ(s.h, 2);
  EXPECT_EQ(s.w, 3);
  EXPECT_EQ(s.at(4 * 1 + 2 * 1 + 0, 1, 2), x.at(1, 3, 4));
  EXPECT_EQ(unsqueeze(s).v, x.v);
}

TEST(FlowConfig, RejectsIndivisibleResolution) {
  auto c = small_config();
  c.height = 12;  // not divisible by 2^3
  c.levels = 3;
  EXPECT_THROW(FlowModel<double>{c}, InvalidArgument);
  c = small_config();
  c.clamp = 0.0;
  EXPECT_THROW(FlowModel<double>{c}, InvalidArgument);
}

TEST(CondPyramid, FeatureShapes) {
  auto c = small_config(32, 3);
  FlowModel<double> m(c);
  const auto cond = m.cond_pyramid(Tensor<double>(3, 32, 32));
  ASSERT_EQ(cond.features.size(), 3u);
  const int expect[3][3] = {{12, 16, 16}, {48, 8, 8}, {192, 4, 4}};
  for (int l = 0; l < 3; ++l) {
    EXPECT_EQ(cond.features[l].c, expect[l][0]);
    EXPECT_EQ(cond.features[l].h, expect[l][1]);
    EXPECT_EQ(cond.features[l].w, expect[l][2]);
    for (auto v : cond.features[l].v) EXPECT_EQ(v, 0.0);
  }
}

TEST(CondPyramid, PerSampleMap) {
  FlowModel<double> m(small_config());
  std::mt19937_64 rng(4);
  const auto a = random_tensor<double>(3, 8, 8, rng), b = random_tensor<double>(3, 8, 8, rng);
  const auto ca1 = m.cond_pyramid(a), cb1 = m.cond_pyramid(b);
  const auto cb2 = m.cond_pyramid(b), ca2 = m.cond_pyramid(a);
  EXPECT_EQ(ca1.features[1].v, ca2.features[1].v);
  EXPECT_EQ(cb1.features[1].v, cb2.features[1].v);
}

TEST(Coupling, ZeroInitIsIdentity) {
  FlowModel<double> m(small_config());
  std::mt19937_64 rng(2);
  const auto cond = m.cond_pyramid(random_tensor<double>(3, 8, 8, rng));
  const auto a = random_tensor<double>(2, 4, 4, rng), b = random_tensor<double>(2, 4, 4, rng);
  const auto out = m.coupling_forward(0, 0, a, b, cond);
  EXPECT_EQ(out.b_out.v, b.v);
  EXPECT_EQ(out.logdet, 0.0);
}

TEST(Coupling, ConstantScaleEGivesLogdetN) {
  FlowModel<double> m(small_config());
  const auto& bias = m.param("l0.s0.coupling.conv3.bias");
  const double alpha = m.config().clamp;
  const int cb = bias.shape[0] / 2;
  for (int j = 0; j < cb; ++j) m.params()[bias.offset + j] = alpha * std::atanh(1.0 / alpha);
  std::mt19937_64 rng(2);
  const auto cond = m.cond_pyramid(random_tensor<double>(3, 8, 8, rng));
  const auto a = random_tensor<double>(2, 4, 4, rng), b = random_tensor<double>(2, 4, 4, rng);
  const auto out = m.coupling_forward(0, 0, a, b, cond);
  EXPECT_NEAR(out.logdet, static_cast<double>(b.size()), 1e-12);
  for (std::size_t j = 0; j < b.size(); ++j) EXPECT_NEAR(out.b_out.v[j], std::exp(1.0) * b.v[j], 1e-12);
}

TEST(Flow, IdentityInitIsPureReordering) {
  FlowModel<double> m(small_config());
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>(1, 8, 8, rng);
  const auto cond = m.cond_pyramid(random_tensor<double>(3, 8, 8, rng));
  const auto code = m.forward(x, cond);
  EXPECT_EQ(code.logdet, 0.0);
  auto zs = code.z, xs = x.v;
  std::sort(zs.begin(), zs.end());
  std::sort(xs.begin(), xs.end());
  EXPECT_EQ(zs, xs);
  const auto inv = m.inverse(code.z, cond);
  EXPECT_EQ(inv.x.v, x.v);
  EXPECT_EQ(inv.logdet, 0.0);
}

TEST(Flow, LatentSegmentsCoverDimension) {
  FlowModel<double> m(small_config(16, 3));
  const auto seg = m.latent_segments();
  ASSERT_EQ(seg.size(), 3u);
  EXPECT_EQ(seg[0], 128u);  // half of 4 x 8 x 8
  EXPECT_EQ(seg[1], 64u);
  EXPECT_EQ(seg[2], 64u);
}

TEST(Flow, LogdetMatchesDenseJacobian) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    FlowConfig c = small_config(4, 2, 3, 5);
    FlowModel<double> m(c);
    m.randomize(seed, 1.0);
    std::mt19937_64 rng(seed + 10);
    const auto x = random_tensor<double>(1, 4, 4, rng);
    const auto cond = m.cond_pyramid(random_tensor<double>(3, 4, 4, rng));
    const int d = 16;
    Eigen::MatrixXd J(d, d);
    const double h = 1e-6;
    for (int j = 0; j < d; ++j) {
      auto xp = x, xm = x;
      xp.v[j] += h;
      xm.v[j] -= h;
      const auto zp = m.forward(xp, cond).z, zm = m.forward(xm, cond).z;
      for (int i = 0; i < d; ++i) J(i, j) = (zp[i] - zm[i]) / (2 * h);
    }
    const double oracle = std::log(std::abs(J.determinant()));
    EXPECT_NEAR(m.forward(x, cond).logdet, oracle, 1e-4) << "seed " << seed;
  }
}

TEST(Flow, LogdetMatchesDenseJacobian64) {
  FlowModel<double> m(small_config(8, 2, 2, 4));
  m.randomize(9, 1.0);
  std::mt19937_64 rng(19);
  const auto x = random_tensor<double>(1, 8, 8, rng);
  const auto cond = m.cond_pyramid(random_tensor<double>(3, 8, 8, rng));
  Eigen::MatrixXd J(64, 64);
  for (int j = 0; j < 64; ++j) {
    auto xp = x, xm = x;
    xp.v[j] += 1e-6;
    xm.v[j] -= 1e-6;
    const auto zp = m.forward(xp, cond).z, zm = m.forward(xm, cond).z;
    for (int i = 0; i < 64; ++i) J(i, j) = (zp[i] - zm[i]) / 2e-6;
  }
  EXPECT_NEAR(m.forward(x, cond).logdet, std::log(std::abs(J.determinant())), 1e-4);
}

TEST(Flow, RoundTripPropertyDouble) {
  for (int trial = 0; trial < 100; ++trial) {
    FlowModel<double> m(small_config(8, 2, 2, 4));
    m.randomize(1000 + trial, 1.0);
    std::mt19937_64 rng(trial);
    const auto x = random_tensor<double>(1, 8, 8, rng);
    const auto cond = m.cond_pyramid(random_tensor<double>(3, 8, 8, rng));
    const auto code = m.forward(x, cond);
    const auto inv = m.inverse(code.z, cond);
    ASSERT_LT(max_abs_diff(inv.x.v, x.v), 1e-10) << trial;
    ASSERT_LT(std::abs(code.logdet + inv.logdet), 1e-6) << trial;
    const auto back = m.forward(inv.x, cond);
    ASSERT_LT(max_abs_diff(back.z, code.z), 1e-10) << trial;
  }
}

TEST(Flow, RoundTripPropertyFloat) {
  for (int trial = 0; trial < 100; ++trial) {
    FlowModel<float> m(small_config(8, 2, 2, 4));
    m.randomize(2000 + trial, 1.0f);
    std::mt19937_64 rng(trial);
    const auto x = random_tensor<float>(1, 8, 8, rng);
    const auto cond = m.cond_pyramid(random_tensor<float>(3, 8, 8, rng));
    const auto inv = m.inverse(m.forward(x, cond).z, cond);
    ASSERT_LT(max_abs_diff(inv.x.v, x.v), 1e-5) << trial;
  }
}

TEST(Flow, CouplingInverseRecoversHalf) {
  FlowModel<double> m(small_config());
  m.randomize(4, 1.0);
  std::mt19937_64 rng(8);
  const auto cond = m.cond_pyramid(random_tensor<double>(3, 8, 8, rng));
  const auto x = random_tensor<double>(1, 8, 8, rng);
  // Through the full model: inverting recovers every transformed half.
  const auto inv = m.inverse(m.forward(x, cond).z, cond);
  EXPECT_LT(max_abs_diff(inv.x.v, x.v), 1e-10);
}

TEST(Flow, DifferentLatentsGiveDifferentSamples) {
  FlowModel<double> m(small_config());
  m.randomize(4, 1.0);
  std::mt19937_64 rng(8);
  const auto cond = m.cond_pyramid(random_tensor<double>(3, 8, 8, rng));
  const auto z1 = random_tensor<double>(1, 8, 8, rng).v, z2 = random_tensor<double>(1, 8, 8, rng).v;
  EXPECT_GT(max_abs_diff(m.inverse(z1, cond).x.v, m.inverse(z2, cond).x.v), 0.0);
}

TEST(Flow, ConditioningChangesLatent) {
  FlowModel<double> m(small_config());
  m.randomize(6, 1.0);
  std::mt19937_64 rng(3);
  const auto x = random_tensor<double>(1, 8, 8, rng);
  const auto za = m.forward(x, m.cond_pyramid(random_tensor<double>(3, 8, 8, rng))).z;
  const auto zb = m.forward(x, m.cond_pyramid(random_tensor<double>(3, 8, 8, rng))).z;
  EXPECT_GT(max_abs_diff(za, zb), 1e-6);
}

TEST(Flow, RejectsNonFiniteInput) {
  FlowModel<double> m(small_config());
  const auto cond = m.cond_pyramid(Tensor<double>(3, 8, 8));
  Tensor<double> x(1, 8, 8);
  x.v[5] = std::nan("");
  EXPECT_THROW(m.forward(x, cond), InvalidArgument);
  std::vector<double> z(64, 0.0);
  z[3] = INFINITY;
  EXPECT_THROW(m.inverse(z, cond), InvalidArgument);
  EXPECT_THROW(m.inverse(std::vector<double>(63, 0.0), cond), InvalidArgument);
}

TEST(Flow, GradientMatchesFiniteDifferences) {
  FlowModel<double> m(small_config(8, 2, 2, 5));
  m.randomize(7, 1.0);
  std::mt19937_64 rng(1);
  const auto x = random_tensor<double>(1, 8, 8, rng);
  const auto cond = m.cond_pyramid(random_tensor<double>(3, 8, 8, rng));
  std::vector<double> g(m.num_params(), 0.0);
  const double loss = m.nll_grad(x, cond, g);
  EXPECT_NEAR(loss, m.nll(x, cond), 1e-12);
  auto p = m.params();
  double worst = 0.0;
  for (std::size_t k = 0; k < p.size(); k += std::max<std::size_t>(1, p.size() / 400)) {
    const double o = p[k];
    p[k] = o + 1e-6;
    const double a = m.nll(x, cond);
    p[k] = o - 1e-6;
    const double b = m.nll(x, cond);
    p[k] = o;
    const double fd = (a - b) / 2e-6;
    worst = std::max(worst, std::abs(fd - g[k]) / std::max(1e-3, std::abs(fd) + std::abs(g[k])));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Actnorm, InitStandardizesBatchAndIsIdempotent) {
  FlowModel<double> m(small_config(8, 1, 1, 4));
  std::mt19937_64 rng(12);
  std::vector<Tensor<double>> xs;
  std::vector<Conditioning<double>> cs;
  for (int b = 0; b < 16; ++b) {
    auto x = random_tensor<double>(1, 8, 8, rng, 3.0);
    for (auto& v : x.v) v += 2.0;
    xs.push_back(x);
    cs.push_back(m.cond_pyramid(random_tensor<double>(3, 8, 8, rng)));
  }
  m.actnorm_init(xs, cs);
  ASSERT_TRUE(m.actnorm_initialized());
  EXPECT_FALSE(m.actnorm_floor_hit());
  // One level, one step, zero-init coupling: z is the actnorm output per channel.
  const std::size_t hw = 16;
  for (int c = 0; c < 4; ++c) {
    double s = 0.0, ss = 0.0;
    for (std::size_t b = 0; b < xs.size(); ++b) {
      const auto z = m.forward(xs[b], cs[b]).z;
      for (std::size_t j = 0; j < hw; ++j) {
        s += z[c * hw + j];
        ss += z[c * hw + j] * z[c * hw + j];
      }
    }
    const double n = hw * xs.size();
    const double mean = s / n;
    EXPECT_LT(std::abs(mean), 1e-5);
    EXPECT_LT(std::abs(ss / n - mean * mean - 1.0), 1e-3);
  }
  const std::vector<double> before(m.params().begin(), m.params().end());
  std::vector<Tensor<double>> other(16, Tensor<double>(1, 8, 8, 5.0));
  m.actnorm_init(other, cs);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), m.params().begin()));
}

TEST(Actnorm, ConstantChannelHitsFloor) {
  FlowModel<double> m(small_config(8, 2, 2, 4));
  std::vector<Tensor<double>> xs(8, Tensor<double>(1, 8, 8, 0.0));
  std::vector<Conditioning<double>> cs(8, m.cond_pyramid(Tensor<double>(3, 8, 8)));
  m.actnorm_init(xs, cs);
  EXPECT_TRUE(m.actnorm_floor_hit());
  for (double v : m.params()) EXPECT_TRUE(std::isfinite(v));
  const auto code = m.forward(xs[0], cs[0]);
  EXPECT_TRUE(std::isfinite(code.logdet));
}

TEST(Actnorm, RejectsSmallBatch) {
  FlowModel<double> m(small_config());
  std::vector<Tensor<double>> xs(4, Tensor<double>(1, 8, 8));
  std::vector<Conditioning<double>> cs(4, m.cond_pyramid(Tensor<double>(3, 8, 8)));
  EXPECT_THROW(m.actnorm_init(xs, cs), InvalidArgument);
}

TEST(Permutations, StoredBijectionsAndCheckerboard) {
  FlowModel<double> m(small_config(8, 2, 3));
  const auto& p = m.permutations();
  ASSERT_EQ(p.size(), 6u);
  EXPECT_EQ(p[0], (std::vector<int>{0, 3, 1, 2}));
  EXPECT_EQ(p[1], (std::vector<int>{2, 3, 0, 1}));
  auto bad = p;
  bad[3][0] = bad[3][1];
  EXPECT_THROW(m.set_permutations(bad), InvalidArgument);
}

TEST(ConvertModel, FloatCopyMatchesDouble) {
  FlowModel<double> m(small_config());
  m.randomize(3, 0.5);
  const auto f = convert_model<float>(m);
  std::mt19937_64 rng(2);
  const auto x = random_tensor<double>(1, 8, 8, rng);
  const auto y = random_tensor<double>(3, 8, 8, rng);
  Tensor<float> xf(1, 8, 8), yf(3, 8, 8);
  std::copy(x.v.begin(), x.v.end(), xf.v.begin());
  std::copy(y.v.begin(), y.v.end(), yf.v.begin());
  const auto zd = m.forward(x, m.cond_pyramid(y)).z;
  const auto zf = f.forward(xf, f.cond_pyramid(yf)).z;
  EXPECT_LT(max_abs_diff(std::vector<double>(zf.begin(), zf.end()), zd), 1e-4);
}
