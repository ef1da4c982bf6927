#include "plume/cnf.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "plume/error.hpp"

namespace plume {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// 3x3 "same" patches: row (c*9 + ky*3 + kx), column y*W + x.
template <typename T>
void im2col3(const T* in, int channels, int h, int w, T* cols) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    const T* src = in + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = cols + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
        const int oy = ky - 1, ox = kx - 1;
        for (int y = 0; y < h; ++y) {
          T* drow = dst + static_cast<std::size_t>(y) * w;
          const int sy = y + oy;
          if (sy < 0 || sy >= h) {
            std::fill(drow, drow + w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sy) * w;
          const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
          for (int x = 0; x < x0; ++x) drow[x] = T(0);
          for (int x = x0; x < x1; ++x) drow[x] = srow[x + ox];
          for (int x = x1; x < w; ++x) drow[x] = T(0);
        }
      }
    }
  }
}

// Adjoint of im2col3: accumulates patch gradients back into the image.
template <typename T>
void col2im3_add(const T* cols, int channels, int h, int w, T* out) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    T* dst = out + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = cols + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
        const int oy = ky - 1, ox = kx - 1;
        for (int y = 0; y < h; ++y) {
          const int sy = y + oy;
          if (sy < 0 || sy >= h) continue;
          const T* srow = src + static_cast<std::size_t>(y) * w;
          T* drow = dst + static_cast<std::size_t>(sy) * w;
          const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
          for (int x = x0; x < x1; ++x) drow[x + ox] += srow[x];
        }
      }
    }
  }
}

template <typename T>
void elu_inplace(T* v, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) v[j] = v[j] > T(0) ? v[j] : std::expm1(v[j]);
}

// d elu / du expressed through the activation: 1 for u > 0, act + 1 otherwise.
template <typename T>
void elu_backward(const T* act, T* grad, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) grad[j] *= act[j] > T(0) ? T(1) : act[j] + T(1);
}

}  // namespace

void FlowConfig::validate() const {
  if (channels < 1 || cond_channels < 1) throw InvalidArgument("flow: channel counts must be >= 1");
  if (levels < 1 || steps_per_level < 1 || hidden_channels < 1)
    throw InvalidArgument("flow: levels, steps and hidden channels must be >= 1");
  const int div = 1 << levels;
  if (height % div != 0 || width % div != 0 || height < div || width < div) {
    throw InvalidArgument("flow: resolution " + std::to_string(height) + "x" +
                          std::to_string(width) + " not divisible by 2^levels = " +
                          std::to_string(div));
  }
  if (!(clamp > 0.0)) throw InvalidArgument("flow: clamp must be > 0");
}

template <typename T>
struct FlowModel<T>::StepCache {
  std::vector<T> an_out;  // actnorm output (pre-permutation), C x HW
  std::vector<T> cols_a;  // patches of the passthrough half
  std::vector<T> act1, act2;
  std::vector<T> th;      // tanh(raw / alpha)
};

template <typename T>
struct FlowModel<T>::Workspace {
  std::vector<T> cols_a, act1, act2, cols2, out, tmp;
  std::vector<T> dout, dcols, dact2, dact1;
  std::vector<StepCache> caches;
};

template <typename T>
FlowModel<T>::FlowModel(const FlowConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  int c_in = cfg_.channels;
  int h = cfg_.height, w = cfg_.width;
  int cond_c = cfg_.cond_channels;
  std::mt19937_64 rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
  for (int l = 0; l < cfg_.levels; ++l) {
    Level lv;
    lv.channels = 4 * c_in;
    h /= 2;
    w /= 2;
    cond_c *= 4;
    lv.h = h;
    lv.w = w;
    lv.cond_channels = cond_c;
    lv.ca = lv.channels / 2;
    lv.cb = lv.channels - lv.ca;
    for (int s = 0; s < cfg_.steps_per_level; ++s) {
      const std::string p = "l" + std::to_string(l) + ".s" + std::to_string(s) + ".";
      Step st;
      st.an_bias = add_param(p + "actnorm.bias", {lv.channels});
      st.an_logs = add_param(p + "actnorm.logscale", {lv.channels});
      const auto conv = [&](const std::string& name, int in, int out, int k) {
        Conv c{in, out, k, 0, 0};
        c.w = add_param(p + "coupling." + name + ".weight", {out, in, k, k});
        c.b = add_param(p + "coupling." + name + ".bias", {out});
        return c;
      };
      st.c1 = conv("conv1", lv.ca + lv.cond_channels, cfg_.hidden_channels, 3);
      st.c2 = conv("conv2", cfg_.hidden_channels, cfg_.hidden_channels, 1);
      st.c3 = conv("conv3", cfg_.hidden_channels, 2 * lv.cb, 3);
      lv.steps.push_back(st);

      std::vector<int> perm(lv.channels);
      if (l == 0) {
        if (s == 0) {
          // Checkerboard split of the squeezed 2x2 blocks: diagonal sub-pixels first.
          std::vector<int> first, second;
          for (int c = 0; c < c_in; ++c) {
            first.push_back(4 * c + 0);
            first.push_back(4 * c + 3);
            second.push_back(4 * c + 1);
            second.push_back(4 * c + 2);
          }
          std::copy(first.begin(), first.end(), perm.begin());
          std::copy(second.begin(), second.end(), perm.begin() + lv.ca);
        } else {
          // Swap halves so the other checkerboard colour is transformed next.
          for (int c = 0; c < lv.channels; ++c) perm[c] = (c + lv.ca) % lv.channels;
        }
      } else {
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
      }
      perms_.push_back(std::move(perm));
    }
    levels_.push_back(std::move(lv));
    c_in = levels_.back().channels / 2;
  }
  cond_scale_.assign(cfg_.cond_channels, T(1));
  init_weights(cfg_.seed);
}

template <typename T>
std::size_t FlowModel<T>::add_param(const std::string& name, std::vector<int> shape) {
  ParamInfo p;
  p.name = name;
  p.offset = params_.size();
  p.count = 1;
  for (int s : shape) p.count *= static_cast<std::size_t>(s);
  p.shape = std::move(shape);
  params_.resize(params_.size() + p.count, T(0));
  info_.push_back(std::move(p));
  return info_.back().offset;
}

template <typename T>
const ParamInfo& FlowModel<T>::param(const std::string& name) const {
  for (const auto& p : info_)
    if (p.name == name) return p;
  throw InvalidArgument("flow: no parameter named " + name);
}

template <typename T>
void FlowModel<T>::init_weights(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::fill(params_.begin(), params_.end(), T(0));
  for (const auto& lv : levels_) {
    for (const auto& st : lv.steps) {
      for (const Conv* c : {&st.c1, &st.c2}) {
        const double sd = 1.0 / std::sqrt(static_cast<double>(c->in * c->k * c->k));
        const std::size_t n = static_cast<std::size_t>(c->out) * c->in * c->k * c->k;
        for (std::size_t j = 0; j < n; ++j) params_[c->w + j] = static_cast<T>(sd * normal(rng));
      }
      // conv3 stays zero: every coupling starts as the identity.
    }
  }
  actnorm_initialized_ = false;
  actnorm_floor_hit_ = false;
}

template <typename T>
void FlowModel<T>::randomize(std::uint64_t seed, T scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& lv : levels_) {
    for (const auto& st : lv.steps) {
      for (int c = 0; c < lv.channels; ++c) {
        params_[st.an_bias + c] = static_cast<T>(0.1 * scale * normal(rng));
        params_[st.an_logs + c] = static_cast<T>(0.1 * scale * normal(rng));
      }
      for (const Conv* c : {&st.c1, &st.c2, &st.c3}) {
        const double sd = scale / std::sqrt(static_cast<double>(c->in * c->k * c->k));
        const std::size_t n = static_cast<std::size_t>(c->out) * c->in * c->k * c->k;
        for (std::size_t j = 0; j < n; ++j) params_[c->w + j] = static_cast<T>(sd * normal(rng));
        for (int j = 0; j < c->out; ++j) params_[c->b + j] = static_cast<T>(0.1 * scale * normal(rng));
      }
    }
  }
}

template <typename T>
void FlowModel<T>::set_permutations(std::vector<std::vector<int>> perms) {
  if (perms.size() != perms_.size()) throw InvalidArgument("flow: permutation count mismatch");
  for (std::size_t j = 0; j < perms.size(); ++j) {
    std::vector<int> sorted = perms[j];
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> ident(perms_[j].size());
    std::iota(ident.begin(), ident.end(), 0);
    if (sorted != ident) throw InvalidArgument("flow: stored permutation is not a bijection");
  }
  perms_ = std::move(perms);
}

template <typename T>
void FlowModel<T>::set_cond_scale(std::vector<T> scale) {
  if (static_cast<int>(scale.size()) != cfg_.cond_channels)
    throw InvalidArgument("flow: cond_scale size mismatch");
  cond_scale_ = std::move(scale);
}

template <typename T>
const std::vector<int>& FlowModel<T>::perm(int level, int step) const {
  return perms_[static_cast<std::size_t>(level) * cfg_.steps_per_level + step];
}

template <typename T>
std::vector<std::size_t> FlowModel<T>::latent_segments() const {
  std::vector<std::size_t> seg;
  for (int l = 0; l < cfg_.levels; ++l) {
    const auto& lv = levels_[l];
    const std::size_t hw = static_cast<std::size_t>(lv.h) * lv.w;
    if (l + 1 < cfg_.levels)
      seg.push_back(static_cast<std::size_t>(lv.channels - lv.channels / 2) * hw);
    else
      seg.push_back(static_cast<std::size_t>(lv.channels) * hw);
  }
  return seg;
}

template <typename T>
Conditioning<T> FlowModel<T>::cond_pyramid(const Tensor<T>& y) const {
  if (y.c != cfg_.cond_channels || y.h != cfg_.height || y.w != cfg_.width)
    throw InvalidArgument("flow: conditioning tensor has the wrong shape");
  Tensor<T> cur = y;
  for (int c = 0; c < cur.c; ++c) {
    T* p = cur.channel(c);
    for (std::size_t j = 0; j < cur.plane(); ++j) p[j] *= cond_scale_[c];
  }
  Conditioning<T> out;
  for (int l = 0; l < cfg_.levels; ++l) {
    cur = squeeze(cur);
    std::vector<T> patches(static_cast<std::size_t>(cur.c) * 9 * cur.plane());
    im2col3(cur.v.data(), cur.c, cur.h, cur.w, patches.data());
    out.features.push_back(cur);
    out.patches.push_back(std::move(patches));
  }
  return out;
}

template <typename T>
void FlowModel<T>::conditioner(const Level& lv, const Step& st, int level, const T* a,
                               const Conditioning<T>& cond, Workspace& ws,
                               StepCache* cache) const {
  const int hw = lv.h * lv.w;
  const int hid = cfg_.hidden_channels;
  const int ka = lv.ca * 9;
  const int kc = lv.cond_channels * 9;
  ws.cols_a.resize(static_cast<std::size_t>(ka) * hw);
  ws.act1.resize(static_cast<std::size_t>(hid) * hw);
  ws.act2.resize(static_cast<std::size_t>(hid) * hw);
  ws.cols2.resize(static_cast<std::size_t>(hid) * 9 * hw);
  ws.out.resize(static_cast<std::size_t>(2 * lv.cb) * hw);

  im2col3(a, lv.ca, lv.h, lv.w, ws.cols_a.data());
  const T* p = params_.data();
  ConstMatMap<T> w1(p + st.c1.w, hid, ka + kc);
  MatMap<T> act1(ws.act1.data(), hid, hw);
  act1.noalias() = w1.leftCols(ka) * ConstMatMap<T>(ws.cols_a.data(), ka, hw);
  act1.noalias() += w1.rightCols(kc) * ConstMatMap<T>(cond.patches[level].data(), kc, hw);
  act1.colwise() += ConstVecMap<T>(p + st.c1.b, hid);
  elu_inplace(ws.act1.data(), ws.act1.size());

  MatMap<T> act2(ws.act2.data(), hid, hw);
  act2.noalias() = ConstMatMap<T>(p + st.c2.w, hid, hid) * act1;
  act2.colwise() += ConstVecMap<T>(p + st.c2.b, hid);
  elu_inplace(ws.act2.data(), ws.act2.size());

  im2col3(ws.act2.data(), hid, lv.h, lv.w, ws.cols2.data());
  MatMap<T> out(ws.out.data(), 2 * lv.cb, hw);
  out.noalias() = ConstMatMap<T>(p + st.c3.w, 2 * lv.cb, hid * 9) *
                  ConstMatMap<T>(ws.cols2.data(), hid * 9, hw);
  out.colwise() += ConstVecMap<T>(p + st.c3.b, 2 * lv.cb);

  if (cache != nullptr) {
    cache->cols_a = ws.cols_a;
    cache->act1 = ws.act1;
    cache->act2 = ws.act2;
  }
}

template <typename T>
void FlowModel<T>::step_forward(const Level& lv, const Step& st, const std::vector<int>& pm,
                                int level, Tensor<T>& h, const Conditioning<T>& cond, T& logdet,
                                StepCache* cache, Workspace& ws) const {
  const std::size_t hw = h.plane();
  const T* p = params_.data();
  // Activation normalization.
  for (int c = 0; c < lv.channels; ++c) {
    const T bias = p[st.an_bias + c];
    const T scale = std::exp(p[st.an_logs + c]);
    T* x = h.channel(c);
    for (std::size_t j = 0; j < hw; ++j) x[j] = (x[j] + bias) * scale;
    logdet += static_cast<T>(hw) * p[st.an_logs + c];
  }
  if (cache != nullptr) cache->an_out = h.v;
  // Fixed channel permutation.
  ws.tmp = h.v;
  for (int c = 0; c < lv.channels; ++c)
    std::copy_n(ws.tmp.data() + pm[c] * hw, hw, h.channel(c));
  // Affine coupling on the second half.
  conditioner(lv, st, level, h.v.data(), cond, ws, cache);
  const T alpha = static_cast<T>(cfg_.clamp);
  const std::size_t nb = static_cast<std::size_t>(lv.cb) * hw;
  T* b = h.channel(lv.ca);
  const T* raw = ws.out.data();
  const T* t = ws.out.data() + nb;
  if (cache != nullptr) cache->th.resize(nb);
  T acc = T(0);
  for (std::size_t j = 0; j < nb; ++j) {
    const T th = std::tanh(raw[j] / alpha);
    const T logs = alpha * th;
    b[j] = std::exp(logs) * b[j] + t[j];
    acc += logs;
    if (cache != nullptr) cache->th[j] = th;
  }
  logdet += acc;
}

template <typename T>
void FlowModel<T>::step_inverse(const Level& lv, const Step& st, const std::vector<int>& pm,
                                int level, Tensor<T>& h, const Conditioning<T>& cond, T& logdet,
                                Workspace& ws) const {
  const std::size_t hw = h.plane();
  const T* p = params_.data();
  conditioner(lv, st, level, h.v.data(), cond, ws, nullptr);
  const T alpha = static_cast<T>(cfg_.clamp);
  const std::size_t nb = static_cast<std::size_t>(lv.cb) * hw;
  T* b = h.channel(lv.ca);
  const T* raw = ws.out.data();
  const T* t = ws.out.data() + nb;
  T acc = T(0);
  for (std::size_t j = 0; j < nb; ++j) {
    const T logs = alpha * std::tanh(raw[j] / alpha);
    b[j] = (b[j] - t[j]) * std::exp(-logs);
    acc += logs;
  }
  logdet -= acc;
  ws.tmp = h.v;
  for (int c = 0; c < lv.channels; ++c)
    std::copy_n(ws.tmp.data() + c * hw, hw, h.channel(pm[c]));
  for (int c = 0; c < lv.channels; ++c) {
    const T bias = p[st.an_bias + c];
    const T inv = std::exp(-p[st.an_logs + c]);
    T* x = h.channel(c);
    for (std::size_t j = 0; j < hw; ++j) x[j] = x[j] * inv - bias;
    logdet -= static_cast<T>(hw) * p[st.an_logs + c];
  }
}

template <typename T>
void FlowModel<T>::step_backward(const Level& lv, const Step& st, const std::vector<int>& pm,
                                 int level, Tensor<T>& dh, const Conditioning<T>& cond,
                                 StepCache& cache, T* grad, T weight, Workspace& ws) const {
  const std::size_t hw = dh.plane();
  const int ihw = static_cast<int>(hw);
  const int hid = cfg_.hidden_channels;
  const int ka = lv.ca * 9;
  const int kc = lv.cond_channels * 9;
  const T* p = params_.data();
  const T alpha = static_cast<T>(cfg_.clamp);
  const T g_logdet = -weight;  // d(weight * nll) / d(logdet)
  const std::size_t nb = static_cast<std::size_t>(lv.cb) * hw;

  // Coupling. b_in is the permuted actnorm output, second half.
  ws.dout.resize(2 * nb);
  T* db = dh.channel(lv.ca);
  for (int c = 0; c < lv.cb; ++c) {
    const T* b_in = cache.an_out.data() + static_cast<std::size_t>(pm[lv.ca + c]) * hw;
    for (std::size_t j = 0; j < hw; ++j) {
      const std::size_t q = c * hw + j;
      const T th = cache.th[q];
      const T s = std::exp(alpha * th);
      const T g = db[q];
      const T dlogs = g * b_in[j] * s + g_logdet;
      ws.dout[q] = dlogs * (T(1) - th * th);
      ws.dout[nb + q] = g;
      db[q] = g * s;
    }
  }
  // conv3 (3x3): patches of act2 are rebuilt from the cache.
  ws.cols2.resize(static_cast<std::size_t>(hid) * 9 * hw);
  im2col3(cache.act2.data(), hid, lv.h, lv.w, ws.cols2.data());
  ConstMatMap<T> dout(ws.dout.data(), 2 * lv.cb, ihw);
  MatMap<T>(grad + st.c3.w, 2 * lv.cb, hid * 9).noalias() +=
      dout * ConstMatMap<T>(ws.cols2.data(), hid * 9, ihw).transpose();
  VecMap<T>(grad + st.c3.b, 2 * lv.cb) += dout.rowwise().sum();
  ws.dcols.resize(static_cast<std::size_t>(hid) * 9 * hw);
  MatMap<T>(ws.dcols.data(), hid * 9, ihw).noalias() =
      ConstMatMap<T>(p + st.c3.w, 2 * lv.cb, hid * 9).transpose() * dout;
  ws.dact2.assign(static_cast<std::size_t>(hid) * hw, T(0));
  col2im3_add(ws.dcols.data(), hid, lv.h, lv.w, ws.dact2.data());
  elu_backward(cache.act2.data(), ws.dact2.data(), ws.dact2.size());

  // conv2 (1x1).
  ConstMatMap<T> dpre2(ws.dact2.data(), hid, ihw);
  MatMap<T>(grad + st.c2.w, hid, hid).noalias() +=
      dpre2 * ConstMatMap<T>(cache.act1.data(), hid, ihw).transpose();
  VecMap<T>(grad + st.c2.b, hid) += dpre2.rowwise().sum();
  ws.dact1.resize(static_cast<std::size_t>(hid) * hw);
  MatMap<T>(ws.dact1.data(), hid, ihw).noalias() =
      ConstMatMap<T>(p + st.c2.w, hid, hid).transpose() * dpre2;
  elu_backward(cache.act1.data(), ws.dact1.data(), ws.dact1.size());

  // conv1 (3x3) over [a, conditioning]; only the a-half needs an input gradient.
  ConstMatMap<T> dpre1(ws.dact1.data(), hid, ihw);
  MatMap<T> gw1(grad + st.c1.w, hid, ka + kc);
  gw1.leftCols(ka).noalias() += dpre1 * ConstMatMap<T>(cache.cols_a.data(), ka, ihw).transpose();
  gw1.rightCols(kc).noalias() +=
      dpre1 * ConstMatMap<T>(cond.patches[level].data(), kc, ihw).transpose();
  VecMap<T>(grad + st.c1.b, hid) += dpre1.rowwise().sum();
  ws.dcols.resize(static_cast<std::size_t>(ka) * hw);
  MatMap<T>(ws.dcols.data(), ka, ihw).noalias() =
      ConstMatMap<T>(p + st.c1.w, hid, ka + kc).leftCols(ka).transpose() * dpre1;
  col2im3_add(ws.dcols.data(), lv.ca, lv.h, lv.w, dh.channel(0));

  // Undo the permutation.
  ws.tmp = dh.v;
  for (int c = 0; c < lv.channels; ++c)
    std::copy_n(ws.tmp.data() + c * hw, hw, dh.channel(pm[c]));

  // Activation normalization.
  for (int c = 0; c < lv.channels; ++c) {
    const T scale = std::exp(p[st.an_logs + c]);
    T* d = dh.channel(c);
    const T* y = cache.an_out.data() + c * hw;
    T sum_d = T(0), sum_dy = T(0);
    for (std::size_t j = 0; j < hw; ++j) {
      sum_d += d[j];
      sum_dy += d[j] * y[j];
      d[j] *= scale;
    }
    grad[st.an_bias + c] += sum_d * scale;
    grad[st.an_logs + c] += sum_dy + g_logdet * static_cast<T>(hw);
  }
}

template <typename T>
LatentCode<T> FlowModel<T>::forward(const Tensor<T>& x, const Conditioning<T>& cond) const {
  if (x.c != cfg_.channels || x.h != cfg_.height || x.w != cfg_.width)
    throw InvalidArgument("flow.forward: input has the wrong shape");
  for (T v : x.v)
    if (!std::isfinite(v)) throw InvalidArgument("flow.forward: non-finite input");
  thread_local Workspace ws;
  LatentCode<T> out;
  out.z.reserve(dim());
  Tensor<T> h = x;
  for (int l = 0; l < cfg_.levels; ++l) {
    const auto& lv = levels_[l];
    h = squeeze(h);
    for (int s = 0; s < cfg_.steps_per_level; ++s)
      step_forward(lv, lv.steps[s], perm(l, s), l, h, cond, out.logdet, nullptr, ws);
    if (l + 1 < cfg_.levels) {
      const int keep = lv.channels / 2;
      out.z.insert(out.z.end(), h.v.begin() + static_cast<std::ptrdiff_t>(keep * h.plane()), h.v.end());
      h.v.resize(keep * h.plane());
      h.c = keep;
    }
  }
  out.z.insert(out.z.end(), h.v.begin(), h.v.end());
  return out;
}

template <typename T>
InverseResult<T> FlowModel<T>::inverse(std::span<const T> z, const Conditioning<T>& cond) const {
  if (z.size() != dim()) throw InvalidArgument("flow.inverse: latent has the wrong dimension");
  for (T v : z)
    if (!std::isfinite(v)) throw InvalidArgument("flow.inverse: non-finite latent");
  thread_local Workspace ws;
  const auto seg = latent_segments();
  std::vector<std::size_t> start(seg.size());
  std::exclusive_scan(seg.begin(), seg.end(), start.begin(), std::size_t{0});

  InverseResult<T> res;
  const auto& last = levels_.back();
  Tensor<T> h(last.channels, last.h, last.w);
  std::copy_n(z.begin() + static_cast<std::ptrdiff_t>(start.back()), seg.back(), h.v.begin());
  for (int l = cfg_.levels - 1; l >= 0; --l) {
    const auto& lv = levels_[l];
    if (l + 1 < cfg_.levels) {
      // Re-attach the factored half: h currently holds the kept channels.
      Tensor<T> full(lv.channels, lv.h, lv.w);
      std::copy(h.v.begin(), h.v.end(), full.v.begin());
      std::copy_n(z.begin() + static_cast<std::ptrdiff_t>(start[l]), seg[l],
                  full.v.begin() + static_cast<std::ptrdiff_t>(h.v.size()));
      h = std::move(full);
    }
    for (int s = cfg_.steps_per_level - 1; s >= 0; --s)
      step_inverse(lv, lv.steps[s], perm(l, s), l, h, cond, res.logdet, ws);
    h = unsqueeze(h);
  }
  res.x = std::move(h);
  return res;
}

template <typename T>
T FlowModel<T>::nll(const Tensor<T>& x, const Conditioning<T>& cond) const {
  const auto code = forward(x, cond);
  T sq = T(0);
  for (T v : code.z) sq += v * v;
  return T(0.5) * sq - code.logdet;
}

template <typename T>
T FlowModel<T>::nll_grad(const Tensor<T>& x, const Conditioning<T>& cond, std::span<T> grad,
                         T weight) const {
  if (grad.size() != params_.size()) throw InvalidArgument("flow.nll_grad: gradient size mismatch");
  if (x.c != cfg_.channels || x.h != cfg_.height || x.w != cfg_.width)
    throw InvalidArgument("flow.nll_grad: input has the wrong shape");
  thread_local Workspace ws;
  const int nsteps = cfg_.levels * cfg_.steps_per_level;
  ws.caches.resize(nsteps);

  // Forward with caches; keep the factored-out halves.
  T logdet = T(0);
  std::vector<std::vector<T>> factored(cfg_.levels);
  Tensor<T> h = x;
  for (int l = 0; l < cfg_.levels; ++l) {
    const auto& lv = levels_[l];
    h = squeeze(h);
    for (int s = 0; s < cfg_.steps_per_level; ++s)
      step_forward(lv, lv.steps[s], perm(l, s), l, h, cond, logdet,
                   &ws.caches[l * cfg_.steps_per_level + s], ws);
    if (l + 1 < cfg_.levels) {
      const int keep = lv.channels / 2;
      factored[l].assign(h.v.begin() + static_cast<std::ptrdiff_t>(keep * h.plane()), h.v.end());
      h.v.resize(keep * h.plane());
      h.c = keep;
    }
  }
  factored.back() = h.v;
  T sq = T(0);
  for (const auto& f : factored)
    for (T v : f) sq += v * v;
  const T loss = T(0.5) * sq - logdet;

  // Reverse pass: dL/dz = weight * z.
  Tensor<T> dh = h;
  for (T& v : dh.v) v *= weight;
  for (int l = cfg_.levels - 1; l >= 0; --l) {
    const auto& lv = levels_[l];
    if (l + 1 < cfg_.levels) {
      Tensor<T> full(lv.channels, lv.h, lv.w);
      std::copy(dh.v.begin(), dh.v.end(), full.v.begin());
      auto it = full.v.begin() + static_cast<std::ptrdiff_t>(dh.v.size());
      for (T v : factored[l]) *it++ = weight * v;
      dh = std::move(full);
    }
    for (int s = cfg_.steps_per_level - 1; s >= 0; --s)
      step_backward(lv, lv.steps[s], perm(l, s), l, dh, cond,
                    ws.caches[l * cfg_.steps_per_level + s], grad.data(), weight, ws);
    dh = unsqueeze(dh);
  }
  return loss;
}

template <typename T>
void FlowModel<T>::actnorm_init(std::span<const Tensor<T>> xs,
                                std::span<const Conditioning<T>> conds) {
  if (actnorm_initialized_) return;
  if (xs.size() != conds.size() || xs.empty())
    throw InvalidArgument("flow.actnorm_init: need matching, non-empty batches");
  if (xs.size() < 8) throw InvalidArgument("flow.actnorm_init: batch size must be >= 8");
  Workspace ws;
  std::vector<Tensor<T>> hs(xs.begin(), xs.end());
  constexpr double kScaleFloor = 1e-3;
  for (int l = 0; l < cfg_.levels; ++l) {
    const auto& lv = levels_[l];
    for (auto& h : hs) h = squeeze(h);
    for (int s = 0; s < cfg_.steps_per_level; ++s) {
      const Step& st = lv.steps[s];
      const std::size_t hw = hs[0].plane();
      for (int c = 0; c < lv.channels; ++c) {
        double sum = 0.0, sumsq = 0.0;
        for (const auto& h : hs) {
          const T* p = h.channel(c);
          for (std::size_t j = 0; j < hw; ++j) sum += p[j];
        }
        const double n = static_cast<double>(hw * hs.size());
        const double mean = sum / n;
        for (const auto& h : hs) {
          const T* p = h.channel(c);
          for (std::size_t j = 0; j < hw; ++j) sumsq += (p[j] - mean) * (p[j] - mean);
        }
        double sd = std::sqrt(sumsq / n);
        if (!(sd >= kScaleFloor)) {
          sd = kScaleFloor;
          actnorm_floor_hit_ = true;
        }
        params_[st.an_bias + c] = static_cast<T>(-mean);
        params_[st.an_logs + c] = static_cast<T>(-std::log(sd));
      }
      T dummy = T(0);
      for (std::size_t b = 0; b < hs.size(); ++b)
        step_forward(lv, st, perm(l, s), l, hs[b], conds[b], dummy, nullptr, ws);
    }
    if (l + 1 < cfg_.levels) {
      const int keep = lv.channels / 2;
      for (auto& h : hs) {
        h.v.resize(keep * h.plane());
        h.c = keep;
      }
    }
  }
  actnorm_initialized_ = true;
}

template <typename T>
CouplingOutput<T> FlowModel<T>::coupling_forward(int level, int step, const Tensor<T>& a,
                                                 const Tensor<T>& b,
                                                 const Conditioning<T>& cond) const {
  const auto& lv = levels_.at(level);
  const auto& st = lv.steps.at(step);
  if (a.c != lv.ca || b.c != lv.cb || a.h != lv.h || b.h != lv.h || a.w != lv.w || b.w != lv.w)
    throw InvalidArgument("flow.coupling_forward: half tensors have the wrong shape");
  Workspace ws;
  conditioner(lv, st, level, a.v.data(), cond, ws, nullptr);
  CouplingOutput<T> out;
  out.b_out = b;
  const T alpha = static_cast<T>(cfg_.clamp);
  const std::size_t nb = b.size();
  for (std::size_t j = 0; j < nb; ++j) {
    const T logs = alpha * std::tanh(ws.out[j] / alpha);
    out.b_out.v[j] = std::exp(logs) * b.v[j] + ws.out[nb + j];
    out.logdet += logs;
  }
  return out;
}

template <typename To, typename From>
FlowModel<To> convert_model(const FlowModel<From>& src) {
  FlowModel<To> dst(src.config());
  std::transform(src.params().begin(), src.params().end(), dst.params().begin(),
                 [](From v) { return static_cast<To>(v); });
  dst.set_permutations(src.permutations());
  std::vector<To> scale(src.cond_scale().begin(), src.cond_scale().end());
  dst.set_cond_scale(std::move(scale));
  dst.set_actnorm_initialized(src.actnorm_initialized());
  return dst;
}

template class FlowModel<float>;
template class FlowModel<double>;
template FlowModel<float> convert_model<float, double>(const FlowModel<double>&);
template FlowModel<double> convert_model<double, float>(const FlowModel<float>&);
template FlowModel<float> convert_model<float, float>(const FlowModel<float>&);
template FlowModel<double> convert_model<double, double>(const FlowModel<double>&);

}  // namespace plume
