#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "plume/tensor.hpp"

namespace plume {

/// Architecture hyperparameters of the conditional flow.
struct FlowConfig {
  int channels = 1;       // data channels (saturation)
  int cond_channels = 3;  // observation channels
  int height = 64;
  int width = 64;
  int levels = 3;
  int steps_per_level = 4;
  int hidden_channels = 32;
  double clamp = 2.0;     // alpha in s = exp(alpha tanh(raw / alpha))
  std::uint64_t seed = 0; // permutations and weight init

  void validate() const;
  bool operator==(const FlowConfig&) const = default;
};

/// Named view into the flat parameter vector.
struct ParamInfo {
  std::string name;
  std::size_t offset = 0;
  std::size_t count = 0;
  std::vector<int> shape;
};

template <typename T>
struct LatentCode {
  std::vector<T> z;
  T logdet = T(0);
};

template <typename T>
struct InverseResult {
  Tensor<T> x;
  T logdet = T(0);  // log|det| of the inverse map evaluated at z
};

/// Per-level conditioning: y squeezed in lockstep with x, plus the 3x3
/// patch matrix of each level reused by every coupling layer on that level.
template <typename T>
struct Conditioning {
  std::vector<Tensor<T>> features;
  std::vector<std::vector<T>> patches;
};

/// Contribution of one coupling layer, exposed for unit tests.
template <typename T>
struct CouplingOutput {
  Tensor<T> b_out;
  T logdet = T(0);
};

template <typename T>
class FlowModel {
 public:
  explicit FlowModel(const FlowConfig& cfg);

  const FlowConfig& config() const { return cfg_; }
  std::size_t dim() const { return static_cast<std::size_t>(cfg_.channels) * cfg_.height * cfg_.width; }

  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }
  std::size_t num_params() const { return params_.size(); }
  const std::vector<ParamInfo>& param_info() const { return info_; }
  const ParamInfo& param(const std::string& name) const;

  /// Channel permutation of every step, level-major.
  const std::vector<std::vector<int>>& permutations() const { return perms_; }
  void set_permutations(std::vector<std::vector<int>> perms);

  /// Multiplicative scale applied to each observation channel before squeezing.
  const std::vector<T>& cond_scale() const { return cond_scale_; }
  void set_cond_scale(std::vector<T> scale);

  bool actnorm_initialized() const { return actnorm_initialized_; }
  bool actnorm_floor_hit() const { return actnorm_floor_hit_; }
  void set_actnorm_initialized(bool v) { actnorm_initialized_ = v; }

  /// Randomizes every parameter (including the zero-initialized output
  /// convolutions); used for invertibility and gradient tests.
  void randomize(std::uint64_t seed, T scale);

  Conditioning<T> cond_pyramid(const Tensor<T>& y) const;

  LatentCode<T> forward(const Tensor<T>& x, const Conditioning<T>& cond) const;
  InverseResult<T> inverse(std::span<const T> z, const Conditioning<T>& cond) const;

  /// 0.5 |z|^2 - logdet for one sample.
  T nll(const Tensor<T>& x, const Conditioning<T>& cond) const;
  /// Same, accumulating weight * d(nll)/d(theta) into grad.
  T nll_grad(const Tensor<T>& x, const Conditioning<T>& cond, std::span<T> grad,
             T weight = T(1)) const;

  /// Data-dependent activation-normalization init. No-op once initialized.
  void actnorm_init(std::span<const Tensor<T>> xs, std::span<const Conditioning<T>> conds);

  /// One coupling layer in isolation (level, step), for tests.
  CouplingOutput<T> coupling_forward(int level, int step, const Tensor<T>& a, const Tensor<T>& b,
                                     const Conditioning<T>& cond) const;

  /// Shape of the z segments: factored-out part per level, then the final level.
  std::vector<std::size_t> latent_segments() const;

 private:
  struct Conv {
    int in = 0, out = 0, k = 1;
    std::size_t w = 0, b = 0;  // parameter offsets
  };
  struct Step {
    std::size_t an_bias = 0, an_logs = 0;
    Conv c1, c2, c3;
  };
  struct Level {
    int channels = 0;  // after squeeze
    int h = 0, w = 0;
    int cond_channels = 0;
    int ca = 0, cb = 0;  // coupling split
    std::vector<Step> steps;
  };
  struct StepCache;
  struct Workspace;

  std::size_t add_param(const std::string& name, std::vector<int> shape);
  void init_weights(std::uint64_t seed);
  const std::vector<int>& perm(int level, int step) const;

  void step_forward(const Level& lv, const Step& st, const std::vector<int>& perm, int level,
                    Tensor<T>& h, const Conditioning<T>& cond, T& logdet, StepCache* cache,
                    Workspace& ws) const;
  void step_inverse(const Level& lv, const Step& st, const std::vector<int>& perm, int level,
                    Tensor<T>& h, const Conditioning<T>& cond, T& logdet, Workspace& ws) const;
  void step_backward(const Level& lv, const Step& st, const std::vector<int>& perm, int level,
                     Tensor<T>& dh, const Conditioning<T>& cond, StepCache& cache, T* grad,
                     T weight, Workspace& ws) const;
  void conditioner(const Level& lv, const Step& st, int level, const T* a,
                   const Conditioning<T>& cond, Workspace& ws, StepCache* cache) const;

  FlowConfig cfg_;
  std::vector<Level> levels_;
  std::vector<T> params_;
  std::vector<ParamInfo> info_;
  std::vector<std::vector<int>> perms_;
  std::vector<T> cond_scale_;
  bool actnorm_initialized_ = false;
  bool actnorm_floor_hit_ = false;
};

extern template class FlowModel<float>;
extern template class FlowModel<double>;

/// Copy parameters and metadata between precisions.
template <typename To, typename From>
FlowModel<To> convert_model(const FlowModel<From>& src);

}  // namespace plume
