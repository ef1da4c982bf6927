#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace plume {

/// Dense channel-major image tensor (C x H x W) for one sample.
template <typename T>
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int channels, int height, int width, T fill = T(0))
      : c(channels), h(height), w(width),
        v(static_cast<std::size_t>(channels) * height * width, fill) {}

  std::size_t size() const { return v.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  T& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  T at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  T* channel(int ch) { return v.data() + ch * plane(); }
  const T* channel(int ch) const { return v.data() + ch * plane(); }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

/// 2x2 space-to-channel: (C, H, W) -> (4C, H/2, W/2); channel 4c + 2dy + dx.
template <typename T>
Tensor<T> squeeze(const Tensor<T>& x) {
  Tensor<T> out(x.c * 4, x.h / 2, x.w / 2);
  for (int c = 0; c < x.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int xx = 0; xx < out.w; ++xx)
        for (int q = 0; q < 4; ++q) out.at(4 * c + q, y, xx) = x.at(c, 2 * y + q / 2, 2 * xx + q % 2);
  return out;
}

template <typename T>
Tensor<T> unsqueeze(const Tensor<T>& x) {
  Tensor<T> out(x.c / 4, x.h * 2, x.w * 2);
  for (int c = 0; c < out.c; ++c)
    for (int y = 0; y < x.h; ++y)
      for (int xx = 0; xx < x.w; ++xx)
        for (int q = 0; q < 4; ++q) out.at(c, 2 * y + q / 2, 2 * xx + q % 2) = x.at(4 * c + q, y, xx);
  return out;
}

}  // namespace plume
