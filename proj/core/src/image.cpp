#include "plume/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <memory>

#include "plume/error.hpp"

namespace plume {

namespace {

// Samples of the viridis colormap at 0, 0.25, 0.5, 0.75, 1.
constexpr std::array<std::array<double, 3>, 5> kRamp{{{68, 1, 84},
                                                      {59, 82, 139},
                                                      {33, 145, 140},
                                                      {94, 201, 98},
                                                      {253, 231, 37}}};

}  // namespace

RgbImage colorize(const Field2D& f, double lo, double hi, int scale) {
  if (scale < 1) throw InvalidArgument("colorize: scale must be >= 1");
  RgbImage img(f.nx() * scale, f.nz() * scale);
  const double span = hi > lo ? hi - lo : 1.0;
  for (int k = 0; k < f.nz(); ++k) {
    for (int i = 0; i < f.nx(); ++i) {
      const double t = std::clamp((f(k, i) - lo) / span, 0.0, 1.0) * (kRamp.size() - 1);
      const auto j = std::min<std::size_t>(static_cast<std::size_t>(t), kRamp.size() - 2);
      const double u = t - static_cast<double>(j);
      std::array<std::uint8_t, 3> c{};
      for (int q = 0; q < 3; ++q)
        c[q] = static_cast<std::uint8_t>(std::lround((1 - u) * kRamp[j][q] + u * kRamp[j + 1][q]));
      for (int a = 0; a < scale; ++a)
        for (int b = 0; b < scale; ++b) {
          const std::size_t p = (static_cast<std::size_t>(k * scale + a) * img.width + i * scale + b) * 3;
          std::copy(c.begin(), c.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(p));
        }
    }
  }
  return img;
}

RgbImage hstack(const std::vector<RgbImage>& panels, int gutter) {
  int w = 0, h = 0;
  for (const auto& p : panels) {
    w += p.width;
    h = std::max(h, p.height);
  }
  if (!panels.empty()) w += gutter * static_cast<int>(panels.size() - 1);
  RgbImage out(w, h);
  int x0 = 0;
  for (const auto& p : panels) {
    for (int y = 0; y < p.height; ++y)
      std::copy_n(p.rgb.begin() + static_cast<std::ptrdiff_t>(y) * p.width * 3, p.width * 3,
                  out.rgb.begin() + (static_cast<std::ptrdiff_t>(y) * w + x0) * 3);
    x0 += p.width + gutter;
  }
  return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw FormatError("png: cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("png: libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("png: encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace plume
