#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "plume/field.hpp"

namespace plume {

/// 8-bit RGB raster, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 255)
      : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}
};

/// Maps [lo, hi] through a perceptually ordered blue-green-yellow ramp.
RgbImage colorize(const Field2D& f, double lo, double hi, int scale = 1);

/// Places panels left to right with a white gutter.
RgbImage hstack(const std::vector<RgbImage>& panels, int gutter = 4);

void write_png(const std::filesystem::path& path, const RgbImage& img);

}  // namespace plume
