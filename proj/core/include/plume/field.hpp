#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace plume {

/// Regular 2D grid. Rows run in depth (k, top to bottom), columns laterally (i).
struct Grid2D {
  int nx = 64;
  int nz = 64;
  double dx = 50.0;
  double dz = 2131.0 / 64.0;

  static constexpr double kDefaultWidth = 3200.0;
  static constexpr double kDefaultDepth = 2131.0;

  /// Grid covering the default 3200 m x 2131 m section at the given resolution.
  static Grid2D with_cells(int nx, int nz, double width = kDefaultWidth,
                           double depth = kDefaultDepth);

  void validate() const;
  std::size_t cells() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(nz); }
  bool operator==(const Grid2D&) const = default;
};

/// Row-major scalar field on a Grid2D (index = k * nx + i).
class Field2D {
 public:
  Field2D() = default;
  Field2D(int nx, int nz, double value = 0.0)
      : nx_(nx), nz_(nz), data_(static_cast<std::size_t>(nx) * nz, value) {}
  explicit Field2D(const Grid2D& g, double value = 0.0) : Field2D(g.nx, g.nz, value) {}

  int nx() const { return nx_; }
  int nz() const { return nz_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(int k, int i) { return data_[static_cast<std::size_t>(k) * nx_ + i]; }
  double operator()(int k, int i) const { return data_[static_cast<std::size_t>(k) * nx_ + i]; }
  double& operator[](std::size_t c) { return data_[c]; }
  double operator[](std::size_t c) const { return data_[c]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  bool same_shape(const Field2D& o) const { return nx_ == o.nx_ && nz_ == o.nz_; }
  bool operator==(const Field2D&) const = default;

 private:
  int nx_ = 0;
  int nz_ = 0;
  std::vector<double> data_;
};

/// Area-average downsampling by integer factors. Shapes must divide evenly.
Field2D area_downsample(const Field2D& f, int out_nx, int out_nz);

}  // namespace plume
