#include "plume/field.hpp"

#include <string>

#include "plume/error.hpp"

namespace plume {

Grid2D Grid2D::with_cells(int nx, int nz, double width, double depth) {
  Grid2D g{nx, nz, width / nx, depth / nz};
  g.validate();
  return g;
}

void Grid2D::validate() const {
  if (nx < 8 || nz < 8) {
    throw InvalidArgument("grid must have at least 8x8 cells, got " + std::to_string(nx) + "x" +
                          std::to_string(nz));
  }
  if (!(dx > 0.0) || !(dz > 0.0)) throw InvalidArgument("grid spacing must be positive");
}

Field2D area_downsample(const Field2D& f, int out_nx, int out_nz) {
  if (out_nx <= 0 || out_nz <= 0 || f.nx() % out_nx != 0 || f.nz() % out_nz != 0) {
    throw InvalidArgument("area_downsample: " + std::to_string(f.nx()) + "x" +
                          std::to_string(f.nz()) + " is not an integer multiple of " +
                          std::to_string(out_nx) + "x" + std::to_string(out_nz));
  }
  const int rx = f.nx() / out_nx;
  const int rz = f.nz() / out_nz;
  if (rx == 1 && rz == 1) return f;
  Field2D out(out_nx, out_nz);
  const double inv = 1.0 / (rx * rz);
  for (int k = 0; k < out_nz; ++k) {
    for (int i = 0; i < out_nx; ++i) {
      double acc = 0.0;
      for (int kk = 0; kk < rz; ++kk)
        for (int ii = 0; ii < rx; ++ii) acc += f(k * rz + kk, i * rx + ii);
      out(k, i) = acc * inv;
    }
  }
  return out;
}

}  // namespace plume
