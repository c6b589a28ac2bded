#pragma once

#include <cmath>

#include "bevcal/geometry.hpp"
#include "bevcal/tensor.hpp"

namespace bevcal {

/// Ground-plane grid centered on the LiDAR origin: cell (X/2, Y/2) contains
/// x = y = 0. Cell indices use floor semantics so negative coordinates bin
/// toward -inf.
struct BEVGrid {
  double cell_size = 0.5;  // meters per cell
  Index size_x = 128;
  Index size_y = 128;
  Index height_bins = 8;
  double range = 90.0;  // scene radius, meters
  double z_min = -3.0;
  double z_max = 5.0;

  void validate() const;

  Index cell_count() const { return size_x * size_y; }
  Index linear_cell(Index ix, Index iy) const { return ix * size_y + iy; }

  Index cell_x(double x) const {
    return size_x / 2 + static_cast<Index>(std::floor(x / cell_size));
  }
  Index cell_y(double y) const {
    return size_y / 2 + static_cast<Index>(std::floor(y / cell_size));
  }

  bool in_bounds(Index ix, Index iy) const {
    return ix >= 0 && ix < size_x && iy >= 0 && iy < size_y;
  }

  bool in_z_range(double z) const { return z >= z_min && z < z_max; }

  /// Height bin of z, or -1 when z falls outside [z_min, z_max).
  Index z_bin(double z) const {
    if (!in_z_range(z)) return -1;
    const double step = (z_max - z_min) / static_cast<double>(height_bins);
    Index iz = static_cast<Index>(std::floor((z - z_min) / step));
    if (iz >= height_bins) iz = height_bins - 1;
    return iz;
  }
};

}  // namespace bevcal
