#pragma once

#include <array>
#include <string>
#include <vector>

#include "bevcal/bev_grid.hpp"
#include "bevcal/nn.hpp"

namespace bevcal {

struct PointCloud {
  std::vector<Vec3> points;        // LiDAR frame, meters
  std::vector<double> intensity;   // empty, or one value per point

  void validate() const;  // N >= 1, finite coordinates, consistent intensity
};

/// Sparse voxel grid: keys ordered ascending by (iz, ix, iy), no duplicates,
/// one feature row per key.
struct VoxelFeature {
  std::vector<std::array<Index, 3>> keys;  // (ix, iy, iz)
  ad::Var features;                        // (num_voxels, channels)

  Index count() const { return static_cast<Index>(keys.size()); }
  Index channels() const { return features.value().dim(1); }
};

/// Bin points into voxels. Feature = mean of contained point coordinates,
/// plus mean intensity as a fourth channel when use_intensity is set
/// (missing intensities read as zero). Points beyond the scene radius or
/// outside the grid volume are dropped.
VoxelFeature voxelize(const PointCloud& pc, const BEVGrid& grid, bool use_intensity);

/// Toy-scale voxel feature backbone: densify, two 3x3x3 convolutions with a
/// GELU between, then re-sparsify on the input support. Sized for desk-scale
/// grids; swap behind this interface for production workloads.
class LidarBackbone {
 public:
  LidarBackbone() = default;
  LidarBackbone(nn::ParamStore& ps, const std::string& prefix, Index in_channels,
                Index out_channels, Rng& rng);

  VoxelFeature encode_voxels(const VoxelFeature& v, const BEVGrid& grid) const;
  Index in_channels() const { return in_channels_; }
  Index out_channels() const { return out_channels_; }

 private:
  nn::Conv3d c1_, c2_;
  Index in_channels_ = 0;
  Index out_channels_ = 0;
};

/// Collapse the height axis: output (channels * Z, X, Y), where the block of
/// `channels` output channels starting at iz * channels holds height slice iz.
ad::Var flatten_to_bev(const VoxelFeature& v, const BEVGrid& grid);

}  // namespace bevcal
