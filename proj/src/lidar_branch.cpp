#include "bevcal/lidar_branch.hpp"

#include <cmath>
#include <map>

#include "bevcal/errors.hpp"

namespace bevcal {

void BEVGrid::validate() const {
  if (size_x < 1 || size_y < 1 || height_bins < 1)
    throw ConfigError("grid extents must be at least 1 cell");
  if (cell_size <= 0.0) throw ConfigError("grid cell size must be positive");
  if (range <= 0.0) throw ConfigError("scene range must be positive");
  if (z_min >= z_max) throw ConfigError("grid z range must be non-empty");
}

void PointCloud::validate() const {
  if (points.empty()) throw EmptySceneError("point cloud has no points");
  for (const Vec3& p : points)
    if (!p.allFinite()) throw MalformedFileError("point cloud contains non-finite values");
  if (!intensity.empty() && intensity.size() != points.size())
    throw MalformedFileError("intensity channel length mismatch");
  for (double v : intensity)
    if (!std::isfinite(v)) throw MalformedFileError("point cloud contains non-finite values");
}

VoxelFeature voxelize(const PointCloud& pc, const BEVGrid& grid, bool use_intensity) {
  grid.validate();
  pc.validate();
  const Index ch = use_intensity ? 4 : 3;

  struct Acc {
    double sum[4] = {0, 0, 0, 0};
    Index n = 0;
  };
  // Keyed by (iz, ix, iy) linear index so iteration yields the canonical order.
  std::map<Index, std::pair<std::array<Index, 3>, Acc>> cells;

  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    const Vec3& p = pc.points[i];
    if (p.norm() > grid.range) continue;
    const Index ix = grid.cell_x(p.x());
    const Index iy = grid.cell_y(p.y());
    const Index iz = grid.z_bin(p.z());
    if (!grid.in_bounds(ix, iy) || iz < 0) continue;
    const Index key = (iz * grid.size_x + ix) * grid.size_y + iy;
    auto& [k, acc] = cells[key];
    k = {ix, iy, iz};
    acc.sum[0] += p.x();
    acc.sum[1] += p.y();
    acc.sum[2] += p.z();
    if (use_intensity && !pc.intensity.empty()) acc.sum[3] += pc.intensity[i];
    ++acc.n;
  }
  if (cells.empty()) throw EmptySceneError("no points fall inside the grid volume");

  VoxelFeature out;
  out.keys.reserve(cells.size());
  Tensor feats({static_cast<Index>(cells.size()), ch});
  Index row = 0;
  for (const auto& [key, entry] : cells) {
    out.keys.push_back(entry.first);
    for (Index c = 0; c < ch; ++c)
      feats.at2(row, c) = entry.second.sum[c] / static_cast<double>(entry.second.n);
    ++row;
  }
  out.features = ad::Var::constant(std::move(feats));
  return out;
}

LidarBackbone::LidarBackbone(nn::ParamStore& ps, const std::string& prefix, Index in_channels,
                             Index out_channels, Rng& rng)
    : c1_(ps, prefix + ".c1", in_channels, out_channels, 3, rng),
      c2_(ps, prefix + ".c2", out_channels, out_channels, 3, rng),
      in_channels_(in_channels),
      out_channels_(out_channels) {}

VoxelFeature LidarBackbone::encode_voxels(const VoxelFeature& v, const BEVGrid& grid) const {
  if (v.count() == 0) throw EmptySceneError("cannot encode an empty voxel set");
  if (v.channels() != in_channels_) throw ConfigError("voxel channel count mismatch");

  std::vector<Index> linear;
  linear.reserve(v.keys.size());
  for (const auto& [ix, iy, iz] : v.keys)
    linear.push_back((iz * grid.size_x + ix) * grid.size_y + iy);

  const Index vol = grid.height_bins * grid.size_x * grid.size_y;
  ad::Var dense = ad::scatter_cols(v.features, linear, vol);
  dense = ad::reshape(dense, {in_channels_, grid.height_bins, grid.size_x, grid.size_y});
  ad::Var h = ad::gelu(c1_.forward(dense));
  h = c2_.forward(h);
  h = ad::reshape(h, {out_channels_, vol});

  VoxelFeature out;
  out.keys = v.keys;
  out.features = ad::gather_cols(h, linear);
  return out;
}

ad::Var flatten_to_bev(const VoxelFeature& v, const BEVGrid& grid) {
  if (v.count() == 0) throw EmptySceneError("cannot flatten an empty voxel set");
  const Index ch = v.channels();
  const Index cells = grid.cell_count();

  // Keys are grouped by iz, so each height slice is one contiguous key run.
  std::vector<ad::Var> slices;
  slices.reserve(static_cast<std::size_t>(grid.height_bins));
  std::size_t lo = 0;
  for (Index iz = 0; iz < grid.height_bins; ++iz) {
    std::size_t hi = lo;
    std::vector<Index> cols;
    std::vector<Index> rows;
    while (hi < v.keys.size() && v.keys[hi][2] == iz) {
      cols.push_back(grid.linear_cell(v.keys[hi][0], v.keys[hi][1]));
      rows.push_back(static_cast<Index>(hi));
      ++hi;
    }
    if (rows.empty()) {
      slices.push_back(ad::Var::constant(Tensor::zeros({ch, cells})));
    } else {
      slices.push_back(ad::scatter_cols(ad::gather_rows(v.features, rows), cols, cells));
    }
    lo = hi;
  }
  ad::Var stacked = slices[0];
  for (std::size_t i = 1; i < slices.size(); ++i) stacked = ad::concat0(stacked, slices[i]);
  return ad::reshape(stacked, {grid.height_bins * ch, grid.size_x, grid.size_y});
}

}  // namespace bevcal
