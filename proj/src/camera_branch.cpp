#include "bevcal/camera_branch.hpp"

#include <cmath>

#include "bevcal/errors.hpp"

namespace bevcal {

void CameraFrame::validate() const {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw MalformedFileError("camera image must be (3, H, W)");
  for (Index i = 0; i < image.size(); ++i)
    if (!std::isfinite(image[i]) || image[i] < 0.0 || image[i] > 1.0)
      throw MalformedFileError("image values must lie in [0, 1]");
  if (!(intrinsics(0, 0) > 0.0) || !(intrinsics(1, 1) > 0.0))
    throw MalformedFileError("focal lengths must be positive");
  if ((intrinsics.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 0.0)
    throw MalformedFileError("intrinsics last row must be [0,0,0,1]");
}

std::vector<double> depth_bins(double d_min, double d_max, Index count) {
  if (count < 2) throw ConfigError("depth discretization needs at least 2 bins");
  if (!(d_min > 0.0) || !(d_max > d_min))
    throw ConfigError("depth range requires d_max > d_min > 0");
  const double step = (d_max - d_min) / static_cast<double>(count - 1);
  std::vector<double> bins(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) bins[static_cast<std::size_t>(i)] = d_min + step * i;
  bins.back() = d_max;
  return bins;
}

CameraBackbone::CameraBackbone(nn::ParamStore& ps, const std::string& prefix,
                               Index out_channels, Index depth_count, Rng& rng)
    : out_channels_(out_channels), depth_count_(depth_count) {
  const Index mid = std::max<Index>(8, out_channels / 2);
  c1_ = nn::Conv2d(ps, prefix + ".c1", 3, mid, 3, 2, 1, rng);
  c2_ = nn::Conv2d(ps, prefix + ".c2", mid, mid, 3, 2, 1, rng);
  c3_ = nn::Conv2d(ps, prefix + ".c3", mid, out_channels, 3, 2, 1, rng);
  depth_head_ = nn::Conv2d(ps, prefix + ".depth", out_channels, depth_count, 1, 1, 0, rng);
}

ImageFeature CameraBackbone::extract_image_features(const CameraFrame& frame) const {
  frame.validate();
  ad::Var x = ad::Var::constant(frame.image);
  x = ad::gelu(c1_.forward(x));
  x = ad::gelu(c2_.forward(x));
  x = ad::gelu(c3_.forward(x));
  ImageFeature out;
  out.features = x;
  out.factor = kFactor;
  return out;
}

Frustum CameraBackbone::lift_to_frustum(const ImageFeature& feat, const CameraFrame& frame,
                                        const std::vector<double>& bins) const {
  const Index d = static_cast<Index>(bins.size());
  if (d != depth_count_) throw ConfigError("depth bin count does not match the head");
  const Index fh = feat.grid_h(), fw = feat.grid_w(), p = fh * fw;
  const Index nc = feat.channels();

  // Per-pixel depth distribution: softmax over the D logits of the 1x1 head.
  ad::Var logits = depth_head_.forward(feat.features);            // (D, fh, fw)
  logits = ad::transpose(ad::reshape(logits, {d, p}));            // (P, D)
  ad::Var weights = ad::transpose(ad::softmax_rows(logits));      // (D, P)
  ad::Var flat_feat = ad::reshape(feat.features, {nc, p});        // (N_C, P)

  Frustum fr;
  fr.features = ad::frustum_outer(weights, flat_feat);  // (D, N_C, P)
  fr.depth_count = d;
  fr.f_h = fh;
  fr.f_w = fw;

  const double fx = frame.intrinsics(0, 0), fy = frame.intrinsics(1, 1);
  const double cx = frame.intrinsics(0, 2), cy = frame.intrinsics(1, 2);
  const double factor = static_cast<double>(feat.factor);
  fr.positions_cam = Tensor({d * p, 3});
  for (Index di = 0; di < d; ++di) {
    const double depth = bins[static_cast<std::size_t>(di)];
    for (Index i = 0; i < fh; ++i)
      for (Index j = 0; j < fw; ++j) {
        const Index n = di * p + i * fw + j;
        const double u = (static_cast<double>(j) + 0.5) * factor;
        const double v = (static_cast<double>(i) + 0.5) * factor;
        fr.positions_cam.at2(n, 0) = (u - cx) * depth / fx;
        fr.positions_cam.at2(n, 1) = (v - cy) * depth / fy;
        fr.positions_cam.at2(n, 2) = depth;
      }
  }
  return fr;
}

Frustum frustum_to_world(Frustum fr, const Pose& t_init) {
  const Pose inv = invert(t_init);
  const Mat3 r = quat_to_matrix(inv.rotation);
  const Index n = fr.positions_cam.dim(0);
  fr.positions_world = Tensor({n, 3});
  for (Index i = 0; i < n; ++i) {
    const Vec3 p(fr.positions_cam.at2(i, 0), fr.positions_cam.at2(i, 1),
                 fr.positions_cam.at2(i, 2));
    const Vec3 w = r * p + inv.translation;
    fr.positions_world.at2(i, 0) = w.x();
    fr.positions_world.at2(i, 1) = w.y();
    fr.positions_world.at2(i, 2) = w.z();
  }
  return fr;
}

ad::Var bev_pool(const Frustum& fr, const BEVGrid& grid) {
  grid.validate();
  if (fr.positions_world.empty()) throw Error("frustum world positions not filled");
  const Index n = fr.point_count();
  std::vector<Index> cells(static_cast<std::size_t>(n), -1);
  for (Index i = 0; i < n; ++i) {
    const double x = fr.positions_world.at2(i, 0);
    const double y = fr.positions_world.at2(i, 1);
    const double z = fr.positions_world.at2(i, 2);
    if (!grid.in_z_range(z)) continue;
    const Index ix = grid.cell_x(x), iy = grid.cell_y(y);
    if (grid.in_bounds(ix, iy)) cells[static_cast<std::size_t>(i)] = grid.linear_cell(ix, iy);
  }
  ad::Var pooled = ad::bev_scatter(fr.features, std::move(cells), grid.cell_count());
  return ad::reshape(pooled, {fr.channels(), grid.size_x, grid.size_y});
}

}  // namespace bevcal
