#pragma once

#include <string>
#include <vector>

#include "bevcal/bev_grid.hpp"
#include "bevcal/geometry.hpp"
#include "bevcal/nn.hpp"

namespace bevcal {

struct CameraFrame {
  Tensor image;      // (3, H, W), values in [0, 1]
  Mat4 intrinsics;   // homogeneous pinhole matrix

  Index height() const { return image.dim(1); }
  Index width() const { return image.dim(2); }
  void validate() const;
};

struct ImageFeature {
  ad::Var features;  // (N_C, f_H, f_W)
  int factor = 8;    // downsample relative to the source image

  Index channels() const { return features.value().dim(0); }
  Index grid_h() const { return features.value().dim(1); }
  Index grid_w() const { return features.value().dim(2); }
};

/// Camera-space point pillar per feature pixel. Point n = d * (f_H * f_W) + p
/// pairs depth slice d with pixel p = i * f_W + j; positions are rows of that
/// flat index.
struct Frustum {
  ad::Var features;        // (D, N_C, f_H * f_W)
  Tensor positions_cam;    // (D * f_H * f_W, 3), camera frame
  Tensor positions_world;  // same shape, filled by frustum_to_world
  Index depth_count = 0;
  Index f_h = 0;
  Index f_w = 0;

  Index channels() const { return features.value().dim(1); }
  Index point_count() const { return depth_count * f_h * f_w; }
};

/// Uniformly spaced depth set over [d_min, d_max]; needs at least two bins.
std::vector<double> depth_bins(double d_min, double d_max, Index count);

/// Strided conv trunk (factor 8) plus a 1x1 depth-distribution head.
class CameraBackbone {
 public:
  CameraBackbone() = default;
  CameraBackbone(nn::ParamStore& ps, const std::string& prefix, Index out_channels,
                 Index depth_count, Rng& rng);

  ImageFeature extract_image_features(const CameraFrame& frame) const;
  Frustum lift_to_frustum(const ImageFeature& feat, const CameraFrame& frame,
                          const std::vector<double>& bins) const;

  Index out_channels() const { return out_channels_; }
  Index depth_count() const { return depth_count_; }
  static constexpr int kFactor = 8;

 private:
  nn::Conv2d c1_, c2_, c3_, depth_head_;
  Index out_channels_ = 0;
  Index depth_count_ = 0;
};

/// Applies t_init^-1 to every camera-frame position.
Frustum frustum_to_world(Frustum fr, const Pose& t_init);

/// Sum frustum features into grid cells; points outside the grid footprint or
/// its z range are dropped. Accumulation order is point-index ascending.
ad::Var bev_pool(const Frustum& fr, const BEVGrid& grid);  // (N_C, X, Y)

}  // namespace bevcal
