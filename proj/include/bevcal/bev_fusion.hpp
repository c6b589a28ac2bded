#pragma once

#include <string>

#include "bevcal/nn.hpp"

namespace bevcal {

/// Shared BEV feature space consumed by the decoder.
struct FusedBEV {
  ad::Var base;  // (N_B, X, Y)

  Index channels() const { return base.value().dim(0); }
  Index size_x() const { return base.value().dim(1); }
  Index size_y() const { return base.value().dim(2); }
};

/// Per-cell linear fusion of the two modality maps (1x1 convolution over the
/// channel concatenation), then a stride-{1,2,4} top-down pyramid encoder.
class BevFusion {
 public:
  BevFusion() = default;
  BevFusion(nn::ParamStore& ps, const std::string& prefix, Index cam_channels,
            Index lidar_channels, Index out_channels, Rng& rng);

  /// Output cell (i, j) depends only on input cell (i, j) of each modality.
  FusedBEV fuse(const ad::Var& cam_bev, const ad::Var& lidar_bev) const;

  /// Multi-scale enrichment; base-level shape is preserved. Spatial extents
  /// must be divisible by 4 (two stride-2 levels).
  FusedBEV fpn_encode(const FusedBEV& f) const;

  Index out_channels() const { return out_channels_; }

 private:
  nn::Conv2d fuse_conv_, down1_, down2_, lat0_, lat1_, lat2_, smooth_;
  Index cam_channels_ = 0;
  Index lidar_channels_ = 0;
  Index out_channels_ = 0;
};

}  // namespace bevcal
