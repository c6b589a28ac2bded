#include "bevcal/bev_fusion.hpp"

#include "bevcal/errors.hpp"

namespace bevcal {

BevFusion::BevFusion(nn::ParamStore& ps, const std::string& prefix, Index cam_channels,
                     Index lidar_channels, Index out_channels, Rng& rng)
    : fuse_conv_(ps, prefix + ".fuse", cam_channels + lidar_channels, out_channels, 1, 1, 0,
                 rng),
      down1_(ps, prefix + ".down1", out_channels, out_channels, 3, 2, 1, rng),
      down2_(ps, prefix + ".down2", out_channels, out_channels, 3, 2, 1, rng),
      lat0_(ps, prefix + ".lat0", out_channels, out_channels, 1, 1, 0, rng),
      lat1_(ps, prefix + ".lat1", out_channels, out_channels, 1, 1, 0, rng),
      lat2_(ps, prefix + ".lat2", out_channels, out_channels, 1, 1, 0, rng),
      smooth_(ps, prefix + ".smooth", out_channels, out_channels, 3, 1, 1, rng),
      cam_channels_(cam_channels),
      lidar_channels_(lidar_channels),
      out_channels_(out_channels) {}

FusedBEV BevFusion::fuse(const ad::Var& cam_bev, const ad::Var& lidar_bev) const {
  if (cam_bev.value().dim(0) != cam_channels_ || lidar_bev.value().dim(0) != lidar_channels_)
    throw ConfigError("modality channel counts do not match the fusion layer");
  if (cam_bev.value().dim(1) != lidar_bev.value().dim(1) ||
      cam_bev.value().dim(2) != lidar_bev.value().dim(2))
    throw ConfigError("modality BEV maps must share spatial shape");
  return FusedBEV{fuse_conv_.forward(ad::concat0(cam_bev, lidar_bev))};
}

FusedBEV BevFusion::fpn_encode(const FusedBEV& f) const {
  const Index x = f.size_x(), y = f.size_y();
  if (x % 4 != 0 || y % 4 != 0)
    throw ConfigError("pyramid encoder needs spatial extents divisible by 4");

  const ad::Var d1 = ad::gelu(down1_.forward(f.base));
  const ad::Var d2 = ad::gelu(down2_.forward(d1));
  const ad::Var t2 = lat2_.forward(d2);
  const ad::Var t1 = ad::add(lat1_.forward(d1), ad::upsample2_nearest(t2));
  const ad::Var t0 = ad::add(lat0_.forward(f.base), ad::upsample2_nearest(t1));
  return FusedBEV{smooth_.forward(t0)};
}

}  // namespace bevcal
