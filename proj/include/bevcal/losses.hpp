#pragma once

#include "bevcal/autodiff.hpp"
#include "bevcal/geometry.hpp"
#include "bevcal/lidar_branch.hpp"
#include "bevcal/rng.hpp"

namespace bevcal {

struct LossWeights {
  double lambda_r = 1.0;
  double lambda_t = 0.5;
  double lambda_pc = 0.5;
  double lambda_norm = 0.1;

  void validate() const;  // every weight finite and >= 0
};

/// Scalar graph nodes; call ad::backward on total to differentiate.
struct LossReport {
  ad::Var l_ang, l_norm, l_r, l_t, l_pc, total;

  bool all_finite() const;
};

struct RotationLossParts {
  ad::Var l_ang;   // geodesic angle to the target, [0, pi]
  ad::Var l_norm;  // (||r||_2 - 1)^2
  ad::Var l_r;     // l_ang + lambda_norm * l_norm
};

/// Geodesic distance between normalize(raw_r) and the unit target, plus the
/// unit-norm penalty on the raw vector. Throws on a zero-norm raw rotation.
RotationLossParts rotation_loss(const ad::Var& raw_r, const Quaternion& target,
                                double lambda_norm);

/// Smooth-L1 with 1 m transition, averaged over the three components.
ad::Var translation_loss(const ad::Var& t, const Vec3& target);

/// Mean displacement (meters) of the cloud under the round trip
/// T_gt^-1 * T_pred^-1 * T_init; zero exactly when the prediction matches the
/// supervision target. Clouds larger than max_points are uniformly
/// subsampled without replacement (no draws otherwise).
ad::Var reprojection_loss(const PointCloud& cloud, const Pose& t_gt, const ad::Var& raw_r,
                          const ad::Var& pred_t, const Pose& t_init, Index max_points,
                          Rng& rng);

/// Weighted combination; the report keeps every term for logging.
LossReport total_loss(const RotationLossParts& rot, const ad::Var& l_t, const ad::Var& l_pc,
                      const LossWeights& w);

}  // namespace bevcal
