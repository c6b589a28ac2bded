#include "bevcal/losses.hpp"

#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "bevcal/errors.hpp"

namespace bevcal {

void LossWeights::validate() const {
  for (double w : {lambda_r, lambda_t, lambda_pc, lambda_norm})
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be >= 0");
}

bool LossReport::all_finite() const {
  for (const ad::Var* v : {&l_ang, &l_norm, &l_r, &l_t, &l_pc, &total})
    if (!std::isfinite(v->item())) return false;
  return true;
}

RotationLossParts rotation_loss(const ad::Var& raw_r, const Quaternion& target,
                                double lambda_norm) {
  if (raw_r.value().size() != 4) throw ConfigError("raw rotation must have 4 components");
  const Quaternion s = target.normalized().conjugate();
  // Right multiplication by the constant s is linear in the variable side.
  Tensor m({4, 4});
  m.at2(0, 0) = s.w, m.at2(0, 1) = -s.x, m.at2(0, 2) = -s.y, m.at2(0, 3) = -s.z;
  m.at2(1, 0) = s.x, m.at2(1, 1) = s.w, m.at2(1, 2) = s.z, m.at2(1, 3) = -s.y;
  m.at2(2, 0) = s.y, m.at2(2, 1) = -s.z, m.at2(2, 2) = s.w, m.at2(2, 3) = s.x;
  m.at2(3, 0) = s.z, m.at2(3, 1) = s.y, m.at2(3, 2) = -s.x, m.at2(3, 3) = s.w;

  const ad::Var q_n = ad::l2_normalize(raw_r);
  const ad::Var q_delta =
      ad::reshape(ad::matmul(ad::Var::constant(std::move(m)), ad::reshape(q_n, {4, 1})), {4});

  RotationLossParts parts;
  parts.l_ang = ad::geodesic_angle(q_delta);
  const ad::Var excess = ad::add_scalar(ad::norm2(raw_r), -1.0);
  parts.l_norm = ad::mul(excess, excess);
  parts.l_r = ad::add(parts.l_ang, ad::scale(parts.l_norm, lambda_norm));
  return parts;
}

ad::Var translation_loss(const ad::Var& t, const Vec3& target) {
  if (t.value().size() != 3) throw ConfigError("translation must have 3 components");
  return ad::smooth_l1_mean(t, Tensor::from({3}, {target.x(), target.y(), target.z()}), 1.0);
}

ad::Var reprojection_loss(const PointCloud& cloud, const Pose& t_gt, const ad::Var& raw_r,
                          const ad::Var& pred_t, const Pose& t_init, Index max_points,
                          Rng& rng) {
  cloud.validate();
  if (max_points < 1) throw ConfigError("reprojection subsample size must be >= 1");

  const Index n = static_cast<Index>(cloud.points.size());
  std::vector<Index> take(static_cast<std::size_t>(n));
  std::iota(take.begin(), take.end(), Index{0});
  if (n > max_points) {
    for (Index i = 0; i < max_points; ++i) {
      const Index j =
          i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i)));
      std::swap(take[static_cast<std::size_t>(i)], take[static_cast<std::size_t>(j)]);
    }
    take.resize(static_cast<std::size_t>(max_points));
  }
  const Index k = static_cast<Index>(take.size());

  const Mat3 init_r = quat_to_matrix(t_init.rotation);
  const Pose gt_inv = invert(t_gt);
  const Mat3 gi_r = quat_to_matrix(gt_inv.rotation);

  // b = T_init applied to the points; c = gt_inv translation minus the points.
  Tensor b({3, k}), c({3, k});
  for (Index j = 0; j < k; ++j) {
    const Vec3& p = cloud.points[static_cast<std::size_t>(take[static_cast<std::size_t>(j)])];
    const Vec3 moved = init_r * p + t_init.translation;
    for (Index i = 0; i < 3; ++i) {
      b.at2(i, j) = moved[i];
      c.at2(i, j) = gt_inv.translation[i] - p[i];
    }
  }

  Tensor gi({3, 3});
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) gi.at2(i, j) = gi_r(i, j);

  const ad::Var rot = ad::quat_rotmat(ad::l2_normalize(raw_r));
  const ad::Var shifted = ad::sub_colvec_from_const(b, pred_t);
  const ad::Var back = ad::matmul(ad::transpose(rot), shifted);
  const ad::Var world = ad::matmul(ad::Var::constant(std::move(gi)), back);
  return ad::colwise_norm_mean(ad::add(world, ad::Var::constant(std::move(c))));
}

LossReport total_loss(const RotationLossParts& rot, const ad::Var& l_t, const ad::Var& l_pc,
                      const LossWeights& w) {
  w.validate();
  LossReport r;
  r.l_ang = rot.l_ang;
  r.l_norm = rot.l_norm;
  r.l_r = rot.l_r;
  r.l_t = l_t;
  r.l_pc = l_pc;
  r.total = ad::add(ad::add(ad::scale(rot.l_r, w.lambda_r), ad::scale(l_t, w.lambda_t)),
                    ad::scale(l_pc, w.lambda_pc));
  return r;
}

}  // namespace bevcal
