#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bevcal/errors.hpp"
#include "bevcal/losses.hpp"

using namespace bevcal;
using ad::Var;

namespace {

constexpr double kPi = 3.14159265358979323846;

Var raw(double w, double x, double y, double z, bool grad = false) {
  return Var::leaf(Tensor::from({4}, {w, x, y, z}), grad);
}

Var vec3(double x, double y, double z, bool grad = false) {
  return Var::leaf(Tensor::from({3}, {x, y, z}), grad);
}

Quaternion random_unit(Rng& rng) {
  while (true) {
    const Quaternion q{rng.symmetric(1.0), rng.symmetric(1.0), rng.symmetric(1.0),
                       rng.symmetric(1.0)};
    const double n = q.norm();
    if (n > 0.1) return q.normalized();
  }
}

PointCloud small_cloud(Index n, Rng& rng, double spread = 3.0) {
  PointCloud pc;
  for (Index i = 0; i < n; ++i)
    pc.points.emplace_back(rng.symmetric(spread), rng.symmetric(spread),
                           rng.symmetric(spread));
  return pc;
}

Pose random_pose(Rng& rng, double t_spread = 1.0) {
  Pose p;
  p.rotation = random_unit(rng).canonical();
  p.translation = Vec3(rng.symmetric(t_spread), rng.symmetric(t_spread),
                       rng.symmetric(t_spread));
  return p;
}

}  // namespace

TEST_CASE("rotation loss spec values") {
  const auto at_identity = rotation_loss(raw(1, 0, 0, 0), Quaternion{}, 0.1);
  CHECK(at_identity.l_ang.item() == 0.0);
  CHECK(at_identity.l_norm.item() == 0.0);
  CHECK(at_identity.l_r.item() == 0.0);

  const Quaternion z90 = Quaternion::about_z(kPi / 2.0);
  const auto quarter = rotation_loss(raw(z90.w, z90.x, z90.y, z90.z), Quaternion{}, 0.1);
  CHECK(std::abs(quarter.l_ang.item() - kPi / 2.0) < 1e-12);

  const auto scaled = rotation_loss(raw(2, 0, 0, 0), Quaternion{}, 0.1);
  CHECK(std::abs(scaled.l_norm.item() - 1.0) < 1e-15);
  CHECK(scaled.l_ang.item() == 0.0);
  CHECK(std::abs(scaled.l_r.item() - 0.1) < 1e-15);

  CHECK_THROWS_AS(rotation_loss(raw(0, 0, 0, 0), Quaternion{}, 0.1), InvalidRotationError);
}

TEST_CASE("geodesic term is symmetric and sign invariant") {
  Rng rng = Rng::stream(81, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const Quaternion a = random_unit(rng);
    const Quaternion b = random_unit(rng);
    const double ab = rotation_loss(raw(a.w, a.x, a.y, a.z), b, 0.0).l_ang.item();
    const double ba = rotation_loss(raw(b.w, b.x, b.y, b.z), a, 0.0).l_ang.item();
    CHECK(std::abs(ab - ba) < 1e-12);
    const double neg = rotation_loss(raw(-a.w, -a.x, -a.y, -a.z), b, 0.0).l_ang.item();
    CHECK(neg == ab);
    CHECK(ab >= 0.0);
    CHECK(ab <= kPi + 1e-12);
  }
}

TEST_CASE("translation loss spec values") {
  CHECK(translation_loss(vec3(1, 2, 3), Vec3(1, 2, 3)).item() == 0.0);
  CHECK(std::abs(translation_loss(vec3(0.5, 0, 0), Vec3::Zero()).item() - 0.5 * 0.5 / 2 / 3) <
        1e-15);
  CHECK(translation_loss(vec3(2, 0, 0), Vec3::Zero()).item() == 0.5);
}

TEST_CASE("reprojection loss cancellation and unit displacement") {
  Rng rng = Rng::stream(81, 2);
  const PointCloud pc = small_cloud(40, rng);

  const Pose t_gt = random_pose(rng);
  const Pose t_init = random_pose(rng);
  const Pose target = supervision_target(t_init, t_gt);
  Rng sub = Rng::stream(81, 3);
  const Var r0 = raw(target.rotation.w, target.rotation.x, target.rotation.y,
                     target.rotation.z);
  const Var t0 = vec3(target.translation.x(), target.translation.y(),
                      target.translation.z());
  CHECK(reprojection_loss(pc, t_gt, r0, t0, t_init, 8192, sub).item() < 1e-9);

  Pose shift;
  shift.translation = Vec3(1, 0, 0);
  const double unit =
      reprojection_loss(pc, Pose::identity(), raw(1, 0, 0, 0), vec3(0, 0, 0), shift, 8192,
                        sub)
          .item();
  CHECK(std::abs(unit - 1.0) < 1e-12);

  PointCloud empty;
  CHECK_THROWS_AS(reprojection_loss(empty, t_gt, r0, t0, t_init, 8192, sub),
                  EmptySceneError);
  CHECK_THROWS_AS(reprojection_loss(pc, t_gt, r0, t0, t_init, 0, sub), ConfigError);
}

TEST_CASE("reprojection loss matches a per-point loop oracle") {
  Rng rng = Rng::stream(81, 4);
  const PointCloud pc = small_cloud(5, rng);
  const Pose t_gt = random_pose(rng);
  const Pose t_init = random_pose(rng);
  const Quaternion qr = random_unit(rng);
  const Vec3 tr(rng.symmetric(1.0), rng.symmetric(1.0), rng.symmetric(1.0));

  Rng sub = Rng::stream(81, 5);
  const double got = reprojection_loss(pc, t_gt, raw(qr.w, qr.x, qr.y, qr.z),
                                       vec3(tr.x(), tr.y(), tr.z()), t_init, 8192, sub)
                         .item();

  Pose pred;
  pred.rotation = qr;
  pred.translation = tr;
  const Mat4 m = invert(t_gt).as_matrix() * invert(pred).as_matrix() * t_init.as_matrix();
  double acc = 0.0;
  for (const Vec3& p : pc.points) {
    const Vec3 y = m.block<3, 3>(0, 0) * p + m.block<3, 1>(0, 3);
    acc += (y - p).norm();
  }
  CHECK(std::abs(got - acc / 5.0) < 1e-9);
}

TEST_CASE("reprojection subsampling is deterministic and duplication safe") {
  Rng rng = Rng::stream(81, 6);
  const Pose t_gt = random_pose(rng);
  const Pose t_init = random_pose(rng);
  const Quaternion qr = random_unit(rng);
  const Var r0 = raw(qr.w, qr.x, qr.y, qr.z);
  const Var t0 = vec3(0.3, -0.2, 0.1);

  PointCloud pc = small_cloud(50, rng);
  Rng s1 = Rng::stream(81, 7);
  Rng s2 = Rng::stream(81, 7);
  const double a = reprojection_loss(pc, t_gt, r0, t0, t_init, 20, s1).item();
  const double b = reprojection_loss(pc, t_gt, r0, t0, t_init, 20, s2).item();
  CHECK(a == b);

  // Doubling the cloud by duplication leaves the full-sample mean unchanged.
  PointCloud doubled = pc;
  doubled.points.insert(doubled.points.end(), pc.points.begin(), pc.points.end());
  Rng s3 = Rng::stream(81, 8);
  const double full = reprojection_loss(pc, t_gt, r0, t0, t_init, 8192, s3).item();
  const double twice = reprojection_loss(doubled, t_gt, r0, t0, t_init, 8192, s3).item();
  CHECK(std::abs(full - twice) < 1e-12);
}

TEST_CASE("total loss weighting") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());

  RotationLossParts zero;
  zero.l_ang = Var::scalar(0.0);
  zero.l_norm = Var::scalar(0.0);
  zero.l_r = Var::scalar(0.0);
  const LossReport none = total_loss(zero, Var::scalar(0.0), Var::scalar(0.0), w);
  CHECK(none.total.item() == 0.0);
  CHECK(none.all_finite());

  RotationLossParts unit;
  unit.l_ang = Var::scalar(1.0);
  unit.l_norm = Var::scalar(0.0);
  unit.l_r = Var::scalar(1.0);
  const LossReport ones = total_loss(unit, Var::scalar(1.0), Var::scalar(1.0), w);
  CHECK(ones.total.item() == 2.0);

  LossWeights no_pc = w;
  no_pc.lambda_pc = 0.0;
  const LossReport a = total_loss(unit, Var::scalar(1.0), Var::scalar(5.0), no_pc);
  const LossReport b = total_loss(unit, Var::scalar(1.0), Var::scalar(-3.0), no_pc);
  CHECK(a.total.item() == b.total.item());

  LossWeights bad = w;
  bad.lambda_t = -0.25;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  RotationLossParts nan_parts = unit;
  nan_parts.l_r = Var::scalar(std::nan(""));
  const LossReport sick = total_loss(nan_parts, Var::scalar(1.0), Var::scalar(1.0), w);
  CHECK(!sick.all_finite());
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng = Rng::stream(81, 9);
  double worst = 0.0;
  const double eps = 1e-6;
  for (int config = 0; config < 20; ++config) {
    const PointCloud pc = small_cloud(5, rng);
    const Pose t_gt = random_pose(rng);
    const Pose t_init = random_pose(rng);
    const Quaternion target = random_unit(rng);
    const Vec3 t_target(rng.symmetric(1.0), rng.symmetric(1.0), rng.symmetric(1.0));

    // Non-degenerate raw rotation: away from zero, the antipode, and the
    // geodesic kink at zero angle.
    Quaternion q;
    while (true) {
      q = random_unit(rng);
      const Quaternion d = q * target.conjugate();
      const double w = std::abs(d.canonical().w);
      if (w < 0.9995 && w > 0.02) break;
    }
    const double s = rng.uniform(0.5, 2.0);

    Var r = raw(s * q.w, s * q.x, s * q.y, s * q.z, true);
    Var t = vec3(rng.symmetric(2.0), rng.symmetric(2.0), rng.symmetric(2.0), true);
    LossWeights w;
    auto build = [&] {
      Rng sub = Rng::stream(81, 10);
      const RotationLossParts rot = rotation_loss(r, target, w.lambda_norm);
      const ad::Var lt = translation_loss(t, t_target);
      const ad::Var lpc = reprojection_loss(pc, t_gt, r, t, t_init, 8192, sub);
      return total_loss(rot, lt, lpc, w).total;
    };
    r.zero_grad();
    t.zero_grad();
    Var root = build();
    ad::backward(root);
    const Tensor gr = r.grad();
    const Tensor gt = t.grad();

    for (int side = 0; side < 2; ++side) {
      Var& v = side == 0 ? r : t;
      const Tensor& g = side == 0 ? gr : gt;
      for (Index i = 0; i < v.value().size(); ++i) {
        const double keep = v.value()[i];
        v.value()[i] = keep + eps;
        const double fp = build().item();
        v.value()[i] = keep - eps;
        const double fm = build().item();
        v.value()[i] = keep;
        const double fd = (fp - fm) / (2 * eps);
        worst = std::max(worst,
                         std::abs(g[i] - fd) / std::max({1.0, std::abs(g[i]), std::abs(fd)}));
      }
    }
  }
  CHECK(worst < 1e-4);
}
