#include "bevcal/geometry.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "bevcal/errors.hpp"

namespace bevcal {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kOrthoTol = 1e-6;
constexpr double kGimbalTol = 1e-6;
}  // namespace

Quaternion Quaternion::about_x(double a) { return {std::cos(a / 2), std::sin(a / 2), 0, 0}; }
Quaternion Quaternion::about_y(double a) { return {std::cos(a / 2), 0, std::sin(a / 2), 0}; }
Quaternion Quaternion::about_z(double a) { return {std::cos(a / 2), 0, 0, std::sin(a / 2)}; }

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion Quaternion::normalized() const {
  const double n = norm();
  if (n <= 0.0) throw InvalidRotationError("zero-norm quaternion");
  return {w / n, x / n, y / n, z / n};
}

Quaternion Quaternion::canonical() const {
  if (w < 0.0) return {-w, -x, -y, -z};
  return *this;
}

Quaternion Quaternion::operator*(const Quaternion& o) const {
  // Terms are paired so that q * conj(q) cancels exactly per component.
  return {(w * o.w - x * o.x) - (y * o.y + z * o.z),
          (w * o.x + x * o.w) + (y * o.z - z * o.y),
          (w * o.y + y * o.w) + (z * o.x - x * o.z),
          (w * o.z + z * o.w) + (x * o.y - y * o.x)};
}

Mat3 quat_to_matrix(const Quaternion& q_in) {
  const Quaternion q = q_in.normalized();
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return m;
}

Quaternion matrix_to_quat(const Mat3& m) {
  if ((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() > kOrthoTol ||
      m.determinant() < 0.0)
    throw InvalidRotationError("matrix is not a proper rotation");
  // Shepperd's method: pick the largest diagonal combination for stability.
  const double t = m.trace();
  Quaternion q;
  if (t > 0.0) {
    const double s = std::sqrt(t + 1.0) * 2.0;
    q.w = 0.25 * s;
    q.x = (m(2, 1) - m(1, 2)) / s;
    q.y = (m(0, 2) - m(2, 0)) / s;
    q.z = (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    const double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
    q.w = (m(2, 1) - m(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (m(0, 1) + m(1, 0)) / s;
    q.z = (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) > m(2, 2)) {
    const double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
    q.w = (m(0, 2) - m(2, 0)) / s;
    q.x = (m(0, 1) + m(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (m(1, 2) + m(2, 1)) / s;
  } else {
    const double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
    q.w = (m(1, 0) - m(0, 1)) / s;
    q.x = (m(0, 2) + m(2, 0)) / s;
    q.y = (m(1, 2) + m(2, 1)) / s;
    q.z = 0.25 * s;
  }
  return q.normalized().canonical();
}

EulerZYX matrix_to_euler_zyx(const Mat3& r) {
  EulerZYX e;
  const double sp = -r(2, 0);
  e.pitch = std::asin(std::clamp(sp, -1.0, 1.0));
  if (std::abs(std::abs(sp) - 1.0) < kGimbalTol) {
    e.gimbal_lock = true;
    e.roll = 0.0;
    e.yaw = std::atan2(-r(0, 1), r(1, 1));
  } else {
    e.roll = std::atan2(r(2, 1), r(2, 2));
    e.yaw = std::atan2(r(1, 0), r(0, 0));
  }
  return e;
}

Mat3 euler_zyx_to_matrix(double roll, double pitch, double yaw) {
  return quat_to_matrix(Quaternion::about_z(yaw) * Quaternion::about_y(pitch) *
                        Quaternion::about_x(roll));
}

Pose Pose::from_matrix(const Mat4& m) {
  if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > kOrthoTol)
    throw InvalidRotationError("homogeneous matrix last row must be [0,0,0,1]");
  Pose p;
  p.rotation = matrix_to_quat(m.topLeftCorner<3, 3>());
  p.translation = m.topRightCorner<3, 1>();
  return p;
}

Mat4 Pose::as_matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = quat_to_matrix(rotation);
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.rotation = (a.rotation.normalized() * b.rotation.normalized()).normalized().canonical();
  out.translation = quat_to_matrix(a.rotation) * b.translation + a.translation;
  return out;
}

Pose invert(const Pose& p) {
  Pose out;
  out.rotation = p.rotation.normalized().conjugate().canonical();
  out.translation = -(quat_to_matrix(out.rotation) * p.translation);
  return out;
}

Vec3 transform_point(const Pose& p, const Vec3& v) {
  return quat_to_matrix(p.rotation) * v + p.translation;
}

void NoiseSpec::validate() const {
  if (max_trans_m < 0.0 || max_rot_deg < 0.0)
    throw ConfigError("noise bounds must be non-negative");
}

Pose sample_noise(const NoiseSpec& spec, Rng& rng) {
  spec.validate();
  Pose p;
  p.translation = Vec3(rng.symmetric(spec.max_trans_m), rng.symmetric(spec.max_trans_m),
                       rng.symmetric(spec.max_trans_m));
  const double bound = deg_to_rad(spec.max_rot_deg);
  const double roll = rng.symmetric(bound);
  const double pitch = rng.symmetric(bound);
  const double yaw = rng.symmetric(bound);
  p.rotation = (Quaternion::about_z(yaw) * Quaternion::about_y(pitch) *
                Quaternion::about_x(roll))
                   .normalized()
                   .canonical();
  return p;
}

Pose make_initial(const Pose& t_gt, const Pose& t_delta) { return compose(t_delta, t_gt); }

Pose supervision_target(const Pose& t_init, const Pose& t_gt) {
  return compose(t_init, invert(t_gt));
}

Pose recover_extrinsic(const Pose& t_pred, const Pose& t_init) {
  return compose(invert(t_pred), t_init);
}

CalibrationError compute_metrics(const Pose& pred, const Pose& gt) {
  CalibrationError err;
  err.trans_xyz_cm = (gt.translation - pred.translation).cwiseAbs() * 100.0;
  // Relative rotation built in quaternion space: equal to R_pred * R_gt^T for
  // unit quaternions, and exactly the identity when pred == gt bitwise.
  const Quaternion q_err =
      pred.rotation.normalized() * gt.rotation.normalized().conjugate();
  const EulerZYX e = matrix_to_euler_zyx(quat_to_matrix(q_err));
  err.rot_rpy_deg =
      Vec3(std::abs(rad_to_deg(e.roll)), std::abs(rad_to_deg(e.pitch)),
           std::abs(rad_to_deg(e.yaw)));
  err.e_t_cm = err.trans_xyz_cm.norm();
  err.e_r_deg = err.rot_rpy_deg.norm();
  err.gimbal_lock = e.gimbal_lock;
  return err;
}

std::string pose_to_matrix_text(const Pose& p) {
  const Mat4 m = p.as_matrix();
  std::string out;
  char buf[32];
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      if (i || j) out += ' ';
      out += buf;
    }
  return out;
}

Pose pose_from_matrix_text(const std::string& text) {
  std::istringstream in(text);
  Mat4 m;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (!(in >> m(i, j))) throw MalformedFileError("pose text needs 16 numbers");
  double extra;
  if (in >> extra) throw MalformedFileError("pose text has trailing numbers");
  return Pose::from_matrix(m);
}

std::array<double, 7> pose_to_tuple(const Pose& p) {
  const Quaternion q = p.rotation.normalized().canonical();
  return {q.w, q.x, q.y, q.z, p.translation.x(), p.translation.y(), p.translation.z()};
}

Pose pose_from_tuple(const std::array<double, 7>& t) {
  Pose p;
  p.rotation = Quaternion{t[0], t[1], t[2], t[3]}.normalized().canonical();
  p.translation = Vec3(t[4], t[5], t[6]);
  return p;
}

}  // namespace bevcal
