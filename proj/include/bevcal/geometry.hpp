#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>

#include "bevcal/rng.hpp"

namespace bevcal {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Unit quaternion in (w, x, y, z) storage order, canonical sign w >= 0.
struct Quaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  static Quaternion identity() { return {}; }
  static Quaternion about_x(double angle_rad);
  static Quaternion about_y(double angle_rad);
  static Quaternion about_z(double angle_rad);

  double norm() const;
  Quaternion normalized() const;  // throws on zero norm
  Quaternion canonical() const;   // flips sign so w >= 0
  Quaternion conjugate() const { return {w, -x, -y, -z}; }
  Quaternion operator*(const Quaternion& o) const;  // Hamilton product
  std::array<double, 4> coeffs() const { return {w, x, y, z}; }
};

Mat3 quat_to_matrix(const Quaternion& q);
Quaternion matrix_to_quat(const Mat3& m);  // validates orthonormality, det +1

/// Intrinsic Z-Y-X factorization: R = Rz(yaw) * Ry(pitch) * Rx(roll).
struct EulerZYX {
  double roll = 0.0, pitch = 0.0, yaw = 0.0;  // radians
  bool gimbal_lock = false;
};

EulerZYX matrix_to_euler_zyx(const Mat3& r);
Mat3 euler_zyx_to_matrix(double roll, double pitch, double yaw);

/// Rigid transform; rotation stored normalized with canonical sign.
struct Pose {
  Quaternion rotation;
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_matrix(const Mat4& m);
  Mat4 as_matrix() const;
};

Pose compose(const Pose& a, const Pose& b);  // a then b applied right-to-left: a*b
Pose invert(const Pose& p);
Vec3 transform_point(const Pose& p, const Vec3& v);

/// Per-axis bounds for the pose perturbation protocol.
struct NoiseSpec {
  double max_trans_m = 0.0;  // each translation component in [-max, +max]
  double max_rot_deg = 0.0;  // each Euler angle in [-max, +max]

  void validate() const;  // throws ConfigError on negative bounds
};

// Perturbation protocol: T_init = T_delta * T_gt, the network regresses
// T_pred ~ T_init * T_gt^-1, and the calibration is read back as
// T_hat = T_pred^-1 * T_init.
Pose sample_noise(const NoiseSpec& spec, Rng& rng);
Pose make_initial(const Pose& t_gt, const Pose& t_delta);
Pose supervision_target(const Pose& t_init, const Pose& t_gt);
Pose recover_extrinsic(const Pose& t_pred, const Pose& t_init);

struct CalibrationError {
  Vec3 trans_xyz_cm = Vec3::Zero();  // |t_gt - t_pred| per axis
  Vec3 rot_rpy_deg = Vec3::Zero();   // |euler(R_pred * R_gt^T)| per axis
  double e_t_cm = 0.0;               // euclidean norm of trans_xyz_cm
  double e_r_deg = 0.0;              // euclidean norm of rot_rpy_deg
  bool gimbal_lock = false;
};

CalibrationError compute_metrics(const Pose& pred, const Pose& gt);

// Text forms: 16 row-major decimal floats for the homogeneous matrix, and a
// (qw,qx,qy,qz,tx,ty,tz) tuple for configs.
std::string pose_to_matrix_text(const Pose& p);
Pose pose_from_matrix_text(const std::string& text);
std::array<double, 7> pose_to_tuple(const Pose& p);
Pose pose_from_tuple(const std::array<double, 7>& t);

constexpr double deg_to_rad(double d) { return d * 3.14159265358979323846 / 180.0; }
constexpr double rad_to_deg(double r) { return r * 180.0 / 3.14159265358979323846; }

}  // namespace bevcal
