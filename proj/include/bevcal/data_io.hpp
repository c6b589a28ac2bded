#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bevcal/bev_grid.hpp"
#include "bevcal/camera_branch.hpp"
#include "bevcal/geometry.hpp"
#include "bevcal/ggbd.hpp"
#include "bevcal/lidar_branch.hpp"
#include "bevcal/losses.hpp"

namespace bevcal {

/// One calibration example: paired sensor data plus the true extrinsic.
struct Sample {
  CameraFrame frame;
  PointCloud cloud;
  Pose t_gt;  // LiDAR -> camera
  std::string scene_id;

  void validate() const;
};

/// Procedural scene recipe: ground plane plus boxes and cylinders, scanned by
/// a spinning ring LiDAR at the origin and rendered through a pinhole camera
/// whose pose is drawn within the given ranges.
struct SyntheticSceneSpec {
  std::uint64_t seed = 0;
  double ground_z = -1.2;      // plane height, meters
  int num_boxes = 3;
  int num_cylinders = 2;
  double place_min = 1.5;      // primitive center radial distance bounds
  double place_max = 6.0;
  double box_min = 0.4;        // box edge length bounds
  double box_max = 1.6;
  double cyl_radius_min = 0.15;
  double cyl_radius_max = 0.5;
  double cyl_height_min = 0.8;
  double cyl_height_max = 2.2;
  int rings = 24;              // scan pattern
  int azimuth_steps = 512;
  double elev_min_deg = -25.0;
  double elev_max_deg = 8.0;
  double max_range = 12.0;
  Index image_h = 64;          // render target
  Index image_w = 64;
  double focal = 48.0;
  double cam_trans = 0.2;      // extrinsic draw: |t| bound per axis around the
  double cam_rot_deg = 8.0;    // canonical forward-looking mount
  double z_near = 0.25;        // inverse-depth encoding scale

  void validate() const;
};

/// Distances carving the frustum depth axis.
struct DepthSpec {
  double d_min = 1.0;
  double d_max = 9.0;
  Index bins = 16;

  void validate() const;
};

struct ChannelSpec {
  Index lidar = 8;   // N_L
  Index camera = 8;  // N_C
  Index bev = 64;    // N_B

  void validate() const;
};

struct OptimSpec {
  double lr = 5e-5;
  double weight_decay = 1e-4;
  Index batch_size = 16;
  Index epochs = 500;
  Index lr_step = 100;  // epochs per decay
  double lr_gamma = 0.5;

  void validate() const;
};

struct EvalSpec {
  Index trials = 5;
  std::vector<NoiseSpec> regimes = {{1.5, 20.0}, {1.0, 10.0}, {0.5, 5.0},
                                    {0.25, 2.0}, {0.1, 1.0}};

  void validate() const;
};

/// Whole-run settings; every field is validated on load.
struct RunConfig {
  BEVGrid grid;
  DepthSpec depth;
  ChannelSpec channels;
  LossWeights loss;
  Index max_reproj_points = 8192;
  NoiseSpec noise = {1.5, 20.0};
  OptimSpec optim;
  SelectMode select_mode = SelectMode::kGeometry;
  std::uint64_t seed = 0;
  bool use_intensity = false;
  SyntheticSceneSpec synth;
  Index num_scenes = 8;
  EvalSpec eval;

  void validate() const;
};

// ---- synthetic scenes ----

/// Deterministic scene construction; throws when the camera sees nothing.
Sample generate_synthetic(const SyntheticSceneSpec& spec);

/// Distance from a point to the nearest generated surface (test oracle).
double surface_distance(const SyntheticSceneSpec& spec, const Vec3& p);

/// Analytic camera-frame hit depth for a pixel, or nullopt when the ray
/// escapes the scene (test oracle; center-of-pixel ray).
std::optional<double> render_depth(const SyntheticSceneSpec& spec, const Pose& t_gt,
                                   Index u, Index v);

// ---- KITTI-format dataset files ----

/// Reads velodyne/NNNNNN.bin, image_2/NNNNNN.png, and calib.txt under
/// root/sequence. Throws MissingFileError or MalformedFileError.
Sample load_kitti_frame(const std::string& root, const std::string& sequence, int index);

/// Writes the same layout (float32 cloud, 8-bit PNG, P2/Tr calib rows).
void write_kitti_frame(const Sample& sample, const std::string& root,
                       const std::string& sequence, int index);

Tensor read_png(const std::string& path);              // (3, H, W) in [0, 1]
void write_png(const std::string& path, const Tensor& image);

// ---- configuration ----

RunConfig default_config();
RunConfig config_from_json(const std::string& text);   // unknown keys rejected
RunConfig load_config(const std::string& path);
std::string config_to_json(const RunConfig& cfg);

/// Scene manifest: per-scene specs, one JSON line each.
void write_manifest(const std::string& path, const std::vector<SyntheticSceneSpec>& scenes);
std::vector<SyntheticSceneSpec> read_manifest(const std::string& path);

/// The run's scene list: spec.synth with per-scene seeds derived from the
/// run seed.
std::vector<SyntheticSceneSpec> scene_specs(const RunConfig& cfg);

}  // namespace bevcal
