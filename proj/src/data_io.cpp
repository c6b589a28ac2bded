#include "bevcal/data_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <set>
#include <sstream>

#include "bevcal/errors.hpp"

namespace bevcal {
namespace {

using njson = nlohmann::json;

constexpr double kTau = 6.283185307179586476925286766559;

// ---- procedural geometry ----

struct Box {
  Vec3 lo, hi;
};

struct Cylinder {
  double cx, cy, radius, z0, z1;
};

struct SceneGeometry {
  double ground_z;
  std::vector<Box> boxes;
  std::vector<Cylinder> cyls;

  int primitive_count() const {
    return 1 + static_cast<int>(boxes.size()) + static_cast<int>(cyls.size());
  }
};

SceneGeometry build_geometry(const SyntheticSceneSpec& spec) {
  SceneGeometry g;
  g.ground_z = spec.ground_z;
  Rng rng = Rng::stream(spec.seed, 1);
  for (int i = 0; i < spec.num_boxes; ++i) {
    const double dist = rng.uniform(spec.place_min, spec.place_max);
    const double az = rng.uniform(0.0, kTau);
    const double sx = rng.uniform(spec.box_min, spec.box_max);
    const double sy = rng.uniform(spec.box_min, spec.box_max);
    const double sz = rng.uniform(spec.box_min, spec.box_max);
    const double cx = dist * std::cos(az), cy = dist * std::sin(az);
    Box b;
    b.lo = Vec3(cx - sx / 2, cy - sy / 2, spec.ground_z);
    b.hi = Vec3(cx + sx / 2, cy + sy / 2, spec.ground_z + sz);
    g.boxes.push_back(b);
  }
  for (int i = 0; i < spec.num_cylinders; ++i) {
    const double dist = rng.uniform(spec.place_min, spec.place_max);
    const double az = rng.uniform(0.0, kTau);
    Cylinder c;
    c.cx = dist * std::cos(az);
    c.cy = dist * std::sin(az);
    c.radius = rng.uniform(spec.cyl_radius_min, spec.cyl_radius_max);
    c.z0 = spec.ground_z;
    c.z1 = spec.ground_z + rng.uniform(spec.cyl_height_min, spec.cyl_height_max);
    g.cyls.push_back(c);
  }
  return g;
}

struct Hit {
  double t;
  int prim;  // 0 ground, then boxes, then cylinders
};

std::optional<Hit> cast_ray(const SceneGeometry& g, const Vec3& o, const Vec3& d,
                            double max_range) {
  constexpr double kEps = 1e-9;
  std::optional<Hit> best;
  auto consider = [&](double t, int prim) {
    if (t > kEps && t <= max_range && (!best || t < best->t)) best = Hit{t, prim};
  };

  if (d.z() != 0.0) consider((g.ground_z - o.z()) / d.z(), 0);

  for (std::size_t i = 0; i < g.boxes.size(); ++i) {
    const Box& b = g.boxes[i];
    double t0 = kEps, t1 = max_range;
    bool ok = true;
    for (int a = 0; a < 3 && ok; ++a) {
      if (d[a] == 0.0) {
        ok = o[a] >= b.lo[a] && o[a] <= b.hi[a];
      } else {
        double lo = (b.lo[a] - o[a]) / d[a];
        double hi = (b.hi[a] - o[a]) / d[a];
        if (lo > hi) std::swap(lo, hi);
        t0 = std::max(t0, lo);
        t1 = std::min(t1, hi);
        ok = t0 <= t1;
      }
    }
    if (ok) consider(t0, 1 + static_cast<int>(i));
  }

  const int cyl_base = 1 + static_cast<int>(g.boxes.size());
  for (std::size_t i = 0; i < g.cyls.size(); ++i) {
    const Cylinder& c = g.cyls[i];
    const double ox = o.x() - c.cx, oy = o.y() - c.cy;
    const double a = d.x() * d.x() + d.y() * d.y();
    if (a == 0.0) continue;
    const double b = 2.0 * (ox * d.x() + oy * d.y());
    const double q = ox * ox + oy * oy - c.radius * c.radius;
    const double disc = b * b - 4.0 * a * q;
    if (disc < 0.0) continue;
    const double root = std::sqrt(disc);
    for (const double t : {(-b - root) / (2 * a), (-b + root) / (2 * a)}) {
      const double z = o.z() + t * d.z();
      if (z >= c.z0 && z <= c.z1) consider(t, cyl_base + static_cast<int>(i));
    }
  }
  return best;
}

double box_surface_distance(const Box& b, const Vec3& p) {
  Vec3 center = (b.lo + b.hi) / 2, half = (b.hi - b.lo) / 2;
  const Vec3 q = (p - center).cwiseAbs() - half;
  const double outside = q.cwiseMax(0.0).norm();
  const double inside = std::min(std::max({q.x(), q.y(), q.z()}), 0.0);
  return std::abs(outside + inside);
}

Mat4 make_intrinsics(const SyntheticSceneSpec& spec) {
  Mat4 k = Mat4::Identity();
  k(0, 0) = spec.focal;
  k(1, 1) = spec.focal;
  k(0, 2) = static_cast<double>(spec.image_w) / 2.0;
  k(1, 2) = static_cast<double>(spec.image_h) / 2.0;
  return k;
}

Pose canonical_mount() {
  Mat3 r0;
  // LiDAR +x maps to the camera's optical axis, +y to image left, +z up.
  r0 << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  Pose p;
  p.rotation = matrix_to_quat(r0);
  p.translation = Vec3(0.0, -0.06, 0.1);
  return p;
}

Pose sample_extrinsic(const SyntheticSceneSpec& spec) {
  NoiseSpec wiggle{spec.cam_trans, spec.cam_rot_deg};
  Rng rng = Rng::stream(spec.seed, 2);
  const Pose pert = sample_noise(wiggle, rng);
  return compose(pert, canonical_mount());
}

double ground_shade(const SceneGeometry& g, int prim) {
  return static_cast<double>(prim + 1) / static_cast<double>(g.primitive_count() + 1);
}

}  // namespace

// ---- validation ----

void Sample::validate() const {
  frame.validate();
  cloud.validate();
  if (scene_id.empty()) throw ConfigError("sample needs a scene id");
  (void)quat_to_matrix(t_gt.rotation);  // rejects an invalid rotation
}

void SyntheticSceneSpec::validate() const {
  if (num_boxes < 1 || num_cylinders < 1)
    throw ConfigError("synth: primitive counts must be >= 1");
  if (rings < 2 || azimuth_steps < 4)
    throw ConfigError("synth: scan pattern too sparse");
  if (!(place_min > 0.0) || place_min >= place_max)
    throw ConfigError("synth: placement radius bounds must satisfy 0 < min < max");
  if (place_max > max_range)
    throw ConfigError("synth: primitives placed beyond the scan range");
  if (!(box_min > 0.0) || box_min > box_max)
    throw ConfigError("synth: box size bounds out of order");
  if (!(cyl_radius_min > 0.0) || cyl_radius_min > cyl_radius_max ||
      !(cyl_height_min > 0.0) || cyl_height_min > cyl_height_max)
    throw ConfigError("synth: cylinder size bounds out of order");
  if (!(ground_z < 0.0)) throw ConfigError("synth: ground must lie below the sensor");
  if (elev_min_deg >= elev_max_deg) throw ConfigError("synth: elevation bounds out of order");
  if (image_h < 16 || image_w < 16) throw ConfigError("synth: image too small");
  if (!(focal > 0.0)) throw ConfigError("synth: focal length must be positive");
  if (!(z_near > 0.0)) throw ConfigError("synth: near plane must be positive");
  if (cam_trans < 0.0 || cam_rot_deg < 0.0)
    throw ConfigError("synth: extrinsic draw bounds must be >= 0");
}

void DepthSpec::validate() const {
  if (!(d_min > 0.0) || !(d_max > d_min)) throw ConfigError("depth: need 0 < d_min < d_max");
  if (bins < 2) throw ConfigError("depth: need at least 2 bins");
}

void ChannelSpec::validate() const {
  if (lidar < 1 || camera < 1) throw ConfigError("channels: widths must be >= 1");
  if (bev < 4 || bev % 4 != 0)
    throw ConfigError("channels: bev width must be a positive multiple of 4");
}

void OptimSpec::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optim: learning rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("optim: weight decay must be >= 0");
  if (batch_size < 1 || epochs < 1) throw ConfigError("optim: batch and epochs must be >= 1");
  if (lr_step < 1) throw ConfigError("optim: schedule step must be >= 1");
  if (!(lr_gamma > 0.0) || lr_gamma > 1.0)
    throw ConfigError("optim: schedule factor must be in (0, 1]");
}

void EvalSpec::validate() const {
  if (trials < 1) throw ConfigError("eval: trials must be >= 1");
  if (regimes.empty()) throw ConfigError("eval: need at least one noise regime");
  for (const NoiseSpec& n : regimes) n.validate();
}

void RunConfig::validate() const {
  grid.validate();
  if (grid.size_x % 4 != 0 || grid.size_y % 4 != 0)
    throw ConfigError("grid: extents must be divisible by 4 for the pyramid encoder");
  depth.validate();
  channels.validate();
  loss.validate();
  if (max_reproj_points < 1) throw ConfigError("max_reproj_points must be >= 1");
  noise.validate();
  optim.validate();
  synth.validate();
  if (num_scenes < 1) throw ConfigError("num_scenes must be >= 1");
  eval.validate();
}

// ---- synthetic scenes ----

Sample generate_synthetic(const SyntheticSceneSpec& spec) {
  spec.validate();
  const SceneGeometry geom = build_geometry(spec);

  Sample s;
  s.scene_id = "synth-" + std::to_string(spec.seed);
  s.t_gt = sample_extrinsic(spec);

  for (int ring = 0; ring < spec.rings; ++ring) {
    const double elev =
        deg_to_rad(spec.elev_min_deg + (spec.elev_max_deg - spec.elev_min_deg) *
                                           static_cast<double>(ring) /
                                           static_cast<double>(spec.rings - 1));
    for (int step = 0; step < spec.azimuth_steps; ++step) {
      const double az = kTau * static_cast<double>(step) / spec.azimuth_steps;
      const Vec3 dir(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az),
                     std::sin(elev));
      const auto hit = cast_ray(geom, Vec3::Zero(), dir, spec.max_range);
      if (!hit) continue;
      s.cloud.points.push_back(hit->t * dir);
      s.cloud.intensity.push_back(ground_shade(geom, hit->prim));
    }
  }
  if (s.cloud.points.empty()) throw EmptySceneError("LiDAR scan hit nothing");

  s.frame.intrinsics = make_intrinsics(spec);
  s.frame.image = Tensor::zeros({3, spec.image_h, spec.image_w});
  const Pose cam_to_lidar = invert(s.t_gt);
  const Mat3 rot_cl = quat_to_matrix(cam_to_lidar.rotation);
  const double fx = s.frame.intrinsics(0, 0), fy = s.frame.intrinsics(1, 1);
  const double cx = s.frame.intrinsics(0, 2), cy = s.frame.intrinsics(1, 2);
  Index hits = 0;
  for (Index v = 0; v < spec.image_h; ++v) {
    for (Index u = 0; u < spec.image_w; ++u) {
      const Vec3 dir_cam((static_cast<double>(u) + 0.5 - cx) / fx,
                         (static_cast<double>(v) + 0.5 - cy) / fy, 1.0);
      const Vec3 dir = rot_cl * dir_cam.normalized();
      const auto hit = cast_ray(geom, cam_to_lidar.translation, dir, spec.max_range);
      if (!hit) continue;
      ++hits;
      const Vec3 p_lidar = cam_to_lidar.translation + hit->t * dir;
      const double depth = transform_point(s.t_gt, p_lidar).z();
      s.frame.image.at3(0, v, u) = std::clamp(spec.z_near / depth, 0.0, 1.0);
      s.frame.image.at3(1, v, u) =
          std::clamp((p_lidar.z() - spec.ground_z) / 4.0, 0.0, 1.0);
      s.frame.image.at3(2, v, u) = ground_shade(geom, hit->prim);
    }
  }
  if (hits == 0) throw EmptySceneError("camera sees no geometry");

  s.validate();
  return s;
}

double surface_distance(const SyntheticSceneSpec& spec, const Vec3& p) {
  const SceneGeometry g = build_geometry(spec);
  double best = std::abs(p.z() - g.ground_z);
  for (const Box& b : g.boxes) best = std::min(best, box_surface_distance(b, p));
  for (const Cylinder& c : g.cyls) {
    if (p.z() < c.z0 - 1e-9 || p.z() > c.z1 + 1e-9) continue;
    const double rho = std::hypot(p.x() - c.cx, p.y() - c.cy);
    best = std::min(best, std::abs(rho - c.radius));
  }
  return best;
}

std::optional<double> render_depth(const SyntheticSceneSpec& spec, const Pose& t_gt,
                                   Index u, Index v) {
  const SceneGeometry geom = build_geometry(spec);
  const Mat4 k = make_intrinsics(spec);
  const Pose cam_to_lidar = invert(t_gt);
  const Vec3 dir_cam((static_cast<double>(u) + 0.5 - k(0, 2)) / k(0, 0),
                     (static_cast<double>(v) + 0.5 - k(1, 2)) / k(1, 1), 1.0);
  const Vec3 dir = quat_to_matrix(cam_to_lidar.rotation) * dir_cam.normalized();
  const auto hit = cast_ray(geom, cam_to_lidar.translation, dir, spec.max_range);
  if (!hit) return std::nullopt;
  return transform_point(t_gt, cam_to_lidar.translation + hit->t * dir).z();
}

// ---- PNG ----

void write_png(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ConfigError("image tensor must be (3, H, W)");
  const Index h = image.dim(1), w = image.dim(2);
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw MissingFileError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw MalformedFileError("png write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 3);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at3(c, y, x), 0.0, 1.0);
        row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] =
            static_cast<png_byte>(std::lround(v * 255.0));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

Tensor read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw MissingFileError("missing image: " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, fp) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    std::fclose(fp);
    throw MalformedFileError("not a png: " + path);
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw MalformedFileError("png decode failed: " + path);
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const Index h = static_cast<Index>(png_get_image_height(png, info));
  const Index w = static_cast<Index>(png_get_image_width(png, info));
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 3);
  Tensor image({3, h, w});
  for (Index y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c)
        image.at3(c, y, x) =
            row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return image;
}

// ---- KITTI layout ----

namespace {

std::string frame_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", index);
  return buf;
}

std::vector<double> parse_calib_row(const std::string& line, const std::string& path) {
  std::istringstream ss(line);
  std::string tag;
  ss >> tag;
  std::vector<double> vals;
  double v;
  while (ss >> v) vals.push_back(v);
  if (vals.size() != 12)
    throw MalformedFileError(path + ": calib row needs 12 values, got " +
                             std::to_string(vals.size()));
  for (double x : vals)
    if (!std::isfinite(x)) throw MalformedFileError(path + ": non-finite calib value");
  return vals;
}

}  // namespace

Sample load_kitti_frame(const std::string& root, const std::string& sequence, int index) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(root) / sequence;
  const std::string stem = frame_name(index);
  const fs::path bin_path = base / "velodyne" / (stem + ".bin");
  const fs::path img_path = base / "image_2" / (stem + ".png");
  const fs::path calib_path = base / "calib.txt";

  Sample s;
  s.scene_id = sequence + "/" + stem;

  std::ifstream bin(bin_path, std::ios::binary | std::ios::ate);
  if (!bin) throw MissingFileError("missing cloud: " + bin_path.string());
  const std::streamoff bytes = bin.tellg();
  if (bytes % 16 != 0)
    throw MalformedFileError(bin_path.string() + ": byte count not divisible by 16");
  bin.seekg(0);
  const Index n = static_cast<Index>(bytes / 16);
  if (n == 0) throw EmptySceneError(bin_path.string() + ": empty cloud");
  std::vector<float> raw(static_cast<std::size_t>(n) * 4);
  bin.read(reinterpret_cast<char*>(raw.data()), bytes);
  if (!bin) throw MalformedFileError(bin_path.string() + ": short read");
  s.cloud.points.reserve(static_cast<std::size_t>(n));
  s.cloud.intensity.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const float* p = raw.data() + i * 4;
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]) ||
        !std::isfinite(p[3]))
      throw MalformedFileError(bin_path.string() + ": non-finite point");
    s.cloud.points.emplace_back(p[0], p[1], p[2]);
    s.cloud.intensity.push_back(p[3]);
  }

  s.frame.image = read_png(img_path.string());

  std::ifstream calib(calib_path);
  if (!calib) throw MissingFileError("missing calib: " + calib_path.string());
  std::optional<std::vector<double>> p2, tr;
  std::string line;
  while (std::getline(calib, line)) {
    if (line.rfind("P2:", 0) == 0) p2 = parse_calib_row(line, calib_path.string());
    if (line.rfind("Tr:", 0) == 0 || line.rfind("Tr_velo_to_cam:", 0) == 0)
      tr = parse_calib_row(line, calib_path.string());
  }
  if (!p2 || !tr)
    throw MalformedFileError(calib_path.string() + ": needs P2 and Tr rows");

  s.frame.intrinsics = Mat4::Identity();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) s.frame.intrinsics(r, c) = (*p2)[r * 4 + c];

  Mat4 gt = Mat4::Identity();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) gt(r, c) = (*tr)[r * 4 + c];
  s.t_gt = Pose::from_matrix(gt);

  s.validate();
  return s;
}

void write_kitti_frame(const Sample& sample, const std::string& root,
                       const std::string& sequence, int index) {
  namespace fs = std::filesystem;
  sample.validate();
  const fs::path base = fs::path(root) / sequence;
  fs::create_directories(base / "velodyne");
  fs::create_directories(base / "image_2");
  const std::string stem = frame_name(index);

  const fs::path bin_path = base / "velodyne" / (stem + ".bin");
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw MissingFileError("cannot write: " + bin_path.string());
  for (std::size_t i = 0; i < sample.cloud.points.size(); ++i) {
    const Vec3& p = sample.cloud.points[i];
    const float vals[4] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                           static_cast<float>(p.z()),
                           sample.cloud.intensity.empty()
                               ? 0.0f
                               : static_cast<float>(sample.cloud.intensity[i])};
    bin.write(reinterpret_cast<const char*>(vals), sizeof(vals));
  }

  write_png((base / "image_2" / (stem + ".png")).string(), sample.frame.image);

  std::ofstream calib(base / "calib.txt");
  auto row = [&calib](const char* tag, const Mat4& m) {
    calib << tag;
    char buf[32];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) {
        std::snprintf(buf, sizeof(buf), " %.17g", m(r, c));
        calib << buf;
      }
    calib << "\n";
  };
  row("P2:", sample.frame.intrinsics);
  row("Tr:", sample.t_gt.as_matrix());
}

// ---- configuration ----

namespace {

/// Object reader that rejects keys it was never asked about.
class Reader {
 public:
  Reader(const njson& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const njson::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  const njson* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string sub(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path_ + "." + it.key() + ": unknown key");
  }

 private:
  const njson& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_grid(const njson& j, const std::string& path, BEVGrid& g) {
  Reader r(j, path);
  r.get("cell_size", g.cell_size);
  r.get("size_x", g.size_x);
  r.get("size_y", g.size_y);
  r.get("height_bins", g.height_bins);
  r.get("range", g.range);
  r.get("z_min", g.z_min);
  r.get("z_max", g.z_max);
  r.finish();
}

void read_noise(const njson& j, const std::string& path, NoiseSpec& n) {
  Reader r(j, path);
  r.get("trans", n.max_trans_m);
  r.get("rot_deg", n.max_rot_deg);
  r.finish();
}

void read_synth(const njson& j, const std::string& path, SyntheticSceneSpec& s) {
  Reader r(j, path);
  r.get("seed", s.seed);
  r.get("ground_z", s.ground_z);
  r.get("num_boxes", s.num_boxes);
  r.get("num_cylinders", s.num_cylinders);
  r.get("place_min", s.place_min);
  r.get("place_max", s.place_max);
  r.get("box_min", s.box_min);
  r.get("box_max", s.box_max);
  r.get("cyl_radius_min", s.cyl_radius_min);
  r.get("cyl_radius_max", s.cyl_radius_max);
  r.get("cyl_height_min", s.cyl_height_min);
  r.get("cyl_height_max", s.cyl_height_max);
  r.get("rings", s.rings);
  r.get("azimuth_steps", s.azimuth_steps);
  r.get("elev_min_deg", s.elev_min_deg);
  r.get("elev_max_deg", s.elev_max_deg);
  r.get("max_range", s.max_range);
  r.get("image_h", s.image_h);
  r.get("image_w", s.image_w);
  r.get("focal", s.focal);
  r.get("cam_trans", s.cam_trans);
  r.get("cam_rot_deg", s.cam_rot_deg);
  r.get("z_near", s.z_near);
  r.finish();
}

njson synth_to_json(const SyntheticSceneSpec& s) {
  return njson{{"seed", s.seed},
               {"ground_z", s.ground_z},
               {"num_boxes", s.num_boxes},
               {"num_cylinders", s.num_cylinders},
               {"place_min", s.place_min},
               {"place_max", s.place_max},
               {"box_min", s.box_min},
               {"box_max", s.box_max},
               {"cyl_radius_min", s.cyl_radius_min},
               {"cyl_radius_max", s.cyl_radius_max},
               {"cyl_height_min", s.cyl_height_min},
               {"cyl_height_max", s.cyl_height_max},
               {"rings", s.rings},
               {"azimuth_steps", s.azimuth_steps},
               {"elev_min_deg", s.elev_min_deg},
               {"elev_max_deg", s.elev_max_deg},
               {"max_range", s.max_range},
               {"image_h", s.image_h},
               {"image_w", s.image_w},
               {"focal", s.focal},
               {"cam_trans", s.cam_trans},
               {"cam_rot_deg", s.cam_rot_deg},
               {"z_near", s.z_near}};
}

}  // namespace

RunConfig default_config() { return RunConfig{}; }

RunConfig config_from_json(const std::string& text) {
  RunConfig cfg;
  std::string trimmed = text;
  trimmed.erase(0, trimmed.find_first_not_of(" \t\r\n"));
  if (trimmed.empty()) {
    cfg.validate();
    return cfg;
  }

  njson j;
  try {
    j = njson::parse(text);
  } catch (const njson::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }

  Reader r(j, "config");
  if (const njson* g = r.child("grid")) read_grid(*g, r.sub("grid"), cfg.grid);
  if (const njson* d = r.child("depth")) {
    Reader rd(*d, r.sub("depth"));
    rd.get("d_min", cfg.depth.d_min);
    rd.get("d_max", cfg.depth.d_max);
    rd.get("bins", cfg.depth.bins);
    rd.finish();
  }
  if (const njson* c = r.child("channels")) {
    Reader rc(*c, r.sub("channels"));
    rc.get("lidar", cfg.channels.lidar);
    rc.get("camera", cfg.channels.camera);
    rc.get("bev", cfg.channels.bev);
    rc.finish();
  }
  if (const njson* l = r.child("loss")) {
    Reader rl(*l, r.sub("loss"));
    rl.get("lambda_r", cfg.loss.lambda_r);
    rl.get("lambda_t", cfg.loss.lambda_t);
    rl.get("lambda_pc", cfg.loss.lambda_pc);
    rl.get("lambda_norm", cfg.loss.lambda_norm);
    rl.finish();
  }
  r.get("max_reproj_points", cfg.max_reproj_points);
  if (const njson* n = r.child("noise")) read_noise(*n, r.sub("noise"), cfg.noise);
  if (const njson* o = r.child("optim")) {
    Reader ro(*o, r.sub("optim"));
    ro.get("lr", cfg.optim.lr);
    ro.get("weight_decay", cfg.optim.weight_decay);
    ro.get("batch_size", cfg.optim.batch_size);
    ro.get("epochs", cfg.optim.epochs);
    ro.get("lr_step", cfg.optim.lr_step);
    ro.get("lr_gamma", cfg.optim.lr_gamma);
    ro.finish();
  }
  std::string mode = "geometry";
  r.get("select_mode", mode);
  if (mode == "geometry") {
    cfg.select_mode = SelectMode::kGeometry;
  } else if (mode == "all") {
    cfg.select_mode = SelectMode::kAll;
  } else {
    throw ConfigError("config.select_mode: must be \"geometry\" or \"all\"");
  }
  r.get("seed", cfg.seed);
  r.get("use_intensity", cfg.use_intensity);
  if (const njson* s = r.child("synth")) read_synth(*s, r.sub("synth"), cfg.synth);
  r.get("num_scenes", cfg.num_scenes);
  if (const njson* e = r.child("eval")) {
    Reader re(*e, r.sub("eval"));
    re.get("trials", cfg.eval.trials);
    if (const njson* regimes = re.child("regimes")) {
      if (!regimes->is_array()) throw ConfigError("config.eval.regimes: expected an array");
      cfg.eval.regimes.clear();
      for (const njson& pair : *regimes) {
        if (!pair.is_array() || pair.size() != 2)
          throw ConfigError("config.eval.regimes: each entry is [trans_m, rot_deg]");
        NoiseSpec n;
        try {
          n.max_trans_m = pair.at(0).get<double>();
          n.max_rot_deg = pair.at(1).get<double>();
        } catch (const njson::exception&) {
          throw ConfigError("config.eval.regimes: wrong entry type");
        }
        cfg.eval.regimes.push_back(n);
      }
    }
    re.finish();
  }
  r.finish();

  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("missing config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

std::string config_to_json(const RunConfig& cfg) {
  njson regimes = njson::array();
  for (const NoiseSpec& n : cfg.eval.regimes)
    regimes.push_back(njson::array({n.max_trans_m, n.max_rot_deg}));
  const njson j{
      {"grid",
       {{"cell_size", cfg.grid.cell_size},
        {"size_x", cfg.grid.size_x},
        {"size_y", cfg.grid.size_y},
        {"height_bins", cfg.grid.height_bins},
        {"range", cfg.grid.range},
        {"z_min", cfg.grid.z_min},
        {"z_max", cfg.grid.z_max}}},
      {"depth", {{"d_min", cfg.depth.d_min}, {"d_max", cfg.depth.d_max}, {"bins", cfg.depth.bins}}},
      {"channels",
       {{"lidar", cfg.channels.lidar}, {"camera", cfg.channels.camera}, {"bev", cfg.channels.bev}}},
      {"loss",
       {{"lambda_r", cfg.loss.lambda_r},
        {"lambda_t", cfg.loss.lambda_t},
        {"lambda_pc", cfg.loss.lambda_pc},
        {"lambda_norm", cfg.loss.lambda_norm}}},
      {"max_reproj_points", cfg.max_reproj_points},
      {"noise", {{"trans", cfg.noise.max_trans_m}, {"rot_deg", cfg.noise.max_rot_deg}}},
      {"optim",
       {{"lr", cfg.optim.lr},
        {"weight_decay", cfg.optim.weight_decay},
        {"batch_size", cfg.optim.batch_size},
        {"epochs", cfg.optim.epochs},
        {"lr_step", cfg.optim.lr_step},
        {"lr_gamma", cfg.optim.lr_gamma}}},
      {"select_mode", cfg.select_mode == SelectMode::kGeometry ? "geometry" : "all"},
      {"seed", cfg.seed},
      {"use_intensity", cfg.use_intensity},
      {"synth", synth_to_json(cfg.synth)},
      {"num_scenes", cfg.num_scenes},
      {"eval", {{"trials", cfg.eval.trials}, {"regimes", regimes}}}};
  return j.dump(2) + "\n";
}

void write_manifest(const std::string& path, const std::vector<SyntheticSceneSpec>& scenes) {
  std::ofstream out(path);
  if (!out) throw MissingFileError("cannot write manifest: " + path);
  for (const SyntheticSceneSpec& s : scenes) out << synth_to_json(s).dump() << "\n";
}

std::vector<SyntheticSceneSpec> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("missing manifest: " + path);
  std::vector<SyntheticSceneSpec> scenes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    njson j;
    try {
      j = njson::parse(line);
    } catch (const njson::exception& e) {
      throw MalformedFileError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    SyntheticSceneSpec s;
    read_synth(j, path + ":" + std::to_string(lineno), s);
    s.validate();
    scenes.push_back(s);
  }
  if (scenes.empty()) throw MalformedFileError(path + ": empty manifest");
  return scenes;
}

std::vector<SyntheticSceneSpec> scene_specs(const RunConfig& cfg) {
  std::vector<SyntheticSceneSpec> scenes;
  Rng seeds = Rng::stream(cfg.seed, 0xDA7A);
  for (Index i = 0; i < cfg.num_scenes; ++i) {
    SyntheticSceneSpec s = cfg.synth;
    s.seed = seeds.next_u64();
    scenes.push_back(s);
  }
  return scenes;
}

}  // namespace bevcal
