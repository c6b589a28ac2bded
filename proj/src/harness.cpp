#include "bevcal/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "bevcal/errors.hpp"

namespace bevcal {

namespace {

// Stream ids keep every consumer of the run seed statistically independent.
constexpr std::uint64_t kStreamParams = 0x6A11;
constexpr std::uint64_t kStreamShuffle = 0x5F1E;
constexpr std::uint64_t kStreamNoise = 0x401E;
constexpr std::uint64_t kStreamReproj = 0x9E9C;
constexpr std::uint64_t kStreamEval = 0xE7A1;

const RunConfig& checked(const RunConfig& cfg) {
  cfg.validate();
  return cfg;
}

std::string tuple_text(const Pose& p) {
  const std::array<double, 7> t = pose_to_tuple(p);
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", t[i]);
    if (i) out += ' ';
    out += buf;
  }
  return out;
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace

CalibModel::CalibModel(const RunConfig& cfg) : cfg_(checked(cfg)) {
  Rng rng = Rng::stream(cfg_.seed, kStreamParams);
  const Index lidar_in = cfg_.use_intensity ? 4 : 3;
  lidar_ = LidarBackbone(params_, "lidar", lidar_in, cfg_.channels.lidar, rng);
  camera_ = CameraBackbone(params_, "camera", cfg_.channels.camera, cfg_.depth.bins, rng);
  fusion_ = BevFusion(params_, "fusion", cfg_.channels.camera,
                      cfg_.channels.lidar * cfg_.grid.height_bins, cfg_.channels.bev, rng);
  decoder_ = GgbdDecoder(params_, "decoder", cfg_.channels.bev, rng);
  bins_ = depth_bins(cfg_.depth.d_min, cfg_.depth.d_max, cfg_.depth.bins);
}

ExtrinsicPrediction CalibModel::forward(const Sample& sample, const Pose& t_init) {
  ++forward_count_;
  const VoxelFeature vox = voxelize(sample.cloud, cfg_.grid, cfg_.use_intensity);
  const VoxelFeature enc = lidar_.encode_voxels(vox, cfg_.grid);
  const ad::Var lidar_bev = flatten_to_bev(enc, cfg_.grid);

  const ImageFeature img = camera_.extract_image_features(sample.frame);
  Frustum fr = camera_.lift_to_frustum(img, sample.frame, bins_);
  fr = frustum_to_world(std::move(fr), t_init);
  const ad::Var cam_bev = bev_pool(fr, cfg_.grid);

  const FusedBEV fused = fusion_.fuse(cam_bev, lidar_bev);
  const FusedBEV encoded = fusion_.fpn_encode(fused);

  SelectedFeatures sel =
      select_features(fr.positions_world, encoded, cfg_.grid, cfg_.select_mode);
  sel = add_positional_embedding(sel, cfg_.grid);
  const ad::Var refined = decoder_.refine(sel.features);
  return decoder_.decode_heads(refined);
}

// ---- checkpoint serialization ----

namespace {

constexpr char kMagic[8] = {'B', 'E', 'V', 'C', 'A', 'L', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

void put_tensor_data(std::string& out, const Tensor& t) {
  for (Index i = 0; i < t.size(); ++i) put_f64(out, t[i]);
}

/// Cursor over an in-memory checkpoint image; every read is bounds-checked.
struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw MalformedFileError("checkpoint truncated at byte " + std::to_string(pos));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

Tensor read_tensor_data(ByteReader& r, std::vector<Index> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = r.f64();
  return t;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out;
  out.append(kMagic, sizeof kMagic);
  put_u32(out, Checkpoint::kFormatVersion);
  const std::string cfg_json = config_to_json(ckpt.config);
  put_u64(out, cfg_json.size());
  out += cfg_json;
  put_u64(out, static_cast<std::uint64_t>(ckpt.step));
  put_u64(out, ckpt.params.size());
  for (const auto& [name, tensor] : ckpt.params) {
    put_u64(out, name.size());
    out += name;
    put_u32(out, static_cast<std::uint32_t>(tensor.shape().size()));
    for (Index d : tensor.shape()) put_u64(out, static_cast<std::uint64_t>(d));
    put_tensor_data(out, tensor);
  }
  put_u64(out, static_cast<std::uint64_t>(ckpt.opt_steps));
  for (const Tensor& t : ckpt.opt_m) put_tensor_data(out, t);
  for (const Tensor& t : ckpt.opt_v) put_tensor_data(out, t);
  return out;
}

}  // namespace

Checkpoint snapshot_checkpoint(const CalibModel& model, const nn::AdamW& opt,
                               std::int64_t step) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  ckpt.step = step;
  for (const auto& [name, var] : model.params().entries()) {
    ad::Var v = var;  // shared node; copy gives value access
    ckpt.params.emplace_back(name, v.value());
  }
  ckpt.opt_steps = opt.steps();
  ckpt.opt_m = opt.moment1();
  ckpt.opt_v = opt.moment2();
  return ckpt;
}

void restore_into(CalibModel& model, nn::AdamW& opt, const Checkpoint& ckpt) {
  const auto& entries = model.params().entries();
  if (entries.size() != ckpt.params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                      " parameters for a model with " + std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, tensor] = ckpt.params[i];
    if (name != entries[i].first)
      throw ConfigError("checkpoint parameter '" + name + "' does not match model parameter '" +
                        entries[i].first + "'");
    ad::Var v = entries[i].second;
    if (v.value().shape() != tensor.shape())
      throw ConfigError("checkpoint parameter '" + name + "' has a mismatched shape");
    v.value() = tensor;
  }
  opt.restore_state(ckpt.opt_m, ckpt.opt_v, ckpt.opt_steps);
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingFileError("cannot open checkpoint for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw MalformedFileError("short write while saving checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();

  ByteReader r{buf};
  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    throw MalformedFileError("not a checkpoint file: " + path);
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kFormatVersion)
    throw MalformedFileError("unsupported checkpoint format version " + std::to_string(version));

  Checkpoint ckpt;
  const std::uint64_t cfg_len = r.u64();
  ckpt.config = config_from_json(r.bytes(cfg_len));
  ckpt.step = static_cast<std::int64_t>(r.u64());
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = r.u64();
    std::string name = r.bytes(name_len);
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw MalformedFileError("implausible tensor rank in checkpoint: " + path);
    std::vector<Index> shape(rank);
    for (auto& d : shape) d = static_cast<Index>(r.u64());
    ckpt.params.emplace_back(std::move(name), read_tensor_data(r, std::move(shape)));
  }
  ckpt.opt_steps = static_cast<std::int64_t>(r.u64());
  for (std::uint64_t i = 0; i < count; ++i)
    ckpt.opt_m.push_back(read_tensor_data(r, ckpt.params[i].second.shape()));
  for (std::uint64_t i = 0; i < count; ++i)
    ckpt.opt_v.push_back(read_tensor_data(r, ckpt.params[i].second.shape()));
  if (r.pos != buf.size())
    throw MalformedFileError("trailing bytes after checkpoint payload: " + path);
  return ckpt;
}

// ---- training ----

TrainResult train(const RunConfig& cfg, const std::vector<Sample>& dataset,
                  const TrainOptions& opts) {
  cfg.validate();
  if (dataset.empty()) throw EmptySceneError("training dataset is empty");
  for (const Sample& s : dataset) s.validate();

  CalibModel model(cfg);
  nn::AdamW opt(model.params(), cfg.optim.lr, cfg.optim.weight_decay);
  const nn::StepLR sched{cfg.optim.lr, static_cast<int>(cfg.optim.lr_step), cfg.optim.lr_gamma};

  const bool emit = !opts.out_dir.empty();
  std::ofstream metrics;
  if (emit) {
    std::filesystem::create_directories(opts.out_dir);
    metrics.open(opts.out_dir + "/metrics.jsonl", std::ios::trunc);
    if (!metrics) throw MissingFileError("cannot open metrics log under " + opts.out_dir);
  }

  TrainResult res;
  std::int64_t global_step = 0;
  bool done = false;
  for (Index epoch = 0; epoch < cfg.optim.epochs && !done; ++epoch) {
    opt.set_lr(sched.lr_for_epoch(static_cast<int>(epoch)));

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = Rng::stream(cfg.seed, kStreamShuffle, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle.below(i)]);

    for (std::size_t start = 0; start < order.size() && !done;
         start += static_cast<std::size_t>(cfg.optim.batch_size)) {
      const std::size_t chunk =
          std::min(static_cast<std::size_t>(cfg.optim.batch_size), order.size() - start);
      opt.zero_grad();
      double s_ang = 0, s_norm = 0, s_t = 0, s_pc = 0, s_total = 0;
      int used = 0;
      for (std::size_t k = 0; k < chunk; ++k) {
        const Sample& s = dataset[order[start + k]];
        Rng noise_rng =
            Rng::stream(cfg.seed, kStreamNoise, static_cast<std::uint64_t>(global_step), k);
        const Pose t_delta = sample_noise(cfg.noise, noise_rng);
        const Pose t_init = make_initial(s.t_gt, t_delta);
        const Pose target = supervision_target(t_init, s.t_gt);

        ExtrinsicPrediction pred;
        try {
          pred = model.forward(s, t_init);
        } catch (const EmptySelectionError&) {
          ++res.skipped_samples;
          continue;
        }

        const RotationLossParts rot =
            rotation_loss(pred.raw_rotation, target.rotation, cfg.loss.lambda_norm);
        const ad::Var l_t = translation_loss(pred.translation, target.translation);
        Rng reproj_rng =
            Rng::stream(cfg.seed, kStreamReproj, static_cast<std::uint64_t>(global_step), k);
        const ad::Var l_pc =
            reprojection_loss(s.cloud, s.t_gt, pred.raw_rotation, pred.translation, t_init,
                              cfg.max_reproj_points, reproj_rng);
        const LossReport rep = total_loss(rot, l_t, l_pc, cfg.loss);

        if (!rep.all_finite()) {
          nlohmann::json dump{{"step", global_step},
                              {"epoch", epoch},
                              {"scene_id", s.scene_id},
                              {"t_init", pose_to_tuple(t_init)},
                              {"l_ang", rep.l_ang.item()},
                              {"l_norm", rep.l_norm.item()},
                              {"l_t", rep.l_t.item()},
                              {"l_pc", rep.l_pc.item()},
                              {"total", rep.total.item()}};
          if (emit) {
            std::ofstream dump_out(opts.out_dir + "/nan_dump.json", std::ios::trunc);
            dump_out << dump.dump(2) << "\n";
          }
          throw NumericalError("non-finite loss at step " + std::to_string(global_step) +
                               " on scene '" + s.scene_id + "': " + dump.dump());
        }

        // Mean over the batch: each sample contributes grad / chunk.
        ad::backward(ad::scale(rep.total, 1.0 / static_cast<double>(chunk)));
        s_ang += rep.l_ang.item();
        s_norm += rep.l_norm.item();
        s_t += rep.l_t.item();
        s_pc += rep.l_pc.item();
        s_total += rep.total.item();
        ++used;
      }
      if (used == 0) continue;  // every draw in the batch was degenerate

      opt.step();
      ++global_step;
      const double inv = 1.0 / used;
      res.final_loss = s_total * inv;
      res.step_losses.push_back(res.final_loss);
      if (emit) {
        nlohmann::json line{{"step", global_step}, {"epoch", epoch},
                            {"lr", opt.lr()},      {"used", used},
                            {"l_ang", s_ang * inv}, {"l_norm", s_norm * inv},
                            {"l_t", s_t * inv},    {"l_pc", s_pc * inv},
                            {"total", res.final_loss}};
        metrics << line.dump() << "\n";
      }
      if (opts.max_steps > 0 && global_step >= opts.max_steps) done = true;
      if (!done && opts.periodic && opts.periodic_every > 0 &&
          global_step % opts.periodic_every == 0 && opts.periodic(global_step, model)) {
        done = true;
      }
    }

    if (emit) save_checkpoint(snapshot_checkpoint(model, opt, global_step),
                              opts.out_dir + "/checkpoint.bin");
    if (opts.progress &&
        (epoch % std::max(1, opts.progress_every) == 0 || done || epoch + 1 == cfg.optim.epochs)) {
      *opts.progress << "epoch " << epoch << " step " << global_step << " loss "
                     << res.final_loss << " lr " << opt.lr() << "\n";
    }
  }

  res.steps = global_step;
  res.checkpoint = snapshot_checkpoint(model, opt, global_step);
  return res;
}

// ---- evaluation ----

EvalReport evaluate(CalibModel& model, const std::vector<Sample>& dataset,
                    const EvalSpec& eval, std::uint64_t seed, const EvalOptions& opts) {
  eval.validate();
  if (dataset.empty()) throw EmptySceneError("evaluation dataset is empty");

  EvalReport report;
  report.sample_count = static_cast<Index>(dataset.size());
  report.trials_per_sample = eval.trials;
  report.seed = seed;

  const NoiseSpec trained = model.config().noise;
  std::int64_t empty_selections = 0;

  for (std::size_t ri = 0; ri < eval.regimes.size(); ++ri) {
    const NoiseSpec& regime = eval.regimes[ri];
    if (opts.warnings && (regime.max_trans_m > trained.max_trans_m + 1e-12 ||
                          regime.max_rot_deg > trained.max_rot_deg + 1e-12)) {
      *opts.warnings << "warning: regime (" << regime.max_trans_m << " m, "
                     << regime.max_rot_deg << " deg) exceeds the training range ("
                     << trained.max_trans_m << " m, " << trained.max_rot_deg << " deg)\n";
    }

    std::vector<std::array<double, 8>> rows;
    for (std::size_t si = 0; si < dataset.size(); ++si) {
      const Sample& s = dataset[si];
      for (Index trial = 0; trial < eval.trials; ++trial) {
        // Independent stream per (regime, sample, trial).
        Rng rng = Rng::stream(seed, kStreamEval + ri, si, static_cast<std::uint64_t>(trial));
        const Pose t_delta = sample_noise(regime, rng);
        const Pose t_init = make_initial(s.t_gt, t_delta);

        Pose t_pred;
        if (opts.oracle_injection) {
          t_pred = supervision_target(t_init, s.t_gt);
        } else {
          try {
            t_pred = assemble_prediction(model.forward(s, t_init));
          } catch (const EmptySelectionError&) {
            ++empty_selections;
            t_pred = Pose::identity();  // no features, no correction
          }
        }
        const Pose t_hat = recover_extrinsic(t_pred, t_init);
        const CalibrationError err = compute_metrics(t_hat, s.t_gt);
        rows.push_back({err.trans_xyz_cm.x(), err.trans_xyz_cm.y(), err.trans_xyz_cm.z(),
                        err.rot_rpy_deg.x(), err.rot_rpy_deg.y(), err.rot_rpy_deg.z(),
                        err.e_t_cm, err.e_r_deg});
      }
    }

    RegimeReport rr;
    rr.regime = regime;
    rr.trial_count = static_cast<Index>(rows.size());
    for (const auto& row : rows)
      for (int c = 0; c < 8; ++c) rr.mean[c] += row[c];
    for (int c = 0; c < 8; ++c) rr.mean[c] /= static_cast<double>(rows.size());
    for (const auto& row : rows)
      for (int c = 0; c < 8; ++c) {
        const double d = row[c] - rr.mean[c];
        rr.stddev[c] += d * d;
      }
    for (int c = 0; c < 8; ++c)
      rr.stddev[c] = std::sqrt(rr.stddev[c] / static_cast<double>(rows.size()));
    report.regimes.push_back(rr);
  }

  if (opts.warnings && empty_selections > 0) {
    *opts.warnings << "warning: " << empty_selections
                   << " trial(s) had an empty feature selection; scored the uncorrected "
                      "initial guess\n";
  }
  return report;
}

std::string EvalReport::to_csv() const {
  std::string out = "trans_m,rot_deg,stat";
  for (const char* c : kColumns) {
    out += ',';
    out += c;
  }
  out += '\n';
  for (const RegimeReport& rr : regimes) {
    for (int pass = 0; pass < 2; ++pass) {
      out += fmt_g(rr.regime.max_trans_m) + "," + fmt_g(rr.regime.max_rot_deg) + "," +
             (pass == 0 ? "mean" : "std");
      const auto& vals = pass == 0 ? rr.mean : rr.stddev;
      for (double v : vals) out += "," + fmt_g(v);
      out += '\n';
    }
  }
  return out;
}

std::string EvalReport::to_text() const {
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof buf,
                "translation columns in cm, rotation in deg; population std over %lld trials "
                "per regime; seed %llu\n",
                static_cast<long long>(sample_count * trials_per_sample),
                static_cast<unsigned long long>(seed));
  out += buf;
  std::snprintf(buf, sizeof buf, "%-22s %-5s", "regime", "stat");
  out += buf;
  for (const char* c : kColumns) {
    std::snprintf(buf, sizeof buf, " %9s", c);
    out += buf;
  }
  out += '\n';
  for (const RegimeReport& rr : regimes) {
    char label[64];
    std::snprintf(label, sizeof label, "(+-%.2f m, +-%.1f deg)", rr.regime.max_trans_m,
                  rr.regime.max_rot_deg);
    for (int pass = 0; pass < 2; ++pass) {
      std::snprintf(buf, sizeof buf, "%-22s %-5s", pass == 0 ? label : "",
                    pass == 0 ? "mean" : "std");
      out += buf;
      const auto& vals = pass == 0 ? rr.mean : rr.stddev;
      for (double v : vals) {
        std::snprintf(buf, sizeof buf, " %9.4f", v);
        out += buf;
      }
      out += '\n';
    }
  }
  return out;
}

// ---- single-frame calibration ----

FrameCalibration calibrate_frame(CalibModel& model, const Sample& sample, const Pose& t_init,
                                 const Pose* t_gt) {
  sample.validate();
  ExtrinsicPrediction pred;
  try {
    pred = model.forward(sample, t_init);
  } catch (const EmptySelectionError& e) {
    throw EmptySelectionError(std::string(e.what()) +
                              "; initial extrinsic (qw qx qy qz tx ty tz) = " +
                              tuple_text(t_init) +
                              " projects no usable features, start from a closer guess");
  }
  FrameCalibration fc;
  fc.correction = assemble_prediction(pred);
  fc.extrinsic = recover_extrinsic(fc.correction, t_init);
  if (t_gt != nullptr) fc.error = compute_metrics(fc.extrinsic, *t_gt);
  return fc;
}

std::string describe_calibration(const FrameCalibration& fc) {
  std::string out;
  out += "estimate (qw qx qy qz tx ty tz): " + tuple_text(fc.extrinsic) + "\n";
  out += "estimate matrix: " + pose_to_matrix_text(fc.extrinsic) + "\n";
  out += "correction (qw qx qy qz tx ty tz): " + tuple_text(fc.correction) + "\n";
  if (fc.error) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "error vs ground truth: E_t = %.4f cm, E_R = %.4f deg\n",
                  fc.error->e_t_cm, fc.error->e_r_deg);
    out += buf;
  }
  return out;
}

// ---- overlay rendering ----

namespace {

/// Hue ramp from red (near) through green to blue (far); t in [0, 1].
std::array<double, 3> depth_color(double t) {
  const double h = 4.0 * std::clamp(t, 0.0, 1.0);  // sextant coordinate, 0..4
  const double x = 1.0 - std::fabs(std::fmod(h, 2.0) - 1.0);
  if (h < 1.0) return {1.0, x, 0.0};
  if (h < 2.0) return {x, 1.0, 0.0};
  if (h < 3.0) return {0.0, 1.0, x};
  return {0.0, x, 1.0};
}

}  // namespace

std::vector<OverlayPoint> render_overlay(const Sample& sample, const Pose& extrinsic,
                                         const std::string& out_png, std::ostream* warnings) {
  sample.frame.validate();
  sample.cloud.validate();
  const Index h = sample.frame.height();
  const Index w = sample.frame.width();
  const double fx = sample.frame.intrinsics(0, 0);
  const double fy = sample.frame.intrinsics(1, 1);
  const double cx = sample.frame.intrinsics(0, 2);
  const double cy = sample.frame.intrinsics(1, 2);

  std::vector<double> zbuf(static_cast<std::size_t>(h * w),
                           std::numeric_limits<double>::infinity());
  for (const Vec3& p : sample.cloud.points) {
    const Vec3 q = transform_point(extrinsic, p);
    if (q.z() <= 0.0) continue;  // behind the image plane
    const Index u = static_cast<Index>(std::floor(fx * q.x() / q.z() + cx));
    const Index v = static_cast<Index>(std::floor(fy * q.y() / q.z() + cy));
    if (u < 0 || u >= w || v < 0 || v >= h) continue;
    double& cell = zbuf[static_cast<std::size_t>(v * w + u)];
    cell = std::min(cell, q.z());
  }

  std::vector<OverlayPoint> drawn;
  double z_lo = std::numeric_limits<double>::infinity();
  double z_hi = -std::numeric_limits<double>::infinity();
  for (Index v = 0; v < h; ++v)
    for (Index u = 0; u < w; ++u) {
      const double z = zbuf[static_cast<std::size_t>(v * w + u)];
      if (!std::isfinite(z)) continue;
      drawn.push_back({u, v, z});
      z_lo = std::min(z_lo, z);
      z_hi = std::max(z_hi, z);
    }

  Tensor image = sample.frame.image;
  for (const OverlayPoint& pt : drawn) {
    const double t = z_hi > z_lo ? (pt.depth - z_lo) / (z_hi - z_lo) : 0.0;
    const std::array<double, 3> rgb = depth_color(t);
    for (Index c = 0; c < 3; ++c) image.at3(c, pt.v, pt.u) = rgb[static_cast<std::size_t>(c)];
  }
  write_png(out_png, image);

  if (drawn.empty() && warnings)
    *warnings << "warning: no point projects into the frame; wrote the bare image\n";
  return drawn;
}

}  // namespace bevcal
