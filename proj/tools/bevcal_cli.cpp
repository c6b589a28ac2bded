#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bevcal/errors.hpp"
#include "bevcal/harness.hpp"

namespace fs = std::filesystem;
using namespace bevcal;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::int64_t seed = -1;  // negative = keep the config's seed
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration (JSON)");
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--out", args.out_dir, "output directory or file");
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg = args.config_path.empty() ? default_config() : load_config(args.config_path);
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  return cfg;
}

std::vector<Sample> synth_dataset(const RunConfig& cfg) {
  std::vector<Sample> out;
  for (const SyntheticSceneSpec& spec : scene_specs(cfg)) out.push_back(generate_synthetic(spec));
  return out;
}

/// Samples come from --data (a gen-synth directory) when given, otherwise
/// they are regenerated from the config.
std::vector<Sample> resolve_dataset(const RunConfig& cfg, const std::string& data_dir) {
  if (data_dir.empty()) return synth_dataset(cfg);
  const std::size_t count = read_manifest(data_dir + "/manifest.jsonl").size();
  std::vector<Sample> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(load_kitti_frame(data_dir, "synth", static_cast<int>(i)));
  return out;
}

Pose pose_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open pose file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return pose_from_matrix_text(ss.str());
}

int run_gen_synth(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  const std::vector<SyntheticSceneSpec> specs = scene_specs(cfg);
  fs::create_directories(args.out_dir);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const Sample s = generate_synthetic(specs[i]);
    write_kitti_frame(s, args.out_dir, "synth", static_cast<int>(i));
  }
  write_manifest(args.out_dir + "/manifest.jsonl", specs);
  std::cout << "wrote " << specs.size() << " scenes under " << args.out_dir << "\n";
  return 0;
}

int run_train(const CommonArgs& args, const std::string& data_dir) {
  const RunConfig cfg = resolve_config(args);
  const std::vector<Sample> data = resolve_dataset(cfg, data_dir);

  TrainOptions opts;
  opts.out_dir = args.out_dir;
  opts.progress = &std::cout;
  const TrainResult res = train(cfg, data, opts);
  std::cout << "trained " << res.steps << " steps, final loss " << res.final_loss << "\n";
  if (res.skipped_samples > 0)
    std::cout << "skipped " << res.skipped_samples << " degenerate draws\n";
  std::cout << "checkpoint: " << args.out_dir << "/checkpoint.bin\n";
  return 0;
}

int run_eval(const CommonArgs& args, const std::string& ckpt_path, const std::string& data_dir) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  RunConfig cfg = ckpt.config;
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  const std::vector<Sample> data = resolve_dataset(cfg, data_dir);

  CalibModel model(ckpt.config);
  nn::AdamW opt(model.params(), ckpt.config.optim.lr, ckpt.config.optim.weight_decay);
  restore_into(model, opt, ckpt);

  EvalOptions eval_opts;
  eval_opts.warnings = &std::cerr;
  const EvalReport report = evaluate(model, data, cfg.eval, cfg.seed, eval_opts);

  fs::create_directories(args.out_dir);
  std::ofstream(args.out_dir + "/report.csv") << report.to_csv();
  const std::string text = report.to_text();
  std::ofstream(args.out_dir + "/report.txt") << text;
  std::cout << text;
  return 0;
}

int run_calibrate(const CommonArgs& args, const std::string& ckpt_path,
                  const std::string& data_dir, int index, const std::string& init_path) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  RunConfig cfg = ckpt.config;
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);

  Sample sample;
  if (data_dir.empty()) {
    const std::vector<SyntheticSceneSpec> specs = scene_specs(cfg);
    if (index < 0 || static_cast<std::size_t>(index) >= specs.size())
      throw ConfigError("scene index " + std::to_string(index) + " out of range");
    sample = generate_synthetic(specs[static_cast<std::size_t>(index)]);
  } else {
    sample = load_kitti_frame(data_dir, "synth", index);
  }

  Pose t_init;
  if (init_path.empty()) {
    Rng rng = Rng::stream(cfg.seed, 0xCA11, static_cast<std::uint64_t>(index));
    t_init = make_initial(sample.t_gt, sample_noise(cfg.noise, rng));
  } else {
    t_init = pose_from_file(init_path);
  }

  CalibModel model(ckpt.config);
  nn::AdamW opt(model.params(), ckpt.config.optim.lr, ckpt.config.optim.weight_decay);
  restore_into(model, opt, ckpt);

  const FrameCalibration fc = calibrate_frame(model, sample, t_init, &sample.t_gt);
  std::cout << describe_calibration(fc);
  if (!args.out_dir.empty() && args.out_dir != "out") {
    fs::create_directories(args.out_dir);
    std::ofstream(args.out_dir + "/estimate.txt") << pose_to_matrix_text(fc.extrinsic) << "\n";
  }
  return 0;
}

int run_overlay(const CommonArgs& args, const std::string& data_dir, int index,
                const std::string& pose_path) {
  const RunConfig cfg = resolve_config(args);
  Sample sample;
  if (data_dir.empty()) {
    const std::vector<SyntheticSceneSpec> specs = scene_specs(cfg);
    if (index < 0 || static_cast<std::size_t>(index) >= specs.size())
      throw ConfigError("scene index " + std::to_string(index) + " out of range");
    sample = generate_synthetic(specs[static_cast<std::size_t>(index)]);
  } else {
    sample = load_kitti_frame(data_dir, "synth", index);
  }
  const Pose pose = pose_path.empty() ? sample.t_gt : pose_from_file(pose_path);

  fs::path out_png(args.out_dir);
  if (out_png.extension() != ".png") {
    fs::create_directories(out_png);
    out_png /= "overlay.png";
  } else if (out_png.has_parent_path()) {
    fs::create_directories(out_png.parent_path());
  }
  const std::vector<OverlayPoint> drawn =
      render_overlay(sample, pose, out_png.string(), &std::cerr);
  std::cout << "drew " << drawn.size() << " points into " << out_png.string() << "\n";
  return 0;
}

// ---- selftest: quick oracle and gradient checks, no files involved ----

int checks_failed = 0;

void report(bool ok, const std::string& name, const std::string& detail = "") {
  if (ok) {
    std::cout << "ok: " << name << "\n";
  } else {
    ++checks_failed;
    std::cout << "FAIL: " << name << (detail.empty() ? "" : " (" + detail + ")") << "\n";
  }
}

void selftest_algebra(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 1);
  const NoiseSpec noise{1.5, 20.0};
  double worst_r = 0.0, worst_t = 0.0;
  for (int i = 0; i < 200; ++i) {
    Pose gt = sample_noise(noise, rng);
    gt.translation += Vec3(0.1, -0.06, 0.2);
    const Pose t_delta = sample_noise(noise, rng);
    const Pose t_init = make_initial(gt, t_delta);
    const Pose back = recover_extrinsic(supervision_target(t_init, gt), t_init);
    const CalibrationError err = compute_metrics(back, gt);
    worst_r = std::max(worst_r, err.e_r_deg);
    worst_t = std::max(worst_t, err.e_t_cm);
  }
  report(worst_r < 1e-7 && worst_t < 1e-7, "perturb/recover chain closes",
         "worst rot " + std::to_string(worst_r) + " deg, trans " + std::to_string(worst_t) +
             " cm");
}

void selftest_geodesic() {
  ad::Var r = ad::Var::leaf(Tensor::from({4}, {1.0, 0.0, 0.0, 0.0}), true);
  const RotationLossParts identity = rotation_loss(r, Quaternion::identity(), 0.1);
  const double half_pi = std::acos(0.0);
  const RotationLossParts quarter = rotation_loss(r, Quaternion::about_z(half_pi), 0.1);
  report(identity.l_ang.item() == 0.0 && std::abs(quarter.l_ang.item() - half_pi) < 1e-9,
         "geodesic loss spot values");
}

void selftest_depth_bins() {
  const std::vector<double> bins = depth_bins(1.0, 9.0, 5);
  const std::vector<double> expect = {1.0, 3.0, 5.0, 7.0, 9.0};
  bool single_rejected = false;
  try {
    depth_bins(1.0, 9.0, 1);
  } catch (const ConfigError&) {
    single_rejected = true;
  }
  report(bins == expect && single_rejected, "depth bins carve [1, 9] into 5");
}

void selftest_loss_gradients(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 2);
  Tensor r0({4}), t0({3});
  for (Index i = 0; i < 4; ++i) r0[i] = rng.symmetric(1.0) + (i == 0 ? 1.5 : 0.0);
  for (Index i = 0; i < 3; ++i) t0[i] = rng.symmetric(1.0);
  const Quaternion target = Quaternion{1.0, 0.2, -0.1, 0.3}.normalized();
  const Vec3 t_target(0.3, -0.2, 0.5);

  double worst = 0.0;
  for (Index slot = 0; slot < 7; ++slot) {
    ad::Var r = ad::Var::leaf(r0, true);
    ad::Var t = ad::Var::leaf(t0, true);
    const RotationLossParts rot = rotation_loss(r, target, 0.1);
    const ad::Var l_t = translation_loss(t, t_target);
    const ad::Var combo = ad::add(rot.l_r, l_t);
    ad::backward(combo);
    const double analytic = slot < 4 ? r.grad()[slot] : t.grad()[slot - 4];

    const double eps = 1e-6;
    double vals[2];
    for (int dir = 0; dir < 2; ++dir) {
      Tensor rp = r0, tp = t0;
      const double delta = dir == 0 ? eps : -eps;
      if (slot < 4)
        rp[slot] += delta;
      else
        tp[slot - 4] += delta;
      ad::Var rv = ad::Var::leaf(rp, false);
      ad::Var tv = ad::Var::leaf(tp, false);
      const RotationLossParts rot2 = rotation_loss(rv, target, 0.1);
      vals[dir] = rot2.l_r.item() + translation_loss(tv, t_target).item();
    }
    const double numeric = (vals[0] - vals[1]) / (2.0 * eps);
    const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
  }
  report(worst < 1e-4, "loss gradients match finite differences",
         "worst rel err " + std::to_string(worst));
}

void selftest_forward(std::uint64_t seed) {
  RunConfig cfg = default_config();
  cfg.grid.cell_size = 0.5;
  cfg.grid.size_x = 16;
  cfg.grid.size_y = 16;
  cfg.grid.height_bins = 4;
  cfg.grid.range = 12.0;
  cfg.grid.z_min = -2.0;
  cfg.grid.z_max = 2.0;
  cfg.depth = {1.0, 9.0, 4};
  cfg.channels.lidar = 4;
  cfg.channels.camera = 4;
  cfg.channels.bev = 16;
  cfg.noise = {0.3, 3.0};
  cfg.synth.rings = 12;
  cfg.synth.azimuth_steps = 96;
  cfg.synth.image_h = 32;
  cfg.synth.image_w = 32;
  cfg.synth.focal = 24.0;
  cfg.num_scenes = 1;
  cfg.seed = seed;

  const Sample s = generate_synthetic(scene_specs(cfg)[0]);
  Rng rng = Rng::stream(seed, 3);
  const Pose t_init = make_initial(s.t_gt, sample_noise(cfg.noise, rng));

  CalibModel a(cfg), b(cfg);
  const ExtrinsicPrediction pa = a.forward(s, t_init);
  const ExtrinsicPrediction pb = b.forward(s, t_init);
  bool same = pa.raw_rotation.value().all_finite() && pa.translation.value().all_finite();
  for (Index i = 0; i < 4; ++i)
    same = same && pa.raw_rotation.value()[i] == pb.raw_rotation.value()[i];
  for (Index i = 0; i < 3; ++i)
    same = same && pa.translation.value()[i] == pb.translation.value()[i];
  report(same, "miniature forward is finite and deterministic");
}

int run_selftest(const CommonArgs& args) {
  const std::uint64_t seed = args.seed >= 0 ? static_cast<std::uint64_t>(args.seed) : 0;
  selftest_algebra(seed);
  selftest_geodesic();
  selftest_depth_bins();
  selftest_loss_gradients(seed);
  selftest_forward(seed);
  std::cout << (checks_failed == 0 ? "selftest passed\n"
                                   : "selftest FAILED (" + std::to_string(checks_failed) + ")\n");
  return checks_failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR-camera extrinsic calibration from fused BEV features"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, calib_args, overlay_args, self_args;
  std::string train_data, eval_data, calib_data, overlay_data;
  std::string eval_ckpt, calib_ckpt;
  std::string calib_init, overlay_pose;
  int calib_index = 0, overlay_index = 0;

  CLI::App* gen = app.add_subcommand("gen-synth", "write a synthetic dataset in KITTI layout");
  add_common(gen, gen_args);

  CLI::App* tr = app.add_subcommand("train", "train a calibration model");
  add_common(tr, train_args);
  tr->add_option("--data", train_data, "dataset directory from gen-synth");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint over the noise regimes");
  add_common(ev, eval_args);
  ev->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--data", eval_data, "dataset directory from gen-synth");

  CLI::App* ca = app.add_subcommand("calibrate", "calibrate a single frame");
  add_common(ca, calib_args);
  ca->add_option("--ckpt", calib_ckpt, "checkpoint file")->required();
  ca->add_option("--data", calib_data, "dataset directory from gen-synth");
  ca->add_option("--index", calib_index, "frame index");
  ca->add_option("--init-pose", calib_init, "initial extrinsic as 16 matrix floats");

  CLI::App* ov = app.add_subcommand("overlay", "project the cloud over the image");
  add_common(ov, overlay_args);
  ov->add_option("--data", overlay_data, "dataset directory from gen-synth");
  ov->add_option("--index", overlay_index, "frame index");
  ov->add_option("--pose", overlay_pose, "extrinsic as 16 matrix floats (default: ground truth)");

  CLI::App* st = app.add_subcommand("selftest", "run the quick oracle and gradient checks");
  add_common(st, self_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen_synth(gen_args);
    if (tr->parsed()) return run_train(train_args, train_data);
    if (ev->parsed()) return run_eval(eval_args, eval_ckpt, eval_data);
    if (ca->parsed()) return run_calibrate(calib_args, calib_ckpt, calib_data, calib_index,
                                           calib_init);
    if (ov->parsed()) return run_overlay(overlay_args, overlay_data, overlay_index, overlay_pose);
    if (st->parsed()) return run_selftest(self_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
