#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bevcal/bev_fusion.hpp"
#include "bevcal/camera_branch.hpp"
#include "bevcal/data_io.hpp"
#include "bevcal/geometry.hpp"
#include "bevcal/ggbd.hpp"
#include "bevcal/lidar_branch.hpp"
#include "bevcal/losses.hpp"
#include "bevcal/nn.hpp"

namespace bevcal {

/// The full calibration network: LiDAR and camera branches pooled into a
/// shared BEV plane, fused and pyramid-encoded, then decoded to an extrinsic
/// correction. Parameter creation order is fixed by the constructor, so a
/// config determines the checkpoint layout.
class CalibModel {
 public:
  explicit CalibModel(const RunConfig& cfg);

  /// One pass from raw sample plus initial extrinsic to the raw correction.
  /// Counts every invocation; evaluation audits the counter to guarantee a
  /// single pass per trial.
  ExtrinsicPrediction forward(const Sample& sample, const Pose& t_init);

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const RunConfig& config() const { return cfg_; }
  const std::vector<double>& bins() const { return bins_; }
  std::int64_t forward_count() const { return forward_count_; }

 private:
  RunConfig cfg_;
  nn::ParamStore params_;
  LidarBackbone lidar_;
  CameraBackbone camera_;
  BevFusion fusion_;
  GgbdDecoder decoder_;
  std::vector<double> bins_;
  std::int64_t forward_count_ = 0;
};

/// Everything needed to resume or evaluate a run. save -> load -> save is
/// byte-identical.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  RunConfig config;
  std::int64_t step = 0;  // optimizer steps completed
  std::vector<std::pair<std::string, Tensor>> params;
  std::int64_t opt_steps = 0;
  std::vector<Tensor> opt_m, opt_v;  // aligned with params
};

Checkpoint snapshot_checkpoint(const CalibModel& model, const nn::AdamW& opt,
                               std::int64_t step);
/// Copies parameters and optimizer state back; shapes must match the model
/// built from the checkpoint's own config.
void restore_into(CalibModel& model, nn::AdamW& opt, const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);  // MalformedFileError on damage

struct TrainOptions {
  std::string out_dir;         // when set: metrics.jsonl, checkpoint.bin per epoch
  std::int64_t max_steps = 0;  // 0 = run all configured epochs
  std::ostream* progress = nullptr;
  int progress_every = 50;  // epochs between progress lines
  /// Invoked after every periodic_every-th optimizer step; returning true
  /// stops training (early stopping on a validation probe).
  std::function<bool(std::int64_t step, CalibModel& model)> periodic;
  std::int64_t periodic_every = 0;  // 0 disables the callback
};

struct TrainResult {
  Checkpoint checkpoint;
  double final_loss = 0.0;  // batch-mean total of the last step
  std::int64_t steps = 0;
  std::int64_t skipped_samples = 0;  // empty selections under extreme draws
  std::vector<double> step_losses;   // batch-mean total per step
};

/// Full training loop: per sample a fresh perturbation is drawn, the pipeline
/// runs against the supervision target, and one decoupled-weight-decay
/// adaptive step is taken per batch under the step schedule. Deterministic
/// given cfg.seed. Throws NumericalError (with a diagnostic dump when out_dir
/// is set) the moment any loss term goes non-finite.
TrainResult train(const RunConfig& cfg, const std::vector<Sample>& dataset,
                  const TrainOptions& opts = {});

/// One noise regime's aggregate errors. Column order is the report layout:
/// X, Y, Z (cm), Roll, Pitch, Yaw (deg), E_t (cm), E_R (deg).
struct RegimeReport {
  NoiseSpec regime;
  std::array<double, 8> mean{};
  std::array<double, 8> stddev{};  // population std over trials
  Index trial_count = 0;
};

struct EvalReport {
  static constexpr std::array<const char*, 8> kColumns = {"X",     "Y",   "Z",  "Roll",
                                                          "Pitch", "Yaw", "E_t", "E_R"};

  std::vector<RegimeReport> regimes;
  Index sample_count = 0;
  Index trials_per_sample = 0;
  std::uint64_t seed = 0;

  std::string to_csv() const;
  std::string to_text() const;  // aligned table, one mean and one std row per regime
};

struct EvalOptions {
  /// Bypass the network and inject the exact supervision target; the
  /// resulting report must be all zeros (plumbing check).
  bool oracle_injection = false;
  std::ostream* warnings = nullptr;
};

/// Per sample x trial: fresh perturbation, one forward pass, recovery, and
/// metrics against the ground truth. Trial streams derive from
/// (seed, sample, trial, regime), so reports are reproducible. A regime wider
/// than the model's training noise only warns. An empty selection scores the
/// uncorrected initial guess and warns.
EvalReport evaluate(CalibModel& model, const std::vector<Sample>& dataset,
                    const EvalSpec& eval, std::uint64_t seed,
                    const EvalOptions& opts = {});

struct FrameCalibration {
  Pose correction;  // decoded refinement, maps the initial guess onto the estimate
  Pose extrinsic;   // recovered LiDAR -> camera estimate
  std::optional<CalibrationError> error;  // filled when ground truth is known
};

/// Single-frame calibration. Rethrows an empty selection with a diagnostic
/// naming the initial guess.
FrameCalibration calibrate_frame(CalibModel& model, const Sample& sample,
                                 const Pose& t_init, const Pose* t_gt = nullptr);

/// 7-tuple line, homogeneous matrix block, and optional error lines.
std::string describe_calibration(const FrameCalibration& fc);

struct OverlayPoint {
  Index u = 0, v = 0;  // pixel column, row
  double depth = 0.0;  // camera-frame z of the winning point
};

/// Projects the cloud through the extrinsic and the frame intrinsics, keeps
/// the nearest point per pixel, colors it by depth over the drawn range, and
/// writes the PNG. Points at or behind the image plane are never drawn.
/// Returns the drawn pixels in row-major order; empty (plus a warning) when
/// nothing lands in the frame.
std::vector<OverlayPoint> render_overlay(const Sample& sample, const Pose& extrinsic,
                                         const std::string& out_png,
                                         std::ostream* warnings = nullptr);

}  // namespace bevcal
