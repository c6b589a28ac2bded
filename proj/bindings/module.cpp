// Python surface for the calibration pipeline. Poses cross the boundary as
// 4x4 row-major numpy arrays, configs as canonical JSON strings, images and
// clouds as numpy arrays; everything heavier stays in opaque handle classes.
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bevcal/camera_branch.hpp"
#include "bevcal/data_io.hpp"
#include "bevcal/errors.hpp"
#include "bevcal/geometry.hpp"
#include "bevcal/harness.hpp"
#include "bevcal/losses.hpp"
#include "bevcal/nn.hpp"
#include "bevcal/rng.hpp"
#include "bevcal/tensor.hpp"

namespace py = pybind11;
using namespace bevcal;

namespace {

Pose pose_from_array(const Mat4& m) { return Pose::from_matrix(m); }

py::array tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::memcpy(out.mutable_data(), t.data(), sizeof(double) * static_cast<size_t>(t.size()));
  return out;
}

py::dict metrics_to_dict(const CalibrationError& e) {
  py::dict d;
  d["e_t_cm"] = e.e_t_cm;
  d["e_r_deg"] = e.e_r_deg;
  d["trans_xyz_cm"] = std::vector<double>{e.trans_xyz_cm.x(), e.trans_xyz_cm.y(),
                                          e.trans_xyz_cm.z()};
  d["rot_rpy_deg"] = std::vector<double>{e.rot_rpy_deg.x(), e.rot_rpy_deg.y(),
                                         e.rot_rpy_deg.z()};
  return d;
}

std::vector<Sample> build_dataset(const RunConfig& cfg) {
  std::vector<Sample> out;
  for (const auto& spec : scene_specs(cfg)) out.push_back(generate_synthetic(spec));
  return out;
}

// Model plus the optimizer state that rides along in checkpoints, so save()
// works outside a training loop.
struct CalibratorHandle {
  explicit CalibratorHandle(const RunConfig& cfg)
      : model(cfg),
        opt(model.params(), cfg.optim.lr, cfg.optim.weight_decay) {}

  CalibModel model;
  nn::AdamW opt;
  std::int64_t step = 0;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "LiDAR-camera extrinsic calibration from fused BEV features";

  py::register_exception<Error>(m, "CalibError", PyExc_RuntimeError);

  // Pose algebra over 4x4 homogeneous matrices.
  m.def("compose", [](const Mat4& a, const Mat4& b) {
    return compose(pose_from_array(a), pose_from_array(b)).as_matrix();
  }, py::arg("a"), py::arg("b"), "Compose two rigid transforms (a then b right-to-left).");
  m.def("invert", [](const Mat4& p) {
    return invert(pose_from_array(p)).as_matrix();
  }, py::arg("pose"));
  m.def("pose_to_tuple", [](const Mat4& p) {
    return pose_to_tuple(pose_from_array(p));
  }, py::arg("pose"), "Return (qw, qx, qy, qz, tx, ty, tz) with qw >= 0.");
  m.def("pose_from_tuple", [](const std::array<double, 7>& t) {
    return pose_from_tuple(t).as_matrix();
  }, py::arg("tuple"));
  m.def("draw_noise", [](double trans, double rot_deg, std::uint64_t seed, std::uint64_t index) {
    NoiseSpec spec{trans, rot_deg};
    spec.validate();
    Rng rng = Rng::stream(seed, 0x401E, index);
    return sample_noise(spec, rng).as_matrix();
  }, py::arg("trans"), py::arg("rot_deg"), py::arg("seed"), py::arg("index") = 0,
     "Draw a bounded perturbation; same (seed, index) gives the same pose.");
  m.def("make_initial", [](const Mat4& t_gt, const Mat4& t_delta) {
    return make_initial(pose_from_array(t_gt), pose_from_array(t_delta)).as_matrix();
  }, py::arg("t_gt"), py::arg("t_delta"));
  m.def("recover_extrinsic", [](const Mat4& t_pred, const Mat4& t_init) {
    return recover_extrinsic(pose_from_array(t_pred), pose_from_array(t_init)).as_matrix();
  }, py::arg("t_pred"), py::arg("t_init"));
  m.def("compute_metrics", [](const Mat4& pred, const Mat4& gt) {
    return metrics_to_dict(compute_metrics(pose_from_array(pred), pose_from_array(gt)));
  }, py::arg("pred"), py::arg("gt"),
     "Per-axis and aggregate translation (cm) and rotation (deg) error.");

  m.def("depth_bins", [](double d_min, double d_max, Index count) {
    return depth_bins(d_min, d_max, count);
  }, py::arg("d_min"), py::arg("d_max"), py::arg("count"),
     "Bin-center distances along the frustum depth axis.");

  // Configs travel as JSON text; round-tripping canonicalizes them.
  m.def("default_config", []() { return config_to_json(default_config()); });
  m.def("canonical_config", [](const std::string& text) {
    return config_to_json(config_from_json(text));
  }, py::arg("json_text"), "Validate and canonicalize a config (unknown keys rejected).");
  m.def("load_config", [](const std::string& path) {
    return config_to_json(load_config(path));
  }, py::arg("path"));

  py::class_<Sample>(m, "Sample")
      .def_property_readonly("scene_id", [](const Sample& s) { return s.scene_id; })
      .def_property_readonly("num_points", [](const Sample& s) {
        return static_cast<Index>(s.cloud.points.size());
      })
      .def_property_readonly("image", [](const Sample& s) {
        return tensor_to_array(s.frame.image);
      }, "Rendered camera frame, (3, H, W) in [0, 1].")
      .def_property_readonly("intrinsics", [](const Sample& s) { return s.frame.intrinsics; })
      .def_property_readonly("t_gt", [](const Sample& s) { return s.t_gt.as_matrix(); })
      .def_property_readonly("points", [](const Sample& s) {
        py::array_t<double> out({static_cast<py::ssize_t>(s.cloud.points.size()),
                                 static_cast<py::ssize_t>(3)});
        auto view = out.mutable_unchecked<2>();
        for (py::ssize_t i = 0; i < view.shape(0); ++i) {
          const Vec3& p = s.cloud.points[static_cast<size_t>(i)];
          view(i, 0) = p.x();
          view(i, 1) = p.y();
          view(i, 2) = p.z();
        }
        return out;
      }, "LiDAR returns, (N, 3) meters in the sensor frame.")
      .def_property_readonly("intensity", [](const Sample& s) {
        py::array_t<double> out(static_cast<py::ssize_t>(s.cloud.intensity.size()));
        std::memcpy(out.mutable_data(), s.cloud.intensity.data(),
                    sizeof(double) * s.cloud.intensity.size());
        return out;
      });

  m.def("generate_scenes", [](const std::string& config_json) {
    return build_dataset(config_from_json(config_json));
  }, py::arg("config_json"), "Deterministic synthetic dataset for the given config.");
  m.def("load_frame", &load_kitti_frame, py::arg("root"), py::arg("sequence"), py::arg("index"));
  m.def("write_frame", &write_kitti_frame, py::arg("sample"), py::arg("root"),
        py::arg("sequence"), py::arg("index"));

  py::class_<CalibratorHandle>(m, "Calibrator")
      .def(py::init([](const std::string& config_json) {
        return std::make_unique<CalibratorHandle>(config_from_json(config_json));
      }), py::arg("config_json"))
      .def_property_readonly("config", [](const CalibratorHandle& h) {
        return config_to_json(h.model.config());
      })
      .def_property_readonly("param_count", [](const CalibratorHandle& h) {
        return h.model.params().scalar_count();
      })
      .def_property_readonly("forward_count", [](const CalibratorHandle& h) {
        return h.model.forward_count();
      })
      .def("calibrate", [](CalibratorHandle& h, const Sample& sample, const Mat4& t_init,
                           std::optional<Mat4> t_gt) {
        Pose gt;
        const Pose* gt_ptr = nullptr;
        if (t_gt) {
          gt = pose_from_array(*t_gt);
          gt_ptr = &gt;
        }
        FrameCalibration fc = calibrate_frame(h.model, sample, pose_from_array(t_init), gt_ptr);
        py::dict d;
        d["correction"] = fc.correction.as_matrix();
        d["extrinsic"] = fc.extrinsic.as_matrix();
        if (fc.error) d["error"] = metrics_to_dict(*fc.error);
        return d;
      }, py::arg("sample"), py::arg("t_init"), py::arg("t_gt") = std::nullopt,
         "One forward pass: predicted correction and recovered extrinsic.")
      .def("save", [](CalibratorHandle& h, const std::string& path) {
        save_checkpoint(snapshot_checkpoint(h.model, h.opt, h.step), path);
      }, py::arg("path"))
      .def_static("load", [](const std::string& path) {
        Checkpoint ckpt = load_checkpoint(path);
        auto h = std::make_unique<CalibratorHandle>(ckpt.config);
        restore_into(h->model, h->opt, ckpt);
        h->step = ckpt.step;
        return h;
      }, py::arg("path"));

  m.def("train", [](const std::string& config_json, const std::string& out_dir,
                    std::int64_t max_steps) {
    RunConfig cfg = config_from_json(config_json);
    TrainOptions opts;
    opts.out_dir = out_dir;
    opts.max_steps = max_steps;
    TrainResult res = train(cfg, build_dataset(cfg), opts);
    py::dict d;
    d["final_loss"] = res.final_loss;
    d["steps"] = res.steps;
    d["skipped_samples"] = res.skipped_samples;
    d["step_losses"] = res.step_losses;
    d["checkpoint"] = out_dir + "/checkpoint.bin";
    return d;
  }, py::arg("config_json"), py::arg("out_dir"), py::arg("max_steps") = 0,
     "Train on the config's synthetic dataset; returns loss curve and checkpoint path.");

  m.def("evaluate", [](CalibratorHandle& h, std::uint64_t seed) {
    const RunConfig& cfg = h.model.config();
    EvalReport rep = evaluate(h.model, build_dataset(cfg), cfg.eval, seed);
    py::dict d;
    d["csv"] = rep.to_csv();
    d["text"] = rep.to_text();
    d["columns"] = std::vector<std::string>(EvalReport::kColumns.begin(),
                                            EvalReport::kColumns.end());
    return d;
  }, py::arg("calibrator"), py::arg("seed"),
     "Recovery-error sweep over the config's eval regimes; returns CSV and aligned text.");
}
