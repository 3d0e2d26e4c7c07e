#include <optional>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "toolgcn/error.hpp"
#include "toolgcn/evalharness.hpp"
#include "toolgcn/partition.hpp"
#include "toolgcn/pipeline.hpp"
#include "toolgcn/segment.hpp"
#include "toolgcn/synth.hpp"
#include "toolgcn/trainer.hpp"

namespace py = pybind11;
using namespace toolgcn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

RunConfig config_or_default(const std::optional<std::filesystem::path>& path) {
  return path ? load_run_config(*path) : RunConfig{};
}

// poses: [frames, tools, joints, 3] holding x, y, confidence.
PoseSequence pose_from_numpy(const Array& a, const std::string& video_id) {
  if (a.ndim() != 4 || a.shape(3) != 3) throw ValidationError("poses must have shape (frames, tools, joints, 3)");
  PoseSequence seq(video_id, a.shape(0), a.shape(1), a.shape(2));
  for (std::size_t f = 0; f < seq.frames(); ++f)
    for (std::size_t m = 0; m < seq.tools(); ++m)
      for (std::size_t v = 0; v < seq.joints(); ++v) {
        seq.x(f, m, v) = a.at(f, m, v, 0);
        seq.y(f, m, v) = a.at(f, m, v, 1);
        seq.confidence(f, m, v) = a.at(f, m, v, 2);
      }
  seq.normalized = true;
  return seq;
}

py::dict fold_dict(const FoldResult& f) {
  py::dict d;
  d["subject"] = f.subject;
  d["accuracy"] = f.accuracy;
  d["segments"] = f.predictions.size();
  d["failed"] = f.failed;
  d["error"] = f.error;
  d["train_accuracy"] = f.train_accuracy;
  d["confusion"] = f.confusion;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Tool-pose ST-GCN gesture recognition";
  m.attr("__version__") = kToolVersion;

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "synth",
      [](const std::filesystem::path& out, std::size_t classes, std::size_t subjects, std::size_t trials,
         std::uint64_t seed, std::size_t min_duration, std::size_t max_duration) {
        SynthOptions o;
        o.classes = classes;
        o.subjects = subjects;
        o.trials = trials;
        o.seed = seed;
        o.min_duration = min_duration;
        o.max_duration = max_duration;
        const Manifest man = synth_dataset(o, out);
        py::dict d;
        d["videos"] = man.videos.size();
        d["subjects"] = man.subjects();
        d["vocabulary"] = man.vocabulary.labels();
        return d;
      },
      "Write a synthetic dataset (manifest.json, poses/, transcriptions/) to a directory.", py::arg("out"),
      py::arg("classes") = 10, py::arg("subjects") = 8, py::arg("trials") = 3, py::arg("seed") = 1,
      py::arg("min_duration") = 90, py::arg("max_duration") = 150);

  m.def(
      "partition",
      [](const Array& pose) {
        const SkeletonSpec sk = default_tool_skeleton();
        if (pose.ndim() != 2 || pose.shape(1) != 2 || static_cast<std::size_t>(pose.shape(0)) != sk.num_joints())
          throw ValidationError("pose must have shape (5, 2)");
        std::vector<Point2> pts;
        for (py::ssize_t v = 0; v < pose.shape(0); ++v) pts.push_back({pose.at(v, 0), pose.at(v, 1)});
        return to_numpy(spatial_config_partition(sk, pts).matrices);
      },
      "Spatial-configuration partition [3, V, V] of the default tool skeleton for one pose.", py::arg("pose"));

  m.def(
      "segment",
      [](const Array& poses, const std::vector<std::tuple<std::size_t, std::size_t, int>>& transcript,
         std::size_t window, std::size_t step) {
        const PoseSequence seq = pose_from_numpy(poses, "py");
        Transcript t;
        t.video_id = "py";
        for (const auto& [s, e, g] : transcript) t.entries.push_back({s, e, g});
        int classes = 0;
        for (const auto& e : t.entries) classes = std::max(classes, e.gesture + 1);
        t.validate(static_cast<std::size_t>(classes));
        const auto segs = segment(seq, t, {window, step});
        std::vector<std::size_t> ends;
        std::vector<int> labels;
        Array data(std::vector<py::ssize_t>{static_cast<py::ssize_t>(segs.size()), 3, static_cast<py::ssize_t>(window),
                                            static_cast<py::ssize_t>(seq.joints()),
                                            static_cast<py::ssize_t>(seq.tools())});
        double* dst = data.mutable_data();
        for (const auto& s : segs) {
          ends.push_back(s.end_frame);
          labels.push_back(s.label);
          dst = std::copy(s.data.data().begin(), s.data.data().end(), dst);
        }
        return py::make_tuple(ends, labels, data);
      },
      "Sliding windows over transcribed frames: (end_frames, labels, data [N, 3, window, V, M]).",
      py::arg("poses"), py::arg("transcript"), py::arg("window") = 90, py::arg("step") = 3);

  m.def(
      "lr_at",
      [](std::size_t epoch, double base_lr, std::size_t lr_step, double lr_factor) {
        TrainConfig c;
        c.base_lr = base_lr;
        c.lr_step = lr_step;
        c.lr_factor = lr_factor;
        return lr_at(epoch, c);
      },
      "Step learning-rate schedule.", py::arg("epoch"), py::arg("base_lr") = 0.01, py::arg("lr_step") = 10,
      py::arg("lr_factor") = 0.1);

  m.def(
      "gradcheck",
      [](const std::optional<std::filesystem::path>& config, std::optional<std::size_t> max_elements,
         std::optional<double> tol) {
        RunConfig c = config_or_default(config);
        if (max_elements) c.gradcheck.max_elements = *max_elements;
        if (tol) c.gradcheck.tol = *tol;
        GradCheckReport r;
        {
          py::gil_scoped_release release;
          r = model_grad_check(c.model, resolve_skeleton(c), c.gradcheck, c.train.window);
        }
        py::dict d;
        d["passed"] = r.passed;
        d["checked"] = r.checked;
        d["max_error"] = r.max_error;
        d["summary"] = r.summary();
        return d;
      },
      "Gradient check of the configured model against central differences.", py::arg("config") = py::none(),
      py::arg("max_elements") = py::none(), py::arg("tol") = py::none());

  m.def(
      "train",
      [](const std::filesystem::path& data_dir, const std::filesystem::path& params_out,
         const std::optional<std::filesystem::path>& config, std::optional<std::size_t> epochs) {
        const RunConfig c = config_or_default(config);
        TrainConfig tc = c.train;
        if (epochs) tc.epochs = *epochs;
        TrainResult r;
        {
          py::gil_scoped_release release;
          const Dataset data = load_dataset(data_dir);
          TrainOptions o;
          for (std::size_t i = 0; i < data.videos.size(); ++i) o.train_videos.push_back(i);
          o.measure_train_accuracy = true;
          r = train(data, c.model, resolve_skeleton(c), tc, o);
          save_params(r.state.params, c.model, params_out);
        }
        py::dict d;
        d["train_accuracy"] = r.train_accuracy;
        d["windows"] = r.windows;
        d["losses"] = [&] {
          std::vector<double> l;
          for (const auto& m : r.state.history) l.push_back(m.loss);
          return l;
        }();
        return d;
      },
      "Train on every video of a dataset directory and write the parameter file.", py::arg("data_dir"),
      py::arg("params_out"), py::arg("config") = py::none(), py::arg("epochs") = py::none());

  m.def(
      "predict",
      [](const std::filesystem::path& params, const Array& batch) {
        const ModelConfig cfg = read_params_config(params);
        StgcnModel model(cfg, default_tool_skeleton(), load_params(params, cfg));
        const Tensor input = from_numpy(batch);
        Tensor logits;
        {
          py::gil_scoped_release release;
          logits = model.predict(input);
        }
        return to_numpy(logits);
      },
      "Eval-mode logits [N, classes] of saved parameters for a batch [N, 3, T, V, M].", py::arg("params"),
      py::arg("batch"));

  m.def(
      "crossval",
      [](const std::filesystem::path& data_dir, const std::optional<std::filesystem::path>& config,
         std::optional<std::string> fold, std::optional<std::size_t> epochs, bool shuffle_labels) {
        const RunConfig c = config_or_default(config);
        CrossvalOptions o;
        o.model = c.model;
        o.train = c.train;
        if (epochs) o.train.epochs = *epochs;
        o.skeleton = resolve_skeleton(c);
        o.fold = fold ? fold : c.fold;
        o.shuffle_labels = shuffle_labels;
        CrossvalReport r;
        {
          py::gil_scoped_release release;
          const Dataset data = load_dataset(data_dir);
          r = crossval(data, o);
        }
        py::dict d;
        d["average"] = r.average;
        d["pooled"] = r.pooled;
        d["chance"] = r.chance;
        py::list folds;
        for (const auto& f : r.folds) folds.append(fold_dict(f));
        d["folds"] = folds;
        d["warnings"] = r.warnings;
        return d;
      },
      "Leave-one-user-out cross-validation on a dataset directory.", py::arg("data_dir"),
      py::arg("config") = py::none(), py::arg("fold") = py::none(), py::arg("epochs") = py::none(),
      py::arg("shuffle_labels") = false);
}
