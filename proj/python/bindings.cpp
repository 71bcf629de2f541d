// pybind11 bindings for the main operations: morphable model, heat maps,
// kernels and cost model, pipelines, metrics.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "evodhm/evaluation.hpp"
#include "evodhm/heatmap.hpp"
#include "evodhm/morphable.hpp"
#include "evodhm/nn.hpp"
#include "evodhm/pipeline.hpp"

namespace py = pybind11;
using namespace evodhm;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  std::vector<std::size_t> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<std::size_t>(i)] =
      static_cast<std::size_t>(a.shape(i));
  Tensor t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data.begin());
  return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<double> a(shape);
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

PoseShapeParams params_from_dict(const MorphableModel& model, double f,
                                 std::array<double, 3> euler, std::array<double, 2> t2d,
                                 std::vector<double> p_id, std::vector<double> p_exp) {
  PoseShapeParams p;
  p.scale_f = f;
  p.euler = euler;
  p.translation_2d = t2d;
  p.p_id = p_id.empty() ? std::vector<double>(model.k_id(), 0.0) : std::move(p_id);
  p.p_exp = p_exp.empty() ? std::vector<double>(model.k_exp(), 0.0) : std::move(p_exp);
  return p;
}

}  // namespace

PYBIND11_MODULE(_evodhm, m) {
  m.doc() = "deep evolutionary diffusion heat-map face alignment core";

  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<NumericFailure>(m, "NumericFailure", PyExc_ArithmeticError);

  py::class_<MorphableModel>(m, "MorphableModel")
      .def_property_readonly("landmark_count",
                             [](const MorphableModel& mm) { return mm.landmark_count; })
      .def_property_readonly("k_id", &MorphableModel::k_id)
      .def_property_readonly("k_exp", &MorphableModel::k_exp)
      .def_property_readonly("param_dim", &MorphableModel::param_dim)
      .def_property_readonly("mean_shape",
                             [](const MorphableModel& mm) { return array_from_tensor(mm.mean_shape); });

  m.def("generate_synthetic_model", &generate_synthetic_model, py::arg("seed"),
        py::arg("landmarks"), py::arg("k_id"), py::arg("k_exp"));

  m.def("synthesize_shape",
        [](const MorphableModel& mm, double f, std::array<double, 3> euler,
           std::array<double, 2> t2d, std::vector<double> p_id, std::vector<double> p_exp) {
          auto p = params_from_dict(mm, f, euler, t2d, std::move(p_id), std::move(p_exp));
          return array_from_tensor(synthesize_shape(mm, p).coords);
        },
        py::arg("model"), py::arg("f") = 1.0,
        py::arg("euler") = std::array<double, 3>{0, 0, 0},
        py::arg("t2d") = std::array<double, 2>{0, 0},
        py::arg("p_id") = std::vector<double>{}, py::arg("p_exp") = std::vector<double>{});

  m.def("rotation_from_euler",
        [](std::array<double, 3> euler) { return array_from_tensor(rotation_from_euler(euler)); });

  m.def("project_weak_perspective",
        [](const MorphableModel& mm, double f, std::array<double, 3> euler,
           std::array<double, 2> t2d, std::vector<double> p_id, std::vector<double> p_exp) {
          auto p = params_from_dict(mm, f, euler, t2d, std::move(p_id), std::move(p_exp));
          return array_from_tensor(project_weak_perspective(mm, p));
        },
        py::arg("model"), py::arg("f") = 1.0,
        py::arg("euler") = std::array<double, 3>{0, 0, 0},
        py::arg("t2d") = std::array<double, 2>{0, 0},
        py::arg("p_id") = std::vector<double>{}, py::arg("p_exp") = std::vector<double>{});

  m.def("normalize_channel", [](std::vector<double> v) {
    auto r = normalize_channel(v);
    return py::make_tuple(r.values, r.degenerate);
  });

  m.def("rasterize_heatmap",
        [](const py::array_t<double>& shape2d, const py::array_t<double>& normalized_xyz,
           std::size_t height, std::size_t width, double sigma) {
          auto map = rasterize_heatmap(tensor_from_array(shape2d),
                                       tensor_from_array(normalized_xyz), height, width,
                                       sigma);
          return array_from_tensor(map.data);
        },
        py::arg("shape2d"), py::arg("normalized_xyz"), py::arg("height"), py::arg("width"),
        py::arg("sigma") = 1.0);

  m.def("mean_initial_heatmap",
        [](const MorphableModel& mm, std::size_t image_size, double sigma) {
          auto pose = default_centered_pose(mm, image_size);
          return array_from_tensor(
              mean_initial_heatmap(mm, pose, image_size, image_size, sigma).data);
        },
        py::arg("model"), py::arg("image_size"), py::arg("sigma") = 1.0);

  py::class_<CostReport>(m, "CostReport")
      .def_readonly("mult_adds", &CostReport::mult_adds)
      .def_readonly("parameters", &CostReport::parameters);

  m.def("cost_of",
        [](const std::string& mode, std::size_t kernel, std::size_t in_ch, std::size_t out_ch,
           std::size_t feature_size, std::size_t stride) {
          ConvMode cm = mode == "depthwise"   ? ConvMode::depthwise
                        : mode == "pointwise" ? ConvMode::pointwise
                                              : ConvMode::standard;
          return cost_of(ConvSpec::same(cm, kernel, in_ch, out_ch, stride), feature_size);
        },
        py::arg("mode"), py::arg("kernel"), py::arg("in_channels"), py::arg("out_channels"),
        py::arg("feature_size"), py::arg("stride") = 1);

  m.def("separable_reduction_ratio", [](std::size_t kernel, std::size_t in_ch, std::size_t out_ch) {
    return separable_reduction_ratio(ConvSpec::same(ConvMode::standard, kernel, in_ch, out_ch));
  });

  m.def("nme",
        [](const py::array_t<double>& pred, const py::array_t<double>& gt, double w, double h) {
          return nme(tensor_from_array(pred), tensor_from_array(gt), w, h);
        });

  py::class_<PipelineConfig>(m, "PipelineConfig")
      .def(py::init<>())
      .def_readwrite("image_size", &PipelineConfig::image_size)
      .def_readwrite("steps", &PipelineConfig::steps)
      .def_readwrite("width_multiplier", &PipelineConfig::width_multiplier)
      .def_readwrite("landmarks", &PipelineConfig::landmarks)
      .def_readwrite("k_id", &PipelineConfig::k_id)
      .def_readwrite("k_exp", &PipelineConfig::k_exp)
      .def_readwrite("batch", &PipelineConfig::batch)
      .def_readwrite("epochs", &PipelineConfig::epochs)
      .def_readwrite("learning_rate", &PipelineConfig::learning_rate)
      .def_property("variant",
                    [](const PipelineConfig& c) { return std::string(to_string(c.variant)); },
                    [](PipelineConfig& c, const std::string& v) {
                      c.variant = variant_from_string(v);
                    });

  py::class_<TrainedModel>(m, "TrainedModel")
      .def("parameter_count", &TrainedModel::parameter_count)
      .def("mult_adds_per_frame", &TrainedModel::mult_adds_per_frame)
      .def("run", [](const TrainedModel& tm, const py::array_t<double>& image) {
        AlignmentResult r = tm.run(tensor_from_array(image));
        py::dict d;
        d["final_landmarks"] = array_from_tensor(r.final_landmarks);
        d["initial_landmarks"] = array_from_tensor(r.initial_landmarks);
        py::list stages;
        for (const auto& s : r.stage_landmarks) stages.append(array_from_tensor(s));
        d["stage_landmarks"] = stages;
        d["mult_adds"] = r.mult_adds;
        return d;
      });

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("size", [](const Dataset& d) { return d.samples.size(); })
      .def("sample", [](const Dataset& d, std::size_t i) {
        const auto& s = d.samples.at(i);
        py::dict out;
        out["image"] = array_from_tensor(s.image);
        out["landmarks"] = array_from_tensor(s.ground_truth_2d);
        out["yaw"] = s.yaw;
        return out;
      });

  m.def("generate_synthetic_dataset",
        [](const MorphableModel& mm, std::size_t n, std::uint64_t seed,
           const PipelineConfig& cfg) { return generate_synthetic_dataset(mm, n, seed, cfg); });
  m.def("save_dataset", &save_dataset);
  m.def("load_dataset", &load_dataset);
  m.def("train", &train, py::arg("dataset"), py::arg("config"), py::arg("seed"));
  m.def("save_trained_model", &save_trained_model);
  m.def("load_trained_model", &load_trained_model);
}
