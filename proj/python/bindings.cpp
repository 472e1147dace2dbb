#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "urep/checkpoint.hpp"
#include "urep/cli.hpp"
#include "urep/derivable.hpp"
#include "urep/error.hpp"
#include "urep/metrics.hpp"
#include "urep/relatedness.hpp"
#include "urep/train.hpp"

namespace py = pybind11;
using urep::Tensor;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> to_tensor(const FloatArray& a) {
  urep::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<float>(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// [N, H, W] or [H, W] images as the [N, 1, H, W] batch the models take.
Tensor<float> image_batch(const FloatArray& a) {
  auto t = to_tensor(a);
  if (t.rank() == 2) return t.reshaped({1, 1, t.dim(0), t.dim(1)});
  if (t.rank() == 3) return t.reshaped({t.dim(0), 1, t.dim(1), t.dim(2)});
  throw urep::ShapeError("images must be [H, W] or [N, H, W]");
}

std::vector<Tensor<float>> image_list(const std::vector<FloatArray>& arrays) {
  std::vector<Tensor<float>> out;
  for (const auto& a : arrays) out.push_back(to_tensor(a));
  return out;
}

urep::TaskHead<float>& head_of(urep::URepModel<float>& m, const std::string& task) {
  auto* h = m.find_head(task);
  if (h == nullptr) throw urep::CompatibilityError("model has no head '" + task + "'");
  return *h;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Shared-representation multi-task learning on synthetic imaging data";

  py::register_exception<urep::Error>(m, "UrepError");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = urep::run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a urep command line; returns (exit_code, stdout, stderr).");

  m.def(
      "generate",
      [](const std::string& mode, int image_size, int count, std::uint64_t seed) {
        urep::SyntheticConfig c;
        c.mode = urep::parse_gen_mode(mode);
        c.image_size = image_size;
        c.count = count;
        c.seed = seed;
        py::list out;
        for (const auto& s : urep::generate(c)) {
          py::dict d;
          d["image"] = to_array(s.image);
          d["mask"] = s.mask ? py::object(to_array(*s.mask)) : py::none();
          d["class_label"] = s.class_label ? py::object(py::int_(*s.class_label)) : py::none();
          d["quality"] = s.quality ? py::object(py::str(std::string(urep::to_string(*s.quality)))) : py::none();
          d["group_id"] = s.group_id;
          out.append(d);
        }
        return out;
      },
      py::arg("mode") = "seg_cls", py::arg("image_size") = 64, py::arg("count") = 300, py::arg("seed") = 1);

  m.def(
      "intensity_histogram",
      [](const std::vector<FloatArray>& images) {
        const auto h = urep::intensity_histogram(image_list(images));
        return std::vector<double>(h.begin(), h.end());
      },
      py::arg("images"));

  m.def(
      "js_divergence",
      [](const std::vector<double>& p, const std::vector<double>& q) {
        if (p.size() != urep::kHistogramBins || q.size() != urep::kHistogramBins) {
          throw urep::ShapeError("histograms need 64 bins");
        }
        urep::Histogram a{}, b{};
        std::copy(p.begin(), p.end(), a.begin());
        std::copy(q.begin(), q.end(), b.begin());
        return urep::js_divergence(a, b);
      },
      py::arg("p"), py::arg("q"));

  m.def(
      "assess_relatedness",
      [](const std::vector<FloatArray>& a, const std::vector<FloatArray>& b, double threshold) {
        const auto r = urep::assess_relatedness(image_list(a), image_list(b), threshold);
        return py::make_tuple(r.divergence, std::string(urep::to_string(r.verdict)));
      },
      py::arg("a"), py::arg("b"), py::arg("threshold") = urep::kRelatednessThreshold,
      "Returns (divergence, 'related' | 'unrelated').");

  m.def(
      "psnr",
      [](const FloatArray& clean, const FloatArray& reconstructed) {
        if (clean.size() != reconstructed.size()) throw urep::ShapeError("psnr needs equal sizes");
        return urep::psnr(std::span<const float>(clean.data(), clean.size()),
                          std::span<const float>(reconstructed.data(), reconstructed.size()));
      },
      py::arg("clean"), py::arg("reconstructed"));

  py::class_<urep::URepModel<float>>(m, "Model")
      .def_property_readonly("arch",
                             [](const urep::URepModel<float>& x) { return std::string(urep::to_string(x.backbone.config().arch)); })
      .def_property_readonly("construction_mode",
                             [](const urep::URepModel<float>& x) { return std::string(urep::to_string(x.construction_mode)); })
      .def_readonly("seed", &urep::URepModel<float>::seed)
      .def_readonly("input_size", &urep::URepModel<float>::input_size)
      .def_readonly("provenance", &urep::URepModel<float>::provenance)
      .def_property_readonly("heads",
                             [](const urep::URepModel<float>& x) {
                               std::vector<std::string> ids;
                               for (const auto& h : x.heads) ids.push_back(h.task_id());
                               return ids;
                             })
      .def(
          "predict",
          [](urep::URepModel<float>& x, const std::string& task, const FloatArray& images) {
            return to_array(urep::predict(x, head_of(x, task), image_batch(images)));
          },
          py::arg("task"), py::arg("images"))
      .def(
          "reconstruct",
          [](urep::URepModel<float>& x, const FloatArray& images) {
            return to_array(urep::reconstruct(x, image_batch(images)));
          },
          py::arg("images"))
      .def(
          "grad_cam",
          [](urep::URepModel<float>& x, const FloatArray& image, int class_index, const std::string& task) {
            const auto h = urep::grad_cam(x, head_of(x, task), to_tensor(image), class_index);
            return py::make_tuple(to_array(h.values), h.raw_max, h.probabilities);
          },
          py::arg("image"), py::arg("class_index"), py::arg("task") = "cls",
          "Returns (heatmap, raw_max, probabilities).")
      .def(
          "save", [](urep::URepModel<float>& x, const std::string& path) { urep::save_checkpoint(x, path); },
          py::arg("path"));

  m.def("load_checkpoint", &urep::load_checkpoint, py::arg("path"));
}
