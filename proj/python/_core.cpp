#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cli.hpp"
#include "pdcvit/data.hpp"
#include "pdcvit/errors.hpp"
#include "pdcvit/pdc.hpp"
#include "pdcvit/train.hpp"
#include "pdcvit/verify.hpp"

namespace py = pybind11;
using namespace pdcvit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from_data(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

PadMode parse_pad(const std::string& name) {
  if (name == "replicate") return PadMode::Replicate;
  if (name == "zeros") return PadMode::Zeros;
  throw ParameterError("unknown pad mode '" + name + "' (replicate | zeros)");
}

PdcVariant parse_variant(const std::string& name) {
  if (name == "angular" || name == "apdc") return PdcVariant::Angular;
  if (name == "radial" || name == "rpdc") return PdcVariant::Radial;
  throw ParameterError("unknown PDC variant '" + name + "' (angular | radial)");
}

py::list pairs_to_list(const PixelPairSet& set) {
  py::list out;
  for (const PixelPair& p : set.pairs) {
    out.append(py::make_tuple(py::make_tuple(p.sampled.dy, p.sampled.dx),
                              py::make_tuple(p.subtracted.dy, p.subtracted.dx)));
  }
  return out;
}

py::dict report_to_dict(const EvalReport& r) {
  py::dict d;
  d["classes"] = r.classes;
  d["accuracy"] = r.accuracy;
  d["confusion"] = r.confusion;
  d["fnr"] = r.fnr;
  d["fpr"] = r.fpr;
  d["mean_fnr"] = r.mean_fnr;
  d["mean_fpr"] = r.mean_fpr;
  d["text"] = r.to_text();
  return d;
}

py::dict manifest_to_dict(const DatasetManifest& m) {
  py::list items;
  for (const ManifestItem& it : m.items) items.append(py::make_tuple(it.path, it.label, to_string(it.split)));
  py::dict d;
  d["root"] = m.root.string();
  d["classes"] = m.classes;
  d["items"] = items;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pixel difference convolutions and the PDC-ViT toolkit";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ParameterError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const DimensionError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const IndexError& e) {
      PyErr_SetString(PyExc_IndexError, e.what());
    } catch (const DataError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    }
  });

  m.def("angular_pairs", [] { return pairs_to_list(angular_pairs()); },
        "Angular pairs as ((dy, dx) sampled, (dy, dx) subtracted), clockwise from the top-left corner.");
  m.def("radial_pairs", [] { return pairs_to_list(radial_pairs()); },
        "Radial pairs (2d, d) for compass directions N, NE, E, SE, S, SW, W, NW.");

  m.def(
      "convert_weights",
      [](const Array& weights, const std::string& variant) {
        return to_array(convert_weights(PdcKernel::make(parse_variant(variant), to_tensor(weights))).weights);
      },
      py::arg("weights"), py::arg("variant"),
      "Pair weights (C_out, C_in, 8) -> equivalent vanilla kernel (C_out, C_in, k, k).");

  m.def(
      "pdc_forward_direct",
      [](const Array& x, const Array& weights, const std::string& variant, std::size_t stride, std::size_t padding,
         const std::string& pad) {
        return to_array(pdc_forward_direct(to_tensor(x), PdcKernel::make(parse_variant(variant), to_tensor(weights)),
                                           stride, padding, parse_pad(pad)));
      },
      py::arg("input"), py::arg("weights"), py::arg("variant"), py::arg("stride") = 1, py::arg("padding") = 0,
      py::arg("pad") = "replicate", "Pair-by-pair evaluation of sum_p w_p (x[s_p] - x[t_p]).");
  m.def(
      "pdc_forward_converted",
      [](const Array& x, const Array& weights, const std::string& variant, std::size_t stride, std::size_t padding,
         const std::string& pad) {
        return to_array(pdc_forward_converted(to_tensor(x),
                                              PdcKernel::make(parse_variant(variant), to_tensor(weights)), stride,
                                              padding, parse_pad(pad)));
      },
      py::arg("input"), py::arg("weights"), py::arg("variant"), py::arg("stride") = 1, py::arg("padding") = 0,
      py::arg("pad") = "replicate", "Same result through conv2d with the converted kernel.");

  m.def(
      "conv2d",
      [](const Array& x, const Array& kernel, std::size_t stride, std::size_t padding, const std::string& pad) {
        return to_array(conv2d(to_tensor(x), to_tensor(kernel), stride, padding, parse_pad(pad)));
      },
      py::arg("input"), py::arg("kernel"), py::arg("stride") = 1, py::arg("padding") = 0, py::arg("pad") = "zeros",
      "Cross-correlation of (C_in, H, W) with (C_out, C_in, k, k).");
  m.def(
      "softmax", [](const Array& x, std::size_t axis) { return to_array(softmax(to_tensor(x), axis)); },
      py::arg("x"), py::arg("axis") = 0);

  m.def(
      "report_from_confusion",
      [](const std::vector<std::vector<std::size_t>>& confusion, std::vector<std::string> classes) {
        return report_to_dict(report_from_confusion(confusion, std::move(classes)));
      },
      py::arg("confusion"), py::arg("classes") = std::vector<std::string>{});

  m.def(
      "gen_synthetic",
      [](const std::string& out_dir, std::size_t classes, std::size_t per_class, std::size_t size, double amplitude,
         std::uint64_t seed) {
        return manifest_to_dict(gen_synthetic(SynthSpec::from_seed(classes, per_class, size, amplitude, seed), out_dir));
      },
      py::arg("out_dir"), py::arg("classes") = 8, py::arg("per_class") = 100, py::arg("size") = 32,
      py::arg("amplitude") = 0.05, py::arg("seed") = 7);
  m.def(
      "scan_dataset", [](const std::string& root) { return manifest_to_dict(scan_dataset(root)); }, py::arg("root"));

  m.def(
      "verify",
      [](std::size_t trials, std::size_t grad_draws, std::uint64_t seed) {
        VerifyOptions opts;
        opts.pdc_trials = trials;
        opts.grad_draws = grad_draws;
        opts.seed = seed;
        py::list out;
        for (const SuiteResult& s : run_verify(opts)) out.append(py::make_tuple(s.name, s.passed, s.detail));
        return out;
      },
      py::arg("trials") = 1000, py::arg("grad_draws") = 3, py::arg("seed") = 7,
      "Runs the invariant suites; returns (name, passed, detail) tuples.");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> full{"pdcvit"};
        full.insert(full.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : full) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a pdcvit subcommand in-process; returns (exit_code, stdout, stderr).");
}
