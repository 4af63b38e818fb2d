#include "ctlgan/adaptation.hpp"
#include "ctlgan/checkpoint.hpp"
#include "ctlgan/commands.hpp"
#include "ctlgan/encoder.hpp"
#include "ctlgan/errors.hpp"
#include "ctlgan/metrics.hpp"
#include "ctlgan/toy_domains.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace ctlgan;

namespace {

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const F32Array& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<float*>(a.data()), shape, torch::kFloat32).clone();
}

torch::Tensor to_tensor(const F64Array& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kFloat64).clone();
}

py::array to_numpy(const torch::Tensor& t) {
  auto c = t.detach().contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  switch (c.scalar_type()) {
    case torch::kFloat32: return py::array_t<float>(shape, c.data_ptr<float>());
    case torch::kFloat64: return py::array_t<double>(shape, c.data_ptr<double>());
    case torch::kInt64: return py::array_t<int64_t>(shape, c.data_ptr<int64_t>());
    case torch::kUInt8: return py::array_t<uint8_t>(shape, c.data_ptr<uint8_t>());
    default: throw InvalidArgument("unsupported tensor dtype for numpy conversion");
  }
}

const FeatureBackbone& toy_backbone(int64_t channels) {
  static auto rgb = make_toy_backbone(3);
  static auto gray = make_toy_backbone(1);
  return channels == 1 ? *gray : *rgb;
}

PerceptualWeights unit_weights() { return PerceptualWeights::unit(toy_backbone(3).tap_count()); }

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json py_to_json(const py::object& o) {
  return nlohmann::json::parse(py::str(py::module_::import("json").attr("dumps")(o)).cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core of the ctlgan pipeline";

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<NumericFailure>(m, "NumericFailure", PyExc_ArithmeticError);
  py::register_exception<UndefinedMetric>(m, "UndefinedMetric", PyExc_ArithmeticError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_RuntimeError);
  py::register_exception<InvalidData>(m, "InvalidData", PyExc_ValueError);

  m.def("layer_count", &layer_count, py::arg("resolution"), "Style layers for a power-of-two resolution.");
  m.def(
      "sample_z", [](int64_t count, uint64_t seed, int64_t dim) { return to_numpy(sample_z(count, seed, dim)); },
      py::arg("count"), py::arg("seed"), py::arg("dim") = kDefaultLatentDim, "[count, dim] standard-normal codes.");
  m.def(
      "extend_repeat", [](const F32Array& z, int64_t n) { return to_numpy(extend_repeat(to_tensor(z), n).rows()); },
      py::arg("z"), py::arg("n"), "Repeats each code n times into a Z+ code [B, n, d].");

  py::class_<Generator>(m, "Generator")
      .def(py::init([](int64_t resolution, int64_t latent_dim, int64_t channels, int64_t mapping_layers,
                       uint64_t seed) {
             GeneratorConfig c;
             c.resolution = resolution;
             c.latent_dim = latent_dim;
             c.channels = channels;
             c.mapping_layers = mapping_layers;
             return Generator(c, seed);
           }),
           py::arg("resolution") = 32, py::arg("latent_dim") = 32, py::arg("channels") = 16,
           py::arg("mapping_layers") = 2, py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return load_generator(path); }, py::arg("path"))
      .def("save", [](const Generator& g, const std::string& path) { save_generator(path, g); }, py::arg("path"))
      .def_property_readonly("resolution", &Generator::resolution)
      .def_property_readonly("layers", &Generator::layers)
      .def_property_readonly("latent_dim", &Generator::latent_dim)
      .def(
          "synthesize",
          [](const Generator& g, const F32Array& zplus) {
            torch::NoGradGuard no_grad;
            return to_numpy(g.synthesize(ExtendedLatent(to_tensor(zplus))).images);
          },
          py::arg("zplus"), "Images [B, C, R, R] in [-1, 1] from Z+ codes [B, n, d].")
      .def(
          "adain_trace",
          [](const Generator& g, const F32Array& zplus) {
            torch::NoGradGuard no_grad;
            std::vector<py::array> out;
            for (const auto& t : g.synthesize(ExtendedLatent(to_tensor(zplus))).trace) out.push_back(to_numpy(t));
            return out;
          },
          py::arg("zplus"))
      .def("checksum", [](const Generator& g) { return tensor_checksum(g.parameters()); })
      .def(
          "adapt",
          [](const Generator& g, const F32Array& targets, const py::dict& config) {
            auto cfg = adaptation_config_from_json(py_to_json(config));
            py::gil_scoped_release release;
            return adapt(g, to_tensor(targets), cfg, toy_backbone(g.config().image_channels));
          },
          py::arg("targets"), py::arg("config") = py::dict(),
          "Few-shot adaptation with the toy perceptual backbone; returns a new generator.");

  py::class_<Encoder>(m, "Encoder")
      .def_static("load", [](const std::string& path) { return load_encoder(path); }, py::arg("path"))
      .def("save", [](const Encoder& e, const std::string& path) { save_encoder(path, e); }, py::arg("path"))
      .def(
          "encode",
          [](const Encoder& e, const F32Array& images) {
            torch::NoGradGuard no_grad;
            return to_numpy(e.encode(to_tensor(images)).rows());
          },
          py::arg("images"));

  m.def(
      "lpips",
      [](const F32Array& x, const F32Array& y) {
        torch::NoGradGuard no_grad;
        auto tx = to_tensor(x);
        return to_numpy(lpips(tx, to_tensor(y), toy_backbone(tx.size(1)), unit_weights()));
      },
      py::arg("x"), py::arg("y"), "Per-pair perceptual distance under the toy backbone.");
  m.def(
      "modified_lpips",
      [](const F32Array& x, const F32Array& y) {
        torch::NoGradGuard no_grad;
        auto tx = to_tensor(x);
        return to_numpy(modified_lpips(tx, to_tensor(y), toy_backbone(tx.size(1)), unit_weights()));
      },
      py::arg("x"), py::arg("y"));
  m.def(
      "cdt_loss",
      [](const F64Array& d, double alpha, double w_plus) { return cdt_loss(to_tensor(d), alpha, w_plus).item<double>(); },
      py::arg("distances"), py::arg("alpha") = 2.0, py::arg("w_plus") = 1.0);
  m.def(
      "kl_adain_loss",
      [](const std::vector<F64Array>& source, const std::vector<F64Array>& target) {
        AdaINInputTrace s, t;
        for (const auto& a : source) s.push_back(to_tensor(a));
        for (const auto& a : target) t.push_back(to_tensor(a));
        return kl_adain_loss(s, t).item<double>();
      },
      py::arg("source_trace"), py::arg("target_trace"));
  m.def(
      "smooth_l1", [](const F64Array& a, const F64Array& b) { return smooth_l1(to_tensor(a), to_tensor(b)).item<double>(); },
      py::arg("a"), py::arg("b"));

  m.def("fid", [](const F64Array& a, const F64Array& b) { return fid(to_tensor(a), to_tensor(b)); }, py::arg("feats_a"),
        py::arg("feats_b"));
  m.def(
      "fid_features",
      [](const F32Array& images) {
        auto t = to_tensor(images);
        return to_numpy(fid_features(t, toy_backbone(t.size(1))));
      },
      py::arg("images"));
  m.def(
      "lpips_distance_eval",
      [](const F32Array& inputs, const F32Array& outputs) {
        auto ti = to_tensor(inputs);
        return lpips_distance_eval(ti, to_tensor(outputs), toy_backbone(ti.size(1)), unit_weights());
      },
      py::arg("inputs"), py::arg("outputs"));
  m.def(
      "lpips_cluster",
      [](const F32Array& generated, const F32Array& training) {
        auto tg = to_tensor(generated);
        auto s = lpips_cluster(tg, to_tensor(training), toy_backbone(tg.size(1)), unit_weights());
        py::dict d;
        d["mean"] = s.mean;
        d["std"] = s.std;
        d["assignment"] = s.assignment;
        d["cluster_sizes"] = s.cluster_sizes;
        return d;
      },
      py::arg("generated"), py::arg("training"));
  m.def(
      "latent_moments",
      [](const F64Array& codes) {
        auto s = latent_moments(to_tensor(codes));
        return py::make_tuple(s.mean_norm, s.covariance_distance);
      },
      py::arg("codes"), "(mean norm, ||Cov - I||_F) over latent rows.");

  m.def(
      "render_toy",
      [](const F32Array& z, const std::string& domain, int64_t resolution) {
        if (domain != "A" && domain != "B") throw InvalidArgument("domain must be 'A' or 'B'");
        return to_numpy(render_toy(to_tensor(z), domain == "A" ? ToyDomain::A : ToyDomain::B, resolution));
      },
      py::arg("z"), py::arg("domain"), py::arg("resolution") = 32);
  m.def(
      "pretrain_toy_generator",
      [](int64_t steps, uint64_t seed, int64_t resolution) {
        PretrainConfig p;
        p.steps = steps;
        p.seed = seed;
        py::gil_scoped_release release;
        return pretrain_toy_generator(toy_generator_config(resolution), p);
      },
      py::arg("steps") = 1500, py::arg("seed") = 0, py::arg("resolution") = 32);

  m.def(
      "read_checkpoint",
      [](const std::string& path) {
        auto ckpt = read_checkpoint(path);
        py::dict tensors;
        for (const auto& [name, t] : ckpt.tensors) tensors[py::str(name)] = to_numpy(t);
        return py::make_tuple(ckpt.kind, json_to_py(ckpt.metadata), tensors);
      },
      py::arg("path"), "(kind, metadata, tensors) of a checkpoint file.");
  m.def(
      "run",
      [](const std::string& stage, const py::dict& config, const std::string& preset) {
        auto overrides = py_to_json(config);
        overrides["stage"] = stage;
        std::ostringstream log, err;
        int code;
        try {
          auto cfg = resolve_run_config(preset, "", overrides);
          py::gil_scoped_release release;
          code = run_stage(cfg, log, err);
        } catch (const std::exception& e) {
          err << "error: " << e.what() << '\n';
          code = exit_code_for(e);
        }
        return py::make_tuple(code, log.str(), err.str());
      },
      py::arg("stage"), py::arg("config") = py::dict(), py::arg("preset") = "",
      "Runs a pipeline stage like the command-line tool; returns (exit code, log, errors).");
}
