#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "regcd/config.hpp"
#include "regcd/data.hpp"
#include "regcd/error.hpp"
#include "regcd/evaluate.hpp"
#include "regcd/flow.hpp"
#include "regcd/geometry.hpp"
#include "regcd/matcher.hpp"
#include "regcd/metrics.hpp"
#include "regcd/pipeline.hpp"
#include "regcd/trainer.hpp"

namespace py = pybind11;
using namespace regcd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  Tensor t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

Array to_array(const Tensor& t) {
  Array a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

DenseFlow to_flow(const Array& uv, std::optional<Array> valid) {
  Tensor u = to_tensor(uv);
  Tensor v = valid ? to_tensor(*valid) : Tensor({1, u.dim(1), u.dim(2)}, 1.0);
  return DenseFlow(std::move(u), std::move(v));
}

py::dict metrics_dict(const ChangeMetrics& m) {
  py::dict d;
  d["oa"] = m.oa;
  d["precision_change"] = m.precision_change;
  d["recall_change"] = m.recall_change;
  d["f1_change"] = m.f1_change;
  d["f1_nochange"] = m.f1_nochange;
  d["iou_change"] = m.iou_change;
  d["iou_nochange"] = m.iou_nochange;
  d["mf1"] = m.mf1;
  d["miou"] = m.miou;
  return d;
}

py::object json_loads(const std::string& s) { return py::module_::import("json").attr("loads")(s); }

}  // namespace

PYBIND11_MODULE(_regcd, m) {
  m.doc() = "Joint registration and change detection: native core";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "affine_from_params",
      [](double dx, double dy, double theta_deg, double scale, int height, int width) {
        return AffineTransform::from_params({dx, dy, theta_deg, scale}, PixelGrid(height, width)).matrix();
      },
      py::arg("dx"), py::arg("dy"), py::arg("theta_deg"), py::arg("scale"), py::arg("height"), py::arg("width"));
  m.def(
      "sample_affine",
      [](std::uint64_t seed, int height, int width, std::pair<double, double> dx, std::pair<double, double> dy,
         std::pair<double, double> theta, std::pair<double, double> scale) {
        PerturbationRanges r{{dx.first, dx.second}, {dy.first, dy.second}, {theta.first, theta.second},
                             {scale.first, scale.second}};
        return sample_affine(seed, r, PixelGrid(height, width)).matrix();
      },
      py::arg("seed"), py::arg("height"), py::arg("width"), py::arg("dx") = std::pair{-25.0, 25.0},
      py::arg("dy") = std::pair{-25.0, 25.0}, py::arg("theta_deg") = std::pair{-30.0, 30.0},
      py::arg("scale") = std::pair{0.8, 1.25});
  m.def(
      "flow_from_affine",
      [](const std::array<double, 6>& matrix, int height, int width) {
        const DenseFlow f = flow_from_affine(AffineTransform(matrix), PixelGrid(height, width));
        return py::make_tuple(to_array(f.uv), to_array(f.valid));
      },
      py::arg("matrix"), py::arg("height"), py::arg("width"), "Returns (uv {2,H,W}, valid {1,H,W}).");
  m.def(
      "warp",
      [](const Array& field, const Array& uv) {
        const WarpResult r = warp(to_tensor(field), to_flow(uv, std::nullopt));
        return py::make_tuple(to_array(r.values), to_array(r.covered));
      },
      py::arg("field"), py::arg("uv"), "Bilinear sampling at x + uv(x); returns (values, covered).");

  m.def(
      "fourier_features",
      [](const std::vector<std::vector<double>>& vectors, int num_features, double length_scale, std::uint64_t seed) {
        if (vectors.empty()) throw ValidationError("fourier_features: no vectors");
        const FourierMap phi(static_cast<int>(vectors[0].size()), num_features, length_scale, seed);
        std::vector<std::vector<double>> out;
        for (const auto& v : vectors) out.push_back(phi.map(v));
        return out;
      },
      py::arg("vectors"), py::arg("num_features") = 256, py::arg("length_scale") = 1.0, py::arg("seed") = 0);
  m.def(
      "lattice_offsets",
      [](int r, double delta) { return to_array(DisplacementLattice(r, delta).offsets_matrix()); },
      py::arg("r") = 11, py::arg("delta") = 1.0);
  m.def(
      "gaussian_target",
      [](const Array& w_star, int r, double delta, double sigma) {
        const GaussianTarget t = gaussian_target(to_tensor(w_star), DisplacementLattice(r, delta), sigma);
        return py::make_tuple(to_array(t.probs), to_array(t.in_range));
      },
      py::arg("w_star"), py::arg("r") = 11, py::arg("delta") = 1.0, py::arg("sigma") = 1.0);
  m.def(
      "argsoftmax_decode",
      [](const Array& probs, int r, double delta) {
        return to_array(argsoftmax_decode(ag::constant(to_tensor(probs)), DisplacementLattice(r, delta)).value());
      },
      py::arg("probs"), py::arg("r") = 11, py::arg("delta") = 1.0);

  m.def(
      "change_metrics",
      [](const Array& pred, const Array& gt, std::optional<Array> valid) {
        const Tensor p = to_tensor(pred);
        const Tensor v = valid ? to_tensor(*valid) : Tensor(p.shape(), 1.0);
        const ConfusionCounts c = confusion(p, to_tensor(gt), v);
        py::dict d = metrics_dict(change_metrics(c));
        d["tp"] = c.tp;
        d["fp"] = c.fp;
        d["fn"] = c.fn;
        d["tn"] = c.tn;
        return d;
      },
      py::arg("pred"), py::arg("gt"), py::arg("valid") = py::none(), "Masks are binarized at 0.5.");
  m.def(
      "flow_epe",
      [](const Array& pred, const Array& gt, std::optional<Array> valid) {
        const EPEStats s = flow_epe(to_flow(pred, std::nullopt), to_flow(gt, valid));
        py::dict d;
        d["mean"] = s.mean;
        d["below_1px"] = s.below1;
        d["below_3px"] = s.below3;
        d["count"] = s.count;
        return d;
      },
      py::arg("pred"), py::arg("gt"), py::arg("valid") = py::none());

  m.def(
      "lambda_cd",
      [](long t, int warmup, int ramp, double lambda_max) {
        TrainConfig c;
        c.warmup = warmup;
        c.ramp = ramp;
        c.lambda_max = lambda_max;
        return lambda_cd(t, c);
      },
      py::arg("t"), py::arg("warmup") = 500, py::arg("ramp") = 1000, py::arg("lambda_max") = 1.0);
  m.def(
      "learning_rate",
      [](long t, long total, double lr, double lr_min) {
        TrainConfig c;
        c.lr = lr;
        c.lr_min = lr_min;
        return learning_rate(t, total, c);
      },
      py::arg("t"), py::arg("total"), py::arg("lr") = 1e-4, py::arg("lr_min") = 0.0);

  m.def(
      "default_config", [] { return json_loads(RunConfig{}.to_json()); }, "Default run configuration as a dict.");
  m.def(
      "config_hash", [](const std::string& json_text) { return parse_config(json_text).hash(); }, py::arg("config_json"));

  m.def(
      "generate_dataset",
      [](const std::string& root, int n, int size, std::uint64_t seed, const std::string& split, double translation) {
        GenerateOptions g;
        g.n = n;
        g.size = size;
        g.seed = seed;
        g.split = split;
        g.ranges = PerturbationRanges::translation(-translation, translation);
        return generate_dataset(root, g).records.size();
      },
      py::arg("root"), py::arg("n"), py::arg("size") = 64, py::arg("seed") = 0, py::arg("split") = "train",
      py::arg("translation") = 8.0, "Toy corpus with translation-only perturbations; returns the sample count.");
  m.def(
      "load_sample",
      [](const std::string& root, const std::string& split, int index) {
        const SamplePair s = read_sample(std::filesystem::path(root) / split, sample_id(index));
        py::dict d;
        d["image_a"] = to_array(s.image_a);
        d["image_b"] = to_array(s.image_b);
        d["flow"] = to_array(s.flow.uv);
        d["valid"] = to_array(s.flow.valid);
        d["change"] = to_array(s.change);
        return d;
      },
      py::arg("root"), py::arg("split"), py::arg("index"));

  m.def(
      "pretrain",
      [](const std::string& config_json, const std::string& out_file) {
        py::gil_scoped_release release;
        pretrain_encoder(parse_config(config_json), out_file, true);
      },
      py::arg("config_json"), py::arg("out_file"));
  m.def(
      "train",
      [](const std::string& config_json, const std::string& out_dir, const std::string& ablation) {
        RunConfig cfg = parse_config(config_json);
        apply_ablation(cfg, ablation);
        FitOptions opt;
        opt.quiet = true;
        FitResult r;
        {
          py::gil_scoped_release release;
          r = fit(cfg, out_dir, opt);
        }
        py::dict d;
        d["iterations"] = r.iterations;
        d["last_checkpoint"] = r.last_checkpoint.string();
        d["best_checkpoint"] = r.best_checkpoint.string();
        d["best_mf1"] = r.best_mf1;
        return d;
      },
      py::arg("config_json"), py::arg("out_dir"), py::arg("ablation") = "none");
  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& data_root, const std::string& split,
         const std::string& out_dir, bool force) {
        EvalRunOptions opt;
        opt.force = force;
        EvalReport r;
        {
          py::gil_scoped_release release;
          r = evaluate_checkpoint(checkpoint, data_root, split, out_dir, opt);
        }
        return json_loads(report_json(r));
      },
      py::arg("checkpoint"), py::arg("data_root"), py::arg("split") = "test", py::arg("out_dir") = "eval",
      py::arg("force") = false, "Evaluates a checkpoint and returns the report as a dict.");
}
