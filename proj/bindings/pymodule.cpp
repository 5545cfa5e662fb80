// Python bindings over the bundle-level operations: describe a topology,
// train/evaluate a checkpoint, quantize it, and run the hardware estimators.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <functional>

#include "semifreddo/bundle.hpp"
#include "semifreddo/hardware.hpp"
#include "semifreddo/train.hpp"

namespace py = pybind11;
using namespace semifreddo;

namespace {

NetworkSpec resolve_spec(const std::string& spec_json, bool small) {
  if (!spec_json.empty()) return spec_from_json(spec_json);
  return small ? small_spec() : default_spec();
}

py::dict describe(const std::string& spec_json, bool small) {
  NetworkSpec spec = resolve_spec(spec_json, small);
  Program prog = build_program(spec);
  ParamPartition pp = count_params(spec);
  FreezePlan plan = make_freeze_plan(prog, FreezeScheme::core_partition(), 0);
  py::dict d;
  d["spec_json"] = spec_to_json(spec);
  d["topology_hash"] = topology_hash(spec);
  py::dict params;
  params["frozen_conv"] = pp.frozen_conv;
  params["trainable_conv_per_core"] = pp.trainable_conv_per_core;
  params["alpha"] = pp.alpha;
  params["frozen_core_bn_affine"] = pp.frozen_core_bn_affine;
  params["trainable_bn"] = pp.trainable_bn;
  params["head"] = pp.head;
  params["total"] = pp.total();
  d["params"] = params;
  d["effective_ratio_single_core"] =
      effective_ratio(plan, prog, {true, true, false});
  d["effective_ratio_two_cores"] =
      effective_ratio(plan, prog, {true, true, true});
  return d;
}

std::vector<std::string> validate(const std::string& spec_json) {
  return validate_spec(spec_from_json(spec_json)).violations;
}

double train_synthetic(const std::string& spec_json, bool small, double rho,
                       uint32_t seed, int epochs, int train_count,
                       int test_count, const std::string& out_bundle) {
  NetworkSpec spec = resolve_spec(spec_json, small);
  Program prog = build_program(spec);
  WeightBundle b;
  b.spec = spec;
  b.state = init_state(prog, seed);
  b.plan = make_freeze_plan(prog, FreezeScheme::uniform((float)rho), seed);
  MomentumBuffers mom = init_momentum(prog);
  OptimizerConfig cfg;
  RejuvenationPolicy policy;
  Dataset train =
      make_synthetic(train_count, spec.head.out_channels, spec.input, seed);
  Dataset test = make_synthetic(test_count, spec.head.out_channels, spec.input,
                                seed + 7919);
  for (int e = 0; e < epochs; ++e)
    train_epoch(prog, *b.state, *b.plan, train, cfg, policy, mom,
                seed + 1000u * (uint32_t)e);
  double acc = evaluate(prog, *b.state, test);
  b.metrics["accuracy"] = acc;
  if (!out_bundle.empty()) save_bundle(out_bundle, b);
  return acc;
}

double eval_bundle(const std::string& path, int test_count, uint32_t seed) {
  WeightBundle b = load_bundle(path);
  require(b.state.has_value(), "bundle has no weights");
  Program prog = build_program(b.spec);
  Dataset test = make_synthetic(test_count, b.spec.head.out_channels,
                                b.spec.input, seed);
  return evaluate(prog, *b.state, test);
}

py::dict quantize_bundle(const std::string& in_path,
                         const std::string& out_path, int frames,
                         uint32_t seed) {
  WeightBundle b = load_bundle(in_path);
  require(b.state.has_value(), "bundle has no weights");
  Program prog = build_program(b.spec);
  if (!b.plan)
    b.plan = make_freeze_plan(prog, FreezeScheme::core_partition(), seed);
  Dataset d =
      make_synthetic(frames, b.spec.head.out_channels, b.spec.input, seed);
  std::vector<Tensor> calib;
  for (int i = 0; i < frames; ++i) calib.push_back(d.slice({i}).images);
  b.qgraph = build_qgraph(prog, *b.state, *b.plan, calib);
  save_bundle(out_path, b);
  long long scalers = 0, trainable = 0;
  for (const auto& l : b.qgraph->convs) {
    scalers += l.scaler_count();
    trainable += l.trainable_count();
  }
  py::dict r;
  r["frozen_scalers"] = scalers;
  r["trainable_weights"] = trainable;
  return r;
}

py::dict area_of_bundle(const std::string& path, double calibrate_to) {
  WeightBundle b = load_bundle(path);
  require(b.qgraph.has_value(), "bundle has no quantized graph");
  Program prog = build_program(b.spec);
  CostParams params;
  if (calibrate_to > 0)
    params = calibrate_cost_params(*b.qgraph, prog, params, calibrate_to);
  AreaReport rep = estimate_area(*b.qgraph, prog, params);
  py::dict r;
  r["frozen_scaler_mm2"] = rep.frozen_scaler_mm2;
  r["trainable_mult_mm2"] = rep.trainable_mult_mm2;
  r["sram_mm2"] = rep.sram_mm2;
  r["overhead_mm2"] = rep.overhead_mm2;
  r["total_mm2"] = rep.total_mm2;
  r["reduction_factor"] = rep.reduction_factor;
  return r;
}

py::dict fps(const std::string& spec_json, bool small, int r, int width,
             int height) {
  CostParams params;
  ThroughputReport rep =
      estimate_fps(resolve_spec(spec_json, small), r, width, height, params);
  py::dict d;
  d["fps"] = rep.fps;
  d["tail_fraction"] = rep.tail_fraction;
  d["reload_seconds_per_frame"] = rep.reload_seconds_per_frame;
  return d;
}

py::dict fit_activation(const std::string& name, double lo, double hi,
                        int budget, int grid) {
  std::function<double(double)> fn;
  if (name == "sigmoid")
    fn = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  else if (name == "tanh")
    fn = [](double x) { return std::tanh(x); };
  else if (name == "relu")
    fn = [](double x) { return x > 0 ? x : 0.0; };
  else
    throw std::runtime_error("unknown function: " + name);
  PwlFit fit = fit_pwl(fn, lo, hi, budget, grid);
  py::dict d;
  d["xs"] = fit.f.xs;
  d["ys"] = fit.f.ys;
  d["max_error"] = fit.max_error;
  return d;
}

}  // namespace

PYBIND11_MODULE(_semifreddo, m) {
  m.doc() = "SemifreddoNet: partially frozen CNN backbones with fixed-scaler "
            "int8 inference and a silicon cost model";

  m.def("describe", &describe, py::arg("spec_json") = "",
        py::arg("small") = false);
  m.def("validate", &validate, py::arg("spec_json"));
  m.def("default_spec_json",
        [] { return spec_to_json(default_spec()); });
  m.def("small_spec_json", [] { return spec_to_json(small_spec()); });
  m.def("topology_hash",
        [](const std::string& j) { return topology_hash(spec_from_json(j)); });
  m.def("train_synthetic", &train_synthetic, py::arg("spec_json") = "",
        py::arg("small") = true, py::arg("rho") = 0.0,
        py::arg("seed") = 1234, py::arg("epochs") = 2,
        py::arg("train_count") = 256, py::arg("test_count") = 128,
        py::arg("out_bundle") = "");
  m.def("eval_bundle", &eval_bundle, py::arg("path"),
        py::arg("test_count") = 128, py::arg("seed") = 9053);
  m.def("quantize_bundle", &quantize_bundle, py::arg("in_path"),
        py::arg("out_path"), py::arg("frames") = 4, py::arg("seed") = 1234);
  m.def("estimate_area", &area_of_bundle, py::arg("path"),
        py::arg("calibrate_to") = 0.0);
  m.def("estimate_fps", &fps, py::arg("spec_json") = "",
        py::arg("small") = false, py::arg("r") = 1, py::arg("width") = 640,
        py::arg("height") = 480);
  m.def("fit_activation", &fit_activation, py::arg("name"),
        py::arg("lo") = -8.0, py::arg("hi") = 8.0, py::arg("budget") = 16,
        py::arg("grid") = 4096);
}
