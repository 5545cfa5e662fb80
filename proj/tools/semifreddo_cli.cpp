// Command-line driver: topology inspection, freeze planning, training,
// quantization, inference and hardware estimation over weight bundles.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "semifreddo/bundle.hpp"
#include "semifreddo/hardware.hpp"
#include "semifreddo/train.hpp"

using nlohmann::json;
using namespace semifreddo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitContract = 4;

struct SpecOpts {
  std::string spec_path;
  bool small = false;
  int head_out = 10;
  int tail_repeat = 1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--spec", spec_path, "topology JSON file");
    cmd->add_flag("--small", small, "use the reduced 16/32/64 topology");
    cmd->add_option("--classes", head_out, "head output channels");
    cmd->add_option("--tail-repeat", tail_repeat, "hardware tail repetitions");
  }

  NetworkSpec resolve() const {
    NetworkSpec s;
    if (!spec_path.empty()) {
      std::ifstream f(spec_path);
      require(f.good(), "cannot open " + spec_path);
      std::string text((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
      s = spec_from_json(text);
    } else if (small) {
      s = small_spec({1, 32, 32}, head_out);
    } else {
      s = default_spec({3, 480, 640}, head_out);
    }
    s.tail_repeat = tail_repeat;
    auto v = validate_spec(s);
    if (!v.ok()) {
      std::string msg = "invalid spec:";
      for (const auto& x : v.violations) msg += "\n  " + x;
      throw std::runtime_error(msg);
    }
    return s;
  }
};

struct DataOpts {
  std::string images, labels;
  int synthetic = 0;
  int classes = 10;
  uint32_t seed = 1234;

  void attach(CLI::App* cmd) {
    cmd->add_option("--images", images, "IDX image file");
    cmd->add_option("--labels", labels, "IDX label file");
    cmd->add_option("--synthetic", synthetic,
                    "generate N synthetic grating images instead");
  }

  Dataset resolve(TensorShape shape) const {
    if (synthetic > 0) return make_synthetic(synthetic, classes, shape, seed);
    require(!images.empty() && !labels.empty(),
            "need --images/--labels or --synthetic");
    return load_idx(images, labels);
  }
};

FreezeScheme parse_scheme(const std::string& name, double rho,
                          double rho_first, double rho_last) {
  if (name == "uniform") return FreezeScheme::uniform((float)rho);
  if (name == "rampdown")
    return FreezeScheme::ramp_down((float)rho_first, (float)rho_last);
  if (name == "rampup")
    return FreezeScheme::ramp_up((float)rho_first, (float)rho_last);
  if (name == "core") return FreezeScheme::core_partition();
  throw std::runtime_error("unknown scheme: " + name);
}

json describe_json(const NetworkSpec& spec) {
  Program prog = build_program(spec);
  ParamPartition pp = count_params(spec);
  FreezePlan plan = make_freeze_plan(prog, FreezeScheme::core_partition(), 0);
  json j;
  j["spec"] = json::parse(spec_to_json(spec));
  j["topology_hash"] = topology_hash(spec);
  j["params"] = {{"frozen_conv", pp.frozen_conv},
                 {"trainable_conv_per_core", pp.trainable_conv_per_core},
                 {"alpha", pp.alpha},
                 {"frozen_core_bn_affine", pp.frozen_core_bn_affine},
                 {"trainable_bn", pp.trainable_bn},
                 {"head", pp.head},
                 {"total", pp.total()}};
  j["effective_ratio_single_core"] =
      effective_ratio(plan, prog, {true, true, false});
  j["effective_ratio_two_cores"] =
      effective_ratio(plan, prog, {true, true, true});
  auto shapes = infer_shapes(spec);
  json& edges = j["shapes"] = json::object();
  for (const auto& [name, sh] : shapes) edges[name] = sh.str();
  return j;
}

double train_and_report(const NetworkSpec& spec, const FreezePlan& plan,
                        Program& prog, ModelState& state, const Dataset& train,
                        const Dataset* test, int epochs,
                        const OptimizerConfig& cfg, uint32_t seed,
                        bool quiet = false) {
  MomentumBuffers mom = init_momentum(prog);
  RejuvenationPolicy policy;
  double acc = 0.0;
  for (int e = 0; e < epochs; ++e) {
    EpochMetrics m =
        train_epoch(prog, state, plan, train, cfg, policy, mom, seed + e);
    json line = {{"epoch", e},
                 {"loss", m.loss},
                 {"train_accuracy", m.accuracy},
                 {"rejuvenated", m.rejuvenation.count()}};
    if (test) {
      acc = evaluate(prog, state, *test);
      line["test_accuracy"] = acc;
    } else {
      acc = m.accuracy;
    }
    if (!quiet) std::cout << line.dump() << "\n";
  }
  return acc;
}

std::vector<Tensor> calibration_slices(const Dataset& d, int n) {
  std::vector<Tensor> out;
  for (int i = 0; i < std::min(n, d.count()); ++i)
    out.push_back(d.slice({i}).images);
  return out;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"SemifreddoNet toolkit: partially frozen CNN backbones with "
               "fixed-scaler inference and a silicon cost model"};
  app.require_subcommand(1);
  uint32_t seed = 1234;
  app.add_option("--seed", seed, "global RNG seed")->capture_default_str();

  // describe ---------------------------------------------------------------
  auto* c_desc = app.add_subcommand("describe", "spec summary, parameter "
                                                "partition, effective ratios");
  SpecOpts d_spec;
  d_spec.attach(c_desc);

  // plan-freeze ------------------------------------------------------------
  auto* c_plan = app.add_subcommand("plan-freeze",
                                    "attach a freeze plan to a bundle");
  SpecOpts p_spec;
  p_spec.attach(c_plan);
  std::string p_out, p_scheme = "core";
  double p_rho = 0.5, p_rho_first = 0.9, p_rho_last = 0.1;
  c_plan->add_option("--out", p_out, "output bundle")->required();
  c_plan->add_option("--scheme", p_scheme,
                     "uniform | rampdown | rampup | core");
  c_plan->add_option("--rho", p_rho, "uniform freeze ratio");
  c_plan->add_option("--rho-first", p_rho_first, "ramp ratio, first layer");
  c_plan->add_option("--rho-last", p_rho_last, "ramp ratio, last layer");

  // train ------------------------------------------------------------------
  auto* c_train = app.add_subcommand("train", "SGD with masked updates; "
                                              "JSONL metrics on stdout");
  SpecOpts t_spec;
  t_spec.attach(c_train);
  DataOpts t_data, t_test;
  t_data.attach(c_train);
  c_train->add_option("--test-images", t_test.images, "IDX test images");
  c_train->add_option("--test-labels", t_test.labels, "IDX test labels");
  c_train->add_option("--test-synthetic", t_test.synthetic,
                      "synthetic test set size");
  std::string t_in, t_out;
  int t_epochs = 5;
  OptimizerConfig t_cfg;
  std::string t_scheme = "core";
  double t_rho = 0.5, t_rho_first = 0.9, t_rho_last = 0.1;
  c_train->add_option("--bundle", t_in, "resume from this bundle");
  c_train->add_option("--out", t_out, "checkpoint bundle")->required();
  c_train->add_option("--epochs", t_epochs)->capture_default_str();
  c_train->add_option("--lr", t_cfg.lr)->capture_default_str();
  c_train->add_option("--momentum", t_cfg.momentum)->capture_default_str();
  c_train->add_option("--batch-size", t_cfg.batch_size)->capture_default_str();
  c_train->add_option("--scheme", t_scheme, "freeze scheme if no bundle plan");
  c_train->add_option("--rho", t_rho);
  c_train->add_option("--rho-first", t_rho_first);
  c_train->add_option("--rho-last", t_rho_last);

  // eval -------------------------------------------------------------------
  auto* c_eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint");
  std::string e_bundle;
  DataOpts e_data;
  c_eval->add_option("--bundle", e_bundle)->required();
  e_data.attach(c_eval);

  // quantize ---------------------------------------------------------------
  auto* c_quant = app.add_subcommand("quantize",
                                     "build the fixed-point graph");
  std::string q_bundle, q_out;
  DataOpts q_data;
  int q_calib = 8;
  c_quant->add_option("--bundle", q_bundle)->required();
  c_quant->add_option("--out", q_out)->required();
  q_data.attach(c_quant);
  c_quant->add_option("--calibration-frames", q_calib)->capture_default_str();

  // infer ------------------------------------------------------------------
  auto* c_infer = app.add_subcommand("infer", "run inputs through the "
                                              "quantized graph");
  std::string i_bundle;
  DataOpts i_data;
  int i_count = 1;
  bool i_float = false;
  c_infer->add_option("--bundle", i_bundle)->required();
  i_data.attach(c_infer);
  c_infer->add_option("--count", i_count, "number of inputs")
      ->capture_default_str();
  c_infer->add_flag("--float", i_float, "use the float engine instead");

  // estimate-area ----------------------------------------------------------
  auto* c_area = app.add_subcommand("estimate-area", "silicon area report");
  std::string a_bundle, a_csv;
  double a_target = 4.0;
  bool a_raw = false;
  c_area->add_option("--bundle", a_bundle, "bundle with a quantized graph")
      ->required();
  c_area->add_option("--csv", a_csv, "also write per-layer rows to this file");
  c_area->add_option("--calibrate-to", a_target)->capture_default_str();
  c_area->add_flag("--no-calibration", a_raw, "report with raw unit costs");

  // estimate-fps -----------------------------------------------------------
  auto* c_fps = app.add_subcommand("estimate-fps", "throughput model");
  SpecOpts f_spec;
  f_spec.attach(c_fps);
  int f_r = 1, f_w = 640, f_h = 480, f_sweep = 0;
  std::string f_csv;
  c_fps->add_option("--repeat", f_r)->capture_default_str();
  c_fps->add_option("--width", f_w)->capture_default_str();
  c_fps->add_option("--height", f_h)->capture_default_str();
  c_fps->add_option("--sweep", f_sweep, "report r = 1..N as CSV");
  c_fps->add_option("--csv", f_csv, "write the sweep to this file");

  // sweep-freeze -----------------------------------------------------------
  auto* c_sweep = app.add_subcommand(
      "sweep-freeze", "train/quantize across freeze ratios; CSV on stdout");
  SpecOpts s_spec;
  s_spec.small = true;
  DataOpts s_data;
  s_data.attach(c_sweep);
  c_sweep->add_option("--classes", s_spec.head_out);
  int s_epochs = 3, s_test = 400;
  c_sweep->add_option("--epochs", s_epochs)->capture_default_str();
  c_sweep->add_option("--test-synthetic", s_test)->capture_default_str();

  // fit-activation ---------------------------------------------------------
  auto* c_fit = app.add_subcommand("fit-activation",
                                   "piecewise-linear activation table");
  std::string fa_fn = "sigmoid", fa_csv;
  double fa_lo = -8.0, fa_hi = 8.0;
  int fa_budget = 16, fa_grid = 4096;
  c_fit->add_option("--function", fa_fn, "sigmoid | tanh | relu | softplus")
      ->capture_default_str();
  c_fit->add_option("--lo", fa_lo)->capture_default_str();
  c_fit->add_option("--hi", fa_hi)->capture_default_str();
  c_fit->add_option("--budget", fa_budget)->capture_default_str();
  c_fit->add_option("--grid", fa_grid)->capture_default_str();
  c_fit->add_option("--csv", fa_csv, "write table to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  if (c_desc->parsed()) {
    std::cout << describe_json(d_spec.resolve()).dump(2) << "\n";
    return kExitOk;
  }

  if (c_plan->parsed()) {
    WeightBundle b;
    b.spec = p_spec.resolve();
    Program prog = build_program(b.spec);
    b.state = init_state(prog, seed);
    b.plan = make_freeze_plan(
        prog, parse_scheme(p_scheme, p_rho, p_rho_first, p_rho_last), seed);
    b.metrics["plan"] = json::parse(plan_summary_json(*b.plan, prog));
    save_bundle(p_out, b);
    std::cout << plan_summary_json(*b.plan, prog) << "\n";
    return kExitOk;
  }

  if (c_train->parsed()) {
    WeightBundle b;
    Program prog;
    if (!t_in.empty()) {
      b = load_bundle(t_in);
      prog = build_program(b.spec);
      require(b.state.has_value(), "bundle has no weights");
    } else {
      b.spec = t_spec.resolve();
      prog = build_program(b.spec);
      b.state = init_state(prog, seed);
    }
    if (!b.plan) {
      b.plan = make_freeze_plan(
          prog, parse_scheme(t_scheme, t_rho, t_rho_first, t_rho_last), seed);
    }
    t_data.seed = seed;
    t_test.seed = seed + 7919;
    Dataset train = t_data.resolve(prog.spec.input);
    std::optional<Dataset> test;
    if (!t_test.images.empty() || t_test.synthetic > 0)
      test = t_test.resolve(prog.spec.input);
    double acc =
        train_and_report(b.spec, *b.plan, prog, *b.state, train,
                         test ? &*test : nullptr, t_epochs, t_cfg, seed);
    b.metrics["final_accuracy"] = acc;
    b.metrics["epochs"] = t_epochs;
    b.metrics["seed"] = seed;
    save_bundle(t_out, b);
    return kExitOk;
  }

  if (c_eval->parsed()) {
    WeightBundle b = load_bundle(e_bundle);
    require(b.state.has_value(), "bundle has no weights");
    Program prog = build_program(b.spec);
    e_data.seed = seed + 7919;
    Dataset data = e_data.resolve(prog.spec.input);
    double acc = evaluate(prog, *b.state, data);
    std::cout << json{{"count", data.count()}, {"accuracy", acc}}.dump()
              << "\n";
    return kExitOk;
  }

  if (c_quant->parsed()) {
    WeightBundle b = load_bundle(q_bundle);
    require(b.state.has_value(), "bundle has no weights");
    Program prog = build_program(b.spec);
    if (!b.plan) b.plan = make_freeze_plan(prog, FreezeScheme::core_partition(), seed);
    q_data.seed = seed;
    Dataset data = q_data.resolve(prog.spec.input);
    b.qgraph = build_qgraph(prog, *b.state, *b.plan,
                            calibration_slices(data, q_calib));
    save_bundle(q_out, b);
    long long scalers = 0, trainable = 0;
    for (const auto& l : b.qgraph->convs) {
      scalers += l.scaler_count();
      trainable += l.trainable_count();
    }
    std::cout << json{{"convs", b.qgraph->convs.size()},
                      {"frozen_scalers", scalers},
                      {"trainable_weights", trainable}}
                     .dump()
              << "\n";
    return kExitOk;
  }

  if (c_infer->parsed()) {
    WeightBundle b = load_bundle(i_bundle);
    Program prog = build_program(b.spec);
    i_data.seed = seed + 104729;
    Dataset data = i_data.resolve(prog.spec.input);
    for (int i = 0; i < std::min(i_count, data.count()); ++i) {
      Tensor x = data.slice({i}).images;
      json line;
      line["index"] = i;
      if (i_float || !b.qgraph) {
        require(b.state.has_value(), "bundle has no weights");
        ForwardResult f = forward_pass(prog, *b.state, x, Mode::Eval);
        const Tensor& out = f.head();
        std::vector<float> logits(out.v.begin(), out.v.end());
        line["engine"] = "float";
        line["logits"] = logits;
        line["top1"] =
            (int)(std::max_element(logits.begin(), logits.end()) -
                  logits.begin());
      } else {
        QForwardResult qf =
            quantized_forward(prog, *b.qgraph, quantize_input(x, *b.qgraph, prog));
        std::vector<float> logits;
        for (int8_t q : qf.out.q)
          logits.push_back(dequantize_value(q, qf.out.params));
        line["engine"] = "int8";
        line["logits"] = logits;
        line["top1"] = (int)(std::max_element(qf.head_acc.begin(),
                                              qf.head_acc.end()) -
                             qf.head_acc.begin());
      }
      std::cout << line.dump() << "\n";
    }
    return kExitOk;
  }

  if (c_area->parsed()) {
    WeightBundle b = load_bundle(a_bundle);
    require(b.qgraph.has_value(), "bundle has no quantized graph");
    Program prog = build_program(b.spec);
    CostParams params;
    if (!a_raw)
      params = calibrate_cost_params(*b.qgraph, prog, params, a_target);
    AreaReport rep = estimate_area(*b.qgraph, prog, params);
    json j = area_report_to_json(rep);
    BaselineComparison cmp = compare_baseline(rep, params);
    j["baseline"] = {{"area_mm2", params.baseline.area_mm2},
                     {"utilization", params.baseline.utilization},
                     {"area_reduction", cmp.area_reduction},
                     {"effective_throughput_ratio",
                      cmp.effective_throughput_ratio}};
    if (!a_csv.empty()) {
      std::ofstream f(a_csv);
      f << area_report_csv(rep);
    }
    std::cout << j.dump(2) << "\n";
    return kExitOk;
  }

  if (c_fps->parsed()) {
    NetworkSpec spec = f_spec.resolve();
    CostParams params;
    if (f_sweep > 0) {
      std::vector<ThroughputReport> rs;
      for (int r = 1; r <= f_sweep; ++r)
        rs.push_back(estimate_fps(spec, r, f_w, f_h, params));
      std::string csv = fps_sweep_csv(rs);
      if (!f_csv.empty()) std::ofstream(f_csv) << csv;
      std::cout << csv;
    } else {
      ThroughputReport rep = estimate_fps(spec, f_r, f_w, f_h, params);
      std::cout << throughput_report_to_json(rep).dump(2) << "\n";
    }
    return kExitOk;
  }

  if (c_sweep->parsed()) {
    NetworkSpec spec = s_spec.resolve();
    if (s_data.synthetic == 0) s_data.synthetic = 1200;
    s_data.classes = spec.head.out_channels;
    s_data.seed = seed;
    Dataset train = s_data.resolve(spec.input);
    Dataset test =
        make_synthetic(s_test, spec.head.out_channels, spec.input, seed + 7919);
    OptimizerConfig cfg;
    std::cout << "ratio,accuracy,total_mm2\n";
    for (double rho : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      Program prog = build_program(spec);
      ModelState state = init_state(prog, seed);
      FreezePlan plan =
          make_freeze_plan(prog, FreezeScheme::uniform((float)rho), seed);
      double acc = train_and_report(spec, plan, prog, state, train, &test,
                                    s_epochs, cfg, seed, /*quiet=*/true);
      QGraph qg =
          build_qgraph(prog, state, plan, calibration_slices(test, 4));
      CostParams params;
      AreaReport rep = estimate_area(qg, prog, params);
      std::cout << rho << ',' << acc << ',' << rep.total_mm2 << "\n";
    }
    return kExitOk;
  }

  if (c_fit->parsed()) {
    std::function<double(double)> fn;
    if (fa_fn == "sigmoid")
      fn = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    else if (fa_fn == "tanh")
      fn = [](double x) { return std::tanh(x); };
    else if (fa_fn == "relu")
      fn = [](double x) { return x > 0 ? x : 0; };
    else if (fa_fn == "softplus")
      fn = [](double x) { return std::log1p(std::exp(x)); };
    else
      throw std::runtime_error("unknown function: " + fa_fn);
    PwlFit fit = fit_pwl(fn, fa_lo, fa_hi, fa_budget, fa_grid);
    std::ostringstream csv;
    csv << "breakpoint,slope,intercept\n";
    for (int s = 0; s < fit.f.segments(); ++s)
      csv << fit.f.xs[s] << ',' << fit.f.slope(s) << ',' << fit.f.intercept(s)
          << "\n";
    if (!fa_csv.empty()) std::ofstream(fa_csv) << csv.str();
    std::cout << csv.str();
    std::cout << json{{"segments", fit.f.segments()},
                      {"max_error", fit.max_error}}
                     .dump()
              << "\n";
    return kExitOk;
  }

  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::string msg = e.what();
    bool contract = msg.find("topology mismatch") != std::string::npos ||
                    msg.find("overflow") != std::string::npos ||
                    msg.find("unquantizable") != std::string::npos ||
                    msg.find("invalid spec") != std::string::npos;
    return contract ? kExitContract : kExitData;
  }
}
