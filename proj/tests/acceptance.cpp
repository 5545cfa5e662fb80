// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Runs everything at desk scale on a single CPU.

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "semifreddo/bundle.hpp"
#include "semifreddo/hardware.hpp"
#include "semifreddo/train.hpp"

using namespace semifreddo;

namespace {

int g_failures = 0;

void report(int n, const std::string& what, bool pass,
            const std::string& detail = "") {
  std::printf("%s criterion %d: %s%s%s\n", pass ? "PASS" : "FAIL", n,
              what.c_str(), detail.empty() ? "" : " — ", detail.c_str());
  if (!pass) ++g_failures;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

using DT = TensorT<double>;

template <typename T>
void fill(std::vector<T>& v, std::mt19937& g, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& x : v) x = (T)d(g);
}

// --- criterion 1: finite-difference oracle over all primitives ------------

double probe_sum(const DT& y, const std::vector<double>& coeff) {
  double s = 0;
  for (size_t i = 0; i < y.v.size(); ++i) s += coeff[i] * y.v[i];
  return s;
}

double max_rel_err(std::vector<double>& params,
                   const std::vector<double>& analytic,
                   const std::function<double()>& loss) {
  double h = 1e-6, worst = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    double keep = params[i];
    params[i] = keep + h;
    double up = loss();
    params[i] = keep - h;
    double dn = loss();
    params[i] = keep;
    double fd = (up - dn) / (2 * h);
    double denom = std::max({std::fabs(fd), std::fabs(analytic[i]), 1e-3});
    worst = std::max(worst, std::fabs(fd - analytic[i]) / denom);
  }
  return worst;
}

void criterion1() {
  std::mt19937 g(101);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    // alpha blend
    {
      DT xf(1, 3, 3, 3), xt(1, 3, 3, 3);
      std::vector<double> w(3), coeff(xf.v.size());
      fill(xf.v, g);
      fill(xt.v, g);
      fill(w, g, -2, 2);
      fill(coeff, g);
      DT y = nn::alpha_blend(xf, xt, w);
      DT dy = y;
      dy.v = coeff;
      DT dxf(1, 3, 3, 3), dxt(1, 3, 3, 3);
      std::vector<double> dw(3, 0);
      nn::alpha_blend_backward(xf, xt, w, dy, dxf, dxt, dw);
      auto loss = [&] { return probe_sum(nn::alpha_blend(xf, xt, w), coeff); };
      worst = std::max(worst, max_rel_err(w, dw, loss));
      worst = std::max(worst, max_rel_err(xf.v, dxf.v, loss));
    }
    // depthwise
    {
      int stride = 1 + (trial & 1);
      DT x(1, 2, 4, 4);
      std::vector<double> k(18);
      fill(x.v, g);
      fill(k, g);
      DT y = nn::depthwise_conv3x3(x, k, stride);
      std::vector<double> coeff(y.v.size());
      fill(coeff, g);
      DT dy = y;
      dy.v = coeff;
      DT dx(1, 2, 4, 4);
      std::vector<double> dk(18, 0);
      nn::depthwise_conv3x3_backward(x, k, stride, dy, dx, dk);
      auto loss = [&] {
        return probe_sum(nn::depthwise_conv3x3(x, k, stride), coeff);
      };
      worst = std::max(worst, max_rel_err(k, dk, loss));
      worst = std::max(worst, max_rel_err(x.v, dx.v, loss));
    }
    // grouped pointwise
    {
      int groups = (trial % 2) ? 2 : 1;
      DT x(1, 4, 3, 3);
      std::vector<double> W(4 * (4 / groups));
      fill(x.v, g);
      fill(W, g);
      DT y = nn::pointwise_conv(x, W, 4, groups, (const std::vector<double>*)nullptr);
      std::vector<double> coeff(y.v.size());
      fill(coeff, g);
      DT dy = y;
      dy.v = coeff;
      DT dx(1, 4, 3, 3);
      std::vector<double> dW(W.size(), 0);
      nn::pointwise_conv_backward(x, W, 4, groups, dy, dx, dW, (std::vector<double>*)nullptr);
      auto loss = [&] {
        return probe_sum(nn::pointwise_conv(x, W, 4, groups, (const std::vector<double>*)nullptr), coeff);
      };
      worst = std::max(worst, max_rel_err(W, dW, loss));
      worst = std::max(worst, max_rel_err(x.v, dx.v, loss));
    }
    // batch norm, train mode
    {
      DT x(2, 3, 3, 3);
      std::vector<double> gamma(3), beta(3);
      fill(x.v, g);
      fill(gamma, g, 0.5, 1.5);
      fill(beta, g);
      auto fwd = [&] {
        std::vector<double> mm(3, 0), mv(3, 1);
        nn::BnSaved<double> saved;
        return nn::batch_norm_train(x, gamma, beta, mm, mv, saved, false);
      };
      DT y = fwd();
      std::vector<double> coeff(y.v.size());
      fill(coeff, g);
      std::vector<double> mm(3, 0), mv(3, 1);
      nn::BnSaved<double> saved;
      nn::batch_norm_train(x, gamma, beta, mm, mv, saved, false);
      DT dy = y;
      dy.v = coeff;
      DT dx(2, 3, 3, 3);
      std::vector<double> dgamma(3, 0), dbeta(3, 0);
      nn::batch_norm_train_backward(x, gamma, saved, dy, dx, dgamma, dbeta);
      auto loss = [&] { return probe_sum(fwd(), coeff); };
      worst = std::max(worst, max_rel_err(gamma, dgamma, loss));
      worst = std::max(worst, max_rel_err(x.v, dx.v, loss));
    }
    // relu
    {
      DT x(1, 4, 3, 3);
      fill(x.v, g);
      DT y = nn::relu(x);
      std::vector<double> coeff(y.v.size());
      fill(coeff, g);
      DT dy = y;
      dy.v = coeff;
      DT dx(1, 4, 3, 3);
      nn::relu_backward(x, dy, dx);
      // skip entries near the kink, where FD is undefined
      double h = 1e-6, w2 = 0;
      for (size_t i = 0; i < x.v.size(); ++i) {
        if (std::fabs(x.v[i]) < 10 * h) continue;
        double keep = x.v[i];
        x.v[i] = keep + h;
        double up = probe_sum(nn::relu(x), coeff);
        x.v[i] = keep - h;
        double dn = probe_sum(nn::relu(x), coeff);
        x.v[i] = keep;
        double fd = (up - dn) / (2 * h);
        double denom = std::max({std::fabs(fd), std::fabs(dx.v[i]), 1e-3});
        w2 = std::max(w2, std::fabs(fd - dx.v[i]) / denom);
      }
      worst = std::max(worst, w2);
    }
    // softmax cross entropy
    {
      DT logits(3, 5, 1, 1);
      fill(logits.v, g, -3, 3);
      std::vector<int> labels = {(int)(g() % 5), (int)(g() % 5),
                                 (int)(g() % 5)};
      DT dlogits;
      nn::softmax_cross_entropy(logits, labels, dlogits);
      auto loss = [&] {
        DT scratch;
        return nn::softmax_cross_entropy(logits, labels, scratch);
      };
      worst = std::max(worst, max_rel_err(logits.v, dlogits.v, loss));
    }
  }
  report(1, "gradient suite vs central finite differences", worst <= 1e-4,
         "max relative error " + fmt(worst));
}

// --- criterion 2: masked SGD leaves frozen entries bit-identical ----------

void criterion2() {
  NetworkSpec spec = small_spec({1, 16, 16}, 4, 1);
  Program prog = build_program(spec);
  bool pass = true;
  for (FreezeScheme scheme :
       {FreezeScheme::core_partition(), FreezeScheme::uniform(0.5f)}) {
    ModelState s = init_state(prog, 202);
    MomentumBuffers mom = init_momentum(prog);
    FreezePlan plan = make_freeze_plan(prog, scheme, 202);
    Rng rng(203);
    Tensor batch(4, spec.input.channels, spec.input.height, spec.input.width);
    for (auto& v : batch.v) v = rng.uniform();
    std::vector<int> labels = {0, 1, 2, 3};

    ModelState before = s;
    OptimizerConfig cfg;
    cfg.lr = 0.05f;
    for (int step = 0; step < 200; ++step) {
      ForwardResult f = forward_pass(prog, s, batch, Mode::Train);
      Tensor dlogits;
      nn::softmax_cross_entropy(f.head(), labels, dlogits);
      GradientSet grads = backward_pass(prog, s, f, dlogits);
      mask_gradients(grads, plan);
      sgd_step_masked(prog, s, grads, plan.masks, cfg, mom);
    }
    for (size_t t = 0; t < plan.masks.size() && pass; ++t)
      for (size_t i = 0; i < plan.masks[t].size(); ++i)
        if (plan.masks[t][i] &&
            std::bit_cast<uint32_t>(s.tensors[t][i]) !=
                std::bit_cast<uint32_t>(before.tensors[t][i])) {
          pass = false;
          break;
        }
  }
  report(2, "200 masked SGD steps leave frozen entries bit-identical", pass);
}

// --- criterion 3: effective freezing ratio anchor -------------------------

void criterion3() {
  Program prog = build_program(default_spec());
  FreezePlan plan = make_freeze_plan(prog, FreezeScheme::core_partition(), 0);
  double single = effective_ratio(plan, prog, {true, true, false});
  double both = effective_ratio(plan, prog, {true, true, true});
  report(3, "single-core effective freezing ratio in 0.77 +/- 0.05",
         std::fabs(single - 0.77) <= 0.05,
         "single-core " + fmt(single) + ", two-core " + fmt(both) +
             " (reported, not asserted)");
}

// --- criterion 4: freeze-ratio accuracy trend ------------------------------

double run_training(const NetworkSpec& spec, float rho, uint32_t seed,
                    const Dataset& train, const Dataset& test, int epochs,
                    ModelState* out_state = nullptr,
                    FreezePlan* out_plan = nullptr) {
  Program prog = build_program(spec);
  ModelState s = init_state(prog, seed);
  FreezePlan plan = make_freeze_plan(prog, FreezeScheme::uniform(rho), seed);
  MomentumBuffers mom = init_momentum(prog);
  OptimizerConfig cfg;
  RejuvenationPolicy policy;
  for (int e = 0; e < epochs; ++e)
    train_epoch(prog, s, plan, train, cfg, policy, mom, seed + 1000 * e);
  double acc = evaluate(prog, s, test);
  if (out_state) *out_state = std::move(s);
  if (out_plan) *out_plan = std::move(plan);
  return acc;
}

void criterion4() {
  NetworkSpec spec = small_spec({1, 32, 32}, 10);
  Dataset train = make_synthetic(2000, 10, spec.input, 404);
  Dataset test = make_synthetic(400, 10, spec.input, 405);
  const float rhos[4] = {0.0f, 0.5f, 0.75f, 1.0f};
  double mean[4] = {0, 0, 0, 0};
  std::ostringstream detail;
  for (int r = 0; r < 4; ++r) {
    for (uint32_t seed : {11u, 22u, 33u})
      mean[r] += run_training(spec, rhos[r], seed, train, test, 5);
    mean[r] = 100.0 * mean[r] / 3.0;  // percent
    detail << (r ? " " : "") << "rho=" << rhos[r] << ":" << fmt(mean[r]);
  }
  bool margin = mean[0] >= mean[3] + 3.0;
  bool monotone = true;
  for (int r = 1; r < 4; ++r) monotone &= mean[r] <= mean[r - 1] + 1.0;
  report(4, "accuracy falls with freeze ratio (3-seed means, desk scale)",
         margin && monotone, detail.str());
}

// --- criterion 5: rejuvenation of a dead channel ---------------------------

void criterion5() {
  NetworkSpec spec = small_spec({1, 16, 16}, 4, 1);
  Program prog = build_program(spec);
  ModelState s = init_state(prog, 505);
  FreezePlan plan = make_freeze_plan(prog, FreezeScheme::core_partition(), 505);
  MomentumBuffers mom = init_momentum(prog);
  Dataset train = make_synthetic(256, 4, spec.input, 506);
  OptimizerConfig cfg;
  RejuvenationPolicy policy;

  // settle the moving stats, no rejuvenation expected yet
  RejuvenationPolicy off;
  off.enabled = false;
  train_epoch(prog, s, plan, train, cfg, off, mom, 1);

  // kill one trainable channel: zero the producing conv row and the stats
  int bn_node = -1;
  for (size_t id = 0; id < prog.nodes.size(); ++id)
    if (prog.nodes[id].op == Op::BatchNorm &&
        prog.nodes[id].core == Core::Trainable1) {
      bn_node = (int)id;
      break;
    }
  const Node& bn = prog.nodes[bn_node];
  const Node& conv = prog.nodes[bn.in0];
  int victim = 0;
  float detection_var = 1e-9f;
  s.tensors[bn.p3][victim] = detection_var;
  // depthwise producer: row = 9 kernel taps
  for (int i = 0; i < 9; ++i) s.tensors[conv.p0][(size_t)victim * 9 + i] = 0;

  Rng rrng(507);
  RejuvenationReport rep =
      rejuvenate(prog, s, plan, policy, rrng, &mom);
  bool found = false, only_dead = true;
  for (const auto& ev : rep.events) {
    if (ev.layer == bn.name && ev.channel == victim) found = true;
    // every reported channel had to be below its layer threshold
    only_dead &= ev.moving_var < 1.0f;
  }

  // one more epoch: the channel must come back to life
  train_epoch(prog, s, plan, train, cfg, off, mom, 2);
  float revived_var = s.tensors[bn.p3][victim];
  report(5, "dead channel is reported and revives after one epoch",
         found && only_dead && rep.count() >= 1 && revived_var > detection_var,
         "events " + std::to_string(rep.count()) + ", revived var " +
             fmt(revived_var));
}

// --- criterion 6: cross-core shuffle routes gradients ----------------------

bool core2_grads(const NetworkSpec& spec, bool* any_nonzero) {
  Program prog = build_program(spec);
  ModelState s = init_state(prog, 606);
  // push all blends toward the trainable stream so gradients must flow
  for (size_t t = 0; t < prog.params.size(); ++t)
    if (prog.params[t].kind == ParamKind::Alpha)
      for (auto& v : s.tensors[t]) v = -20.0f;  // sigmoid ~ 0
  Rng rng(607);
  Tensor batch(2, spec.input.channels, spec.input.height, spec.input.width);
  for (auto& v : batch.v) v = rng.uniform();
  ForwardResult f = forward_pass(prog, s, batch, Mode::Train);
  Tensor dlogits;
  nn::softmax_cross_entropy(f.head(), {0, 1}, dlogits);
  GradientSet grads = backward_pass(prog, s, f, dlogits);

  *any_nonzero = false;
  for (size_t t = 0; t < prog.params.size(); ++t) {
    if (prog.params[t].core != Core::Trainable2 || prog.params[t].head)
      continue;
    for (float v : grads.g[t])
      if (v != 0.0f) {
        *any_nonzero = true;
        return true;
      }
  }
  return true;
}

void criterion6() {
  NetworkSpec with = small_spec({1, 16, 16}, 4, 1);
  NetworkSpec without = with;
  for (auto& m : without.modules) m.cross_shuffle = false;

  bool t2_with = false, t2_without = false;
  core2_grads(with, &t2_with);
  core2_grads(without, &t2_without);
  report(6, "core-2 gradients: nonzero with shuffle, exactly zero without",
         t2_with && !t2_without);
}

// --- criterion 7: quantization fidelity ------------------------------------

void criterion7() {
  // round trip property, 10^6 samples
  std::mt19937 g(707);
  std::uniform_real_distribution<float> d(-40.0f, 40.0f);
  std::vector<float> xs(1000000);
  for (auto& x : xs) x = d(g);
  QuantParams p = calibrate_tensor(xs);
  double half = std::ldexp(0.5, p.exponent);
  bool roundtrip = true;
  for (float x : xs)
    if (std::fabs(dequantize_value(quantize_value(x, p), p) - x) > half) {
      roundtrip = false;
      break;
    }

  // CSD identity + minimality for all 255 values
  std::function<int(int)> min_digits = [&](int n) -> int {
    if (n == 0) return 0;
    if (n == 1) return 1;
    if (n % 2 == 0) return min_digits(n / 2);
    return 1 + std::min(min_digits((n - 1) / 2), min_digits((n + 1) / 2));
  };
  bool csd_ok = true;
  for (int q = -127; q <= 127; ++q) {
    CsdCode c = encode_csd(q);
    csd_ok &= decode_csd(c) == q;
    csd_ok &= c.nonzeros() == min_digits(std::abs(q));
    for (int64_t x : {-9LL, 1LL, 255LL}) csd_ok &= csd_multiply(x, c) == x * q;
  }

  // top-1 agreement on a freshly trained desk checkpoint
  NetworkSpec spec = small_spec({1, 32, 32}, 10);
  Dataset train = make_synthetic(1200, 10, spec.input, 708);
  Dataset test = make_synthetic(200, 10, spec.input, 709);
  ModelState state;
  FreezePlan plan;
  run_training(spec, 0.5f, 71, train, test, 8, &state, &plan);
  Program prog = build_program(spec);
  std::vector<Tensor> calib;
  for (int i = 0; i < 16; ++i) calib.push_back(test.slice({i}).images);
  QGraph qg = build_qgraph(prog, state, plan, calib);

  int agree = 0;
  for (int i = 0; i < test.count(); ++i) {
    Tensor x = test.slice({i}).images;
    ForwardResult f = forward_pass(prog, state, x, Mode::Eval);
    const Tensor& logits = f.head();
    int ftop = 0;
    for (int k = 1; k < logits.c; ++k)
      if (logits.v[k] > logits.v[ftop]) ftop = k;
    QForwardResult qf =
        quantized_forward(prog, qg, quantize_input(x, qg, prog));
    int qtop = 0;
    for (size_t k = 1; k < qf.head_acc.size(); ++k)
      if (qf.head_acc[k] > qf.head_acc[qtop]) qtop = (int)k;
    agree += ftop == qtop;
  }
  double rate = 100.0 * agree / test.count();
  report(7, "quantization: round trip, CSD oracle, >=95% top-1 agreement",
         roundtrip && csd_ok && rate >= 95.0,
         "agreement " + fmt(rate) + "%");
}

// --- criterion 8: PWL anchors ----------------------------------------------

void criterion8() {
  auto relu = fit_pwl([](double x) { return x > 0 ? x : 0.0; }, -4.0, 4.0, 2,
                      4097);
  auto sigm = fit_pwl([](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                      -8.0, 8.0, 16, 4096);
  report(8, "PWL: exact ReLU with 2 segments, sigmoid 16-segment error <= 0.01",
         relu.max_error == 0.0 && sigm.max_error <= 0.01,
         "relu " + fmt(relu.max_error) + ", sigmoid " + fmt(sigm.max_error));
}

// --- criterion 9: streaming pool equals batch pooling ----------------------

void criterion9() {
  std::mt19937 g(909);
  bool pass = true;
  // integer-valued frames: exact
  {
    Tensor x(1, 3, 64, 64);
    std::uniform_int_distribution<int> d(-100, 100);
    for (auto& v : x.v) v = (float)d(g);
    StreamingPool pool(3, 64, 64);
    std::vector<float> row(3 * 64);
    for (int y = 0; y < 64; ++y) {
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 64; ++i) row[c * 64 + i] = x.at(0, c, y, i);
      pool.push_row(row.data());
    }
    auto mean = pool.finalize();
    Tensor ref = nn::global_avg_pool(x);
    for (int c = 0; c < 3; ++c) pass &= mean[c] == ref.at(0, c, 0, 0);
  }
  // random 256x256 frames: within 1 ulp
  {
    Tensor x(1, 2, 256, 256);
    std::uniform_real_distribution<float> d(-1, 1);
    for (auto& v : x.v) v = d(g);
    StreamingPool pool(2, 256, 256);
    std::vector<float> row(2 * 256);
    for (int y = 0; y < 256; ++y) {
      for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 256; ++i) row[c * 256 + i] = x.at(0, c, y, i);
      pool.push_row(row.data());
    }
    auto mean = pool.finalize();
    Tensor ref = nn::global_avg_pool(x);
    for (int c = 0; c < 2; ++c) {
      float r = ref.at(0, c, 0, 0);
      pass &= mean[c] >= std::nextafter(r, -1e30f) &&
              mean[c] <= std::nextafter(r, 1e30f);
    }
  }
  report(9, "streaming pool: exact on integers, 1 ulp on random frames", pass);
}

// --- criterion 10: hardware anchors ----------------------------------------

void criterion10() {
  NetworkSpec spec = default_spec();
  Program prog = build_program(spec);
  ModelState state = init_state(prog, 1010);
  FreezePlan plan = make_freeze_plan(prog, FreezeScheme::core_partition(), 0);
  Dataset frames = make_synthetic(1, 10, spec.input, 1011);
  QGraph qg = build_qgraph(prog, state, plan, {frames.slice({0}).images});

  CostParams params;
  params = calibrate_cost_params(qg, prog, params, 4.0);
  AreaReport area = estimate_area(qg, prog, params);
  bool area_ok = std::fabs(area.total_mm2 - 4.0) <= 0.001;
  bool reduction_ok = std::fabs(area.reduction_factor - 3.75) <= 1e-6;

  ThroughputReport r1 = estimate_fps(spec, 1, 640, 480, params);
  bool fps_anchor = std::fabs(r1.fps - 200.0) <= 1e-9;
  bool decreasing = true;
  double prev = 1e300;
  for (int r = 1; r <= 4; ++r) {
    double fps = estimate_fps(spec, r, 640, 480, params).fps;
    decreasing &= fps < prev && fps > 0;
    prev = fps;
  }

  // monotonicity: freeze one currently-trainable weight in several layers
  bool mono = true;
  for (size_t li = 0; li < qg.convs.size() && mono; li += 7) {
    QGraph mod = qg;
    auto& l = mod.convs[li];
    if (l.frozen.empty()) l.frozen.assign(l.w.size(), 0);
    size_t pick = l.w.size();
    for (size_t i = 0; i < l.w.size(); ++i)
      if (!l.frozen[i]) {
        pick = i;
        break;
      }
    if (pick == l.w.size()) continue;
    l.frozen[pick] = 1;
    l.csd.resize(l.w.size());
    l.csd[pick] = encode_csd(l.w[pick]);
    mono &= estimate_area(mod, prog, params).total_mm2 < area.total_mm2;
  }

  report(10, "hardware anchors: 4.0 mm^2, 3.75x, 200 fps VGA, monotone",
         area_ok && reduction_ok && fps_anchor && decreasing && mono,
         "area " + fmt(area.total_mm2) + " mm^2, reduction " +
             fmt(area.reduction_factor) + "x, fps(1) " + fmt(r1.fps));
}

// --- criterion 11: determinism ----------------------------------------------

void criterion11() {
  NetworkSpec spec = small_spec({1, 16, 16}, 4, 1);
  Dataset train = make_synthetic(128, 4, spec.input, 1111);

  auto run = [&]() {
    Program prog = build_program(spec);
    WeightBundle b;
    b.spec = spec;
    b.state = init_state(prog, 1112);
    b.plan = make_freeze_plan(prog, FreezeScheme::uniform(0.5f), 1112);
    MomentumBuffers mom = init_momentum(prog);
    OptimizerConfig cfg;
    RejuvenationPolicy policy;
    for (int e = 0; e < 2; ++e)
      train_epoch(prog, *b.state, *b.plan, train, cfg, policy, mom, 1113 + e);
    return serialize_bundle(b);
  };
  std::vector<uint8_t> a = run(), b = run();
  bool identical = a == b;

  WeightBundle back = deserialize_bundle(a);
  bool roundtrip = serialize_bundle(back) == a;
  report(11, "training is seed-deterministic; bundles round-trip bit-exactly",
         identical && roundtrip);
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  criterion9();
  criterion10();
  criterion11();
  if (g_failures) std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
