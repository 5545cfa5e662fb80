#include <doctest.h>

#include "semifreddo/engine.hpp"
#include "semifreddo/freezing.hpp"
#include "semifreddo/rng.hpp"

#include "helpers.hpp"

using namespace semifreddo;

namespace {

NetworkSpec tiny_spec() {
  // Smallest legal topology: one downscale per stage is required for the
  // 16x stride budget, so reuse small_spec at a tiny input.
  NetworkSpec s = small_spec({1, 16, 16}, 4, /*frozen_regs=*/1);
  return s;
}

Tensor random_batch(TensorShape shape, int n, uint32_t seed) {
  Tensor t(n, shape.channels, shape.height, shape.width);
  Rng rng(seed);
  for (auto& v : t.v) v = rng.uniform();
  return t;
}

}  // namespace

TEST_CASE("init_state is deterministic and respects conventions") {
  Program p = build_program(tiny_spec());
  ModelState a = init_state(p, 7);
  ModelState b = init_state(p, 7);
  ModelState c = init_state(p, 8);
  CHECK(a.tensors == b.tensors);
  CHECK(a.tensors != c.tensors);

  bool saw_diff = false;
  for (size_t i = 0; i < p.params.size(); ++i) {
    const auto& pi = p.params[i];
    if (pi.kind == ParamKind::BnGamma)
      for (float v : a.tensors[i]) CHECK(v == 1.0f);
    if (pi.kind == ParamKind::BnMean)
      for (float v : a.tensors[i]) CHECK(v == 0.0f);
    if (pi.kind == ParamKind::BnVar)
      for (float v : a.tensors[i]) CHECK(v == 1.0f);
    if (pi.tail_src >= 0) CHECK(a.tensors[i] == a.tensors[pi.tail_src]);
    saw_diff |= a.tensors[i] != std::vector<float>(a.tensors[i].size(), 0.0f);
  }
  CHECK(saw_diff);
}

TEST_CASE("forward is deterministic; eval mode leaves state untouched") {
  Program p = build_program(tiny_spec());
  ModelState s = init_state(p, 3);
  Tensor batch = random_batch(p.spec.input, 2, 5);

  ModelState before = s;
  ForwardResult f1 = forward_pass(p, s, batch, Mode::Eval);
  CHECK(s.tensors == before.tensors);
  ForwardResult f2 = forward_pass(p, s, batch, Mode::Eval);
  CHECK(f1.head().v == f2.head().v);

  forward_pass(p, s, batch, Mode::Train);
  CHECK(s.tensors != before.tensors);  // moving stats advanced
}

TEST_CASE("stale state is rejected") {
  Program p = build_program(tiny_spec());
  ModelState s = init_state(p, 3);
  s.hash ^= 1;
  Tensor batch = random_batch(p.spec.input, 1, 5);
  CHECK_THROWS_WITH_AS(forward_pass(p, s, batch, Mode::Eval),
                       doctest::Contains("topology mismatch"),
                       std::runtime_error);
}

TEST_CASE("end-to-end gradients match finite differences through the graph") {
  // Whole-model check in float against central differences in the loss.
  Program p = build_program(tiny_spec());
  ModelState s = init_state(p, 21);
  Tensor batch = random_batch(p.spec.input, 2, 23);
  std::vector<int> labels = {1, 3};

  auto loss_of = [&](ModelState& st) {
    ForwardResult f = forward_pass(p, st, batch, Mode::Train);
    Tensor d;
    return (double)nn::softmax_cross_entropy(f.head(), labels, d);
  };

  ForwardResult f = forward_pass(p, s, batch, Mode::Train);
  Tensor dlogits;
  nn::softmax_cross_entropy(f.head(), labels, dlogits);
  GradientSet grads = backward_pass(p, s, f, dlogits);

  // Spot-check a handful of entries in tensors of every kind.  A batch of 2
  // leaves some deep batch-norm channels with tiny batch variance, so the
  // float loss can be violently nonlinear at finite step sizes; only trust a
  // difference quotient that is stable when the step is halved.
  Rng pick(99);
  int checked = 0;
  auto fd_at = [&](size_t t, size_t i, double h) {
    float keep = s.tensors[t][i];
    s.tensors[t][i] = keep + (float)h;
    double up = loss_of(s);
    s.tensors[t][i] = keep - (float)h;
    double dn = loss_of(s);
    s.tensors[t][i] = keep;
    return (up - dn) / (2 * h);
  };
  for (size_t t = 0; t < p.params.size(); ++t) {
    if (p.params[t].is_stat() || p.params[t].tail_src >= 0) continue;
    if (grads.g[t].empty()) continue;
    size_t i = pick.below((uint32_t)s.tensors[t].size());
    double fd = fd_at(t, i, 5e-3);
    double fd2 = fd_at(t, i, 2.5e-3);
    double stability =
        std::fabs(fd - fd2) / std::max({std::fabs(fd), std::fabs(fd2), 5e-3});
    if (stability > 0.05) continue;  // FD itself untrustworthy here
    double got = grads.g[t][i];
    double denom = std::max({std::fabs(fd), std::fabs(got), 5e-3});
    CHECK_MESSAGE(std::fabs(fd - got) / denom < 0.08,
                  p.params[t].name, " fd=", fd, " analytic=", got);
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("single-core forward ignores the inactive core entirely") {
  Program p = build_program(tiny_spec());
  ModelState s = init_state(p, 31);
  Tensor batch = random_batch(p.spec.input, 1, 37);

  ForwardResult full = forward_pass(p, s, batch, Mode::Eval);
  ModelState mutated = s;
  for (size_t t = 0; t < p.params.size(); ++t)
    if (p.params[t].core == Core::Trainable2 && !p.params[t].head)
      for (auto& v : mutated.tensors[t]) v += 100.0f;

  ForwardResult a = forward_pass(p, s, batch, Mode::Eval, {true, true, false});
  ForwardResult b =
      forward_pass(p, mutated, batch, Mode::Eval, {true, true, false});
  CHECK(a.head().v == b.head().v);
  CHECK(a.head().v != full.head().v);
}

TEST_CASE("masked SGD leaves masked entries bit-identical") {
  Program p = build_program(tiny_spec());
  ModelState s = init_state(p, 41);
  MomentumBuffers mom = init_momentum(p);
  Tensor batch = random_batch(p.spec.input, 2, 43);
  std::vector<int> labels = {0, 2};

  FreezePlan plan = make_freeze_plan(p, FreezeScheme::uniform(0.5f), 41);
  std::vector<std::pair<size_t, size_t>> frozen_entries;
  std::vector<float> frozen_values;
  for (size_t t = 0; t < plan.masks.size(); ++t)
    for (size_t i = 0; i < plan.masks[t].size(); ++i)
      if (plan.masks[t][i]) {
        frozen_entries.push_back({t, i});
        frozen_values.push_back(s.tensors[t][i]);
      }
  REQUIRE(!frozen_entries.empty());

  OptimizerConfig cfg;
  cfg.lr = 0.1f;
  for (int step = 0; step < 20; ++step) {
    ForwardResult f = forward_pass(p, s, batch, Mode::Train);
    Tensor dlogits;
    nn::softmax_cross_entropy(f.head(), labels, dlogits);
    GradientSet grads = backward_pass(p, s, f, dlogits);
    mask_gradients(grads, plan);
    sgd_step_masked(p, s, grads, plan.masks, cfg, mom);
  }
  for (size_t k = 0; k < frozen_entries.size(); ++k) {
    auto [t, i] = frozen_entries[k];
    CHECK(s.tensors[t][i] == frozen_values[k]);
  }
}
