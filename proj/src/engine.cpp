#include "semifreddo/engine.hpp"

#include <cmath>

#include "semifreddo/rng.hpp"

namespace semifreddo {

namespace {

float fan_in_bound(const ParamInfo& p) {
  long long fan = 1;
  switch (p.kind) {
    case ParamKind::ConvFull: fan = (long long)p.dims[1] * 9; break;
    case ParamKind::ConvDw: fan = 9; break;
    case ParamKind::ConvPw: fan = p.dims[1]; break;
    default: fan = 1;
  }
  return std::sqrt(6.0f / (float)fan);
}

}  // namespace

ModelState init_state(const Program& prog, uint32_t seed) {
  ModelState st;
  st.hash = prog.hash;
  st.seed = seed;
  st.tensors.resize(prog.params.size());
  Rng rng(seed);
  for (size_t i = 0; i < prog.params.size(); ++i) {
    const ParamInfo& p = prog.params[i];
    auto& t = st.tensors[i];
    t.assign(p.size, 0.0f);
    switch (p.kind) {
      case ParamKind::ConvFull:
      case ParamKind::ConvDw:
      case ParamKind::ConvPw: {
        float b = fan_in_bound(p);
        for (auto& v : t) v = rng.uniform(-b, b);
        break;
      }
      case ParamKind::Alpha:
        for (auto& v : t) v = rng.uniform(-1.0f, 1.0f);
        break;
      case ParamKind::BnGamma:
      case ParamKind::BnVar:
        std::fill(t.begin(), t.end(), 1.0f);
        break;
      default:
        break;  // beta, mean, bias stay zero
    }
  }
  // Frozen tail repetitions are the same hardware block: copy repetition 0.
  for (size_t i = 0; i < prog.params.size(); ++i)
    if (prog.params[i].tail_src >= 0)
      st.tensors[i] = st.tensors[prog.params[i].tail_src];
  return st;
}

MomentumBuffers init_momentum(const Program& prog) {
  MomentumBuffers m;
  m.v.resize(prog.params.size());
  for (size_t i = 0; i < prog.params.size(); ++i)
    m.v[i].assign(prog.params[i].size, 0.0f);
  return m;
}

const Tensor& ForwardResult::head() const {
  require(!slots.empty(), "no forward result");
  for (size_t i = slots.size(); i-- > 0;)
    if (computed[i]) return slots[i];
  throw std::runtime_error("head output not computed");
}

const Tensor& ForwardResult::backbone(const Program& prog, Core core) const {
  int idx = core == Core::Frozen ? 0 : core == Core::Trainable1 ? 1 : 2;
  int node = prog.backbone_out[idx];
  require(node >= 0 && computed[node], "backbone output not computed");
  return slots[node];
}

ForwardResult forward_pass(const Program& prog, ModelState& state,
                           const Tensor& batch, Mode mode, ActiveCores active,
                           bool frozen_bn_eval) {
  require(state.hash == prog.hash, "topology mismatch: state does not match spec");
  require(batch.shape() == prog.spec.input, "input shape mismatch: got " +
                                                batch.shape().str() +
                                                ", spec wants " +
                                                prog.spec.input.str());
  ForwardResult r;
  r.mode = mode;
  r.active = active;
  r.frozen_bn_eval = frozen_bn_eval;
  r.slots.resize(prog.nodes.size());
  r.computed.assign(prog.nodes.size(), 0);
  r.bn.resize(prog.nodes.size());

  auto in_of = [&](int id) -> const Tensor& { return r.slots[id]; };

  for (int id : prog.schedule(active)) {
    const Node& nd = prog.nodes[id];
    Tensor out;
    switch (nd.op) {
      case Op::Input:
        out = batch;
        break;
      case Op::ConvFull:
        out = nn::conv3x3(in_of(nd.in0), state.tensors[nd.p0],
                          nd.out_shape.channels, nd.stride);
        break;
      case Op::ConvDw:
        out = nn::depthwise_conv3x3(in_of(nd.in0), state.tensors[nd.p0],
                                    nd.stride);
        break;
      case Op::ConvPw: {
        const std::vector<float>* bias =
            nd.p1 >= 0 ? &state.tensors[nd.p1] : nullptr;
        out = nn::pointwise_conv(in_of(nd.in0), state.tensors[nd.p0],
                                 nd.out_shape.channels, nd.groups, bias);
        break;
      }
      case Op::BatchNorm: {
        bool eval_stats =
            mode == Mode::Eval || (frozen_bn_eval && nd.core == Core::Frozen);
        if (eval_stats) {
          out = nn::batch_norm_eval(in_of(nd.in0), state.tensors[nd.p0],
                                    state.tensors[nd.p1], state.tensors[nd.p2],
                                    state.tensors[nd.p3]);
        } else {
          out = nn::batch_norm_train(in_of(nd.in0), state.tensors[nd.p0],
                                     state.tensors[nd.p1], state.tensors[nd.p2],
                                     state.tensors[nd.p3], r.bn[id]);
        }
        break;
      }
      case Op::Relu:
        out = nn::relu(in_of(nd.in0));
        break;
      case Op::SplitLo:
      case Op::SplitHi: {
        const Tensor& x = in_of(nd.in0);
        int half = x.c / 2, off = nd.op == Op::SplitHi ? half : 0;
        out = Tensor(x.n, half, x.h, x.w);
        long long hw = x.shape().pixels();
        for (int n = 0; n < x.n; ++n)
          std::copy_n(&x.v[((size_t)n * x.c + off) * hw], (size_t)half * hw,
                      &out.v[(size_t)n * half * hw]);
        break;
      }
      case Op::Concat: {
        const Tensor& a = in_of(nd.in0);
        const Tensor& b = in_of(nd.in1);
        out = Tensor(a.n, a.c + b.c, a.h, a.w);
        long long hw = a.shape().pixels();
        for (int n = 0; n < a.n; ++n) {
          std::copy_n(&a.v[(size_t)n * a.c * hw], (size_t)a.c * hw,
                      &out.v[(size_t)n * (a.c + b.c) * hw]);
          std::copy_n(&b.v[(size_t)n * b.c * hw], (size_t)b.c * hw,
                      &out.v[((size_t)n * (a.c + b.c) + a.c) * hw]);
        }
        break;
      }
      case Op::Shuffle:
        out = nn::channel_shuffle(in_of(nd.in0), nd.groups);
        break;
      case Op::AlphaBlend:
        out = nn::alpha_blend(in_of(nd.in0), in_of(nd.in1),
                              state.tensors[nd.p0]);
        break;
      case Op::CrossShuffleA:
      case Op::CrossShuffleB: {
        // Cross-core shuffle only applies when both trainable cores run.
        bool both = r.computed[nd.in0] && r.computed[nd.in1];
        int own = nd.op == Op::CrossShuffleA ? nd.in0 : nd.in1;
        if (!both) {
          out = in_of(own);
        } else {
          const Tensor& a = in_of(nd.in0);
          const Tensor& b = in_of(nd.in1);
          int half = a.c / 2;
          long long hw = a.shape().pixels();
          out = Tensor(a.n, a.c, a.h, a.w);
          const Tensor& lo_src = nd.op == Op::CrossShuffleA ? a : b;
          const Tensor& hi_src = nd.op == Op::CrossShuffleA ? b : a;
          for (int n = 0; n < a.n; ++n) {
            std::copy_n(&lo_src.v[(size_t)n * a.c * hw], (size_t)half * hw,
                        &out.v[(size_t)n * a.c * hw]);
            std::copy_n(&hi_src.v[((size_t)n * a.c + half) * hw],
                        (size_t)half * hw,
                        &out.v[((size_t)n * a.c + half) * hw]);
          }
        }
        break;
      }
      case Op::GlobalAvgPool:
        out = nn::global_avg_pool(in_of(nd.in0));
        break;
      case Op::PwlAct:
        out = in_of(nd.in0);  // identity in the float graph
        break;
    }
    r.slots[id] = std::move(out);
    r.computed[id] = 1;
  }
  return r;
}

GradientSet backward_pass(const Program& prog, const ModelState& state,
                          const ForwardResult& fwd, const Tensor& dhead) {
  GradientSet gs;
  gs.g.resize(prog.params.size());
  for (size_t i = 0; i < prog.params.size(); ++i)
    gs.g[i].assign(prog.params[i].size, 0.0f);

  std::vector<Tensor> dslot(prog.nodes.size());
  std::vector<char> has_grad(prog.nodes.size(), 0);
  auto grad_into = [&](int id) -> Tensor& {
    if (!has_grad[id]) {
      const Tensor& a = fwd.slots[id];
      dslot[id] = Tensor(a.n, a.c, a.h, a.w);
      has_grad[id] = 1;
    }
    return dslot[id];
  };

  // Seed at the last computed node (head output, or backbone output when the
  // program has no head).
  int seed_node = -1;
  for (int i = (int)prog.nodes.size() - 1; i >= 0; --i)
    if (fwd.computed[i]) { seed_node = i; break; }
  require(seed_node >= 0, "backward_pass: empty forward result");
  grad_into(seed_node) = dhead;

  auto order = prog.schedule(fwd.active);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    int id = *it;
    if (!has_grad[id]) continue;
    const Node& nd = prog.nodes[id];
    const Tensor& dy = dslot[id];
    switch (nd.op) {
      case Op::Input:
        break;
      case Op::ConvFull:
        nn::conv3x3_backward(fwd.slots[nd.in0], state.tensors[nd.p0],
                             nd.out_shape.channels, nd.stride, dy,
                             grad_into(nd.in0), gs.g[nd.p0]);
        break;
      case Op::ConvDw:
        nn::depthwise_conv3x3_backward(fwd.slots[nd.in0], state.tensors[nd.p0],
                                       nd.stride, dy, grad_into(nd.in0),
                                       gs.g[nd.p0]);
        break;
      case Op::ConvPw: {
        std::vector<float>* dbias = nd.p1 >= 0 ? &gs.g[nd.p1] : nullptr;
        nn::pointwise_conv_backward(fwd.slots[nd.in0], state.tensors[nd.p0],
                                    nd.out_shape.channels, nd.groups, dy,
                                    grad_into(nd.in0), gs.g[nd.p0], dbias);
        break;
      }
      case Op::BatchNorm: {
        bool eval_stats = fwd.mode == Mode::Eval ||
                          (fwd.frozen_bn_eval && nd.core == Core::Frozen);
        if (eval_stats) {
          nn::batch_norm_eval_backward(fwd.slots[nd.in0], state.tensors[nd.p0],
                                       state.tensors[nd.p2],
                                       state.tensors[nd.p3], dy,
                                       grad_into(nd.in0), gs.g[nd.p0],
                                       gs.g[nd.p1]);
        } else {
          nn::batch_norm_train_backward(fwd.slots[nd.in0],
                                        state.tensors[nd.p0], fwd.bn[id], dy,
                                        grad_into(nd.in0), gs.g[nd.p0],
                                        gs.g[nd.p1]);
        }
        break;
      }
      case Op::Relu:
        nn::relu_backward(fwd.slots[nd.in0], dy, grad_into(nd.in0));
        break;
      case Op::SplitLo:
      case Op::SplitHi: {
        Tensor& dx = grad_into(nd.in0);
        int half = dy.c, off = nd.op == Op::SplitHi ? half : 0;
        long long hw = dy.shape().pixels();
        for (int n = 0; n < dy.n; ++n) {
          const float* s = &dy.v[(size_t)n * half * hw];
          float* d = &dx.v[((size_t)n * dx.c + off) * hw];
          for (long long i = 0; i < (long long)half * hw; ++i) d[i] += s[i];
        }
        break;
      }
      case Op::Concat: {
        Tensor& da = grad_into(nd.in0);
        Tensor& db = grad_into(nd.in1);
        long long hw = dy.shape().pixels();
        for (int n = 0; n < dy.n; ++n) {
          const float* s = &dy.v[(size_t)n * dy.c * hw];
          float* d = &da.v[(size_t)n * da.c * hw];
          for (long long i = 0; i < (long long)da.c * hw; ++i) d[i] += s[i];
          s += (size_t)da.c * hw;
          d = &db.v[(size_t)n * db.c * hw];
          for (long long i = 0; i < (long long)db.c * hw; ++i) d[i] += s[i];
        }
        break;
      }
      case Op::Shuffle: {
        auto perm = nn::shuffle_permutation(dy.c, nd.groups);
        Tensor& dx = grad_into(nd.in0);
        long long hw = dy.shape().pixels();
        for (int n = 0; n < dy.n; ++n)
          for (int c = 0; c < dy.c; ++c) {
            const float* s = &dy.v[((size_t)n * dy.c + c) * hw];
            float* d = &dx.v[((size_t)n * dx.c + perm[c]) * hw];
            for (long long i = 0; i < hw; ++i) d[i] += s[i];
          }
        break;
      }
      case Op::AlphaBlend:
        nn::alpha_blend_backward(fwd.slots[nd.in0], fwd.slots[nd.in1],
                                 state.tensors[nd.p0], dy, grad_into(nd.in0),
                                 grad_into(nd.in1), gs.g[nd.p0]);
        break;
      case Op::CrossShuffleA:
      case Op::CrossShuffleB: {
        bool both = fwd.computed[nd.in0] && fwd.computed[nd.in1];
        int own = nd.op == Op::CrossShuffleA ? nd.in0 : nd.in1;
        if (!both) {
          Tensor& dx = grad_into(own);
          for (size_t i = 0; i < dy.v.size(); ++i) dx.v[i] += dy.v[i];
          break;
        }
        int lo_in = nd.op == Op::CrossShuffleA ? nd.in0 : nd.in1;
        int hi_in = nd.op == Op::CrossShuffleA ? nd.in1 : nd.in0;
        Tensor& dlo = grad_into(lo_in);
        Tensor& dhi = grad_into(hi_in);
        int half = dy.c / 2;
        long long hw = dy.shape().pixels();
        for (int n = 0; n < dy.n; ++n) {
          const float* s = &dy.v[(size_t)n * dy.c * hw];
          float* d = &dlo.v[(size_t)n * dy.c * hw];
          for (long long i = 0; i < (long long)half * hw; ++i) d[i] += s[i];
          s = &dy.v[((size_t)n * dy.c + half) * hw];
          d = &dhi.v[((size_t)n * dy.c + half) * hw];
          for (long long i = 0; i < (long long)half * hw; ++i) d[i] += s[i];
        }
        break;
      }
      case Op::GlobalAvgPool:
        nn::global_avg_pool_backward(fwd.slots[nd.in0], dy, grad_into(nd.in0));
        break;
      case Op::PwlAct: {
        Tensor& dx = grad_into(nd.in0);
        for (size_t i = 0; i < dy.v.size(); ++i) dx.v[i] += dy.v[i];
        break;
      }
    }
  }
  return gs;
}

void sgd_step_masked(const Program& prog, ModelState& state,
                     const GradientSet& grads,
                     const std::vector<std::vector<uint8_t>>& masks,
                     const OptimizerConfig& cfg, MomentumBuffers& mom) {
  require(grads.g.size() == state.tensors.size(), "gradient/state size mismatch");
  for (size_t t = 0; t < state.tensors.size(); ++t) {
    if (prog.params[t].is_stat()) continue;
    auto& w = state.tensors[t];
    const auto& g = grads.g[t];
    auto& v = mom.v[t];
    const std::vector<uint8_t>* mask =
        t < masks.size() && !masks[t].empty() ? &masks[t] : nullptr;
    require(!mask || mask->size() == w.size(), "mask shape mismatch");
    for (size_t i = 0; i < w.size(); ++i) {
      if (mask && (*mask)[i]) continue;  // frozen entry: bit-identical
      v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * w[i];
      w[i] -= cfg.lr * v[i];
    }
  }
}

}  // namespace semifreddo
