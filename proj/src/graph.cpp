#include "semifreddo/graph.hpp"

#include <cassert>

namespace semifreddo {

namespace {

struct Builder {
  Program prog;

  int add_param(std::string name, ParamKind kind, std::vector<int> dims,
                Core core, bool head, int stage, int repeat) {
    ParamInfo p;
    p.name = std::move(name);
    p.kind = kind;
    p.dims = std::move(dims);
    p.core = core;
    p.head = head;
    p.stage = stage;
    p.repeat = repeat;
    p.size = 1;
    for (int d : p.dims) p.size *= d;
    prog.params.push_back(std::move(p));
    return (int)prog.params.size() - 1;
  }

  int add_node(Node n) {
    prog.nodes.push_back(std::move(n));
    return (int)prog.nodes.size() - 1;
  }

  TensorShape shape_of(int node) const { return prog.nodes[node].out_shape; }

  struct Ctx {
    Core core;
    std::string prefix;
    int stage;
    int repeat;
    std::vector<int>* emitted_params = nullptr;
  };

  Node base(Op op, const Ctx& c, const std::string& suffix) {
    Node n;
    n.op = op;
    n.core = c.core;
    n.name = c.prefix + suffix;
    n.stage = c.stage;
    n.repeat = c.repeat;
    return n;
  }

  int param(const Ctx& c, const std::string& suffix, ParamKind kind,
            std::vector<int> dims) {
    int id = add_param(c.prefix + suffix, kind, std::move(dims), c.core,
                       false, c.stage, c.repeat);
    if (c.emitted_params) c.emitted_params->push_back(id);
    return id;
  }

  int emit_bn(int in, const Ctx& c, const std::string& tag) {
    int ch = shape_of(in).channels;
    Node n = base(Op::BatchNorm, c, tag);
    n.in0 = in;
    n.p0 = param(c, tag + ".gamma", ParamKind::BnGamma, {ch});
    n.p1 = param(c, tag + ".beta", ParamKind::BnBeta, {ch});
    n.p2 = param(c, tag + ".mean", ParamKind::BnMean, {ch});
    n.p3 = param(c, tag + ".var", ParamKind::BnVar, {ch});
    n.out_shape = shape_of(in);
    return add_node(n);
  }

  int emit_relu(int in, const Ctx& c, const std::string& tag) {
    Node n = base(Op::Relu, c, tag);
    n.in0 = in;
    n.out_shape = shape_of(in);
    return add_node(n);
  }

  // DW 3x3 -> BN -> PW -> BN -> ReLU (first pointwise dropped).
  int emit_branch(int in, int out_ch, int stride, const Ctx& c,
                  const std::string& tag) {
    TensorShape s = shape_of(in);
    Node dw = base(Op::ConvDw, c, tag + ".dw");
    dw.in0 = in;
    dw.stride = stride;
    dw.p0 = param(c, tag + ".dw.w", ParamKind::ConvDw, {s.channels, 3, 3});
    dw.out_shape = {s.channels, (s.height + stride - 1) / stride,
                    (s.width + stride - 1) / stride};
    int d = add_node(dw);
    int b1 = emit_bn(d, c, tag + ".bn1");

    Node pw = base(Op::ConvPw, c, tag + ".pw");
    pw.in0 = b1;
    pw.groups = 1;
    pw.p0 = param(c, tag + ".pw.w", ParamKind::ConvPw, {out_ch, s.channels});
    pw.out_shape = {out_ch, dw.out_shape.height, dw.out_shape.width};
    int p = add_node(pw);
    int b2 = emit_bn(p, c, tag + ".bn2");
    return emit_relu(b2, c, tag + ".relu");
  }

  int emit_regular(int in, const Ctx& c, const std::string& tag) {
    TensorShape s = shape_of(in);
    require(s.channels % 2 == 0, "odd channel count at " + c.prefix + tag);
    int half = s.channels / 2;

    Node lo = base(Op::SplitLo, c, tag + ".lo");
    lo.in0 = in;
    lo.out_shape = {half, s.height, s.width};
    int nlo = add_node(lo);

    Node hi = base(Op::SplitHi, c, tag + ".hi");
    hi.in0 = in;
    hi.out_shape = {half, s.height, s.width};
    int nhi = add_node(hi);

    int br = emit_branch(nhi, half, 1, c, tag + ".br");

    Node cat = base(Op::Concat, c, tag + ".cat");
    cat.in0 = nlo;
    cat.in1 = br;
    cat.out_shape = s;
    int nc = add_node(cat);

    Node sh = base(Op::Shuffle, c, tag + ".shuf");
    sh.in0 = nc;
    sh.groups = 2;
    sh.out_shape = s;
    return add_node(sh);
  }

  int emit_downscale(int in, int out_ch, const Ctx& c, const std::string& tag) {
    TensorShape s = shape_of(in);
    if (out_ch == 0) out_ch = 2 * s.channels;
    require(out_ch % 2 == 0, "odd channel count at " + c.prefix + tag);
    int a = emit_branch(in, out_ch / 2, 2, c, tag + ".a");
    int b = emit_branch(in, out_ch / 2, 2, c, tag + ".b");

    Node cat = base(Op::Concat, c, tag + ".cat");
    cat.in0 = a;
    cat.in1 = b;
    cat.out_shape = {out_ch, prog.nodes[a].out_shape.height,
                     prog.nodes[a].out_shape.width};
    int nc = add_node(cat);

    Node sh = base(Op::Shuffle, c, tag + ".shuf");
    sh.in0 = nc;
    sh.groups = 2;
    sh.out_shape = cat.out_shape;
    return add_node(sh);
  }

  int emit_segment(int in, const std::vector<BlockSpec>& seg, Ctx c,
                   std::vector<std::vector<int>>* per_block = nullptr) {
    int cur = in;
    for (size_t i = 0; i < seg.size(); ++i) {
      std::vector<int> ids;
      c.emitted_params = &ids;
      std::string tag = ".b" + std::to_string(i);
      switch (seg[i].kind) {
        case BlockKind::ShuffleRegular:
          cur = emit_regular(cur, c, tag);
          break;
        case BlockKind::ShuffleDownscale:
          cur = emit_downscale(cur, seg[i].out_channels, c, tag);
          break;
        default:
          require(false, "unexpected block kind in segment");
      }
      if (per_block) per_block->push_back(std::move(ids));
    }
    return cur;
  }

  int emit_blend(int f, int t, Core core, const std::string& name, int stage,
                 int repeat) {
    require(shape_of(f) == shape_of(t),
            "blend shape mismatch at " + name + ": " + shape_of(f).str() +
                " vs " + shape_of(t).str());
    Ctx c{core, name, stage, repeat};
    Node n = base(Op::AlphaBlend, c, "");
    n.in0 = f;
    n.in1 = t;
    n.p0 = param(c, ".alpha", ParamKind::Alpha, {shape_of(f).channels});
    n.out_shape = shape_of(f);
    return add_node(n);
  }
};

std::vector<BlockSpec> trailing_regulars(const std::vector<BlockSpec>& seg) {
  std::vector<BlockSpec> out;
  for (auto it = seg.rbegin(); it != seg.rend(); ++it) {
    if (it->kind != BlockKind::ShuffleRegular) break;
    out.push_back(*it);
  }
  return out;  // order irrelevant, all identical regular blocks
}

}  // namespace

long long Program::param_count(ParamKind k) const {
  long long n = 0;
  for (const auto& p : params)
    if (p.kind == k) n += p.size;
  return n;
}

std::vector<int> Program::schedule(ActiveCores active) const {
  std::vector<int> order;
  order.reserve(nodes.size());
  for (int i = 0; i < (int)nodes.size(); ++i) {
    const Node& n = nodes[i];
    if (n.core == Core::Shared || n.core == Core::Frozen || active.has(n.core))
      order.push_back(i);
  }
  return order;
}

Program unroll_repeats(const NetworkSpec& spec, int r) {
  require(r >= 1, "repeat count must be >= 1");
  NetworkSpec s = spec;
  s.tail_repeat = r;
  return build_program(s);
}

Program build_program(const NetworkSpec& spec) {
  require(spec.tail_repeat >= 1, "repeat count must be >= 1");
  require(!spec.modules.empty(), "spec has no modules");
  Builder b;
  b.prog.spec = spec;
  b.prog.hash = topology_hash(spec);
  b.prog.repeats = spec.tail_repeat;

  Node in;
  in.op = Op::Input;
  in.core = Core::Shared;
  in.name = "input";
  in.out_shape = spec.input;
  int input = b.add_node(in);

  // Stem: full 3x3 conv -> BN -> ReLU. Weights belong to the frozen core,
  // but the node feeds every core.
  Builder::Ctx sc{Core::Shared, "stem", -1, 0};
  Node stem = b.base(Op::ConvFull, sc, "");
  stem.in0 = input;
  stem.stride = spec.stem.stride;
  int so = spec.stem.out_channels;
  stem.p0 = b.add_param("stem.w", ParamKind::ConvFull,
                        {so, spec.input.channels, 3, 3}, Core::Frozen, false,
                        -1, 0);
  stem.out_shape = {so, (spec.input.height + stem.stride - 1) / stem.stride,
                    (spec.input.width + stem.stride - 1) / stem.stride};
  int cur = b.add_node(stem);
  {
    Builder::Ctx bc{Core::Frozen, "stem", -1, 0};
    cur = b.emit_bn(cur, bc, ".bn");
    cur = b.emit_relu(cur, bc, ".relu");
  }

  int f = cur, y1 = cur, y2 = cur;
  std::vector<std::vector<int>> last_frozen_params;
  int M = (int)spec.modules.size();
  for (int m = 0; m < M; ++m) {
    const auto& mod = spec.modules[m];
    std::string mp = "m" + std::to_string(m);
    std::vector<std::vector<int>> fp;
    f = b.emit_segment(f, mod.frozen, {Core::Frozen, mp + ".f", m, 0}, &fp);
    if (m == M - 1) last_frozen_params = std::move(fp);
    int u1 =
        b.emit_segment(y1, mod.trainable[0], {Core::Trainable1, mp + ".t1", m, 0});
    int u2 =
        b.emit_segment(y2, mod.trainable[1], {Core::Trainable2, mp + ".t2", m, 0});
    int b1 = b.emit_blend(f, u1, Core::Trainable1, mp + ".blend1", m, 0);
    int b2 = b.emit_blend(f, u2, Core::Trainable2, mp + ".blend2", m, 0);
    if (mod.cross_shuffle) {
      Builder::Ctx c1{Core::Trainable1, mp + ".swap1", m, 0};
      Node a = b.base(Op::CrossShuffleA, c1, "");
      a.in0 = b1;
      a.in1 = b2;
      a.out_shape = b.shape_of(b1);
      y1 = b.add_node(a);
      Builder::Ctx c2{Core::Trainable2, mp + ".swap2", m, 0};
      Node bb = b.base(Op::CrossShuffleB, c2, "");
      bb.in0 = b1;
      bb.in1 = b2;
      bb.out_shape = b.shape_of(b2);
      y2 = b.add_node(bb);
    } else {
      y1 = b1;
      y2 = b2;
    }
  }

  // Tail repetitions: shape-preserving part of the last module, re-run with
  // fresh trainable weights. Frozen tensors alias repetition 0's values.
  const auto& last = spec.modules.back();
  std::vector<BlockSpec> tail_f = trailing_regulars(last.frozen);
  std::vector<BlockSpec> tail_t1 = trailing_regulars(last.trainable[0]);
  std::vector<BlockSpec> tail_t2 = trailing_regulars(last.trainable[1]);
  int n_tail_f = (int)tail_f.size();

  for (int rep = 1; rep < spec.tail_repeat; ++rep) {
    std::string tp = "tail.r" + std::to_string(rep);
    size_t node_mark = b.prog.nodes.size();
    size_t param_mark = b.prog.params.size();
    std::vector<std::vector<int>> fp;
    f = b.emit_segment(f, tail_f, {Core::Frozen, tp + ".f", M - 1, rep}, &fp);
    // Bind frozen tail params to their base-graph counterparts.
    int base_block0 = (int)last.frozen.size() - n_tail_f;
    for (int i = 0; i < n_tail_f; ++i)
      for (size_t j = 0; j < fp[i].size(); ++j)
        b.prog.params[fp[i][j]].tail_src =
            last_frozen_params[base_block0 + i][j];
    int u1 = b.emit_segment(y1, tail_t1, {Core::Trainable1, tp + ".t1", M - 1, rep});
    int u2 = b.emit_segment(y2, tail_t2, {Core::Trainable2, tp + ".t2", M - 1, rep});
    int b1 = b.emit_blend(f, u1, Core::Trainable1, tp + ".blend1", M - 1, rep);
    int b2 = b.emit_blend(f, u2, Core::Trainable2, tp + ".blend2", M - 1, rep);
    if (last.cross_shuffle) {
      Builder::Ctx c1{Core::Trainable1, tp + ".swap1", M - 1, rep};
      Node a = b.base(Op::CrossShuffleA, c1, "");
      a.in0 = b1;
      a.in1 = b2;
      a.out_shape = b.shape_of(b1);
      y1 = b.add_node(a);
      Builder::Ctx c2{Core::Trainable2, tp + ".swap2", M - 1, rep};
      Node bb = b.base(Op::CrossShuffleB, c2, "");
      bb.in0 = b1;
      bb.in1 = b2;
      bb.out_shape = b.shape_of(b2);
      y2 = b.add_node(bb);
    } else {
      y1 = b1;
      y2 = b2;
    }
    for (size_t i = node_mark; i < b.prog.nodes.size(); ++i) {
      b.prog.nodes[i].tail = true;
      b.prog.nodes[i].repeat = rep;
    }
    b.prog.nodes[node_mark].reload_boundary = true;
    for (size_t i = param_mark; i < b.prog.params.size(); ++i)
      b.prog.params[i].repeat = rep;
  }
  // Mark base-graph tail nodes (last module) for throughput accounting.
  for (auto& n : b.prog.nodes)
    if (n.stage == M - 1 && n.repeat == 0) n.tail = true;

  b.prog.backbone_out[0] = f;
  b.prog.backbone_out[1] = y1;
  b.prog.backbone_out[2] = y2;

  // Head on the selected core's backbone output.
  if (spec.head.out_channels > 0) {
    int hin = spec.head_core == Core::Frozen ? f
              : spec.head_core == Core::Trainable2 ? y2
                                                   : y1;
    TensorShape hs = b.shape_of(hin);
    Builder::Ctx hc{spec.head_core, "head", M, 0};
    Node pw = b.base(Op::ConvPw, hc, ".pw");
    pw.in0 = hin;
    pw.groups = spec.head.groups;
    pw.p0 = b.add_param("head.pw.w", ParamKind::ConvPw,
                        {spec.head.out_channels, hs.channels / spec.head.groups},
                        spec.head_core, true, M, 0);
    pw.p1 = b.add_param("head.pw.bias", ParamKind::Bias,
                        {spec.head.out_channels}, spec.head_core, true, M, 0);
    pw.out_shape = {spec.head.out_channels, hs.height, hs.width};
    cur = b.add_node(pw);
    if (spec.head.global_pool) {
      Node g = b.base(Op::GlobalAvgPool, hc, ".gap");
      g.in0 = cur;
      g.out_shape = {spec.head.out_channels, 1, 1};
      cur = b.add_node(g);
    }
    if (spec.head.pwl_activation) {
      Node p = b.base(Op::PwlAct, hc, ".act");
      p.in0 = cur;
      p.out_shape = b.shape_of(cur);
      cur = b.add_node(p);
    }
    b.prog.head_out = cur;
  }
  return std::move(b.prog);
}

}  // namespace semifreddo
