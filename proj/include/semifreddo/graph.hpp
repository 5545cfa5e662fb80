#pragma once

#include <set>
#include <string>
#include <vector>

#include "semifreddo/topology.hpp"

namespace semifreddo {

enum class ParamKind {
  ConvFull,  // stem 3x3, [out][in][3][3]
  ConvDw,    // [c][3][3]
  ConvPw,    // [out][in/groups]
  Bias,      // [out]
  BnGamma,
  BnBeta,
  BnMean,  // running stat, not a parameter
  BnVar,   // running stat, not a parameter
  Alpha,   // per-channel blend logits
};

struct ParamInfo {
  std::string name;
  ParamKind kind = ParamKind::ConvPw;
  std::vector<int> dims;
  Core core = Core::Shared;
  bool head = false;
  int stage = -1;
  int repeat = 0;     // tail repetition index, 0 = base graph
  int tail_src = -1;  // frozen tail params: id of the repetition-0 tensor
  long long size = 0;

  bool is_stat() const {
    return kind == ParamKind::BnMean || kind == ParamKind::BnVar;
  }
  bool is_conv_weight() const {
    return kind == ParamKind::ConvFull || kind == ParamKind::ConvDw ||
           kind == ParamKind::ConvPw;
  }
};

enum class Op {
  Input,
  ConvFull,  // stride, p0=w
  ConvDw,    // stride, p0=w
  ConvPw,    // groups, p0=w, p1=bias (-1 if none)
  BatchNorm, // p0..p3 = gamma, beta, mean, var
  Relu,
  SplitLo,
  SplitHi,
  Concat,         // in0 ++ in1
  Shuffle,        // groups
  AlphaBlend,     // in0=frozen, in1=trainable, p0=alpha logits
  CrossShuffleA,  // [in0_lo ++ in1_hi]
  CrossShuffleB,  // [in1_lo ++ in0_hi]
  GlobalAvgPool,
  PwlAct,  // placeholder in float graph; table attached at quantize time
};

struct Node {
  Op op;
  int in0 = -1, in1 = -1;  // producer node ids
  int p0 = -1, p1 = -1, p2 = -1, p3 = -1;
  int stride = 1, groups = 1;
  Core core = Core::Shared;
  std::string name;  // edge name of this node's output
  TensorShape out_shape;
  int stage = -1;
  int repeat = 0;
  bool tail = false;
  bool reload_boundary = false;
};

struct ActiveCores {
  bool frozen = true, t1 = true, t2 = true;
  bool has(Core c) const {
    switch (c) {
      case Core::Frozen: return frozen;
      case Core::Trainable1: return t1;
      case Core::Trainable2: return t2;
      default: return true;
    }
  }
};

// Flattened logical execution graph of a NetworkSpec, head included.
struct Program {
  NetworkSpec spec;
  uint64_t hash = 0;
  std::vector<Node> nodes;
  std::vector<ParamInfo> params;
  int backbone_out[3] = {-1, -1, -1};  // frozen, t1, t2 node ids
  int head_out = -1;
  int repeats = 1;

  int reload_boundaries() const {
    int n = 0;
    for (const auto& nd : nodes) n += nd.reload_boundary ? 1 : 0;
    return n;
  }
  long long param_count(ParamKind k) const;
  // Node ids actually executed for a given active-core set.
  std::vector<int> schedule(ActiveCores active) const;
};

Program build_program(const NetworkSpec& spec);

// Same graph with the tail instantiated r times (overrides spec.tail_repeat).
Program unroll_repeats(const NetworkSpec& spec, int r);

}  // namespace semifreddo
