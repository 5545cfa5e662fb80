#include "semifreddo/quant.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include <json.hpp>

namespace semifreddo {

QuantParams calibrate_tensor(const float* data, size_t n) {
  require(n >= 1, "calibrate_tensor: need at least one sample");
  double mx = 0.0;
  for (size_t i = 0; i < n; ++i) {
    require(std::isfinite(data[i]), "unquantizable state: non-finite value");
    mx = std::max(mx, (double)std::fabs(data[i]));
  }
  if (mx == 0.0) return {0};
  int e = (int)std::ceil(std::log2(mx / 127.0));
  while (std::ldexp(127.0, e) < mx) ++e;
  while (std::ldexp(127.0, e - 1) >= mx) --e;
  return {e};
}

QuantParams calibrate_tensor(const std::vector<float>& v) {
  return calibrate_tensor(v.data(), v.size());
}

int8_t quantize_value(float x, QuantParams p) {
  double r = std::nearbyint(std::ldexp((double)x, -p.exponent));
  if (r > 127.0) r = 127.0;
  if (r < -127.0) r = -127.0;
  return (int8_t)r;
}

float dequantize_value(int8_t q, QuantParams p) {
  return (float)std::ldexp((double)q, p.exponent);
}

QTensor quantize(const Tensor& x, QuantParams p) {
  QTensor t;
  t.dims = {x.n, x.c, x.h, x.w};
  t.params = p;
  t.q.resize(x.v.size());
  for (size_t i = 0; i < x.v.size(); ++i) t.q[i] = quantize_value(x.v[i], p);
  return t;
}

// ---------------------------------------------------------------------------
// Canonical signed digit (non-adjacent form).

CsdCode encode_csd(int q) {
  require(q >= -127 && q <= 127, "encode_csd: value out of int8 range");
  CsdCode c;
  int n = q;
  while (n != 0) {
    int m = ((n % 4) + 4) % 4;
    int8_t d = 0;
    if (m & 1) {
      d = m == 1 ? 1 : -1;
      n -= d;
    }
    c.digits.push_back(d);
    n /= 2;
  }
  return c;
}

int decode_csd(const CsdCode& c) {
  int v = 0;
  for (size_t i = 0; i < c.digits.size(); ++i) v += c.digits[i] * (1 << i);
  return v;
}

int64_t csd_multiply(int64_t x, const CsdCode& c) {
  int64_t acc = 0;
  for (size_t i = 0; i < c.digits.size(); ++i) {
    if (c.digits[i] > 0)
      acc += x << i;
    else if (c.digits[i] < 0)
      acc -= x << i;
  }
  return acc;
}

long long QConvLayer::frozen_count() const {
  long long n = 0;
  for (uint8_t f : frozen) n += f;
  return n;
}

long long QConvLayer::scaler_count() const {
  long long n = 0;
  for (size_t i = 0; i < w.size(); ++i)
    if (!frozen.empty() && frozen[i] && w[i] != 0) ++n;
  return n;
}

long long QConvLayer::trainable_count() const {
  return (long long)w.size() - frozen_count();
}

// ---------------------------------------------------------------------------

namespace {

// round-half-even(v / 2^s), s >= 0
int64_t rhe_shift(int64_t v, int s) {
  if (s <= 0) return v << -s;
  int64_t floor = v >> s;
  int64_t rem = v - (floor << s);
  int64_t half = (int64_t)1 << (s - 1);
  if (rem > half) return floor + 1;
  if (rem == half) return floor + (floor & 1);
  return floor;
}

int8_t clamp127(int64_t v) {
  if (v > 127) return 127;
  if (v < -127) return -127;
  return (int8_t)v;
}

int8_t requant(int64_t v, int from_exp, int to_exp) {
  return clamp127(rhe_shift(v, to_exp - from_exp));
}

void check_acc(int64_t acc, const std::string& layer) {
  if (acc > std::numeric_limits<int32_t>::max() ||
      acc < std::numeric_limits<int32_t>::min())
    throw std::runtime_error("accumulator overflow at " + layer);
}

int64_t wmul(const QConvLayer& l, size_t widx, int64_t x) {
  if (!l.frozen.empty() && l.frozen[widx]) return csd_multiply(x, l.csd[widx]);
  return (int64_t)l.w[widx] * x;
}

}  // namespace

QGraph build_qgraph(const Program& prog, const ModelState& state,
                    const FreezePlan& plan,
                    const std::vector<Tensor>& calibration_batches) {
  require(state.hash == prog.hash, "topology mismatch");
  require(!calibration_batches.empty(), "need at least one calibration batch");
  for (const auto& t : state.tensors)
    for (float v : t)
      require(std::isfinite(v), "unquantizable state: non-finite parameter");

  // Per-edge activation maxima over the calibration batches (eval mode).
  std::vector<double> max_abs(prog.nodes.size(), 0.0);
  ModelState scratch = state;
  for (const auto& batch : calibration_batches) {
    ForwardResult f = forward_pass(prog, scratch, batch, Mode::Eval);
    for (size_t id = 0; id < prog.nodes.size(); ++id) {
      if (!f.computed[id]) continue;
      for (float v : f.slots[id].v) {
        require(std::isfinite(v), "unquantizable state: non-finite activation");
        max_abs[id] = std::max(max_abs[id], (double)std::fabs(v));
      }
    }
  }

  QGraph qg;
  qg.hash = prog.hash;
  qg.out_exp.resize(prog.nodes.size(), 0);
  for (size_t id = 0; id < prog.nodes.size(); ++id) {
    float m = (float)max_abs[id];
    qg.out_exp[id] = calibrate_tensor(&m, 1).exponent;
  }

  for (size_t id = 0; id < prog.nodes.size(); ++id) {
    const Node& nd = prog.nodes[id];
    if (nd.op == Op::ConvFull || nd.op == Op::ConvDw || nd.op == Op::ConvPw) {
      QConvLayer l;
      l.node = (int)id;
      const auto& wf = state.tensors[nd.p0];
      l.wq = calibrate_tensor(wf);
      l.w.resize(wf.size());
      for (size_t i = 0; i < wf.size(); ++i) l.w[i] = quantize_value(wf[i], l.wq);
      if (nd.p0 < (int)plan.masks.size() && !plan.masks[nd.p0].empty())
        l.frozen = plan.masks[nd.p0];
      l.csd.resize(l.w.size());
      for (size_t i = 0; i < l.w.size(); ++i)
        if (!l.frozen.empty() && l.frozen[i]) l.csd[i] = encode_csd(l.w[i]);

      int in_exp = qg.out_exp[nd.in0];
      // Fold the BN that consumes this conv, if any.
      int bn = -1;
      for (size_t j = id + 1; j < prog.nodes.size(); ++j)
        if (prog.nodes[j].op == Op::BatchNorm && prog.nodes[j].in0 == (int)id) {
          bn = (int)j;
          break;
        }
      if (bn >= 0) {
        const Node& bnode = prog.nodes[bn];
        const auto& gamma = state.tensors[bnode.p0];
        const auto& beta = state.tensors[bnode.p1];
        const auto& mean = state.tensors[bnode.p2];
        const auto& var = state.tensors[bnode.p3];
        std::vector<float> scale(gamma.size()), shift(gamma.size());
        for (size_t c = 0; c < gamma.size(); ++c) {
          scale[c] = gamma[c] / std::sqrt(var[c] + (float)nn::kBnEps);
          shift[c] = beta[c] - scale[c] * mean[c];
        }
        l.has_bn = true;
        l.scale_q = calibrate_tensor(scale);
        l.scale.resize(scale.size());
        l.shift.resize(scale.size());
        int se = in_exp + l.wq.exponent + l.scale_q.exponent;
        for (size_t c = 0; c < scale.size(); ++c) {
          l.scale[c] = quantize_value(scale[c], l.scale_q);
          double s = std::nearbyint(std::ldexp((double)shift[c], -se));
          require(std::fabs(s) <= (double)std::numeric_limits<int32_t>::max(),
                  "accumulator overflow at " + nd.name + " (bn shift)");
          l.shift[c] = (int32_t)s;
        }
      }
      if (nd.p1 >= 0) {
        const auto& bf = state.tensors[nd.p1];
        l.bias.resize(bf.size());
        int be = in_exp + l.wq.exponent;
        for (size_t c = 0; c < bf.size(); ++c) {
          double b = std::nearbyint(std::ldexp((double)bf[c], -be));
          require(std::fabs(b) <= (double)std::numeric_limits<int32_t>::max(),
                  "accumulator overflow at " + nd.name + " (bias)");
          l.bias[c] = (int32_t)b;
        }
      }
      qg.convs.push_back(std::move(l));
    } else if (nd.op == Op::AlphaBlend) {
      QBlendLayer bl;
      bl.node = (int)id;
      const auto& logits = state.tensors[nd.p0];
      std::vector<float> a(logits.size()), b(logits.size());
      for (size_t c = 0; c < logits.size(); ++c) {
        a[c] = nn::sigmoid(logits[c]);
        b[c] = 1.0f - a[c];
      }
      bl.ea = calibrate_tensor(a);
      bl.eb = calibrate_tensor(b);
      bl.qa.resize(a.size());
      bl.qb.resize(a.size());
      for (size_t c = 0; c < a.size(); ++c) {
        bl.qa[c] = quantize_value(a[c], bl.ea);
        bl.qb[c] = quantize_value(b[c], bl.eb);
      }
      qg.blends.push_back(std::move(bl));
    }
  }
  return qg;
}

QTensor quantize_input(const Tensor& image, const QGraph& qg,
                       const Program& prog) {
  (void)prog;
  return quantize(image, {qg.out_exp[0]});
}

QForwardResult quantized_forward(const Program& prog, const QGraph& qg,
                                 const QTensor& input) {
  require(input.dims.size() == 4 && input.dims[0] == 1,
          "quantized_forward runs batch 1");
  require(input.params.exponent == qg.out_exp[0],
          "input exponent does not match the quantized graph's input edge");
  require(qg.hash == prog.hash, "topology mismatch");

  struct Buf {
    std::vector<int8_t> q;
    TensorShape s;
    int exp = 0;
  };
  std::vector<Buf> buf(prog.nodes.size());

  std::vector<const QConvLayer*> conv_at(prog.nodes.size(), nullptr);
  for (const auto& l : qg.convs) conv_at[l.node] = &l;
  std::vector<const QBlendLayer*> blend_at(prog.nodes.size(), nullptr);
  for (const auto& l : qg.blends) blend_at[l.node] = &l;
  // Conv -> consuming BN node (fold target).
  std::vector<int> bn_of(prog.nodes.size(), -1);
  for (size_t j = 0; j < prog.nodes.size(); ++j)
    if (prog.nodes[j].op == Op::BatchNorm)
      bn_of[prog.nodes[j].in0] = (int)j;

  QForwardResult res;

  for (size_t id = 0; id < prog.nodes.size(); ++id) {
    const Node& nd = prog.nodes[id];
    Buf& out = buf[id];
    out.s = nd.out_shape;
    out.exp = qg.out_exp[id];
    long long hw = out.s.pixels();

    switch (nd.op) {
      case Op::Input:
        out.q = input.q;
        break;

      case Op::ConvFull:
      case Op::ConvDw:
      case Op::ConvPw: {
        const QConvLayer& l = *conv_at[id];
        const Buf& x = buf[nd.in0];
        int acc_exp = x.exp + l.wq.exponent;
        int out_edge_exp;
        if (l.has_bn) {
          out_edge_exp = qg.out_exp[bn_of[id]];
          out.exp = out_edge_exp;
        } else {
          out_edge_exp = out.exp;
        }
        out.q.assign((size_t)out.s.numel(), 0);
        auto finish = [&](int64_t acc, int c) -> int8_t {
          check_acc(acc, nd.name);
          if (l.has_bn) {
            int64_t a2 = (int64_t)l.scale[c] * acc + l.shift[c];
            check_acc(a2, nd.name);
            return requant(a2, acc_exp + l.scale_q.exponent, out_edge_exp);
          }
          if (!l.bias.empty()) acc += l.bias[c];
          check_acc(acc, nd.name);
          return requant(acc, acc_exp, out_edge_exp);
        };
        if (nd.op == Op::ConvDw) {
          const TensorShape xs = x.s;
          for (int c = 0; c < out.s.channels; ++c)
            for (int oy = 0; oy < out.s.height; ++oy)
              for (int ox = 0; ox < out.s.width; ++ox) {
                int64_t acc = 0;
                for (int i = 0; i < 3; ++i) {
                  int iy = oy * nd.stride + i - 1;
                  if (iy < 0 || iy >= xs.height) continue;
                  for (int j = 0; j < 3; ++j) {
                    int ix = ox * nd.stride + j - 1;
                    if (ix < 0 || ix >= xs.width) continue;
                    size_t widx = (size_t)c * 9 + i * 3 + j;
                    int64_t xv = x.q[((size_t)c * xs.height + iy) * xs.width + ix];
                    acc += wmul(l, widx, xv);
                  }
                }
                out.q[((size_t)c * out.s.height + oy) * out.s.width + ox] =
                    finish(acc, c);
              }
        } else if (nd.op == Op::ConvPw) {
          int ipg = x.s.channels / nd.groups;
          int opg = out.s.channels / nd.groups;
          for (int o = 0; o < out.s.channels; ++o) {
            int g = o / opg;
            for (long long i = 0; i < hw; ++i) {
              int64_t acc = 0;
              for (int ii = 0; ii < ipg; ++ii) {
                size_t widx = (size_t)o * ipg + ii;
                int64_t xv = x.q[(size_t)(g * ipg + ii) * hw + i];
                acc += wmul(l, widx, xv);
              }
              out.q[(size_t)o * hw + i] = finish(acc, o);
            }
          }
        } else {  // ConvFull 3x3
          const TensorShape xs = x.s;
          for (int o = 0; o < out.s.channels; ++o)
            for (int oy = 0; oy < out.s.height; ++oy)
              for (int ox = 0; ox < out.s.width; ++ox) {
                int64_t acc = 0;
                for (int c = 0; c < xs.channels; ++c)
                  for (int i = 0; i < 3; ++i) {
                    int iy = oy * nd.stride + i - 1;
                    if (iy < 0 || iy >= xs.height) continue;
                    for (int j = 0; j < 3; ++j) {
                      int ix = ox * nd.stride + j - 1;
                      if (ix < 0 || ix >= xs.width) continue;
                      size_t widx = ((size_t)o * xs.channels + c) * 9 + i * 3 + j;
                      int64_t xv =
                          x.q[((size_t)c * xs.height + iy) * xs.width + ix];
                      acc += wmul(l, widx, xv);
                    }
                  }
                out.q[((size_t)o * out.s.height + oy) * out.s.width + ox] =
                    finish(acc, o);
              }
        }
        break;
      }

      case Op::BatchNorm:  // folded into the producing conv
        out.q = buf[nd.in0].q;
        out.exp = buf[nd.in0].exp;
        break;

      case Op::Relu: {
        const Buf& x = buf[nd.in0];
        out.q.resize(x.q.size());
        for (size_t i = 0; i < x.q.size(); ++i) {
          int8_t v = requant(x.q[i], x.exp, out.exp);
          out.q[i] = v > 0 ? v : 0;
        }
        break;
      }

      case Op::SplitLo:
      case Op::SplitHi: {
        const Buf& x = buf[nd.in0];
        int half = x.s.channels / 2, off = nd.op == Op::SplitHi ? half : 0;
        out.q.resize((size_t)out.s.numel());
        for (int c = 0; c < half; ++c)
          for (long long i = 0; i < hw; ++i)
            out.q[(size_t)c * hw + i] =
                requant(x.q[(size_t)(c + off) * hw + i], x.exp, out.exp);
        break;
      }

      case Op::Concat: {
        const Buf& a = buf[nd.in0];
        const Buf& b = buf[nd.in1];
        out.q.resize((size_t)out.s.numel());
        size_t an = a.q.size();
        for (size_t i = 0; i < an; ++i)
          out.q[i] = requant(a.q[i], a.exp, out.exp);
        for (size_t i = 0; i < b.q.size(); ++i)
          out.q[an + i] = requant(b.q[i], b.exp, out.exp);
        break;
      }

      case Op::Shuffle: {
        const Buf& x = buf[nd.in0];
        auto perm = nn::shuffle_permutation(x.s.channels, nd.groups);
        out.q.resize(x.q.size());
        for (int c = 0; c < x.s.channels; ++c)
          for (long long i = 0; i < hw; ++i)
            out.q[(size_t)c * hw + i] =
                requant(x.q[(size_t)perm[c] * hw + i], x.exp, out.exp);
        break;
      }

      case Op::AlphaBlend: {
        const QBlendLayer& l = *blend_at[id];
        const Buf& xf = buf[nd.in0];
        const Buf& xt = buf[nd.in1];
        int e1 = l.ea.exponent + xf.exp, e2 = l.eb.exponent + xt.exp;
        int e = std::min(e1, e2);
        out.q.resize((size_t)out.s.numel());
        for (int c = 0; c < out.s.channels; ++c)
          for (long long i = 0; i < hw; ++i) {
            int64_t acc = ((int64_t)l.qa[c] * xf.q[(size_t)c * hw + i] << (e1 - e)) +
                          ((int64_t)l.qb[c] * xt.q[(size_t)c * hw + i] << (e2 - e));
            check_acc(acc, nd.name);
            out.q[(size_t)c * hw + i] = requant(acc, e, out.exp);
          }
        break;
      }

      case Op::CrossShuffleA:
      case Op::CrossShuffleB: {
        const Buf& a = buf[nd.in0];
        const Buf& b = buf[nd.in1];
        const Buf& lo = nd.op == Op::CrossShuffleA ? a : b;
        const Buf& hi = nd.op == Op::CrossShuffleA ? b : a;
        int half = out.s.channels / 2;
        out.q.resize((size_t)out.s.numel());
        for (int c = 0; c < half; ++c)
          for (long long i = 0; i < hw; ++i) {
            out.q[(size_t)c * hw + i] =
                requant(lo.q[(size_t)c * hw + i], lo.exp, out.exp);
            out.q[(size_t)(c + half) * hw + i] =
                requant(hi.q[(size_t)(c + half) * hw + i], hi.exp, out.exp);
          }
        break;
      }

      case Op::GlobalAvgPool: {
        const Buf& x = buf[nd.in0];
        long long in_hw = x.s.pixels();
        out.q.resize(out.s.channels);
        res.head_acc.assign(out.s.channels, 0);
        int shift = 0;
        while ((1LL << shift) < in_hw) ++shift;
        bool pow2 = (1LL << shift) == in_hw;
        for (int c = 0; c < out.s.channels; ++c) {
          int64_t acc = 0;
          for (long long i = 0; i < in_hw; ++i) acc += x.q[(size_t)c * in_hw + i];
          check_acc(acc, nd.name);
          res.head_acc[c] = acc;
          int64_t mean;
          if (pow2) {
            mean = rhe_shift(acc, shift);
          } else {
            double m = std::nearbyint((double)acc / (double)in_hw);
            mean = (int64_t)m;
          }
          out.q[c] = requant(mean, x.exp, out.exp);
        }
        break;
      }

      case Op::PwlAct: {
        const Buf& x = buf[nd.in0];
        out.q.resize(x.q.size());
        for (size_t i = 0; i < x.q.size(); ++i) {
          if (qg.head_pwl) {
            double v = std::ldexp((double)x.q[i], x.exp);
            double y = eval_pwl(*qg.head_pwl, v);
            out.q[i] = quantize_value((float)y, {out.exp});
          } else {
            out.q[i] = requant(x.q[i], x.exp, out.exp);
          }
        }
        break;
      }
    }
  }

  int last = (int)prog.nodes.size() - 1;
  res.out.dims = {1, buf[last].s.channels, buf[last].s.height, buf[last].s.width};
  res.out.q = buf[last].q;
  res.out.params = {buf[last].exp};
  return res;
}

// ---------------------------------------------------------------------------
// CBOR round trip. CSD codes are rebuilt from the weights on load.

namespace {

nlohmann::json bin(const std::vector<int8_t>& v) {
  return nlohmann::json::binary(
      std::vector<uint8_t>((const uint8_t*)v.data(),
                           (const uint8_t*)v.data() + v.size()));
}

nlohmann::json bin_u8(const std::vector<uint8_t>& v) {
  return nlohmann::json::binary(v);
}

nlohmann::json bin_i32(const std::vector<int32_t>& v) {
  std::vector<uint8_t> b(v.size() * 4);
  for (size_t i = 0; i < v.size(); ++i) {
    uint32_t u = (uint32_t)v[i];
    b[4 * i] = u & 0xff;
    b[4 * i + 1] = (u >> 8) & 0xff;
    b[4 * i + 2] = (u >> 16) & 0xff;
    b[4 * i + 3] = (u >> 24) & 0xff;
  }
  return nlohmann::json::binary(std::move(b));
}

std::vector<int8_t> unbin(const nlohmann::json& j) {
  const auto& b = j.get_binary();
  return std::vector<int8_t>((const int8_t*)b.data(),
                             (const int8_t*)b.data() + b.size());
}

std::vector<uint8_t> unbin_u8(const nlohmann::json& j) { return j.get_binary(); }

std::vector<int32_t> unbin_i32(const nlohmann::json& j) {
  const auto& b = j.get_binary();
  std::vector<int32_t> v(b.size() / 4);
  for (size_t i = 0; i < v.size(); ++i)
    v[i] = (int32_t)((uint32_t)b[4 * i] | ((uint32_t)b[4 * i + 1] << 8) |
                     ((uint32_t)b[4 * i + 2] << 16) |
                     ((uint32_t)b[4 * i + 3] << 24));
  return v;
}

}  // namespace

std::vector<uint8_t> qgraph_to_cbor(const QGraph& qg) {
  nlohmann::json j;
  j["hash"] = qg.hash;
  j["out_exp"] = qg.out_exp;
  auto& jc = j["convs"] = nlohmann::json::array();
  for (const auto& l : qg.convs) {
    nlohmann::json e;
    e["node"] = l.node;
    e["wexp"] = l.wq.exponent;
    e["w"] = bin(l.w);
    e["frozen"] = bin_u8(l.frozen);
    e["has_bn"] = l.has_bn;
    if (l.has_bn) {
      e["scale"] = bin(l.scale);
      e["sexp"] = l.scale_q.exponent;
      e["shift"] = bin_i32(l.shift);
    }
    if (!l.bias.empty()) e["bias"] = bin_i32(l.bias);
    jc.push_back(std::move(e));
  }
  auto& jb = j["blends"] = nlohmann::json::array();
  for (const auto& l : qg.blends) {
    nlohmann::json e;
    e["node"] = l.node;
    e["qa"] = bin(l.qa);
    e["qb"] = bin(l.qb);
    e["ea"] = l.ea.exponent;
    e["eb"] = l.eb.exponent;
    jb.push_back(std::move(e));
  }
  if (qg.head_pwl) {
    j["pwl_x"] = qg.head_pwl->xs;
    j["pwl_y"] = qg.head_pwl->ys;
  }
  return nlohmann::json::to_cbor(j);
}

QGraph qgraph_from_cbor(const std::vector<uint8_t>& bytes) {
  nlohmann::json j = nlohmann::json::from_cbor(bytes);
  QGraph qg;
  qg.hash = j.at("hash");
  qg.out_exp = j.at("out_exp").get<std::vector<int>>();
  for (const auto& e : j.at("convs")) {
    QConvLayer l;
    l.node = e.at("node");
    l.wq.exponent = e.at("wexp");
    l.w = unbin(e.at("w"));
    l.frozen = unbin_u8(e.at("frozen"));
    l.has_bn = e.at("has_bn");
    if (l.has_bn) {
      l.scale = unbin(e.at("scale"));
      l.scale_q.exponent = e.at("sexp");
      l.shift = unbin_i32(e.at("shift"));
    }
    if (e.contains("bias")) l.bias = unbin_i32(e.at("bias"));
    l.csd.resize(l.w.size());
    for (size_t i = 0; i < l.w.size(); ++i)
      if (!l.frozen.empty() && l.frozen[i]) l.csd[i] = encode_csd(l.w[i]);
    qg.convs.push_back(std::move(l));
  }
  for (const auto& e : j.at("blends")) {
    QBlendLayer l;
    l.node = e.at("node");
    l.qa = unbin(e.at("qa"));
    l.qb = unbin(e.at("qb"));
    l.ea.exponent = e.at("ea");
    l.eb.exponent = e.at("eb");
    qg.blends.push_back(std::move(l));
  }
  if (j.contains("pwl_x")) {
    PwlFunction f;
    f.xs = j.at("pwl_x").get<std::vector<double>>();
    f.ys = j.at("pwl_y").get<std::vector<double>>();
    qg.head_pwl = std::move(f);
  }
  return qg;
}

}  // namespace semifreddo
