#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "semifreddo/engine.hpp"
#include "semifreddo/freezing.hpp"
#include "semifreddo/graph.hpp"
#include "semifreddo/pwl.hpp"

namespace semifreddo {

// Symmetric 8-bit fixed point: value = q * 2^exponent, q in [-127, 127].
struct QuantParams {
  int exponent = 0;
  bool operator==(const QuantParams&) const = default;
};

// Smallest e with 127 * 2^e >= max|x|; e = 0 for all-zero samples.
QuantParams calibrate_tensor(const float* data, size_t n);
QuantParams calibrate_tensor(const std::vector<float>& v);

// clamp(round-half-even(x * 2^-e), -127, 127)
int8_t quantize_value(float x, QuantParams p);
float dequantize_value(int8_t q, QuantParams p);

struct QTensor {
  std::vector<int> dims;
  std::vector<int8_t> q;
  QuantParams params;
};

QTensor quantize(const Tensor& x, QuantParams p);

// Canonical signed digit code: digits in {-1,0,+1}, no two adjacent
// nonzeros. digits[i] weights 2^i.
struct CsdCode {
  std::vector<int8_t> digits;
  int nonzeros() const {
    int n = 0;
    for (int8_t d : digits) n += d != 0;
    return n;
  }
  int adder_cost() const { return std::max(0, nonzeros() - 1); }
};

CsdCode encode_csd(int q);  // q in [-127, 127]
int decode_csd(const CsdCode& c);
// x * decode(c) via shift-add.
int64_t csd_multiply(int64_t x, const CsdCode& c);

// ---------------------------------------------------------------------------

struct QConvLayer {
  int node = -1;           // conv node id in the Program
  QuantParams wq;
  std::vector<int8_t> w;   // all weights (frozen ones mirrored by CSD codes)
  std::vector<uint8_t> frozen;
  std::vector<CsdCode> csd;  // aligned with w; empty digits = pruned/trainable
  // Folded batch norm (absent for the head conv): y = scale_c * acc + shift_c
  bool has_bn = false;
  std::vector<int8_t> scale;
  QuantParams scale_q;
  std::vector<int32_t> shift;   // at exponent in_exp + w_exp + scale_exp
  std::vector<int32_t> bias;    // head conv, at exponent in_exp + w_exp
  long long frozen_count() const;
  long long scaler_count() const;  // frozen nonzero (pruned zeros absent)
  long long trainable_count() const;
};

struct QBlendLayer {
  int node = -1;
  std::vector<int8_t> qa, qb;  // alpha and (1 - alpha) per channel
  QuantParams ea, eb;
};

struct QGraph {
  uint64_t hash = 0;
  std::vector<int> out_exp;  // per node output-edge exponent
  std::vector<QConvLayer> convs;
  std::vector<QBlendLayer> blends;
  std::optional<PwlFunction> head_pwl;
};

// Quantize a trained state: frozen conv weights become CSD scaler codes with
// zeros pruned, trainable weights stay int8, BN folds into per-channel
// scale/shift at eval stats, activation exponents calibrated from batch
// maxima per edge.
QGraph build_qgraph(const Program& prog, const ModelState& state,
                    const FreezePlan& plan,
                    const std::vector<Tensor>& calibration_batches);

struct QForwardResult {
  QTensor out;                     // final edge (head if present)
  std::vector<int64_t> head_acc;   // integer logit accumulators (pre-requant)
};

// Batch-1 integer inference: 32-bit accumulators, round-half-even
// requantization at each edge, frozen weights applied via CSD shift-add.
// Overflow raises instead of wrapping.
QForwardResult quantized_forward(const Program& prog, const QGraph& qg,
                                 const QTensor& input);

QTensor quantize_input(const Tensor& image, const QGraph& qg,
                       const Program& prog);

std::vector<uint8_t> qgraph_to_cbor(const QGraph& qg);
QGraph qgraph_from_cbor(const std::vector<uint8_t>& bytes);

}  // namespace semifreddo
