#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semifreddo/engine.hpp"
#include "semifreddo/graph.hpp"
#include "semifreddo/rng.hpp"

namespace semifreddo {

enum class SchemeKind { Uniform, RampDown, RampUp, CorePartition };

struct FreezeScheme {
  SchemeKind kind = SchemeKind::CorePartition;
  float rho_first = 0.0f;
  float rho_last = 0.0f;

  static FreezeScheme uniform(float rho) {
    return {SchemeKind::Uniform, rho, rho};
  }
  static FreezeScheme ramp_down(float first, float last) {
    return {SchemeKind::RampDown, first, last};
  }
  static FreezeScheme ramp_up(float first, float last) {
    return {SchemeKind::RampUp, first, last};
  }
  static FreezeScheme core_partition() { return {SchemeKind::CorePartition}; }
};

// Per-parameter-tensor boolean freeze masks (true = frozen), aligned with
// Program::params. Masks exist only for backbone conv weight tensors; BN
// affine, alpha logits and the head are never frozen.
struct FreezePlan {
  FreezeScheme scheme;
  uint32_t seed = 0;
  std::vector<std::vector<uint8_t>> masks;
  // Per-conv-layer ratios in depth order, as applied.
  std::vector<float> layer_ratios;
};

FreezePlan make_freeze_plan(const Program& prog, FreezeScheme scheme,
                            uint32_t seed);

// frozen conv weights / conv weights reachable by the active cores.
// Convention: conv weights only; BN, alpha and the head are excluded.
double effective_ratio(const FreezePlan& plan, const Program& prog,
                       ActiveCores active);

// Zeroes gradient entries at frozen positions.
void mask_gradients(GradientSet& grads, const FreezePlan& plan);

struct RejuvenationPolicy {
  float eps_rel = 1e-3f;  // relative to the layer's median moving variance
  bool enabled = true;
};

struct RejuvenationEvent {
  std::string layer;
  int channel = 0;
  float moving_var = 0.0f;
};

struct RejuvenationReport {
  std::vector<RejuvenationEvent> events;
  int count() const { return (int)events.size(); }
};

// End-of-epoch pass: channels whose BN moving variance sits below
// eps_rel * median(layer variances) get their producing trainable conv
// weights re-initialized, moving stats reset to (0,1), affine to (1,0) and
// momentum cleared. Frozen weight entries are never touched.
RejuvenationReport rejuvenate(const Program& prog, ModelState& state,
                              const FreezePlan& plan,
                              const RejuvenationPolicy& policy, Rng& rng,
                              MomentumBuffers* mom);

std::string plan_summary_json(const FreezePlan& plan, const Program& prog);

}  // namespace semifreddo
