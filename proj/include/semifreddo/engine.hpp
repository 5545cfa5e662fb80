#pragma once

#include <cstdint>
#include <vector>

#include "semifreddo/graph.hpp"
#include "semifreddo/nn.hpp"
#include "semifreddo/tensor.hpp"

namespace semifreddo {

enum class Mode { Train, Eval };

// All parameter tensors of a Program, aligned with Program::params.
struct ModelState {
  uint64_t hash = 0;
  uint32_t seed = 0;
  std::vector<std::vector<float>> tensors;
};

struct GradientSet {
  std::vector<std::vector<float>> g;  // aligned with Program::params
};

struct OptimizerConfig {
  float lr = 0.05f;
  float momentum = 0.9f;
  float weight_decay = 0.0f;
  int batch_size = 32;
};

struct MomentumBuffers {
  std::vector<std::vector<float>> v;
};

// Conv weights ~ U(+-sqrt(6/fan_in)), alpha logits ~ U(-1,1), BN affine
// (1, 0), moving stats (0, 1). Frozen tail repetitions copy repetition 0.
ModelState init_state(const Program& prog, uint32_t seed);
MomentumBuffers init_momentum(const Program& prog);

struct ForwardResult {
  std::vector<Tensor> slots;          // per-node activations
  std::vector<char> computed;         // which slots hold data
  std::vector<nn::BnSaved<float>> bn; // train-mode batch stats per node
  Mode mode = Mode::Eval;
  ActiveCores active;
  bool frozen_bn_eval = false;

  const Tensor& head() const;
  const Tensor& backbone(const Program& prog, Core core) const;
};

// Executes the graph. Train mode normalizes by batch stats and updates
// moving stats; with frozen_bn_eval, frozen-core BN layers keep using their
// stored moving stats (CorePartition semantics).
ForwardResult forward_pass(const Program& prog, ModelState& state,
                           const Tensor& batch, Mode mode,
                           ActiveCores active = {},
                           bool frozen_bn_eval = false);

// Reverse pass from a gradient at the head output. Gradients are produced
// for every reachable tensor, frozen ones included; masking is a separate
// step (freezing module).
GradientSet backward_pass(const Program& prog, const ModelState& state,
                          const ForwardResult& fwd, const Tensor& dhead);

// v <- momentum*v + g + wd*w ; w <- w - lr*v, skipped wherever the mask is
// set. Masks align with Program::params; an empty mask means fully trainable.
// Moving-stat tensors are never touched.
void sgd_step_masked(const Program& prog, ModelState& state,
                     const GradientSet& grads,
                     const std::vector<std::vector<uint8_t>>& masks,
                     const OptimizerConfig& cfg, MomentumBuffers& mom);

}  // namespace semifreddo
