#pragma once

#include "semifreddo/dataset.hpp"
#include "semifreddo/engine.hpp"
#include "semifreddo/freezing.hpp"

namespace semifreddo {

struct EpochMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  RejuvenationReport rejuvenation;
};

// One pass over the dataset in a seeded shuffle order, masked SGD updates,
// one rejuvenation sweep at the end. Deterministic given the seeds.
EpochMetrics train_epoch(const Program& prog, ModelState& state,
                         const FreezePlan& plan, const Dataset& data,
                         const OptimizerConfig& cfg,
                         const RejuvenationPolicy& policy, MomentumBuffers& mom,
                         uint32_t epoch_seed);

// Eval-mode top-1 accuracy.
double evaluate(const Program& prog, ModelState& state, const Dataset& data,
                int batch_size = 64);

}  // namespace semifreddo
