#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "semifreddo/tensor.hpp"

namespace semifreddo {

enum class BlockKind {
  Stem,
  ShuffleRegular,
  ShuffleDownscale,
  AlphaBlend,
  CrossCoreShuffle,
  HeadPointwise,
  GlobalAvgPool,
  PwlActivation,
};

enum class Core { Shared, Frozen, Trainable1, Trainable2 };

// Maximum weight count of the configurable model head.
inline constexpr long long kHeadWeightBudget = 131072;

struct BlockSpec {
  BlockKind kind = BlockKind::ShuffleRegular;
  // ShuffleDownscale / Stem / HeadPointwise output width. 0 on a downscale
  // block means "double the input channels".
  int out_channels = 0;
  int stride = 2;        // Stem only
  int groups = 1;        // HeadPointwise only
  int pwl_segments = 0;  // PwlActivation only

  static BlockSpec stem(int out, int stride = 2) {
    return {BlockKind::Stem, out, stride, 1, 0};
  }
  static BlockSpec regular() { return {BlockKind::ShuffleRegular, 0, 1, 1, 0}; }
  static BlockSpec downscale(int out = 0) {
    return {BlockKind::ShuffleDownscale, out, 2, 1, 0};
  }
  bool operator==(const BlockSpec&) const = default;
};

struct SemifreddoModuleSpec {
  std::vector<BlockSpec> frozen;
  std::array<std::vector<BlockSpec>, 2> trainable;
  bool cross_shuffle = true;
};

struct HeadSpec {
  int out_channels = 0;
  int groups = 1;
  bool global_pool = true;
  bool pwl_activation = false;
  int pwl_segments = 16;
};

struct NetworkSpec {
  TensorShape input;
  BlockSpec stem;
  std::vector<SemifreddoModuleSpec> modules;
  int tail_repeat = 1;
  HeadSpec head;
  Core head_core = Core::Trainable1;
};

struct ParamPartition {
  long long frozen_conv = 0;
  long long trainable_conv_per_core = 0;
  long long alpha = 0;
  long long frozen_core_bn_affine = 0;
  long long trainable_bn = 0;
  long long head = 0;

  long long total() const {
    return frozen_conv + 2 * trainable_conv_per_core + alpha +
           frozen_core_bn_affine + trainable_bn + head;
  }
};

struct ValidationResult {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// Default desk-scale SemifreddoNet: stem 3x3/s2 -> 24ch, three stages of
// width 64/128/256. The frozen core runs 8 regular blocks per stage against
// 1 per trainable core, which puts the single-core effective freezing ratio
// at ~0.77.
NetworkSpec default_spec(TensorShape input = {3, 480, 640}, int head_out = 10,
                         int tail_repeat = 1);

// Reduced variant (widths 16/32/64) for fast training experiments.
NetworkSpec small_spec(TensorShape input = {1, 32, 32}, int head_out = 10,
                       int frozen_regs = 2);

SemifreddoModuleSpec make_module(int out_channels, int frozen_regular_blocks,
                                 int trainable_regular_blocks,
                                 bool cross_shuffle = true);

ValidationResult validate_spec(const NetworkSpec& spec);

// Shape of a segment's output given its input, applying stem/regular/
// downscale rules. Throws on odd channel counts.
TensorShape trace_segment(TensorShape in, const std::vector<BlockSpec>& seg);

// Edge name -> shape for the whole (unrolled) graph.
std::map<std::string, TensorShape> infer_shapes(const NetworkSpec& spec);

ParamPartition count_params(const NetworkSpec& spec);

// JSON round trip + content hash binding weight bundles to specs.
std::string spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const std::string& text);
uint64_t topology_hash(const NetworkSpec& spec);

const char* core_name(Core c);

}  // namespace semifreddo
