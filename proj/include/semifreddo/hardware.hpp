#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "semifreddo/quant.hpp"

namespace semifreddo {

// Area and throughput estimation for a quantized network. The absolute
// scale of the area constants is fixed by calibrate_cost_params; only the
// relative ratios (multiplier = 20 adders, SRAM bit = 0.6 adders, overhead
// = 15% of compute) are modeling assumptions.
struct CostParams {
  double a_adder = 1.0e-6;       // mm^2 per scaler adder
  double a_mult = 20.0e-6;       // mm^2 per 8x8 multiplier
  double a_sram_bit = 0.6e-6;    // mm^2 per SRAM bit
  double a_fixed_overhead = 0.0; // mm^2 flat (control, line buffers)
  double clock_hz = 61'440'000.0;         // one pixel per cycle
  double reload_bw_bits_per_s = 1.0e9;    // trainable-weight reload path
  double pipeline_utilization = 1.0;
  struct Baseline {
    double area_mm2 = 15.0;
    double utilization = 0.40;
  } baseline;
};

struct AreaRow {
  std::string name;
  long long frozen_adders = 0;    // CSD shift-add adders
  long long trainable_units = 0;  // multipliers (weights, BN scale, alpha)
  long long extra_adders = 0;     // BN shift / bias / blend adders
  long long sram_bits = 0;
  double mm2 = 0.0;
};

struct AreaReport {
  double frozen_scaler_mm2 = 0.0;
  double trainable_mult_mm2 = 0.0;
  double sram_mm2 = 0.0;
  double overhead_mm2 = 0.0;
  double total_mm2 = 0.0;  // exact sum of the four parts
  double reduction_factor = 0.0;
  std::vector<AreaRow> rows;
};

struct ThroughputReport {
  int width = 0, height = 0;
  int repeat = 1;
  double tail_fraction = 0.0;
  double reload_seconds_per_frame = 0.0;
  double fps = 0.0;
};

struct BaselineComparison {
  double area_reduction = 0.0;
  double effective_throughput_ratio = 0.0;
};

// Per-layer census over hardware that physically exists: tail repetitions
// reuse the repeat-0 blocks, so only repeat-0 nodes are counted.
AreaReport estimate_area(const QGraph& qg, const Program& prog,
                         const CostParams& params);

// Scale (a_adder, a_mult, a_sram_bit, a_fixed_overhead) by one global
// factor so that estimate_area(...).total_mm2 == target. Idempotent.
CostParams calibrate_cost_params(const QGraph& qg, const Program& prog,
                                 CostParams params,
                                 double target_total_mm2 = 4.0);

// MAC count of a built program (convs, blends, folded-BN scale work).
long long program_macs(const Program& prog);

ThroughputReport estimate_fps(const NetworkSpec& spec, int r, int width,
                              int height, const CostParams& params);

BaselineComparison compare_baseline(const AreaReport& report,
                                    const CostParams& params);

nlohmann::json area_report_to_json(const AreaReport& r);
nlohmann::json throughput_report_to_json(const ThroughputReport& r);
std::string area_report_csv(const AreaReport& r);   // one row per layer
std::string fps_sweep_csv(const std::vector<ThroughputReport>& rs);

}  // namespace semifreddo
