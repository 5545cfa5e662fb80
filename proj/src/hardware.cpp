#include "semifreddo/hardware.hpp"

#include <cmath>
#include <sstream>

namespace semifreddo {

namespace {

double row_mm2(const AreaRow& r, const CostParams& p) {
  return r.frozen_adders * p.a_adder + r.trainable_units * p.a_mult +
         r.extra_adders * p.a_adder + r.sram_bits * p.a_sram_bit;
}

}  // namespace

AreaReport estimate_area(const QGraph& qg, const Program& prog,
                         const CostParams& params) {
  require(qg.hash == prog.hash, "topology mismatch");
  AreaReport rep;
  long long frozen_adders = 0, mults = 0, adders = 0, bits = 0;

  for (const auto& l : qg.convs) {
    const Node& nd = prog.nodes[l.node];
    if (nd.repeat != 0) continue;  // repeated tail reuses repeat-0 hardware
    AreaRow row;
    row.name = nd.name;
    for (size_t i = 0; i < l.w.size(); ++i) {
      if (!l.frozen.empty() && l.frozen[i]) {
        row.frozen_adders += l.csd[i].adder_cost();
      } else {
        row.trainable_units += 1;
        row.sram_bits += 8;
      }
    }
    if (l.has_bn) {
      // per-channel folded scale (multiplier + 8b) and shift (adder + 32b)
      row.trainable_units += (long long)l.scale.size();
      row.extra_adders += (long long)l.shift.size();
      row.sram_bits += 8LL * (long long)l.scale.size() +
                       32LL * (long long)l.shift.size();
    }
    if (!l.bias.empty()) {
      row.extra_adders += (long long)l.bias.size();
      row.sram_bits += 32LL * (long long)l.bias.size();
    }
    row.mm2 = row_mm2(row, params);
    frozen_adders += row.frozen_adders;
    mults += row.trainable_units;
    adders += row.extra_adders;
    bits += row.sram_bits;
    rep.rows.push_back(std::move(row));
  }

  for (const auto& l : qg.blends) {
    const Node& nd = prog.nodes[l.node];
    if (nd.repeat != 0) continue;
    AreaRow row;
    row.name = nd.name;
    // per channel: two multipliers (alpha, 1-alpha), one adder, 16 stored bits
    long long c = (long long)l.qa.size();
    row.trainable_units = 2 * c;
    row.extra_adders = c;
    row.sram_bits = 16 * c;
    row.mm2 = row_mm2(row, params);
    mults += row.trainable_units;
    adders += row.extra_adders;
    bits += row.sram_bits;
    rep.rows.push_back(std::move(row));
  }

  rep.frozen_scaler_mm2 = frozen_adders * params.a_adder;
  rep.trainable_mult_mm2 = mults * params.a_mult + adders * params.a_adder;
  rep.sram_mm2 = bits * params.a_sram_bit;
  double compute =
      rep.frozen_scaler_mm2 + rep.trainable_mult_mm2 + rep.sram_mm2;
  rep.overhead_mm2 = 0.15 * compute + params.a_fixed_overhead;
  rep.total_mm2 = rep.frozen_scaler_mm2 + rep.trainable_mult_mm2 +
                  rep.sram_mm2 + rep.overhead_mm2;
  rep.reduction_factor =
      rep.total_mm2 > 0 ? params.baseline.area_mm2 / rep.total_mm2 : 0.0;
  return rep;
}

CostParams calibrate_cost_params(const QGraph& qg, const Program& prog,
                                 CostParams params,
                                 double target_total_mm2) {
  AreaReport rep = estimate_area(qg, prog, params);
  require(rep.total_mm2 > 0, "degenerate qgraph: zero estimated area");
  double s = target_total_mm2 / rep.total_mm2;
  params.a_adder *= s;
  params.a_mult *= s;
  params.a_sram_bit *= s;
  params.a_fixed_overhead *= s;
  return params;
}

long long program_macs(const Program& prog) {
  long long macs = 0;
  for (const auto& nd : prog.nodes) {
    long long out = nd.out_shape.numel();
    switch (nd.op) {
      case Op::ConvFull:
        macs += out * prog.nodes[nd.in0].out_shape.channels * 9;
        break;
      case Op::ConvDw:
        macs += out * 9;
        break;
      case Op::ConvPw:
        macs += out * (prog.nodes[nd.in0].out_shape.channels / nd.groups);
        break;
      case Op::AlphaBlend:
        macs += 2 * out;
        break;
      case Op::BatchNorm:
        macs += out;
        break;
      default:
        break;
    }
  }
  return macs;
}

ThroughputReport estimate_fps(const NetworkSpec& spec, int r, int width,
                              int height, const CostParams& params) {
  require(r >= 1, "repeat count must be >= 1");
  NetworkSpec s1 = spec;
  s1.tail_repeat = 1;
  s1.input.height = height;
  s1.input.width = width;
  Program base = build_program(s1);

  double tail_fraction = 0.0;
  long long reload_params = 0;
  {
    Program two = unroll_repeats(s1, 2);
    long long base_macs = program_macs(base);
    long long tail_macs = 0;
    for (const auto& nd : two.nodes) {
      long long out = nd.out_shape.numel();
      if (nd.repeat != 1) continue;
      switch (nd.op) {
        case Op::ConvFull:
          tail_macs += out * two.nodes[nd.in0].out_shape.channels * 9;
          break;
        case Op::ConvDw:
          tail_macs += out * 9;
          break;
        case Op::ConvPw:
          tail_macs += out * (two.nodes[nd.in0].out_shape.channels / nd.groups);
          break;
        case Op::AlphaBlend:
          tail_macs += 2 * out;
          break;
        case Op::BatchNorm:
          tail_macs += out;
          break;
        default:
          break;
      }
    }
    tail_fraction = (double)tail_macs / (double)base_macs;
    // Weights that must be swapped in per extra repetition: the trainable
    // parameters of one tail unit (frozen tail weights are hardwired).
    for (const auto& p : two.params)
      if (p.repeat == 1 && p.tail_src < 0 && !p.is_stat())
        reload_params += p.size;
  }

  ThroughputReport rep;
  rep.width = width;
  rep.height = height;
  rep.repeat = r;
  rep.tail_fraction = tail_fraction;
  double pixel_time = (double)width * height / params.clock_hz;
  rep.reload_seconds_per_frame =
      (r - 1) * (8.0 * (double)reload_params / params.reload_bw_bits_per_s);
  double frame_time = pixel_time * (1.0 + (r - 1) * tail_fraction) +
                      rep.reload_seconds_per_frame;
  rep.fps = 1.0 / frame_time;
  return rep;
}

BaselineComparison compare_baseline(const AreaReport& report,
                                    const CostParams& params) {
  BaselineComparison c;
  c.area_reduction = report.reduction_factor;
  c.effective_throughput_ratio =
      params.pipeline_utilization / params.baseline.utilization;
  return c;
}

nlohmann::json area_report_to_json(const AreaReport& r) {
  nlohmann::json j;
  j["frozen_scaler_mm2"] = r.frozen_scaler_mm2;
  j["trainable_mult_mm2"] = r.trainable_mult_mm2;
  j["sram_mm2"] = r.sram_mm2;
  j["overhead_mm2"] = r.overhead_mm2;
  j["total_mm2"] = r.total_mm2;
  j["reduction_factor"] = r.reduction_factor;
  auto& rows = j["layers"] = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"name", row.name},
                    {"frozen_adders", row.frozen_adders},
                    {"trainable_units", row.trainable_units},
                    {"extra_adders", row.extra_adders},
                    {"sram_bits", row.sram_bits},
                    {"mm2", row.mm2}});
  return j;
}

nlohmann::json throughput_report_to_json(const ThroughputReport& r) {
  return {{"width", r.width},
          {"height", r.height},
          {"repeat", r.repeat},
          {"tail_fraction", r.tail_fraction},
          {"reload_seconds_per_frame", r.reload_seconds_per_frame},
          {"fps", r.fps}};
}

std::string area_report_csv(const AreaReport& r) {
  std::ostringstream os;
  os << "layer,frozen_adders,trainable_units,extra_adders,sram_bits,mm2\n";
  for (const auto& row : r.rows)
    os << row.name << ',' << row.frozen_adders << ',' << row.trainable_units
       << ',' << row.extra_adders << ',' << row.sram_bits << ',' << row.mm2
       << '\n';
  return os.str();
}

std::string fps_sweep_csv(const std::vector<ThroughputReport>& rs) {
  std::ostringstream os;
  os << "repeat,tail_fraction,reload_s,fps\n";
  for (const auto& r : rs)
    os << r.repeat << ',' << r.tail_fraction << ',' << r.reload_seconds_per_frame
       << ',' << r.fps << '\n';
  return os.str();
}

}  // namespace semifreddo
