#include "semifreddo/freezing.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace semifreddo {

namespace {

// Backbone conv weight tensors get scheme masks; everything else stays
// trainable.
bool scheme_applies(const ParamInfo& p) {
  return p.is_conv_weight() && !p.head;
}

float fan_in_bound(const ParamInfo& p) {
  long long fan = 1;
  switch (p.kind) {
    case ParamKind::ConvFull: fan = (long long)p.dims[1] * 9; break;
    case ParamKind::ConvDw: fan = 9; break;
    case ParamKind::ConvPw: fan = p.dims[1]; break;
    default: fan = 1;
  }
  return std::sqrt(6.0f / (float)fan);
}

}  // namespace

FreezePlan make_freeze_plan(const Program& prog, FreezeScheme scheme,
                            uint32_t seed) {
  require(scheme.rho_first >= 0.0f && scheme.rho_first <= 1.0f &&
              scheme.rho_last >= 0.0f && scheme.rho_last <= 1.0f,
          "freeze ratios must be in [0,1]");
  if (scheme.kind == SchemeKind::RampDown)
    require(scheme.rho_first >= scheme.rho_last,
            "RampDown: first ratio must be >= last");
  if (scheme.kind == SchemeKind::RampUp)
    require(scheme.rho_first <= scheme.rho_last,
            "RampUp: first ratio must be <= last");

  FreezePlan plan;
  plan.scheme = scheme;
  plan.seed = seed;
  plan.masks.resize(prog.params.size());

  int depth = 0;
  for (const auto& p : prog.params)
    if (scheme_applies(p)) ++depth;

  Rng rng(seed);
  int layer = 0;
  for (size_t t = 0; t < prog.params.size(); ++t) {
    const ParamInfo& p = prog.params[t];
    if (!scheme_applies(p)) continue;
    float rho = 0.0f;
    switch (scheme.kind) {
      case SchemeKind::Uniform:
        rho = scheme.rho_first;
        break;
      case SchemeKind::RampDown:
      case SchemeKind::RampUp:
        rho = depth > 1 ? scheme.rho_first +
                              (scheme.rho_last - scheme.rho_first) *
                                  (float)layer / (float)(depth - 1)
                        : scheme.rho_first;
        break;
      case SchemeKind::CorePartition:
        rho = p.core == Core::Frozen ? 1.0f : 0.0f;
        break;
    }
    plan.layer_ratios.push_back(rho);
    ++layer;
    auto& mask = plan.masks[t];
    mask.assign((size_t)p.size, 0);
    long long k = (long long)std::ceil((double)rho * (double)p.size);
    k = std::min<long long>(k, p.size);
    if (k == p.size) {
      std::fill(mask.begin(), mask.end(), 1);
    } else if (k > 0) {
      // Partial Fisher-Yates draw of k indices without replacement.
      std::vector<int> idx(p.size);
      for (int i = 0; i < (int)p.size; ++i) idx[i] = i;
      for (long long i = 0; i < k; ++i) {
        long long j = i + rng.below((uint32_t)(p.size - i));
        std::swap(idx[i], idx[j]);
        mask[idx[i]] = 1;
      }
    }
  }
  return plan;
}

double effective_ratio(const FreezePlan& plan, const Program& prog,
                       ActiveCores active) {
  long long frozen = 0, total = 0;
  for (size_t t = 0; t < prog.params.size(); ++t) {
    const ParamInfo& p = prog.params[t];
    if (!scheme_applies(p)) continue;
    bool reachable = p.core == Core::Frozen || p.core == Core::Shared
                         ? true
                         : active.has(p.core);
    if (!reachable) continue;
    total += p.size;
    if (t < plan.masks.size())
      for (uint8_t m : plan.masks[t]) frozen += m;
  }
  return total > 0 ? (double)frozen / (double)total : 0.0;
}

void mask_gradients(GradientSet& grads, const FreezePlan& plan) {
  for (size_t t = 0; t < grads.g.size(); ++t) {
    if (t >= plan.masks.size() || plan.masks[t].empty()) continue;
    require(plan.masks[t].size() == grads.g[t].size(),
            "mask/gradient shape mismatch");
    for (size_t i = 0; i < grads.g[t].size(); ++i)
      if (plan.masks[t][i]) grads.g[t][i] = 0.0f;
  }
}

RejuvenationReport rejuvenate(const Program& prog, ModelState& state,
                              const FreezePlan& plan,
                              const RejuvenationPolicy& policy, Rng& rng,
                              MomentumBuffers* mom) {
  RejuvenationReport report;
  if (!policy.enabled) return report;
  require(policy.eps_rel > 0.0f, "rejuvenation threshold must be positive");

  for (size_t id = 0; id < prog.nodes.size(); ++id) {
    const Node& bn = prog.nodes[id];
    if (bn.op != Op::BatchNorm) continue;
    const Node& conv = prog.nodes[bn.in0];
    const ParamInfo& winfo = prog.params[conv.p0];
    const auto& var = state.tensors[bn.p3];

    std::vector<float> sorted = var;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2,
                     sorted.end());
    float median = sorted[sorted.size() / 2];
    float tau = policy.eps_rel * median;

    int rows = winfo.dims[0];
    long long row_len = winfo.size / rows;
    float bound = fan_in_bound(winfo);
    const std::vector<uint8_t>* mask =
        conv.p0 < (int)plan.masks.size() && !plan.masks[conv.p0].empty()
            ? &plan.masks[conv.p0]
            : nullptr;

    for (int c = 0; c < (int)var.size(); ++c) {
      // A non-positive variance is dead regardless of the layer median
      // (which is itself zero when the whole layer has collapsed).
      if (!(var[c] < tau || var[c] <= 0.0f)) continue;
      report.events.push_back({bn.name, c, var[c]});
      auto& w = state.tensors[conv.p0];
      for (long long i = c * row_len; i < (c + 1) * row_len; ++i) {
        float fresh = rng.uniform(-bound, bound);
        if (mask && (*mask)[i]) continue;  // frozen entries stay put
        w[i] = fresh;
        if (mom) mom->v[conv.p0][i] = 0.0f;
      }
      state.tensors[bn.p0][c] = 1.0f;  // gamma
      state.tensors[bn.p1][c] = 0.0f;  // beta
      state.tensors[bn.p2][c] = 0.0f;  // moving mean
      state.tensors[bn.p3][c] = 1.0f;  // moving var
      if (mom) {
        mom->v[bn.p0][c] = 0.0f;
        mom->v[bn.p1][c] = 0.0f;
      }
    }
  }
  return report;
}

std::string plan_summary_json(const FreezePlan& plan, const Program& prog) {
  nlohmann::json j;
  switch (plan.scheme.kind) {
    case SchemeKind::Uniform: j["scheme"] = "uniform"; break;
    case SchemeKind::RampDown: j["scheme"] = "ramp_down"; break;
    case SchemeKind::RampUp: j["scheme"] = "ramp_up"; break;
    case SchemeKind::CorePartition: j["scheme"] = "core_partition"; break;
  }
  j["rho_first"] = plan.scheme.rho_first;
  j["rho_last"] = plan.scheme.rho_last;
  j["seed"] = plan.seed;
  j["layer_ratios"] = plan.layer_ratios;
  j["counting_convention"] =
      "conv weights only; BN affine, alpha logits and head excluded";
  j["effective_ratio_single_core"] =
      effective_ratio(plan, prog, {true, true, false});
  j["effective_ratio_two_cores"] =
      effective_ratio(plan, prog, {true, true, true});
  return j.dump(2);
}

}  // namespace semifreddo
