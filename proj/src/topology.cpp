#include "semifreddo/topology.hpp"

#include <json.hpp>

#include "semifreddo/graph.hpp"

namespace semifreddo {

using nlohmann::json;

const char* core_name(Core c) {
  switch (c) {
    case Core::Shared: return "shared";
    case Core::Frozen: return "frozen";
    case Core::Trainable1: return "t1";
    case Core::Trainable2: return "t2";
  }
  return "?";
}

SemifreddoModuleSpec make_module(int out_channels, int frozen_regular_blocks,
                                 int trainable_regular_blocks,
                                 bool cross_shuffle) {
  SemifreddoModuleSpec m;
  m.cross_shuffle = cross_shuffle;
  m.frozen.push_back(BlockSpec::downscale(out_channels));
  for (int i = 0; i < frozen_regular_blocks; ++i)
    m.frozen.push_back(BlockSpec::regular());
  for (auto& t : m.trainable) {
    t.push_back(BlockSpec::downscale(out_channels));
    for (int i = 0; i < trainable_regular_blocks; ++i)
      t.push_back(BlockSpec::regular());
  }
  return m;
}

NetworkSpec default_spec(TensorShape input, int head_out, int tail_repeat) {
  NetworkSpec s;
  s.input = input;
  s.stem = BlockSpec::stem(24, 2);
  s.modules = {make_module(64, 8, 1), make_module(128, 8, 1),
               make_module(256, 8, 1)};
  s.tail_repeat = tail_repeat;
  s.head.out_channels = head_out;
  return s;
}

NetworkSpec small_spec(TensorShape input, int head_out, int frozen_regs) {
  NetworkSpec s;
  s.input = input;
  s.stem = BlockSpec::stem(8, 2);
  s.modules = {make_module(16, frozen_regs, 1), make_module(32, frozen_regs, 1),
               make_module(64, frozen_regs, 1)};
  s.head.out_channels = head_out;
  return s;
}

TensorShape trace_segment(TensorShape in, const std::vector<BlockSpec>& seg) {
  TensorShape s = in;
  for (const auto& blk : seg) {
    switch (blk.kind) {
      case BlockKind::Stem:
        require(blk.out_channels > 0 && blk.stride >= 1,
                "stem needs explicit out_channels and stride");
        s = {blk.out_channels, (s.height + blk.stride - 1) / blk.stride,
             (s.width + blk.stride - 1) / blk.stride};
        break;
      case BlockKind::ShuffleRegular:
        require(s.channels % 2 == 0, "odd channel count");
        break;
      case BlockKind::ShuffleDownscale: {
        int out = blk.out_channels ? blk.out_channels : 2 * s.channels;
        require(out % 2 == 0, "odd channel count");
        s = {out, (s.height + 1) / 2, (s.width + 1) / 2};
        break;
      }
      default:
        require(false, "unexpected block kind in segment");
    }
  }
  return s;
}

namespace {

int stride_product(const std::vector<BlockSpec>& seg) {
  int p = 1;
  for (const auto& b : seg)
    if (b.kind == BlockKind::ShuffleDownscale) p *= 2;
  return p;
}

}  // namespace

ValidationResult validate_spec(const NetworkSpec& spec) {
  ValidationResult r;
  auto bad = [&](const std::string& m) { r.violations.push_back(m); };

  if (spec.input.channels < 1 || spec.input.height < 1 || spec.input.width < 1)
    bad("input shape: all dimensions must be >= 1");
  if (spec.stem.out_channels < 1) bad("stem: output channels must be >= 1");
  if (spec.modules.empty()) bad("no Semifreddo modules");
  if (spec.tail_repeat < 1) bad("tail repeat count must be >= 1");

  TensorShape cur{spec.stem.out_channels,
                  (spec.input.height + spec.stem.stride - 1) / spec.stem.stride,
                  (spec.input.width + spec.stem.stride - 1) / spec.stem.stride};
  int strides = spec.stem.stride;
  bool trace_ok = true;
  for (size_t m = 0; m < spec.modules.size(); ++m) {
    const auto& mod = spec.modules[m];
    std::string where = "module " + std::to_string(m);
    TensorShape f{};
    try {
      f = trace_segment(cur, mod.frozen);
    } catch (const std::exception& e) {
      bad(where + " frozen segment: " + e.what());
      trace_ok = false;
      break;
    }
    for (int k = 0; k < 2; ++k) {
      try {
        TensorShape t = trace_segment(cur, mod.trainable[k]);
        if (!(t == f))
          bad(where + ": blend shape mismatch, frozen " + f.str() +
              " vs trainable core " + std::to_string(k + 1) + " " + t.str());
      } catch (const std::exception& e) {
        bad(where + " trainable segment " + std::to_string(k + 1) + ": " +
            e.what());
      }
    }
    strides *= stride_product(mod.frozen);
    cur = f;
  }
  if (trace_ok && strides != 16)
    bad("total downscale is " + std::to_string(strides) + "x, expected 16x");

  if (spec.head.out_channels > 0 && trace_ok) {
    if (spec.head.groups < 1 || cur.channels % spec.head.groups != 0 ||
        spec.head.out_channels % spec.head.groups != 0) {
      bad("head: group count must divide input and output channels");
    } else {
      long long w = (long long)cur.channels / spec.head.groups *
                    spec.head.out_channels;
      if (w > kHeadWeightBudget)
        bad("head budget exceeded: " + std::to_string(w) + " weights > " +
            std::to_string(kHeadWeightBudget));
    }
  }
  return r;
}

std::map<std::string, TensorShape> infer_shapes(const NetworkSpec& spec) {
  Program p = build_program(spec);
  std::map<std::string, TensorShape> out;
  for (const auto& n : p.nodes) out[n.name] = n.out_shape;
  return out;
}

ParamPartition count_params(const NetworkSpec& spec) {
  Program p = build_program(spec);
  ParamPartition pp;
  long long t2_conv = 0;
  for (const auto& q : p.params) {
    if (q.is_stat()) continue;  // moving stats are state, not parameters
    if (q.head) {
      pp.head += q.size;
    } else if (q.kind == ParamKind::Alpha) {
      pp.alpha += q.size;
    } else if (q.is_conv_weight()) {
      if (q.core == Core::Frozen)
        pp.frozen_conv += q.size;
      else if (q.core == Core::Trainable1)
        pp.trainable_conv_per_core += q.size;
      else
        t2_conv += q.size;
    } else if (q.kind == ParamKind::BnGamma || q.kind == ParamKind::BnBeta) {
      if (q.core == Core::Frozen)
        pp.frozen_core_bn_affine += q.size;
      else
        pp.trainable_bn += q.size;
    }
  }
  // Symmetric trainable cores are assumed by the per-core field.
  require(t2_conv == pp.trainable_conv_per_core,
          "asymmetric trainable cores in count_params");
  return pp;
}

// ---------------------------------------------------------------------------
// JSON round trip

namespace {

json block_to_json(const BlockSpec& b) {
  json j;
  switch (b.kind) {
    case BlockKind::ShuffleRegular:
      j["kind"] = "regular";
      break;
    case BlockKind::ShuffleDownscale:
      j["kind"] = "downscale";
      if (b.out_channels) j["out_channels"] = b.out_channels;
      break;
    default:
      require(false, "unserializable block kind");
  }
  return j;
}

BlockSpec block_from_json(const json& j) {
  std::string k = j.at("kind");
  if (k == "regular") return BlockSpec::regular();
  if (k == "downscale") return BlockSpec::downscale(j.value("out_channels", 0));
  throw std::runtime_error("unknown block kind: " + k);
}

Core core_from_name(const std::string& s) {
  if (s == "frozen") return Core::Frozen;
  if (s == "t1") return Core::Trainable1;
  if (s == "t2") return Core::Trainable2;
  throw std::runtime_error("unknown core: " + s);
}

}  // namespace

std::string spec_to_json(const NetworkSpec& s) {
  json j;
  j["input"] = {{"channels", s.input.channels},
                {"height", s.input.height},
                {"width", s.input.width}};
  j["stem"] = {{"out_channels", s.stem.out_channels}, {"stride", s.stem.stride}};
  j["modules"] = json::array();
  for (const auto& m : s.modules) {
    json jm;
    jm["frozen"] = json::array();
    for (const auto& b : m.frozen) jm["frozen"].push_back(block_to_json(b));
    jm["trainable"] = json::array();
    for (const auto& t : m.trainable) {
      json jt = json::array();
      for (const auto& b : t) jt.push_back(block_to_json(b));
      jm["trainable"].push_back(jt);
    }
    jm["cross_shuffle"] = m.cross_shuffle;
    j["modules"].push_back(jm);
  }
  j["tail_repeat"] = s.tail_repeat;
  j["head"] = {{"out_channels", s.head.out_channels},
               {"groups", s.head.groups},
               {"global_pool", s.head.global_pool},
               {"pwl_activation", s.head.pwl_activation},
               {"pwl_segments", s.head.pwl_segments}};
  j["head_core"] = core_name(s.head_core);
  return j.dump(2);
}

NetworkSpec spec_from_json(const std::string& text) {
  json j = json::parse(text);
  NetworkSpec s;
  s.input = {j.at("input").at("channels"), j.at("input").at("height"),
             j.at("input").at("width")};
  s.stem = BlockSpec::stem(j.at("stem").at("out_channels"),
                           j.at("stem").value("stride", 2));
  for (const auto& jm : j.at("modules")) {
    SemifreddoModuleSpec m;
    for (const auto& jb : jm.at("frozen")) m.frozen.push_back(block_from_json(jb));
    const auto& jt = jm.at("trainable");
    require(jt.size() == 2, "exactly two trainable segments required");
    for (int k = 0; k < 2; ++k)
      for (const auto& jb : jt[k]) m.trainable[k].push_back(block_from_json(jb));
    m.cross_shuffle = jm.value("cross_shuffle", true);
    s.modules.push_back(std::move(m));
  }
  s.tail_repeat = j.value("tail_repeat", 1);
  if (j.contains("head")) {
    const auto& jh = j.at("head");
    s.head.out_channels = jh.value("out_channels", 0);
    s.head.groups = jh.value("groups", 1);
    s.head.global_pool = jh.value("global_pool", true);
    s.head.pwl_activation = jh.value("pwl_activation", false);
    s.head.pwl_segments = jh.value("pwl_segments", 16);
  }
  s.head_core = core_from_name(j.value("head_core", "t1"));
  return s;
}

uint64_t topology_hash(const NetworkSpec& spec) {
  // FNV-1a over the canonical JSON form.
  std::string text = spec_to_json(spec);
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace semifreddo
