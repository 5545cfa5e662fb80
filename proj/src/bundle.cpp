#include "semifreddo/bundle.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>

namespace semifreddo {

namespace {

constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

void put_f32(std::vector<uint8_t>& out, float f) {
  put_u32(out, std::bit_cast<uint32_t>(f));
}

struct Reader {
  const std::vector<uint8_t>& b;
  size_t pos = 0;
  const char* err;
  Reader(const std::vector<uint8_t>& bytes, const char* on_underrun)
      : b(bytes), err(on_underrun) {}
  void need(size_t n) const {
    if (pos + n > b.size()) throw std::runtime_error(err);
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= (uint32_t)b[pos + i] << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= (uint64_t)b[pos + i] << (8 * i);
    pos += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::vector<uint8_t> raw(size_t n) {
    need(n);
    std::vector<uint8_t> v(b.begin() + pos, b.begin() + pos + n);
    pos += n;
    return v;
  }
};

uint32_t crc_of(const std::vector<uint8_t>& payload) {
  return (uint32_t)crc32(0L, payload.data(), (uInt)payload.size());
}

std::vector<uint8_t> spec_payload(const NetworkSpec& spec) {
  std::string s = spec_to_json(spec);
  return std::vector<uint8_t>(s.begin(), s.end());
}

std::vector<uint8_t> state_payload(const ModelState& st) {
  std::vector<uint8_t> out;
  put_u32(out, st.seed);
  put_u32(out, (uint32_t)st.tensors.size());
  for (const auto& t : st.tensors) {
    put_u64(out, t.size());
    for (float f : t) put_f32(out, f);
  }
  return out;
}

ModelState parse_state(const std::vector<uint8_t>& payload, uint64_t hash) {
  Reader r(payload, "corrupt section FWTS");
  ModelState st;
  st.hash = hash;
  st.seed = r.u32();
  uint32_t n = r.u32();
  st.tensors.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    uint64_t sz = r.u64();
    st.tensors[i].resize(sz);
    for (uint64_t j = 0; j < sz; ++j) st.tensors[i][j] = r.f32();
  }
  return st;
}

std::vector<uint8_t> plan_payload(const FreezePlan& p) {
  nlohmann::json j;
  j["kind"] = (int)p.scheme.kind;
  j["rho_first"] = p.scheme.rho_first;
  j["rho_last"] = p.scheme.rho_last;
  j["seed"] = p.seed;
  j["layer_ratios"] = p.layer_ratios;
  auto& m = j["masks"] = nlohmann::json::array();
  for (const auto& mask : p.masks) m.push_back(nlohmann::json::binary(mask));
  return nlohmann::json::to_cbor(j);
}

FreezePlan parse_plan(const std::vector<uint8_t>& payload) {
  nlohmann::json j = nlohmann::json::from_cbor(payload);
  FreezePlan p;
  p.scheme.kind = (SchemeKind)(int)j.at("kind");
  p.scheme.rho_first = j.at("rho_first");
  p.scheme.rho_last = j.at("rho_last");
  p.seed = j.at("seed");
  p.layer_ratios = j.at("layer_ratios").get<std::vector<float>>();
  for (const auto& m : j.at("masks")) p.masks.push_back(m.get_binary());
  return p;
}

std::vector<uint8_t> metrics_payload(const nlohmann::json& m) {
  std::string s = m.dump(2);
  return std::vector<uint8_t>(s.begin(), s.end());
}

}  // namespace

std::vector<uint8_t> serialize_bundle(const WeightBundle& b) {
  uint64_t hash = topology_hash(b.spec);
  if (b.state) require(b.state->hash == hash, "topology mismatch");
  if (b.qgraph) require(b.qgraph->hash == hash, "topology mismatch");

  std::vector<std::pair<std::string, std::vector<uint8_t>>> sections;
  sections.emplace_back("SPEC", spec_payload(b.spec));
  if (b.state) sections.emplace_back("FWTS", state_payload(*b.state));
  if (b.plan) sections.emplace_back("PLAN", plan_payload(*b.plan));
  if (b.qgraph) sections.emplace_back("QGRF", qgraph_to_cbor(*b.qgraph));
  sections.emplace_back("METR", metrics_payload(b.metrics));

  std::vector<uint8_t> out;
  out.insert(out.end(), {'S', 'F', 'R', 'D'});
  put_u32(out, kVersion);
  put_u64(out, hash);
  put_u32(out, (uint32_t)sections.size());
  size_t table_at = out.size();
  uint64_t offset = out.size() + sections.size() * (4 + 8 + 8 + 4);
  for (const auto& [tag, payload] : sections) {
    out.insert(out.end(), tag.begin(), tag.end());
    put_u64(out, offset);
    put_u64(out, payload.size());
    put_u32(out, crc_of(payload));
    offset += payload.size();
  }
  (void)table_at;
  for (const auto& [tag, payload] : sections)
    out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

WeightBundle deserialize_bundle(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), "SFRD", 4) != 0)
    throw std::runtime_error("not a bundle");
  Reader r(bytes, "not a bundle");
  r.pos = 4;
  uint32_t version = r.u32();
  if (version > kVersion) throw std::runtime_error("unsupported version");
  uint64_t hash = r.u64();
  uint32_t nsec = r.u32();

  struct Entry {
    std::string tag;
    uint64_t offset, size;
    uint32_t crc;
  };
  std::vector<Entry> table(nsec);
  for (auto& e : table) {
    auto t = r.raw(4);
    e.tag.assign(t.begin(), t.end());
    e.offset = r.u64();
    e.size = r.u64();
    e.crc = r.u32();
  }

  auto payload = [&](const Entry& e) {
    if (e.offset + e.size > bytes.size())
      throw std::runtime_error("corrupt section " + e.tag);
    std::vector<uint8_t> p(bytes.begin() + e.offset,
                           bytes.begin() + e.offset + e.size);
    if (crc_of(p) != e.crc) throw std::runtime_error("corrupt section " + e.tag);
    return p;
  };

  WeightBundle b;
  bool have_spec = false;
  for (const auto& e : table) {
    auto p = payload(e);
    if (e.tag == "SPEC") {
      b.spec = spec_from_json(std::string(p.begin(), p.end()));
      have_spec = true;
    } else if (e.tag == "FWTS") {
      b.state = parse_state(p, hash);
    } else if (e.tag == "PLAN") {
      b.plan = parse_plan(p);
    } else if (e.tag == "QGRF") {
      b.qgraph = qgraph_from_cbor(p);
    } else if (e.tag == "METR") {
      b.metrics = nlohmann::json::parse(std::string(p.begin(), p.end()));
    }
  }
  require(have_spec, "not a bundle");
  require(topology_hash(b.spec) == hash, "topology mismatch");
  return b;
}

void save_bundle(const std::string& path, const WeightBundle& b) {
  auto bytes = serialize_bundle(b);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "cannot open " + path + " for writing");
  f.write((const char*)bytes.data(), (std::streamsize)bytes.size());
  require(f.good(), "write failed: " + path);
}

WeightBundle load_bundle(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  require(f.good(), "cannot open " + path);
  std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes((size_t)n);
  f.read((char*)bytes.data(), n);
  require(f.good(), "cannot read " + path);
  return deserialize_bundle(bytes);
}

WeightBundle load_bundle(const std::string& path, const NetworkSpec& expect) {
  WeightBundle b = load_bundle(path);
  require(topology_hash(b.spec) == topology_hash(expect),
          "topology mismatch");
  return b;
}

}  // namespace semifreddo
