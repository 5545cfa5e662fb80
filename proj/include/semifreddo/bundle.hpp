#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "semifreddo/engine.hpp"
#include "semifreddo/freezing.hpp"
#include "semifreddo/quant.hpp"
#include "semifreddo/topology.hpp"

namespace semifreddo {

// On-disk checkpoint: "SFRD" magic, format version, topology hash and a
// section table (SPEC / FWTS / PLAN / QGRF / METR), every integer
// little-endian, each section CRC32-protected. Round trips are byte-exact.
struct WeightBundle {
  NetworkSpec spec;
  std::optional<ModelState> state;
  std::optional<FreezePlan> plan;
  std::optional<QGraph> qgraph;
  nlohmann::json metrics = nlohmann::json::object();
};

std::vector<uint8_t> serialize_bundle(const WeightBundle& b);
WeightBundle deserialize_bundle(const std::vector<uint8_t>& bytes);

void save_bundle(const std::string& path, const WeightBundle& b);
WeightBundle load_bundle(const std::string& path);
// Checks the bundle against the spec the caller intends to use.
WeightBundle load_bundle(const std::string& path, const NetworkSpec& expect);

}  // namespace semifreddo
