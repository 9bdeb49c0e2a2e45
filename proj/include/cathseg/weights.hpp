#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cathseg/tensor.hpp"

namespace cathseg::nn {

// Weight manifest: `<stem>.json` lists ordered {name, shape} entries and
// `<stem>.bin` holds the values as little-endian float32 in the same order.
// Extra metadata (e.g. a network config) rides along in the JSON document.
struct WeightEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct WeightManifest {
  std::vector<WeightEntry> entries;
  nlohmann::json metadata = nlohmann::json::object();

  const WeightEntry* find(const std::string& name) const;
};

class WeightError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_weights(const WeightManifest& manifest, const std::filesystem::path& stem);
WeightManifest load_weights(const std::filesystem::path& stem);

}  // namespace cathseg::nn
