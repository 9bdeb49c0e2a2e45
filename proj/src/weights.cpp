#include "cathseg/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace cathseg::nn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::pair<fs::path, fs::path> manifest_paths(fs::path stem) {
  if (stem.extension() == ".json" || stem.extension() == ".bin") stem.replace_extension();
  fs::path j = stem, b = stem;
  j += ".json";
  b += ".bin";
  return {j, b};
}

}  // namespace

const WeightEntry* WeightManifest::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void save_weights(const WeightManifest& manifest, const fs::path& stem) {
  const auto [json_path, bin_path] = manifest_paths(stem);
  json doc;
  doc["format"] = "cathseg-weights";
  doc["version"] = 1;
  doc["dtype"] = "f32le";
  doc["entries"] = json::array();
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw WeightError("cannot write " + bin_path.string());
  for (const auto& e : manifest.entries) {
    if (e.values.size() != numel(e.shape))
      throw WeightError("entry " + e.name + " has " + std::to_string(e.values.size()) +
                        " values for shape " + to_string(e.shape));
    doc["entries"].push_back({{"name", e.name}, {"shape", e.shape}});
    for (float v : e.values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      char buf[4];
      std::memcpy(buf, &bits, 4);
      bin.write(buf, 4);
    }
  }
  for (const auto& [k, v] : manifest.metadata.items()) doc[k] = v;
  std::ofstream js(json_path);
  if (!js) throw WeightError("cannot write " + json_path.string());
  js << doc.dump(2) << '\n';
  if (!bin || !js) throw WeightError("I/O failure writing weights to " + stem.string());
}

WeightManifest load_weights(const fs::path& stem) {
  const auto [json_path, bin_path] = manifest_paths(stem);
  std::ifstream js(json_path);
  if (!js) throw WeightError("missing weight manifest " + json_path.string());
  json doc;
  try {
    js >> doc;
  } catch (const json::exception& e) {
    throw WeightError("malformed weight manifest: " + std::string(e.what()));
  }
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw WeightError("missing weight blob " + bin_path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  WeightManifest m;
  std::size_t offset = 0;
  try {
    for (const auto& je : doc.at("entries")) {
      WeightEntry e;
      e.name = je.at("name").get<std::string>();
      e.shape = je.at("shape").get<Shape>();
      const std::size_t n = numel(e.shape);
      if (offset + 4 * n > bytes.size())
        throw WeightError("weight blob too short at entry " + e.name);
      e.values.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, bytes.data() + offset + 4 * i, 4);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        e.values[i] = std::bit_cast<float>(bits);
      }
      offset += 4 * n;
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw WeightError("malformed weight manifest: " + std::string(e.what()));
  }
  if (offset != bytes.size()) throw WeightError("weight blob has trailing bytes");
  for (const auto& [k, v] : doc.items())
    if (k != "entries" && k != "format" && k != "version" && k != "dtype") m.metadata[k] = v;
  return m;
}

}  // namespace cathseg::nn
