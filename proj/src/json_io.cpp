#include "cathseg/json_io.hpp"

#include <fstream>

namespace cathseg {

void save_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw JsonIoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw JsonIoError("I/O failure writing " + path.string());
}

nlohmann::json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw JsonIoError("missing file: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw JsonIoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace cathseg
