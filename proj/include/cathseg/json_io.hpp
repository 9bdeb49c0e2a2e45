#pragma once

#include <filesystem>
#include <stdexcept>

#include <json.hpp>

namespace cathseg {

class JsonIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json load_json(const std::filesystem::path& path);

}  // namespace cathseg
