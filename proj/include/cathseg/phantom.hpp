#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cathseg/localizer.hpp"
#include "cathseg/volume.hpp"

namespace cathseg {

class PhantomError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PhantomConfig {
  Dims3 dims{64, 64, 64};
  double spacing_mm = 0.54;
  double tube_radius_vox = 2.1;
  double curvature = 0.5;  // 0 straight, 1 strongly bent
  double tube_intensity = 1.0;
  double background_mean = 0.35;
  double speckle_strength = 0.6;
  std::size_t n_distractors = 6;
  std::uint64_t seed = 0;

  // Guaranteed gap between mean intensity inside and outside the mask:
  // half the tube amplitude, the value at the soft edge.
  double contrast() const { return 0.5 * (tube_intensity - background_mean); }
  void validate() const;
};

nlohmann::json to_json(const PhantomConfig& cfg);
PhantomConfig phantom_config_from_json(const nlohmann::json& j, PhantomConfig defaults = {});

struct Phantom {
  Volume3 volume;
  Mask3 mask;
  Polyline skeleton;  // densely sampled tube centreline, voxel units
};

Phantom generate(const PhantomConfig& cfg);

std::vector<Phantom> generate_dataset(std::size_t n, std::uint64_t base_seed, const PhantomConfig& cfg = {});
std::uint64_t member_seed(std::uint64_t base_seed, std::size_t index);

// Contiguous folds; the first n % k folds hold one extra member.
std::vector<std::vector<std::size_t>> fold_split(std::size_t n, std::size_t k);

struct ManifestMember {
  std::string name;
  std::uint64_t seed = 0;
  std::filesystem::path volume, mask, skeleton;  // absolute after loading
  std::size_t fold = 0;
};

struct DatasetManifest {
  std::uint64_t base_seed = 0;
  PhantomConfig config;
  std::vector<ManifestMember> members;
  std::vector<std::vector<std::size_t>> folds;

  // Members outside / inside fold `f`.
  std::vector<std::size_t> train_indices(std::size_t f) const;
  std::vector<std::size_t> test_indices(std::size_t f) const;
};

// Writes volumes, masks, skeletons and manifest.json into `dir`.
DatasetManifest write_dataset(const std::filesystem::path& dir, std::size_t n, std::uint64_t base_seed,
                              const PhantomConfig& cfg, std::size_t folds = 3);
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace cathseg
