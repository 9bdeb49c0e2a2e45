#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cathseg {

using Index3 = std::array<std::int64_t, 3>;
using Dims3 = std::array<std::size_t, 3>;
using Spacing3 = std::array<double, 3>;

class VolumeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t voxel_count(const Dims3& d) { return d[0] * d[1] * d[2]; }

// Scalar voxel grid. Linear order is x-fastest: i = x + nx * (y + ny * z).
class Volume3 {
 public:
  Volume3() = default;
  Volume3(Dims3 dims, Spacing3 spacing_mm, double fill = 0.0);
  Volume3(Dims3 dims, Spacing3 spacing_mm, std::vector<double> data);

  const Dims3& dims() const { return dims_; }
  const Spacing3& spacing() const { return spacing_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims_[0] * (y + dims_[1] * z);
  }
  double at(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }
  double& at(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  bool is_cubic() const { return dims_[0] == dims_[1] && dims_[1] == dims_[2]; }

  friend bool operator==(const Volume3&, const Volume3&) = default;

 private:
  Dims3 dims_{0, 0, 0};
  Spacing3 spacing_{1.0, 1.0, 1.0};
  std::vector<double> data_;
};

// Binary label grid, 1 = catheter. Same layout as Volume3.
class Mask3 {
 public:
  Mask3() = default;
  explicit Mask3(Dims3 dims, Spacing3 spacing_mm = {1.0, 1.0, 1.0});
  Mask3(Dims3 dims, Spacing3 spacing_mm, std::vector<std::uint8_t> labels);

  const Dims3& dims() const { return dims_; }
  const Spacing3& spacing() const { return spacing_; }
  std::size_t size() const { return labels_.size(); }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims_[0] * (y + dims_[1] * z);
  }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const {
    return labels_[index(x, y, z)];
  }
  void set(std::size_t x, std::size_t y, std::size_t z, bool on) {
    labels_[index(x, y, z)] = on ? 1 : 0;
  }
  std::uint8_t operator[](std::size_t i) const { return labels_[i]; }
  void set(std::size_t i, bool on) { labels_[i] = on ? 1 : 0; }

  std::span<const std::uint8_t> labels() const { return labels_; }
  std::size_t count() const;

  Index3 coord(std::size_t i) const {
    const auto nx = dims_[0], ny = dims_[1];
    return {static_cast<std::int64_t>(i % nx), static_cast<std::int64_t>((i / nx) % ny),
            static_cast<std::int64_t>(i / (nx * ny))};
  }

  friend bool operator==(const Mask3&, const Mask3&) = default;

 private:
  Dims3 dims_{0, 0, 0};
  Spacing3 spacing_{1.0, 1.0, 1.0};
  std::vector<std::uint8_t> labels_;
};

// Core N^3 block plus the M^3 neighbourhood it is enlarged to for inference.
struct PatchRegion {
  Index3 core_origin{0, 0, 0};
  std::int64_t core_size = 0;   // N
  Index3 outer_origin{0, 0, 0};
  std::int64_t outer_size = 0;  // M

  static PatchRegion centered(Index3 core_origin, std::int64_t n, std::int64_t m);
  std::int64_t margin() const { return (outer_size - core_size) / 2; }

  friend bool operator==(const PatchRegion&, const PatchRegion&) = default;
};

Mask3 threshold(const Volume3& probs, double level = 0.5);
Volume3 to_volume(const Mask3& mask);

// Raw + JSON sidecar I/O. `path` may name the .json, the .raw, or the stem.
enum class VoxelType { f32le, u8 };

Volume3 load_volume(const std::filesystem::path& path);
void save_volume(const Volume3& vol, const std::filesystem::path& path,
                 VoxelType dtype = VoxelType::f32le);
Mask3 load_mask(const std::filesystem::path& path);
void save_mask(const Mask3& mask, const std::filesystem::path& path);

// Min-max rescale to [0, 1]; constant volumes become all zeros.
Volume3 normalize(const Volume3& vol);

// M^3 crop whose core must lie inside the volume. Overhang is filled by
// replicating the nearest in-bounds plane.
Volume3 extract_patch(const Volume3& vol, const PatchRegion& region);
Mask3 extract_patch(const Mask3& mask, const PatchRegion& region);

// Edge-replicated cube of side `size` starting at `origin` (any origin).
Volume3 crop_replicated(const Volume3& vol, Index3 origin, std::size_t size);
Mask3 crop_replicated(const Mask3& mask, Index3 origin, std::size_t size);

}  // namespace cathseg
