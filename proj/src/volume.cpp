#include "cathseg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace cathseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_dims(const Dims3& dims) {
  for (auto d : dims)
    if (d == 0) throw VolumeError("non-positive dims");
}

void check_spacing(const Spacing3& s) {
  for (auto v : s)
    if (!(v > 0.0)) throw VolumeError("non-positive spacing");
}

std::pair<fs::path, fs::path> sidecar_paths(const fs::path& path) {
  fs::path stem = path;
  if (stem.extension() == ".json" || stem.extension() == ".raw") stem.replace_extension();
  fs::path header = stem;
  header += ".json";
  fs::path raw = stem;
  raw += ".raw";
  return {header, raw};
}

struct Header {
  Dims3 dims;
  Spacing3 spacing;
  VoxelType dtype;
};

Header read_header(const fs::path& header_path) {
  std::ifstream in(header_path);
  if (!in) throw VolumeError("missing file: " + header_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw VolumeError("malformed header " + header_path.string() + ": " + e.what());
  }
  Header h{};
  try {
    const auto dims = j.at("dims").get<std::vector<std::int64_t>>();
    const auto spacing = j.at("spacing_mm").get<std::vector<double>>();
    if (dims.size() != 3 || spacing.size() != 3) throw VolumeError("dims/spacing must have 3 entries");
    for (int a = 0; a < 3; ++a) {
      if (dims[a] <= 0) throw VolumeError("non-positive dims");
      h.dims[a] = static_cast<std::size_t>(dims[a]);
      h.spacing[a] = spacing[a];
    }
    const auto dtype = j.at("dtype").get<std::string>();
    if (dtype == "f32le") {
      h.dtype = VoxelType::f32le;
    } else if (dtype == "u8") {
      h.dtype = VoxelType::u8;
    } else {
      throw VolumeError("unknown dtype: " + dtype);
    }
  } catch (const json::exception& e) {
    throw VolumeError("malformed header " + header_path.string() + ": " + e.what());
  }
  check_spacing(h.spacing);
  return h;
}

std::vector<char> read_raw(const fs::path& raw_path, std::size_t expected_bytes) {
  std::ifstream in(raw_path, std::ios::binary);
  if (!in) throw VolumeError("missing file: " + raw_path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != expected_bytes)
    throw VolumeError("data size mismatch: expected " + std::to_string(expected_bytes) +
                      " bytes, found " + std::to_string(bytes.size()));
  return bytes;
}

void write_pair(const fs::path& path, const Dims3& dims, const Spacing3& spacing,
                const char* dtype, const std::vector<char>& bytes) {
  const auto [header_path, raw_path] = sidecar_paths(path);
  json j;
  j["dims"] = {dims[0], dims[1], dims[2]};
  j["spacing_mm"] = {spacing[0], spacing[1], spacing[2]};
  j["dtype"] = dtype;
  std::ofstream h(header_path);
  if (!h) throw VolumeError("cannot write " + header_path.string());
  h << j.dump(2) << '\n';
  std::ofstream r(raw_path, std::ios::binary);
  if (!r) throw VolumeError("cannot write " + raw_path.string());
  r.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!r || !h) throw VolumeError("I/O failure writing " + path.string());
}

float read_f32le(const char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  return std::bit_cast<float>(bits);
}

void write_f32le(char* p, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  std::memcpy(p, &bits, 4);
}

std::size_t clamp_index(std::int64_t i, std::size_t n) {
  return static_cast<std::size_t>(std::clamp<std::int64_t>(i, 0, static_cast<std::int64_t>(n) - 1));
}

template <typename Get, typename Put>
void replicate_copy(const Dims3& src, Index3 origin, std::size_t size, Get get, Put put) {
  std::vector<std::size_t> xs(size), ys(size), zs(size);
  for (std::size_t i = 0; i < size; ++i) {
    const auto o = static_cast<std::int64_t>(i);
    xs[i] = clamp_index(origin[0] + o, src[0]);
    ys[i] = clamp_index(origin[1] + o, src[1]);
    zs[i] = clamp_index(origin[2] + o, src[2]);
  }
  std::size_t out = 0;
  for (std::size_t z = 0; z < size; ++z)
    for (std::size_t y = 0; y < size; ++y) {
      const std::size_t row = src[0] * (ys[y] + src[1] * zs[z]);
      for (std::size_t x = 0; x < size; ++x) put(out++, get(row + xs[x]));
    }
}

void check_core_inside(const Dims3& dims, const PatchRegion& r) {
  if (r.core_size <= 0 || r.outer_size < r.core_size)
    throw VolumeError("invalid patch region sizes");
  for (int a = 0; a < 3; ++a)
    if (r.core_origin[a] < 0 || r.core_origin[a] + r.core_size > static_cast<std::int64_t>(dims[a]))
      throw VolumeError("core region out of bounds");
}

}  // namespace

Volume3::Volume3(Dims3 dims, Spacing3 spacing_mm, double fill)
    : dims_(dims), spacing_(spacing_mm), data_(voxel_count(dims), fill) {
  check_dims(dims_);
  check_spacing(spacing_);
}

Volume3::Volume3(Dims3 dims, Spacing3 spacing_mm, std::vector<double> data)
    : dims_(dims), spacing_(spacing_mm), data_(std::move(data)) {
  check_dims(dims_);
  check_spacing(spacing_);
  if (data_.size() != voxel_count(dims_)) throw VolumeError("data size mismatch");
}

Mask3::Mask3(Dims3 dims, Spacing3 spacing_mm)
    : dims_(dims), spacing_(spacing_mm), labels_(voxel_count(dims), 0) {
  check_dims(dims_);
  check_spacing(spacing_);
}

Mask3::Mask3(Dims3 dims, Spacing3 spacing_mm, std::vector<std::uint8_t> labels)
    : dims_(dims), spacing_(spacing_mm), labels_(std::move(labels)) {
  check_dims(dims_);
  check_spacing(spacing_);
  if (labels_.size() != voxel_count(dims_)) throw VolumeError("data size mismatch");
  for (auto v : labels_)
    if (v > 1) throw VolumeError("mask labels must be 0 or 1");
}

std::size_t Mask3::count() const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), std::uint8_t{1}));
}

PatchRegion PatchRegion::centered(Index3 core_origin, std::int64_t n, std::int64_t m) {
  if (n <= 0 || m < n) throw VolumeError("patch sizes require 0 < N <= M");
  if ((m - n) % 2 != 0) throw VolumeError("M - N must be even to centre the core");
  PatchRegion r;
  r.core_origin = core_origin;
  r.core_size = n;
  r.outer_size = m;
  for (int a = 0; a < 3; ++a) r.outer_origin[a] = core_origin[a] - (m - n) / 2;
  return r;
}

Mask3 threshold(const Volume3& probs, double level) {
  std::vector<std::uint8_t> labels(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) labels[i] = probs[i] >= level ? 1 : 0;
  return Mask3(probs.dims(), probs.spacing(), std::move(labels));
}

Volume3 to_volume(const Mask3& mask) {
  std::vector<double> data(mask.labels().begin(), mask.labels().end());
  return Volume3(mask.dims(), mask.spacing(), std::move(data));
}

Volume3 load_volume(const fs::path& path) {
  const auto [header_path, raw_path] = sidecar_paths(path);
  const Header h = read_header(header_path);
  const std::size_t n = voxel_count(h.dims);
  std::vector<double> data(n);
  if (h.dtype == VoxelType::f32le) {
    const auto bytes = read_raw(raw_path, n * 4);
    for (std::size_t i = 0; i < n; ++i) data[i] = read_f32le(bytes.data() + 4 * i);
  } else {
    const auto bytes = read_raw(raw_path, n);
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<unsigned char>(bytes[i]);
  }
  return Volume3(h.dims, h.spacing, std::move(data));
}

void save_volume(const Volume3& vol, const fs::path& path, VoxelType dtype) {
  std::vector<char> bytes;
  if (dtype == VoxelType::f32le) {
    bytes.resize(vol.size() * 4);
    for (std::size_t i = 0; i < vol.size(); ++i)
      write_f32le(bytes.data() + 4 * i, static_cast<float>(vol[i]));
    write_pair(path, vol.dims(), vol.spacing(), "f32le", bytes);
  } else {
    bytes.resize(vol.size());
    for (std::size_t i = 0; i < vol.size(); ++i) {
      const double v = std::clamp(vol[i], 0.0, 255.0);
      bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v)));
    }
    write_pair(path, vol.dims(), vol.spacing(), "u8", bytes);
  }
}

Mask3 load_mask(const fs::path& path) {
  const auto [header_path, raw_path] = sidecar_paths(path);
  const Header h = read_header(header_path);
  if (h.dtype != VoxelType::u8) throw VolumeError("masks must use dtype u8");
  const auto bytes = read_raw(raw_path, voxel_count(h.dims));
  std::vector<std::uint8_t> labels(bytes.begin(), bytes.end());
  return Mask3(h.dims, h.spacing, std::move(labels));
}

void save_mask(const Mask3& mask, const fs::path& path) {
  std::vector<char> bytes(mask.labels().begin(), mask.labels().end());
  write_pair(path, mask.dims(), mask.spacing(), "u8", bytes);
}

Volume3 normalize(const Volume3& vol) {
  if (vol.empty()) throw VolumeError("cannot normalize an empty volume");
  const auto [lo, hi] = std::minmax_element(vol.data().begin(), vol.data().end());
  const double mn = *lo, range = *hi - *lo;
  std::vector<double> out(vol.size(), 0.0);
  if (range > 0.0)
    for (std::size_t i = 0; i < vol.size(); ++i) out[i] = (vol[i] - mn) / range;
  return Volume3(vol.dims(), vol.spacing(), std::move(out));
}

Volume3 crop_replicated(const Volume3& vol, Index3 origin, std::size_t size) {
  std::vector<double> out(size * size * size);
  replicate_copy(
      vol.dims(), origin, size, [&](std::size_t i) { return vol[i]; },
      [&](std::size_t o, double v) { out[o] = v; });
  return Volume3({size, size, size}, vol.spacing(), std::move(out));
}

Mask3 crop_replicated(const Mask3& mask, Index3 origin, std::size_t size) {
  std::vector<std::uint8_t> out(size * size * size);
  replicate_copy(
      mask.dims(), origin, size, [&](std::size_t i) { return mask[i]; },
      [&](std::size_t o, std::uint8_t v) { out[o] = v; });
  return Mask3({size, size, size}, mask.spacing(), std::move(out));
}

Volume3 extract_patch(const Volume3& vol, const PatchRegion& region) {
  check_core_inside(vol.dims(), region);
  return crop_replicated(vol, region.outer_origin, static_cast<std::size_t>(region.outer_size));
}

Mask3 extract_patch(const Mask3& mask, const PatchRegion& region) {
  check_core_inside(mask.dims(), region);
  return crop_replicated(mask, region.outer_origin, static_cast<std::size_t>(region.outer_size));
}

}  // namespace cathseg
