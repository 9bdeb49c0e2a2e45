#pragma once

#include <array>
#include <string>
#include <cstddef>
#include <utility>
#include <vector>

#include "cathseg/tensor.hpp"
#include "cathseg/volume.hpp"

namespace cathseg {

enum class Axis { X = 0, Y = 1, Z = 2 };

const char* to_string(Axis axis);
Axis axis_from_string(const std::string& s);

// In-plane orientation of the plane images cut orthogonal to each axis. The
// in-plane axes follow the cyclic order x -> y -> z -> x, so a cyclic
// relabelling of the volume axes maps every plane image onto a plane image of
// another axis without transposition:
//
//   axis   plane     row   col
//   X      x = k     y     z
//   Y      y = k     z     x
//   Z      z = k     x     y
//
// Linear voxel index (x-fastest) of (plane k, row, col) in an M^3 cube.
std::size_t plane_voxel(Axis axis, std::size_t m, std::size_t k, std::size_t row, std::size_t col);

// Plane indices feeding the three channels of image k: k-d, k, k+d clamped.
std::array<std::size_t, 3> channel_planes(std::size_t m, std::size_t k, std::size_t d);

// M pseudo-RGB images, each [3][M][M] row-major, one per plane index.
struct TriSliceStack {
  Axis axis = Axis::X;
  std::size_t gap_d = 0;
  std::size_t size = 0;  // M
  std::vector<std::vector<double>> images;
};

TriSliceStack slice_axis(const Volume3& patch, Axis axis, std::size_t d);

// Inverse of the slicing geometry: M per-plane maps [F,M,M] become a feature
// volume [F,M,M,M] laid out as (f, z, y, x). Differentiable.
template <typename T>
nn::Tensor<T> stack_features(const std::vector<nn::Tensor<T>>& per_plane, Axis axis);

// Elementwise sum of three feature volumes. Each element's three terms are
// added in ascending order, so the result is exactly symmetric in its
// arguments. Differentiable.
template <typename T>
nn::Tensor<T> fuse(const nn::Tensor<T>& fx, const nn::Tensor<T>& fy, const nn::Tensor<T>& fz);

// Core N^3 regions covering `dims`, each centred in an M^3 outer region,
// ordered x-fastest. When N does not divide an extent the last core along
// that axis is aligned to the far edge and overlaps its neighbour.
std::vector<PatchRegion> tile(const Dims3& dims, std::size_t n, std::size_t m);

// Copies the central N^3 of each M^3 prediction into its core region, in
// order; later regions overwrite overlapping voxels.
Volume3 stitch(const std::vector<std::pair<PatchRegion, Volume3>>& predictions, const Dims3& dims);

}  // namespace cathseg
