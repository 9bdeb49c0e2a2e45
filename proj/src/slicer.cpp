#include "cathseg/slicer.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace cathseg {

const char* to_string(Axis axis) {
  switch (axis) {
    case Axis::X: return "x";
    case Axis::Y: return "y";
    case Axis::Z: return "z";
  }
  return "?";
}

Axis axis_from_string(const std::string& s) {
  if (s == "x" || s == "X") return Axis::X;
  if (s == "y" || s == "Y") return Axis::Y;
  if (s == "z" || s == "Z") return Axis::Z;
  throw std::invalid_argument("unknown axis '" + s + "' (expected x, y or z)");
}

std::size_t plane_voxel(Axis axis, std::size_t m, std::size_t k, std::size_t row, std::size_t col) {
  switch (axis) {
    case Axis::X: return k + m * (row + m * col);  // (x,y,z) = (k,row,col)
    case Axis::Y: return col + m * (k + m * row);  // (x,y,z) = (col,k,row)
    case Axis::Z: return row + m * (col + m * k);  // (x,y,z) = (row,col,k)
  }
  return 0;
}

std::array<std::size_t, 3> channel_planes(std::size_t m, std::size_t k, std::size_t d) {
  const auto last = static_cast<std::ptrdiff_t>(m) - 1;
  const auto kk = static_cast<std::ptrdiff_t>(k), dd = static_cast<std::ptrdiff_t>(d);
  return {static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(kk - dd, 0, last)), k,
          static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(kk + dd, 0, last))};
}

TriSliceStack slice_axis(const Volume3& patch, Axis axis, std::size_t d) {
  if (!patch.is_cubic()) throw std::invalid_argument("slice_axis: patch must be cubic");
  const std::size_t m = patch.dims()[0];
  if (d >= m) throw std::invalid_argument("slice_axis: gap d must be smaller than the patch size");
  TriSliceStack stack;
  stack.axis = axis;
  stack.gap_d = d;
  stack.size = m;
  stack.images.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    auto& img = stack.images[k];
    img.resize(3 * m * m);
    const auto planes = channel_planes(m, k, d);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t col = 0; col < m; ++col)
          img[(c * m + r) * m + col] = patch[plane_voxel(axis, m, planes[c], r, col)];
  }
  return stack;
}

template <typename T>
nn::Tensor<T> stack_features(const std::vector<nn::Tensor<T>>& per_plane, Axis axis) {
  const std::size_t m = per_plane.size();
  if (m == 0) throw std::invalid_argument("stack_features: no plane maps");
  const auto& first = per_plane.front().shape();
  if (first.size() != 3 || first[1] != m || first[2] != m)
    throw std::invalid_argument("stack_features: expected " + std::to_string(m) + " maps of shape [F," +
                                std::to_string(m) + "," + std::to_string(m) + "], got " +
                                nn::to_string(first));
  for (const auto& t : per_plane)
    if (t.shape() != first) throw std::invalid_argument("stack_features: inconsistent plane map shapes");
  const std::size_t f = first[0], plane = m * m, cube = m * m * m;

  std::vector<std::size_t> voxel(plane * m);  // (k, row, col) -> voxel
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < m; ++c) voxel[(k * m + r) * m + c] = plane_voxel(axis, m, k, r, c);

  std::vector<T> out(f * cube);
  for (std::size_t k = 0; k < m; ++k) {
    const T* src = per_plane[k].values().data();
    for (std::size_t ch = 0; ch < f; ++ch)
      for (std::size_t p = 0; p < plane; ++p) out[ch * cube + voxel[k * plane + p]] = src[ch * plane + p];
  }
  return nn::make_op<T>({f, m, m, m}, std::move(out), per_plane,
                        [voxel = std::move(voxel), f, m, plane, cube](nn::Node<T>& self) {
                          for (std::size_t k = 0; k < m; ++k) {
                            auto& in = *self.inputs[k];
                            if (!in.requires_grad) continue;
                            auto& g = in.ensure_grad();
                            for (std::size_t ch = 0; ch < f; ++ch)
                              for (std::size_t p = 0; p < plane; ++p)
                                g[ch * plane + p] += self.grad[ch * cube + voxel[k * plane + p]];
                          }
                        });
}

template <typename T>
nn::Tensor<T> fuse(const nn::Tensor<T>& fx, const nn::Tensor<T>& fy, const nn::Tensor<T>& fz) {
  if (fx.shape() != fy.shape() || fx.shape() != fz.shape())
    throw std::invalid_argument("fuse: shape mismatch " + nn::to_string(fx.shape()) + ", " +
                                nn::to_string(fy.shape()) + ", " + nn::to_string(fz.shape()));
  std::vector<T> out(fx.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    T a = fx[i], b = fy[i], c = fz[i];
    if (a > b) std::swap(a, b);
    if (b > c) std::swap(b, c);
    if (a > b) std::swap(a, b);
    out[i] = (a + b) + c;
  }
  return nn::make_op<T>(fx.shape(), std::move(out), {fx, fy, fz}, [](nn::Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

std::vector<PatchRegion> tile(const Dims3& dims, std::size_t n, std::size_t m) {
  if (n == 0) throw std::invalid_argument("tile: N must be positive");
  if (n > m) throw std::invalid_argument("tile: N must not exceed M");
  for (auto d : dims)
    if (n > d) throw std::invalid_argument("tile: N exceeds a volume dimension");
  std::array<std::vector<std::int64_t>, 3> origins;
  for (int a = 0; a < 3; ++a) {
    std::size_t o = 0;
    for (; o + n <= dims[a]; o += n) origins[a].push_back(static_cast<std::int64_t>(o));
    if (o < dims[a]) origins[a].push_back(static_cast<std::int64_t>(dims[a] - n));
  }
  std::vector<PatchRegion> regions;
  for (auto z : origins[2])
    for (auto y : origins[1])
      for (auto x : origins[0])
        regions.push_back(PatchRegion::centered({x, y, z}, static_cast<std::int64_t>(n), static_cast<std::int64_t>(m)));
  return regions;
}

Volume3 stitch(const std::vector<std::pair<PatchRegion, Volume3>>& predictions, const Dims3& dims) {
  if (predictions.empty()) throw std::invalid_argument("stitch: no predictions");
  Volume3 out(dims, predictions.front().second.spacing());
  std::vector<std::uint8_t> written(out.size(), 0);
  for (const auto& [region, pred] : predictions) {
    const auto m = static_cast<std::size_t>(region.outer_size);
    const auto n = static_cast<std::size_t>(region.core_size);
    if (pred.dims() != Dims3{m, m, m}) throw std::invalid_argument("stitch: prediction shape does not match region");
    for (int a = 0; a < 3; ++a)
      if (region.core_origin[a] < 0 || region.core_origin[a] + region.core_size > static_cast<std::int64_t>(dims[a]))
        throw std::invalid_argument("stitch: region outside the output volume");
    const auto off = static_cast<std::size_t>(region.margin());
    for (std::size_t z = 0; z < n; ++z)
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
          const std::size_t dst = out.index(static_cast<std::size_t>(region.core_origin[0]) + x,
                                            static_cast<std::size_t>(region.core_origin[1]) + y,
                                            static_cast<std::size_t>(region.core_origin[2]) + z);
          out[dst] = pred.at(off + x, off + y, off + z);
          written[dst] = 1;
        }
  }
  if (std::find(written.begin(), written.end(), std::uint8_t{0}) != written.end())
    throw std::invalid_argument("stitch: predictions leave voxels uncovered");
  return out;
}

template nn::Tensor<float> stack_features<float>(const std::vector<nn::Tensor<float>>&, Axis);
template nn::Tensor<double> stack_features<double>(const std::vector<nn::Tensor<double>>&, Axis);
template nn::Tensor<float> fuse<float>(const nn::Tensor<float>&, const nn::Tensor<float>&, const nn::Tensor<float>&);
template nn::Tensor<double> fuse<double>(const nn::Tensor<double>&, const nn::Tensor<double>&, const nn::Tensor<double>&);

}  // namespace cathseg
