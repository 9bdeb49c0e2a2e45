#pragma once

// Brute-force reference implementations. Each accumulates in the documented
// order (bias, input channel, kernel offsets row-major) so fast kernels can be
// compared bit-for-bit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <vector>

#include "cathseg/localizer.hpp"
#include "cathseg/rng.hpp"
#include "cathseg/volume.hpp"

namespace oracle {

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  cathseg::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// in [cin,h,w], w [cout,cin,kh,kw]; returns [cout,oh,ow].
inline std::vector<double> conv2d(const std::vector<double>& in, std::size_t cin, std::size_t h, std::size_t w,
                                  const std::vector<double>& k, const std::vector<double>& b, std::size_t cout,
                                  std::size_t kh, std::size_t kw, std::size_t stride, bool same_pad,
                                  std::size_t& oh, std::size_t& ow) {
  const long ph = same_pad ? static_cast<long>(kh / 2) : 0, pw = same_pad ? static_cast<long>(kw / 2) : 0;
  const std::size_t fh = h + 2 * ph - kh + 1, fw = w + 2 * pw - kw + 1;
  oh = (fh - 1) / stride + 1;
  ow = (fw - 1) / stride + 1;
  std::vector<double> out(cout * oh * ow);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = b[co];
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long iy = static_cast<long>(y * stride + ky) - ph, ix = static_cast<long>(x * stride + kx) - pw;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              acc += k[((co * cin + ci) * kh + ky) * kw + kx] * in[(ci * h + iy) * w + ix];
            }
        out[(co * oh + y) * ow + x] = acc;
      }
  return out;
}

// in [cin,d,h,w], k [cout,cin,k,k,k] (cubic kernel), stride 1.
inline std::vector<double> conv3d(const std::vector<double>& in, std::size_t cin, std::size_t d, std::size_t h,
                                  std::size_t w, const std::vector<double>& k, const std::vector<double>& b,
                                  std::size_t cout, std::size_t ks, bool same_pad, std::array<std::size_t, 3>& od) {
  const long p = same_pad ? static_cast<long>(ks / 2) : 0;
  od = {d + 2 * p - ks + 1, h + 2 * p - ks + 1, w + 2 * p - ks + 1};
  std::vector<double> out(cout * od[0] * od[1] * od[2]);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t z = 0; z < od[0]; ++z)
      for (std::size_t y = 0; y < od[1]; ++y)
        for (std::size_t x = 0; x < od[2]; ++x) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t kz = 0; kz < ks; ++kz)
              for (std::size_t ky = 0; ky < ks; ++ky)
                for (std::size_t kx = 0; kx < ks; ++kx) {
                  const long iz = static_cast<long>(z + kz) - p, iy = static_cast<long>(y + ky) - p,
                             ix = static_cast<long>(x + kx) - p;
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= static_cast<long>(d) || iy >= static_cast<long>(h) ||
                      ix >= static_cast<long>(w))
                    continue;
                  acc += k[(((co * cin + ci) * ks + kz) * ks + ky) * ks + kx] * in[((ci * d + iz) * h + iy) * w + ix];
                }
          out[((co * od[0] + z) * od[1] + y) * od[2] + x] = acc;
        }
  return out;
}

// Scatter form of the transposed convolution: every input pixel stamps its
// weighted kernel into the output, input channels in ascending order.
inline std::vector<double> deconv2d(const std::vector<double>& in, std::size_t cin, std::size_t h, std::size_t w,
                                    const std::vector<double>& k, std::size_t cout, std::size_t ks,
                                    std::size_t stride) {
  const std::size_t oh = h * stride, ow = w * stride;
  const long crop = static_cast<long>((ks - stride) / 2);
  std::vector<double> out(cout * oh * ow, 0.0);
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t ky = 0; ky < ks; ++ky)
            for (std::size_t kx = 0; kx < ks; ++kx) {
              const long oy = static_cast<long>(y * stride + ky) - crop, ox = static_cast<long>(x * stride + kx) - crop;
              if (oy < 0 || ox < 0 || oy >= static_cast<long>(oh) || ox >= static_cast<long>(ow)) continue;
              out[(co * oh + oy) * ow + ox] += in[(ci * h + y) * w + x] * k[((ci * cout + co) * ks + ky) * ks + kx];
            }
  return out;
}

inline std::vector<double> maxpool2d(const std::vector<double>& in, std::size_t c, std::size_t h, std::size_t w,
                                     std::vector<std::uint32_t>* argmax = nullptr) {
  std::vector<double> out(c * (h / 2) * (w / 2));
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h / 2; ++y)
      for (std::size_t x = 0; x < w / 2; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t where = 0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t i = (ch * h + 2 * y + dy) * w + 2 * x + dx;
            if (in[i] > best) {
              best = in[i];
              where = i;
            }
          }
        const std::size_t o = (ch * (h / 2) + y) * (w / 2) + x;
        out[o] = best;
        if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(where);
      }
  return out;
}

inline double softmax_ce(const std::vector<double>& logits, const std::vector<std::uint8_t>& target) {
  const std::size_t n = target.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = logits[i], b = logits[n + i];
    const double z = target[i] ? b : a;
    total += std::log(std::exp(a) + std::exp(b)) - z;
  }
  return total / static_cast<double>(n);
}

// Breadth-first flood fill with 26-neighbourhoods, seeds visited in scan order.
inline std::vector<std::uint32_t> flood_fill_labels(const cathseg::Mask3& mask, std::size_t& count) {
  const auto [nx, ny, nz] = mask.dims();
  std::vector<std::uint32_t> label(mask.size(), 0);
  count = 0;
  for (std::size_t s = 0; s < mask.size(); ++s) {
    if (!mask[s] || label[s]) continue;
    label[s] = static_cast<std::uint32_t>(++count);
    std::deque<std::size_t> queue{s};
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      const long x = static_cast<long>(i % nx), y = static_cast<long>((i / nx) % ny), z = static_cast<long>(i / (nx * ny));
      for (long dz = -1; dz <= 1; ++dz)
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            const long X = x + dx, Y = y + dy, Z = z + dz;
            if (X < 0 || Y < 0 || Z < 0 || X >= static_cast<long>(nx) || Y >= static_cast<long>(ny) ||
                Z >= static_cast<long>(nz))
              continue;
            const std::size_t j = static_cast<std::size_t>(X) + nx * (static_cast<std::size_t>(Y) + ny * Z);
            if (mask[j] && !label[j]) {
              label[j] = label[s];
              queue.push_back(j);
            }
          }
    }
  }
  return label;
}

inline double directed_mean(const cathseg::Mask3& from, const cathseg::Mask3& to) {
  std::vector<std::array<long, 3>> targets;
  for (std::size_t j = 0; j < to.size(); ++j)
    if (to[j]) {
      const auto c = to.coord(j);
      targets.push_back({c[0], c[1], c[2]});
    }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (!from[i]) continue;
    const auto c = from.coord(i);
    long best = std::numeric_limits<long>::max();
    for (const auto& t : targets) {
      const long dx = c[0] - t[0], dy = c[1] - t[1], dz = c[2] - t[2];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    sum += std::sqrt(static_cast<double>(best));
    ++n;
  }
  return sum / static_cast<double>(n);
}

inline double ahd(const cathseg::Mask3& a, const cathseg::Mask3& b) {
  return 0.5 * (directed_mean(a, b) + directed_mean(b, a));
}

inline double polyline_distance(const cathseg::Point3& p, const cathseg::Polyline& line) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const auto& a = line[i];
    const auto& b = line[i + 1];
    const double ux = b[0] - a[0], uy = b[1] - a[1], uz = b[2] - a[2];
    const double len2 = ux * ux + uy * uy + uz * uz;
    double t = len2 > 0.0 ? ((p[0] - a[0]) * ux + (p[1] - a[1]) * uy + (p[2] - a[2]) * uz) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = p[0] - (a[0] + t * ux), dy = p[1] - (a[1] + t * uy), dz = p[2] - (a[2] + t * uz);
    best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
  }
  return best;
}

// Natural cubic spline through knots at parameters u (any count), solved with
// the Thomas algorithm; evaluated at parameter s.
inline cathseg::Point3 natural_spline(const std::vector<cathseg::Point3>& knots, const std::vector<double>& u, double s) {
  const std::size_t n = knots.size();
  cathseg::Point3 out{};
  for (int dim = 0; dim < 3; ++dim) {
    std::vector<double> y(n), m(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) y[i] = knots[i][dim];
    if (n > 2) {
      const std::size_t k = n - 2;
      std::vector<double> diag(k), upper(k), lower(k), rhs(k);
      for (std::size_t i = 1; i + 1 < n; ++i) {
        const double h0 = u[i] - u[i - 1], h1 = u[i + 1] - u[i];
        diag[i - 1] = 2.0 * (h0 + h1);
        lower[i - 1] = h0;
        upper[i - 1] = h1;
        rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
      }
      for (std::size_t i = 1; i < k; ++i) {
        const double f = lower[i] / diag[i - 1];
        diag[i] -= f * upper[i - 1];
        rhs[i] -= f * rhs[i - 1];
      }
      m[k] = rhs[k - 1] / diag[k - 1];
      for (std::size_t i = k - 1; i >= 1; --i) m[i] = (rhs[i - 1] - upper[i - 1] * m[i + 1]) / diag[i - 1];
    }
    std::size_t seg = 0;
    while (seg + 2 < n && s > u[seg + 1]) ++seg;
    const double h = u[seg + 1] - u[seg];
    const double a = (u[seg + 1] - s) / h, b = (s - u[seg]) / h;
    out[dim] = a * y[seg] + b * y[seg + 1] + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * h * h / 6.0;
  }
  return out;
}

}  // namespace oracle
