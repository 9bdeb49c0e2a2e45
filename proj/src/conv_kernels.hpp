#pragma once

// Dense convolution kernels on zero-padded, flattened planes.
//
// The padded input of one channel is laid out as a single row-major block of
// Hp x Wp (x Dp). An output element at flat position i (computed on the padded
// row pitch) accumulates input[i + offset(kernel tap)], so every tap becomes
// one contiguous multiply-add sweep. Columns past the valid output width are
// computed and discarded. Per output element the accumulation order is bias,
// then input channel, then kernel taps in row-major order.

#include <algorithm>
#include <cstddef>
#include <vector>

namespace cathseg::nn::kernels {

struct Geometry {
  std::size_t depth = 1, height = 1, width = 1;  // unpadded input extent
  std::size_t kd = 1, kh = 1, kw = 1;
  std::size_t pd = 0, ph = 0, pw = 0;

  std::size_t dp() const { return depth + 2 * pd; }
  std::size_t hp() const { return height + 2 * ph; }
  std::size_t wp() const { return width + 2 * pw; }
  std::size_t out_d() const { return dp() - kd + 1; }
  std::size_t out_h() const { return hp() - kh + 1; }
  std::size_t out_w() const { return wp() - kw + 1; }
  std::size_t padded_plane() const { return dp() * hp() * wp(); }
  // Flat length of the output sweep on the padded pitch.
  std::size_t sweep() const { return out_d() * hp() * wp(); }
  std::size_t taps() const { return kd * kh * kw; }
  std::size_t tap_offset(std::size_t t) const {
    const std::size_t z = t / (kh * kw), y = (t / kw) % kh, x = t % kw;
    return (z * hp() + y) * wp() + x;
  }
  std::size_t out_count() const { return out_d() * out_h() * out_w(); }
};

// Copies `channels` planes into a zero-padded buffer with trailing slack so a
// sweep starting at any tap offset stays inside the allocation.
template <typename T>
std::vector<T> pad_planes(const T* in, std::size_t channels, const Geometry& g) {
  const std::size_t plane = g.padded_plane();
  const std::size_t slack = g.tap_offset(g.taps() - 1) + g.wp();
  std::vector<T> out(channels * plane + slack, T(0));
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t z = 0; z < g.depth; ++z)
      for (std::size_t y = 0; y < g.height; ++y) {
        const T* src = in + ((c * g.depth + z) * g.height + y) * g.width;
        T* dst = out.data() + c * plane + ((z + g.pd) * g.hp() + (y + g.ph)) * g.wp() + g.pw;
        std::copy(src, src + g.width, dst);
      }
  return out;
}

// Spreads a dense output-shaped array onto the padded pitch (zeros in the
// discarded columns/rows) so it can drive backward sweeps.
template <typename T>
std::vector<T> spread_to_pitch(const T* dense, std::size_t channels, const Geometry& g) {
  const std::size_t sweep = g.sweep();
  std::vector<T> out(channels * sweep, T(0));
  const std::size_t od = g.out_d(), oh = g.out_h(), ow = g.out_w();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y) {
        const T* src = dense + ((c * od + z) * oh + y) * ow;
        std::copy(src, src + ow, out.data() + c * sweep + (z * g.hp() + y) * g.wp());
      }
  return out;
}

template <typename T>
void gather_from_pitch(const T* pitched, std::size_t channel_stride, std::size_t channels,
                       const Geometry& g, T* dense) {
  const std::size_t od = g.out_d(), oh = g.out_h(), ow = g.out_w();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y) {
        const T* src = pitched + c * channel_stride + (z * g.hp() + y) * g.wp();
        std::copy(src, src + ow, dense + ((c * od + z) * oh + y) * ow);
      }
}

// out[co] = bias[co] + sum_ci sum_tap w[co,ci,tap] * in[ci](shifted by tap).
template <typename T>
void conv_forward(const T* input, std::size_t cin, const T* weight, const T* bias,
                  std::size_t cout, const Geometry& g, T* output) {
  const auto padded = pad_planes(input, cin, g);
  const std::size_t plane = g.padded_plane(), sweep = g.sweep(), taps = g.taps();
  std::vector<std::size_t> offsets(taps);
  for (std::size_t t = 0; t < taps; ++t) offsets[t] = g.tap_offset(t);

  constexpr std::size_t kBlock = 4;
  std::vector<T> acc(kBlock * sweep);
  for (std::size_t co0 = 0; co0 < cout; co0 += kBlock) {
    const std::size_t nb = std::min(kBlock, cout - co0);
    for (std::size_t b = 0; b < nb; ++b) std::fill_n(acc.data() + b * sweep, sweep, bias[co0 + b]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* src_plane = padded.data() + ci * plane;
      for (std::size_t t = 0; t < taps; ++t) {
        const T* src = src_plane + offsets[t];
        if (nb == kBlock) {
          const T w0 = weight[((co0 + 0) * cin + ci) * taps + t];
          const T w1 = weight[((co0 + 1) * cin + ci) * taps + t];
          const T w2 = weight[((co0 + 2) * cin + ci) * taps + t];
          const T w3 = weight[((co0 + 3) * cin + ci) * taps + t];
          T* a0 = acc.data();
          T* a1 = a0 + sweep;
          T* a2 = a1 + sweep;
          T* a3 = a2 + sweep;
          for (std::size_t i = 0; i < sweep; ++i) {
            const T v = src[i];
            a0[i] += w0 * v;
            a1[i] += w1 * v;
            a2[i] += w2 * v;
            a3[i] += w3 * v;
          }
        } else {
          for (std::size_t b = 0; b < nb; ++b) {
            const T w = weight[((co0 + b) * cin + ci) * taps + t];
            T* a = acc.data() + b * sweep;
            for (std::size_t i = 0; i < sweep; ++i) a[i] += w * src[i];
          }
        }
      }
    }
    gather_from_pitch(acc.data(), sweep, nb, g, output + co0 * g.out_count());
  }
}

// Lane-split dot product: fixed association order, vectorisable without
// reassociation flags.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t kLanes = 64 / sizeof(T);
  T lanes[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += a[i + l] * b[i + l];
  T tail = T(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  T s = T(0);
  for (std::size_t l = 0; l < kLanes; ++l) s += lanes[l];
  return s + tail;
}

// Four lane-split dot products of a[0..3] against one shared b, each with the
// association order of dot().
template <typename T>
void dot4(const T* const a[4], const T* b, std::size_t n, T out[4]) {
  constexpr std::size_t kLanes = 64 / sizeof(T);
  T lanes[4][kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) {
      const T v = b[i + l];
      lanes[0][l] += a[0][i + l] * v;
      lanes[1][l] += a[1][i + l] * v;
      lanes[2][l] += a[2][i + l] * v;
      lanes[3][l] += a[3][i + l] * v;
    }
  for (int k = 0; k < 4; ++k) {
    T tail = T(0);
    for (std::size_t j = i; j < n; ++j) tail += a[k][j] * b[j];
    T s = T(0);
    for (std::size_t l = 0; l < kLanes; ++l) s += lanes[k][l];
    out[k] = s + tail;
  }
}

// grad_output is dense [cout, out...]. Any of the three outputs may be null.
template <typename T>
void conv_backward(const T* input, std::size_t cin, const T* weight, std::size_t cout,
                   const Geometry& g, const T* grad_output, T* grad_input, T* grad_weight,
                   T* grad_bias) {
  const std::size_t plane = g.padded_plane(), sweep = g.sweep(), taps = g.taps();
  const auto gpitch = spread_to_pitch(grad_output, cout, g);
  std::vector<std::size_t> offsets(taps);
  for (std::size_t t = 0; t < taps; ++t) offsets[t] = g.tap_offset(t);

  if (grad_bias) {
    for (std::size_t co = 0; co < cout; ++co) {
      const T* src = grad_output + co * g.out_count();
      T s = T(0);
      constexpr std::size_t kLanes = 64 / sizeof(T);
      T lanes[kLanes] = {};
      std::size_t i = 0;
      const std::size_t n = g.out_count();
      for (; i + kLanes <= n; i += kLanes)
        for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += src[i + l];
      for (std::size_t l = 0; l < kLanes; ++l) s += lanes[l];
      for (; i < n; ++i) s += src[i];
      grad_bias[co] += s;
    }
  }

  if (grad_weight) {
    const auto padded = pad_planes(input, cin, g);
    std::size_t co = 0;
    for (; co + 4 <= cout; co += 4) {
      const T* gs[4] = {gpitch.data() + co * sweep, gpitch.data() + (co + 1) * sweep,
                        gpitch.data() + (co + 2) * sweep, gpitch.data() + (co + 3) * sweep};
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* src_plane = padded.data() + ci * plane;
        for (std::size_t t = 0; t < taps; ++t) {
          T d[4];
          dot4(gs, src_plane + offsets[t], sweep, d);
          for (std::size_t k = 0; k < 4; ++k) grad_weight[((co + k) * cin + ci) * taps + t] += d[k];
        }
      }
    }
    for (; co < cout; ++co) {
      const T* gs = gpitch.data() + co * sweep;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* src_plane = padded.data() + ci * plane;
        for (std::size_t t = 0; t < taps; ++t)
          grad_weight[(co * cin + ci) * taps + t] += dot(gs, src_plane + offsets[t], sweep);
      }
    }
  }

  if (grad_input) {
    // Full correlation of the output gradient with the flipped kernel, with
    // input and output channels swapped.
    Geometry tg;
    tg.depth = g.out_d();
    tg.height = g.out_h();
    tg.width = g.out_w();
    tg.kd = g.kd;
    tg.kh = g.kh;
    tg.kw = g.kw;
    tg.pd = g.kd - 1 - g.pd;
    tg.ph = g.kh - 1 - g.ph;
    tg.pw = g.kw - 1 - g.pw;
    std::vector<T> flipped(cin * cout * taps);
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t t = 0; t < taps; ++t)
          flipped[(ci * cout + co) * taps + (taps - 1 - t)] = weight[(co * cin + ci) * taps + t];
    const std::vector<T> zero_bias(cin, T(0));
    std::vector<T> gin(cin * tg.out_count());
    conv_forward(grad_output, cout, flipped.data(), zero_bias.data(), cin, tg, gin.data());
    for (std::size_t i = 0; i < gin.size(); ++i) grad_input[i] += gin[i];
  }
}

}  // namespace cathseg::nn::kernels
