#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cathseg/tensor.hpp"

namespace cathseg::nn {

// Bias-corrected Adam. beta1/beta2/eps default to the usual values; only the
// learning rate is normally tuned.
template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

// Updates params in place from matching grads. An empty grad span counts as
// zero. Moments are allocated on first use.
template <typename T>
void adam_step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads,
               AdamState<T>& state);

// Convenience overload reading each tensor's accumulated gradient.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state);

}  // namespace cathseg::nn
