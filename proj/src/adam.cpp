#include "cathseg/adam.hpp"

#include <cmath>
#include <string>

namespace cathseg::nn {

template <typename T>
void adam_step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads,
               AdamState<T>& state) {
  if (params.size() != grads.size())
    throw TensorError("adam_step: " + std::to_string(params.size()) + " params but " +
                      std::to_string(grads.size()) + " grads");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
      state.m[p].assign(params[p].size(), T(0));
      state.v[p].assign(params[p].size(), T(0));
    }
  }
  if (state.m.size() != params.size()) throw TensorError("adam_step: parameter count changed");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (state.m[p].size() != params[p].size())
      throw TensorError("adam_step: moment shape mismatch for parameter " + std::to_string(p));
    if (!grads[p].empty() && grads[p].size() != params[p].size())
      throw TensorError("adam_step: gradient shape mismatch for parameter " + std::to_string(p));
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& m = state.m[p];
    auto& v = state.v[p];
    const auto g = grads[p];
    auto w = params[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      const double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * static_cast<double>(v[i]) + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
  std::vector<std::span<T>> ps;
  std::vector<std::span<const T>> gs;
  ps.reserve(params.size());
  gs.reserve(params.size());
  for (auto& t : params) {
    ps.push_back(t.values());
    gs.push_back(t.grad());
  }
  adam_step<T>(std::span<const std::span<T>>(ps), std::span<const std::span<const T>>(gs), state);
}

template void adam_step<float>(std::span<const std::span<float>>, std::span<const std::span<const float>>,
                               AdamState<float>&);
template void adam_step<double>(std::span<const std::span<double>>, std::span<const std::span<const double>>,
                                AdamState<double>&);
template void adam_step<float>(std::span<Tensor<float>>, AdamState<float>&);
template void adam_step<double>(std::span<Tensor<double>>, AdamState<double>&);

}  // namespace cathseg::nn
