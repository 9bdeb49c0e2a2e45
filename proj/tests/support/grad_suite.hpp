#pragma once

// Finite-difference checks for every differentiable op and for the full
// network losses, in double precision.

#include <string>
#include <vector>

#include "cathseg/network.hpp"
#include "cathseg/slicer.hpp"
#include "cathseg/training.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace grad_suite {

using cathseg::nn::Shape;
using cathseg::nn::Tensor;
namespace nn = cathseg::nn;

struct OpCheck {
  std::string name;
  gradcheck::Result result;
};

inline Tensor<double> leaf(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return Tensor<double>(shape, oracle::random_values(nn::numel(shape), seed, lo, hi), true);
}

// Values bounded away from zero so ReLU kinks stay outside the FD stencil.
inline Tensor<double> leaf_off_zero(const Shape& shape, std::uint64_t seed) {
  auto v = oracle::random_values(nn::numel(shape), seed, 0.05, 1.0);
  cathseg::Rng rng(seed ^ 0x5555);
  for (auto& x : v)
    if (rng.coin()) x = -x;
  return Tensor<double>(shape, v, true);
}

// Weighted sum so every output element gets a distinct upstream gradient.
inline Tensor<double> project(const Tensor<double>& y, std::uint64_t seed) {
  const Tensor<double> r(y.shape(), oracle::random_values(y.numel(), seed));
  return nn::sum(nn::mul(y, r));
}

inline cathseg::TrainSample small_sample(std::size_t m, std::uint64_t seed) {
  cathseg::TrainSample s;
  s.patch = cathseg::Volume3({m, m, m}, {1, 1, 1}, oracle::random_values(m * m * m, seed, 0.0, 1.0));
  std::vector<std::uint8_t> labels(m * m * m);
  cathseg::Rng rng(seed + 1);
  for (auto& l : labels) l = rng.uniform(0.0, 1.0) < 0.3 ? 1 : 0;
  s.label = cathseg::Mask3({m, m, m}, {1, 1, 1}, labels);
  return s;
}

inline std::vector<OpCheck> run(std::size_t samples = 50, double step = 1e-4) {
  std::vector<OpCheck> out;
  auto check = [&](const std::string& name, const std::function<Tensor<double>()>& loss,
                   const std::vector<Tensor<double>>& leaves) {
    out.push_back({name, gradcheck::check(loss, leaves, samples, std::hash<std::string>{}(name), step)});
  };

  {
    auto a = leaf({3, 4, 5}, 1), b = leaf({3, 4, 5}, 2);
    check("add", [=] { return project(nn::add(a, b), 3); }, {a, b});
    check("mul", [=] { return project(nn::mul(a, b), 4); }, {a, b});
    check("sum", [=] { return nn::sum(nn::mul(nn::sum(a), nn::sum(b))); }, {a, b});
  }
  {
    auto a = leaf_off_zero({4, 6, 6}, 5);
    check("relu", [=] { return project(nn::relu(a), 6); }, {a});
    check("dropout", [=] { return project(nn::dropout(a, 0.3, true, 99), 7); }, {a});
  }
  {
    auto x = leaf({3, 8, 8}, 8), w = leaf({4, 3, 3, 3}, 9), b = leaf({4}, 10);
    check("conv2d", [=] { return project(nn::conv2d(x, w, b), 11); }, {x, w, b});
    auto w2 = leaf({2, 3, 2, 2}, 12), b2 = leaf({2}, 13);
    check("conv2d_stride2_valid", [=] { return project(nn::conv2d(x, w2, b2, 2, false), 14); }, {x, w2, b2});
  }
  {
    auto x = leaf({2, 5, 5, 5}, 15), w = leaf({3, 2, 3, 3, 3}, 16), b = leaf({3}, 17);
    check("conv3d", [=] { return project(nn::conv3d(x, w, b), 18); }, {x, w, b});
  }
  {
    auto x = leaf({3, 4, 4}, 19), w = leaf({3, 2, 2, 2}, 20), w4 = leaf({3, 2, 4, 4}, 21);
    check("deconv2d", [=] { return project(nn::deconv2d(x, w, 2), 22); }, {x, w});
    check("deconv2d_k4_s2", [=] { return project(nn::deconv2d(x, w4, 2), 23); }, {x, w4});
  }
  {
    auto x = leaf({3, 8, 8}, 24);
    check("maxpool2d", [=] { return project(nn::maxpool2d(x).output, 25); }, {x});
  }
  {
    auto z = leaf({2, 4, 4, 4}, 26, -3.0, 3.0);
    std::vector<std::uint8_t> target(64);
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = (i * 7) % 3 == 0;
    check("softmax_ce", [=] { return nn::softmax_ce(z, target).loss; }, {z});
  }
  {
    const std::size_t m = 4;
    std::vector<Tensor<double>> px, py, pz, all;
    for (std::size_t k = 0; k < m; ++k) {
      px.push_back(leaf({2, m, m}, 100 + k));
      py.push_back(leaf({2, m, m}, 200 + k));
      pz.push_back(leaf({2, m, m}, 300 + k));
    }
    for (const auto* v : {&px, &py, &pz}) all.insert(all.end(), v->begin(), v->end());
    check("stack_fuse", [=] {
      return project(cathseg::fuse(cathseg::stack_features(px, cathseg::Axis::X), cathseg::stack_features(py, cathseg::Axis::Y),
                                   cathseg::stack_features(pz, cathseg::Axis::Z)),
                     27);
    }, all);
  }
  {
    auto net = std::make_shared<cathseg::Network<double>>(
        cathseg::build_network<double>(cathseg::NetConfig::tiny(), 31));
    const auto sample = small_sample(8, 32);
    std::vector<Tensor<double>> df_leaves, sa_leaves;
    for (const auto& p : net->params()) {
      // The 2D head does not feed the fused prediction, nor the 3D head the per-plane one.
      if (p.name.rfind("head2d", 0) != 0) df_leaves.push_back(p.tensor);
      if (p.name.rfind("fusion", 0) != 0) sa_leaves.push_back(p.tensor);
    }
    check("dffcn_df_loss", [=] {
      return cathseg::sample_loss(*net, sample, cathseg::Mode::df, 3, cathseg::Axis::X, true, 33);
    }, df_leaves);
    check("dffcn_single_axis_loss", [=] {
      return cathseg::sample_loss(*net, sample, cathseg::Mode::single_axis, 2, cathseg::Axis::Y, true, 34);
    }, sa_leaves);
  }
  return out;
}

}  // namespace grad_suite
