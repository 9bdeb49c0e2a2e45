#include "cathseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "cathseg/adam.hpp"
#include "cathseg/rng.hpp"

namespace cathseg {

std::vector<SampleCenter> sample_centers(const Mask3& mask, std::uint64_t seed, std::size_t positive_cap,
                                         std::size_t volume_index) {
  std::vector<std::size_t> positives;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) positives.push_back(i);
  if (positives.empty()) throw TrainingError("sample_centers: mask has no catheter voxels");

  Rng rng(seed);
  if (positives.size() > positive_cap) {
    for (std::size_t i = 0; i < positive_cap; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(positives.size() - i));
      std::swap(positives[i], positives[j]);
    }
    positives.resize(positive_cap);
    std::sort(positives.begin(), positives.end());
  }

  const std::size_t negatives_available = mask.size() - mask.count();
  const std::size_t wanted = std::min(positives.size(), negatives_available);
  std::vector<std::size_t> negatives;
  std::unordered_set<std::size_t> taken;
  if (wanted * 2 > negatives_available) {
    // Dense request: draw without replacement from the explicit list.
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (!mask[i]) pool.push_back(i);
    for (std::size_t i = 0; i < wanted; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
      negatives.push_back(pool[i]);
    }
  } else {
    while (negatives.size() < wanted) {
      const auto i = static_cast<std::size_t>(rng.below(mask.size()));
      if (!mask[i] && taken.insert(i).second) negatives.push_back(i);
    }
  }

  std::vector<SampleCenter> centers;
  centers.reserve(positives.size() + negatives.size());
  for (auto i : positives) centers.push_back({volume_index, i, Provenance::catheter_centered});
  for (auto i : negatives) centers.push_back({volume_index, i, Provenance::negative});
  return centers;
}

TrainSample extract_sample(const Volume3& vol, const Mask3& mask, std::size_t voxel, std::size_t m,
                           Provenance provenance) {
  const Index3 c = mask.coord(voxel);
  const auto half = static_cast<std::int64_t>(m / 2);
  const Index3 origin{c[0] - half, c[1] - half, c[2] - half};
  return {crop_replicated(vol, origin, m), crop_replicated(mask, origin, m), provenance};
}

std::vector<TrainSample> sample_training_patches(const Volume3& vol, const Mask3& mask, std::size_t m,
                                                 std::uint64_t seed, std::size_t positive_cap) {
  if (vol.dims() != mask.dims()) throw TrainingError("volume and mask dims differ");
  std::vector<TrainSample> out;
  for (const auto& c : sample_centers(mask, seed, positive_cap))
    out.push_back(extract_sample(vol, mask, c.voxel, m, c.provenance));
  return out;
}

AugmentDraw AugmentDraw::random(std::uint64_t seed) {
  Rng rng(seed);
  AugmentDraw d;
  d.rotation_axis = static_cast<Axis>(rng.below(3));
  d.quarter_turns = static_cast<int>(rng.below(4));
  for (auto& m : d.mirror) m = rng.coin();
  d.intensity_scale = rng.uniform(0.8, 1.2);
  d.intensity_shift = rng.uniform(-0.1, 0.1);
  return d;
}

namespace {

// Source voxel of output voxel (x,y,z): undo mirroring, then undo rotation.
std::array<std::size_t, 3> source_voxel(std::array<std::size_t, 3> p, const AugmentDraw& d, std::size_t m) {
  for (int a = 0; a < 3; ++a)
    if (d.mirror[a]) p[a] = m - 1 - p[a];
  // One quarter turn about an axis maps (u, v) -> (m-1-v, u) in the plane
  // spanned by the two remaining axes taken in cyclic order.
  const int ax = static_cast<int>(d.rotation_axis);
  const int u = (ax + 1) % 3, v = (ax + 2) % 3;
  for (int t = 0; t < d.quarter_turns; ++t) {
    const std::size_t pu = p[u], pv = p[v];
    p[u] = pv;
    p[v] = m - 1 - pu;
  }
  return p;
}

}  // namespace

TrainSample apply_augment(const TrainSample& sample, const AugmentDraw& draw) {
  if (!sample.patch.is_cubic() || sample.patch.dims() != sample.label.dims())
    throw TrainingError("augment: patch must be cubic and match its label");
  const std::size_t m = sample.patch.dims()[0];
  std::vector<double> data(sample.patch.size());
  std::vector<std::uint8_t> labels(sample.label.size());
  std::size_t o = 0;
  for (std::size_t z = 0; z < m; ++z)
    for (std::size_t y = 0; y < m; ++y)
      for (std::size_t x = 0; x < m; ++x, ++o) {
        const auto s = source_voxel({x, y, z}, draw, m);
        const std::size_t i = s[0] + m * (s[1] + m * s[2]);
        data[o] = sample.patch[i] * draw.intensity_scale + draw.intensity_shift;
        labels[o] = sample.label[i];
      }
  return {Volume3(sample.patch.dims(), sample.patch.spacing(), std::move(data)),
          Mask3(sample.label.dims(), sample.label.spacing(), std::move(labels)), sample.provenance};
}

TrainSample augment(const TrainSample& sample, std::uint64_t seed) {
  return apply_augment(sample, AugmentDraw::random(seed));
}

template <typename T>
nn::Tensor<T> sample_loss(const Network<T>& net, const TrainSample& sample, Mode mode, std::size_t d, Axis axis,
                          bool training, std::uint64_t dropout_seed) {
  const auto logits = mode == Mode::df ? df_logits(net, sample.patch, d, training, dropout_seed)
                                       : single_axis_logits(net, sample.patch, d, axis, training, dropout_seed);
  return nn::softmax_ce(logits, sample.label.labels()).loss;
}

template <typename T>
TrainResult train(Network<T>& net, const std::vector<LabeledVolume>& dataset, const TrainHyper& hyper,
                  const StepCallback& on_step) {
  if (dataset.empty()) throw TrainingError("train: empty dataset");
  if (hyper.batch == 0) throw TrainingError("train: batch must be positive");
  if (hyper.patch_size % net.config().size_divisor() != 0)
    throw TrainingError("train: patch size must be divisible by " + std::to_string(net.config().size_divisor()));
  TrainResult result;
  if (hyper.epochs == 0) return result;

  std::vector<Volume3> volumes;
  std::vector<SampleCenter> centers;
  for (std::size_t v = 0; v < dataset.size(); ++v) {
    if (dataset[v].volume.dims() != dataset[v].mask.dims()) throw TrainingError("train: volume/mask dims differ");
    volumes.push_back(normalize(dataset[v].volume));
    auto c = sample_centers(dataset[v].mask, derive_seed(hyper.seed, {1, v}), hyper.positive_cap, v);
    centers.insert(centers.end(), c.begin(), c.end());
  }

  auto params = net.tensors();
  nn::AdamState<T> adam;
  adam.lr = hyper.lr;

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(hyper.seed, {2, epoch}));
    std::vector<std::size_t> order(centers.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    for (std::size_t b0 = 0; b0 < order.size(); b0 += hyper.batch) {
      if (hyper.max_steps && result.steps >= hyper.max_steps) return result;
      const std::size_t step = result.steps;
      const std::size_t count = std::min(hyper.batch, order.size() - b0);
      net.zero_grad();
      double total = 0.0;
      for (std::size_t j = 0; j < count; ++j) {
        const auto& c = centers[order[b0 + j]];
        TrainSample sample =
            extract_sample(volumes[c.volume], dataset[c.volume].mask, c.voxel, hyper.patch_size, c.provenance);
        if (hyper.augment) sample = augment(sample, derive_seed(hyper.seed, {3, step, j}));
        const auto loss = sample_loss(net, sample, hyper.mode, hyper.gap_d, hyper.axis, true,
                                      derive_seed(hyper.seed, {4, step, j}));
        nn::backward(loss);
        total += static_cast<double>(loss.item());
      }
      const double mean_loss = total / static_cast<double>(count);
      if (!std::isfinite(mean_loss))
        throw TrainingError("train: loss became non-finite at step " + std::to_string(step));
      if (count > 1)
        for (auto& p : params)
          if (p.has_grad())
            for (auto& g : p.mutable_grad()) g /= static_cast<T>(count);
      nn::adam_step<T>(std::span<nn::Tensor<T>>(params), adam);
      result.loss_trace.push_back(mean_loss);
      result.steps += 1;
      if (on_step) on_step(step, mean_loss);
    }
  }
  return result;
}

template nn::Tensor<float> sample_loss<float>(const Network<float>&, const TrainSample&, Mode, std::size_t, Axis,
                                              bool, std::uint64_t);
template nn::Tensor<double> sample_loss<double>(const Network<double>&, const TrainSample&, Mode, std::size_t,
                                                Axis, bool, std::uint64_t);
template TrainResult train<float>(Network<float>&, const std::vector<LabeledVolume>&, const TrainHyper&,
                                  const StepCallback&);
template TrainResult train<double>(Network<double>&, const std::vector<LabeledVolume>&, const TrainHyper&,
                                   const StepCallback&);

}  // namespace cathseg
