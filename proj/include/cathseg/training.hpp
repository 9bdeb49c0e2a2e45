#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "cathseg/network.hpp"
#include "cathseg/volume.hpp"

namespace cathseg {

enum class Provenance { catheter_centered, negative };

struct TrainSample {
  Volume3 patch;  // M^3
  Mask3 label;    // M^3
  Provenance provenance = Provenance::negative;
};

// Patch centre drawn from a volume's annotation.
struct SampleCenter {
  std::size_t volume = 0;  // index into the dataset
  std::size_t voxel = 0;   // linear voxel index of the centre
  Provenance provenance = Provenance::negative;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One centre per catheter voxel (subsampled to `positive_cap` when larger)
// plus the same number of centres on randomly chosen non-catheter voxels.
std::vector<SampleCenter> sample_centers(const Mask3& mask, std::uint64_t seed,
                                         std::size_t positive_cap = std::numeric_limits<std::size_t>::max(),
                                         std::size_t volume_index = 0);

// M^3 patch (and label) centred on a voxel, edge-replicated at the borders.
// The centre sits at offset M/2 along each axis.
TrainSample extract_sample(const Volume3& vol, const Mask3& mask, std::size_t voxel, std::size_t m,
                           Provenance provenance);

std::vector<TrainSample> sample_training_patches(const Volume3& vol, const Mask3& mask, std::size_t m,
                                                 std::uint64_t seed,
                                                 std::size_t positive_cap = std::numeric_limits<std::size_t>::max());

// One augmentation draw. Geometric parts act on patch and label alike;
// intensity parts touch the patch only.
struct AugmentDraw {
  Axis rotation_axis = Axis::Z;
  int quarter_turns = 0;                  // 0..3
  std::array<bool, 3> mirror{false, false, false};
  double intensity_scale = 1.0;           // [0.8, 1.2]
  double intensity_shift = 0.0;           // [-0.1, 0.1]

  static AugmentDraw identity() { return {}; }
  static AugmentDraw random(std::uint64_t seed);
};

TrainSample apply_augment(const TrainSample& sample, const AugmentDraw& draw);
TrainSample augment(const TrainSample& sample, std::uint64_t seed);

struct LabeledVolume {
  Volume3 volume;
  Mask3 mask;
};

struct TrainHyper {
  double lr = 1e-5;
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // 0: run all epochs
  std::size_t batch = 1;
  std::uint64_t seed = 0;
  std::size_t gap_d = 3;
  Mode mode = Mode::df;
  Axis axis = Axis::X;
  std::size_t patch_size = 48;
  std::size_t positive_cap = 2000;
  bool augment = true;
};

struct TrainResult {
  std::vector<double> loss_trace;  // one entry per optimiser step
  std::size_t steps = 0;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

// Adam on the cross-entropy of the chosen mode's prediction for each sampled
// patch. Volumes are min-max normalised first. Throws TrainingError if the
// loss becomes non-finite.
template <typename T>
TrainResult train(Network<T>& net, const std::vector<LabeledVolume>& dataset, const TrainHyper& hyper,
                  const StepCallback& on_step = {});

// Loss of one sample under the chosen mode; records the graph when grads are on.
template <typename T>
nn::Tensor<T> sample_loss(const Network<T>& net, const TrainSample& sample, Mode mode, std::size_t d, Axis axis,
                          bool training, std::uint64_t dropout_seed);

}  // namespace cathseg
