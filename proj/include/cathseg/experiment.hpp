#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cathseg/localizer.hpp"
#include "cathseg/metrics.hpp"
#include "cathseg/network.hpp"
#include "cathseg/training.hpp"

namespace cathseg {

// Everything needed to train one network on a fold and score its held-out
// volumes. Mode, gap and axis are taken from `hyper`; `predict` supplies the
// tiling and thread count.
struct FoldSetup {
  NetConfig net = NetConfig::tiny();
  TrainHyper hyper;
  PredictOptions predict;
  bool localize = true;
  RansacOptions ransac;
};

struct VolumeOutcome {
  std::size_t index = 0;  // position in the dataset
  MetricsReport metrics;
  std::optional<double> se_voxels;  // absent when localization found nothing
};

struct FoldOutcome {
  std::size_t fold = 0;
  Axis axis = Axis::X;  // axis used in single-axis mode
  TrainResult training;
  std::vector<VolumeOutcome> volumes;

  double mean_dice() const;
  // Mean over volumes with a catheter model.
  std::optional<double> mean_se_voxels() const;
};

// Network and training seeds for fold `f`, shared by every mode and gap so
// that sweeps compare like with like.
std::uint64_t fold_net_seed(std::uint64_t root, std::size_t fold);
std::uint64_t fold_train_seed(std::uint64_t root, std::size_t fold);
Axis fold_axis(std::uint64_t root, std::size_t fold);

FoldOutcome run_fold(const std::vector<LabeledVolume>& data, const std::vector<std::vector<std::size_t>>& folds,
                     std::size_t fold, const FoldSetup& setup, std::uint64_t root_seed);

struct SweepRow {
  Mode mode = Mode::df;
  std::size_t gap_d = 0;
  double mean_dice = 0.0;
  double std_dice = 0.0;
  std::size_t volumes = 0;
};

struct SweepOptions {
  std::vector<std::size_t> d_values{0, 1, 2, 3, 4, 5};
  std::vector<Mode> modes{Mode::df, Mode::single_axis};
  std::vector<std::size_t> folds;  // empty: every fold
};

// Trains and scores each (mode, d) pair on the folds; rows ordered by mode
// then d. Dice statistics pool the held-out volumes of all folds run.
std::vector<SweepRow> sweep_d(const std::vector<LabeledVolume>& data, const std::vector<std::vector<std::size_t>>& folds,
                              const FoldSetup& setup, const SweepOptions& options, std::uint64_t root_seed);

std::string sweep_csv(const std::vector<SweepRow>& rows);

// Gap with the highest mean Dice for one mode; the smallest d wins ties.
std::size_t best_gap(const std::vector<SweepRow>& rows, Mode mode);
double dice_at(const std::vector<SweepRow>& rows, Mode mode, std::size_t d);

}  // namespace cathseg
