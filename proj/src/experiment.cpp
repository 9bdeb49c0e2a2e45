#include "cathseg/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cathseg/rng.hpp"

namespace cathseg {

double FoldOutcome::mean_dice() const {
  if (volumes.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& v : volumes) sum += v.metrics.dice;
  return sum / static_cast<double>(volumes.size());
}

std::optional<double> FoldOutcome::mean_se_voxels() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : volumes) {
    if (!v.se_voxels) continue;
    sum += *v.se_voxels;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::uint64_t fold_net_seed(std::uint64_t root, std::size_t fold) { return derive_seed(root, {5, fold}); }
std::uint64_t fold_train_seed(std::uint64_t root, std::size_t fold) { return derive_seed(root, {6, fold}); }
Axis fold_axis(std::uint64_t root, std::size_t fold) { return random_axis(derive_seed(root, {7, fold})); }

FoldOutcome run_fold(const std::vector<LabeledVolume>& data, const std::vector<std::vector<std::size_t>>& folds,
                     std::size_t fold, const FoldSetup& setup, std::uint64_t root_seed) {
  if (fold >= folds.size()) throw TrainingError("fold " + std::to_string(fold) + " out of range");
  std::vector<LabeledVolume> train_set;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (f == fold) continue;
    for (auto i : folds[f]) train_set.push_back(data.at(i));
  }

  FoldOutcome out;
  out.fold = fold;
  out.axis = fold_axis(root_seed, fold);

  TrainHyper hyper = setup.hyper;
  hyper.seed = fold_train_seed(root_seed, fold);
  hyper.axis = out.axis;
  auto net = build_network<float>(setup.net, fold_net_seed(root_seed, fold));
  out.training = train(net, train_set, hyper);

  PredictOptions predict = setup.predict;
  predict.mode = hyper.mode;
  predict.gap_d = hyper.gap_d;
  predict.axis = out.axis;
  for (auto i : folds[fold]) {
    const auto& truth = data.at(i).mask;
    const Mask3 pred = threshold(predict_volume(net, data[i].volume, predict));
    VolumeOutcome v;
    v.index = i;
    std::optional<CatheterModel> model;
    if (setup.localize) {
      try {
        model = localize(pred, setup.ransac);
      } catch (const LocalizerError&) {
      }
    }
    v.metrics = evaluate(pred, truth, model ? &*model : nullptr);
    if (model && truth.count()) v.se_voxels = skeleton_error(model->polyline, annotation_skeleton(truth), {1, 1, 1});
    out.volumes.push_back(v);
  }
  return out;
}

std::vector<SweepRow> sweep_d(const std::vector<LabeledVolume>& data, const std::vector<std::vector<std::size_t>>& folds,
                              const FoldSetup& setup, const SweepOptions& options, std::uint64_t root_seed) {
  std::vector<std::size_t> run = options.folds;
  if (run.empty())
    for (std::size_t f = 0; f < folds.size(); ++f) run.push_back(f);

  std::vector<SweepRow> rows;
  for (Mode mode : options.modes) {
    for (std::size_t d : options.d_values) {
      FoldSetup s = setup;
      s.hyper.mode = mode;
      s.hyper.gap_d = d;
      s.localize = false;
      std::vector<double> dice;
      for (auto f : run)
        for (const auto& v : run_fold(data, folds, f, s, root_seed).volumes) dice.push_back(v.metrics.dice);
      SweepRow row;
      row.mode = mode;
      row.gap_d = d;
      row.volumes = dice.size();
      for (double x : dice) row.mean_dice += x;
      if (!dice.empty()) row.mean_dice /= static_cast<double>(dice.size());
      if (dice.size() > 1) {
        double ss = 0.0;
        for (double x : dice) ss += (x - row.mean_dice) * (x - row.mean_dice);
        row.std_dice = std::sqrt(ss / static_cast<double>(dice.size() - 1));
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os.precision(6);
  os << "mode,d,mean_dice,std_dice,volumes\n";
  for (const auto& r : rows)
    os << to_string(r.mode) << ',' << r.gap_d << ',' << std::fixed << r.mean_dice << ',' << r.std_dice << ','
       << r.volumes << '\n';
  return os.str();
}

std::size_t best_gap(const std::vector<SweepRow>& rows, Mode mode) {
  const SweepRow* best = nullptr;
  for (const auto& r : rows) {
    if (r.mode != mode) continue;
    if (!best || r.mean_dice > best->mean_dice || (r.mean_dice == best->mean_dice && r.gap_d < best->gap_d))
      best = &r;
  }
  if (!best) throw TrainingError(std::string("sweep has no rows for mode ") + to_string(mode));
  return best->gap_d;
}

double dice_at(const std::vector<SweepRow>& rows, Mode mode, std::size_t d) {
  for (const auto& r : rows)
    if (r.mode == mode && r.gap_d == d) return r.mean_dice;
  throw TrainingError("sweep has no row for d=" + std::to_string(d));
}

}  // namespace cathseg
