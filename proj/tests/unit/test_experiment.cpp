#include <doctest.h>

#include <algorithm>
#include <set>

#include "cathseg/experiment.hpp"
#include "cathseg/phantom.hpp"

using namespace cathseg;

namespace {

std::vector<LabeledVolume> tiny_dataset(std::size_t n) {
  PhantomConfig c;
  c.dims = {24, 24, 24};
  c.n_distractors = 2;
  std::vector<LabeledVolume> out;
  for (auto& p : generate_dataset(n, 21, c)) out.push_back({p.volume, p.mask});
  return out;
}

FoldSetup quick_setup() {
  FoldSetup s;
  s.hyper.lr = 1e-3;
  s.hyper.max_steps = 3;
  s.hyper.patch_size = 16;
  s.hyper.positive_cap = 20;
  s.predict.core = 16;
  s.predict.outer = 24;
  s.predict.threads = 1;
  s.ransac.iterations = 50;
  return s;
}

}  // namespace

TEST_CASE("fold seeds differ by fold and by root") {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t root = 0; root < 3; ++root)
    for (std::size_t f = 0; f < 3; ++f) {
      seeds.insert(fold_net_seed(root, f));
      seeds.insert(fold_train_seed(root, f));
    }
  CHECK(seeds.size() == 18);
  CHECK(fold_axis(4, 1) == fold_axis(4, 1));
}

TEST_CASE("run_fold scores the held-out members") {
  const auto data = tiny_dataset(6);
  const auto folds = fold_split(6, 3);
  const auto setup = quick_setup();
  const auto a = run_fold(data, folds, 1, setup, 9);
  CHECK(a.fold == 1);
  CHECK(a.axis == fold_axis(9, 1));
  CHECK(a.training.steps == 3);
  REQUIRE(a.volumes.size() == 2);
  CHECK(a.volumes[0].index == 2);
  CHECK(a.volumes[1].index == 3);
  for (const auto& v : a.volumes) {
    CHECK(v.metrics.dice >= 0.0);
    CHECK(v.metrics.dice <= 1.0);
  }
  const auto b = run_fold(data, folds, 1, setup, 9);
  CHECK(a.training.loss_trace == b.training.loss_trace);
  CHECK(a.mean_dice() == b.mean_dice());
  CHECK_THROWS_AS(run_fold(data, folds, 3, setup, 9), TrainingError);
}

TEST_CASE("fold outcome means") {
  FoldOutcome o;
  CHECK(o.mean_dice() == 0.0);
  CHECK_FALSE(o.mean_se_voxels());
  VolumeOutcome a, b;
  a.metrics.dice = 0.25;
  b.metrics.dice = 0.75;
  a.se_voxels = 1.5;
  o.volumes = {a, b};
  CHECK(o.mean_dice() == 0.5);
  CHECK(*o.mean_se_voxels() == 1.5);
}

TEST_CASE("sweep rows and csv") {
  const auto data = tiny_dataset(6);
  SweepOptions opt;
  opt.d_values = {0, 2};
  opt.folds = {0};
  auto setup = quick_setup();
  setup.hyper.max_steps = 2;
  const auto rows = sweep_d(data, fold_split(6, 3), setup, opt, 3);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].mode == Mode::df);
  CHECK(rows[0].gap_d == 0);
  CHECK(rows[1].gap_d == 2);
  CHECK(rows[2].mode == Mode::single_axis);
  for (const auto& r : rows) CHECK(r.volumes == 2);

  const std::string csv = sweep_csv(rows);
  CHECK(csv.rfind("mode,d,mean_dice,std_dice,volumes\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(csv.find("single_axis,2,") != std::string::npos);
}

TEST_CASE("best gap and lookup") {
  const std::vector<SweepRow> rows{{Mode::df, 0, 0.4, 0, 1},         {Mode::df, 1, 0.6, 0, 1},
                                   {Mode::df, 2, 0.6, 0, 1},         {Mode::single_axis, 0, 0.7, 0, 1},
                                   {Mode::single_axis, 3, 0.2, 0, 1}};
  CHECK(best_gap(rows, Mode::df) == 1);
  CHECK(best_gap(rows, Mode::single_axis) == 0);
  CHECK(dice_at(rows, Mode::df, 2) == 0.6);
  CHECK_THROWS_AS(dice_at(rows, Mode::df, 5), TrainingError);
  CHECK_THROWS_AS(best_gap({}, Mode::df), TrainingError);
}
