// Acceptance checks. Each criterion prints one PASS/FAIL line; the exit code
// is nonzero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cathseg/experiment.hpp"
#include "cathseg/localizer.hpp"
#include "cathseg/metrics.hpp"
#include "cathseg/phantom.hpp"
#include "cathseg/rng.hpp"
#include "cathseg/slicer.hpp"
#include "support/grad_suite.hpp"
#include "support/oracles.hpp"

using namespace cathseg;
using nn::Shape;
using nn::Tensor;

namespace {

// Tolerances and budgets.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradStep = 1e-4;
constexpr std::size_t kGradSamples = 50;
constexpr double kGradBudgetSeconds = 120.0;
constexpr double kTileBudgetSeconds = 10.0;
constexpr double kEndToEndDice = 0.50;
constexpr double kEndToEndSeVoxels = 2.0;
constexpr double kEndToEndBudgetSeconds = 1800.0;
constexpr std::size_t kEndToEndSteps = 1000;
constexpr double kRansacSeVoxels = 0.5;
constexpr double kRansacBudgetSeconds = 5.0;
const std::vector<std::uint64_t> kSeeds{1, 2, 3};

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

template <typename T>
std::vector<double> values(const Tensor<T>& t) {
  return {t.values().begin(), t.values().end()};
}

Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed) {
  return Tensor<double>(shape, oracle::random_values(nn::numel(shape), seed));
}

Mask3 random_mask(Dims3 dims, double density, std::uint64_t seed) {
  Rng rng(seed);
  Mask3 m(dims);
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, rng.coin(density));
  return m;
}

Outcome gradient_suite() {
  Stopwatch clock;
  const auto checks = grad_suite::run(kGradSamples, kGradStep);
  double worst = 0.0;
  std::string worst_op, failures;
  bool ok = true;
  for (const auto& c : checks) {
    if (c.result.max_rel_error > worst) {
      worst = c.result.max_rel_error;
      worst_op = c.name;
    }
    if (!(c.result.max_rel_error < kGradTolerance) || c.result.checked < kGradSamples) {
      ok = false;
      failures += " " + c.name;
    }
  }
  const double t = clock.seconds();
  ok = ok && t < kGradBudgetSeconds;
  return {ok, format("%zu checks, step %.0e, worst rel error %.2e (%s), %.1f s%s%s", checks.size(), kGradStep, worst,
                     worst_op.c_str(), t, failures.empty() ? "" : ", failed:", failures.c_str())};
}

Outcome oracle_equivalence() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) failed.emplace_back(what);
  };

  {
    const auto x = random_tensor({4, 8, 8}, 1), k = random_tensor({3, 4, 3, 3}, 2), b = random_tensor({3}, 3);
    std::size_t oh = 0, ow = 0;
    expect(values(nn::conv2d(x, k, b)) ==
               oracle::conv2d(values(x), 4, 8, 8, values(k), values(b), 3, 3, 3, 1, true, oh, ow),
           "conv2d");
    const auto k2 = random_tensor({2, 4, 2, 2}, 4), b2 = random_tensor({2}, 5);
    expect(values(nn::conv2d(x, k2, b2, 2, false)) ==
               oracle::conv2d(values(x), 4, 8, 8, values(k2), values(b2), 2, 2, 2, 2, false, oh, ow),
           "conv2d stride 2");
  }
  {
    const auto x = random_tensor({2, 16, 16, 16}, 6), k = random_tensor({3, 2, 3, 3, 3}, 7), b = random_tensor({3}, 8);
    std::array<std::size_t, 3> od{};
    expect(values(nn::conv3d(x, k, b)) == oracle::conv3d(values(x), 2, 16, 16, 16, values(k), values(b), 3, 3, true, od),
           "conv3d");
  }
  {
    const auto x = random_tensor({4, 8, 8}, 9);
    std::vector<std::uint32_t> argmax;
    const auto expected = oracle::maxpool2d(values(x), 4, 8, 8, &argmax);
    const auto r = nn::maxpool2d(x);
    expect(values(r.output) == expected && r.argmax == argmax, "maxpool2d");
  }
  for (std::size_t s : {2u, 4u}) {
    const auto x = random_tensor({4, 8, 8}, 10 + s), k = random_tensor({4, 3, s, s}, 20 + s);
    expect(values(nn::deconv2d(x, k, s)) == oracle::deconv2d(values(x), 4, 8, 8, values(k), 3, s, s), "deconv2d");
  }
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const Mask3 a = random_mask({16, 16, 16}, 0.04, 30 + seed), b = random_mask({16, 16, 16}, 0.06, 40 + seed);
    expect(ahd(a, b) == oracle::ahd(a, b), "ahd");
    std::size_t count = 0;
    const auto labels = oracle::flood_fill_labels(a, count);
    const auto got = connected_components(a);
    expect(got.count == count && got.labels == labels, "connected_components");
  }
  {
    Rng rng(50);
    Polyline line;
    for (int i = 0; i < 25; ++i) line.push_back({rng.uniform(0, 16), rng.uniform(0, 16), rng.uniform(0, 16)});
    bool same = true;
    for (int i = 0; i < 500; ++i) {
      const Point3 p{rng.uniform(-4, 20), rng.uniform(-4, 20), rng.uniform(-4, 20)};
      same = same && point_polyline_distance(p, line) == oracle::polyline_distance(p, line);
    }
    expect(same, "point_polyline_distance");
  }

  std::string detail = "conv2d, conv3d, maxpool2d, deconv2d, ahd, components, polyline distance";
  if (!failed.empty()) {
    detail = "mismatch:";
    for (const auto& f : failed) detail += " " + f;
  }
  return {failed.empty(), detail};
}

double fused_at(const Tensor<double>& t, std::size_t f, std::size_t m, std::size_t x, std::size_t y, std::size_t z) {
  return t[((f * m + z) * m + y) * m + x];
}

Outcome stacking_and_equivariance() {
  const std::size_t m = 32;
  const Volume3 patch({m, m, m}, {1, 1, 1}, oracle::random_values(m * m * m, 60, 0.0, 1.0));
  bool inverts = true;
  for (Axis axis : {Axis::X, Axis::Y, Axis::Z})
    for (std::size_t d = 0; d <= 5; ++d) {
      const auto s = slice_axis(patch, axis, d);
      std::vector<Tensor<double>> centre;
      for (const auto& img : s.images)
        centre.emplace_back(Shape{1, m, m}, std::vector<double>(img.begin() + m * m, img.begin() + 2 * m * m));
      const auto t = stack_features(centre, axis);
      for (std::size_t i = 0; i < patch.size(); ++i) inverts = inverts && t[i] == patch[i];
    }

  // Relabel axes cyclically: p(x, y, z) = v(z, x, y) and its inverse.
  const auto net = build_network<double>(NetConfig::tiny(), 61);
  const std::size_t f_count = net.config().feature_channels;
  nn::NoGradGuard guard;
  const auto fv = df_fused_features(net, patch, 3, false);
  bool commutes = true;
  for (int shift : {1, 2}) {
    Volume3 p({m, m, m}, {1, 1, 1});
    for (std::size_t z = 0; z < m; ++z)
      for (std::size_t y = 0; y < m; ++y)
        for (std::size_t x = 0; x < m; ++x) p.at(x, y, z) = shift == 1 ? patch.at(z, x, y) : patch.at(y, z, x);
    const auto fp = df_fused_features(net, p, 3, false);
    for (std::size_t f = 0; f < f_count; ++f)
      for (std::size_t z = 0; z < m; ++z)
        for (std::size_t y = 0; y < m; ++y)
          for (std::size_t x = 0; x < m; ++x) {
            const double want = shift == 1 ? fused_at(fv, f, m, z, x, y) : fused_at(fv, f, m, y, z, x);
            commutes = commutes && fused_at(fp, f, m, x, y, z) == want;
          }
  }
  return {inverts && commutes, format("stack inverts slicing for 3 axes x d 0..5: %s; fused features commute with "
                                      "both cyclic axis permutations on 32^3: %s",
                                      inverts ? "yes" : "no", commutes ? "yes" : "no")};
}

Outcome tile_round_trip() {
  Stopwatch clock;
  const Volume3 v({128, 128, 128}, {0.54, 0.54, 0.54}, oracle::random_values(128 * 128 * 128, 70));
  const auto regions = tile(v.dims(), 32, 48);
  std::vector<std::pair<PatchRegion, Volume3>> preds;
  for (const auto& r : regions) preds.emplace_back(r, extract_patch(v, r));
  const Volume3 out = stitch(preds, v.dims());
  const bool same = out == v;
  const double t = clock.seconds();
  return {regions.size() == 64 && same && t < kTileBudgetSeconds,
          format("%zu patches, bit-exact %s, %.2f s", regions.size(), same ? "yes" : "no", t)};
}

std::vector<LabeledVolume> phantom_dataset(std::uint64_t seed) {
  std::vector<LabeledVolume> data;
  for (auto& p : generate_dataset(25, seed, PhantomConfig{})) data.push_back({p.volume, p.mask});
  return data;
}

Outcome end_to_end(unsigned threads) {
  Stopwatch clock;
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const auto data = phantom_dataset(seed);
    const auto folds = fold_split(data.size(), 3);
    FoldSetup setup;
    setup.hyper.lr = 1e-3;
    setup.hyper.max_steps = kEndToEndSteps;
    setup.hyper.epochs = 1000;
    setup.hyper.patch_size = 24;
    setup.hyper.gap_d = 3;
    setup.hyper.mode = Mode::df;
    setup.predict.core = 32;
    setup.predict.outer = 48;
    setup.predict.threads = threads;
    setup.ransac.seed = seed;
    double dice = 0.0, se = 0.0;
    std::size_t n = 0, n_se = 0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      for (const auto& v : run_fold(data, folds, f, setup, seed).volumes) {
        dice += v.metrics.dice;
        ++n;
        if (v.se_voxels) {
          se += *v.se_voxels;
          ++n_se;
        }
      }
    }
    dice /= double(n);
    const double mean_se = n_se ? se / double(n_se) : INFINITY;
    ok = ok && dice >= kEndToEndDice && mean_se <= kEndToEndSeVoxels && n_se == n;
    detail += format("seed %llu dice %.3f se %.2f vox (%zu/%zu localized); ", (unsigned long long)seed, dice, mean_se,
                     n_se, n);
    std::fflush(stdout);
  }
  const double t = clock.seconds();
  ok = ok && t <= kEndToEndBudgetSeconds;
  return {ok, detail + format("%.0f s", t)};
}

// One sweep per seed shared by the fusion and gap-shape criteria.
struct SweepResults {
  std::map<std::uint64_t, std::vector<SweepRow>> rows;
};

const SweepResults& sweeps(unsigned threads) {
  static std::optional<SweepResults> cache;
  if (cache) return *cache;
  cache.emplace();
  for (std::uint64_t seed : kSeeds) {
    const auto data = phantom_dataset(seed);
    FoldSetup setup;
    setup.hyper.lr = 1e-3;
    setup.hyper.max_steps = 400;
    setup.hyper.epochs = 1000;
    setup.hyper.patch_size = 16;
    setup.predict.core = 64;
    setup.predict.outer = 64;
    setup.predict.threads = threads;
    SweepOptions opt;
    opt.folds = {0};
    cache->rows[seed] = sweep_d(data, fold_split(data.size(), 3), setup, opt, seed);
  }
  return *cache;
}

Outcome fusion_benefit(unsigned threads) {
  std::size_t wins = 0;
  std::string detail;
  for (const auto& [seed, rows] : sweeps(threads).rows) {
    const std::size_t d_df = best_gap(rows, Mode::df), d_sa = best_gap(rows, Mode::single_axis);
    const double df = dice_at(rows, Mode::df, d_df), sa = dice_at(rows, Mode::single_axis, d_sa);
    wins += df >= sa;
    detail += format("seed %llu df %.3f (d=%zu) vs single-axis %.3f (d=%zu); ", (unsigned long long)seed, df, d_df, sa,
                     d_sa);
  }
  return {wins >= 2, detail + format("%zu/3 seeds", wins)};
}

Outcome gap_shape(unsigned threads) {
  std::size_t interior = 0;
  std::string detail;
  for (const auto& [seed, rows] : sweeps(threads).rows) {
    const std::size_t best = best_gap(rows, Mode::df);
    interior += best != 5;
    detail += format("seed %llu df best d=%zu; ", (unsigned long long)seed, best);
  }
  return {interior >= 2, detail + format("%zu/3 seeds peak below d=5", interior)};
}

// A straight 120-voxel wire plus a compact blob beside its middle third and
// scattered speckle voxels. Inlier counting can prefer a spline that bends
// into a blob lying just past either end of the wire.
Outcome ransac_clutter() {
  Stopwatch clock;
  std::size_t recovered = 0;
  double worst = 0.0;
  for (std::uint64_t trial = 1; trial <= 10; ++trial) {
    Rng rng(derive_seed(80, {trial}));
    const Dims3 dims{128, 64, 64};
    const auto y0 = static_cast<std::size_t>(rng.uniform(10.0, 54.0));
    const auto z0 = static_cast<std::size_t>(rng.uniform(10.0, 54.0));
    const Polyline truth{{4, double(y0), double(z0)}, {123, double(y0), double(z0)}};
    Mask3 dense(dims);
    for (std::size_t x = 4; x < 124; ++x) dense.set(x, y0, z0, true);

    auto far_from_line = [&](double x, double y, double z, double gap) {
      return oracle::polyline_distance({x, y, z}, truth) >= gap;
    };
    for (;;) {
      const auto bx = static_cast<std::size_t>(rng.uniform(40.0, 80.0));
      const auto by = static_cast<std::size_t>(rng.uniform(0.0, 59.0));
      const auto bz = static_cast<std::size_t>(rng.uniform(0.0, 62.0));
      bool clear = true;
      for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t y = 0; y < 5; ++y)
          for (std::size_t x = 0; x < 5; ++x)
            clear = clear && far_from_line(double(bx + x), double(by + y), double(bz + z), 12.0);
      if (!clear) continue;
      for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t y = 0; y < 5; ++y)
          for (std::size_t x = 0; x < 5; ++x) dense.set(bx + x, by + y, bz + z, true);
      break;
    }
    for (int placed = 0; placed < 20;) {
      const auto x = static_cast<std::size_t>(rng.uniform(0.0, 128.0));
      const auto y = static_cast<std::size_t>(rng.uniform(0.0, 64.0));
      const auto z = static_cast<std::size_t>(rng.uniform(0.0, 64.0));
      if (!far_from_line(double(x), double(y), double(z), 6.0)) continue;
      dense.set(x, y, z, true);
      ++placed;
    }

    RansacOptions opt;
    opt.iterations = 500;
    opt.inlier_threshold_vox = 3.0;
    opt.seed = trial;
    const auto model = spd_ransac(extract_sparse(connected_components(dense)), dense, opt);
    const double se = skeleton_error(model.polyline, truth, {1, 1, 1});
    worst = std::max(worst, se);
    recovered += se < kRansacSeVoxels;
  }
  const double t = clock.seconds();
  return {recovered == 10 && t < kRansacBudgetSeconds,
          format("%zu/10 trials with SE < %.1f vox (worst %.3f), %.2f s", recovered, kRansacSeVoxels, worst, t)};
}

Mask3 with(Dims3 dims, std::initializer_list<std::array<std::size_t, 3>> voxels) {
  Mask3 m(dims);
  for (const auto& v : voxels) m.set(v[0], v[1], v[2], true);
  return m;
}

Outcome metric_examples() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) failed.emplace_back(what);
  };
  const Mask3 a = with({4, 4, 4}, {{0, 0, 0}, {1, 2, 3}});
  const auto same = overlap_metrics(a, a);
  expect(same.recall == 1.0 && same.precision == 1.0 && same.dice == 1.0, "overlap identical");
  const auto half = overlap_metrics(with({3, 1, 1}, {{0, 0, 0}, {1, 0, 0}}), with({3, 1, 1}, {{1, 0, 0}, {2, 0, 0}}));
  expect(half.recall == 0.5 && half.precision == 0.5 && half.dice == 0.5, "overlap TP=1");
  const auto empty = overlap_metrics(Mask3({2, 2, 2}), Mask3({2, 2, 2}));
  expect(empty.recall == 1.0 && empty.precision == 1.0 && empty.dice == 1.0, "overlap empty/empty");
  const auto miss = overlap_metrics(Mask3({4, 4, 4}), a);
  expect(miss.dice == 0.0 && miss.recall == 0.0 && miss.precision == 0.0, "overlap empty/nonempty");

  expect(ahd(a, a) == 0.0, "ahd identical");
  expect(ahd(with({1, 1, 3}, {{0, 0, 0}}), with({1, 1, 3}, {{0, 0, 2}})) == 2.0, "ahd singleton");
  bool threw = false;
  try {
    ahd(Mask3({4, 4, 4}), a);
  } catch (const MetricsError&) {
    threw = true;
  }
  expect(threw, "ahd empty");

  const Spacing3 sp{0.54, 0.54, 0.54};
  const Polyline line{{0, 0, 0}, {5, 0, 0}, {10, 0, 0}};
  const Polyline shifted{{0, 2, 0}, {5, 2, 0}, {10, 2, 0}};
  expect(skeleton_error(line, line, sp) == 0.0, "se identical");
  expect(std::abs(skeleton_error(shifted, line, sp) - 1.08) < 1e-12, "se offset 2");
  expect(endpoint_error(line, line, sp) == 0.0, "ee identical");
  const Polyline truth{{0, 0, 0}, {10, 0, 0}};
  const Polyline fitted{{13, 0, 0}, {5, 0, 0}, {0, 1, 0}};
  expect(std::abs(endpoint_error(fitted, truth, sp) - 1.08) < 1e-12, "ee 1 and 3");

  std::string detail = "overlap, ahd, skeleton and endpoint examples";
  if (!failed.empty()) {
    detail = "failed:";
    for (const auto& f : failed) detail += " [" + f + "]";
  }
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> selected;
  unsigned threads = 1;
  app.add_option("--criterion", selected, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
  app.add_option("--threads", threads, "Inference threads")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::sort(selected.begin(), selected.end());
  selected.erase(std::unique(selected.begin(), selected.end()), selected.end());

  const std::map<int, std::function<Outcome()>> criteria{
      {1, gradient_suite},
      {2, oracle_equivalence},
      {3, stacking_and_equivariance},
      {4, tile_round_trip},
      {5, [&] { return end_to_end(threads); }},
      {6, [&] { return fusion_benefit(threads); }},
      {7, [&] { return gap_shape(threads); }},
      {8, ransac_clutter},
      {9, metric_examples},
  };

  bool all = true;
  for (int c : selected) {
    Outcome o;
    try {
      o = criteria.at(c)();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("criterion %d: %s  %s\n", c, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
