#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cathseg/experiment.hpp"
#include "cathseg/localizer.hpp"
#include "cathseg/metrics.hpp"
#include "cathseg/network.hpp"
#include "cathseg/phantom.hpp"
#include "cathseg/training.hpp"

namespace cathseg::cli {

class CliError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Settings shared by every subcommand. Defaults < config file < flags.
struct RunConfig {
  Profile profile = Profile::tiny;
  PhantomConfig phantom;
  std::size_t volumes = 25;
  std::size_t folds = 3;
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  std::size_t gap_d = 3;
  Mode mode = Mode::df;
  std::optional<Axis> axis;
  std::size_t core = 32;   // N
  std::size_t outer = 48;  // M
  unsigned threads = 0;    // 0: all hardware threads

  std::optional<double> lr;  // unset: profile default
  std::size_t steps = 1000;
  std::size_t epochs = 1;
  std::size_t batch = 1;
  std::optional<std::size_t> patch;  // unset: profile default
  std::size_t positive_cap = 2000;
  bool augment = true;

  double threshold = 0.5;
  double ransac_threshold = 3.0;
  std::size_t ransac_iterations = 500;

  std::vector<std::size_t> d_values{0, 1, 2, 3, 4, 5};
  std::vector<Mode> modes{Mode::df, Mode::single_axis};
  std::vector<std::size_t> sweep_folds;  // empty: all folds

  NetConfig net_config() const;
  double learning_rate() const;
  std::size_t patch_size() const;
  unsigned thread_count() const;
  TrainHyper train_hyper() const;
  PredictOptions predict_options() const;
  RansacOptions ransac_options() const;
  FoldSetup fold_setup() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Keys absent from `j` keep the value from `base`; unknown keys are errors.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

// Output naming inside a prediction directory.
std::filesystem::path prediction_stem(const std::filesystem::path& dir, const std::string& member);
std::filesystem::path probability_path(const std::filesystem::path& stem);
std::filesystem::path mask_path(const std::filesystem::path& stem);
std::filesystem::path model_path(const std::filesystem::path& dir, const std::string& member);

DatasetManifest cmd_gen(const RunConfig& cfg, const std::filesystem::path& out_dir, bool force);

// Trains on the training split of `cfg.fold`; writes weights at `out` and
// the loss trace as JSON at `trace`.
TrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& manifest, const std::filesystem::path& out,
                      const std::filesystem::path& trace);

// Writes `<out>_prob` and `<out>_mask`. Single-axis mode needs `cfg.axis`
// or `seed_given` to pick the axis.
void cmd_predict(const RunConfig& cfg, const std::filesystem::path& weights, const std::filesystem::path& volume,
                 const std::filesystem::path& out, bool profile_given, bool seed_given);

CatheterModel cmd_localize(const RunConfig& cfg, const std::filesystem::path& mask, const std::filesystem::path& out);

// Scores `<dir>/<member>_mask` and `<dir>/<member>_model.json` against the
// manifest. Writes the JSON report at `out` and the table next to it (.txt).
std::vector<ReportRow> cmd_eval(const std::filesystem::path& manifest, const std::filesystem::path& pred_dir,
                                const std::filesystem::path& out, std::optional<std::size_t> fold);

std::vector<SweepRow> cmd_sweep_d(const RunConfig& cfg, const std::filesystem::path& manifest,
                                  const std::filesystem::path& out_csv);

std::vector<LabeledVolume> load_labeled(const DatasetManifest& m);

}  // namespace cathseg::cli
