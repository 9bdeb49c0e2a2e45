#include <cstdio>
#include <functional>
#include <iostream>

#include <CLI11.hpp>

#include "cathseg/json_io.hpp"
#include "cli.hpp"

namespace fs = std::filesystem;
using namespace cathseg;
using namespace cathseg::cli;

namespace {

// Flags only override the config when given on the command line.
class Overrides {
 public:
  template <typename V, typename Apply>
  CLI::Option* add(CLI::App* app, const std::string& name, V& storage, const std::string& desc, Apply apply) {
    CLI::Option* opt = app->add_option(name, storage, desc);
    setters_.push_back([opt, &storage, apply](RunConfig& c) {
      if (opt->count()) apply(c, storage);
    });
    return opt;
  }
  void apply(RunConfig& c) const {
    for (const auto& s : setters_) s(c);
  }

 private:
  std::vector<std::function<void(RunConfig&)>> setters_;
};

struct Flags {
  RunConfig d;
  std::string config;
  std::string profile = to_string(d.profile);
  std::string mode = to_string(d.mode);
  std::string axis;
  double lr = 0.0;
  std::size_t patch = 0;
  std::size_t size = d.phantom.dims[0];
  std::vector<std::string> modes{"df", "single_axis"};
  bool force = false;
  std::optional<std::size_t> eval_fold;
  std::string manifest, out, weights, volume, mask, pred_dir, trace;
};

struct Command {
  explicit Command(CLI::App* a) : app(a) {}
  CLI::App* app;
  Overrides ov;
  CLI::Option* seed = nullptr;
  CLI::Option* profile = nullptr;
};

void add_common(Command& c, Flags& f) {
  c.app->add_option("--config", f.config, "JSON config file; flags override its values")->check(CLI::ExistingFile);
  c.seed = c.ov.add(c.app, "--seed", f.d.seed, "Root seed", [](RunConfig& r, auto v) { r.seed = v; });
  c.ov.add(c.app, "--threads", f.d.threads, "Worker threads (0: all cores, 1: deterministic)",
           [](RunConfig& r, auto v) { r.threads = v; });
}

void add_model_flags(Command& c, Flags& f) {
  c.profile = c.ov.add(c.app, "--profile", f.profile, "Network profile (tiny, paper_faithful)",
                       [](RunConfig& r, const std::string& v) { r.profile = profile_from_string(v); });
  c.ov.add(c.app, "--mode", f.mode, "Inference mode (df, single_axis)",
           [](RunConfig& r, const std::string& v) { r.mode = mode_from_string(v); });
  c.ov.add(c.app, "--d", f.d.gap_d, "Voxel gap between slice channels", [](RunConfig& r, auto v) { r.gap_d = v; });
  c.ov.add(c.app, "--axis", f.axis, "Slicing axis for single_axis mode (x, y, z)",
              [](RunConfig& r, const std::string& v) { r.axis = axis_from_string(v); })
      ->default_str("drawn from --seed");
  c.ov.add(c.app, "--fold", f.d.fold, "Cross-validation fold", [](RunConfig& r, auto v) { r.fold = v; });
}

void add_training_flags(Command& c, Flags& f) {
  c.ov.add(c.app, "--lr", f.lr, "Adam learning rate", [](RunConfig& r, auto v) { r.lr = v; })
      ->default_str("1e-3 tiny, 1e-5 paper_faithful");
  c.ov.add(c.app, "--steps", f.d.steps, "Optimiser step cap (0: no cap)", [](RunConfig& r, auto v) { r.steps = v; });
  c.ov.add(c.app, "--epochs", f.d.epochs, "Passes over the sampled patches", [](RunConfig& r, auto v) { r.epochs = v; });
  c.ov.add(c.app, "--batch", f.d.batch, "Patches per step", [](RunConfig& r, auto v) { r.batch = v; });
  c.ov.add(c.app, "--patch", f.patch, "Training patch size M", [](RunConfig& r, auto v) { r.patch = v; })
      ->default_str("24 tiny, 64 paper_faithful");
}

void add_tiling_flags(Command& c, Flags& f) {
  c.ov.add(c.app, "--N", f.d.core, "Core size of each inference tile", [](RunConfig& r, auto v) { r.core = v; });
  c.ov.add(c.app, "--M", f.d.outer, "Outer size of each inference tile", [](RunConfig& r, auto v) { r.outer = v; });
}

RunConfig resolve(const Command& c, const Flags& f, bool* seed_given = nullptr, bool* profile_given = nullptr) {
  RunConfig cfg;
  nlohmann::json file;
  if (!f.config.empty()) {
    file = load_json(f.config);
    cfg = run_config_from_json(file);
  }
  c.ov.apply(cfg);
  if (seed_given) *seed_given = c.seed->count() > 0 || file.contains("seed");
  if (profile_given) *profile_given = (c.profile && c.profile->count() > 0) || file.contains("profile");
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Catheter segmentation and localization in 3D ultrasound volumes"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  Flags f;

  Command gen{app.add_subcommand("gen", "Generate a synthetic phantom dataset")};
  add_common(gen, f);
  gen.app->add_option("--out", f.out, "Output directory")->required();
  gen.ov.add(gen.app, "--n", f.d.volumes, "Number of phantoms", [](RunConfig& r, auto v) { r.volumes = v; });
  gen.ov.add(gen.app, "--folds", f.d.folds, "Cross-validation folds", [](RunConfig& r, auto v) { r.folds = v; });
  gen.ov.add(gen.app, "--size", f.size, "Cubic volume side in voxels",
             [](RunConfig& r, auto v) { r.phantom.dims = {v, v, v}; });
  gen.ov.add(gen.app, "--spacing", f.d.phantom.spacing_mm, "Voxel spacing in mm",
             [](RunConfig& r, auto v) { r.phantom.spacing_mm = v; });
  gen.ov.add(gen.app, "--curvature", f.d.phantom.curvature, "Tube bend (0 straight, 1 strong)",
             [](RunConfig& r, auto v) { r.phantom.curvature = v; });
  gen.ov.add(gen.app, "--distractors", f.d.phantom.n_distractors, "Bright clutter blobs per volume",
             [](RunConfig& r, auto v) { r.phantom.n_distractors = v; });
  gen.ov.add(gen.app, "--speckle", f.d.phantom.speckle_strength, "Multiplicative speckle strength",
             [](RunConfig& r, auto v) { r.phantom.speckle_strength = v; });
  gen.app->add_flag("--force", f.force, "Write into a non-empty directory");

  Command trn{app.add_subcommand("train", "Train a network on one fold's training split")};
  add_common(trn, f);
  add_model_flags(trn, f);
  add_training_flags(trn, f);
  trn.app->add_option("--manifest", f.manifest, "Dataset manifest or directory")->required();
  trn.app->add_option("--out", f.out, "Weight file stem")->required();
  trn.app->add_option("--trace", f.trace, "Loss trace JSON")->default_str("<out>.loss.json");

  Command pred{app.add_subcommand("predict", "Segment a volume")};
  add_common(pred, f);
  add_model_flags(pred, f);
  add_tiling_flags(pred, f);
  pred.app->add_option("--weights", f.weights, "Weight file stem")->required();
  pred.app->add_option("--volume", f.volume, "Input volume")->required();
  pred.app->add_option("--out", f.out, "Output stem; writes <out>_prob and <out>_mask")->required();
  pred.ov.add(pred.app, "--threshold", f.d.threshold, "Probability threshold for the mask",
              [](RunConfig& r, auto v) { r.threshold = v; });

  Command loc{app.add_subcommand("localize", "Fit a catheter model to a segmentation")};
  add_common(loc, f);
  loc.app->add_option("--mask", f.mask, "Binary segmentation")->required();
  loc.app->add_option("--out", f.out, "Model JSON")->required();
  loc.ov.add(loc.app, "--threshold", f.d.ransac_threshold, "Inlier distance in voxels",
             [](RunConfig& r, auto v) { r.ransac_threshold = v; });
  loc.ov.add(loc.app, "--iterations", f.d.ransac_iterations, "RANSAC iterations",
             [](RunConfig& r, auto v) { r.ransac_iterations = v; });

  Command ev{app.add_subcommand("eval", "Score predictions against a dataset")};
  ev.app->add_option("--manifest", f.manifest, "Dataset manifest or directory")->required();
  ev.app->add_option("--pred-dir", f.pred_dir, "Directory with <name>_mask and <name>_model.json")->required();
  ev.app->add_option("--out", f.out, "Report JSON; the table goes next to it as .txt")->required();
  ev.app->add_option("--fold", f.eval_fold, "Only score this fold's held-out members")->default_str("all members");

  Command sw{app.add_subcommand("sweep-d", "Dice against voxel gap for each mode")};
  add_common(sw, f);
  add_training_flags(sw, f);
  add_tiling_flags(sw, f);
  sw.profile = sw.ov.add(sw.app, "--profile", f.profile, "Network profile (tiny, paper_faithful)",
                         [](RunConfig& r, const std::string& v) { r.profile = profile_from_string(v); });
  sw.app->add_option("--manifest", f.manifest, "Dataset manifest or directory")->required();
  sw.app->add_option("--out", f.out, "CSV output")->required();
  sw.ov.add(sw.app, "--d-values", f.d.d_values, "Gaps to try", [](RunConfig& r, auto v) { r.d_values = v; });
  sw.ov.add(sw.app, "--modes", f.modes, "Modes to compare", [](RunConfig& r, const std::vector<std::string>& v) {
    r.modes.clear();
    for (const auto& m : v) r.modes.push_back(mode_from_string(m));
  });
  sw.ov.add(sw.app, "--folds-to-run", f.d.sweep_folds, "Folds to train and score",
            [](RunConfig& r, auto v) { r.sweep_folds = v; })
      ->default_str("all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen.app) {
      const auto m = cmd_gen(resolve(gen, f), f.out, f.force);
      std::printf("wrote %zu phantoms in %zu folds to %s\n", m.members.size(), m.folds.size(), f.out.c_str());
    } else if (*trn.app) {
      const std::string trace = f.trace.empty() ? f.out + ".loss.json" : f.trace;
      const auto r = cmd_train(resolve(trn, f), f.manifest, f.out, trace);
      std::printf("trained %zu steps, final loss %.4f\n", r.steps, r.loss_trace.empty() ? 0.0 : r.loss_trace.back());
    } else if (*pred.app) {
      bool seed_given = false, profile_given = false;
      const RunConfig cfg = resolve(pred, f, &seed_given, &profile_given);
      cmd_predict(cfg, f.weights, f.volume, f.out, profile_given, seed_given);
      std::printf("wrote %s and %s\n", probability_path(f.out).c_str(), mask_path(f.out).c_str());
    } else if (*loc.app) {
      const auto model = cmd_localize(resolve(loc, f), f.mask, f.out);
      std::printf("catheter model with %zu inliers written to %s\n", model.score, f.out.c_str());
    } else if (*ev.app) {
      const auto rows = cmd_eval(f.manifest, f.pred_dir, f.out, f.eval_fold);
      std::cout << report_table(rows);
    } else if (*sw.app) {
      const auto rows = cmd_sweep_d(resolve(sw, f), f.manifest, f.out);
      std::cout << sweep_csv(rows);
    }
  } catch (const std::exception& e) {
    std::cerr << "cathseg: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
