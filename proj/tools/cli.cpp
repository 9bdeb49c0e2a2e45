#include "cli.hpp"

#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include "cathseg/json_io.hpp"
#include "cathseg/rng.hpp"
#include "cathseg/weights.hpp"

namespace cathseg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

NetConfig RunConfig::net_config() const {
  NetConfig c = profile == Profile::tiny ? NetConfig::tiny() : NetConfig::paper_faithful();
  c.gap_d = gap_d;
  return c;
}

double RunConfig::learning_rate() const {
  if (lr) return *lr;
  return profile == Profile::tiny ? 1e-3 : 1e-5;
}

std::size_t RunConfig::patch_size() const {
  if (patch) return *patch;
  return profile == Profile::tiny ? 24 : 64;
}

unsigned RunConfig::thread_count() const {
  if (threads) return threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

TrainHyper RunConfig::train_hyper() const {
  TrainHyper h;
  h.lr = learning_rate();
  h.epochs = epochs;
  h.max_steps = steps;
  h.batch = batch;
  h.seed = fold_train_seed(seed, fold);
  h.gap_d = gap_d;
  h.mode = mode;
  h.axis = axis.value_or(fold_axis(seed, fold));
  h.patch_size = patch_size();
  h.positive_cap = positive_cap;
  h.augment = augment;
  return h;
}

PredictOptions RunConfig::predict_options() const {
  PredictOptions p;
  p.mode = mode;
  p.gap_d = gap_d;
  p.axis = axis.value_or(fold_axis(seed, fold));
  p.core = core;
  p.outer = outer;
  p.threads = thread_count();
  return p;
}

RansacOptions RunConfig::ransac_options() const {
  RansacOptions r;
  r.iterations = ransac_iterations;
  r.inlier_threshold_vox = ransac_threshold;
  r.seed = seed;
  return r;
}

FoldSetup RunConfig::fold_setup() const {
  FoldSetup s;
  s.net = net_config();
  s.hyper = train_hyper();
  s.predict = predict_options();
  s.ransac = ransac_options();
  return s;
}

json to_json(const RunConfig& c) {
  json j;
  j["profile"] = to_string(c.profile);
  j["phantom"] = to_json(c.phantom);
  j["volumes"] = c.volumes;
  j["folds"] = c.folds;
  j["fold"] = c.fold;
  j["seed"] = c.seed;
  j["d"] = c.gap_d;
  j["mode"] = to_string(c.mode);
  j["axis"] = c.axis ? json(to_string(*c.axis)) : json(nullptr);
  j["N"] = c.core;
  j["M"] = c.outer;
  j["threads"] = c.threads;
  j["lr"] = c.lr ? json(*c.lr) : json(nullptr);
  j["steps"] = c.steps;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["patch"] = c.patch ? json(*c.patch) : json(nullptr);
  j["positive_cap"] = c.positive_cap;
  j["augment"] = c.augment;
  j["threshold"] = c.threshold;
  j["ransac_threshold"] = c.ransac_threshold;
  j["ransac_iterations"] = c.ransac_iterations;
  j["d_values"] = c.d_values;
  json modes = json::array();
  for (Mode m : c.modes) modes.push_back(to_string(m));
  j["modes"] = modes;
  j["sweep_folds"] = c.sweep_folds;
  return j;
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  if (!j.is_object()) throw CliError("config must be a JSON object");
  static const std::set<std::string> known{
      "profile", "phantom",      "volumes", "folds",     "fold",      "seed",           "d",
      "mode",    "axis",         "N",       "M",         "threads",   "lr",             "steps",
      "epochs",  "batch",        "patch",   "positive_cap", "augment", "threshold",     "ransac_threshold",
      "ransac_iterations", "d_values", "modes", "sweep_folds"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw CliError("unknown config key '" + key + "'");
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    if (j.contains("profile")) c.profile = profile_from_string(j.at("profile").get<std::string>());
    if (j.contains("phantom")) c.phantom = phantom_config_from_json(j.at("phantom"), c.phantom);
    get("volumes", c.volumes);
    get("folds", c.folds);
    get("fold", c.fold);
    get("seed", c.seed);
    get("d", c.gap_d);
    if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("axis"))
      c.axis = j.at("axis").is_null() ? std::nullopt : std::optional(axis_from_string(j.at("axis").get<std::string>()));
    get("N", c.core);
    get("M", c.outer);
    get("threads", c.threads);
    if (j.contains("lr")) c.lr = j.at("lr").is_null() ? std::nullopt : std::optional(j.at("lr").get<double>());
    get("steps", c.steps);
    get("epochs", c.epochs);
    get("batch", c.batch);
    if (j.contains("patch"))
      c.patch = j.at("patch").is_null() ? std::nullopt : std::optional(j.at("patch").get<std::size_t>());
    get("positive_cap", c.positive_cap);
    get("augment", c.augment);
    get("threshold", c.threshold);
    get("ransac_threshold", c.ransac_threshold);
    get("ransac_iterations", c.ransac_iterations);
    get("d_values", c.d_values);
    if (j.contains("modes")) {
      c.modes.clear();
      for (const auto& m : j.at("modes")) c.modes.push_back(mode_from_string(m.get<std::string>()));
    }
    get("sweep_folds", c.sweep_folds);
  } catch (const json::exception& e) {
    throw CliError(std::string("bad config value: ") + e.what());
  }
  return c;
}

namespace {

void make_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

}  // namespace

fs::path prediction_stem(const fs::path& dir, const std::string& member) { return dir / member; }
fs::path probability_path(const fs::path& stem) { return fs::path(stem.string() + "_prob.json"); }
fs::path mask_path(const fs::path& stem) { return fs::path(stem.string() + "_mask.json"); }
fs::path model_path(const fs::path& dir, const std::string& member) { return dir / (member + "_model.json"); }

std::vector<LabeledVolume> load_labeled(const DatasetManifest& m) {
  std::vector<LabeledVolume> out;
  out.reserve(m.members.size());
  for (const auto& mem : m.members) out.push_back({load_volume(mem.volume), load_mask(mem.mask)});
  return out;
}

DatasetManifest cmd_gen(const RunConfig& cfg, const fs::path& out_dir, bool force) {
  if (fs::exists(out_dir) && !fs::is_directory(out_dir))
    throw CliError(out_dir.string() + " exists and is not a directory");
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
    throw CliError(out_dir.string() + " is not empty (use --force to overwrite)");
  return write_dataset(out_dir, cfg.volumes, cfg.seed, cfg.phantom, cfg.folds);
}

TrainResult cmd_train(const RunConfig& cfg, const fs::path& manifest_path, const fs::path& out, const fs::path& trace) {
  const DatasetManifest m = load_manifest(manifest_path);
  if (cfg.fold >= m.folds.size())
    throw CliError("fold " + std::to_string(cfg.fold) + " out of range (manifest has " +
                   std::to_string(m.folds.size()) + " folds)");
  const auto all = load_labeled(m);
  std::vector<LabeledVolume> train_set;
  for (auto i : m.train_indices(cfg.fold)) train_set.push_back(all[i]);

  make_parent(out);
  make_parent(trace);
  const TrainHyper hyper = cfg.train_hyper();
  auto net = build_network<float>(cfg.net_config(), fold_net_seed(cfg.seed, cfg.fold));
  const TrainResult result = train(net, train_set, hyper);

  auto weights = to_manifest(net);
  weights.metadata["training"] = {{"mode", to_string(hyper.mode)},
                                  {"d", hyper.gap_d},
                                  {"axis", to_string(hyper.axis)},
                                  {"fold", cfg.fold},
                                  {"seed", cfg.seed}};
  nn::save_weights(weights, out);
  json t;
  t["steps"] = result.steps;
  t["loss"] = result.loss_trace;
  t["config"] = to_json(cfg);
  save_json(t, trace);
  return result;
}

void cmd_predict(const RunConfig& cfg, const fs::path& weights, const fs::path& volume, const fs::path& out,
                 bool profile_given, bool seed_given) {
  if (cfg.mode == Mode::single_axis && !cfg.axis && !seed_given)
    throw CliError("single_axis mode needs --axis or --seed");
  const auto net = load_network(weights);
  if (profile_given && net.config().profile != cfg.profile)
    throw CliError(std::string("weights are for profile ") + to_string(net.config().profile) + ", not " +
                   to_string(cfg.profile));
  const Volume3 vol = load_volume(volume);
  const Volume3 prob = predict_volume(net, vol, cfg.predict_options());
  make_parent(out);
  save_volume(prob, probability_path(out));
  save_mask(threshold(prob, cfg.threshold), mask_path(out));
}

CatheterModel cmd_localize(const RunConfig& cfg, const fs::path& mask, const fs::path& out) {
  const CatheterModel model = localize(load_mask(mask), cfg.ransac_options());
  make_parent(out);
  save_json(to_json(model), out);
  return model;
}

std::vector<ReportRow> cmd_eval(const fs::path& manifest_path, const fs::path& pred_dir, const fs::path& out,
                                std::optional<std::size_t> fold) {
  const DatasetManifest m = load_manifest(manifest_path);
  std::vector<std::size_t> members;
  if (fold) {
    if (*fold >= m.folds.size()) throw CliError("fold " + std::to_string(*fold) + " out of range");
    members = m.test_indices(*fold);
  } else {
    for (std::size_t i = 0; i < m.members.size(); ++i) members.push_back(i);
  }
  std::vector<ReportRow> rows;
  for (auto i : members) {
    const auto& mem = m.members[i];
    ReportRow row{mem.name, std::nullopt};
    const fs::path pred = mask_path(prediction_stem(pred_dir, mem.name));
    const fs::path model_file = model_path(pred_dir, mem.name);
    if (fs::exists(pred) && fs::exists(model_file)) {
      const Mask3 truth = load_mask(mem.mask);
      const Mask3 p = load_mask(pred);
      if (p.dims() != truth.dims()) throw CliError("prediction for " + mem.name + " does not match the manifest volume");
      const CatheterModel model = catheter_model_from_json(load_json(model_file));
      row.metrics = evaluate(p, truth, &model);
    }
    rows.push_back(std::move(row));
  }
  make_parent(out);
  save_json(report_to_json(rows), out);
  fs::path table = out;
  table.replace_extension(".txt");
  std::ofstream(table) << report_table(rows);
  return rows;
}

std::vector<SweepRow> cmd_sweep_d(const RunConfig& cfg, const fs::path& manifest_path, const fs::path& out_csv) {
  const DatasetManifest m = load_manifest(manifest_path);
  SweepOptions opt;
  opt.d_values = cfg.d_values;
  opt.modes = cfg.modes;
  opt.folds = cfg.sweep_folds;
  for (auto f : opt.folds)
    if (f >= m.folds.size()) throw CliError("sweep fold " + std::to_string(f) + " out of range");
  FoldSetup setup = cfg.fold_setup();
  const auto rows = sweep_d(load_labeled(m), m.folds, setup, opt, cfg.seed);
  make_parent(out_csv);
  std::ofstream os(out_csv);
  if (!os) throw CliError("cannot write " + out_csv.string());
  os << sweep_csv(rows);
  return rows;
}

}  // namespace cathseg::cli
