#include "cathseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "cathseg/json_io.hpp"
#include "cathseg/rng.hpp"

namespace cathseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kCurveSamples = 401;
constexpr int kPlacementAttempts = 500;

Point3 add(const Point3& a, const Point3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Point3 sub(const Point3& a, const Point3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Point3 scale(const Point3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double dot(const Point3& a, const Point3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Point3 cross(const Point3& a, const Point3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Point3 unit(const Point3& a) { return scale(a, 1.0 / std::sqrt(dot(a, a))); }

Point3 random_direction(Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

Point3 random_perpendicular(Rng& rng, const Point3& dir) {
  for (;;) {
    const Point3 c = random_direction(rng);
    const Point3 p = sub(c, scale(dir, dot(c, dir)));
    if (dot(p, p) > 1e-6) return unit(p);
  }
}

// Quadratic Bezier through a and b bowed toward c.
Polyline quadratic_curve(const Point3& a, const Point3& c, const Point3& b) {
  Polyline line(kCurveSamples);
  for (std::size_t i = 0; i < kCurveSamples; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(kCurveSamples - 1);
    const double u = 1.0 - t;
    for (int k = 0; k < 3; ++k) line[i][k] = u * u * a[k] + 2.0 * t * u * c[k] + t * t * b[k];
  }
  return line;
}

bool inside_with_margin(const Polyline& line, const Dims3& dims, double margin) {
  for (const auto& p : line)
    for (int k = 0; k < 3; ++k)
      if (p[k] < margin || p[k] > static_cast<double>(dims[k]) - 1.0 - margin) return false;
  return true;
}

// Distance to the centreline for voxels near it; infinity elsewhere.
std::vector<double> centreline_distance(const Polyline& line, const Dims3& dims, double reach) {
  std::vector<double> dist(voxel_count(dims), std::numeric_limits<double>::infinity());
  Point3 lo = line[0], hi = line[0];
  for (const auto& p : line)
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], p[k]);
      hi[k] = std::max(hi[k], p[k]);
    }
  std::array<std::size_t, 3> from{}, to{};
  for (int k = 0; k < 3; ++k) {
    from[k] = static_cast<std::size_t>(std::max(0.0, std::floor(lo[k] - reach)));
    to[k] = static_cast<std::size_t>(std::min(static_cast<double>(dims[k] - 1), std::ceil(hi[k] + reach)));
  }
  for (std::size_t z = from[2]; z <= to[2]; ++z)
    for (std::size_t y = from[1]; y <= to[1]; ++y)
      for (std::size_t x = from[0]; x <= to[0]; ++x) {
        const Point3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        dist[x + dims[0] * (y + dims[1] * z)] = point_polyline_distance(p, line);
      }
  return dist;
}

struct Ellipsoid {
  Point3 centre;
  Point3 axes[3];
  double semi[3];
  double amplitude;

  double falloff(const Point3& p) const {
    const Point3 d = sub(p, centre);
    double rho2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double u = dot(d, axes[k]) / semi[k];
      rho2 += u * u;
    }
    const double minor = std::min({semi[0], semi[1], semi[2]});
    return std::clamp((1.0 - std::sqrt(rho2)) * minor + 0.5, 0.0, 1.0);
  }
  double reach() const { return std::max({semi[0], semi[1], semi[2]}) + 1.0; }
};

template <typename Fn>
void for_each_near(const Dims3& dims, const Point3& c, double reach, Fn fn) {
  std::array<std::int64_t, 3> lo{}, hi{};
  for (int k = 0; k < 3; ++k) {
    lo[k] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(c[k] - reach)));
    hi[k] = std::min<std::int64_t>(static_cast<std::int64_t>(dims[k]) - 1,
                                   static_cast<std::int64_t>(std::ceil(c[k] + reach)));
  }
  for (auto z = lo[2]; z <= hi[2]; ++z)
    for (auto y = lo[1]; y <= hi[1]; ++y)
      for (auto x = lo[0]; x <= hi[0]; ++x) {
        const auto i = static_cast<std::size_t>(x) + dims[0] * (static_cast<std::size_t>(y) +
                                                                dims[1] * static_cast<std::size_t>(z));
        fn(i, Point3{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
      }
}

// [1 2 1] / 4 along each axis with edge replication.
void smooth_121(std::vector<double>& v, const Dims3& dims) {
  const std::size_t stride[3] = {1, dims[0], dims[0] * dims[1]};
  std::vector<double> tmp(v.size());
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t n = dims[axis], s = stride[axis];
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::size_t pos = (i / s) % n;
      const double prev = v[pos > 0 ? i - s : i];
      const double next = v[pos + 1 < n ? i + s : i];
      tmp[i] = 0.25 * prev + 0.5 * v[i] + 0.25 * next;
    }
    v.swap(tmp);
  }
}

std::string member_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "phantom_%03zu", i);
  return buf;
}

}  // namespace

void PhantomConfig::validate() const {
  for (auto d : dims)
    if (d == 0) throw PhantomError("phantom dims must be positive");
  if (!(spacing_mm > 0.0)) throw PhantomError("phantom spacing must be positive");
  if (!(tube_radius_vox > 0.0)) throw PhantomError("tube radius must be positive");
  if (curvature < 0.0 || curvature > 1.0) throw PhantomError("curvature must lie in [0, 1]");
  if (!(tube_intensity > background_mean)) throw PhantomError("tube must be brighter than the background");
  if (background_mean <= 0.0) throw PhantomError("background mean must be positive");
  if (speckle_strength < 0.0 || speckle_strength >= 1.0) throw PhantomError("speckle strength must lie in [0, 1)");
}

json to_json(const PhantomConfig& c) {
  return {{"dims", {c.dims[0], c.dims[1], c.dims[2]}},
          {"spacing_mm", c.spacing_mm},
          {"tube_radius_vox", c.tube_radius_vox},
          {"curvature", c.curvature},
          {"tube_intensity", c.tube_intensity},
          {"background_mean", c.background_mean},
          {"speckle_strength", c.speckle_strength},
          {"n_distractors", c.n_distractors},
          {"seed", c.seed}};
}

PhantomConfig phantom_config_from_json(const json& j, PhantomConfig c) {
  try {
    if (j.contains("dims")) {
      const auto d = j.at("dims").get<std::vector<std::size_t>>();
      if (d.size() != 3) throw PhantomError("phantom dims need 3 entries");
      c.dims = {d[0], d[1], d[2]};
    }
    c.spacing_mm = j.value("spacing_mm", c.spacing_mm);
    c.tube_radius_vox = j.value("tube_radius_vox", c.tube_radius_vox);
    c.curvature = j.value("curvature", c.curvature);
    c.tube_intensity = j.value("tube_intensity", c.tube_intensity);
    c.background_mean = j.value("background_mean", c.background_mean);
    c.speckle_strength = j.value("speckle_strength", c.speckle_strength);
    c.n_distractors = j.value("n_distractors", c.n_distractors);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw PhantomError(std::string("malformed phantom config: ") + e.what());
  }
  return c;
}

Phantom generate(const PhantomConfig& cfg) {
  cfg.validate();
  const Dims3 dims = cfg.dims;
  const double r = cfg.tube_radius_vox;
  const double margin = r + 1.0;
  const double shortest = static_cast<double>(std::min({dims[0], dims[1], dims[2]}));

  Rng geo(derive_seed(cfg.seed, {0}));
  Polyline centreline;
  for (int attempt = 0; attempt < kPlacementAttempts && centreline.empty(); ++attempt) {
    const Point3 dir = random_direction(geo);
    const double length = geo.uniform(0.55, 0.8) * shortest;
    Point3 centre;
    for (int k = 0; k < 3; ++k) centre[k] = geo.uniform(margin, static_cast<double>(dims[k]) - 1.0 - margin);
    const Point3 bend = scale(random_perpendicular(geo, dir), cfg.curvature * 0.5 * length);
    const Point3 a = sub(centre, scale(dir, 0.5 * length));
    const Point3 b = add(centre, scale(dir, 0.5 * length));
    Polyline line = quadratic_curve(a, add(centre, bend), b);
    if (inside_with_margin(line, dims, margin)) centreline = std::move(line);
  }
  if (centreline.empty()) throw PhantomError("tube does not fit inside the volume");

  const std::vector<double> dist = centreline_distance(centreline, dims, r + 4.0);
  const Spacing3 spacing{cfg.spacing_mm, cfg.spacing_mm, cfg.spacing_mm};
  Mask3 mask(dims, spacing);
  std::vector<double> signal(voxel_count(dims), cfg.background_mean);
  const double amplitude = cfg.tube_intensity - cfg.background_mean;
  for (std::size_t i = 0; i < signal.size(); ++i) {
    if (dist[i] <= r) mask.set(i, true);
    signal[i] += amplitude * std::clamp(r + 0.5 - dist[i], 0.0, 1.0);
  }

  Rng clutter(derive_seed(cfg.seed, {1}));
  for (std::size_t n = 0; n < cfg.n_distractors; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      Ellipsoid e;
      for (int k = 0; k < 3; ++k) e.centre[k] = clutter.uniform(0.0, static_cast<double>(dims[k]) - 1.0);
      e.axes[0] = random_direction(clutter);
      e.axes[1] = random_perpendicular(clutter, e.axes[0]);
      e.axes[2] = cross(e.axes[0], e.axes[1]);
      for (auto& semi : e.semi) semi = clutter.uniform(3.0, 5.5);
      e.amplitude = amplitude * clutter.uniform(0.5, 0.9);
      bool clear = true;
      for_each_near(dims, e.centre, e.reach(), [&](std::size_t i, const Point3& p) {
        if (e.falloff(p) > 0.0 && dist[i] <= r + 1.5) clear = false;
      });
      if (!clear) continue;
      for_each_near(dims, e.centre, e.reach(),
                    [&](std::size_t i, const Point3& p) { signal[i] += e.amplitude * e.falloff(p); });
      placed = true;
    }
    if (!placed) throw PhantomError("cannot place distractor clear of the tube");
  }

  Rng speckle(derive_seed(cfg.seed, {2}));
  std::vector<double> noise(signal.size());
  for (auto& v : noise) v = 1.0 + cfg.speckle_strength * speckle.uniform(-1.0, 1.0);
  smooth_121(noise, dims);
  for (std::size_t i = 0; i < signal.size(); ++i) signal[i] *= noise[i];

  return {Volume3(dims, spacing, std::move(signal)), std::move(mask), std::move(centreline)};
}

std::uint64_t member_seed(std::uint64_t base_seed, std::size_t index) { return derive_seed(base_seed, {index}); }

std::vector<Phantom> generate_dataset(std::size_t n, std::uint64_t base_seed, const PhantomConfig& cfg) {
  if (n == 0) throw PhantomError("dataset size must be at least 1");
  std::vector<Phantom> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    PhantomConfig c = cfg;
    c.seed = member_seed(base_seed, i);
    out.push_back(generate(c));
  }
  return out;
}

std::vector<std::vector<std::size_t>> fold_split(std::size_t n, std::size_t k) {
  if (k == 0 || k > n) throw PhantomError("fold count must lie in [1, n]");
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t next = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) folds[f].push_back(next++);
  }
  return folds;
}

std::vector<std::size_t> DatasetManifest::train_indices(std::size_t f) const {
  if (f >= folds.size()) throw PhantomError("fold " + std::to_string(f) + " out of range");
  std::vector<std::size_t> out;
  for (std::size_t g = 0; g < folds.size(); ++g)
    if (g != f) out.insert(out.end(), folds[g].begin(), folds[g].end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> DatasetManifest::test_indices(std::size_t f) const {
  if (f >= folds.size()) throw PhantomError("fold " + std::to_string(f) + " out of range");
  return folds[f];
}

DatasetManifest write_dataset(const fs::path& dir, std::size_t n, std::uint64_t base_seed, const PhantomConfig& cfg,
                              std::size_t folds) {
  if (n == 0) throw PhantomError("dataset size must be at least 1");
  fs::create_directories(dir);
  DatasetManifest m;
  m.base_seed = base_seed;
  m.config = cfg;
  m.folds = fold_split(n, folds);
  json members = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    PhantomConfig c = cfg;
    c.seed = member_seed(base_seed, i);
    const Phantom p = generate(c);
    ManifestMember mm;
    mm.name = member_name(i);
    mm.seed = c.seed;
    mm.volume = dir / (mm.name + "_volume.json");
    mm.mask = dir / (mm.name + "_mask.json");
    mm.skeleton = dir / (mm.name + "_skeleton.json");
    for (std::size_t f = 0; f < m.folds.size(); ++f)
      if (std::find(m.folds[f].begin(), m.folds[f].end(), i) != m.folds[f].end()) mm.fold = f;
    save_volume(p.volume, mm.volume);
    save_mask(p.mask, mm.mask);
    save_json({{"points", polyline_to_json(p.skeleton)}}, mm.skeleton);
    members.push_back({{"name", mm.name},
                       {"seed", mm.seed},
                       {"fold", mm.fold},
                       {"volume", mm.volume.filename().string()},
                       {"mask", mm.mask.filename().string()},
                       {"skeleton", mm.skeleton.filename().string()}});
    m.members.push_back(std::move(mm));
  }
  json j;
  j["format"] = "cathseg-phantoms";
  j["base_seed"] = base_seed;
  j["config"] = to_json(cfg);
  j["folds"] = m.folds;
  j["members"] = members;
  save_json(j, dir / "manifest.json");
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "manifest.json" : path;
  const json j = load_json(file);
  const fs::path dir = file.parent_path();
  DatasetManifest m;
  try {
    m.base_seed = j.at("base_seed").get<std::uint64_t>();
    m.config = phantom_config_from_json(j.at("config"));
    m.folds = j.at("folds").get<std::vector<std::vector<std::size_t>>>();
    for (const auto& e : j.at("members")) {
      ManifestMember mm;
      mm.name = e.at("name").get<std::string>();
      mm.seed = e.at("seed").get<std::uint64_t>();
      mm.fold = e.at("fold").get<std::size_t>();
      mm.volume = dir / e.at("volume").get<std::string>();
      mm.mask = dir / e.at("mask").get<std::string>();
      mm.skeleton = dir / e.at("skeleton").get<std::string>();
      m.members.push_back(std::move(mm));
    }
  } catch (const json::exception& e) {
    throw PhantomError("malformed manifest " + file.string() + ": " + e.what());
  }
  for (const auto& f : m.folds)
    for (auto i : f)
      if (i >= m.members.size()) throw PhantomError("manifest fold refers to a missing member");
  return m;
}

}  // namespace cathseg
