#include "cathseg/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "cathseg/rng.hpp"

namespace cathseg {

using nlohmann::json;

namespace {

Point3 sub(const Point3& a, const Point3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot(const Point3& a, const Point3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Point3& a) { return std::sqrt(dot(a, a)); }

Point3 voxel_point(const Dims3& dims, std::size_t i) {
  return {static_cast<double>(i % dims[0]), static_cast<double>((i / dims[0]) % dims[1]),
          static_cast<double>(i / (dims[0] * dims[1]))};
}

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

double segment_distance2(const Point3& p, const Point3& a, const Point3& b) {
  const Point3 ab = sub(b, a);
  const double len2 = dot(ab, ab);
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(dot(sub(p, a), ab) / len2, 0.0, 1.0);
  const Point3 q{a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]};
  const Point3 d = sub(p, q);
  return dot(d, d);
}

struct Box {
  Point3 lo, hi;
  bool contains(const Point3& p) const {
    return p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1] && p[2] >= lo[2] && p[2] <= hi[2];
  }
};

Box expanded_box(const Point3& a, const Point3& b, double margin) {
  Box box;
  for (int k = 0; k < 3; ++k) {
    box.lo[k] = std::min(a[k], b[k]) - margin;
    box.hi[k] = std::max(a[k], b[k]) + margin;
  }
  return box;
}

}  // namespace

std::vector<std::vector<std::size_t>> Clusters::members() const {
  std::vector<std::vector<std::size_t>> out(count);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i]) out[labels[i] - 1].push_back(i);
  return out;
}

Clusters connected_components(const Mask3& mask) {
  const auto [nx, ny, nz] = mask.dims();
  const std::size_t n = mask.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});

  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) {
        const std::size_t i = mask.index(x, y, z);
        if (!mask[i]) continue;
        // Union with the 13 neighbours that precede this voxel in scan order.
        for (int dz = -1; dz <= 0; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
              const auto qx = static_cast<std::int64_t>(x) + dx;
              const auto qy = static_cast<std::int64_t>(y) + dy;
              const auto qz = static_cast<std::int64_t>(z) + dz;
              if (qx < 0 || qy < 0 || qz < 0 || qx >= static_cast<std::int64_t>(nx) ||
                  qy >= static_cast<std::int64_t>(ny))
                continue;
              const std::size_t j = mask.index(static_cast<std::size_t>(qx), static_cast<std::size_t>(qy),
                                               static_cast<std::size_t>(qz));
              if (!mask[j]) continue;
              const std::size_t ri = find_root(parent, i), rj = find_root(parent, j);
              if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
            }
      }

  Clusters out;
  out.dims = mask.dims();
  out.labels.assign(n, 0);
  std::vector<std::uint32_t> root_label(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const std::size_t r = find_root(parent, i);
    if (!root_label[r]) root_label[r] = static_cast<std::uint32_t>(++out.count);
    out.labels[i] = root_label[r];
  }
  return out;
}

Point3 principal_axis(const std::vector<Point3>& points) {
  if (points.empty()) throw LocalizerError("principal axis of an empty point set");
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : points) mean += Eigen::Vector3d(p[0], p[1], p[2]);
  mean /= static_cast<double>(points.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : points) {
    const Eigen::Vector3d d = Eigen::Vector3d(p[0], p[1], p[2]) - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(points.size());
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  Eigen::Vector3d axis = solver.eigenvectors().col(2);
  for (int k = 0; k < 3; ++k) {
    if (axis[k] > 0.0) break;
    if (axis[k] < 0.0) {
      axis = -axis;
      break;
    }
  }
  return {axis[0], axis[1], axis[2]};
}

std::vector<Point3> skeletonize(const std::vector<Point3>& points) {
  if (points.empty()) throw LocalizerError("cannot skeletonize an empty cluster");
  if (points.size() == 1) return points;
  const Point3 axis = principal_axis(points);
  Point3 mean{0.0, 0.0, 0.0};
  for (const auto& p : points)
    for (int k = 0; k < 3; ++k) mean[k] += p[k];
  for (auto& m : mean) m /= static_cast<double>(points.size());

  std::vector<double> t(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) t[i] = dot(sub(points[i], mean), axis);
  const double tmin = *std::min_element(t.begin(), t.end());

  std::vector<std::size_t> bin(points.size());
  std::size_t bins = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bin[i] = static_cast<std::size_t>(std::llround(t[i] - tmin));
    bins = std::max(bins, bin[i] + 1);
  }
  std::vector<Point3> sums(bins, Point3{0.0, 0.0, 0.0});
  std::vector<std::size_t> counts(bins, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int k = 0; k < 3; ++k) sums[bin[i]][k] += points[i][k];
    ++counts[bin[i]];
  }
  std::vector<Point3> out;
  for (std::size_t b = 0; b < bins; ++b) {
    if (!counts[b]) continue;
    const auto c = static_cast<double>(counts[b]);
    out.push_back({sums[b][0] / c, sums[b][1] / c, sums[b][2] / c});
  }
  return out;
}

SparseVolume extract_sparse(const Clusters& clusters) {
  if (clusters.count == 0) throw LocalizerError("no clusters to skeletonize");
  SparseVolume sparse;
  const auto members = clusters.members();
  for (std::size_t c = 0; c < members.size(); ++c) {
    std::vector<Point3> pts;
    pts.reserve(members[c].size());
    for (auto i : members[c]) pts.push_back(voxel_point(clusters.dims, i));
    for (const auto& p : skeletonize(pts)) {
      sparse.points.push_back(p);
      sparse.source_cluster.push_back(static_cast<std::uint32_t>(c + 1));
    }
  }
  return sparse;
}

Polyline annotation_skeleton(const Mask3& mask) {
  std::vector<Point3> pts;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) pts.push_back(voxel_point(mask.dims(), i));
  if (pts.empty()) throw LocalizerError("annotation is empty");
  return skeletonize(pts);
}

std::array<Point3, 3> rank_control_points(const Point3& p0, const Point3& p1, const Point3& p2) {
  if (p0 == p1 || p1 == p2 || p0 == p2) throw LocalizerError("coincident control points");
  const std::vector<Point3> pts{p0, p1, p2};
  const Point3 axis = principal_axis(pts);
  std::array<double, 3> proj{};
  for (int i = 0; i < 3; ++i) proj[i] = dot(pts[i], axis);
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return proj[a] < proj[b]; });
  std::array<Point3, 3> out{pts[order[0]], pts[order[1]], pts[order[2]]};
  if (out[2] < out[0]) std::swap(out[0], out[2]);
  return out;
}

Spline3::Spline3(const std::array<Point3, 3>& knots) : knots_(knots) {
  h0_ = norm(sub(knots[1], knots[0]));
  h1_ = norm(sub(knots[2], knots[1]));
  if (!(h0_ > 0.0) || !(h1_ > 0.0)) throw LocalizerError("degenerate spline: coincident knots");
  for (int k = 0; k < 3; ++k) {
    const double rhs = 6.0 * ((knots[2][k] - knots[1][k]) / h1_ - (knots[1][k] - knots[0][k]) / h0_);
    m1_[k] = rhs / (2.0 * (h0_ + h1_));
  }
}

Point3 Spline3::on_span(int span, double s) const {
  const Point3& pa = knots_[span];
  const Point3& pb = knots_[span + 1];
  const double h = span == 0 ? h0_ : h1_;
  if (s <= 0.0) return pa;
  if (s >= h) return pb;
  Point3 out;
  for (int k = 0; k < 3; ++k) {
    const double ma = span == 0 ? 0.0 : m1_[k];
    const double mb = span == 0 ? m1_[k] : 0.0;
    const double r = h - s;
    out[k] = ma * r * r * r / (6.0 * h) + mb * s * s * s / (6.0 * h) + (pa[k] / h - ma * h / 6.0) * r +
             (pb[k] / h - mb * h / 6.0) * s;
  }
  return out;
}

Point3 Spline3::evaluate(double t) const {
  const double u = t * (h0_ + h1_);
  return u <= h0_ ? on_span(0, u) : on_span(1, u - h0_);
}

Polyline Spline3::sample(std::size_t s) const {
  if (s < 3) throw LocalizerError("spline sampling needs at least 3 points");
  const auto spans = static_cast<double>(s - 1);
  const auto n0 = static_cast<std::size_t>(
      std::clamp<double>(std::round(spans * h0_ / (h0_ + h1_)), 1.0, static_cast<double>(s - 2)));
  const std::size_t n1 = s - 1 - n0;
  Polyline out;
  out.reserve(s);
  for (std::size_t j = 0; j < n0; ++j)
    out.push_back(on_span(0, h0_ * static_cast<double>(j) / static_cast<double>(n0)));
  for (std::size_t j = 0; j <= n1; ++j)
    out.push_back(j == n1 ? knots_[2] : on_span(1, h1_ * static_cast<double>(j) / static_cast<double>(n1)));
  return out;
}

Polyline fit_spline(const std::array<Point3, 3>& ordered, std::size_t samples) {
  if (ordered[2] < ordered[0]) {
    Polyline line = Spline3({ordered[2], ordered[1], ordered[0]}).sample(samples);
    std::reverse(line.begin(), line.end());
    return line;
  }
  return Spline3(ordered).sample(samples);
}

double point_segment_distance(const Point3& p, const Point3& a, const Point3& b) {
  return std::sqrt(segment_distance2(p, a, b));
}

double point_polyline_distance(const Point3& p, const Polyline& line) {
  if (line.empty()) throw LocalizerError("distance to an empty polyline");
  if (line.size() == 1) return norm(sub(p, line[0]));
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < line.size(); ++i) best = std::min(best, segment_distance2(p, line[i], line[i + 1]));
  return std::sqrt(best);
}

std::size_t count_inliers(const Polyline& line, const std::vector<Point3>& dense, double threshold) {
  if (line.size() < 2) throw LocalizerError("inlier count needs a polyline with a segment");
  std::vector<Box> boxes;
  boxes.reserve(line.size() - 1);
  Box all = expanded_box(line[0], line[1], threshold);
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    boxes.push_back(expanded_box(line[i], line[i + 1], threshold));
    for (int k = 0; k < 3; ++k) {
      all.lo[k] = std::min(all.lo[k], boxes.back().lo[k]);
      all.hi[k] = std::max(all.hi[k], boxes.back().hi[k]);
    }
  }
  // Squared-distance screen with slack; the decision itself uses the distance.
  const double screen = threshold * threshold * (1.0 + 1e-9);
  std::size_t count = 0;
  for (const auto& p : dense) {
    if (!all.contains(p)) continue;
    for (std::size_t i = 0; i + 1 < line.size(); ++i) {
      if (!boxes[i].contains(p)) continue;
      const double d2 = segment_distance2(p, line[i], line[i + 1]);
      if (d2 <= screen && std::sqrt(d2) <= threshold) {
        ++count;
        break;
      }
    }
  }
  return count;
}

RansacRun run_spd_ransac(const SparseVolume& sparse, const Mask3& dense, const RansacOptions& options) {
  const std::size_t n = sparse.points.size();
  if (n < 3) throw LocalizerError("SPD-RANSAC needs at least 3 sparse points");
  std::vector<Point3> dense_points;
  for (std::size_t i = 0; i < dense.size(); ++i)
    if (dense[i]) dense_points.push_back(voxel_point(dense.dims(), i));
  if (dense_points.empty()) throw LocalizerError("SPD-RANSAC needs at least one dense voxel");

  RansacRun run;
  bool found = false;
  for (std::size_t it = 0; it < options.iterations; ++it) {
    Rng rng(derive_seed(options.seed, {it}));
    auto a = static_cast<std::size_t>(rng.below(n));
    auto b = static_cast<std::size_t>(rng.below(n - 1));
    auto c = static_cast<std::size_t>(rng.below(n - 2));
    // Map draws onto three distinct indices.
    if (b >= a) ++b;
    const std::size_t lo = std::min(a, b), hi = std::max(a, b);
    if (c >= lo) ++c;
    if (c >= hi) ++c;
    const Point3 &pa = sparse.points[a], &pb = sparse.points[b], &pc = sparse.points[c];
    if (pa == pb || pb == pc || pa == pc) {
      run.candidate_scores.push_back(0);
      continue;
    }
    CatheterModel candidate;
    candidate.control_points = rank_control_points(pa, pb, pc);
    candidate.polyline = fit_spline(candidate.control_points);
    candidate.score = count_inliers(candidate.polyline, dense_points, options.inlier_threshold_vox);
    run.candidate_scores.push_back(candidate.score);
    if (!found || candidate.score > run.best.score) {
      run.best = std::move(candidate);
      found = true;
    }
    if (run.best.score == dense_points.size()) break;
  }
  if (!found) throw LocalizerError("SPD-RANSAC drew no valid control-point triple");
  run.best.threshold_vox = options.inlier_threshold_vox;
  run.best.seed = options.seed;
  return run;
}

CatheterModel spd_ransac(const SparseVolume& sparse, const Mask3& dense, const RansacOptions& options) {
  return run_spd_ransac(sparse, dense, options).best;
}

CatheterModel localize(const Mask3& segmentation, const RansacOptions& options) {
  const Clusters clusters = connected_components(segmentation);
  if (clusters.count == 0) throw LocalizerError("no catheter found: segmentation is empty");
  const SparseVolume sparse = extract_sparse(clusters);
  if (sparse.points.size() < 3) throw LocalizerError("no catheter found: fewer than 3 skeleton points");
  return spd_ransac(sparse, segmentation, options);
}

json polyline_to_json(const Polyline& line) {
  json arr = json::array();
  for (const auto& p : line) arr.push_back({p[0], p[1], p[2]});
  return arr;
}

Polyline polyline_from_json(const json& j) {
  Polyline line;
  try {
    for (const auto& p : j) {
      const auto v = p.get<std::vector<double>>();
      if (v.size() != 3) throw LocalizerError("polyline points need 3 coordinates");
      line.push_back({v[0], v[1], v[2]});
    }
  } catch (const json::exception& e) {
    throw LocalizerError(std::string("malformed polyline: ") + e.what());
  }
  return line;
}

json to_json(const CatheterModel& model) {
  json j;
  j["control_points"] = polyline_to_json({model.control_points.begin(), model.control_points.end()});
  j["polyline"] = polyline_to_json(model.polyline);
  j["score"] = model.score;
  j["threshold_vox"] = model.threshold_vox;
  j["seed"] = model.seed;
  return j;
}

CatheterModel catheter_model_from_json(const json& j) {
  CatheterModel m;
  try {
    const Polyline cps = polyline_from_json(j.at("control_points"));
    if (cps.size() != 3) throw LocalizerError("catheter model needs exactly 3 control points");
    std::copy(cps.begin(), cps.end(), m.control_points.begin());
    m.polyline = polyline_from_json(j.at("polyline"));
    m.score = j.at("score").get<std::size_t>();
    m.threshold_vox = j.value("threshold_vox", 3.0);
    m.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw LocalizerError(std::string("malformed catheter model: ") + e.what());
  }
  if (m.polyline.empty()) throw LocalizerError("catheter model has an empty polyline");
  return m;
}

}  // namespace cathseg
