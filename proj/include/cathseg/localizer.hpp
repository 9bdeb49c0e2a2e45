#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "cathseg/volume.hpp"

namespace cathseg {

using Point3 = std::array<double, 3>;
using Polyline = std::vector<Point3>;

class LocalizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-voxel cluster labels: 0 is background, clusters are 1..count in order
// of their first voxel in linear scan order.
struct Clusters {
  Dims3 dims{0, 0, 0};
  std::vector<std::uint32_t> labels;
  std::size_t count = 0;

  // Linear voxel indices of each cluster, ascending. Entry 0 is cluster 1.
  std::vector<std::vector<std::size_t>> members() const;
};

// 26-connected components of the positive voxels.
Clusters connected_components(const Mask3& mask);

struct SparseVolume {
  std::vector<Point3> points;  // voxel units
  std::vector<std::uint32_t> source_cluster;
};

// Unit-length bins along the principal axis of a point set; one centroid per
// non-empty bin, ordered along the axis.
std::vector<Point3> skeletonize(const std::vector<Point3>& points);

SparseVolume extract_sparse(const Clusters& clusters);

// Skeleton of all positive voxels of an annotation, ordered along its
// principal axis.
Polyline annotation_skeleton(const Mask3& mask);

// Unit principal axis of a point set, sign fixed so the first non-zero
// component is positive.
Point3 principal_axis(const std::vector<Point3>& points);

std::array<Point3, 3> rank_control_points(const Point3& p0, const Point3& p1, const Point3& p2);

// Natural cubic spline through three points, chord-length parameterised.
class Spline3 {
 public:
  explicit Spline3(const std::array<Point3, 3>& knots);

  // t in [0, 1]; the middle knot sits at t = h0 / (h0 + h1).
  Point3 evaluate(double t) const;
  double middle_parameter() const { return h0_ / (h0_ + h1_); }
  const std::array<Point3, 3>& knots() const { return knots_; }

  // S points; the three knots are vertices of the result.
  Polyline sample(std::size_t s) const;

 private:
  Point3 on_span(int span, double s) const;

  std::array<Point3, 3> knots_;
  double h0_ = 0.0, h1_ = 0.0;
  Point3 m1_{};  // second derivative at the middle knot
};

inline constexpr std::size_t kPolylineSamples = 100;

Polyline fit_spline(const std::array<Point3, 3>& ordered, std::size_t samples = kPolylineSamples);

double point_segment_distance(const Point3& p, const Point3& a, const Point3& b);
double point_polyline_distance(const Point3& p, const Polyline& line);

struct CatheterModel {
  std::array<Point3, 3> control_points{};
  Polyline polyline;
  std::size_t score = 0;
  double threshold_vox = 3.0;
  std::uint64_t seed = 0;
};

struct RansacOptions {
  std::size_t iterations = 500;
  double inlier_threshold_vox = 3.0;
  std::uint64_t seed = 0;
};

struct RansacRun {
  CatheterModel best;
  std::vector<std::size_t> candidate_scores;  // one per evaluated draw
};

// Dense voxels within the threshold of the polyline.
std::size_t count_inliers(const Polyline& line, const std::vector<Point3>& dense, double threshold);

RansacRun run_spd_ransac(const SparseVolume& sparse, const Mask3& dense, const RansacOptions& options);
CatheterModel spd_ransac(const SparseVolume& sparse, const Mask3& dense, const RansacOptions& options);

// Components, skeletons and SPD-RANSAC on a binary segmentation.
CatheterModel localize(const Mask3& segmentation, const RansacOptions& options);

nlohmann::json to_json(const CatheterModel& model);
CatheterModel catheter_model_from_json(const nlohmann::json& j);
nlohmann::json polyline_to_json(const Polyline& line);
Polyline polyline_from_json(const nlohmann::json& j);

}  // namespace cathseg
