#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cathseg/localizer.hpp"
#include "cathseg/rng.hpp"
#include "support/oracles.hpp"

using namespace cathseg;

namespace {

Mask3 random_mask(std::size_t m, double density, std::uint64_t seed) {
  Rng rng(seed);
  Mask3 mask({m, m, m});
  for (std::size_t i = 0; i < mask.size(); ++i) mask.set(i, rng.coin(density));
  return mask;
}

double dot(const Point3& a, const Point3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

double dist(const Point3& a, const Point3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

// Principal eigenvector of the scatter matrix by power iteration.
Point3 power_axis(const std::vector<Point3>& pts) {
  Point3 c{};
  for (const auto& p : pts)
    for (int k = 0; k < 3; ++k) c[k] += p[k] / static_cast<double>(pts.size());
  double s[3][3] = {};
  for (const auto& p : pts)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) s[i][j] += (p[i] - c[i]) * (p[j] - c[j]);
  Point3 v{0.6, 0.5, 0.4};
  for (int it = 0; it < 500; ++it) {
    Point3 w{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) w[i] += s[i][j] * v[j];
    const double n = std::sqrt(dot(w, w));
    for (int k = 0; k < 3; ++k) v[k] = w[k] / n;
  }
  return v;
}

std::vector<Point3> mask_points(const Mask3& m) {
  std::vector<Point3> out;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) {
      const auto c = m.coord(i);
      out.push_back({double(c[0]), double(c[1]), double(c[2])});
    }
  return out;
}

Mask3 x_line(Dims3 dims, std::size_t x0, std::size_t len, std::size_t y, std::size_t z) {
  Mask3 m(dims);
  for (std::size_t i = 0; i < len; ++i) m.set(x0 + i, y, z, true);
  return m;
}

}  // namespace

TEST_CASE("connected_components small examples") {
  Mask3 face({4, 4, 4});
  face.set(1, 1, 1, true);
  face.set(2, 1, 1, true);
  CHECK(connected_components(face).count == 1);

  Mask3 apart({4, 4, 4});
  apart.set(0, 0, 0, true);
  apart.set(2, 2, 2, true);
  const auto c = connected_components(apart);
  CHECK(c.count == 2);
  CHECK(c.labels[apart.index(0, 0, 0)] == 1);
  CHECK(c.labels[apart.index(2, 2, 2)] == 2);

  Mask3 corner({4, 4, 4});
  corner.set(0, 0, 0, true);
  corner.set(1, 1, 1, true);
  CHECK(connected_components(corner).count == 1);

  CHECK(connected_components(Mask3({3, 3, 3})).count == 0);
}

TEST_CASE("connected_components equals the flood-fill oracle") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const std::size_t m = 4 + seed;
    const Mask3 mask = random_mask(m, 0.05 + 0.03 * static_cast<double>(seed % 5), seed);
    std::size_t count = 0;
    const auto expect = oracle::flood_fill_labels(mask, count);
    const auto got = connected_components(mask);
    CHECK(got.count == count);
    CHECK(got.labels == expect);
    const auto members = got.members();
    CHECK(members.size() == count);
  }
}

TEST_CASE("thin line skeleton is the line itself") {
  const Mask3 line = x_line({16, 8, 8}, 3, 10, 4, 5);
  const auto sparse = extract_sparse(connected_components(line));
  REQUIRE(sparse.points.size() == 10);
  for (const auto& p : sparse.points) {
    CHECK(p[1] == doctest::Approx(4.0));
    CHECK(p[2] == doctest::Approx(5.0));
    CHECK(p[0] >= 3.0 - 1e-9);
    CHECK(p[0] <= 12.0 + 1e-9);
  }
  for (auto s : sparse.source_cluster) CHECK(s == 1);
}

TEST_CASE("solid box skeleton follows the centreline") {
  Mask3 box({16, 16, 16});
  for (std::size_t z = 3; z < 13; ++z)
    for (std::size_t y = 6; y < 9; ++y)
      for (std::size_t x = 4; x < 7; ++x) box.set(x, y, z, true);
  const auto sparse = extract_sparse(connected_components(box));
  CHECK(sparse.points.size() >= 9);
  CHECK(sparse.points.size() <= 11);
  for (const auto& p : sparse.points) CHECK(std::hypot(p[0] - 5.0, p[1] - 7.0) <= 0.75);
}

TEST_CASE("single voxel cluster emits its coordinate") {
  Mask3 m({5, 5, 5});
  m.set(1, 2, 3, true);
  const auto sparse = extract_sparse(connected_components(m));
  REQUIRE(sparse.points.size() == 1);
  CHECK(sparse.points[0] == Point3{1, 2, 3});
}

TEST_CASE("skeleton points stay inside each cluster's bounding box") {
  const Mask3 mask = random_mask(14, 0.12, 77);
  const auto clusters = connected_components(mask);
  const auto sparse = extract_sparse(clusters);
  const auto members = clusters.members();
  for (std::size_t i = 0; i < sparse.points.size(); ++i) {
    const auto& mem = members[sparse.source_cluster[i] - 1];
    for (int k = 0; k < 3; ++k) {
      double lo = 1e9, hi = -1e9;
      for (auto v : mem) {
        lo = std::min(lo, double(mask.coord(v)[k]));
        hi = std::max(hi, double(mask.coord(v)[k]));
      }
      CHECK(sparse.points[i][k] >= lo - 1e-9);
      CHECK(sparse.points[i][k] <= hi + 1e-9);
    }
  }
}

TEST_CASE("principal_axis agrees with power iteration") {
  Rng rng(3);
  std::vector<Point3> pts;
  for (int i = 0; i < 200; ++i) {
    const double t = rng.uniform(-10, 10);
    pts.push_back({3 * t + rng.uniform(-1, 1), -t + rng.uniform(-1, 1), 2 * t + rng.uniform(-1, 1)});
  }
  const Point3 a = principal_axis(pts), b = power_axis(pts);
  CHECK(std::abs(std::abs(dot(a, b)) - 1.0) < 1e-9);
  CHECK(a[0] > 0.0);
}

TEST_CASE("rank_control_points examples") {
  const auto r = rank_control_points({2, 0, 0}, {0, 0, 0}, {1, 0, 0});
  CHECK(r == std::array<Point3, 3>{Point3{0, 0, 0}, Point3{1, 0, 0}, Point3{2, 0, 0}});
  CHECK(rank_control_points(r[0], r[1], r[2]) == r);
  CHECK_THROWS_AS(rank_control_points({1, 1, 1}, {1, 1, 1}, {2, 0, 0}), LocalizerError);
}

TEST_CASE("rank_control_points puts the middle projection in the middle") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Point3> pts(3);
    for (auto& p : pts)
      for (auto& c : p) c = rng.uniform(0, 20);
    const Point3 axis = power_axis(pts);
    std::vector<std::pair<double, Point3>> proj;
    for (const auto& p : pts) proj.emplace_back(dot(p, axis), p);
    std::sort(proj.begin(), proj.end());
    const auto r = rank_control_points(pts[0], pts[1], pts[2]);
    CHECK(r[1] == proj[1].second);
    CHECK(r[0] < r[2]);
  }
}

TEST_CASE("fit_spline interpolation and linearity") {
  const auto bend = fit_spline({Point3{0, 0, 0}, Point3{1, 1, 0}, Point3{2, 0, 0}});
  REQUIRE(bend.size() == kPolylineSamples);
  for (const Point3& k : {Point3{0, 0, 0}, Point3{1, 1, 0}, Point3{2, 0, 0}}) {
    double best = 1e9;
    for (const auto& p : bend) best = std::min(best, dist(p, k));
    CHECK(best < 1e-9);
  }
  CHECK(dist(bend.front(), {0, 0, 0}) < 1e-9);
  CHECK(dist(bend.back(), {2, 0, 0}) < 1e-9);

  const auto straight = fit_spline({Point3{1, 2, 3}, Point3{2, 4, 5}, Point3{4, 8, 9}});
  const Polyline chord{{1, 2, 3}, {4, 8, 9}};
  for (const auto& p : straight) CHECK(oracle::polyline_distance(p, chord) < 1e-9);
  for (std::size_t i = 1; i < straight.size(); ++i) CHECK(dist(straight[i], straight[i - 1]) > 0.0);

  CHECK_THROWS_AS(fit_spline({Point3{0, 0, 0}, Point3{0, 0, 0}, Point3{1, 0, 0}}), LocalizerError);
}

TEST_CASE("spline matches the tridiagonal oracle") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::array<Point3, 3> k;
    for (auto& p : k)
      for (auto& c : p) c = rng.uniform(0, 30);
    const Spline3 spline(k);
    const double h0 = dist(k[0], k[1]), h1 = dist(k[1], k[2]);
    const std::vector<double> u{0.0, h0 / (h0 + h1), 1.0};
    for (int i = 0; i < 20; ++i) {
      const double t = i / 19.0;
      const Point3 a = spline.evaluate(t);
      const Point3 b = oracle::natural_spline({k[0], k[1], k[2]}, u, t);
      CHECK(dist(a, b) < 1e-9);
    }
  }
}

TEST_CASE("fit_spline is symmetric under reversal") {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    std::array<Point3, 3> k;
    for (auto& p : k)
      for (auto& c : p) c = rng.uniform(0, 30);
    const auto fwd = fit_spline(k);
    auto rev = fit_spline({k[2], k[1], k[0]});
    std::reverse(rev.begin(), rev.end());
    REQUIRE(fwd.size() == rev.size());
    for (std::size_t i = 0; i < fwd.size(); ++i) CHECK(dist(fwd[i], rev[i]) < 1e-9);
  }
}

TEST_CASE("polyline distance matches the brute-force oracle") {
  Rng rng(11);
  Polyline line;
  for (int i = 0; i < 30; ++i) line.push_back({rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(0, 20)});
  line.push_back(line.back());
  for (int i = 0; i < 300; ++i) {
    const Point3 p{rng.uniform(-5, 25), rng.uniform(-5, 25), rng.uniform(-5, 25)};
    CHECK(std::abs(point_polyline_distance(p, line) - oracle::polyline_distance(p, line)) < 1e-9);
  }
}

TEST_CASE("RANSAC recovers a straight line") {
  CHECK(RansacOptions{}.inlier_threshold_vox == 3.0);
  const Mask3 dense = x_line({64, 64, 64}, 12, 40, 30, 33);
  const Polyline truth{{12, 30, 33}, {51, 30, 33}};
  const auto sparse = extract_sparse(connected_components(dense));
  RansacOptions opt;
  opt.iterations = 100;
  const auto run = run_spd_ransac(sparse, dense, opt);
  for (const auto& p : run.best.polyline) CHECK(oracle::polyline_distance(p, truth) < 0.5);
  CHECK(run.best.score == 40);
  // The run may stop once every dense voxel is an inlier.
  CHECK(run.candidate_scores.size() <= 100);
  for (auto s : run.candidate_scores) CHECK(run.best.score >= s);
}

TEST_CASE("RANSAC rejects a clutter blob") {
  // A compact blob fits inside one 3-voxel tube, so a spline with one knot in
  // the blob keeps all of it; the line has to be long enough to outscore that.
  const Dims3 dims{128, 64, 64};
  const Polyline truth{{4, 12, 12}, {123, 12, 12}};
  for (std::size_t offset : {12u, 20u, 30u}) {
    Mask3 dense = x_line(dims, 4, 120, 12, 12);
    Mask3 blob(dims);
    for (std::size_t z = 0; z < 2; ++z)
      for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 5; ++x) {
          dense.set(60 + x, 12 + offset + y, 12 + z, true);
          blob.set(60 + x, 12 + offset + y, 12 + z, true);
        }
    const auto blob_pts = mask_points(blob);
    REQUIRE(blob_pts.size() == 50);
    for (const auto& b : blob_pts) CHECK(oracle::polyline_distance(b, truth) >= 10.0);
    const auto sparse = extract_sparse(connected_components(dense));
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      CAPTURE(offset);
      CAPTURE(seed);
      RansacOptions opt;
      opt.iterations = 500;
      opt.seed = seed;
      const auto model = spd_ransac(sparse, dense, opt);
      const std::size_t blob_inliers = count_inliers(model.polyline, blob_pts, opt.inlier_threshold_vox);
      CHECK(2 * blob_inliers <= model.score);
      double worst = 0.0;
      for (const auto& p : model.polyline) worst = std::max(worst, oracle::polyline_distance(p, truth));
      CHECK(worst < 0.5);
    }
  }
}

TEST_CASE("RANSAC needs three sparse points") {
  SparseVolume sparse;
  sparse.points = {{1, 1, 1}, {2, 2, 2}};
  sparse.source_cluster = {1, 1};
  Mask3 dense({4, 4, 4});
  dense.set(1, 1, 1, true);
  CHECK_THROWS_AS(spd_ransac(sparse, dense, {}), LocalizerError);
  CHECK_THROWS_AS(localize(Mask3({4, 4, 4}), {}), LocalizerError);
}

TEST_CASE("RANSAC is deterministic in its seed") {
  const Mask3 noisy = random_mask(20, 0.02, 4);
  Mask3 dense = x_line({20, 20, 20}, 2, 16, 10, 10);
  for (std::size_t i = 0; i < dense.size(); ++i)
    if (noisy[i]) dense.set(i, true);
  RansacOptions opt;
  opt.seed = 8;
  const auto a = localize(dense, opt), b = localize(dense, opt);
  CHECK(a.polyline == b.polyline);
  CHECK(a.score == b.score);
}

TEST_CASE("catheter model JSON round trip") {
  CatheterModel m;
  m.control_points = {Point3{0, 1, 2}, Point3{3, 4, 5.5}, Point3{6, 7, 8}};
  m.polyline = fit_spline(m.control_points);
  m.score = 17;
  m.seed = 4;
  const auto back = catheter_model_from_json(to_json(m));
  CHECK(back.control_points == m.control_points);
  CHECK(back.polyline == m.polyline);
  CHECK(back.score == 17);
  CHECK(back.threshold_vox == 3.0);
  CHECK(back.seed == 4);
}
