#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cathseg/localizer.hpp"
#include "cathseg/volume.hpp"

namespace cathseg {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Overlap {
  double recall = 0.0;
  double precision = 0.0;
  double dice = 0.0;
};

// Empty against empty counts as perfect agreement.
Overlap overlap_metrics(const Mask3& pred, const Mask3& truth);

// Squared Euclidean distance from every voxel to the nearest positive voxel
// of `mask` (infinity when the mask is empty).
std::vector<double> squared_distance_transform(const Mask3& mask);

// Average Hausdorff distance in voxels: mean of the two directed mean
// nearest-neighbour distances.
double ahd(const Mask3& pred, const Mask3& truth);

// Points at equal arc-length fractions of a polyline, endpoints included.
Polyline arc_length_samples(const Polyline& line, std::size_t count);

// Mean distance from 5 equal-arc-length samples of the fitted curve to the
// truth polyline, in mm.
double skeleton_error(const Polyline& fitted, const Polyline& truth, const Spacing3& spacing_mm);

// Mean distance between endpoints under the cheaper of the two pairings, mm.
double endpoint_error(const Polyline& fitted, const Polyline& truth, const Spacing3& spacing_mm);

struct MetricsReport {
  double recall = 0.0;
  double precision = 0.0;
  double dice = 0.0;
  std::optional<double> ahd_voxels;  // absent when either mask is empty
  std::optional<double> se_mm;       // absent without a catheter model
  std::optional<double> ee_mm;
};

MetricsReport evaluate(const Mask3& pred, const Mask3& truth, const CatheterModel* model);

struct ReportRow {
  std::string name;
  std::optional<MetricsReport> metrics;  // absent when the prediction is missing
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

// Column order: recall, precision, dice, ahd, se, ee.
inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{"Recall (%)", "Precision (%)", "Dice (%)",
                                             "AHD (voxel)", "SE (mm)", "EE (mm)"};
  return cols;
}

std::vector<Summary> aggregate(const std::vector<ReportRow>& rows);
nlohmann::json report_to_json(const std::vector<ReportRow>& rows);
std::string report_table(const std::vector<ReportRow>& rows);

}  // namespace cathseg
