#include "cathseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace cathseg {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_same_dims(const Mask3& a, const Mask3& b) {
  if (a.dims() != b.dims()) throw MetricsError("mask dims differ");
}

// Lower envelope of parabolas (q - v)^2 + f(v) over the finite entries.
void distance_1d(const double* f, double* d, std::size_t n, std::vector<std::size_t>& v, std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  std::ptrdiff_t k = -1;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const auto dq = static_cast<double>(q);
    double s = 0.0;
    while (k >= 0) {
      const auto dv = static_cast<double>(v[k]);
      s = ((f[q] + dq * dq) - (f[v[k]] + dv * dv)) / (2.0 * dq - 2.0 * dv);
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
    } else {
      ++k;
      v[k] = q;
      z[k] = s;
    }
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d, d + n, kInf);
    return;
  }
  std::ptrdiff_t j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const auto dq = static_cast<double>(q);
    while (z[j + 1] < dq) ++j;
    const double off = dq - static_cast<double>(v[j]);
    d[q] = off * off + f[v[j]];
  }
}

double directed_mean(const Mask3& from, const std::vector<double>& to_sq) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (!from[i]) continue;
    sum += std::sqrt(to_sq[i]);
    ++n;
  }
  return sum / static_cast<double>(n);
}

Polyline scaled(const Polyline& line, const Spacing3& s) {
  Polyline out(line.size());
  for (std::size_t i = 0; i < line.size(); ++i)
    for (int k = 0; k < 3; ++k) out[i][k] = line[i][k] * s[k];
  return out;
}

double distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

void check_polylines(const Polyline& fitted, const Polyline& truth) {
  if (fitted.empty() || truth.empty()) throw MetricsError("empty polyline");
}

std::string format_summary(const Summary& s, double scale) {
  if (s.count == 0) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f±%.1f", s.mean * scale, s.std * scale);
  return buf;
}

std::string format_value(const std::optional<double>& v, double scale) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v * scale);
  return buf;
}

std::vector<std::optional<double>> columns_of(const MetricsReport& m) {
  return {m.recall, m.precision, m.dice, m.ahd_voxels, m.se_mm, m.ee_mm};
}

const double kScales[6] = {100.0, 100.0, 100.0, 1.0, 1.0, 1.0};

}  // namespace

Overlap overlap_metrics(const Mask3& pred, const Mask3& truth) {
  check_same_dims(pred, truth);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i], t = truth[i];
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp + fp + fn == 0) return {1.0, 1.0, 1.0};
  Overlap o;
  if (tp + fn) o.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tp + fp) o.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  o.dice = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  return o;
}

std::vector<double> squared_distance_transform(const Mask3& mask) {
  const auto [nx, ny, nz] = mask.dims();
  std::vector<double> g(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) g[i] = mask[i] ? 0.0 : kInf;

  const std::size_t longest = std::max({nx, ny, nz});
  std::vector<double> line(longest), out(longest);
  std::vector<std::size_t> v;
  std::vector<double> z;
  auto pass = [&](std::size_t n, std::size_t stride, auto starts) {
    for (std::size_t base : starts) {
      for (std::size_t q = 0; q < n; ++q) line[q] = g[base + q * stride];
      distance_1d(line.data(), out.data(), n, v, z);
      for (std::size_t q = 0; q < n; ++q) g[base + q * stride] = out[q];
    }
  };
  std::vector<std::size_t> starts;
  for (std::size_t zz = 0; zz < nz; ++zz)
    for (std::size_t y = 0; y < ny; ++y) starts.push_back(nx * (y + ny * zz));
  pass(nx, 1, starts);
  starts.clear();
  for (std::size_t zz = 0; zz < nz; ++zz)
    for (std::size_t x = 0; x < nx; ++x) starts.push_back(x + nx * ny * zz);
  pass(ny, nx, starts);
  starts.clear();
  for (std::size_t y = 0; y < ny; ++y)
    for (std::size_t x = 0; x < nx; ++x) starts.push_back(x + nx * y);
  pass(nz, nx * ny, starts);
  return g;
}

double ahd(const Mask3& pred, const Mask3& truth) {
  check_same_dims(pred, truth);
  if (pred.count() == 0 || truth.count() == 0) throw MetricsError("AHD is undefined for an empty mask");
  const double a = directed_mean(pred, squared_distance_transform(truth));
  const double b = directed_mean(truth, squared_distance_transform(pred));
  return 0.5 * (a + b);
}

Polyline arc_length_samples(const Polyline& line, std::size_t count) {
  if (line.empty()) throw MetricsError("empty polyline");
  if (count < 2) throw MetricsError("need at least two arc-length samples");
  std::vector<double> cum(line.size(), 0.0);
  for (std::size_t i = 1; i < line.size(); ++i) cum[i] = cum[i - 1] + distance(line[i - 1], line[i]);
  const double total = cum.back();
  Polyline out;
  out.reserve(count);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < count; ++k) {
    if (k == 0 || total == 0.0) {
      out.push_back(line.front());
      continue;
    }
    if (k == count - 1) {
      out.push_back(line.back());
      continue;
    }
    const double target = total * static_cast<double>(k) / static_cast<double>(count - 1);
    while (seg + 2 < line.size() && cum[seg + 1] < target) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double t = len > 0.0 ? std::clamp((target - cum[seg]) / len, 0.0, 1.0) : 0.0;
    Point3 p;
    for (int a = 0; a < 3; ++a) p[a] = line[seg][a] + t * (line[seg + 1][a] - line[seg][a]);
    out.push_back(p);
  }
  return out;
}

double skeleton_error(const Polyline& fitted, const Polyline& truth, const Spacing3& spacing_mm) {
  check_polylines(fitted, truth);
  const Polyline f = scaled(fitted, spacing_mm), t = scaled(truth, spacing_mm);
  double sum = 0.0;
  const auto samples = arc_length_samples(f, 5);
  for (const auto& p : samples) sum += point_polyline_distance(p, t);
  return sum / static_cast<double>(samples.size());
}

double endpoint_error(const Polyline& fitted, const Polyline& truth, const Spacing3& spacing_mm) {
  check_polylines(fitted, truth);
  const Polyline f = scaled(fitted, spacing_mm), t = scaled(truth, spacing_mm);
  const double same = distance(f.front(), t.front()) + distance(f.back(), t.back());
  const double swapped = distance(f.front(), t.back()) + distance(f.back(), t.front());
  return 0.5 * std::min(same, swapped);
}

MetricsReport evaluate(const Mask3& pred, const Mask3& truth, const CatheterModel* model) {
  MetricsReport r;
  const Overlap o = overlap_metrics(pred, truth);
  r.recall = o.recall;
  r.precision = o.precision;
  r.dice = o.dice;
  if (pred.count() && truth.count()) r.ahd_voxels = ahd(pred, truth);
  if (model && truth.count()) {
    const Polyline skeleton = annotation_skeleton(truth);
    r.se_mm = skeleton_error(model->polyline, skeleton, truth.spacing());
    r.ee_mm = endpoint_error(model->polyline, skeleton, truth.spacing());
  }
  return r;
}

std::vector<Summary> aggregate(const std::vector<ReportRow>& rows) {
  std::vector<Summary> out(6);
  for (int c = 0; c < 6; ++c) {
    std::vector<double> vals;
    for (const auto& row : rows) {
      if (!row.metrics) continue;
      if (const auto v = columns_of(*row.metrics)[c]) vals.push_back(*v);
    }
    Summary& s = out[c];
    s.count = vals.size();
    if (vals.empty()) continue;
    for (double v : vals) s.mean += v;
    s.mean /= static_cast<double>(vals.size());
    if (vals.size() > 1) {
      double ss = 0.0;
      for (double v : vals) ss += (v - s.mean) * (v - s.mean);
      s.std = std::sqrt(ss / static_cast<double>(vals.size() - 1));
    }
  }
  return out;
}

json report_to_json(const std::vector<ReportRow>& rows) {
  static const char* keys[6] = {"recall", "precision", "dice", "ahd_voxels", "se_mm", "ee_mm"};
  json j;
  j["columns"] = report_columns();
  j["volumes"] = json::array();
  for (const auto& row : rows) {
    json r;
    r["name"] = row.name;
    r["present"] = row.metrics.has_value();
    if (row.metrics) {
      const auto cols = columns_of(*row.metrics);
      for (int c = 0; c < 6; ++c) r[keys[c]] = cols[c] ? json(*cols[c]) : json(nullptr);
    }
    j["volumes"].push_back(r);
  }
  const auto summary = aggregate(rows);
  json agg;
  for (int c = 0; c < 6; ++c)
    agg[keys[c]] = {{"mean", summary[c].mean}, {"std", summary[c].std}, {"count", summary[c].count}};
  j["aggregate"] = agg;
  return j;
}

std::string report_table(const std::vector<ReportRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Volume"};
  for (const auto& c : report_columns()) header.push_back(c);
  cells.push_back(header);
  for (const auto& row : rows) {
    std::vector<std::string> line{row.name};
    if (!row.metrics) {
      line.insert(line.end(), 6, "absent");
    } else {
      const auto cols = columns_of(*row.metrics);
      for (int c = 0; c < 6; ++c) line.push_back(format_value(cols[c], kScales[c]));
    }
    cells.push_back(line);
  }
  const auto summary = aggregate(rows);
  std::vector<std::string> last{"mean±std"};
  for (int c = 0; c < 6; ++c) last.push_back(format_summary(summary[c], kScales[c]));
  cells.push_back(last);

  // Width in code points, so "±" counts once.
  auto width = [](const std::string& s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char ch) { return (ch & 0xC0) != 0x80; }));
  };
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], width(line[c]));
  std::ostringstream os;
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c) os << "  ";
      os << line[c];
      if (c + 1 < line.size()) os << std::string(widths[c] - width(line[c]), ' ');
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace cathseg
