#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "nmslab/types.hpp"

namespace nmslab {

inline double intersection_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

inline double iou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

// Handcrafted features of an ordered detection pair (d_i, d_j).
// Layout: [iou, dx_norm, dy_norm, dl2_norm, log_w_ratio, log_h_ratio,
//          log_aspect_ratio_diff, scores_i..., scores_j...], length 7 + 2C.
// Distances are center-to-center, normalized by (w_i + h_i) / 2 of the
// reference detection d_i.
inline std::vector<double> raw_pair_features(const Detection& di, const Detection& dj,
                                             int num_classes) {
  const BBox& a = di.box;
  const BBox& b = dj.box;
  const double norm = 0.5 * (a.width() + a.height());
  const double dx = (b.center_x() - a.center_x()) / norm;
  const double dy = (b.center_y() - a.center_y()) / norm;

  std::vector<double> f;
  f.reserve(7 + 2 * static_cast<std::size_t>(num_classes));
  f.push_back(iou(a, b));
  f.push_back(dx);
  f.push_back(dy);
  f.push_back(std::sqrt(dx * dx + dy * dy));
  f.push_back(std::log(a.width() / b.width()));
  f.push_back(std::log(a.height() / b.height()));
  const double aspect_a = a.width() / a.height();
  const double aspect_b = b.width() / b.height();
  f.push_back(std::log(aspect_a / aspect_b));
  f.insert(f.end(), di.scores.begin(), di.scores.end());
  f.insert(f.end(), dj.scores.begin(), dj.scores.end());
  return f;
}

// Exact area of the union of boxes, restricted to the clip window, by
// coordinate sweep over x with interval union over y.
inline double union_area_clipped(const std::vector<BBox>& boxes, const BBox& clip) {
  std::vector<double> xs;
  for (const BBox& b : boxes) {
    const double lo = std::max(b.x_min, clip.x_min);
    const double hi = std::min(b.x_max, clip.x_max);
    if (hi <= lo) continue;
    xs.push_back(lo);
    xs.push_back(hi);
  }
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());

  double total = 0.0;
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
    const double x0 = xs[k];
    const double x1 = xs[k + 1];
    const double xm = 0.5 * (x0 + x1);
    // union of y-intervals of boxes covering this x slab
    std::vector<std::pair<double, double>> ys;
    for (const BBox& b : boxes) {
      if (b.x_min <= xm && xm < b.x_max) {
        const double lo = std::max(b.y_min, clip.y_min);
        const double hi = std::min(b.y_max, clip.y_max);
        if (hi > lo) ys.emplace_back(lo, hi);
      }
    }
    if (ys.empty()) continue;
    std::sort(ys.begin(), ys.end());
    double covered = 0.0;
    double cur_lo = ys[0].first;
    double cur_hi = ys[0].second;
    for (std::size_t i = 1; i < ys.size(); ++i) {
      if (ys[i].first > cur_hi) {
        covered += cur_hi - cur_lo;
        cur_lo = ys[i].first;
        cur_hi = ys[i].second;
      } else {
        cur_hi = std::max(cur_hi, ys[i].second);
      }
    }
    covered += cur_hi - cur_lo;
    total += covered * (x1 - x0);
  }
  return total;
}

// Fraction of target's box area covered by the union of the other boxes.
inline double occlusion_fraction(const GroundTruthObject& target,
                                 const std::vector<GroundTruthObject>& others) {
  std::vector<BBox> boxes;
  boxes.reserve(others.size());
  for (const GroundTruthObject& o : others) {
    if (o.id == target.id) continue;
    boxes.push_back(o.box);
  }
  if (boxes.empty()) return 0.0;
  const double covered = union_area_clipped(boxes, target.box);
  return std::clamp(covered / target.box.area(), 0.0, 1.0);
}

// Refresh every ground truth's occlusion fraction from the record geometry.
inline void recompute_occlusions(ImageRecord& record) {
  for (GroundTruthObject& g : record.ground_truths) {
    g.occlusion = occlusion_fraction(g, record.ground_truths);
  }
}

}  // namespace nmslab
