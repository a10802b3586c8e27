#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "nmslab/geometry.hpp"
#include "nmslab/types.hpp"

namespace nmslab {

struct NmsResult {
  std::vector<int> kept;               // ids in acceptance order
  std::map<int, int> suppressed_by;    // suppressed id -> suppressing id
};

// GreedyNMS: accept the highest scoring detection, suppress all detections
// overlapping it with iou > theta, repeat. Ties on score break toward the
// smaller detection id so results are reproducible.
inline NmsResult greedy_nms(const std::vector<Detection>& detections, double theta,
                            bool class_aware = true) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = detections[a].score();
    const double sb = detections[b].score();
    if (sa != sb) return sa > sb;
    return detections[a].id < detections[b].id;
  });

  NmsResult result;
  std::vector<bool> processed(detections.size(), false);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (processed[i]) continue;
    processed[i] = true;
    result.kept.push_back(detections[i].id);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (processed[j]) continue;
      if (class_aware && detections[i].class_id != detections[j].class_id) continue;
      if (iou(detections[i].box, detections[j].box) > theta) {
        processed[j] = true;
        result.suppressed_by[detections[j].id] = detections[i].id;
      }
    }
  }
  return result;
}

// Keep only the GreedyNMS survivors; ground truths untouched.
inline ImageRecord prefilter(const ImageRecord& record, double theta = 0.8,
                             bool class_aware = true) {
  const NmsResult nms = greedy_nms(record.detections, theta, class_aware);
  ImageRecord out;
  out.image_id = record.image_id;
  out.ground_truths = record.ground_truths;
  for (const Detection& d : record.detections) {
    if (!nms.suppressed_by.count(d.id)) out.detections.push_back(d);
  }
  return out;
}

inline Dataset prefilter(const Dataset& dataset, double theta = 0.8, bool class_aware = true) {
  Dataset out;
  out.num_classes = dataset.num_classes;
  out.images.reserve(dataset.images.size());
  for (const ImageRecord& r : dataset.images) {
    out.images.push_back(prefilter(r, theta, class_aware));
  }
  return out;
}

inline Dataset apply_nms(const Dataset& dataset, double theta, bool class_aware = true) {
  return prefilter(dataset, theta, class_aware);
}

struct SweepEntry {
  double theta = 0.0;
  double metric = 0.0;
};

struct SweepResult {
  std::vector<SweepEntry> table;
  double best_theta = 0.0;
  double best_metric = 0.0;
};

// Evaluates `metric` on the dataset after GreedyNMS at each theta.
// Ties on the metric go to the smallest theta.
template <typename MetricFn>
SweepResult threshold_sweep(const Dataset& dataset, const std::vector<double>& thetas,
                            MetricFn&& metric, bool class_aware = true) {
  if (thetas.empty()) throw std::invalid_argument("no thresholds");
  SweepResult result;
  for (double theta : thetas) {
    const Dataset filtered = apply_nms(dataset, theta, class_aware);
    result.table.push_back({theta, metric(filtered)});
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < result.table.size(); ++i) {
    if (result.table[i].metric > result.table[best].metric) best = i;
  }
  result.best_theta = result.table[best].theta;
  result.best_metric = result.table[best].metric;
  return result;
}

}  // namespace nmslab
