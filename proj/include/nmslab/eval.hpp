#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <vector>

#include "nmslab/geometry.hpp"
#include "nmslab/types.hpp"

namespace nmslab {

struct MatchLabels {
  std::map<int, int> labels;      // detection id -> +1 / -1
  std::map<int, int> matched_gt;  // detection id -> ground-truth id, iff +1
};

// Benchmark matching: detections in descending score order, each matched to
// the unmatched same-class ground truth of maximal iou when that iou reaches
// the criterion. Score ties break toward the smaller detection id, iou ties
// toward the smaller ground-truth id.
inline MatchLabels match_detections(const std::vector<Detection>& detections,
                                    const std::vector<GroundTruthObject>& ground_truths,
                                    double iou_criterion) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = detections[a].score();
    const double sb = detections[b].score();
    if (sa != sb) return sa > sb;
    return detections[a].id < detections[b].id;
  });

  MatchLabels out;
  std::vector<bool> gt_taken(ground_truths.size(), false);
  for (std::size_t oi : order) {
    const Detection& d = detections[oi];
    double best_iou = 0.0;
    std::size_t best_gt = ground_truths.size();
    for (std::size_t g = 0; g < ground_truths.size(); ++g) {
      if (gt_taken[g]) continue;
      if (ground_truths[g].class_id != d.class_id) continue;
      const double v = iou(d.box, ground_truths[g].box);
      if (v < iou_criterion) continue;
      if (v > best_iou ||
          (v == best_iou && best_gt < ground_truths.size() &&
           ground_truths[g].id < ground_truths[best_gt].id)) {
        best_iou = v;
        best_gt = g;
      }
    }
    if (best_gt < ground_truths.size() && best_iou >= iou_criterion && best_iou > 0.0) {
      gt_taken[best_gt] = true;
      out.labels[d.id] = 1;
      out.matched_gt[d.id] = ground_truths[best_gt].id;
    } else {
      out.labels[d.id] = -1;
    }
  }
  return out;
}

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

// Area under the precision-recall curve with the monotone precision
// envelope over all points (COCO practice). Entries are (score, is_tp).
inline double average_precision(std::vector<std::pair<double, bool>> entries, std::size_t num_gt,
                                std::vector<PrPoint>* curve = nullptr) {
  if (num_gt == 0) return entries.empty() ? 1.0 : 0.0;
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> precision(entries.size());
  std::vector<double> recall(entries.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].second) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  // envelope: precision[i] = max precision at any recall >= recall[i]
  for (std::size_t i = entries.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  if (curve) {
    curve->clear();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      curve->push_back({recall[i], precision[i]});
    }
  }
  return ap;
}

struct OcclusionBin {
  double lo = 0.0;
  double hi = 1.0;  // half-open [lo, hi); the bin reaching 1.0 includes it
};

struct ApSummary {
  std::map<double, double> ap_at;  // iou criterion -> AP
  double ap_range = 0.0;           // mean of ap_at values
};

struct EvalReport {
  ApSummary overall;
  std::map<int, ApSummary> per_class;
  std::vector<std::pair<OcclusionBin, ApSummary>> per_occlusion_bin;
  // criterion -> class -> PR curve
  std::map<double, std::map<int, std::vector<PrPoint>>> pr_curves;
};

inline std::vector<double> default_criteria() {
  std::vector<double> c;
  for (int i = 0; i < 10; ++i) c.push_back(0.5 + 0.05 * i);
  return c;
}

inline std::vector<OcclusionBin> default_occlusion_bins() {
  return {{0.0, 0.5}, {0.5, 1.0}};
}

inline void validate_bins(const std::vector<OcclusionBin>& bins) {
  if (bins.empty()) throw std::invalid_argument("no occlusion bins");
  std::vector<OcclusionBin> sorted = bins;
  std::sort(sorted.begin(), sorted.end(),
            [](const OcclusionBin& a, const OcclusionBin& b) { return a.lo < b.lo; });
  if (sorted.front().lo != 0.0 || sorted.back().hi != 1.0) {
    throw std::invalid_argument("occlusion bins must cover [0,1]");
  }
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
    if (sorted[i].hi != sorted[i + 1].lo) {
      throw std::invalid_argument("occlusion bins must be disjoint and covering");
    }
    if (sorted[i].hi <= sorted[i].lo) throw std::invalid_argument("empty occlusion bin");
  }
}

inline bool bin_contains(const OcclusionBin& bin, double occlusion) {
  if (bin.hi >= 1.0) return occlusion >= bin.lo && occlusion <= 1.0;
  return occlusion >= bin.lo && occlusion < bin.hi;
}

namespace detail {

// One matched/unmatched detection entry pooled over the dataset.
struct EvalEntry {
  double score = 0.0;
  bool matched = false;
  double gt_occlusion = 0.0;  // valid iff matched
};

struct ClassCriterionPool {
  std::vector<EvalEntry> entries;
  std::size_t num_gt = 0;
  std::vector<std::size_t> gt_per_bin;
};

}  // namespace detail

// Full evaluation: AP per iou criterion, per class, per occlusion bin.
// Detections matched to a ground truth outside the bin under evaluation are
// ignored (neither TP nor FP); unmatched detections count as FP in every bin.
inline EvalReport evaluate(const Dataset& dataset,
                           const std::vector<double>& criteria = default_criteria(),
                           const std::vector<OcclusionBin>& bins = default_occlusion_bins()) {
  if (criteria.empty()) throw std::invalid_argument("no iou criteria");
  validate_bins(bins);
  bool any_gt = false;
  for (const ImageRecord& r : dataset.images) {
    if (!r.ground_truths.empty()) any_gt = true;
  }
  if (!any_gt) throw std::invalid_argument("dataset has no ground truths");

  // classes that own at least one ground truth
  std::set<int> classes;
  for (const ImageRecord& r : dataset.images) {
    for (const GroundTruthObject& g : r.ground_truths) classes.insert(g.class_id);
  }

  EvalReport report;
  std::map<int, std::map<double, detail::ClassCriterionPool>> pools;
  for (int cls : classes) {
    for (double crit : criteria) {
      detail::ClassCriterionPool& pool = pools[cls][crit];
      pool.gt_per_bin.assign(bins.size(), 0);
      for (const ImageRecord& r : dataset.images) {
        std::vector<Detection> dets;
        std::vector<GroundTruthObject> gts;
        for (const Detection& d : r.detections) {
          if (d.class_id == cls) dets.push_back(d);
        }
        for (const GroundTruthObject& g : r.ground_truths) {
          if (g.class_id == cls) gts.push_back(g);
        }
        pool.num_gt += gts.size();
        for (std::size_t b = 0; b < bins.size(); ++b) {
          for (const GroundTruthObject& g : gts) {
            if (bin_contains(bins[b], g.occlusion)) ++pool.gt_per_bin[b];
          }
        }
        const MatchLabels labels = match_detections(dets, gts, crit);
        for (const Detection& d : dets) {
          detail::EvalEntry e;
          e.score = d.score();
          auto it = labels.matched_gt.find(d.id);
          if (it != labels.matched_gt.end()) {
            e.matched = true;
            for (const GroundTruthObject& g : gts) {
              if (g.id == it->second) e.gt_occlusion = g.occlusion;
            }
          }
          pool.entries.push_back(e);
        }
      }
    }
  }

  auto summarize = [&](auto&& entry_filter, auto&& gt_count) {
    std::map<int, ApSummary> per_class;
    for (int cls : classes) {
      ApSummary s;
      for (double crit : criteria) {
        const detail::ClassCriterionPool& pool = pools[cls][crit];
        std::vector<std::pair<double, bool>> kept;
        for (const detail::EvalEntry& e : pool.entries) {
          int verdict = entry_filter(e);  // 1 tp, 0 fp, -1 ignore
          if (verdict >= 0) kept.emplace_back(e.score, verdict == 1);
        }
        s.ap_at[crit] = average_precision(std::move(kept), gt_count(pool));
      }
      double sum = 0.0;
      for (const auto& [crit, ap] : s.ap_at) sum += ap;
      s.ap_range = sum / static_cast<double>(s.ap_at.size());
      per_class[cls] = s;
    }
    return per_class;
  };

  auto mean_summary = [&](const std::map<int, ApSummary>& per_class) {
    ApSummary s;
    for (double crit : criteria) {
      double sum = 0.0;
      for (const auto& [cls, summary] : per_class) sum += summary.ap_at.at(crit);
      s.ap_at[crit] = sum / static_cast<double>(per_class.size());
    }
    double sum = 0.0;
    for (const auto& [crit, ap] : s.ap_at) sum += ap;
    s.ap_range = sum / static_cast<double>(s.ap_at.size());
    return s;
  };

  report.per_class = summarize([](const detail::EvalEntry& e) { return e.matched ? 1 : 0; },
                               [](const detail::ClassCriterionPool& p) { return p.num_gt; });
  report.overall = mean_summary(report.per_class);

  for (std::size_t b = 0; b < bins.size(); ++b) {
    const OcclusionBin& bin = bins[b];
    auto per_class = summarize(
        [&](const detail::EvalEntry& e) {
          if (!e.matched) return 0;
          return bin_contains(bin, e.gt_occlusion) ? 1 : -1;
        },
        [&](const detail::ClassCriterionPool& p) { return p.gt_per_bin[b]; });
    report.per_occlusion_bin.emplace_back(bin, mean_summary(per_class));
  }

  for (double crit : criteria) {
    for (int cls : classes) {
      const detail::ClassCriterionPool& pool = pools[cls][crit];
      std::vector<std::pair<double, bool>> kept;
      for (const detail::EvalEntry& e : pool.entries) kept.emplace_back(e.score, e.matched);
      std::vector<PrPoint> curve;
      average_precision(std::move(kept), pool.num_gt, &curve);
      report.pr_curves[crit][cls] = std::move(curve);
    }
  }
  return report;
}

}  // namespace nmslab
