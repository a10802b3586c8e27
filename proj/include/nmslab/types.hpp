#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace nmslab {

// Axis-aligned box in continuous pixel coordinates, corner format.
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  bool valid() const {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_max > x_min && y_max > y_min;
  }
};

struct Detection {
  int id = 0;
  BBox box;
  std::vector<double> scores;  // length C, dense even for C=1
  int class_id = 0;

  double score() const { return scores[static_cast<std::size_t>(class_id)]; }
};

struct GroundTruthObject {
  int id = 0;
  BBox box;
  int class_id = 0;
  double occlusion = 0.0;  // recomputed on load, never trusted from file
};

// All detections and ground truths of one image; the minibatch unit.
struct ImageRecord {
  std::string image_id;
  std::vector<Detection> detections;
  std::vector<GroundTruthObject> ground_truths;
};

struct Dataset {
  std::vector<ImageRecord> images;
  int num_classes = 1;
};

inline std::vector<std::string> validate_record(const ImageRecord& record, int num_classes) {
  std::vector<std::string> violations;
  auto check_box = [&](const BBox& b, const std::string& what) {
    if (!std::isfinite(b.x_min) || !std::isfinite(b.y_min) || !std::isfinite(b.x_max) ||
        !std::isfinite(b.y_max)) {
      violations.push_back(what + ": non-finite box coordinate");
    } else if (b.x_max <= b.x_min || b.y_max <= b.y_min) {
      violations.push_back(what + ": degenerate box");
    }
  };

  std::vector<int> seen_det_ids;
  for (const Detection& d : record.detections) {
    const std::string what = "detection " + std::to_string(d.id);
    check_box(d.box, what);
    if (d.scores.empty() || static_cast<int>(d.scores.size()) != num_classes) {
      violations.push_back(what + ": scores length != num_classes");
    }
    for (double s : d.scores) {
      if (!std::isfinite(s)) {
        violations.push_back(what + ": non-finite score");
        break;
      }
    }
    if (d.class_id < 0 || d.class_id >= num_classes) {
      violations.push_back(what + ": class out of range");
    } else if (num_classes > 1 && static_cast<int>(d.scores.size()) == num_classes) {
      // one-hot mode: only the class_id entry may be nonzero
      for (int c = 0; c < num_classes; ++c) {
        if (c != d.class_id && d.scores[static_cast<std::size_t>(c)] != 0.0) {
          violations.push_back(what + ": non-zero score outside class_id (one-hot violated)");
          break;
        }
      }
    }
    seen_det_ids.push_back(d.id);
  }
  for (std::size_t i = 0; i < seen_det_ids.size(); ++i) {
    for (std::size_t j = i + 1; j < seen_det_ids.size(); ++j) {
      if (seen_det_ids[i] == seen_det_ids[j]) {
        violations.push_back("duplicate detection id " + std::to_string(seen_det_ids[i]));
      }
    }
  }

  std::vector<int> seen_gt_ids;
  for (const GroundTruthObject& g : record.ground_truths) {
    const std::string what = "ground truth " + std::to_string(g.id);
    check_box(g.box, what);
    if (g.class_id < 0 || g.class_id >= num_classes) {
      violations.push_back(what + ": class out of range");
    }
    if (!(g.occlusion >= 0.0 && g.occlusion <= 1.0)) {
      violations.push_back(what + ": occlusion outside [0,1]");
    }
    seen_gt_ids.push_back(g.id);
  }
  for (std::size_t i = 0; i < seen_gt_ids.size(); ++i) {
    for (std::size_t j = i + 1; j < seen_gt_ids.size(); ++j) {
      if (seen_gt_ids[i] == seen_gt_ids[j]) {
        violations.push_back("duplicate ground truth id " + std::to_string(seen_gt_ids[i]));
      }
    }
  }
  return violations;
}

}  // namespace nmslab
