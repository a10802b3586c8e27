#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nmslab/geometry.hpp"
#include "nmslab/types.hpp"

namespace nmslab {

struct SceneConfig {
  double width = 640.0;
  double height = 480.0;
  int min_objects = 3;
  int max_objects = 10;
  double size_median = 80.0;   // log-normal object height
  double size_sigma = 0.3;
  double aspect_median = 0.5;  // w/h
  double aspect_jitter = 0.15;
  double crowding = 0.0;       // fraction of objects attached as occluders
  double occlusion_lo = 0.4;   // target pairwise occlusion of an attached object
  double occlusion_hi = 0.8;
  int num_classes = 1;

  void validate() const {
    if (width <= 0.0 || height <= 0.0) throw std::invalid_argument("scene: empty extent");
    if (min_objects < 0 || max_objects < min_objects) {
      throw std::invalid_argument("scene: bad object range");
    }
    if (size_median <= 0.0 || size_sigma < 0.0) throw std::invalid_argument("scene: bad size");
    if (crowding < 0.0 || crowding > 1.0) throw std::invalid_argument("scene: crowding outside [0,1]");
    if (!(occlusion_lo >= 0.0 && occlusion_hi <= 1.0 && occlusion_lo < occlusion_hi)) {
      throw std::invalid_argument("scene: bad occlusion target range");
    }
    if (num_classes < 1) throw std::invalid_argument("scene: num_classes < 1");
  }
};

struct DetectorConfig {
  double detections_per_object = 4.0;  // Poisson mean
  double box_jitter = 0.12;            // relative stddev for center and log-size
  double score_noise = 0.1;            // additive noise on the iou quality
  double link_slope = 7.0;             // logistic link: sigma(slope * (q - offset))
  double link_offset = 0.55;
  double false_positives_per_image = 2.0;  // Poisson mean
  double fp_quality_cap = 0.45;            // fp quality drawn uniform in [0, cap]
  double fp_size_median = 80.0;            // same law as objects by default
  double fp_size_sigma = 0.3;
  double score_floor = 0.02;               // detections below this are dropped

  void validate() const {
    if (detections_per_object < 0.0 || false_positives_per_image < 0.0) {
      throw std::invalid_argument("detector: Poisson means must be >= 0");
    }
    if (box_jitter < 0.0 || score_noise < 0.0) {
      throw std::invalid_argument("detector: noise stddevs must be >= 0");
    }
  }
};

namespace detail {

inline BBox box_from_center(double cx, double cy, double w, double h) {
  return BBox{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

// Sample an object box fully inside the image extent.
inline BBox sample_box(const SceneConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double h = cfg.size_median * std::exp(cfg.size_sigma * gauss(rng));
    const double w = h * cfg.aspect_median * std::exp(cfg.aspect_jitter * gauss(rng));
    if (w >= cfg.width || h >= cfg.height) continue;
    const double cx = 0.5 * w + uni(rng) * (cfg.width - w);
    const double cy = 0.5 * h + uni(rng) * (cfg.height - h);
    return box_from_center(cx, cy, w, h);
  }
  throw std::runtime_error("scene: cannot fit an object into the extent");
}

}  // namespace detail

// Ground-truth boxes inside the extent. A crowding fraction of the objects
// is attached to a previously placed object; their pairwise occlusion
// (overlap over the attached object's area) is rejection-sampled into the
// configured target range.
inline std::vector<GroundTruthObject> generate_scene(const SceneConfig& cfg,
                                                     std::mt19937_64& rng) {
  cfg.validate();
  std::uniform_int_distribution<int> count_dist(cfg.min_objects, cfg.max_objects);
  const int n = count_dist(rng);
  int num_attached = static_cast<int>(std::lround(cfg.crowding * n));
  if (num_attached >= n) num_attached = n - 1;  // need at least one anchor
  if (n == 0) return {};

  std::uniform_int_distribution<int> class_dist(0, cfg.num_classes - 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  std::vector<GroundTruthObject> objects;
  const int num_free = n - num_attached;
  for (int i = 0; i < num_free; ++i) {
    GroundTruthObject g;
    g.id = static_cast<int>(objects.size());
    g.class_id = class_dist(rng);
    // free objects stay essentially disjoint; all heavy overlap comes from
    // the attached occluders below
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      const BBox box = detail::sample_box(cfg, rng);
      bool clear = true;
      for (const GroundTruthObject& other : objects) {
        const double inter = intersection_area(box, other.box);
        if (inter / box.area() >= 0.04 || inter / other.box.area() >= 0.04) {
          clear = false;
          break;
        }
      }
      if (!clear) continue;
      g.box = box;
      placed = true;
    }
    if (!placed) throw std::runtime_error("infeasible free-object layout");
    objects.push_back(g);
  }
  for (int i = 0; i < num_attached; ++i) {
    std::uniform_int_distribution<std::size_t> anchor_dist(0, objects.size() - 1);
    const GroundTruthObject anchor = objects[anchor_dist(rng)];
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      const double h = anchor.box.height() * std::exp(0.5 * cfg.size_sigma * gauss(rng));
      const double w = h * cfg.aspect_median * std::exp(cfg.aspect_jitter * gauss(rng));
      const double cx = anchor.box.center_x() + (uni(rng) - 0.5) * anchor.box.width() * 1.5;
      const double cy = anchor.box.center_y() + (uni(rng) - 0.5) * anchor.box.height() * 1.5;
      const BBox box = detail::box_from_center(cx, cy, w, h);
      if (box.x_min < 0.0 || box.y_min < 0.0 || box.x_max > cfg.width || box.y_max > cfg.height) {
        continue;
      }
      const double occ = intersection_area(box, anchor.box) / box.area();
      if (occ < cfg.occlusion_lo || occ > cfg.occlusion_hi) continue;
      GroundTruthObject g;
      g.id = static_cast<int>(objects.size());
      g.box = box;
      g.class_id = anchor.class_id;  // occluders look like the thing they occlude
      objects.push_back(g);
      placed = true;
    }
    if (!placed) throw std::runtime_error("infeasible occlusion target");
  }

  // occlusion fractions from the full final layout
  for (GroundTruthObject& g : objects) {
    g.occlusion = occlusion_fraction(g, objects);
  }
  return objects;
}

inline double detector_link(double quality, const DetectorConfig& cfg) {
  return 1.0 / (1.0 + std::exp(-cfg.link_slope * (quality - cfg.link_offset)));
}

// Redundant, score-noised detections: Poisson-many jittered copies per
// object plus uniformly placed false positives with low-biased quality.
inline std::vector<Detection> simulate_detector(const std::vector<GroundTruthObject>& gts,
                                                const DetectorConfig& cfg, double image_width,
                                                double image_height, int num_classes,
                                                std::mt19937_64& rng) {
  cfg.validate();
  std::poisson_distribution<int> per_object(cfg.detections_per_object);
  std::poisson_distribution<int> fp_count(cfg.false_positives_per_image);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::uniform_int_distribution<int> class_dist(0, num_classes - 1);

  std::vector<Detection> detections;
  auto emit = [&](const BBox& box, double quality, int class_id) {
    const double score = detector_link(quality + cfg.score_noise * gauss(rng), cfg);
    if (score < cfg.score_floor) return;
    Detection d;
    d.id = static_cast<int>(detections.size());
    d.box = box;
    d.class_id = class_id;
    d.scores.assign(static_cast<std::size_t>(num_classes), 0.0);
    d.scores[static_cast<std::size_t>(class_id)] = score;
    detections.push_back(std::move(d));
  };

  for (const GroundTruthObject& g : gts) {
    const int k = per_object(rng);
    for (int i = 0; i < k; ++i) {
      const double w = g.box.width() * std::exp(cfg.box_jitter * gauss(rng));
      const double h = g.box.height() * std::exp(cfg.box_jitter * gauss(rng));
      const double cx = g.box.center_x() + cfg.box_jitter * g.box.width() * gauss(rng);
      const double cy = g.box.center_y() + cfg.box_jitter * g.box.height() * gauss(rng);
      const BBox box = detail::box_from_center(cx, cy, w, h);
      if (!box.valid()) continue;
      emit(box, iou(box, g.box), g.class_id);
    }
  }

  const int fps = fp_count(rng);
  for (int i = 0; i < fps; ++i) {
    const double h = cfg.fp_size_median * std::exp(cfg.fp_size_sigma * gauss(rng));
    const double w = h * 0.5 * std::exp(0.2 * gauss(rng));
    if (w >= image_width || h >= image_height) continue;
    const double cx = 0.5 * w + uni(rng) * (image_width - w);
    const double cy = 0.5 * h + uni(rng) * (image_height - h);
    emit(detail::box_from_center(cx, cy, w, h), uni(rng) * cfg.fp_quality_cap, class_dist(rng));
  }

  std::shuffle(detections.begin(), detections.end(), rng);
  return detections;
}

struct SynthPreset {
  std::string name;
  SceneConfig scene;
  DetectorConfig detector;
};

inline SynthPreset synth_preset(const std::string& name) {
  SynthPreset p;
  p.name = name;
  if (name == "sparse") {
    p.scene.min_objects = 2;
    p.scene.max_objects = 6;
    p.scene.crowding = 0.0;
  } else if (name == "crowded") {
    p.scene.min_objects = 4;
    p.scene.max_objects = 10;
    p.scene.crowding = 0.6;
    p.scene.occlusion_lo = 0.45;
    p.scene.occlusion_hi = 0.8;
    p.detector.detections_per_object = 4.0;
    p.detector.false_positives_per_image = 3.0;
  } else if (name == "multiclass-8") {
    p.scene.min_objects = 4;
    p.scene.max_objects = 12;
    p.scene.crowding = 0.5;
    p.scene.occlusion_lo = 0.45;
    p.scene.occlusion_hi = 0.8;
    p.scene.num_classes = 8;
    p.detector.detections_per_object = 4.0;
    p.detector.false_positives_per_image = 3.0;
  } else {
    throw std::invalid_argument("unknown preset: " + name);
  }
  p.detector.fp_size_median = p.scene.size_median;
  p.detector.fp_size_sigma = p.scene.size_sigma;
  return p;
}

// Per-image RNG streams derived from the dataset seed (splitmix64 mixing),
// so generation is deterministic and partitionable.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline ImageRecord generate_record(const SynthPreset& preset, std::uint64_t seed,
                                   std::uint64_t index) {
  std::mt19937_64 rng(mix_seed(seed, index));
  ImageRecord record;
  record.image_id = preset.name + "-" + std::to_string(index);
  record.ground_truths = generate_scene(preset.scene, rng);
  record.detections =
      simulate_detector(record.ground_truths, preset.detector, preset.scene.width,
                        preset.scene.height, preset.scene.num_classes, rng);
  return record;
}

inline Dataset generate_dataset(const SynthPreset& preset, std::size_t num_images,
                                std::uint64_t seed) {
  Dataset dataset;
  dataset.num_classes = preset.scene.num_classes;
  dataset.images.reserve(num_images);
  for (std::size_t i = 0; i < num_images; ++i) {
    dataset.images.push_back(generate_record(preset, seed, i));
  }
  return dataset;
}

}  // namespace nmslab
