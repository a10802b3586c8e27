#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "nmslab/geometry.hpp"
#include "nmslab/types.hpp"

namespace nmslab {

using ordered_json = nlohmann::ordered_json;

inline ordered_json box_to_json(const BBox& b) {
  return ordered_json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

inline BBox box_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw std::runtime_error("box must be a 4-element array");
  return BBox{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

// Canonical single-line JSON form of one record. Serializing the parse of a
// canonical line reproduces it byte-for-byte.
inline std::string record_to_jsonl(const ImageRecord& record) {
  ordered_json j;
  j["image_id"] = record.image_id;
  ordered_json dets = ordered_json::array();
  for (const Detection& d : record.detections) {
    ordered_json dj;
    dj["id"] = d.id;
    dj["box"] = box_to_json(d.box);
    dj["scores"] = d.scores;
    dj["class_id"] = d.class_id;
    dets.push_back(std::move(dj));
  }
  j["detections"] = std::move(dets);
  ordered_json gts = ordered_json::array();
  for (const GroundTruthObject& g : record.ground_truths) {
    ordered_json gj;
    gj["id"] = g.id;
    gj["box"] = box_to_json(g.box);
    gj["class_id"] = g.class_id;
    gts.push_back(std::move(gj));
  }
  j["ground_truths"] = std::move(gts);
  return j.dump();
}

// Occlusion fractions are recomputed from geometry, never read from file.
inline ImageRecord record_from_json(const nlohmann::json& j) {
  ImageRecord record;
  record.image_id = j.at("image_id").get<std::string>();
  if (j.contains("detections")) {
    for (const auto& dj : j.at("detections")) {
      Detection d;
      d.id = dj.at("id").get<int>();
      d.box = box_from_json(dj.at("box"));
      d.scores = dj.at("scores").get<std::vector<double>>();
      d.class_id = dj.at("class_id").get<int>();
      record.detections.push_back(std::move(d));
    }
  }
  if (j.contains("ground_truths")) {
    for (const auto& gj : j.at("ground_truths")) {
      GroundTruthObject g;
      g.id = gj.at("id").get<int>();
      g.box = box_from_json(gj.at("box"));
      g.class_id = gj.at("class_id").get<int>();
      record.ground_truths.push_back(std::move(g));
    }
  }
  recompute_occlusions(record);
  return record;
}

inline ImageRecord record_from_jsonl(const std::string& line) {
  return record_from_json(nlohmann::json::parse(line));
}

inline void write_dataset_jsonl(const Dataset& dataset, std::ostream& out) {
  for (const ImageRecord& r : dataset.images) {
    out << record_to_jsonl(r) << '\n';
  }
}

inline void write_dataset_jsonl(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_dataset_jsonl(dataset, out);
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Dataset read_dataset_jsonl(std::istream& in, int num_classes_hint = 0) {
  Dataset dataset;
  std::string line;
  int max_class = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ImageRecord record = record_from_jsonl(line);
    for (const Detection& d : record.detections) {
      max_class = std::max(max_class, static_cast<int>(d.scores.size()) - 1);
      max_class = std::max(max_class, d.class_id);
    }
    for (const GroundTruthObject& g : record.ground_truths) {
      max_class = std::max(max_class, g.class_id);
    }
    dataset.images.push_back(std::move(record));
  }
  dataset.num_classes = std::max(num_classes_hint, max_class + 1);
  if (dataset.num_classes < 1) dataset.num_classes = 1;
  return dataset;
}

inline Dataset read_dataset_jsonl(const std::string& path, int num_classes_hint = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return read_dataset_jsonl(in, num_classes_hint);
}

}  // namespace nmslab
