#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nmslab/adam.hpp"
#include "nmslab/eval.hpp"
#include "nmslab/geometry.hpp"
#include "nmslab/graph.hpp"
#include "nmslab/nms.hpp"
#include "nmslab/tensor.hpp"
#include "nmslab/types.hpp"

namespace nmslab {

struct GnetConfig {
  int num_blocks = 16;
  int feature_dim = 128;       // c
  int reduced_dim = 32;        // per-detection width entering the pair concat
  int pair_feature_dim = 32;   // g, learned pair feature width
  double neighbor_iou_threshold = 0.2;
  int pair_encoder_layers = 3;
  int block_pair_layers = 2;
  int post_pool_layers = 2;    // last one restores feature_dim
  int score_head_layers = 3;
  int num_classes = 1;
  double gamma = 0.5;          // expected positive-class conditional weight
  double match_iou = 0.5;      // training-time matching criterion

  int raw_pair_dim() const { return 7 + 2 * num_classes; }
  int pair_width() const { return 2 * reduced_dim + pair_feature_dim; }  // l

  void validate() const {
    if (num_blocks < 1 || feature_dim < 1 || reduced_dim < 1 || pair_feature_dim < 1) {
      throw std::invalid_argument("gnet config: dimensions must be positive");
    }
    if (reduced_dim > feature_dim) throw std::invalid_argument("gnet config: reduced_dim > c");
    if (pair_encoder_layers < 1 || block_pair_layers < 1 || post_pool_layers < 1 ||
        score_head_layers < 1) {
      throw std::invalid_argument("gnet config: layer counts must be >= 1");
    }
    if (neighbor_iou_threshold < 0.0 || neighbor_iou_threshold >= 1.0) {
      throw std::invalid_argument("gnet config: neighbor iou threshold outside [0,1)");
    }
    if (num_classes < 1) throw std::invalid_argument("gnet config: num_classes < 1");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gnet config: gamma outside (0,1)");
  }
};

inline void to_json(nlohmann::json& j, const GnetConfig& c) {
  j = nlohmann::json{{"num_blocks", c.num_blocks},
                     {"feature_dim", c.feature_dim},
                     {"reduced_dim", c.reduced_dim},
                     {"pair_feature_dim", c.pair_feature_dim},
                     {"neighbor_iou_threshold", c.neighbor_iou_threshold},
                     {"pair_encoder_layers", c.pair_encoder_layers},
                     {"block_pair_layers", c.block_pair_layers},
                     {"post_pool_layers", c.post_pool_layers},
                     {"score_head_layers", c.score_head_layers},
                     {"num_classes", c.num_classes},
                     {"gamma", c.gamma},
                     {"match_iou", c.match_iou}};
}

inline void from_json(const nlohmann::json& j, GnetConfig& c) {
  j.at("num_blocks").get_to(c.num_blocks);
  j.at("feature_dim").get_to(c.feature_dim);
  j.at("reduced_dim").get_to(c.reduced_dim);
  j.at("pair_feature_dim").get_to(c.pair_feature_dim);
  j.at("neighbor_iou_threshold").get_to(c.neighbor_iou_threshold);
  j.at("pair_encoder_layers").get_to(c.pair_encoder_layers);
  j.at("block_pair_layers").get_to(c.block_pair_layers);
  j.at("post_pool_layers").get_to(c.post_pool_layers);
  j.at("score_head_layers").get_to(c.score_head_layers);
  j.at("num_classes").get_to(c.num_classes);
  j.at("gamma").get_to(c.gamma);
  j.at("match_iou").get_to(c.match_iou);
}

// Ordered pairs (i, j) with iou > threshold or i = j, grouped contiguously
// by i. Row k of the pair batch describes pair (first[k], second[k]) and
// pools into segment first[k].
struct PairIndex {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  std::vector<std::size_t> segments;  // == first; named for the pooling role
  std::size_t num_detections = 0;
  std::size_t num_pairs() const { return first.size(); }
};

inline PairIndex build_pair_index(const std::vector<Detection>& detections,
                                  double iou_threshold) {
  PairIndex index;
  index.num_detections = detections.size();
  for (std::size_t i = 0; i < detections.size(); ++i) {
    index.first.push_back(i);
    index.second.push_back(i);
    for (std::size_t j = 0; j < detections.size(); ++j) {
      if (j == i) continue;
      if (iou(detections[i].box, detections[j].box) > iou_threshold) {
        index.first.push_back(i);
        index.second.push_back(j);
      }
    }
  }
  index.segments = index.first;
  return index;
}

struct GnetModel {
  GnetConfig config;
  std::vector<std::pair<std::string, ad::TensorPtr>> params;

  ad::TensorPtr param(const std::string& name) const {
    for (const auto& [n, t] : params) {
      if (n == name) return t;
    }
    throw std::out_of_range("no such parameter: " + name);
  }

  std::vector<ad::TensorPtr> param_tensors() const {
    std::vector<ad::TensorPtr> out;
    out.reserve(params.size());
    for (const auto& [n, t] : params) out.push_back(t);
    return out;
  }
};

namespace detail {

inline void add_fc(GnetModel& model, const std::string& prefix, std::size_t in, std::size_t out,
                   std::mt19937_64& rng) {
  ad::TensorPtr W = ad::make_param({in, out});
  // Xavier-uniform
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : W->values) v = dist(rng);
  ad::TensorPtr b = ad::make_param({out});
  model.params.emplace_back(prefix + ".W", W);
  model.params.emplace_back(prefix + ".b", b);
}

}  // namespace detail

inline GnetModel init_gnet(const GnetConfig& config, std::uint64_t seed) {
  config.validate();
  GnetModel model;
  model.config = config;
  std::mt19937_64 rng(seed);
  const std::size_t c = static_cast<std::size_t>(config.feature_dim);
  const std::size_t r = static_cast<std::size_t>(config.reduced_dim);
  const std::size_t g = static_cast<std::size_t>(config.pair_feature_dim);
  const std::size_t l = static_cast<std::size_t>(config.pair_width());
  const std::size_t raw = static_cast<std::size_t>(config.raw_pair_dim());

  for (int i = 0; i < config.pair_encoder_layers; ++i) {
    detail::add_fc(model, "pair_encoder." + std::to_string(i), i == 0 ? raw : g, g, rng);
  }
  for (int b = 0; b < config.num_blocks; ++b) {
    const std::string bp = "block." + std::to_string(b);
    detail::add_fc(model, bp + ".reduce", c, r, rng);
    for (int i = 0; i < config.block_pair_layers; ++i) {
      detail::add_fc(model, bp + ".pair." + std::to_string(i), l, l, rng);
    }
    for (int i = 0; i < config.post_pool_layers; ++i) {
      detail::add_fc(model, bp + ".post." + std::to_string(i), i == 0 ? l : c, c, rng);
    }
  }
  for (int i = 0; i < config.score_head_layers; ++i) {
    const bool last = i == config.score_head_layers - 1;
    detail::add_fc(model, "head." + std::to_string(i), c,
                   last ? static_cast<std::size_t>(config.num_classes) : c, rng);
  }
  return model;
}

// Forward pass over one image: n detections -> n x C score logits.
// Raw pair features are encoded once; every block reduces the detection
// representation, exchanges it across neighbor pairs, max-pools per
// detection, and adds the result back onto the block input.
inline ad::TensorPtr gnet_forward(const GnetModel& model, ad::Graph& graph,
                                  const std::vector<Detection>& detections,
                                  const PairIndex& index) {
  const GnetConfig& cfg = model.config;
  const std::size_t n = detections.size();
  if (n == 0) return ad::make_tensor({0, static_cast<std::size_t>(cfg.num_classes)});
  const std::size_t K = index.num_pairs();
  const std::size_t raw = static_cast<std::size_t>(cfg.raw_pair_dim());

  ad::TensorPtr raw_feats = ad::make_tensor({K, raw});
  for (std::size_t k = 0; k < K; ++k) {
    const std::vector<double> f = raw_pair_features(detections[index.first[k]],
                                                    detections[index.second[k]], cfg.num_classes);
    std::copy(f.begin(), f.end(), raw_feats->values.begin() + static_cast<long>(k * raw));
  }

  ad::TensorPtr encoded = raw_feats;
  for (int i = 0; i < cfg.pair_encoder_layers; ++i) {
    const std::string p = "pair_encoder." + std::to_string(i);
    encoded = graph.relu(graph.linear(encoded, model.param(p + ".W"), model.param(p + ".b")));
  }

  // first block input is all-zero
  ad::TensorPtr x = ad::make_tensor({n, static_cast<std::size_t>(cfg.feature_dim)});
  for (int b = 0; b < cfg.num_blocks; ++b) {
    const std::string bp = "block." + std::to_string(b);
    ad::TensorPtr rep =
        graph.relu(graph.linear(x, model.param(bp + ".reduce.W"), model.param(bp + ".reduce.b")));
    ad::TensorPtr rep_i = graph.gather_rows(rep, index.first);
    ad::TensorPtr rep_j = graph.gather_rows(rep, index.second);
    ad::TensorPtr pair = graph.concat_cols({rep_i, rep_j, encoded});
    for (int i = 0; i < cfg.block_pair_layers; ++i) {
      const std::string p = bp + ".pair." + std::to_string(i);
      pair = graph.relu(graph.linear(pair, model.param(p + ".W"), model.param(p + ".b")));
    }
    ad::TensorPtr pooled = graph.segmented_max_pool(pair, index.segments, n);
    ad::TensorPtr h = pooled;
    for (int i = 0; i < cfg.post_pool_layers; ++i) {
      const std::string p = bp + ".post." + std::to_string(i);
      h = graph.linear(h, model.param(p + ".W"), model.param(p + ".b"));
      if (i != cfg.post_pool_layers - 1) h = graph.relu(h);
    }
    x = graph.add(x, h);
  }

  ad::TensorPtr out = x;
  for (int i = 0; i < cfg.score_head_layers; ++i) {
    const std::string p = "head." + std::to_string(i);
    out = graph.linear(out, model.param(p + ".W"), model.param(p + ".b"));
    if (i != cfg.score_head_layers - 1) out = graph.relu(out);
  }
  return out;
}

inline ad::TensorPtr gnet_forward(const GnetModel& model, ad::Graph& graph,
                                  const std::vector<Detection>& detections) {
  const PairIndex index = build_pair_index(detections, model.config.neighbor_iou_threshold);
  return gnet_forward(model, graph, detections, index);
}

// Instance weights for matched (+1) / unmatched (-1) labels. Each label
// set carries total positive mass gamma split evenly over the classes that
// have positives, and total negative mass 1 - gamma.
inline std::vector<double> label_weights(const std::vector<int>& labels,
                                         const std::vector<int>& class_ids, int num_classes,
                                         double gamma) {
  std::vector<std::size_t> pos_per_class(static_cast<std::size_t>(num_classes), 0);
  std::size_t num_neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 0) {
      ++pos_per_class[static_cast<std::size_t>(class_ids[i])];
    } else {
      ++num_neg;
    }
  }
  std::size_t classes_with_pos = 0;
  for (std::size_t k : pos_per_class) {
    if (k > 0) ++classes_with_pos;
  }
  std::vector<double> w(labels.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 0) {
      const std::size_t k = pos_per_class[static_cast<std::size_t>(class_ids[i])];
      w[i] = gamma / (static_cast<double>(classes_with_pos) * static_cast<double>(k));
    } else if (num_neg > 0) {
      w[i] = (1.0 - gamma) / static_cast<double>(num_neg);
    }
  }
  return w;
}

struct TrainingLossResult {
  ad::TensorPtr loss;
  std::vector<int> labels;     // per detection, aligned with record order
  std::vector<double> weights;
};

// Forward, match with the NEW scores, weighted logistic loss. The matching
// is treated as fixed during backprop: gradients flow only through s_i.
inline TrainingLossResult gnet_training_loss(const GnetModel& model, ad::Graph& graph,
                                             const ImageRecord& record) {
  const GnetConfig& cfg = model.config;
  const std::vector<Detection>& dets = record.detections;
  ad::TensorPtr logits = gnet_forward(model, graph, dets);

  std::vector<std::size_t> class_cols(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    class_cols[i] = static_cast<std::size_t>(dets[i].class_id);
  }
  ad::TensorPtr s = graph.select_per_row(logits, class_cols);

  // rescored copies only drive the matching; sigmoid is monotone so the raw
  // logit gives the same ordering
  std::vector<Detection> rescored = dets;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    rescored[i].scores.assign(static_cast<std::size_t>(cfg.num_classes), 0.0);
    rescored[i].scores[class_cols[i]] = s->values[i];
  }
  const MatchLabels match = match_detections(rescored, record.ground_truths, cfg.match_iou);

  TrainingLossResult result;
  result.labels.resize(dets.size());
  std::vector<int> class_ids(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    result.labels[i] = match.labels.at(dets[i].id);
    class_ids[i] = dets[i].class_id;
  }
  result.weights = label_weights(result.labels, class_ids, cfg.num_classes, cfg.gamma);
  result.loss = graph.weighted_logistic_loss(s, result.labels, result.weights);
  return result;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Replace detection scores with the sigmoid of the head logits. Boxes and
// classes are untouched; no thresholding or suppression happens here.
inline Dataset gnet_rescore(const GnetModel& model, const Dataset& dataset) {
  if (model.config.num_classes != dataset.num_classes) {
    throw std::invalid_argument("model/dataset class count mismatch");
  }
  Dataset out = dataset;
  for (ImageRecord& record : out.images) {
    if (record.detections.empty()) continue;
    ad::Graph graph;
    ad::TensorPtr logits = gnet_forward(model, graph, record.detections);
    for (std::size_t i = 0; i < record.detections.size(); ++i) {
      Detection& d = record.detections[i];
      const double logit = logits->at(i, static_cast<std::size_t>(d.class_id));
      d.scores.assign(static_cast<std::size_t>(model.config.num_classes), 0.0);
      d.scores[static_cast<std::size_t>(d.class_id)] = sigmoid(logit);
    }
  }
  return out;
}

// --- checkpoint container ------------------------------------------------
// Layout: magic "GNETMDL1", u32 version, u64 config-JSON length, JSON bytes,
// u64 blob count, then per blob: u32 name length, name, u32 rank, u64 dims,
// raw little-endian doubles.

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw std::runtime_error("checkpoint: truncated");
  return v;
}
inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw std::runtime_error("checkpoint: truncated");
  return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'G', 'N', 'E', 'T', 'M', 'D', 'L', '1'};

inline void save_gnet(const GnetModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_u32(out, 1);
  const std::string config_json = nlohmann::json(model.config).dump();
  detail::write_u64(out, config_json.size());
  out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  detail::write_u64(out, model.params.size());
  for (const auto& [name, tensor] : model.params) {
    detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(out, static_cast<std::uint32_t>(tensor->shape.size()));
    for (std::size_t d : tensor->shape) detail::write_u64(out, d);
    out.write(reinterpret_cast<const char*>(tensor->values.data()),
              static_cast<std::streamsize>(tensor->values.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline GnetModel load_gnet(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const std::uint32_t version = detail::read_u32(in);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
  const std::uint64_t json_len = detail::read_u64(in);
  std::string config_json(json_len, '\0');
  in.read(config_json.data(), static_cast<std::streamsize>(json_len));
  GnetConfig config = nlohmann::json::parse(config_json).get<GnetConfig>();

  GnetModel model = init_gnet(config, 0);
  const std::uint64_t num_blobs = detail::read_u64(in);
  if (num_blobs != model.params.size()) throw std::runtime_error("checkpoint: blob count mismatch");
  for (std::uint64_t i = 0; i < num_blobs; ++i) {
    const std::uint32_t name_len = detail::read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t rank = detail::read_u32(in);
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = detail::read_u64(in);
    ad::TensorPtr tensor = model.param(name);
    if (tensor->shape != shape) throw std::runtime_error("checkpoint: shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(tensor->values.data()),
            static_cast<std::streamsize>(tensor->values.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated blob " + name);
  }
  return model;
}

}  // namespace nmslab
