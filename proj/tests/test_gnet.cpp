#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "nmslab/gnet.hpp"
#include "test_util.hpp"

using namespace nmslab;

namespace {

GnetConfig tiny_config() {
  GnetConfig cfg;
  cfg.num_blocks = 2;
  cfg.feature_dim = 8;
  cfg.reduced_dim = 4;
  cfg.pair_feature_dim = 4;
  return cfg;
}

std::vector<Detection> random_detections(std::mt19937_64& rng, int n, int num_classes = 1) {
  std::uniform_real_distribution<double> score(0.05, 0.95);
  std::uniform_int_distribution<int> cls(0, num_classes - 1);
  std::vector<Detection> dets;
  for (int i = 0; i < n; ++i) {
    dets.push_back(testutil::make_det(i, testutil::random_box(rng, 40, 4, 25), score(rng),
                                      cls(rng), num_classes));
  }
  return dets;
}

}  // namespace

TEST(PairIndexTest, DisjointBoxesOnlySelfPairs) {
  const std::vector<Detection> dets = {testutil::make_det(0, BBox{0, 0, 10, 10}, 0.9),
                                       testutil::make_det(1, BBox{100, 100, 110, 110}, 0.8)};
  const PairIndex idx = build_pair_index(dets, 0.2);
  EXPECT_EQ(idx.num_pairs(), 2u);
  EXPECT_EQ(idx.first, idx.second);
}

TEST(PairIndexTest, IdenticalBoxesGiveFourPairs) {
  const std::vector<Detection> dets = {testutil::make_det(0, BBox{0, 0, 10, 10}, 0.9),
                                       testutil::make_det(1, BBox{0, 0, 10, 10}, 0.8)};
  const PairIndex idx = build_pair_index(dets, 0.2);
  EXPECT_EQ(idx.num_pairs(), 4u);
}

TEST(PairIndexTest, MatchesBruteForceEnumeration) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto dets = random_detections(rng, 10);
    const PairIndex idx = build_pair_index(dets, 0.2);
    std::size_t expected = 0;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      for (std::size_t j = 0; j < dets.size(); ++j) {
        if (i == j || iou(dets[i].box, dets[j].box) > 0.2) ++expected;
      }
    }
    EXPECT_EQ(idx.num_pairs(), expected);
    // symmetric membership
    for (std::size_t k = 0; k < idx.num_pairs(); ++k) {
      const std::size_t i = idx.first[k];
      const std::size_t j = idx.second[k];
      bool reverse_found = false;
      for (std::size_t m = 0; m < idx.num_pairs(); ++m) {
        if (idx.first[m] == j && idx.second[m] == i) reverse_found = true;
      }
      EXPECT_TRUE(reverse_found);
    }
    // grouped contiguously, self-pair present for every detection
    for (std::size_t k = 1; k < idx.num_pairs(); ++k) {
      EXPECT_GE(idx.first[k], idx.first[k - 1]);
    }
  }
}

TEST(GnetForward, SingleDetectionProducesFiniteScore) {
  const GnetModel model = init_gnet(tiny_config(), 1);
  const std::vector<Detection> dets = {testutil::make_det(0, BBox{0, 0, 10, 20}, 0.7)};
  ad::Graph graph;
  const ad::TensorPtr out = gnet_forward(model, graph, dets);
  ASSERT_EQ(out->rows(), 1u);
  ASSERT_EQ(out->cols(), 1u);
  EXPECT_TRUE(std::isfinite(out->values[0]));
}

TEST(GnetForward, EmptyInputGivesEmptyOutput) {
  const GnetModel model = init_gnet(tiny_config(), 1);
  ad::Graph graph;
  const ad::TensorPtr out = gnet_forward(model, graph, {});
  EXPECT_EQ(out->rows(), 0u);
}

TEST(GnetForward, PermutationEquivariance) {
  std::mt19937_64 rng(22);
  const GnetModel model = init_gnet(tiny_config(), 2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto dets = random_detections(rng, 8);
    ad::Graph g1;
    const ad::TensorPtr base = gnet_forward(model, g1, dets);

    std::vector<std::size_t> perm(dets.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Detection> permuted;
    for (std::size_t p : perm) permuted.push_back(dets[p]);
    ad::Graph g2;
    const ad::TensorPtr out = gnet_forward(model, g2, permuted);

    for (std::size_t i = 0; i < dets.size(); ++i) {
      // bit-exact, not approximate
      EXPECT_EQ(out->values[i], base->values[perm[i]]);
    }
  }
}

TEST(GnetForward, LocalityFarDetectionChangesNothing) {
  std::mt19937_64 rng(23);
  const GnetModel model = init_gnet(tiny_config(), 3);
  auto dets = random_detections(rng, 6);
  ad::Graph g1;
  const ad::TensorPtr base = gnet_forward(model, g1, dets);
  dets.push_back(testutil::make_det(6, BBox{1000, 1000, 1010, 1020}, 0.5));
  ad::Graph g2;
  const ad::TensorPtr out = gnet_forward(model, g2, dets);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(out->values[i], base->values[i]);
  }
}

TEST(GnetForward, NoNansOnRandomInputs) {
  std::mt19937_64 rng(24);
  const GnetModel model = init_gnet(tiny_config(), 4);
  std::uniform_int_distribution<int> n_dist(1, 12);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto dets = random_detections(rng, n_dist(rng));
    ad::Graph graph;
    const ad::TensorPtr out = gnet_forward(model, graph, dets);
    for (double v : out->values) {
      ASSERT_TRUE(std::isfinite(v));
    }
  }
}

TEST(LabelWeights, CalibratedToGamma) {
  // statistical: over many random label sets, mean positive mass over mean
  // total mass approaches gamma
  std::mt19937_64 rng(25);
  std::bernoulli_distribution pos(0.2);
  std::uniform_int_distribution<int> n_dist(4, 40);
  const double gamma = 0.37;
  double pos_mass = 0.0;
  double total_mass = 0.0;
  for (int trial = 0; trial < 20000; ++trial) {
    const int n = n_dist(rng);
    std::vector<int> labels;
    std::vector<int> classes(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) labels.push_back(pos(rng) ? 1 : -1);
    // realistic label sets mix both classes (a matched detection plus
    // duplicates); sets of one polarity would carry only that side's mass
    labels[0] = 1;
    labels[1] = -1;
    const std::vector<double> w = label_weights(labels, classes, 1, gamma);
    for (std::size_t i = 0; i < w.size(); ++i) {
      total_mass += w[i];
      if (labels[i] > 0) pos_mass += w[i];
    }
  }
  EXPECT_NEAR(pos_mass / total_mass, gamma, 0.02 * gamma);
}

TEST(LabelWeights, MultiClassEqualizesClassMass) {
  std::vector<int> labels = {1, 1, 1, -1, -1, 1};
  std::vector<int> classes = {0, 0, 1, 0, 1, 2};
  const std::vector<double> w = label_weights(labels, classes, 3, 0.5);
  // positives: class 0 has 2, class 1 has 1, class 2 has 1; each class gets
  // gamma/3 total
  EXPECT_NEAR(w[0] + w[1], 0.5 / 3.0, 1e-12);
  EXPECT_NEAR(w[2], 0.5 / 3.0, 1e-12);
  EXPECT_NEAR(w[5], 0.5 / 3.0, 1e-12);
  EXPECT_NEAR(w[3] + w[4], 0.5, 1e-12);
}

TEST(TrainingLoss, ForcedMatchGivesWeightedLogTwoAtZeroScore) {
  // zero all parameters: head logits are exactly 0, the lone detection is
  // matched, loss = w_pos * log 2
  GnetModel model = init_gnet(tiny_config(), 5);
  for (auto& [name, t] : model.params) std::fill(t->values.begin(), t->values.end(), 0.0);
  ImageRecord record;
  record.image_id = "one";
  record.detections.push_back(testutil::make_det(0, BBox{0, 0, 10, 10}, 0.9));
  record.ground_truths.push_back(testutil::make_gt(0, BBox{0, 0, 10, 10}));
  ad::Graph graph;
  const TrainingLossResult r = gnet_training_loss(model, graph, record);
  ASSERT_EQ(r.labels, std::vector<int>({1}));
  EXPECT_NEAR(r.loss->values[0], r.weights[0] * std::log(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(r.weights[0], model.config.gamma);
}

TEST(TrainingLoss, ZeroGroundTruthsAllNegativeStillDefined) {
  const GnetModel model = init_gnet(tiny_config(), 6);
  ImageRecord record;
  record.image_id = "nogt";
  record.detections.push_back(testutil::make_det(0, BBox{0, 0, 10, 10}, 0.9));
  record.detections.push_back(testutil::make_det(1, BBox{1, 0, 11, 10}, 0.8));
  ad::Graph graph;
  const TrainingLossResult r = gnet_training_loss(model, graph, record);
  EXPECT_EQ(r.labels, std::vector<int>({-1, -1}));
  EXPECT_TRUE(std::isfinite(r.loss->values[0]));
}

TEST(TrainingLoss, LabelsMatchIndependentMatcherOnRescoredDetections) {
  std::mt19937_64 rng(26);
  const GnetModel model = init_gnet(tiny_config(), 7);
  for (int trial = 0; trial < 50; ++trial) {
    ImageRecord record;
    record.image_id = std::to_string(trial);
    record.detections = random_detections(rng, 6);
    for (int i = 0; i < 3; ++i) {
      record.ground_truths.push_back(testutil::make_gt(i, testutil::random_box(rng, 40, 4, 25)));
    }
    ad::Graph graph;
    const TrainingLossResult r = gnet_training_loss(model, graph, record);

    // oracle: rescore by hand with a fresh forward pass, then brute match
    ad::Graph g2;
    const ad::TensorPtr logits = gnet_forward(model, g2, record.detections);
    std::vector<Detection> rescored = record.detections;
    for (std::size_t i = 0; i < rescored.size(); ++i) {
      rescored[i].scores[0] = logits->values[i];
    }
    const auto want = testutil::oracle_match(rescored, record.ground_truths, 0.5);
    for (std::size_t i = 0; i < record.detections.size(); ++i) {
      EXPECT_EQ(r.labels[i], want.at(record.detections[i].id));
    }
  }
}

TEST(TrainingLoss, EndToEndGradientCheckWithFrozenMatching) {
  std::mt19937_64 rng(27);
  GnetConfig cfg;
  cfg.num_blocks = 2;
  cfg.feature_dim = 4;
  cfg.reduced_dim = 2;
  cfg.pair_feature_dim = 2;
  for (int trial = 0; trial < 5; ++trial) {
    const GnetModel model = init_gnet(cfg, 100 + static_cast<std::uint64_t>(trial));
    // move every parameter (notably the zero-initialized biases) to a generic
    // point; at exactly zero the relu pre-activations sit on the kink and the
    // central difference is not the derivative
    std::uniform_real_distribution<double> jitter(-0.3, 0.3);
    for (const auto& [name, t] : model.params) {
      for (double& v : t->values) v += jitter(rng);
    }
    ImageRecord record;
    record.image_id = "grad";
    record.detections = random_detections(rng, 4);
    record.ground_truths.push_back(testutil::make_gt(0, testutil::random_box(rng, 40, 4, 25)));
    record.ground_truths.push_back(testutil::make_gt(1, testutil::random_box(rng, 40, 4, 25)));

    // freeze the matching at its current labels
    ad::Graph g0;
    const TrainingLossResult frozen = gnet_training_loss(model, g0, record);
    std::vector<std::size_t> class_cols(record.detections.size(), 0);

    auto build = [&](ad::Graph& g) {
      const ad::TensorPtr logits = gnet_forward(model, g, record.detections);
      const ad::TensorPtr s = g.select_per_row(logits, class_cols);
      return g.weighted_logistic_loss(s, frozen.labels, frozen.weights);
    };

    for (const auto& [name, t] : model.params) t->zero_grad();
    ad::Graph graph;
    const ad::TensorPtr loss = build(graph);
    graph.backward(loss);

    const double step = 1e-5;
    std::uniform_int_distribution<std::size_t> pick;
    for (const auto& [name, t] : model.params) {
      // probe a few entries per parameter to keep runtime sane
      for (int probe = 0; probe < 3 && probe < static_cast<int>(t->size()); ++probe) {
        const std::size_t i =
            std::uniform_int_distribution<std::size_t>(0, t->size() - 1)(rng);
        const double saved = t->values[i];
        t->values[i] = saved + step;
        ad::Graph gp;
        const double fp = build(gp)->values[0];
        t->values[i] = saved - step;
        ad::Graph gm;
        const double fm = build(gm)->values[0];
        t->values[i] = saved;
        const double numeric = (fp - fm) / (2.0 * step);
        const double analytic = t->grad[i];
        // dead paths (unselected max-pool rows, inactive relus) have a true
        // zero gradient; there the relative error is finite-difference noise
        if (std::abs(numeric) < 1e-7 && std::abs(analytic) < 1e-7) continue;
        const double rel = std::abs(numeric - analytic) / (std::abs(analytic) + 1e-8);
        EXPECT_LT(rel, 1e-4) << name << "[" << i << "]";
      }
    }
  }
}

TEST(Rescore, CardinalityPreservedAndScoresAreSigmoids) {
  std::mt19937_64 rng(28);
  const GnetModel model = init_gnet(tiny_config(), 8);
  Dataset ds;
  ds.num_classes = 1;
  for (int i = 0; i < 5; ++i) {
    ImageRecord r;
    r.image_id = std::to_string(i);
    r.detections = random_detections(rng, 7);
    ds.images.push_back(r);
  }
  const Dataset out = gnet_rescore(model, ds);
  ASSERT_EQ(out.images.size(), ds.images.size());
  for (std::size_t i = 0; i < out.images.size(); ++i) {
    ASSERT_EQ(out.images[i].detections.size(), ds.images[i].detections.size());
    for (std::size_t d = 0; d < out.images[i].detections.size(); ++d) {
      const Detection& nd = out.images[i].detections[d];
      const Detection& od = ds.images[i].detections[d];
      EXPECT_GT(nd.score(), 0.0);
      EXPECT_LT(nd.score(), 1.0);
      // boxes and classes untouched
      EXPECT_EQ(nd.box.x_min, od.box.x_min);
      EXPECT_EQ(nd.class_id, od.class_id);
    }
  }
}

TEST(Rescore, ClassCountMismatchRejected) {
  const GnetModel model = init_gnet(tiny_config(), 9);
  Dataset ds;
  ds.num_classes = 3;
  EXPECT_THROW(gnet_rescore(model, ds), std::invalid_argument);
}

TEST(Checkpoint, SaveLoadRoundTrip) {
  const GnetModel model = init_gnet(tiny_config(), 10);
  const std::string path = "test_gnet_roundtrip.ckpt";
  save_gnet(model, path);
  const GnetModel loaded = load_gnet(path);
  ASSERT_EQ(loaded.params.size(), model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    EXPECT_EQ(loaded.params[i].first, model.params[i].first);
    EXPECT_EQ(loaded.params[i].second->values, model.params[i].second->values);
  }
  EXPECT_EQ(loaded.config.num_blocks, model.config.num_blocks);
  std::remove(path.c_str());
}

TEST(GnetConfigTest, InvalidConfigsRejected) {
  GnetConfig cfg = tiny_config();
  cfg.reduced_dim = cfg.feature_dim + 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.neighbor_iou_threshold = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.pair_encoder_layers = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}
