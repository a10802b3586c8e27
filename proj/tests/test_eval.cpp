#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nmslab/eval.hpp"
#include "test_util.hpp"

using namespace nmslab;

TEST(Matching, PerfectDetectionMatches) {
  const std::vector<Detection> dets = {testutil::make_det(0, BBox{0, 0, 10, 10}, 0.9)};
  const std::vector<GroundTruthObject> gts = {testutil::make_gt(0, BBox{0, 0, 10, 10})};
  const MatchLabels m = match_detections(dets, gts, 0.5);
  EXPECT_EQ(m.labels.at(0), 1);
  EXPECT_EQ(m.matched_gt.at(0), 0);
}

TEST(Matching, DoubleDetectionPenalized) {
  const std::vector<GroundTruthObject> gts = {testutil::make_gt(0, BBox{0, 0, 10, 10})};
  const std::vector<Detection> dets = {
      testutil::make_det(0, BBox{0, 0, 10, 10.5}, 0.9),  // iou ~0.95
      testutil::make_det(1, BBox{0, 0, 10, 12}, 0.8),    // iou ~0.83
  };
  const MatchLabels m = match_detections(dets, gts, 0.5);
  EXPECT_EQ(m.labels.at(0), 1);
  EXPECT_EQ(m.labels.at(1), -1);  // surplus detection is a false positive
}

TEST(Matching, OnlySameClassEligible) {
  const std::vector<GroundTruthObject> gts = {testutil::make_gt(0, BBox{0, 0, 10, 10}, 1)};
  const std::vector<Detection> dets = {testutil::make_det(0, BBox{0, 0, 10, 10}, 0.9, 0, 2)};
  const MatchLabels m = match_detections(dets, gts, 0.5);
  EXPECT_EQ(m.labels.at(0), -1);
}

TEST(Matching, AgainstBruteForceOracle) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  std::uniform_int_distribution<int> nd(0, 6);
  std::uniform_int_distribution<int> ng(0, 3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Detection> dets;
    std::vector<GroundTruthObject> gts;
    const int n = nd(rng);
    const int g = ng(rng);
    for (int i = 0; i < n; ++i) {
      dets.push_back(testutil::make_det(i, testutil::random_box(rng, 15, 2, 12), score(rng)));
    }
    for (int i = 0; i < g; ++i) {
      gts.push_back(testutil::make_gt(i, testutil::random_box(rng, 15, 2, 12)));
    }
    const MatchLabels got = match_detections(dets, gts, 0.5);
    const auto want = testutil::oracle_match(dets, gts, 0.5);
    for (const Detection& d : dets) {
      EXPECT_EQ(got.labels.at(d.id), want.at(d.id)) << "trial " << trial;
    }
  }
}

TEST(Matching, InjectivityInvariant) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> dets;
    std::vector<GroundTruthObject> gts;
    for (int i = 0; i < 8; ++i) {
      dets.push_back(testutil::make_det(i, testutil::random_box(rng, 15, 2, 12), score(rng)));
    }
    for (int i = 0; i < 4; ++i) {
      gts.push_back(testutil::make_gt(i, testutil::random_box(rng, 15, 2, 12)));
    }
    const MatchLabels m = match_detections(dets, gts, 0.3);
    std::set<int> used;
    for (const auto& [det, gt] : m.matched_gt) {
      EXPECT_TRUE(used.insert(gt).second) << "gt matched twice";
    }
    EXPECT_LE(m.matched_gt.size(), std::min(dets.size(), gts.size()));
  }
}

TEST(Matching, StableUnderMonotoneScoreTransform) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> score(0.1, 0.9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Detection> dets;
    std::vector<GroundTruthObject> gts;
    for (int i = 0; i < 6; ++i) {
      dets.push_back(testutil::make_det(i, testutil::random_box(rng, 15, 2, 12), score(rng)));
    }
    for (int i = 0; i < 3; ++i) {
      gts.push_back(testutil::make_gt(i, testutil::random_box(rng, 15, 2, 12)));
    }
    const MatchLabels before = match_detections(dets, gts, 0.5);
    for (Detection& d : dets) d.scores[0] = std::exp(3.0 * d.scores[0]) + 1.0;
    const MatchLabels after = match_detections(dets, gts, 0.5);
    EXPECT_EQ(before.labels, after.labels);
    EXPECT_EQ(before.matched_gt, after.matched_gt);
  }
}

TEST(AveragePrecision, PerfectDetector) {
  std::vector<std::pair<double, bool>> entries = {{0.9, true}, {0.8, true}, {0.7, true}};
  EXPECT_DOUBLE_EQ(average_precision(entries, 3), 1.0);
}

TEST(AveragePrecision, FpAboveTpHandComputed) {
  // single GT, FP scored above TP: envelope precision at recall 1 is 1/2
  std::vector<std::pair<double, bool>> entries = {{0.9, false}, {0.8, true}};
  EXPECT_DOUBLE_EQ(average_precision(entries, 1), 0.5);
}

TEST(AveragePrecision, EdgeConventions) {
  EXPECT_DOUBLE_EQ(average_precision({}, 5), 0.0);   // zero recall
  EXPECT_DOUBLE_EQ(average_precision({}, 0), 1.0);   // nothing to find, nothing claimed
  EXPECT_DOUBLE_EQ(average_precision({{0.5, false}}, 0), 0.0);
}

TEST(AveragePrecision, AgainstOracleOnRandomEntrySets) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  std::uniform_int_distribution<int> n_dist(0, 20);
  std::bernoulli_distribution tp(0.4);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::pair<double, bool>> entries;
    const int n = n_dist(rng);
    std::size_t tps = 0;
    for (int i = 0; i < n; ++i) {
      const bool t = tp(rng);
      if (t) ++tps;
      entries.emplace_back(score(rng), t);
    }
    const std::size_t num_gt = tps + static_cast<std::size_t>(n_dist(rng)) % 5;
    if (num_gt == 0) continue;
    EXPECT_NEAR(average_precision(entries, num_gt), testutil::oracle_ap(entries, num_gt), 1e-12);
  }
}

TEST(AveragePrecision, MonotoneInTpPromotion) {
  // raising a TP's score above all FPs never decreases AP
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  std::bernoulli_distribution tp(0.5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<double, bool>> entries;
    int tp_idx = -1;
    for (int i = 0; i < 10; ++i) {
      const bool t = tp(rng);
      entries.emplace_back(score(rng), t);
      if (t) tp_idx = i;
    }
    if (tp_idx < 0) continue;
    const double before = average_precision(entries, 6);
    entries[static_cast<std::size_t>(tp_idx)].first = 2.0;
    const double after = average_precision(entries, 6);
    EXPECT_GE(after, before - 1e-12);
  }
}

namespace {

Dataset toy_dataset() {
  // 3-image toy set evaluated by hand below
  Dataset ds;
  ds.num_classes = 1;
  {
    ImageRecord r;
    r.image_id = "a";
    r.ground_truths.push_back(testutil::make_gt(0, BBox{0, 0, 10, 10}));
    r.detections.push_back(testutil::make_det(0, BBox{0, 0, 10, 10}, 0.9));  // TP
    ds.images.push_back(r);
  }
  {
    ImageRecord r;
    r.image_id = "b";
    r.ground_truths.push_back(testutil::make_gt(0, BBox{0, 0, 10, 10}));
    r.detections.push_back(testutil::make_det(0, BBox{50, 50, 60, 60}, 0.8));  // FP
    r.detections.push_back(testutil::make_det(1, BBox{0, 0, 10, 10}, 0.7));    // TP
    ds.images.push_back(r);
  }
  {
    ImageRecord r;
    r.image_id = "c";
    r.ground_truths.push_back(testutil::make_gt(0, BBox{0, 0, 10, 10}));
    // no detections: one missed object
    ds.images.push_back(r);
  }
  return ds;
}

}  // namespace

TEST(Evaluate, ThreeImageToyDatasetByHand) {
  const EvalReport report = evaluate(toy_dataset(), {0.5});
  // pooled entries by descending score: TP(0.9), FP(0.8), TP(0.7); 3 GT
  // precision: 1, 1/2, 2/3; envelope: 1, 2/3, 2/3
  // AP = (1/3)*1 + (1/3)*(2/3) = 5/9
  EXPECT_NEAR(report.overall.ap_at.at(0.5), 5.0 / 9.0, 1e-12);
}

TEST(Evaluate, PerfectUniformScoresGiveApOne) {
  Dataset ds;
  ds.num_classes = 1;
  std::mt19937_64 rng(12);
  for (int i = 0; i < 5; ++i) {
    ImageRecord r;
    r.image_id = std::to_string(i);
    const BBox b = testutil::random_box(rng, 100, 20, 40);
    r.ground_truths.push_back(testutil::make_gt(0, b));
    r.detections.push_back(testutil::make_det(0, b, 0.5));  // all scores tie
    ds.images.push_back(r);
  }
  const EvalReport report = evaluate(ds);
  for (const auto& [crit, ap] : report.overall.ap_at) {
    EXPECT_DOUBLE_EQ(ap, 1.0);
  }
  EXPECT_DOUBLE_EQ(report.overall.ap_range, 1.0);
}

TEST(Evaluate, ApRangeIsMeanOfCriteria) {
  std::mt19937_64 rng(13);
  Dataset ds;
  ds.num_classes = 1;
  std::uniform_real_distribution<double> score(0.0, 1.0);
  for (int i = 0; i < 10; ++i) {
    ImageRecord r;
    r.image_id = std::to_string(i);
    for (int g = 0; g < 3; ++g) {
      r.ground_truths.push_back(testutil::make_gt(g, testutil::random_box(rng, 60, 10, 30)));
    }
    for (int d = 0; d < 6; ++d) {
      r.detections.push_back(
          testutil::make_det(d, testutil::random_box(rng, 60, 10, 30), score(rng)));
    }
    ds.images.push_back(r);
  }
  const EvalReport report = evaluate(ds);
  ASSERT_EQ(report.overall.ap_at.size(), 10u);
  double mean = 0.0;
  for (const auto& [crit, ap] : report.overall.ap_at) mean += ap;
  mean /= 10.0;
  EXPECT_NEAR(report.overall.ap_range, mean, 1e-12);
}

TEST(Evaluate, OcclusionBinsIgnoreCrossBinMatches) {
  Dataset ds;
  ds.num_classes = 1;
  ImageRecord r;
  r.image_id = "bins";
  // gt 0 unoccluded; gt 1 fully covered by gt 2 (occlusion 1.0)
  r.ground_truths.push_back(testutil::make_gt(0, BBox{100, 100, 110, 110}));
  r.ground_truths.push_back(testutil::make_gt(1, BBox{0, 0, 10, 10}));
  r.ground_truths.push_back(testutil::make_gt(2, BBox{0, 0, 12, 12}));
  for (GroundTruthObject& g : r.ground_truths) {
    g.occlusion = occlusion_fraction(g, r.ground_truths);
  }
  ASSERT_DOUBLE_EQ(r.ground_truths[1].occlusion, 1.0);
  // one perfect detection per gt
  r.detections.push_back(testutil::make_det(0, BBox{100, 100, 110, 110}, 0.9));
  r.detections.push_back(testutil::make_det(1, BBox{0, 0, 10, 10}, 0.8));
  r.detections.push_back(testutil::make_det(2, BBox{0, 0, 12, 12}, 0.7));
  ds.images.push_back(r);

  const EvalReport report = evaluate(ds, {0.5});
  ASSERT_EQ(report.per_occlusion_bin.size(), 2u);
  for (const auto& [bin, summary] : report.per_occlusion_bin) {
    EXPECT_DOUBLE_EQ(summary.ap_at.at(0.5), 1.0);  // cross-bin matches are ignored, not FPs
  }
}

TEST(Evaluate, BadBinsRejected) {
  EXPECT_THROW(evaluate(toy_dataset(), {0.5}, {{0.0, 0.4}, {0.5, 1.0}}), std::invalid_argument);
  EXPECT_THROW(evaluate(toy_dataset(), {0.5}, {{0.0, 0.6}, {0.5, 1.0}}), std::invalid_argument);
  EXPECT_THROW(evaluate(toy_dataset(), {0.5}, {{0.0, 0.5}}), std::invalid_argument);
}

TEST(Evaluate, MultiClassMapUnweighted) {
  Dataset ds;
  ds.num_classes = 2;
  ImageRecord r;
  r.image_id = "mc";
  // class 0: 3 objects all found; class 1: 1 object missed
  for (int i = 0; i < 3; ++i) {
    const double off = i * 50.0;
    r.ground_truths.push_back(testutil::make_gt(i, BBox{off, 0, off + 10, 10}, 0));
    r.detections.push_back(testutil::make_det(i, BBox{off, 0, off + 10, 10}, 0.9, 0, 2));
  }
  r.ground_truths.push_back(testutil::make_gt(3, BBox{0, 100, 10, 110}, 1));
  ds.images.push_back(r);
  const EvalReport report = evaluate(ds, {0.5});
  EXPECT_DOUBLE_EQ(report.per_class.at(0).ap_at.at(0.5), 1.0);
  EXPECT_DOUBLE_EQ(report.per_class.at(1).ap_at.at(0.5), 0.0);
  EXPECT_DOUBLE_EQ(report.overall.ap_at.at(0.5), 0.5);  // classes weighted equally
}

TEST(Evaluate, NoGroundTruthsRejected) {
  Dataset ds;
  ds.images.emplace_back();
  EXPECT_THROW(evaluate(ds), std::invalid_argument);
}
