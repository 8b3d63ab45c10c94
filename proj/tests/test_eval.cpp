#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "colseg/eval/methods.hpp"
#include "colseg/eval/runner.hpp"
#include "fixtures.hpp"

using namespace colseg;
using namespace colseg::eval;

namespace {

BinaryMask box(int h, int w, int x0, int y0, int x1, int y1) { return BinaryMask::filled(h, w, {x0, y0, x1, y1}); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(MatchMasks, SwappedPredictionsStillMatchPerfectly) {
  const auto a = box(16, 16, 0, 0, 5, 5), b = box(16, 16, 8, 8, 14, 14);
  const std::vector<BinaryMask> gt{a, b}, pred{b, a};
  const auto m = match_masks(pred, gt);
  EXPECT_EQ(m.gt_iou, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(m.gt_pred, (std::vector<int>{1, 0}));
}

TEST(MatchMasks, MissingPredictionScoresZero) {
  const auto a = box(16, 16, 0, 0, 5, 5), b = box(16, 16, 8, 8, 14, 14);
  const std::vector<BinaryMask> gt{a, b}, pred{b};
  const auto m = match_masks(pred, gt);
  EXPECT_EQ(m.gt_iou, (std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(m.gt_pred, (std::vector<int>{-1, 0}));
}

TEST(MatchMasks, ExtraPredictionsAddNoEntries) {
  const auto a = box(16, 16, 0, 0, 5, 5);
  const std::vector<BinaryMask> gt{a}, pred{box(16, 16, 9, 9, 12, 12), a, box(16, 16, 0, 0, 2, 2)};
  const auto m = match_masks(pred, gt);
  EXPECT_EQ(m.gt_iou, (std::vector<double>{1.0}));
  EXPECT_EQ(m.gt_pred, (std::vector<int>{1}));
  EXPECT_TRUE(match_masks(pred, {}).gt_iou.empty());
  EXPECT_EQ(match_masks({}, gt).gt_iou, (std::vector<double>{0.0}));
}

TEST(MatchMasks, ShapeMismatchThrows) {
  const std::vector<BinaryMask> gt{BinaryMask(8, 8)}, pred{BinaryMask(8, 9)};
  EXPECT_THROW(match_masks(pred, gt), ShapeMismatch);
}

TEST(MatchMasks, EqualsExhaustiveAssignment) {
  std::mt19937_64 rng(21);
  int contested = 0;
  for (int t = 0; t < 500; ++t) {
    const int h = 4 + rng() % 13, w = 4 + rng() % 13;
    const int np = rng() % 4, ng = 1 + rng() % 3;
    std::vector<BinaryMask> gt, pred;
    for (int k = 0; k < ng; ++k) gt.push_back(oracle::random_blob(h, w, rng));
    for (int k = 0; k < np; ++k)
      pred.push_back(rng() % 2 && k < ng ? oracle::jitter(gt[k], 1 + rng() % 6, rng) : oracle::random_blob(h, w, rng));
    const auto want = oracle::best_assignment(pred, gt);
    const auto got = match_masks(pred, gt);
    ASSERT_EQ(got.gt_iou.size(), gt.size());
    EXPECT_NEAR(std::accumulate(got.gt_iou.begin(), got.gt_iou.end(), 0.0), want.total, 1e-12) << "trial " << t;
    // Ties may be broken differently; only a unique optimum fixes every entry.
    if (want.optima == 1)
      for (int g = 0; g < ng; ++g) EXPECT_NEAR(got.gt_iou[g], want.gt_iou[g], 1e-12) << "trial " << t;
    contested += np >= 2 && ng >= 2;
  }
  EXPECT_GT(contested, 100);
}

TEST(MatchMasks, PermutationInvariant) {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 200; ++t) {
    std::vector<BinaryMask> gt, pred;
    for (int k = 0; k < 3; ++k) gt.push_back(oracle::random_blob(12, 12, rng));
    for (int k = 0; k < 3; ++k) pred.push_back(oracle::jitter(gt[k], 10, rng));
    const auto base = match_masks(pred, gt);
    const double total = std::accumulate(base.gt_iou.begin(), base.gt_iou.end(), 0.0);
    std::vector<int> perm{0, 1, 2};
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<BinaryMask> pp, gp;
    for (int k : perm) pp.push_back(pred[k]);
    const auto shuffled_pred = match_masks(pp, gt);
    EXPECT_NEAR(std::accumulate(shuffled_pred.gt_iou.begin(), shuffled_pred.gt_iou.end(), 0.0), total, 1e-12);
    for (int k : perm) gp.push_back(gt[k]);
    const auto shuffled_gt = match_masks(pred, gp);
    EXPECT_NEAR(std::accumulate(shuffled_gt.gt_iou.begin(), shuffled_gt.gt_iou.end(), 0.0), total, 1e-12);
  }
}

TEST(Hungarian, KnownAssignment) {
  // Row optimum is 1 + 2 + 3 = 6 via columns {1, 0, 2}.
  const std::vector<double> cost{4, 1, 3, 2, 0, 5, 3, 2, 2};
  EXPECT_EQ(hungarian_min(cost, 3), (std::vector<int>{1, 0, 2}));
  EXPECT_THROW(hungarian_min(cost, 2), ShapeMismatch);
}

TEST(Miou, Examples) {
  EXPECT_DOUBLE_EQ(compute_miou({{1.0, 1.0}, {1.0}}), 100.0);
  EXPECT_DOUBLE_EQ(compute_miou({{1.0}, {0.0}}), 50.0);
  EXPECT_DOUBLE_EQ(compute_miou({{1.0, 0.0}}), 50.0);
  EXPECT_THROW(compute_miou({}), InvalidArgument);
  EXPECT_THROW(compute_miou({{}, {}}), InvalidArgument);
}

TEST(Miou, PooledAndPerSampleDiffer) {
  // Pooled: (1 + 0 + 0.5) / 3; per sample first: (0.5 + 0.5) / 2.
  const std::vector<std::vector<double>> s{{1.0, 0.0}, {0.5}};
  EXPECT_NEAR(compute_miou(s), 50.0, 1e-12);
  EXPECT_NEAR(compute_miou({{1.0, 1.0}, {0.0}}), 100.0 * 2 / 3, 1e-12);
  EXPECT_NEAR(compute_miou({{1.0, 1.0}, {0.0}}, true), 50.0, 1e-12);
}

TEST(Auc, Examples) {
  EXPECT_DOUBLE_EQ(compute_auc({{1.0, 1.0, 1.0}}), 100.0);
  EXPECT_NEAR(compute_auc({{1.0}, {0.0}}), 100.0 * (1 + 20 * 0.5) / 21, 1e-12);
  EXPECT_NEAR(compute_auc({{1.0}, {0.0}}), 52.38, 0.01);
  EXPECT_NEAR(compute_auc({{0.0, 0.0}}), 100.0 / 21, 1e-12);
  EXPECT_NEAR(compute_auc({{0.0, 0.0}}), 4.76, 0.01);
  EXPECT_THROW(compute_auc({}), InvalidArgument);
  EXPECT_THROW(compute_auc({{1.5}}), InvalidArgument);
  EXPECT_THROW(compute_auc({{-0.1}}), InvalidArgument);
}

TEST(Auc, ClosedFormOnGridValues) {
  for (int k = 0; k <= 20; ++k) {
    const double v = k * 0.05;
    // floor(v / 0.05) evaluated on the integer k, so float rounding cannot shift it.
    EXPECT_NEAR(compute_auc({{v, v, v}}), 100.0 * (k + 1) / 21.0, 1e-9) << "v=" << v;
  }
}

TEST(Auc, MatchesDefinitionAndIsMonotone) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 300; ++t) {
    std::vector<double> v(1 + rng() % 12);
    for (auto& x : v) x = rng() % 4 == 0 ? std::round(u(rng) * 20) / 20 : u(rng);
    const double a = compute_auc({v});
    EXPECT_NEAR(a, oracle::auc(v), 1e-9);
    auto up = v;
    for (auto& x : up) x = std::min(1.0, x + 0.2 * u(rng));
    EXPECT_GE(compute_auc({up}), a - 1e-12);
  }
}

TEST(Centre, SideAndPlacement) {
  const auto m = baseline_centre(352, 352);
  EXPECT_EQ(m.area(), 111 * 111);
  const auto b = m.bounding_box().value();
  EXPECT_EQ(b.x_min, 120);
  EXPECT_EQ(b.y_min, 120);
  EXPECT_EQ(b.x_max - b.x_min, 111);
  EXPECT_EQ(b.y_max - b.y_min, 111);
  EXPECT_TRUE(baseline_centre(352, 352) == m);
}

TEST(Centre, AreaIsTenPercent) {
  for (auto [h, w] : std::vector<std::pair<int, int>>{{352, 352}, {480, 640}, {240, 427}, {720, 1280}}) {
    const double want = 0.1 * h * w;
    const double area = static_cast<double>(baseline_centre(h, w).area());
    EXPECT_LE(std::fabs(area - want) / want, 0.01) << h << "x" << w;
  }
  // Small images: an integer side off by at most 0.5 moves the area by at most sqrt(want) + 0.25.
  for (int n = 16; n <= 200; ++n) {
    const double want = 0.1 * n * n;
    EXPECT_LE(std::fabs(baseline_centre(n, n).area() - want), std::sqrt(want) + 0.25) << n;
  }
  // Thin images clamp the side to the short edge.
  EXPECT_EQ(baseline_centre(4, 400).area(), 16);
}

class StrataFixture : public ::testing::Test {
 protected:
  // 20 x 20 masks: areas 16 (4%), 120 (30%) and 1 (0.25%).
  void SetUp() override {
    const auto small = mask_to_rle(box(20, 20, 0, 0, 4, 4));
    const auto large = mask_to_rle(box(20, 20, 0, 0, 12, 10));
    const auto tiny = mask_to_rle(box(20, 20, 5, 5, 6, 6));
    add("s0", 0.5, {small}, {1.0});
    add("s1", 2.0, {large}, {0.5});
    add("s2", 2.0, {small, large}, {0.25, 0.0});
    add("s3", 4.0, {tiny}, {0.8});
  }
  void add(std::string id, double dur, std::vector<std::string> masks, std::vector<double> ious) {
    data::SampleRecord r;
    r.id = id;
    r.video_id = "v";
    r.clip_end = dur;
    r.split = "test";
    r.mask_height = r.mask_width = 20;
    r.gt_masks = masks;
    records.push_back(r);
    SampleResult s;
    s.id = id;
    s.ious = ious;
    s.n_gt = static_cast<int>(ious.size());
    result.per_sample.push_back(s);
  }
  std::vector<data::SampleRecord> records;
  EvalResult result;
};

TEST_F(StrataFixture, HandComputedBuckets) {
  const auto rep = stratified_report(result, records);
  auto expect = [&](const std::string& key, double miou, long count, std::vector<double> ious) {
    ASSERT_TRUE(rep.count(key)) << key;
    EXPECT_NEAR(rep.at(key).miou, miou, 1e-9) << key;
    EXPECT_EQ(rep.at(key).count, count) << key;
    EXPECT_NEAR(rep.at(key).auc, oracle::auc(ious), 1e-9) << key;
  };
  expect("duration:<1s", 100.0, 1, {1.0});
  expect("duration:1-3s", 25.0, 2, {0.5, 0.25, 0.0});
  expect("duration:3-5s", 80.0, 1, {0.8});
  expect("n_gt:1", 100.0 * 2.3 / 3, 3, {1.0, 0.5, 0.8});
  expect("n_gt:2", 12.5, 1, {0.25, 0.0});
  expect("mask_size:2-5%", 62.5, 2, {1.0, 0.25});
  expect("mask_size:>=20%", 25.0, 2, {0.5, 0.0});
  expect("mask_size:<0.5%", 80.0, 1, {0.8});
  EXPECT_EQ(rep.size(), 8u);
}

TEST_F(StrataFixture, CountsSumToTotals) {
  const auto rep = stratified_report(result, records);
  long dur = 0, ngt = 0, size = 0;
  for (const auto& [k, v] : rep) {
    if (k.rfind("duration:", 0) == 0) dur += v.count;
    if (k.rfind("n_gt:", 0) == 0) ngt += v.count;
    if (k.rfind("mask_size:", 0) == 0) size += v.count;
  }
  EXPECT_EQ(dur, 4);
  EXPECT_EQ(ngt, 4);
  EXPECT_EQ(size, 5);  // one entry per ground-truth mask
}

TEST_F(StrataFixture, SingleStratumEqualsGlobal) {
  result.per_sample.resize(2);
  records[0].clip_end = records[1].clip_end = 2.0;
  const auto lists = result.iou_lists();
  const auto rep = stratified_report(result, records);
  EXPECT_NEAR(rep.at("duration:1-3s").miou, compute_miou(lists), 1e-12);
  EXPECT_NEAR(rep.at("duration:1-3s").auc, compute_auc(lists), 1e-12);
}

TEST_F(StrataFixture, FailedSamplesAreSkippedAndUnknownIdsThrow) {
  result.per_sample[3].error = "boom";
  EXPECT_FALSE(stratified_report(result, records).count("duration:3-5s"));
  result.per_sample[0].id = "nope";
  EXPECT_THROW(stratified_report(result, records), InvalidArgument);
}

class SmallBoard : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data::SoundboardConfig c;
    c.image_size = 64;
    c.min_radius = 8;
    c.max_radius = 14;
    c.train_scenes = 1;
    c.test_scenes = 12;
    board_ = std::make_unique<data::Soundboard>(c, 31);
    set_ = std::make_unique<TestSet>(soundboard_test_set(*board_));
  }
  static void TearDownTestSuite() {
    set_.reset();
    board_.reset();
  }
  static std::unique_ptr<data::Soundboard> board_;
  static std::unique_ptr<TestSet> set_;
};
std::unique_ptr<data::Soundboard> SmallBoard::board_;
std::unique_ptr<TestSet> SmallBoard::set_;

TEST_F(SmallBoard, OraclePredictorScoresHundred) {
  // Empty ground truth cannot be matched perfectly; keep samples with visible objects.
  std::vector<EvalSample> samples;
  for (const auto& s : set_->samples)
    if (std::none_of(s.gt.begin(), s.gt.end(), [](const BinaryMask& m) { return m.is_empty(); })) samples.push_back(s);
  ASSERT_FALSE(samples.empty());
  const auto res = run_eval(samples, oracle_predictor());
  EXPECT_DOUBLE_EQ(res.miou, 100.0);
  EXPECT_DOUBLE_EQ(res.auc, 100.0);
}

TEST_F(SmallBoard, ResultsDoNotDependOnWorkers) {
  const auto dir = fixtures::temp_dir("eval-workers");
  const auto one = run_eval(set_->samples, centre_predictor(), 1);
  const auto three = run_eval(set_->samples, centre_predictor(), 3);
  EXPECT_EQ(one.miou, three.miou);
  EXPECT_EQ(one.auc, three.auc);
  write_per_sample_csv(dir / "a.csv", one);
  write_per_sample_csv(dir / "b.csv", three);
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  const auto csv = slurp(dir / "a.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "sample_id,n_gt,n_pred,iou_1,iou_2,provenance,error");
  EXPECT_EQ(summary_json(one, stratified_report(one, set_->records)).dump(),
            summary_json(three, stratified_report(three, set_->records)).dump());
}

TEST_F(SmallBoard, ThrowingPredictorMarksFailures) {
  int calls = 0;
  const Predictor flaky = [&](const EvalSample& s) {
    if (calls++ % 2) throw Error("adapter down");
    return oracle_predictor()(s);
  };
  const auto res = run_eval(set_->samples, flaky, 1);
  EXPECT_EQ(res.failures(), set_->samples.size() / 2);
  EXPECT_EQ(res.per_sample[1].error, "adapter down");
  EXPECT_EQ(res.iou_lists().size(), set_->samples.size() - res.failures());
}

TEST_F(SmallBoard, RandomBaselineIsSeededAndLeavesFrozenPartsAlone) {
  const auto cfg = fixtures::tiny_config();
  model::EncoderBundle a(cfg), b(cfg), c(cfg);
  const auto hashes = a.frozen_hashes();
  a.randomize_projection(5);
  b.randomize_projection(5);
  c.randomize_projection(6);
  EXPECT_EQ(a.frozen_hashes(), hashes);
  const auto ra = run_eval(set_->samples, random_predictor(a, 0.5, 0.3));
  const auto rb = run_eval(set_->samples, random_predictor(b, 0.5, 0.3));
  const auto rc = run_eval(set_->samples, random_predictor(c, 0.5, 0.3));
  EXPECT_EQ(ra.failures(), 0u);
  EXPECT_EQ(ra.miou, rb.miou);
  for (std::size_t i = 0; i < ra.per_sample.size(); ++i) EXPECT_EQ(ra.per_sample[i].ious, rb.per_sample[i].ious);
  EXPECT_EQ(a.audio_weights(), b.audio_weights());
  EXPECT_NE(a.audio_weights(), c.audio_weights());
  for (const auto& s : ra.per_sample) EXPECT_EQ(s.n_pred, 1);
}

TEST(ResizeNearest, UpAndDown) {
  const auto m = box(4, 4, 0, 0, 2, 2);
  const auto up = resize_nearest(m, 8, 8);
  EXPECT_EQ(up.area(), 16);
  EXPECT_TRUE(up == box(8, 8, 0, 0, 4, 4));
  EXPECT_TRUE(resize_nearest(up, 4, 4) == m);
}
