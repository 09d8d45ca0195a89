#include <gtest/gtest.h>

#include <cmath>

#include "amine/localization.hpp"
#include "amine/rng.hpp"

namespace amine {
namespace {

double brute_iou(const Rect& a, const Rect& b) {
  long inter = 0, uni = 0;
  for (int x = -2; x < 40; ++x) {
    for (int y = -2; y < 40; ++y) {
      const bool in_a = x >= a.x && x < a.x + a.w && y >= a.y && y < a.y + a.h;
      const bool in_b = x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Rect random_rect(Rng& rng) {
  const int x = static_cast<int>(rng.below(32)), y = static_cast<int>(rng.below(32));
  return Rect{x, y, 1 + static_cast<int>(rng.below(32 - x)), 1 + static_cast<int>(rng.below(32 - y))};
}

Heatmap gaussian(std::size_t w, std::size_t h, double cx, double cy, double sigma, double amp = 1.0) {
  Heatmap m(w, h);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      m.at(x, y) = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  }
  return m;
}

TEST(Iou, Examples) {
  EXPECT_EQ(iou(Rect{3, 4, 5, 6}, Rect{3, 4, 5, 6}), 1.0);
  EXPECT_EQ(iou(Rect{0, 0, 2, 2}, Rect{2, 0, 2, 2}), 0.0);
  EXPECT_DOUBLE_EQ(iou(Rect{0, 0, 10, 10}, Rect{5, 0, 10, 10}), 50.0 / 150.0);
}

TEST(Iou, MatchesPixelCountOracle) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Rect a = random_rect(rng), b = random_rect(rng);
    const double v = iou(a, b);
    EXPECT_EQ(v, brute_iou(a, b));
    EXPECT_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_EQ(v == 1.0, a == b);
  }
}

TEST(ExtractBboxes, GaussianBlobGivesNestedBoxes) {
  const Heatmap h = gaussian(32, 32, 15.3, 12.7, 4.0);
  const BoxExtraction r = extract_bboxes(h, EvalConfig{}, 7, 2);
  ASSERT_FALSE(r.degenerate);
  ASSERT_EQ(r.boxes.size(), 3u);
  const double top = h.max();
  const double taus[3] = {0.75, 0.5, 0.25};
  for (std::size_t i = 0; i < 3; ++i) {
    // Exhaustive oracle: the blob is convex, so the box spans every pixel above tau.
    int x0 = 99, y0 = 99, x1 = -1, y1 = -1;
    for (int x = 0; x < 32; ++x) {
      for (int y = 0; y < 32; ++y) {
        if (h.at(x, y) < taus[i] * top) continue;
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
    EXPECT_EQ(r.boxes[i].rect, (Rect{x0, y0, x1 - x0 + 1, y1 - y0 + 1}));
    EXPECT_EQ(r.boxes[i].image_id, 7);
    EXPECT_EQ(r.boxes[i].cls, 2);
  }
  for (std::size_t i = 1; i < 3; ++i) {
    EXPECT_GT(r.boxes[i].rect.area(), r.boxes[i - 1].rect.area());
    EXPECT_LT(r.boxes[i].score, r.boxes[i - 1].score);
    const Rect& in = r.boxes[i - 1].rect;
    const Rect& out = r.boxes[i].rect;
    EXPECT_TRUE(in.x >= out.x && in.y >= out.y && in.x + in.w <= out.x + out.w &&
                in.y + in.h <= out.y + out.h);
  }
}

TEST(ExtractBboxes, PlateauCollapsesToOneBox) {
  Heatmap h(10, 8);
  for (int x = 2; x < 6; ++x) {
    for (int y = 3; y < 5; ++y) h.at(x, y) = 1.0;
  }
  const BoxExtraction r = extract_bboxes(h, EvalConfig{});
  ASSERT_EQ(r.boxes.size(), 1u);
  EXPECT_EQ(r.boxes[0].rect, (Rect{2, 3, 4, 2}));
  EXPECT_DOUBLE_EQ(r.boxes[0].score, 1.0);
}

TEST(ExtractBboxes, ConstantIsDegenerate) {
  const BoxExtraction r = extract_bboxes(Heatmap(6, 6, 0.4), EvalConfig{});
  EXPECT_TRUE(r.degenerate);
  EXPECT_TRUE(r.boxes.empty());
}

TEST(ExtractBboxes, RejectsUnnormalizedHeatmap) {
  Heatmap h(2, 2);
  h.values = {0.0, 1.5, 0.2, 0.3};
  EXPECT_THROW(extract_bboxes(h, EvalConfig{}), std::invalid_argument);
}

Heatmap two_blobs() {
  Heatmap h = gaussian(40, 20, 8.0, 10.0, 2.5);
  const Heatmap weak = gaussian(40, 20, 30.0, 10.0, 2.5, 0.8);
  for (std::size_t i = 0; i < h.values.size(); ++i) h.values[i] = std::max(h.values[i], weak.values[i]);
  return h;
}

TEST(ExtractBboxes, MaxComponentStaysOnStrongestBlob) {
  const BoxExtraction r = extract_bboxes(two_blobs(), EvalConfig{});
  for (const BBox& b : r.boxes) EXPECT_LT(b.rect.x + b.rect.w, 20);
}

TEST(ExtractBboxes, SecondaryRegionPolicyBoxesWeakerBlob) {
  EvalConfig cfg;
  cfg.box_policy = BoxPolicy::kSecondaryRegion;
  const BoxExtraction r = extract_bboxes(two_blobs(), cfg);
  ASSERT_EQ(r.boxes.size(), 3u);
  int on_weak = 0;
  for (const BBox& b : r.boxes) {
    if (b.rect.x > 20) {
      ++on_weak;
      EXPECT_LE(std::abs(b.rect.x + b.rect.w / 2 - 30), 1);
    }
  }
  EXPECT_EQ(on_weak, 1);
  EXPECT_EQ(parse_box_policy(to_string(BoxPolicy::kSecondaryRegion)), BoxPolicy::kSecondaryRegion);
  EXPECT_THROW(parse_box_policy("largest"), std::invalid_argument);
}

BBox box(int image, Rect r, int cls = 0) { return BBox{image, cls, r, 0.5}; }

TEST(BuildPool, RankMajorOrder) {
  const std::vector<std::vector<BBox>> two{
      {box(1, {0, 0, 1, 1}), box(1, {0, 0, 2, 2}), box(1, {0, 0, 3, 3})},
      {box(2, {0, 0, 1, 1}), box(2, {0, 0, 2, 2}), box(2, {0, 0, 3, 3})}};
  const auto pool = build_pool(two);
  ASSERT_EQ(pool.size(), 6u);
  const int ids[6] = {1, 2, 1, 2, 1, 2};
  const int ranks[6] = {1, 1, 2, 2, 3, 3};
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(pool[i].image_id, ids[i]);
    EXPECT_EQ(pool[i].rect.w, ranks[i]);
  }

  const std::vector<std::vector<BBox>> skip{two[0], {two[1][0]}};
  const auto p2 = build_pool(skip);
  ASSERT_EQ(p2.size(), 4u);
  EXPECT_EQ(p2[1].image_id, 2);
  EXPECT_EQ(p2[2].image_id, 1);
  EXPECT_EQ(p2[3].rect.w, 3);

  const auto p1 = build_pool(std::vector<std::vector<BBox>>{two[0]});
  ASSERT_EQ(p1.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(p1[i].rect.w, static_cast<int>(i) + 1);
}

TruthSet truth_for(std::initializer_list<std::pair<int, Rect>> items) {
  TruthSet t;
  for (const auto& [id, r] : items) {
    ImageTruth& it = t[id];
    it.image_id = id;
    it.labels = {1};
    it.boxes.resize(1);
    it.boxes[0].push_back(r);
  }
  return t;
}

TEST(Evaluate, PerfectPredictor) {
  const TruthSet t = truth_for({{1, {0, 0, 4, 4}}, {2, {5, 5, 3, 3}}});
  const std::vector<BBox> pool{box(1, {0, 0, 4, 4}), box(2, {5, 5, 3, 3})};
  for (double thr : {0.1, 0.5, 1.0}) {
    const auto row = evaluate(pool, t, 0, thr, 1e9);
    ASSERT_TRUE(row);
    EXPECT_EQ(row->acc, 1.0);
    EXPECT_EQ(row->afp, 0.0);
    EXPECT_EQ(row->boxes_used, 2u);
  }
}

TEST(Evaluate, HandTracedSelection) {
  // Image 1 rank-1 overlaps its GT with IoU 0.4; image 2 never hits.
  const TruthSet t = truth_for({{1, {0, 0, 10, 10}}, {2, {0, 0, 4, 4}}});
  const Rect partial{0, 0, 10, 4};
  ASSERT_DOUBLE_EQ(iou(partial, Rect{0, 0, 10, 10}), 0.4);
  const std::vector<BBox> pool{box(1, partial), box(2, {20, 20, 2, 2}), box(1, {30, 30, 1, 1}),
                               box(2, {25, 25, 2, 2})};
  const auto row = evaluate(pool, t, 0, 0.3, 1e9);
  ASSERT_TRUE(row);
  EXPECT_DOUBLE_EQ(row->acc, 0.5);
  EXPECT_DOUBLE_EQ(row->afp, 3.0 / 2.0);
  EXPECT_EQ(row->boxes_used, 4u);

  const auto tight = evaluate(pool, t, 0, 0.5, 1e9);
  EXPECT_DOUBLE_EQ(tight->acc, 0.0);
}

TEST(Evaluate, ZeroBoundStopsAtFirstMiss) {
  const TruthSet t = truth_for({{1, {0, 0, 4, 4}}, {2, {0, 0, 4, 4}}, {3, {0, 0, 4, 4}}});
  const std::vector<BBox> pool{box(1, {0, 0, 4, 4}), box(2, {9, 9, 1, 1}), box(3, {0, 0, 4, 4})};
  const auto row = evaluate(pool, t, 0, 0.5, 0.0);
  EXPECT_DOUBLE_EQ(row->acc, 1.0 / 3.0);
  EXPECT_EQ(row->afp, 0.0);
  EXPECT_EQ(row->boxes_used, 1u);
}

TEST(Evaluate, MissingTruthIsOmittedWithNotice) {
  const TruthSet t = truth_for({{1, {0, 0, 4, 4}}});
  EXPECT_FALSE(evaluate(std::vector<BBox>{}, t, 3, 0.5, 1.0).has_value());
  const LocalizationReport r = evaluate_all(std::vector<BBox>{box(1, {0, 0, 4, 4})}, t, 2, EvalConfig{});
  EXPECT_EQ(r.rows.size(), 7u);
  ASSERT_EQ(r.notices.size(), 1u);
  EXPECT_NE(r.notices[0].find("class 1"), std::string::npos);
}

TEST(Evaluate, PerBoxAccuracy) {
  TruthSet t = truth_for({{1, {0, 0, 4, 4}}});
  t[1].boxes[0].push_back(Rect{10, 10, 4, 4});
  const std::vector<BBox> pool{box(1, {0, 0, 4, 4})};
  EXPECT_DOUBLE_EQ(evaluate(pool, t, 0, 0.5, 1.0, false)->acc, 1.0);
  EXPECT_DOUBLE_EQ(evaluate(pool, t, 0, 0.5, 1.0, true)->acc, 0.5);
}

TEST(Evaluate, MonotoneInIouAndBound) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    TruthSet t;
    std::vector<BBox> pool;
    const int images = 1 + static_cast<int>(rng.below(8));
    for (int i = 0; i < images; ++i) {
      t[i] = ImageTruth{i, "", {1}, {{random_rect(rng)}}};
      for (int k = 0; k < 3; ++k) {
        Rect r = t[i].boxes[0][0];
        r.x += static_cast<int>(rng.below(5)) - 2;
        r.w = std::max(1, r.w + static_cast<int>(rng.below(7)) - 3);
        pool.push_back(box(i, rng.bernoulli(0.3) ? random_rect(rng) : r));
      }
    }
    const double bound = rng.uniform(0.0, 2.0);
    double prev = 2.0;
    for (double thr = 0.1; thr < 0.95; thr += 0.1) {
      const double acc = evaluate(pool, t, 0, thr, 1e9)->acc;
      EXPECT_LE(acc, prev);
      prev = acc;
      const auto low = evaluate(pool, t, 0, thr, bound);
      const auto high = evaluate(pool, t, 0, thr, bound + rng.uniform(0.0, 1.0));
      EXPECT_LE(low->acc, high->acc);
      EXPECT_LE(low->afp, bound + 1e-12);
    }
  }
}

TEST(EvalConfig, Validation) {
  EvalConfig c;
  c.bbox_thresholds = {0.5, 0.75, 0.25};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = EvalConfig{};
  c.boxes_per_image = 2;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = EvalConfig{};
  c.afp_upper_bound = {-1.0};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_NO_THROW(EvalConfig{}.validate());
}

TEST(ReportCsv, Layout) {
  LocalizationReport r;
  r.rows.push_back(ReportRow{1, 0.3, 0.5, 0.25, 4});
  EXPECT_EQ(report_csv(r), "class,t_iou,acc,afp,boxes_used\n1,0.30,0.500000,0.250000,4\n");
}

}  // namespace
}  // namespace amine
