#include <gtest/gtest.h>

#include <random>

#include "fsvos/errors.hpp"
#include "fsvos/metrics.hpp"

using namespace fsvos;

namespace {

Mask from_values(int h, int w, std::vector<std::uint8_t> v) {
  Mask m(h, w);
  m.values = std::move(v);
  return m;
}

Mask random_mask(std::mt19937_64& rng, double p, int h = 6, int w = 7) {
  std::bernoulli_distribution b(p);
  Mask m(h, w);
  for (auto& v : m.values) v = b(rng);
  return m;
}

}  // namespace

TEST(Dice, Examples) {
  const Mask a = from_values(2, 2, {1, 1, 0, 0});
  EXPECT_EQ(dice(a, a), 1.0);
  EXPECT_EQ(dice(a, from_values(2, 2, {0, 0, 1, 1})), 0.0);
  EXPECT_EQ(dice(a, from_values(2, 2, {0, 1, 1, 0})), 0.5);
  EXPECT_EQ(dice(Mask(3, 3), Mask(3, 3)), 1.0);
  EXPECT_THROW(dice(a, Mask(2, 3)), ShapeError);
}

TEST(FbIou, Examples) {
  const Mask gt = from_values(4, 1, {1, 1, 0, 0});
  const SegScore same = fb_iou(gt, gt);
  EXPECT_EQ(same.fg_iou, 1.0);
  EXPECT_EQ(same.bg_iou, 1.0);
  EXPECT_EQ(same.fb_iou, 1.0);
  const SegScore inv = fb_iou(from_values(4, 1, {0, 0, 1, 1}), gt);
  EXPECT_EQ(inv.fg_iou, 0.0);
  EXPECT_EQ(inv.bg_iou, 0.0);
  EXPECT_EQ(inv.fb_iou, 0.0);
  // Hand count: fg 1/2, bg 2/3.
  const SegScore s = fb_iou(from_values(4, 1, {1, 0, 0, 0}), gt);
  EXPECT_DOUBLE_EQ(s.fg_iou, 0.5);
  EXPECT_DOUBLE_EQ(s.bg_iou, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.fb_iou, 7.0 / 12.0);
  EXPECT_NEAR(s.fb_iou, 0.5833, 1e-4);
  EXPECT_DOUBLE_EQ(s.dice, 2.0 / 3.0);
  EXPECT_THROW(fb_iou(gt, Mask(2, 2)), ShapeError);
}

TEST(Aggregate, Examples) {
  const SegScore zero{0, 0, 0, 0}, one{1, 1, 1, 1};
  const std::vector<SegScore> single{one};
  EXPECT_EQ(aggregate(single).mean.dice, 1.0);
  const std::vector<SegScore> two{zero, one};
  const ScoreSummary s = aggregate(two);
  EXPECT_EQ(s.mean.dice, 0.5);
  EXPECT_EQ(s.mean.fb_iou, 0.5);
  EXPECT_EQ(s.count, 2u);
  EXPECT_THROW(aggregate(std::vector<SegScore>{}), ValidationError);
}

TEST(Aggregate, PermutationInvariant) {
  std::mt19937_64 rng(1);
  std::vector<SegScore> scores;
  for (int i = 0; i < 20; ++i) scores.push_back(fb_iou(random_mask(rng, 0.4), random_mask(rng, 0.4)));
  const ScoreSummary a = aggregate(scores);
  std::shuffle(scores.begin(), scores.end(), rng);
  const ScoreSummary b = aggregate(scores);
  EXPECT_NEAR(a.mean.dice, b.mean.dice, 1e-15);
  EXPECT_NEAR(a.mean.fb_iou, b.mean.fb_iou, 1e-15);
}

TEST(MetricProperties, SymmetryAndDiceIouRelation) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 2000; ++i) {
    const Mask a = random_mask(rng, 0.05 + 0.9 * (i % 10) / 10.0);
    const Mask b = random_mask(rng, 0.3);
    EXPECT_EQ(dice(a, b), dice(b, a));
    const SegScore ab = fb_iou(a, b), ba = fb_iou(b, a);
    EXPECT_EQ(ab.fg_iou, ba.fg_iou);
    EXPECT_EQ(ab.fb_iou, (ab.fg_iou + ab.bg_iou) / 2);
    if (a.count() + b.count() > 0) {
      EXPECT_NEAR(ab.dice, 2 * ab.fg_iou / (1 + ab.fg_iou), 1e-12);
    }
    for (double v : {ab.dice, ab.fg_iou, ab.bg_iou, ab.fb_iou}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(MetricProperties, AddingCorrectForegroundNeverLowersDice) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 300; ++i) {
    const Mask gt = random_mask(rng, 0.4);
    Mask pred = random_mask(rng, 0.3);
    for (std::size_t j = 0; j < pred.values.size(); ++j) {
      if (gt.values[j] && !pred.values[j]) {
        const double before = dice(pred, gt);
        pred.values[j] = 1;
        EXPECT_GE(dice(pred, gt), before);
      }
    }
  }
}
