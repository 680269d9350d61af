#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fsvos/backbone.hpp"
#include "fsvos/ops.hpp"
#include "fsvos/segmenter.hpp"
#include "test_support.hpp"

using namespace fsvos;
using fsvos::testing::gradient_rel_error;
using fsvos::testing::random_tensor;
using fsvos::testing::WarningCapture;

namespace {

ModelState small_model(std::uint64_t seed = 1) { return initialize_model(ModelConfig{}, seed); }

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Image random_image(std::mt19937_64& rng, int c = 3, int h = 64, int w = 64) {
  Image im(c, h, w);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& p : im.pixels) p = u(rng);
  return im;
}

// Cosine prior computed directly from its definition.
std::vector<double> pseudo_mask_oracle(const std::vector<std::vector<double>>& query,
                                       const std::vector<std::vector<double>>& support_fg) {
  std::vector<double> raw;
  for (const auto& q : query) {
    double best = -2.0;
    for (const auto& s : support_fg) {
      double dot = 0, nq = 0, ns = 0;
      for (std::size_t c = 0; c < q.size(); ++c) dot += q[c] * s[c], nq += q[c] * q[c], ns += s[c] * s[c];
      best = std::max(best, dot / std::sqrt(nq * ns));
    }
    raw.push_back(best);
  }
  const double lo = *std::min_element(raw.begin(), raw.end());
  const double hi = *std::max_element(raw.begin(), raw.end());
  for (auto& r : raw) r = (r - lo) / (hi - lo);
  return raw;
}

// [1,C,h,w] from per-location channel vectors in row-major order.
Tensor feature_grid(const std::vector<std::vector<double>>& vecs, int h, int w) {
  const int c = static_cast<int>(vecs[0].size());
  Tensor t({1, c, h, w});
  for (int i = 0; i < h * w; ++i)
    for (int k = 0; k < c; ++k) t.mutable_data()[k * h * w + i] = vecs[static_cast<std::size_t>(i)][k];
  return t;
}

}  // namespace

TEST(Backbone, TapShapesAt64) {
  const ModelState m = small_model();
  std::mt19937_64 rng(1);
  const auto f = extract(m, random_tensor({2, 3, 64, 64}, rng, 0, 1));
  EXPECT_EQ(f.mid.data.shape(), (Shape{2, 16, 16, 16}));
  EXPECT_EQ(f.high.data.shape(), (Shape{2, 32, 8, 8}));
  EXPECT_EQ(f.mid.stride, 4);
  EXPECT_EQ(f.high.stride, 8);
}

TEST(Backbone, StridesHoldForRandomSizes) {
  const ModelState m = small_model();
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> cells(2, 9);
  for (int i = 0; i < 8; ++i) {
    const int h = 8 * cells(rng), w = 8 * cells(rng);
    const auto f = extract(m, random_tensor({1, 3, h, w}, rng, 0, 1));
    EXPECT_EQ(f.mid.data.dim(2) * f.mid.stride, h);
    EXPECT_EQ(f.mid.data.dim(3) * f.mid.stride, w);
    EXPECT_EQ(f.high.data.dim(2) * f.high.stride, h);
    EXPECT_EQ(f.high.data.dim(3) * f.high.stride, w);
  }
}

TEST(Backbone, IndivisibleInputRejected) {
  EXPECT_THROW(extract(small_model(), Tensor({1, 3, 60, 64})), ShapeError);
  EXPECT_THROW(extract(small_model(), Tensor({1, 1, 64, 64})), ShapeError);
}

TEST(Backbone, ZeroInputFiniteAndBatchCopiesIdentical) {
  const ModelState m = small_model();
  for (double v : extract(m, Tensor({1, 3, 32, 32})).high.data.data()) EXPECT_TRUE(std::isfinite(v));
  std::mt19937_64 rng(3);
  const Tensor one = random_tensor({1, 3, 32, 32}, rng, 0, 1);
  const auto f = extract(m, ops::concat_batch({one, one}));
  const std::size_t half = f.high.data.numel() / 2;
  for (std::size_t i = 0; i < half; ++i) EXPECT_EQ(f.high.data.data()[i], f.high.data.data()[half + i]);
}

TEST(Backbone, TapConfigValidated) {
  ModelConfig c;
  c.backbone.mid_tap_stage = 3;
  c.backbone.high_tap_stage = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Backbone, MaskedSupport) {
  const ModelState m = small_model();
  std::mt19937_64 rng(4);
  LabeledImage s{random_image(rng), Mask(64, 64, 1), 0};
  EXPECT_EQ(values(extract_masked_support(m, s).high.data), values(extract(m, image_to_tensor(s.image)).high.data));
  s.mask = Mask(64, 64, 0);
  EXPECT_EQ(values(extract_masked_support(m, s).mid.data), values(extract(m, Tensor({1, 3, 64, 64})).mid.data));
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 32; ++x) s.mask.at(y, x) = 1;
  EXPECT_NE(values(extract_masked_support(m, s).high.data), values(extract(m, image_to_tensor(s.image)).high.data));
  s.mask.at(0, 0) = 2;
  EXPECT_THROW(extract_masked_support(m, s), ValidationError);
}

TEST(PseudoMask, TwoByTwoExampleMatchesOracle) {
  const double r = 1.0 / std::sqrt(2.0);
  const std::vector<std::vector<double>> q{{1, 0}, {0, 1}, {r, r}, {-1, 0}};
  const Tensor query = feature_grid(q, 2, 2);
  // Support: one foreground cell holding (1,0); the other cells are background.
  const Tensor support = feature_grid({{1, 0}, {0, 0}, {0, 0}, {0, 0}}, 2, 2);
  const Tensor p = pseudo_mask(query, support, {{1, 0, 0, 0}}, {{0}});
  const auto oracle = pseudo_mask_oracle(q, {{1, 0}});
  const std::vector<double> expected{1.0, 0.5, 0.5 + 0.5 * r, 0.0};
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(p.data()[i], oracle[i], 1e-9);
    EXPECT_NEAR(p.data()[i], expected[i], 1e-9);
  }
  EXPECT_NEAR(p.data()[2], 0.8536, 1e-4);
}

TEST(PseudoMask, IdenticalFeaturesGiveNeutralMap) {
  std::mt19937_64 rng(5);
  const Tensor f = random_tensor({1, 1, 3, 3}, rng, 0.5, 1.0);
  PseudoMaskStats stats;
  const Tensor p = pseudo_mask(f, f, {std::vector<std::uint8_t>(9, 1)}, {{0}}, &stats);
  for (double v : p.data()) EXPECT_DOUBLE_EQ(v, 0.5);
  EXPECT_EQ(stats.degenerate_range, 1);
}

TEST(PseudoMask, OrthogonalAndParallelExtremes) {
  const Tensor q = feature_grid({{0, 3}, {2, 0}}, 1, 2);
  const Tensor s = feature_grid({{5, 0}, {0, 0}}, 1, 2);
  const Tensor p = pseudo_mask(q, s, {{1, 0}}, {{0}});
  EXPECT_DOUBLE_EQ(p.data()[0], 0.0);
  EXPECT_DOUBLE_EQ(p.data()[1], 1.0);
}

TEST(PseudoMask, EmptySupportWarnsAndIsNeutral) {
  WarningCapture warnings;
  std::mt19937_64 rng(6);
  PseudoMaskStats stats;
  const Tensor p = pseudo_mask(random_tensor({1, 4, 2, 2}, rng), random_tensor({1, 4, 2, 2}, rng),
                               {std::vector<std::uint8_t>(4, 0)}, {{0}}, &stats);
  for (double v : p.data()) EXPECT_DOUBLE_EQ(v, 0.5);
  EXPECT_EQ(stats.empty_support, 1);
  EXPECT_FALSE(warnings.messages.empty());
}

TEST(PseudoMask, NShotIsMeanOfShots) {
  std::mt19937_64 rng(7);
  const Tensor q = random_tensor({1, 4, 3, 3}, rng);
  const Tensor s = random_tensor({2, 4, 3, 3}, rng);
  const std::vector<std::uint8_t> m0{1, 0, 0, 0, 1, 0, 0, 0, 0}, m1{0, 0, 1, 1, 0, 0, 0, 1, 0};
  const Tensor both = pseudo_mask(q, s, {m0, m1}, {{0, 1}});
  const Tensor a = pseudo_mask(q, s, {m0, m1}, {{0}});
  const Tensor b = pseudo_mask(q, s, {m0, m1}, {{1}});
  for (int i = 0; i < 9; ++i) EXPECT_NEAR(both.data()[i], 0.5 * (a.data()[i] + b.data()[i]), 1e-15);
}

TEST(PseudoMask, RangeAndScaleInvarianceOver1000Pairs) {
  std::mt19937_64 rng(8);
  std::bernoulli_distribution fg(0.4);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  int degenerate = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Tensor q = random_tensor({1, 3, 2, 3}, rng);
    const Tensor s = random_tensor({1, 3, 2, 3}, rng);
    std::vector<std::uint8_t> m(6);
    for (auto& v : m) v = fg(rng);
    m[trial % 6] = 1;
    PseudoMaskStats stats;
    const Tensor p = pseudo_mask(q, s, {m}, {{0}}, &stats);
    const auto [lo, hi] = std::minmax_element(p.data().begin(), p.data().end());
    if (stats.degenerate_range) {
      ++degenerate;
      for (double v : p.data()) EXPECT_EQ(v, 0.5);
    } else {
      EXPECT_EQ(*lo, 0.0);
      EXPECT_EQ(*hi, 1.0);
    }
    const Tensor p2 = pseudo_mask(ops::scale(q, scale(rng)), ops::scale(s, scale(rng)), {m}, {{0}});
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(p.data()[i], p2.data()[i], 1e-6);
  }
  EXPECT_LT(degenerate, 1000);
}

TEST(PseudoMask, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  std::vector<Tensor> in{random_tensor({2, 3, 2, 2}, rng), random_tensor({2, 3, 2, 2}, rng)};
  const std::vector<std::vector<std::uint8_t>> fg{{1, 1, 0, 1}, {0, 1, 1, 0}};
  const Tensor w = random_tensor({2, 1, 2, 2}, rng);
  EXPECT_LT(gradient_rel_error(
                [&](const auto& t) { return ops::sum(ops::mul(pseudo_mask(t[0], t[1], fg, {{0, 1}, {1}}), w)); }, in),
            1e-4);
}

TEST(MaskToFeatureGrid, AnyCoveredPixelIsForeground) {
  Mask m(8, 8);
  m.at(5, 2) = 1;
  const auto g = mask_to_feature_grid(m, 4);
  EXPECT_EQ(g, (std::vector<std::uint8_t>{0, 0, 1, 0}));
}

TEST(Fuse, ShapesAndQueryOnlyPathWhenOthersZero) {
  const ModelState m = small_model();
  EXPECT_EQ(m.get("fusion.weight").shape(), (Shape{16, 1 + 2 * 16, 1, 1}));
  std::mt19937_64 rng(10);
  const FeatureMap q{random_tensor({1, 16, 16, 16}, rng), 4};
  const FeatureMap f = fuse(m, Tensor({1, 1, 8, 8}), q, Tensor({1, 16, 16, 16}));
  EXPECT_EQ(f.data.shape(), (Shape{1, 16, 16, 16}));
  // Same projection restricted to the query block of the weight.
  const Tensor& w = m.get("fusion.weight");
  Tensor wq({16, 16, 1, 1});
  for (int o = 0; o < 16; ++o)
    for (int c = 0; c < 16; ++c) wq.mutable_data()[o * 16 + c] = w.data()[o * 33 + 1 + c];
  const Tensor ref = ops::conv2d(q.data, wq, m.get("fusion.bias"), 1, 0);
  for (std::size_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(f.data.data()[i], ref.data()[i], 1e-12);
  EXPECT_THROW(fuse(m, Tensor({1, 1, 8, 8}), q, Tensor({1, 16, 8, 8})), ShapeError);
}

TEST(Neck, PreservesSizeAndDiffersFromIdentity) {
  const ModelState light = small_model();
  ModelConfig cfg;
  cfg.neck = NeckVariant::kIdentity;
  const ModelState ident = initialize_model(cfg, 1);
  std::mt19937_64 rng(11);
  const FeatureMap f{random_tensor({2, 16, 16, 16}, rng), 4};
  const FeatureMap out = neck(light, f);
  EXPECT_EQ(out.data.shape(), f.data.shape());
  for (double v : out.data.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(values(neck(ident, f).data), values(f.data));
  EXPECT_NE(values(out.data), values(f.data));
}

TEST(Head, SoftmaxAndUpsampling) {
  ModelState m = small_model();
  std::mt19937_64 rng(12);
  const SegPrediction p = head(m, {random_tensor({2, 16, 16, 16}, rng), 4}, 64, 64);
  EXPECT_EQ(p.probs.shape(), (Shape{2, 2, 64, 64}));
  const std::size_t plane = 64 * 64;
  for (int b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < plane; ++i) {
      EXPECT_NEAR(p.probs.data()[b * 2 * plane + i] + p.probs.data()[b * 2 * plane + plane + i], 1.0, 1e-5);
    }
  for (const auto& mask : p.masks()) EXPECT_NO_THROW(validate_binary(mask));

  // Zero final projection: both logits equal the shared bias -> 0.5 everywhere.
  for (auto& v : m.parameters())
    if (v.name.rfind("head.conv1", 0) == 0) std::fill(v.value.mutable_data().begin(), v.value.mutable_data().end(), 0.0);
  const SegPrediction flat = head(m, {random_tensor({1, 16, 16, 16}, rng), 4}, 64, 64);
  for (double v : flat.probs.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(ForwardEpisode, ShapesAndQueryPermutation) {
  const ModelState m = small_model();
  const SynthConfig synth;
  Episode ep;
  ep.class_id = 0;
  ep.support = {generate_image(synth, 0, 0)};
  for (int i = 1; i <= 3; ++i) ep.query.push_back(generate_image(synth, 0, i));
  const SegPrediction p = forward_episode(ep, m);
  EXPECT_EQ(p.probs.shape(), (Shape{3, 2, 64, 64}));

  Episode swapped = ep;
  std::swap(swapped.query[0], swapped.query[2]);
  const SegPrediction ps = forward_episode(swapped, m);
  const std::size_t item = 2 * 64 * 64;
  for (std::size_t i = 0; i < item; ++i) {
    EXPECT_EQ(p.probs.data()[i], ps.probs.data()[2 * item + i]);
    EXPECT_EQ(p.probs.data()[item + i], ps.probs.data()[item + i]);
  }
  // Repeated calls are bit-identical.
  EXPECT_EQ(values(forward_episode(ep, m).probs), values(p.probs));
}

TEST(TrainPhase1, ZeroLearningRateLeavesParametersUnchanged) {
  const auto data = generate_image_dataset(SynthConfig{}, 4);
  const ModelState init = small_model();
  Phase1Config cfg;
  cfg.adam_iterations = 1;
  cfg.adam_lr = 0.0;
  cfg.batch_size = 2;
  const Phase1Result r = train_phase1(data, init, cfg);
  EXPECT_EQ(r.model.parameter_bytes(), init.parameter_bytes());
  EXPECT_EQ(r.losses.size(), 1u);
}

TEST(TrainPhase1, NeedsTwoClasses) {
  SynthConfig synth;
  synth.base_classes = {"ellipse"};
  EXPECT_THROW(train_phase1(generate_image_dataset(synth, 4), small_model(), Phase1Config{}), ConfigError);
}

TEST(TrainPhase1, LossDecreasesOnSmallSet) {
  const auto data = generate_image_dataset(SynthConfig{}, 3);
  Phase1Config cfg;
  cfg.adam_iterations = 60;
  cfg.adam_lr = 1e-3;
  cfg.batch_size = 4;
  cfg.dice_loss = true;
  const Phase1Result r = train_phase1(data, small_model(), cfg);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) first += r.losses[i], last += r.losses[r.losses.size() - 1 - i];
  EXPECT_LT(last, first);
}

TEST(TrainPhase1, DivergenceRaisesNumericError) {
  const auto data = generate_image_dataset(SynthConfig{}, 3);
  Phase1Config cfg;
  cfg.adam_iterations = 0;
  cfg.sgd_iterations = 5;
  cfg.sgd_lr = 1e300;
  cfg.batch_size = 2;
  EXPECT_THROW(train_phase1(data, small_model(), cfg), NumericError);
}

TEST(InferVideoNaive, IdenticalFramesIdenticalPredictions) {
  const ModelState m = small_model();
  SynthConfig synth;
  synth.motion_step = 0.0;
  synth.noise_std = 0.0;
  const VideoClip clip = generate_video_clip(synth, class_id_from_name("ring"), 0);
  const SegPrediction p = infer_video_naive(clip, m);
  ASSERT_EQ(p.batch(), 7);
  const std::size_t item = 2 * 64 * 64;
  for (int t = 1; t < 7; ++t)
    for (std::size_t i = 0; i < item; ++i) ASSERT_EQ(p.probs.data()[t * item + i], p.probs.data()[i]);
}
