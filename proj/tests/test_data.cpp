#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "fsvos/data.hpp"
#include "fsvos/dataset_store.hpp"
#include "fsvos/errors.hpp"
#include "fsvos/image_io.hpp"
#include "fsvos/metrics.hpp"

using namespace fsvos;

namespace {

double mask_iou(const Mask& a, const Mask& b) { return fb_iou(a, b).fg_iou; }

SynthConfig config_with_seed(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(DeriveSeed, DistinctStreamsDiffer) {
  EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(2, "a"));
  EXPECT_EQ(derive_seed(5, "x/3"), derive_seed(5, "x/3"));
}

TEST(SynthConfig, OverlappingClassesRejected) {
  SynthConfig cfg;
  cfg.novel_classes.push_back("ellipse");
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(SynthConfig, UnknownClassRejected) {
  SynthConfig cfg;
  cfg.base_classes = {"hexagon", "ellipse"};
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(class_id_from_name("hexagon"), ConfigError);
}

TEST(ImageDataset, CountAndDeterminism) {
  const SynthConfig cfg = config_with_seed(7);
  const auto a = generate_image_dataset(cfg, 10);
  const auto b = generate_image_dataset(cfg, 10);
  ASSERT_EQ(a.size(), 10 * cfg.base_classes.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image.pixels, b[i].image.pixels);
    EXPECT_EQ(a[i].mask.values, b[i].mask.values);
    EXPECT_EQ(a[i].class_id, b[i].class_id);
  }
  const auto c = generate_image_dataset(config_with_seed(8), 10);
  EXPECT_NE(a[0].image.pixels, c[0].image.pixels);
}

TEST(ImageDataset, ValuesInRangeAndBinaryMasks) {
  for (const auto& s : generate_image_dataset(config_with_seed(3), 5)) {
    EXPECT_NO_THROW(s.validate());
    for (double v : s.image.pixels) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(ImageDataset, NoiselessRectangleMaskIsDrawnArea) {
  SynthConfig cfg = config_with_seed(11);
  cfg.noise_std = 0.0;
  const int rect = class_id_from_name("rectangle");
  for (int i = 0; i < 20; ++i) {
    const LabeledImage s = generate_image(cfg, rect, i);
    int y0 = s.mask.height, y1 = -1, x0 = s.mask.width, x1 = -1;
    for (int y = 0; y < s.mask.height; ++y)
      for (int x = 0; x < s.mask.width; ++x)
        if (s.mask.at(y, x)) {
          y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
        }
    ASSERT_GE(y1, 0);
    EXPECT_EQ(s.mask.count(), static_cast<std::size_t>((y1 - y0 + 1) * (x1 - x0 + 1)));
  }
}

TEST(ImageDataset, ForegroundFractionOver1000Samples) {
  SynthConfig cfg = config_with_seed(2024);
  const int families = static_cast<int>(shape_family_names().size());
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const LabeledImage s = generate_image(cfg, i % families, i);
    const double frac = static_cast<double>(s.mask.count()) / (s.mask.height * s.mask.width);
    lo = std::min(lo, frac);
    hi = std::max(hi, frac);
  }
  EXPECT_GE(lo, 0.02);
  EXPECT_LE(hi, 0.5);
}

TEST(VideoClip, BaseClassRejected) {
  EXPECT_THROW(generate_video_clip(SynthConfig{}, class_id_from_name("ellipse")), ProtocolError);
}

TEST(VideoClip, ProtocolSplitsPrefix) {
  const SynthConfig cfg;  // T=8, N=1
  const VideoClip clip = generate_video_clip(cfg, class_id_from_name("ring"), 0);
  EXPECT_EQ(clip.num_frames(), 8);
  EXPECT_EQ(clip.num_query_frames(), 7);
  EXPECT_TRUE(clip.annotation(0).has_value());
  for (int t = 1; t < 8; ++t) EXPECT_FALSE(clip.annotation(t).has_value());

  const Episode ep = clip_to_episode(clip);
  ASSERT_EQ(ep.support.size(), 1u);
  ASSERT_EQ(ep.query.size(), 7u);
  EXPECT_TRUE(ep.query_masks_hidden);
  for (std::size_t i = 0; i < ep.query.size(); ++i) {
    EXPECT_EQ(ep.query[i].image.pixels, clip.frame(static_cast<int>(i) + 1).pixels);
    EXPECT_TRUE(ep.query[i].mask.values.empty());
  }
  EXPECT_EQ(ep.support[0].image.pixels, clip.frame(0).pixels);

  const Episode scored = clip_to_episode(clip, grant_evaluation_access());
  EXPECT_FALSE(scored.query_masks_hidden);
  EXPECT_EQ(scored.query[3].mask.values, clip.ground_truth(4, grant_evaluation_access()).values);
}

TEST(VideoClip, RequiresAtLeastOneQueryFrame) {
  std::vector<Image> frames(1, Image(3, 8, 8));
  std::vector<Mask> masks(1, Mask(8, 8));
  EXPECT_THROW(VideoClip(frames, masks, 1, class_id_from_name("ring")), ValidationError);
}

TEST(VideoClip, ZeroMotionMasksIdentical) {
  SynthConfig cfg;
  cfg.motion_step = 0.0;
  const auto access = grant_evaluation_access();
  const VideoClip clip = generate_video_clip(cfg, class_id_from_name("star"), 3);
  for (int t = 1; t < clip.num_frames(); ++t) {
    EXPECT_EQ(clip.ground_truth(t, access).values, clip.ground_truth(0, access).values);
  }
}

TEST(VideoClip, DisplacementBoundedByMotionStep) {
  SynthConfig cfg = config_with_seed(5);
  cfg.frames_per_clip = 16;
  cfg.motion_step = 3.0;
  for (int k = 0; k < 20; ++k) {
    const VideoClip clip = generate_video_clip(cfg, cfg.novel_class_ids()[k % 3], k);
    for (std::size_t t = 1; t < clip.object_centers.size(); ++t) {
      const double dx = clip.object_centers[t].first - clip.object_centers[t - 1].first;
      const double dy = clip.object_centers[t].second - clip.object_centers[t - 1].second;
      EXPECT_LE(std::hypot(dx, dy), cfg.motion_step + 1e-9);
    }
  }
}

namespace {

struct IoUStats {
  double worst = 1.0;
  double mean = 0.0;
};

IoUStats consecutive_iou(double motion_step) {
  SynthConfig cfg = config_with_seed(99);
  cfg.frames_per_clip = 16;
  cfg.motion_step = motion_step;
  const auto access = grant_evaluation_access();
  IoUStats s;
  int n = 0;
  for (int k = 0; k < 100; ++k) {
    const VideoClip clip = generate_video_clip(cfg, cfg.novel_class_ids()[k % 3], k);
    for (int t = 1; t < clip.num_frames(); ++t) {
      const double v = mask_iou(clip.ground_truth(t - 1, access), clip.ground_truth(t, access));
      s.worst = std::min(s.worst, v);
      s.mean += v;
      ++n;
    }
  }
  s.mean /= n;
  return s;
}

}  // namespace

// Measured over these 100 clips: worst 0.730 at step 2; worst 0.626, mean 0.77
// at step 3. A 3 px shift of a triangle that fits in 64x64 caps its IoU near
// 0.66, so the per-pair bound at step 3 is pinned to the observed floor.
TEST(VideoClip, ConsecutiveMaskIoUAtDefaultMotion) { EXPECT_GE(consecutive_iou(2.0).worst, 0.7); }

TEST(VideoClip, ConsecutiveMaskIoUAtMotionThree) {
  const IoUStats s = consecutive_iou(3.0);
  EXPECT_GE(s.mean, 0.7);
  EXPECT_GE(s.worst, 0.6);
}

TEST(VideoClip, Deterministic) {
  const SynthConfig cfg = config_with_seed(4);
  const VideoClip a = generate_video_clip(cfg, class_id_from_name("crescent"), 2);
  const VideoClip b = generate_video_clip(cfg, class_id_from_name("crescent"), 2);
  for (int t = 0; t < a.num_frames(); ++t) EXPECT_EQ(a.frame(t).pixels, b.frame(t).pixels);
}

TEST(EpisodeSampler, OneShotOneQueryDisjointSameClass) {
  const auto data = generate_image_dataset(config_with_seed(1), 6);
  const EpisodeSampler sampler(data);
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    const Episode ep = sampler.sample(1, 1, rng);
    ASSERT_EQ(ep.support.size(), 1u);
    ASSERT_EQ(ep.query.size(), 1u);
    EXPECT_EQ(ep.support[0].class_id, ep.class_id);
    EXPECT_EQ(ep.query[0].class_id, ep.class_id);
    EXPECT_NE(ep.support[0].image.pixels, ep.query[0].image.pixels);
  }
}

TEST(EpisodeSampler, SameRngStateSameEpisode) {
  const auto data = generate_image_dataset(config_with_seed(1), 6);
  Rng a(9), b(9);
  const Episode x = sample_episode(data, 2, 3, a);
  const Episode y = sample_episode(data, 2, 3, b);
  EXPECT_EQ(x.class_id, y.class_id);
  for (std::size_t i = 0; i < x.query.size(); ++i) EXPECT_EQ(x.query[i].image.pixels, y.query[i].image.pixels);
}

TEST(EpisodeSampler, InsufficientSamplesThrows) {
  const auto data = generate_image_dataset(config_with_seed(1), 2);
  Rng rng(1);
  EXPECT_THROW(sample_episode(data, 2, 1, rng), SamplingError);
}

TEST(DatasetStore, RoundTripThroughPng) {
  const auto dir = std::filesystem::temp_directory_path() / "fsvos_test_dataset";
  std::filesystem::remove_all(dir);
  SynthConfig cfg = config_with_seed(6);
  cfg.frames_per_clip = 4;
  const auto manifest = write_dataset(cfg, 3, 1, dir);
  EXPECT_EQ(manifest.at("base_classes").size(), 4u);
  EXPECT_EQ(manifest.at("novel_classes").size(), 3u);

  const auto images = load_image_dataset(dir);
  ASSERT_EQ(images.size(), 12u);
  const LabeledImage orig = generate_image(cfg, images[0].class_id, 0);
  EXPECT_EQ(images[0].mask.values, orig.mask.values);
  for (std::size_t i = 0; i < orig.image.pixels.size(); ++i) {
    EXPECT_NEAR(images[0].image.pixels[i], orig.image.pixels[i], 0.5 / 255.0 + 1e-12);
  }

  const auto clips = load_clips(dir);
  ASSERT_EQ(clips.size(), 3u);
  EXPECT_EQ(clips[0].num_frames(), 4);
  EXPECT_EQ(clips[0].annotated_prefix(), 1);
  std::filesystem::remove_all(dir);
}

TEST(ImageIo, NonBinaryMaskRejected) {
  const auto path = std::filesystem::temp_directory_path() / "fsvos_gray.png";
  Image gray(1, 2, 2);
  gray.pixels = {0.0, 0.5, 1.0, 0.0};
  write_png(path, gray);
  EXPECT_THROW(read_png_mask(path), ValidationError);
  std::filesystem::remove(path);
}
