#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fsvos {

using Rng = std::mt19937_64;

/// Derives an independent seed for a named substream ("data", "init", ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

/// Image in CHW layout with values in [0,1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), pixels(static_cast<std::size_t>(c) * h * w, fill) {}

  double& at(int c, int y, int x) {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool operator==(const Image&) const = default;
};

/// Binary segmentation mask, values in {0,1}.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

// Throws ValidationError unless every value is 0 or 1.
void validate_binary(const Mask& mask);

struct LabeledImage {
  Image image;
  Mask mask;  // empty when the annotation is hidden from the caller
  int class_id = -1;

  // Checks matching spatial dims and a strictly binary mask.
  void validate() const;
};

struct Episode {
  std::vector<LabeledImage> support;
  std::vector<LabeledImage> query;
  int class_id = -1;
  // Set for video episodes: query masks are withheld.
  bool query_masks_hidden = false;

  void validate() const;
};

enum class ShapeFamily { kEllipse, kRectangle, kTriangle, kCross, kRing, kStar, kCrescent };

const std::vector<std::string>& shape_family_names();
// Throws ConfigError for unknown names.
int class_id_from_name(std::string_view name);
const std::string& class_name(int class_id);

struct SynthConfig {
  int height = 64;
  int width = 64;
  int channels = 3;
  std::vector<std::string> base_classes{"ellipse", "rectangle", "triangle", "cross"};
  std::vector<std::string> novel_classes{"ring", "star", "crescent"};
  int frames_per_clip = 8;
  int annotated_prefix = 1;
  double motion_step = 2.0;
  double noise_std = 0.03;
  std::uint64_t seed = 0;

  // Unknown names, base/novel overlap, or degenerate sizes -> ConfigError.
  void validate() const;
  std::vector<int> base_class_ids() const;
  std::vector<int> novel_class_ids() const;
};

/// Renders one sample of a class. Deterministic in (cfg, class, index).
LabeledImage generate_image(const SynthConfig& cfg, int class_id, int index);

/// n_per_class images for every base class, ordered by class then index.
std::vector<LabeledImage> generate_image_dataset(const SynthConfig& cfg, int n_per_class);

/// Access token for query-frame ground truth; only evaluation code mints one.
class EvaluationAccess {
 private:
  EvaluationAccess() = default;
  friend EvaluationAccess grant_evaluation_access();
};

EvaluationAccess grant_evaluation_access();

class VideoClip {
 public:
  VideoClip() = default;
  VideoClip(std::vector<Image> frames, std::vector<Mask> ground_truth, int annotated_prefix,
            int class_id);

  int num_frames() const { return static_cast<int>(frames_.size()); }
  int annotated_prefix() const { return annotated_prefix_; }
  int num_query_frames() const { return num_frames() - annotated_prefix_; }
  int class_id() const { return class_id_; }

  const std::vector<Image>& frames() const { return frames_; }
  const Image& frame(int t) const { return frames_.at(static_cast<std::size_t>(t)); }

  // Annotation visible to the model: present only for the support prefix.
  std::optional<Mask> annotation(int t) const;

  // Full per-frame ground truth, for scoring only.
  const Mask& ground_truth(int t, const EvaluationAccess&) const {
    return ground_truth_.at(static_cast<std::size_t>(t));
  }

  // Per-frame object centre (x, y) used while rendering; empty for loaded clips.
  std::vector<std::pair<double, double>> object_centers;

 private:
  std::vector<Image> frames_;
  std::vector<Mask> ground_truth_;
  int annotated_prefix_ = 0;
  int class_id_ = -1;
};

/// One clip of a novel class. Base classes are rejected with ProtocolError.
VideoClip generate_video_clip(const SynthConfig& cfg, int class_id, int clip_index = 0);

/// Draws N support and K query images of a single class without overlap.
class EpisodeSampler {
 public:
  explicit EpisodeSampler(std::span<const LabeledImage> dataset);
  Episode sample(int n_shot, int k_query, Rng& rng) const;

 private:
  std::span<const LabeledImage> dataset_;
  std::vector<int> class_ids_;
  std::vector<std::vector<int>> by_class_;
};

Episode sample_episode(std::span<const LabeledImage> dataset, int n_shot, int k_query, Rng& rng);

/// Support = annotated prefix; query = remaining frames in order with masks hidden.
Episode clip_to_episode(const VideoClip& clip);
/// Same, with query ground truth attached for evaluation.
Episode clip_to_episode(const VideoClip& clip, const EvaluationAccess& access);

}  // namespace fsvos
