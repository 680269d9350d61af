#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fsvos/backbone.hpp"
#include "fsvos/data.hpp"
#include "fsvos/model_state.hpp"

namespace fsvos {

struct SegPrediction {
  Tensor logits;  // [B,2,H,W]
  Tensor probs;   // softmax over {background, foreground}

  Tensor foreground() const;    // [B,1,H,W]
  std::vector<Mask> masks() const;  // argmax per pixel, ties to background
  int batch() const { return probs.dim(0); }
};

/// Downsamples a mask to a feature grid: a cell is foreground when any pixel
/// it covers is foreground.
std::vector<std::uint8_t> mask_to_feature_grid(const Mask& mask, int stride);

struct PseudoMaskStats {
  int degenerate_range = 0;  // constant raw map, emitted as 0.5
  int empty_support = 0;     // no support foreground at feature resolution
};

/// Cosine-similarity prior. For query q and each of its shots s, every query
/// location takes the max cosine against the support's foreground locations,
/// then the map is min-max normalized over the query's positions. Shots are
/// averaged. Differentiable in both feature inputs.
///
/// query_high: [Q,C,h,w]; support_high: [S,C,h,w]; support_fg[s]: h*w grid;
/// shots[q]: support indices for query q. Returns [Q,1,h,w].
Tensor pseudo_mask(const Tensor& query_high, const Tensor& support_high,
                   const std::vector<std::vector<std::uint8_t>>& support_fg,
                   const std::vector<std::vector<int>>& shots, PseudoMaskStats* stats = nullptr);

/// Single-support form: support_mask is at image resolution.
Tensor pseudo_mask(const FeatureMap& query_high, const FeatureMap& support_high_masked,
                   const Mask& support_mask, PseudoMaskStats* stats = nullptr);

/// 1x1 projection of concat(up(pseudo), query_mid, support_mid) back to the
/// mid width. support_mid is already aligned to the query batch (one item per
/// query, spatial or [Q,C,1,1] pooled).
FeatureMap fuse(const ModelState& model, const Tensor& pseudo, const FeatureMap& query_mid,
                const Tensor& support_mid);

/// Two-scale exchange neck (or identity when configured).
FeatureMap neck(const ModelState& model, const FeatureMap& fused);

/// 3x3 conv + ReLU, 1x1 conv to two logits, bilinear resize, softmax.
SegPrediction head(const ModelState& model, const FeatureMap& features, int out_height, int out_width);

/// Support and query images for one forward pass. Supports are stored
/// masked (s ⊙ m).
struct EpisodeBatch {
  Tensor support_images;  // [S,C,H,W]
  std::vector<Mask> support_masks;
  Tensor query_images;    // [Q,C,H,W]
  std::vector<std::vector<int>> shots;  // per query, indices into support
};

EpisodeBatch make_batch(std::span<const Episode> episodes);
EpisodeBatch make_batch(std::span<const LabeledImage> support, std::span<const Image> queries);

struct ForwardOutputs {
  FeatureMap fused;
  FeatureMap neck;
  FeatureMap head_input;  // neck output, or temporal unit output when used
  SegPrediction prediction;
  PseudoMaskStats pseudo_stats;
};

/// pseudo_mask → fuse → neck → [temporal unit] → head. The temporal unit is
/// applied only when requested and present; the queries are then treated as
/// one ordered window.
ForwardOutputs forward_batch(const ModelState& model, const EpisodeBatch& batch, bool use_temporal = false);

/// Predictions for every query of an episode, [K,2,H,W].
SegPrediction forward_episode(const Episode& episode, const ModelState& model);

struct Phase1Config {
  int adam_iterations = 2000;
  double adam_lr = 1e-4;
  int sgd_iterations = 0;
  double sgd_lr = 1e-5;
  int batch_size = 8;
  int shots = 1;
  int queries = 1;
  bool dice_loss = false;
  double dice_weight = 1.0;
  std::uint64_t seed = 0;
  // Iterations already completed by the incoming model (resume offset).
  int start_iteration = 0;
};

struct Phase1Result {
  ModelState model;
  std::vector<double> losses;  // one per iteration
};

using IterationCallback = std::function<void(int iteration, double loss)>;

/// Episodic supervised training: Adam for adam_iterations, then SGD.
/// Pixel-wise cross-entropy, plus soft Dice when enabled. Throws NumericError
/// on a non-finite loss.
Phase1Result train_phase1(std::span<const LabeledImage> dataset, const ModelState& init,
                          const Phase1Config& cfg, const IterationCallback& on_iteration = {});

/// Each query frame segmented on its own with the annotated prefix as support.
/// Returns [T-N,2,H,W] in frame order.
SegPrediction infer_video_naive(const VideoClip& clip, const ModelState& model);

}  // namespace fsvos
