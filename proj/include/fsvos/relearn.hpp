#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fsvos/data.hpp"
#include "fsvos/model_state.hpp"
#include "fsvos/segmenter.hpp"

namespace fsvos {

/// Ordered run of consecutive frame indices.
struct TemporalBatch {
  std::vector<int> frame_indices;

  // Throws ValidationError unless non-empty, strictly consecutive, increasing.
  void validate() const;
};

/// Relearning windows over `count` frames starting at `first`: non-overlapping,
/// in order; a 1-frame tail is merged into the previous window.
std::vector<TemporalBatch> relearn_windows(int first, int count, int batch_size);

/// Inference windows: plain partition, the tail may be shorter.
std::vector<TemporalBatch> inference_windows(int first, int count, int window);

struct LossWeights {
  double temporal = 1.0;    // λ1
  double feature = 1.0;     // λ2
  double prediction = 1.0;  // λ3

  void validate() const;
};

/// 1 - mean cosine similarity of consecutive frame features, each frame
/// flattened to one vector. Needs T >= 2. A zero-norm frame contributes
/// cosine 0 and triggers a warning.
Tensor loss_temporal(const Tensor& features);

/// Mean squared error between student and teacher features. The teacher side
/// is detached.
Tensor loss_feature(const Tensor& student, const Tensor& teacher);

/// Mean squared error between foreground-probability maps, teacher detached.
Tensor loss_prediction(const SegPrediction& student, const SegPrediction& teacher);
Tensor loss_prediction(const Tensor& student_fg, const Tensor& teacher_fg);

Tensor total_loss(const Tensor& temporal, const Tensor& feature, const Tensor& prediction, const LossWeights& w);

enum class FeatureTap { kNeck, kFusion };

struct RelearnConfig {
  double lr = 1e-5;
  int batch_size = 4;
  int epochs = 20;
  double early_stop = 1e-5;
  // Hard cap on optimizer steps; negative means epochs decide alone.
  int max_iterations = -1;
  LossWeights weights;
  FeatureTap feature_tap = FeatureTap::kNeck;
};

struct RelearnLogEntry {
  int iteration = 0;
  double temporal = 0.0;
  double feature = 0.0;
  double prediction = 0.0;
  double total = 0.0;
};

/// Frozen phase-1 teacher and its trainable student copy.
struct TeacherStudentPair {
  ModelState teacher;
  ModelState student;

  /// teacher = phase-1 model, fully frozen, no temporal unit.
  /// student = same weights + zero-mixing temporal unit, head frozen.
  static TeacherStudentPair from_image_model(const ModelState& image_model, std::uint64_t seed);
};

struct RelearnResult {
  ModelState student;
  std::vector<RelearnLogEntry> log;
  int iterations = 0;
  // Largest |gradient| ever observed on a teacher parameter (must stay 0).
  double max_teacher_grad = 0.0;
};

using RelearnCallback = std::function<void(const RelearnLogEntry&)>;

/// Self-supervised adaptation on the clip's query frames (annotated prefix as
/// support). Only frames and prefix masks are read. Throws NumericError on a
/// non-finite loss and FreezeViolation if teacher or student head change.
RelearnResult relearn(const TeacherStudentPair& pair, const VideoClip& clip, const RelearnConfig& cfg,
                      const RelearnCallback& on_step = {});

/// Query frames in consecutive windows through the temporal unit.
/// Returns [T-N,2,H,W] in frame order.
SegPrediction infer_video_relearned(const VideoClip& clip, const ModelState& student, int window);

}  // namespace fsvos
