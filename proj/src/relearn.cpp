#include "fsvos/relearn.hpp"

#include <cmath>

#include "fsvos/errors.hpp"
#include "fsvos/ops.hpp"
#include "fsvos/optim.hpp"

namespace fsvos {

void TemporalBatch::validate() const {
  if (frame_indices.empty()) throw ValidationError("temporal batch is empty");
  for (std::size_t i = 1; i < frame_indices.size(); ++i) {
    if (frame_indices[i] != frame_indices[i - 1] + 1) {
      throw ValidationError("temporal batch frames must be consecutive and increasing");
    }
  }
}

namespace {

TemporalBatch span_of(int first, int count) {
  TemporalBatch b;
  for (int i = 0; i < count; ++i) b.frame_indices.push_back(first + i);
  return b;
}

}  // namespace

std::vector<TemporalBatch> inference_windows(int first, int count, int window) {
  if (window < 1) throw ConfigError("window must be >= 1");
  std::vector<TemporalBatch> out;
  for (int start = 0; start < count; start += window) out.push_back(span_of(first + start, std::min(window, count - start)));
  return out;
}

std::vector<TemporalBatch> relearn_windows(int first, int count, int batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  auto out = inference_windows(first, count, batch_size);
  if (out.size() >= 2 && out.back().frame_indices.size() < 2) {
    const int tail = out.back().frame_indices.front();
    out.pop_back();
    out.back().frame_indices.push_back(tail);
  }
  return out;
}

void LossWeights::validate() const {
  if (!(temporal >= 0.0) || !(feature >= 0.0) || !(prediction >= 0.0)) {
    throw ConfigError("loss weights must be non-negative");
  }
}

Tensor loss_temporal(const Tensor& features) {
  if (features.rank() < 2) throw ShapeError("loss_temporal: expected [T,...]");
  const int frames = features.dim(0);
  if (frames < 2) throw ValidationError("loss_temporal needs at least two frames");
  const std::size_t d = features.numel() / static_cast<std::size_t>(frames);
  const double* f = features.data().data();

  std::vector<double> norms(frames);
  for (int t = 0; t < frames; ++t) {
    double n2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) n2 += f[t * d + i] * f[t * d + i];
    norms[t] = std::sqrt(n2);
  }
  const int pairs = frames - 1;
  std::vector<double> cosines(pairs, 0.0);
  std::vector<bool> valid(pairs, false);
  double total = 0.0;
  for (int t = 0; t < pairs; ++t) {
    if (norms[t] == 0.0 || norms[t + 1] == 0.0) {
      warn("temporal loss: zero-norm frame feature; treating cosine as 0");
      continue;
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += f[t * d + i] * f[(t + 1) * d + i];
    cosines[t] = dot / (norms[t] * norms[t + 1]);
    valid[t] = true;
    total += cosines[t];
  }
  auto fn = features.node();
  return detail::make_result(Shape{1}, {1.0 - total / pairs}, {features}, [=](const std::vector<double>& g) {
    auto& gf = fn->grad_buffer();
    const double* x = fn->data.data();
    const double s = -g[0] / pairs;
    for (int t = 0; t < pairs; ++t) {
      if (!valid[t]) continue;
      const double na = norms[t], nb = norms[t + 1], c = cosines[t];
      const double* a = x + t * d;
      const double* b = x + (t + 1) * d;
      double* ga = gf.data() + t * d;
      double* gb = gf.data() + (t + 1) * d;
      for (std::size_t i = 0; i < d; ++i) {
        ga[i] += s * (b[i] / (na * nb) - c * a[i] / (na * na));
        gb[i] += s * (a[i] / (na * nb) - c * b[i] / (nb * nb));
      }
    }
  });
}

Tensor loss_feature(const Tensor& student, const Tensor& teacher) {
  if (student.shape() != teacher.shape()) {
    throw ShapeError("loss_feature: shape mismatch " + shape_str(student.shape()) + " vs " + shape_str(teacher.shape()));
  }
  return ops::mse(student, teacher.detach());
}

Tensor loss_prediction(const Tensor& student_fg, const Tensor& teacher_fg) {
  if (student_fg.shape() != teacher_fg.shape()) {
    throw ShapeError("loss_prediction: shape mismatch " + shape_str(student_fg.shape()) + " vs " +
                     shape_str(teacher_fg.shape()));
  }
  return ops::mse(student_fg, teacher_fg.detach());
}

Tensor loss_prediction(const SegPrediction& student, const SegPrediction& teacher) {
  return loss_prediction(student.foreground(), teacher.foreground());
}

Tensor total_loss(const Tensor& temporal, const Tensor& feature, const Tensor& prediction, const LossWeights& w) {
  w.validate();
  for (const Tensor* t : {&temporal, &feature, &prediction}) {
    if (t->numel() != 1 || !std::isfinite(t->item())) throw NumericError("loss component is not a finite scalar");
  }
  return ops::add(ops::add(ops::scale(temporal, w.temporal), ops::scale(feature, w.feature)),
                  ops::scale(prediction, w.prediction));
}

TeacherStudentPair TeacherStudentPair::from_image_model(const ModelState& image_model, std::uint64_t seed) {
  TeacherStudentPair pair{image_model, image_model};
  if (pair.teacher.config.temporal_unit) throw ConfigError("teacher must be an image model without a temporal unit");
  pair.teacher.set_frozen("", true);
  pair.student.set_frozen("", false);
  attach_temporal_unit(pair.student, seed);
  pair.student.set_frozen("head.", true);
  return pair;
}

namespace {

void check_frozen(const ModelState& model, std::string_view prefix, const char* what) {
  for (const auto& p : model.parameters()) {
    if (std::string_view(p.name).substr(0, prefix.size()) == prefix && (!p.frozen || p.value.requires_grad())) {
      throw FreezeViolation(std::string(what) + " parameter '" + p.name + "' is not frozen");
    }
  }
}

}  // namespace

RelearnResult relearn(const TeacherStudentPair& pair, const VideoClip& clip, const RelearnConfig& cfg,
                      const RelearnCallback& on_step) {
  cfg.weights.validate();
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw ConfigError("relearn: batch_size >= 1 and epochs >= 0 required");
  if (cfg.lr < 0.0) throw ConfigError("relearn: lr must be >= 0");
  if (!pair.student.config.temporal_unit) throw ConfigError("relearn: student has no temporal unit");
  check_frozen(pair.teacher, "", "teacher");
  check_frozen(pair.student, "head.", "student head");

  const ModelState& teacher = pair.teacher;
  RelearnResult result{pair.student, {}, 0, 0.0};
  ModelState& student = result.student;
  const auto teacher_before = teacher.parameter_bytes();
  const auto head_before = student.parameter_bytes("head.");

  const Episode episode = clip_to_episode(clip);
  const int first = clip.annotated_prefix();
  const auto windows = relearn_windows(first, clip.num_query_frames(), cfg.batch_size);
  Sgd sgd(cfg.lr);

  bool stop = false;
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    for (const auto& window : windows) {
      if (cfg.max_iterations >= 0 && result.iterations >= cfg.max_iterations) {
        stop = true;
        break;
      }
      window.validate();
      std::vector<Image> frames;
      for (int t : window.frame_indices) frames.push_back(episode.query[static_cast<std::size_t>(t - first)].image);
      const EpisodeBatch batch = make_batch(episode.support, frames);

      student.zero_grad();
      const ForwardOutputs s_out = forward_batch(student, batch, true);
      ForwardOutputs t_out;
      {
        NoGradGuard no_grad;
        t_out = forward_batch(teacher, batch, false);
      }
      const bool use_fusion_tap = cfg.feature_tap == FeatureTap::kFusion;
      const Tensor lt = frames.size() >= 2 ? loss_temporal(s_out.head_input.data) : Tensor::scalar(0.0);
      const Tensor lf = loss_feature(use_fusion_tap ? s_out.fused.data : s_out.neck.data,
                                     use_fusion_tap ? t_out.fused.data : t_out.neck.data);
      const Tensor lp = loss_prediction(s_out.prediction, t_out.prediction);
      for (const Tensor* t : {&lt, &lf, &lp}) {
        if (!std::isfinite(t->item())) {
          throw NumericError("relearn: non-finite loss at iteration " + std::to_string(result.iterations));
        }
      }
      const Tensor loss = total_loss(lt, lf, lp, cfg.weights);

      RelearnLogEntry entry{result.iterations, lt.item(), lf.item(), lp.item(), loss.item()};
      if (entry.total < cfg.early_stop) {
        result.log.push_back(entry);
        if (on_step) on_step(entry);
        stop = true;
        break;
      }
      loss.backward();
      for (const auto& p : teacher.parameters()) {
        for (double g : p.value.grad()) result.max_teacher_grad = std::max(result.max_teacher_grad, std::abs(g));
      }
      sgd.step(student);
      ++result.iterations;
      result.log.push_back(entry);
      if (on_step) on_step(entry);
    }
  }
  student.zero_grad();

  if (teacher.parameter_bytes() != teacher_before) throw FreezeViolation("teacher parameters changed during relearning");
  if (student.parameter_bytes("head.") != head_before) {
    throw FreezeViolation("student head parameters changed during relearning");
  }
  if (result.max_teacher_grad != 0.0) throw FreezeViolation("gradient reached the teacher");
  student.metadata["phase"] = "relearned";
  student.metadata["relearn_iterations"] = result.iterations;
  student.metadata["lambda"] = {cfg.weights.temporal, cfg.weights.feature, cfg.weights.prediction};
  return result;
}

SegPrediction infer_video_relearned(const VideoClip& clip, const ModelState& student, int window) {
  NoGradGuard no_grad;
  const Episode episode = clip_to_episode(clip);
  const int first = clip.annotated_prefix();
  std::vector<Tensor> logits, probs;
  for (const auto& w : inference_windows(first, clip.num_query_frames(), window)) {
    std::vector<Image> frames;
    for (int t : w.frame_indices) frames.push_back(episode.query[static_cast<std::size_t>(t - first)].image);
    const SegPrediction p = forward_batch(student, make_batch(episode.support, frames), true).prediction;
    logits.push_back(p.logits);
    probs.push_back(p.probs);
  }
  return {ops::concat_batch(logits), ops::concat_batch(probs)};
}

}  // namespace fsvos
