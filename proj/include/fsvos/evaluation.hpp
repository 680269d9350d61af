#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "fsvos/data.hpp"
#include "fsvos/metrics.hpp"
#include "fsvos/relearn.hpp"
#include "fsvos/segmenter.hpp"

namespace fsvos {

struct FrameScore {
  std::string clip_id;
  int frame_id = 0;  // index within the clip
  SegScore score;
};

/// Scores the [T-N,...] prediction of a clip against its query-frame truth.
std::vector<FrameScore> score_clip(const std::string& clip_id, const VideoClip& clip, const SegPrediction& prediction);

ScoreSummary summarize(const std::vector<FrameScore>& rows);

/// CSV with header clip_id,frame_id,dice,fg_iou,bg_iou,fb_iou and one
/// trailing summary row per label (clip_id = "summary:<label>", frame_id = count).
void write_scores_csv(std::ostream& out, const std::vector<FrameScore>& rows, const std::string& label);

/// One line of the loss on/off table.
struct AblationRow {
  std::string name;
  bool temporal = false;
  bool feature = false;
  bool prediction = false;
  bool relearned = false;  // false for the per-frame baseline
  ScoreSummary summary;
  bool collapse_flag = false;  // mean Dice below half of the baseline
};

struct AblationTable {
  std::vector<AblationRow> rows;  // baseline, w/o L_t, w/o L_f, w/o L_p, full
  const AblationRow& row(const std::string& name) const;
};

struct AblationSettings {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int clips_per_seed = 5;
  SynthConfig synth;  // clip geometry; the seed field is replaced per run seed
  RelearnConfig relearn;
  int window = 4;
};

using AblationProgress = std::function<void(const std::string& row, std::uint64_t seed, int clip, double dice)>;

/// Per-frame baseline plus four relearning variants over the same clips.
/// Clip j of seed s is novel class j mod |novel| rendered with a seed derived
/// from s; the temporal unit is initialized from s as well. Deterministic.
AblationTable run_ablation(const ModelState& image_model, const AblationSettings& settings,
                           const AblationProgress& progress = {});

void write_ablation_csv(std::ostream& out, const AblationTable& table);
void print_ablation_table(std::ostream& out, const AblationTable& table);

}  // namespace fsvos
