#include "fsvos/evaluation.hpp"

#include <iomanip>
#include <ostream>

#include "fsvos/errors.hpp"

namespace fsvos {

std::vector<FrameScore> score_clip(const std::string& clip_id, const VideoClip& clip, const SegPrediction& prediction) {
  if (prediction.batch() != clip.num_query_frames()) {
    throw ShapeError("prediction covers " + std::to_string(prediction.batch()) + " frames, clip has " +
                     std::to_string(clip.num_query_frames()) + " query frames");
  }
  const auto access = grant_evaluation_access();
  const auto masks = prediction.masks();
  std::vector<FrameScore> rows;
  for (int i = 0; i < clip.num_query_frames(); ++i) {
    const int t = clip.annotated_prefix() + i;
    rows.push_back({clip_id, t, fb_iou(masks[static_cast<std::size_t>(i)], clip.ground_truth(t, access))});
  }
  return rows;
}

ScoreSummary summarize(const std::vector<FrameScore>& rows) {
  std::vector<SegScore> scores;
  scores.reserve(rows.size());
  for (const auto& r : rows) scores.push_back(r.score);
  return aggregate(scores);
}

namespace {

void csv_row(std::ostream& out, const std::string& id, std::size_t frame, const SegScore& s) {
  out << id << ',' << frame << ',' << std::setprecision(17) << s.dice << ',' << s.fg_iou << ',' << s.bg_iou << ','
      << s.fb_iou << '\n';
}

}  // namespace

void write_scores_csv(std::ostream& out, const std::vector<FrameScore>& rows, const std::string& label) {
  out << "clip_id,frame_id,dice,fg_iou,bg_iou,fb_iou\n";
  for (const auto& r : rows) csv_row(out, r.clip_id, static_cast<std::size_t>(r.frame_id), r.score);
  const ScoreSummary s = summarize(rows);
  csv_row(out, "summary:" + label, s.count, s.mean);
}

const AblationRow& AblationTable::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r;
  throw ConfigError("no ablation row named '" + name + "'");
}

AblationTable run_ablation(const ModelState& image_model, const AblationSettings& settings,
                           const AblationProgress& progress) {
  if (settings.seeds.empty() || settings.clips_per_seed < 1) throw ConfigError("ablation needs seeds and clips");
  struct Variant {
    const char* name;
    bool lt, lf, lp, relearned;
  };
  const std::vector<Variant> variants{{"baseline", false, false, false, false},
                                      {"without_temporal", false, true, true, true},
                                      {"without_feature", true, false, true, true},
                                      {"without_prediction", true, true, false, true},
                                      {"full", true, true, true, true}};
  std::vector<std::vector<FrameScore>> scores(variants.size());

  for (std::uint64_t seed : settings.seeds) {
    SynthConfig synth = settings.synth;
    synth.seed = derive_seed(seed, "data");
    const auto novel = synth.novel_class_ids();
    const TeacherStudentPair pair = TeacherStudentPair::from_image_model(image_model, derive_seed(seed, "temporal"));
    for (int j = 0; j < settings.clips_per_seed; ++j) {
      const int cls = novel[static_cast<std::size_t>(j) % novel.size()];
      const VideoClip clip = generate_video_clip(synth, cls, j);
      const std::string clip_id = "s" + std::to_string(seed) + "/" + class_name(cls) + "/" + std::to_string(j);
      for (std::size_t v = 0; v < variants.size(); ++v) {
        const Variant& var = variants[v];
        SegPrediction pred;
        if (!var.relearned) {
          pred = infer_video_naive(clip, image_model);
        } else {
          RelearnConfig rc = settings.relearn;
          rc.weights.temporal = var.lt ? settings.relearn.weights.temporal : 0.0;
          rc.weights.feature = var.lf ? settings.relearn.weights.feature : 0.0;
          rc.weights.prediction = var.lp ? settings.relearn.weights.prediction : 0.0;
          const RelearnResult r = relearn(pair, clip, rc);
          pred = infer_video_relearned(clip, r.student, settings.window);
        }
        auto rows = score_clip(clip_id, clip, pred);
        if (progress) {
          std::vector<FrameScore> one(rows);
          progress(var.name, seed, j, summarize(one).mean.dice);
        }
        scores[v].insert(scores[v].end(), rows.begin(), rows.end());
      }
    }
  }

  AblationTable table;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const Variant& var = variants[v];
    table.rows.push_back({var.name, var.lt, var.lf, var.lp, var.relearned, summarize(scores[v]), false});
  }
  const double baseline = table.rows.front().summary.mean.dice;
  for (auto& r : table.rows) r.collapse_flag = r.relearned && r.summary.mean.dice < 0.5 * baseline;
  return table;
}

void write_ablation_csv(std::ostream& out, const AblationTable& table) {
  out << "row,L_t,L_f,L_p,relearned,dice,fg_iou,bg_iou,fb_iou,frames,collapse_flag\n";
  for (const auto& r : table.rows) {
    out << r.name << ',' << r.temporal << ',' << r.feature << ',' << r.prediction << ',' << r.relearned << ','
        << std::setprecision(17) << r.summary.mean.dice << ',' << r.summary.mean.fg_iou << ','
        << r.summary.mean.bg_iou << ',' << r.summary.mean.fb_iou << ',' << r.summary.count << ','
        << r.collapse_flag << '\n';
  }
}

void print_ablation_table(std::ostream& out, const AblationTable& table) {
  const auto mark = [](bool on) { return on ? "  x  " : "     "; };
  out << "row                  L_t  L_f  L_p    Dice    FG-IoU  FB-IoU\n";
  for (const auto& r : table.rows) {
    out << std::left << std::setw(20) << r.name << mark(r.temporal) << mark(r.feature) << mark(r.prediction)
        << std::right << std::fixed << std::setprecision(4) << std::setw(7) << r.summary.mean.dice << std::setw(8)
        << r.summary.mean.fg_iou << std::setw(8) << r.summary.mean.fb_iou
        << (r.collapse_flag ? "  COLLAPSE (< 50% of baseline Dice)" : "") << '\n';
  }
  out.unsetf(std::ios::fixed);
}

}  // namespace fsvos
