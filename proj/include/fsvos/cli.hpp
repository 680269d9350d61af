#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fsvos/evaluation.hpp"
#include "fsvos/run_config.hpp"

namespace fsvos::cli {

// Process exit codes.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

/// Maps the active exception to an exit code and prints "error: ..." to err.
int exit_code_for_current_exception(std::ostream& err);

/// Writes the dataset to paths.dataset, or <output>/dataset when unset.
std::filesystem::path gen_data(const RunConfig& cfg, std::ostream& log);

struct TrainOptions {
  std::optional<int> iterations;  // overrides adam_iterations, sgd_iterations -> 0
  std::filesystem::path resume;   // continue from this checkpoint
};

/// Phase-1 training. Writes <output>/image_model (checkpoint) and
/// <output>/train_loss.csv. Returns the checkpoint directory.
std::filesystem::path train_image(const RunConfig& cfg, const TrainOptions& opts, std::ostream& log);

/// Clips used by relearn/eval: loaded from paths.dataset when set, otherwise
/// clips_per_class clips per novel class rendered from the config.
struct NamedClip {
  std::string id;
  VideoClip clip;
};
std::vector<NamedClip> select_clips(const RunConfig& cfg);

struct RelearnOptions {
  std::filesystem::path checkpoint;  // phase-1 checkpoint (default paths.checkpoint)
  int clip = 0;                      // index into select_clips()
};

/// Phase-2 relearning on one clip. Writes <output>/relearned/<clip> with the
/// freeze report and source hash in its metadata, plus relearn_log.csv.
std::filesystem::path relearn_clip(const RunConfig& cfg, const RelearnOptions& opts, std::ostream& log);

enum class EvalMode { kNaive, kRelearned };

struct EvalOptions {
  std::filesystem::path checkpoint;
  EvalMode mode = EvalMode::kNaive;
  std::vector<int> clips;  // empty = all
};

/// Scores every selected clip. Relearned mode with a phase-1 checkpoint
/// relearns each clip first; with a relearned checkpoint it is used as is.
/// Writes <output>/eval_<mode>/metrics.csv and overlays/<clip>/frame_<t>.png.
std::vector<FrameScore> eval(const RunConfig& cfg, const EvalOptions& opts, std::ostream& log);

/// Loss on/off table. Trains a phase-1 model first when no checkpoint is
/// given. Writes <output>/ablation.csv and ablation.json.
AblationTable ablate(const RunConfig& cfg, const std::filesystem::path& checkpoint, std::ostream& log);

}  // namespace fsvos::cli
