#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsvos/data.hpp"
#include "fsvos/model_state.hpp"
#include "fsvos/relearn.hpp"
#include "fsvos/segmenter.hpp"

namespace fsvos {

/// Everything one CLI invocation needs. Loaded from a JSON file; every key is
/// optional and unknown keys are rejected. Schema (defaults shown):
///
///   {
///     "seed": 0,
///     "output_dir": "run",          // relative paths resolve under $FSVOS_OUTPUT_ROOT
///     "data": {"height": 64, "width": 64, "channels": 3,
///              "base_classes": [...], "novel_classes": [...],
///              "images_per_class": 200, "clips_per_class": 2,
///              "frames_per_clip": 16, "annotated_prefix": 1,
///              "motion_step": 2.0, "noise_std": 0.03},
///     "model": {"backbone": {...}, "neck": "light", "support_mid": "spatial",
///               "temporal_kernel": 3},
///     "phase1": {"adam_iterations": 2000, "adam_lr": 1e-4, "sgd_iterations": 0,
///                "sgd_lr": 1e-5, "batch_size": 8, "shots": 1, "queries": 1,
///                "dice_loss": false, "dice_weight": 1.0},
///     "phase2": {"lr": 1e-5, "batch_size": 4, "epochs": 20, "early_stop": 1e-5,
///                "max_iterations": -1, "lambda": [1, 1, 1], "feature_tap": "neck"},
///     "eval": {"window": 4, "overlays": true},
///     "ablation": {"seeds": [0, 1, 2, 3, 4], "clips_per_seed": 5},
///     "paths": {"dataset": "", "checkpoint": ""}
///   }
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "run";

  // synth.seed is derived from `seed`
  SynthConfig synth = [] {
    SynthConfig s;
    s.frames_per_clip = 16;
    return s;
  }();
  int images_per_class = 200;
  int clips_per_class = 2;

  ModelConfig model;
  Phase1Config phase1;  // phase1.seed is derived from `seed`
  RelearnConfig phase2;

  int eval_window = 4;
  bool eval_overlays = true;

  std::vector<std::uint64_t> ablation_seeds{0, 1, 2, 3, 4};
  int ablation_clips_per_seed = 5;

  std::string dataset_path;
  std::string checkpoint_path;

  /// Throws ConfigError on any invalid field.
  void validate() const;

  std::uint64_t data_seed() const { return derive_seed(seed, "data"); }
  std::uint64_t init_seed() const { return derive_seed(seed, "init"); }
  std::uint64_t sampling_seed() const { return derive_seed(seed, "sampling"); }
  std::uint64_t temporal_seed() const { return derive_seed(seed, "temporal"); }

  /// output_dir resolved against $FSVOS_OUTPUT_ROOT when relative.
  std::filesystem::path output_path() const;
};

/// Parses and validates. Throws ConfigError for malformed JSON, unknown keys,
/// wrong types, or invalid values.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);

constexpr const char* kOutputRootEnv = "FSVOS_OUTPUT_ROOT";

}  // namespace fsvos
