#include "fsvos/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "fsvos/errors.hpp"

namespace fsvos {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::string_view section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("'" + std::string(section) + "' must be an object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!keys.count(key)) throw ConfigError("unknown key '" + key + "' in '" + std::string(section) + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

const char* tap_name(FeatureTap tap) { return tap == FeatureTap::kNeck ? "neck" : "fusion"; }

}  // namespace

void RunConfig::validate() const {
  synth.validate();
  model.validate();
  if (images_per_class < 2) throw ConfigError("data.images_per_class must be >= 2");
  if (clips_per_class < 0) throw ConfigError("data.clips_per_class must be >= 0");
  if (phase1.adam_iterations < 0 || phase1.sgd_iterations < 0) throw ConfigError("phase1 iterations must be >= 0");
  if (phase1.adam_lr < 0 || phase1.sgd_lr < 0 || phase2.lr < 0) {
    throw ConfigError("learning rates must be > 0 (or exactly 0 for a frozen run)");
  }
  if (phase1.batch_size < 1 || phase1.shots < 1 || phase1.queries < 1) {
    throw ConfigError("phase1 batch_size, shots and queries must be >= 1");
  }
  if (phase1.shots + phase1.queries > images_per_class) {
    throw ConfigError("phase1 shots + queries exceed images_per_class");
  }
  if (phase1.dice_weight < 0) throw ConfigError("phase1.dice_weight must be >= 0");
  if (phase2.batch_size < 2) throw ConfigError("phase2.batch_size must be >= 2");
  if (phase2.epochs < 0) throw ConfigError("phase2.epochs must be >= 0");
  phase2.weights.validate();
  if (eval_window < 1) throw ConfigError("eval.window must be >= 1");
  if (ablation_seeds.empty() || ablation_clips_per_seed < 1) {
    throw ConfigError("ablation needs at least one seed and one clip per seed");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

std::filesystem::path RunConfig::output_path() const {
  std::filesystem::path p(output_dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) return std::filesystem::path(root) / p;
  }
  return p;
}

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  try {
    check_keys(j, "<root>", {"seed", "output_dir", "data", "model", "phase1", "phase2", "eval", "ablation", "paths"});
    read(j, "seed", c.seed);
    read(j, "output_dir", c.output_dir);

    if (j.contains("data")) {
      const json& d = j.at("data");
      check_keys(d, "data", {"height", "width", "channels", "base_classes", "novel_classes", "images_per_class",
                             "clips_per_class", "frames_per_clip", "annotated_prefix", "motion_step", "noise_std"});
      read(d, "height", c.synth.height);
      read(d, "width", c.synth.width);
      read(d, "channels", c.synth.channels);
      read(d, "base_classes", c.synth.base_classes);
      read(d, "novel_classes", c.synth.novel_classes);
      read(d, "images_per_class", c.images_per_class);
      read(d, "clips_per_class", c.clips_per_class);
      read(d, "frames_per_clip", c.synth.frames_per_clip);
      read(d, "annotated_prefix", c.synth.annotated_prefix);
      read(d, "motion_step", c.synth.motion_step);
      read(d, "noise_std", c.synth.noise_std);
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      check_keys(m, "model", {"backbone", "neck", "support_mid", "temporal_kernel"});
      if (m.contains("backbone")) {
        check_keys(m.at("backbone"), "model.backbone",
                   {"in_channels", "widths", "strides", "mid_tap_stage", "high_tap_stage", "frozen_stages"});
      }
      c.model = m.get<ModelConfig>();
    }
    if (j.contains("phase1")) {
      const json& p = j.at("phase1");
      check_keys(p, "phase1", {"adam_iterations", "adam_lr", "sgd_iterations", "sgd_lr", "batch_size", "shots",
                               "queries", "dice_loss", "dice_weight"});
      read(p, "adam_iterations", c.phase1.adam_iterations);
      read(p, "adam_lr", c.phase1.adam_lr);
      read(p, "sgd_iterations", c.phase1.sgd_iterations);
      read(p, "sgd_lr", c.phase1.sgd_lr);
      read(p, "batch_size", c.phase1.batch_size);
      read(p, "shots", c.phase1.shots);
      read(p, "queries", c.phase1.queries);
      read(p, "dice_loss", c.phase1.dice_loss);
      read(p, "dice_weight", c.phase1.dice_weight);
    }
    if (j.contains("phase2")) {
      const json& p = j.at("phase2");
      check_keys(p, "phase2", {"lr", "batch_size", "epochs", "early_stop", "max_iterations", "lambda", "feature_tap"});
      read(p, "lr", c.phase2.lr);
      read(p, "batch_size", c.phase2.batch_size);
      read(p, "epochs", c.phase2.epochs);
      read(p, "early_stop", c.phase2.early_stop);
      read(p, "max_iterations", c.phase2.max_iterations);
      if (p.contains("lambda")) {
        const auto l = p.at("lambda").get<std::vector<double>>();
        if (l.size() != 3) throw ConfigError("phase2.lambda must have three entries");
        c.phase2.weights = {l[0], l[1], l[2]};
      }
      if (p.contains("feature_tap")) {
        const auto tap = p.at("feature_tap").get<std::string>();
        if (tap == "neck") c.phase2.feature_tap = FeatureTap::kNeck;
        else if (tap == "fusion") c.phase2.feature_tap = FeatureTap::kFusion;
        else throw ConfigError("unknown feature_tap '" + tap + "'");
      }
    }
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      check_keys(e, "eval", {"window", "overlays"});
      read(e, "window", c.eval_window);
      read(e, "overlays", c.eval_overlays);
    }
    if (j.contains("ablation")) {
      const json& a = j.at("ablation");
      check_keys(a, "ablation", {"seeds", "clips_per_seed"});
      read(a, "seeds", c.ablation_seeds);
      read(a, "clips_per_seed", c.ablation_clips_per_seed);
    }
    if (j.contains("paths")) {
      const json& p = j.at("paths");
      check_keys(p, "paths", {"dataset", "checkpoint"});
      read(p, "dataset", c.dataset_path);
      read(p, "checkpoint", c.checkpoint_path);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  c.synth.seed = c.data_seed();
  c.phase1.seed = c.sampling_seed();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

json run_config_to_json(const RunConfig& c) {
  json model = c.model;
  model.erase("temporal_unit");
  return {{"seed", c.seed},
          {"output_dir", c.output_dir},
          {"data",
           {{"height", c.synth.height},
            {"width", c.synth.width},
            {"channels", c.synth.channels},
            {"base_classes", c.synth.base_classes},
            {"novel_classes", c.synth.novel_classes},
            {"images_per_class", c.images_per_class},
            {"clips_per_class", c.clips_per_class},
            {"frames_per_clip", c.synth.frames_per_clip},
            {"annotated_prefix", c.synth.annotated_prefix},
            {"motion_step", c.synth.motion_step},
            {"noise_std", c.synth.noise_std}}},
          {"model", model},
          {"phase1",
           {{"adam_iterations", c.phase1.adam_iterations},
            {"adam_lr", c.phase1.adam_lr},
            {"sgd_iterations", c.phase1.sgd_iterations},
            {"sgd_lr", c.phase1.sgd_lr},
            {"batch_size", c.phase1.batch_size},
            {"shots", c.phase1.shots},
            {"queries", c.phase1.queries},
            {"dice_loss", c.phase1.dice_loss},
            {"dice_weight", c.phase1.dice_weight}}},
          {"phase2",
           {{"lr", c.phase2.lr},
            {"batch_size", c.phase2.batch_size},
            {"epochs", c.phase2.epochs},
            {"early_stop", c.phase2.early_stop},
            {"max_iterations", c.phase2.max_iterations},
            {"lambda", {c.phase2.weights.temporal, c.phase2.weights.feature, c.phase2.weights.prediction}},
            {"feature_tap", tap_name(c.phase2.feature_tap)}}},
          {"eval", {{"window", c.eval_window}, {"overlays", c.eval_overlays}}},
          {"ablation", {{"seeds", c.ablation_seeds}, {"clips_per_seed", c.ablation_clips_per_seed}}},
          {"paths", {{"dataset", c.dataset_path}, {"checkpoint", c.checkpoint_path}}}};
}

}  // namespace fsvos
