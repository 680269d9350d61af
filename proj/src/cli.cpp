#include "fsvos/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "fsvos/checkpoint.hpp"
#include "fsvos/dataset_store.hpp"
#include "fsvos/errors.hpp"
#include "fsvos/image_io.hpp"

namespace fsvos::cli {

namespace fs = std::filesystem;

int exit_code_for_current_exception(std::ostream& err) {
  try {
    throw;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

fs::path prepare_output(const RunConfig& cfg) {
  const fs::path out = cfg.output_path();
  fs::create_directories(out);
  return out;
}

fs::path resolve_checkpoint(const RunConfig& cfg, const fs::path& given) {
  const fs::path p = given.empty() ? fs::path(cfg.checkpoint_path) : given;
  if (p.empty()) throw ConfigError("no checkpoint given (use --checkpoint or paths.checkpoint)");
  if (!fs::exists(p / "manifest.json")) throw IoError("checkpoint not found: " + p.string());
  return p;
}

std::vector<LabeledImage> training_images(const RunConfig& cfg) {
  if (!cfg.dataset_path.empty()) return load_image_dataset(cfg.dataset_path);
  return generate_image_dataset(cfg.synth, cfg.images_per_class);
}

std::string safe_id(std::string id) {
  for (char& c : id)
    if (c == '/') c = '_';
  return id;
}

}  // namespace

fs::path gen_data(const RunConfig& cfg, std::ostream& log) {
  const fs::path dir = cfg.dataset_path.empty() ? prepare_output(cfg) / "dataset" : fs::path(cfg.dataset_path);
  const auto manifest = write_dataset(cfg.synth, cfg.images_per_class, cfg.clips_per_class, dir);
  log << "wrote " << manifest.at("images").size() << " images and " << manifest.at("clips").size() << " clips to "
      << dir.string() << '\n';
  return dir;
}

fs::path train_image(const RunConfig& cfg, const TrainOptions& opts, std::ostream& log) {
  Phase1Config p1 = cfg.phase1;
  if (opts.iterations) {
    if (*opts.iterations < 0) throw ConfigError("--iterations must be >= 0");
    p1.adam_iterations = *opts.iterations;
    p1.sgd_iterations = 0;
  }

  ModelState init;
  std::string source_hash;
  if (!opts.resume.empty()) {
    init = load_checkpoint(resolve_checkpoint(cfg, opts.resume));
    source_hash = checkpoint_hash(opts.resume);
    const int done = init.metadata.value("iterations_completed", 0);
    const int adam_left = std::max(0, p1.adam_iterations - done);
    const int sgd_done = std::max(0, done - p1.adam_iterations);
    p1.sgd_iterations = std::max(0, p1.sgd_iterations - sgd_done);
    p1.adam_iterations = adam_left;
    p1.start_iteration = done;
    log << "resuming at iteration " << done << '\n';
  } else {
    init = initialize_model(cfg.model, cfg.init_seed());
  }

  const fs::path out = prepare_output(cfg);
  std::ofstream curve(out / "train_loss.csv", opts.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!curve) throw IoError("cannot write " + (out / "train_loss.csv").string());
  if (opts.resume.empty()) curve << "iteration,loss\n";

  const auto images = training_images(cfg);
  const int total = p1.adam_iterations + p1.sgd_iterations;
  const Phase1Result result = train_phase1(images, init, p1, [&](int it, double loss) {
    curve << it << ',' << std::setprecision(17) << loss << '\n';
    if ((it + 1) % 100 == 0 || it + 1 == p1.start_iteration + total) {
      log << "iteration " << it + 1 << " loss " << loss << '\n';
    }
  });

  ModelState model = result.model;
  model.metadata["seed"] = cfg.seed;
  if (!source_hash.empty()) model.metadata["source_checkpoint"] = source_hash;
  const fs::path dir = out / "image_model";
  const std::string hash = save_checkpoint(model, dir);
  write_json(out / "config.json", run_config_to_json(cfg));
  log << "checkpoint " << dir.string() << " sha256 " << hash << '\n';
  return dir;
}

std::vector<NamedClip> select_clips(const RunConfig& cfg) {
  std::vector<NamedClip> out;
  if (!cfg.dataset_path.empty()) {
    const auto manifest = read_dataset_manifest(cfg.dataset_path);
    auto clips = load_clips(cfg.dataset_path);
    for (std::size_t i = 0; i < clips.size(); ++i) {
      out.push_back({manifest.at("clips").at(i).at("dir").get<std::string>(), std::move(clips[i])});
    }
    return out;
  }
  for (int c : cfg.synth.novel_class_ids()) {
    for (int k = 0; k < cfg.clips_per_class; ++k) {
      out.push_back({"clips/" + class_name(c) + "/" + std::to_string(k), generate_video_clip(cfg.synth, c, k)});
    }
  }
  return out;
}

fs::path relearn_clip(const RunConfig& cfg, const RelearnOptions& opts, std::ostream& log) {
  const fs::path ckpt = resolve_checkpoint(cfg, opts.checkpoint);
  const ModelState image_model = load_checkpoint(ckpt);
  if (image_model.config.temporal_unit) throw ConfigError("relearn expects a phase-1 checkpoint");
  auto clips = select_clips(cfg);
  if (opts.clip < 0 || opts.clip >= static_cast<int>(clips.size())) {
    throw ConfigError("clip index " + std::to_string(opts.clip) + " out of range (" + std::to_string(clips.size()) +
                      " clips)");
  }
  const NamedClip& nc = clips[static_cast<std::size_t>(opts.clip)];

  const fs::path out = prepare_output(cfg);
  std::ofstream csv(out / ("relearn_log_" + safe_id(nc.id) + ".csv"), std::ios::trunc);
  csv << "iteration,L_t,L_f,L_p,total\n" << std::setprecision(17);
  const auto pair = TeacherStudentPair::from_image_model(image_model, cfg.temporal_seed());
  const RelearnResult r = relearn(pair, nc.clip, cfg.phase2, [&](const RelearnLogEntry& e) {
    csv << e.iteration << ',' << e.temporal << ',' << e.feature << ',' << e.prediction << ',' << e.total << '\n';
  });

  ModelState student = r.student;
  const auto& w = cfg.phase2.weights;
  student.metadata["source_checkpoint"] = checkpoint_hash(ckpt);
  student.metadata["clip"] = nc.id;
  student.metadata["lambda3_zero"] = w.prediction == 0.0;
  student.metadata["freeze_report"] = {{"teacher_byte_identical", true},
                                       {"student_head_byte_identical", true},
                                       {"max_teacher_grad", r.max_teacher_grad}};
  const fs::path dir = out / "relearned" / safe_id(nc.id);
  const std::string hash = save_checkpoint(student, dir);
  log << "relearned " << nc.id << " for " << r.iterations << " iterations"
      << (w.prediction == 0.0 ? " [lambda3=0: prediction consistency disabled]" : "") << '\n';
  log << "freeze contract: teacher byte-identical, student head byte-identical, max |teacher grad| = "
      << r.max_teacher_grad << '\n';
  log << "checkpoint " << dir.string() << " sha256 " << hash << '\n';
  return dir;
}

std::vector<FrameScore> eval(const RunConfig& cfg, const EvalOptions& opts, std::ostream& log) {
  const fs::path ckpt = resolve_checkpoint(cfg, opts.checkpoint);
  const ModelState model = load_checkpoint(ckpt);
  auto clips = select_clips(cfg);
  std::vector<int> chosen = opts.clips;
  if (chosen.empty())
    for (int i = 0; i < static_cast<int>(clips.size()); ++i) chosen.push_back(i);

  const std::string mode = opts.mode == EvalMode::kNaive ? "naive" : "relearned";
  const fs::path out = prepare_output(cfg) / ("eval_" + mode);
  fs::create_directories(out);
  std::vector<FrameScore> rows;
  for (int idx : chosen) {
    if (idx < 0 || idx >= static_cast<int>(clips.size())) throw ConfigError("clip index out of range");
    const NamedClip& nc = clips[static_cast<std::size_t>(idx)];
    SegPrediction pred;
    if (opts.mode == EvalMode::kNaive) {
      pred = infer_video_naive(nc.clip, model);
    } else if (model.config.temporal_unit) {
      pred = infer_video_relearned(nc.clip, model, cfg.eval_window);
    } else {
      const auto pair = TeacherStudentPair::from_image_model(model, cfg.temporal_seed());
      pred = infer_video_relearned(nc.clip, relearn(pair, nc.clip, cfg.phase2).student, cfg.eval_window);
    }
    auto clip_rows = score_clip(nc.id, nc.clip, pred);
    if (cfg.eval_overlays) {
      const fs::path odir = out / "overlays" / safe_id(nc.id);
      fs::create_directories(odir);
      const auto masks = pred.masks();
      for (std::size_t i = 0; i < masks.size(); ++i) {
        const int t = clip_rows[i].frame_id;
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.png", t);
        write_png(odir / name, overlay(nc.clip.frame(t), masks[i]));
      }
    }
    log << nc.id << " dice " << summarize(clip_rows).mean.dice << '\n';
    rows.insert(rows.end(), clip_rows.begin(), clip_rows.end());
  }
  std::ofstream csv(out / "metrics.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (out / "metrics.csv").string());
  write_scores_csv(csv, rows, mode);
  const ScoreSummary s = summarize(rows);
  log << mode << ": mean dice " << s.mean.dice << " fg_iou " << s.mean.fg_iou << " fb_iou " << s.mean.fb_iou << " over "
      << s.count << " frames\n";
  return rows;
}

AblationTable ablate(const RunConfig& cfg, const fs::path& checkpoint, std::ostream& log) {
  ModelState image_model;
  const fs::path given = checkpoint.empty() ? fs::path(cfg.checkpoint_path) : checkpoint;
  if (given.empty()) {
    log << "no checkpoint given; training a phase-1 model first\n";
    image_model = load_checkpoint(train_image(cfg, {}, log));
  } else {
    image_model = load_checkpoint(resolve_checkpoint(cfg, given));
  }

  AblationSettings settings;
  settings.seeds = cfg.ablation_seeds;
  settings.clips_per_seed = cfg.ablation_clips_per_seed;
  settings.synth = cfg.synth;
  settings.relearn = cfg.phase2;
  settings.window = cfg.eval_window;
  const AblationTable table = run_ablation(image_model, settings, [&](const std::string& row, std::uint64_t seed,
                                                                      int clip, double d) {
    log << "seed " << seed << " clip " << clip << ' ' << row << " dice " << d << '\n';
  });

  const fs::path out = prepare_output(cfg);
  std::ofstream csv(out / "ablation.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (out / "ablation.csv").string());
  write_ablation_csv(csv, table);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : table.rows) {
    j.push_back({{"row", r.name},
                 {"L_t", r.temporal},
                 {"L_f", r.feature},
                 {"L_p", r.prediction},
                 {"dice", r.summary.mean.dice},
                 {"fg_iou", r.summary.mean.fg_iou},
                 {"fb_iou", r.summary.mean.fb_iou},
                 {"frames", r.summary.count},
                 {"collapse_flag", r.collapse_flag}});
  }
  write_json(out / "ablation.json", j);
  print_ablation_table(log, table);
  return table;
}

}  // namespace fsvos::cli
