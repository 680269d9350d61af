#include "fsvos/dataset_store.hpp"

#include <cstdio>
#include <fstream>

#include "fsvos/errors.hpp"
#include "fsvos/image_io.hpp"

namespace fsvos {

namespace {

namespace fs = std::filesystem;

std::string numbered(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%04d.png", prefix, i);
  return buf;
}

}  // namespace

nlohmann::json write_dataset(const SynthConfig& cfg, int images_per_class, int clips_per_class, const fs::path& dir) {
  cfg.validate();
  if (images_per_class < 0 || clips_per_class < 0) throw ConfigError("dataset counts must be >= 0");
  fs::create_directories(dir);

  nlohmann::json images = nlohmann::json::array();
  for (int c : cfg.base_class_ids()) {
    const std::string name = class_name(c);
    fs::create_directories(dir / "images" / name);
    fs::create_directories(dir / "masks" / name);
    for (int i = 0; i < images_per_class; ++i) {
      const LabeledImage s = generate_image(cfg, c, i);
      const std::string file = numbered("", i);
      write_png(dir / "images" / name / file, s.image);
      write_png(dir / "masks" / name / file, s.mask);
      images.push_back({{"class", name}, {"image", "images/" + name + "/" + file}, {"mask", "masks/" + name + "/" + file}});
    }
  }

  nlohmann::json clips = nlohmann::json::array();
  for (int c : cfg.novel_class_ids()) {
    const std::string name = class_name(c);
    for (int k = 0; k < clips_per_class; ++k) {
      const VideoClip clip = generate_video_clip(cfg, c, k);
      const std::string rel = "clips/" + name + "/" + numbered("", k).substr(0, 4);
      fs::create_directories(dir / rel);
      const auto access = grant_evaluation_access();
      for (int t = 0; t < clip.num_frames(); ++t) {
        write_png(dir / rel / numbered("frame_", t), clip.frame(t));
        write_png(dir / rel / numbered("mask_", t), clip.ground_truth(t, access));
      }
      clips.push_back({{"class", name}, {"dir", rel}, {"frames", clip.num_frames()}});
    }
  }

  nlohmann::json manifest = {{"format_version", 1},
                             {"seed", cfg.seed},
                             {"height", cfg.height},
                             {"width", cfg.width},
                             {"channels", cfg.channels},
                             {"base_classes", cfg.base_classes},
                             {"novel_classes", cfg.novel_classes},
                             {"images_per_class", images_per_class},
                             {"clips_per_class", clips_per_class},
                             {"frames_per_clip", cfg.frames_per_clip},
                             {"annotated_prefix", cfg.annotated_prefix},
                             {"motion_step", cfg.motion_step},
                             {"noise_std", cfg.noise_std},
                             {"images", images},
                             {"clips", clips}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
  return manifest;
}

nlohmann::json read_dataset_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("dataset manifest not found in " + dir.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed dataset manifest: " + std::string(e.what()));
  }
}

std::vector<LabeledImage> load_image_dataset(const fs::path& dir) {
  const auto manifest = read_dataset_manifest(dir);
  std::vector<LabeledImage> out;
  for (const auto& e : manifest.at("images")) {
    LabeledImage s{read_png_image(dir / e.at("image").get<std::string>()),
                   read_png_mask(dir / e.at("mask").get<std::string>()),
                   class_id_from_name(e.at("class").get<std::string>())};
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<VideoClip> load_clips(const fs::path& dir) {
  const auto manifest = read_dataset_manifest(dir);
  const int prefix = manifest.at("annotated_prefix").get<int>();
  std::vector<VideoClip> out;
  for (const auto& e : manifest.at("clips")) {
    const fs::path clip_dir = dir / e.at("dir").get<std::string>();
    std::vector<Image> frames;
    std::vector<Mask> masks;
    for (int t = 0; t < e.at("frames").get<int>(); ++t) {
      frames.push_back(read_png_image(clip_dir / numbered("frame_", t)));
      masks.push_back(read_png_mask(clip_dir / numbered("mask_", t)));
    }
    out.emplace_back(std::move(frames), std::move(masks), prefix, class_id_from_name(e.at("class").get<std::string>()));
  }
  return out;
}

}  // namespace fsvos
