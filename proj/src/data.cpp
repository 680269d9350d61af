#include "fsvos/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <set>

#include "fsvos/errors.hpp"

namespace fsvos {

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  // FNV-1a over the stream name, folded into the seed, then splitmix64.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : stream) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = seed ^ (h + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](auto v) { return v != 0; }));
}

void validate_binary(const Mask& mask) {
  if (mask.values.size() != static_cast<std::size_t>(mask.height) * mask.width) {
    throw ValidationError("mask storage does not match its dimensions");
  }
  for (auto v : mask.values) {
    if (v > 1) throw ValidationError("mask is not binary (value " + std::to_string(v) + ")");
  }
}

void LabeledImage::validate() const {
  if (image.pixels.size() != static_cast<std::size_t>(image.channels) * image.height * image.width) {
    throw ValidationError("image storage does not match its dimensions");
  }
  if (mask.height != image.height || mask.width != image.width) {
    throw ValidationError("image and mask spatial dims differ");
  }
  validate_binary(mask);
}

void Episode::validate() const {
  if (support.empty() || query.empty()) throw ValidationError("episode needs N >= 1 and K >= 1");
  for (const auto& s : support) {
    if (s.class_id != class_id) throw ValidationError("support item of a different class");
    s.validate();
  }
  for (const auto& q : query) {
    if (q.class_id != class_id) throw ValidationError("query item of a different class");
    if (!query_masks_hidden) q.validate();
  }
}

const std::vector<std::string>& shape_family_names() {
  static const std::vector<std::string> kNames{"ellipse", "rectangle", "triangle", "cross",
                                               "ring",    "star",      "crescent"};
  return kNames;
}

int class_id_from_name(std::string_view name) {
  const auto& names = shape_family_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ConfigError("unknown shape class '" + std::string(name) + "'");
  return static_cast<int>(it - names.begin());
}

const std::string& class_name(int class_id) {
  const auto& names = shape_family_names();
  if (class_id < 0 || class_id >= static_cast<int>(names.size())) {
    throw ConfigError("unknown class id " + std::to_string(class_id));
  }
  return names[static_cast<std::size_t>(class_id)];
}

void SynthConfig::validate() const {
  if (height < 16 || width < 16) throw ConfigError("image size must be at least 16x16");
  if (channels < 1) throw ConfigError("channels must be >= 1");
  if (base_classes.empty()) throw ConfigError("no base classes");
  if (novel_classes.empty()) throw ConfigError("no novel classes");
  std::set<int> base;
  for (const auto& n : base_classes) base.insert(class_id_from_name(n));
  for (const auto& n : novel_classes) {
    if (base.count(class_id_from_name(n))) {
      throw ConfigError("class '" + n + "' is listed as both base and novel");
    }
  }
  if (annotated_prefix < 1) throw ConfigError("annotated_prefix must be >= 1");
  if (frames_per_clip < annotated_prefix + 1) {
    throw ConfigError("frames_per_clip must exceed annotated_prefix");
  }
  if (motion_step < 0.0) throw ConfigError("motion_step must be non-negative");
  if (noise_std < 0.0) throw ConfigError("noise_std must be non-negative");
}

std::vector<int> SynthConfig::base_class_ids() const {
  std::vector<int> ids;
  for (const auto& n : base_classes) ids.push_back(class_id_from_name(n));
  return ids;
}

std::vector<int> SynthConfig::novel_class_ids() const {
  std::vector<int> ids;
  for (const auto& n : novel_classes) ids.push_back(class_id_from_name(n));
  return ids;
}

namespace {

constexpr double kPi = std::numbers::pi;

struct ShapeGeometry {
  ShapeFamily family = ShapeFamily::kEllipse;
  double cx = 0.0, cy = 0.0;
  double radius = 1.0;
  double aspect = 1.0;
  double angle = 0.0;
  // Rectangles are axis-aligned on the pixel grid.
  int rect_w = 0, rect_h = 0;

  double extent_x() const { return family == ShapeFamily::kRectangle ? rect_w / 2.0 : radius; }
  double extent_y() const { return family == ShapeFamily::kRectangle ? rect_h / 2.0 : radius; }
};

bool point_in_polygon(const std::vector<std::pair<double, double>>& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

Mask rasterize(const ShapeGeometry& g, int height, int width) {
  Mask mask(height, width);
  if (g.family == ShapeFamily::kRectangle) {
    const int x0 = static_cast<int>(std::lround(g.cx - g.rect_w / 2.0));
    const int y0 = static_cast<int>(std::lround(g.cy - g.rect_h / 2.0));
    for (int y = std::max(0, y0); y < std::min(height, y0 + g.rect_h); ++y)
      for (int x = std::max(0, x0); x < std::min(width, x0 + g.rect_w); ++x) mask.at(y, x) = 1;
    return mask;
  }

  const double r = g.radius;
  const double ca = std::cos(g.angle), sa = std::sin(g.angle);
  std::vector<std::pair<double, double>> polygon;
  if (g.family == ShapeFamily::kTriangle) {
    for (int k = 0; k < 3; ++k) {
      const double phi = -kPi / 2 + k * 2 * kPi / 3;
      polygon.emplace_back(r * std::cos(phi), r * std::sin(phi));
    }
  } else if (g.family == ShapeFamily::kStar) {
    for (int k = 0; k < 10; ++k) {
      const double phi = -kPi / 2 + k * kPi / 5;
      const double rr = (k % 2 == 0) ? r : 0.55 * r;
      polygon.emplace_back(rr * std::cos(phi), rr * std::sin(phi));
    }
  }

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = x + 0.5 - g.cx;
      const double dy = y + 0.5 - g.cy;
      const double u = dx * ca + dy * sa;
      const double v = -dx * sa + dy * ca;
      bool inside = false;
      switch (g.family) {
        case ShapeFamily::kEllipse: {
          const double b = r * g.aspect;
          inside = (u * u) / (r * r) + (v * v) / (b * b) <= 1.0;
          break;
        }
        case ShapeFamily::kTriangle:
        case ShapeFamily::kStar:
          inside = point_in_polygon(polygon, u, v);
          break;
        case ShapeFamily::kCross: {
          const double half_arm = 0.3 * r;
          inside = (std::abs(u) <= r && std::abs(v) <= half_arm) ||
                   (std::abs(v) <= r && std::abs(u) <= half_arm);
          break;
        }
        case ShapeFamily::kRing: {
          const double d2 = u * u + v * v;
          inside = d2 <= r * r && d2 >= 0.16 * r * r;
          break;
        }
        case ShapeFamily::kCrescent: {
          const double d2 = u * u + v * v;
          const double ou = u - 0.5 * r;
          inside = d2 <= r * r && (ou * ou + v * v) > 0.5625 * r * r;
          break;
        }
        case ShapeFamily::kRectangle:
          break;
      }
      if (inside) mask.at(y, x) = 1;
    }
  }
  return mask;
}

struct Palette {
  std::vector<double> background;
  std::vector<double> foreground;
  // Two background sinusoids and one foreground stripe pattern.
  std::array<double, 3> bg_fx{}, bg_fy{}, bg_phase{};
  double fg_fx = 0.0, fg_fy = 0.0, fg_phase = 0.0;
};

Palette sample_palette(int channels, Rng& rng) {
  std::uniform_real_distribution<double> color(0.15, 0.85);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Palette p;
  p.background.resize(channels);
  p.foreground.resize(channels);
  for (auto& c : p.background) c = color(rng);
  // Resample until the object is visibly separated from the background.
  for (int attempt = 0; attempt < 100; ++attempt) {
    double dist = 0.0;
    for (int c = 0; c < channels; ++c) {
      p.foreground[c] = color(rng);
      dist = std::max(dist, std::abs(p.foreground[c] - p.background[c]));
    }
    if (dist >= 0.3) break;
  }
  for (int k = 0; k < 2; ++k) {
    const double freq = 1.0 / 16.0 + unit(rng) * (1.0 / 6.0 - 1.0 / 16.0);
    const double theta = unit(rng) * 2 * kPi;
    p.bg_fx[k] = freq * std::cos(theta);
    p.bg_fy[k] = freq * std::sin(theta);
    p.bg_phase[k] = unit(rng) * 2 * kPi;
  }
  const double freq = 0.2 + 0.15 * unit(rng);
  const double theta = unit(rng) * 2 * kPi;
  p.fg_fx = freq * std::cos(theta);
  p.fg_fy = freq * std::sin(theta);
  p.fg_phase = unit(rng) * 2 * kPi;
  return p;
}

Image paint(const Palette& p, const Mask& mask, int channels, double noise_std, Rng& noise_rng) {
  Image img(channels, mask.height, mask.width);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int c = 0; c < channels; ++c) {
    const double channel_sign = (c % 2 == 0) ? 1.0 : -1.0;
    for (int y = 0; y < mask.height; ++y) {
      for (int x = 0; x < mask.width; ++x) {
        double v;
        if (mask.at(y, x)) {
          v = p.foreground[c] + 0.05 * std::sin(2 * kPi * (p.fg_fx * x + p.fg_fy * y) + p.fg_phase);
        } else {
          v = p.background[c];
          for (int k = 0; k < 2; ++k) {
            v += channel_sign * 0.06 *
                 std::sin(2 * kPi * (p.bg_fx[k] * x + p.bg_fy[k] * y) + p.bg_phase[k]);
          }
        }
        if (noise_std > 0.0) v += noise_std * noise(noise_rng);
        img.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

ShapeGeometry sample_geometry(ShapeFamily family, int height, int width, double radius_lo,
                              double radius_hi, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double side = std::min(height, width);
  ShapeGeometry g;
  g.family = family;
  g.radius = side * (radius_lo + (radius_hi - radius_lo) * unit(rng));
  g.aspect = 0.6 + 0.4 * unit(rng);
  g.angle = unit(rng) * 2 * kPi;
  if (family == ShapeFamily::kRectangle) {
    g.rect_w = std::max(2, static_cast<int>(std::lround(2 * g.radius * (0.7 + 0.3 * unit(rng)))));
    g.rect_h = std::max(2, static_cast<int>(std::lround(2 * g.radius * (0.7 + 0.3 * unit(rng)))));
  }
  const double ex = g.extent_x() + 1.0;
  const double ey = g.extent_y() + 1.0;
  g.cx = ex + unit(rng) * std::max(0.0, width - 2 * ex);
  g.cy = ey + unit(rng) * std::max(0.0, height - 2 * ey);
  return g;
}

// Radius as a fraction of the shorter image side.
constexpr double kImageRadiusLo = 0.14;
constexpr double kImageRadiusHi = 0.32;
constexpr double kClipRadiusLo = 0.30;
constexpr double kClipRadiusHi = 0.36;

}  // namespace

LabeledImage generate_image(const SynthConfig& cfg, int class_id, int index) {
  const std::string& name = class_name(class_id);
  const auto family = static_cast<ShapeFamily>(class_id);
  Rng rng(derive_seed(cfg.seed, "image/" + name + "/" + std::to_string(index)));
  const ShapeGeometry g =
      sample_geometry(family, cfg.height, cfg.width, kImageRadiusLo, kImageRadiusHi, rng);
  const Palette palette = sample_palette(cfg.channels, rng);
  LabeledImage out;
  out.mask = rasterize(g, cfg.height, cfg.width);
  out.image = paint(palette, out.mask, cfg.channels, cfg.noise_std, rng);
  out.class_id = class_id;
  return out;
}

std::vector<LabeledImage> generate_image_dataset(const SynthConfig& cfg, int n_per_class) {
  cfg.validate();
  if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
  std::vector<LabeledImage> out;
  const auto ids = cfg.base_class_ids();
  out.reserve(ids.size() * static_cast<std::size_t>(n_per_class));
  for (int id : ids)
    for (int i = 0; i < n_per_class; ++i) out.push_back(generate_image(cfg, id, i));
  return out;
}

EvaluationAccess grant_evaluation_access() { return EvaluationAccess{}; }

VideoClip::VideoClip(std::vector<Image> frames, std::vector<Mask> ground_truth, int annotated_prefix,
                     int class_id)
    : frames_(std::move(frames)),
      ground_truth_(std::move(ground_truth)),
      annotated_prefix_(annotated_prefix),
      class_id_(class_id) {
  if (frames_.size() != ground_truth_.size()) throw ValidationError("clip frame/mask count mismatch");
  if (annotated_prefix_ < 1 || num_frames() < annotated_prefix_ + 1) {
    throw ValidationError("clip needs T >= N + 1 with N >= 1");
  }
  for (std::size_t t = 0; t < frames_.size(); ++t) {
    if (frames_[t].height != ground_truth_[t].height || frames_[t].width != ground_truth_[t].width) {
      throw ValidationError("clip frame and mask dims differ");
    }
    validate_binary(ground_truth_[t]);
  }
}

std::optional<Mask> VideoClip::annotation(int t) const {
  if (t < 0 || t >= num_frames()) throw ValidationError("frame index out of range");
  if (t < annotated_prefix_) return ground_truth_[static_cast<std::size_t>(t)];
  return std::nullopt;
}

VideoClip generate_video_clip(const SynthConfig& cfg, int class_id, int clip_index) {
  cfg.validate();
  const auto base = cfg.base_class_ids();
  if (std::find(base.begin(), base.end(), class_id) != base.end()) {
    throw ProtocolError("clip requested for base class '" + class_name(class_id) +
                        "'; clips are drawn from novel classes only");
  }
  const auto novel = cfg.novel_class_ids();
  if (std::find(novel.begin(), novel.end(), class_id) == novel.end()) {
    throw ProtocolError("class '" + class_name(class_id) + "' is not a configured novel class");
  }

  Rng rng(derive_seed(cfg.seed, "clip/" + class_name(class_id) + "/" + std::to_string(clip_index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ShapeGeometry g = sample_geometry(static_cast<ShapeFamily>(class_id), cfg.height, cfg.width,
                                    kClipRadiusLo, kClipRadiusHi, rng);
  const Palette palette = sample_palette(cfg.channels, rng);

  const double speed = cfg.motion_step * (0.5 + 0.5 * unit(rng));
  const double heading = unit(rng) * 2 * kPi;
  double vx = speed * std::cos(heading);
  double vy = speed * std::sin(heading);
  // Deformation amplitude scales with motion so a static clip stays static.
  const double wobble = 0.015 * cfg.motion_step;
  const double wobble_phase = unit(rng) * 2 * kPi;
  const double spin = (unit(rng) < 0.5 ? -1.0 : 1.0) * 0.015 * cfg.motion_step;
  const double base_radius = g.radius;
  const double base_angle = g.angle;

  std::vector<Image> frames;
  std::vector<Mask> masks;
  std::vector<std::pair<double, double>> centers;
  for (int t = 0; t < cfg.frames_per_clip; ++t) {
    if (t > 0) {
      // Reflect at the borders; the step length stays |v| <= motion_step.
      const double ex = g.extent_x() + 1.0, ey = g.extent_y() + 1.0;
      if (g.cx + vx < ex || g.cx + vx > cfg.width - ex) vx = -vx;
      if (g.cy + vy < ey || g.cy + vy > cfg.height - ey) vy = -vy;
      g.cx += vx;
      g.cy += vy;
      if (g.family != ShapeFamily::kRectangle) {
        g.radius = base_radius * (1.0 + wobble * std::sin(0.7 * t + wobble_phase));
        g.angle = base_angle + spin * t;
      }
    }
    Mask m = rasterize(g, cfg.height, cfg.width);
    frames.push_back(paint(palette, m, cfg.channels, cfg.noise_std, rng));
    masks.push_back(std::move(m));
    centers.emplace_back(g.cx, g.cy);
  }
  VideoClip clip(std::move(frames), std::move(masks), cfg.annotated_prefix, class_id);
  clip.object_centers = std::move(centers);
  return clip;
}

EpisodeSampler::EpisodeSampler(std::span<const LabeledImage> dataset) : dataset_(dataset) {
  for (std::size_t i = 0; i < dataset_.size(); ++i) {
    const int cid = dataset_[i].class_id;
    auto it = std::find(class_ids_.begin(), class_ids_.end(), cid);
    if (it == class_ids_.end()) {
      class_ids_.push_back(cid);
      by_class_.emplace_back();
      it = class_ids_.end() - 1;
    }
    by_class_[static_cast<std::size_t>(it - class_ids_.begin())].push_back(static_cast<int>(i));
  }
}

Episode EpisodeSampler::sample(int n_shot, int k_query, Rng& rng) const {
  if (n_shot < 1 || k_query < 1) throw SamplingError("n_shot and k_query must be >= 1");
  const std::size_t need = static_cast<std::size_t>(n_shot + k_query);
  std::vector<std::size_t> eligible;
  for (std::size_t c = 0; c < by_class_.size(); ++c)
    if (by_class_[c].size() >= need) eligible.push_back(c);
  if (eligible.empty()) {
    throw SamplingError("no class has " + std::to_string(need) + " samples for a " +
                        std::to_string(n_shot) + "-shot, " + std::to_string(k_query) + "-query episode");
  }
  const std::size_t c = eligible[std::uniform_int_distribution<std::size_t>(0, eligible.size() - 1)(rng)];
  std::vector<int> pool = by_class_[c];
  // Partial Fisher-Yates: the first `need` entries become a uniform draw.
  for (std::size_t i = 0; i < need; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, pool.size() - 1)(rng);
    std::swap(pool[i], pool[j]);
  }
  Episode ep;
  ep.class_id = class_ids_[c];
  for (int i = 0; i < n_shot; ++i) ep.support.push_back(dataset_[static_cast<std::size_t>(pool[i])]);
  for (int i = 0; i < k_query; ++i) ep.query.push_back(dataset_[static_cast<std::size_t>(pool[n_shot + i])]);
  return ep;
}

Episode sample_episode(std::span<const LabeledImage> dataset, int n_shot, int k_query, Rng& rng) {
  return EpisodeSampler(dataset).sample(n_shot, k_query, rng);
}

namespace {

Episode clip_episode_impl(const VideoClip& clip, const EvaluationAccess* access) {
  Episode ep;
  ep.class_id = clip.class_id();
  for (int t = 0; t < clip.annotated_prefix(); ++t) {
    ep.support.push_back(LabeledImage{clip.frame(t), *clip.annotation(t), clip.class_id()});
  }
  for (int t = clip.annotated_prefix(); t < clip.num_frames(); ++t) {
    LabeledImage q{clip.frame(t), Mask{}, clip.class_id()};
    if (access) q.mask = clip.ground_truth(t, *access);
    ep.query.push_back(std::move(q));
  }
  ep.query_masks_hidden = access == nullptr;
  return ep;
}

}  // namespace

Episode clip_to_episode(const VideoClip& clip) { return clip_episode_impl(clip, nullptr); }

Episode clip_to_episode(const VideoClip& clip, const EvaluationAccess& access) {
  return clip_episode_impl(clip, &access);
}

}  // namespace fsvos
