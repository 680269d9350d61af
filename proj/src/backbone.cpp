#include "fsvos/backbone.hpp"

#include <algorithm>

#include "fsvos/errors.hpp"
#include "fsvos/ops.hpp"

namespace fsvos {

Tensor image_to_tensor(const Image& image) {
  return Tensor(Shape{1, image.channels, image.height, image.width}, image.pixels);
}

Tensor images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const Image& first = images.front();
  std::vector<double> values;
  values.reserve(images.size() * first.pixels.size());
  for (const auto& im : images) {
    if (im.channels != first.channels || im.height != first.height || im.width != first.width) {
      throw ShapeError("images_to_tensor: images differ in shape");
    }
    values.insert(values.end(), im.pixels.begin(), im.pixels.end());
  }
  return Tensor(Shape{static_cast<int>(images.size()), first.channels, first.height, first.width},
                std::move(values));
}

Tensor masked_image_tensor(const Image& image, const Mask& mask) {
  if (mask.height != image.height || mask.width != image.width) {
    throw ShapeError("masked_image_tensor: image/mask dims differ");
  }
  validate_binary(mask);
  std::vector<double> values(image.pixels);
  const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
  for (int c = 0; c < image.channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) values[c * plane + i] *= mask.values[i];
  return Tensor(Shape{1, image.channels, image.height, image.width}, std::move(values));
}

BackboneFeatures extract(const ModelState& model, const Tensor& images) {
  const auto& cfg = model.config.backbone;
  if (images.rank() != 4) throw ShapeError("extract: expected [B,C,H,W], got " + shape_str(images.shape()));
  if (images.dim(1) != cfg.in_channels) {
    throw ShapeError("extract: expected " + std::to_string(cfg.in_channels) + " channels");
  }
  const int total = cfg.total_stride();
  if (images.dim(2) % total != 0 || images.dim(3) % total != 0) {
    throw ShapeError("extract: input " + shape_str(images.shape()) + " not divisible by stride " +
                     std::to_string(total));
  }

  BackboneFeatures out;
  Tensor x = images;
  for (int s = 0; s <= cfg.high_tap_stage; ++s) {
    const std::string prefix = "backbone.stage" + std::to_string(s);
    x = ops::relu(ops::conv2d(x, model.get(prefix + ".conv0.weight"), model.get(prefix + ".conv0.bias"),
                              cfg.strides[static_cast<std::size_t>(s)], 1));
    x = ops::relu(ops::conv2d(x, model.get(prefix + ".conv1.weight"), model.get(prefix + ".conv1.bias"), 1, 1));
    if (s == cfg.mid_tap_stage) out.mid = {x, cfg.stride_at(s)};
  }
  out.high = {x, total};
  return out;
}

BackboneFeatures extract_masked_support(const ModelState& model, const LabeledImage& support) {
  support.validate();
  return extract(model, masked_image_tensor(support.image, support.mask));
}

}  // namespace fsvos
