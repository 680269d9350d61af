#pragma once

#include <span>

#include "fsvos/data.hpp"
#include "fsvos/model_state.hpp"
#include "fsvos/tensor.hpp"

namespace fsvos {

struct FeatureMap {
  Tensor data;     // [B,C,h,w]
  int stride = 1;  // relative to the input image
};

struct BackboneFeatures {
  FeatureMap mid;   // finer, used for fusion
  FeatureMap high;  // coarser, used for the pseudo mask
};

Tensor image_to_tensor(const Image& image);
Tensor images_to_tensor(std::span<const Image> images);
// Hadamard product of image and mask, mask broadcast over channels.
Tensor masked_image_tensor(const Image& image, const Mask& mask);

/// Runs the backbone up to the high tap. Input H and W must be divisible by
/// the total stride (ShapeError otherwise).
BackboneFeatures extract(const ModelState& model, const Tensor& images);

/// extract(image ⊙ mask) for one support sample. Non-binary masks are rejected.
BackboneFeatures extract_masked_support(const ModelState& model, const LabeledImage& support);

}  // namespace fsvos
