#include "fsvos/temporal_unit.hpp"

#include <algorithm>

#include "fsvos/errors.hpp"
#include "fsvos/ops.hpp"

namespace fsvos {

Tensor temporal_attention(const ModelState& model, const Tensor& features) {
  if (!model.config.temporal_unit) throw ConfigError("model has no temporal unit");
  if (features.rank() != 4 || features.dim(0) < 1) {
    throw ShapeError("temporal_attention: expected [T,C,h,w], got " + shape_str(features.shape()));
  }
  const int frames = features.dim(0);
  const int channels = features.dim(1);
  if (channels != model.get("temporal.depthwise.weight").dim(0)) {
    throw ShapeError("temporal_attention: unit built for " + std::to_string(model.get("temporal.depthwise.weight").dim(0)) +
                     " channels, got " + std::to_string(channels));
  }

  Tensor spatial = ops::conv2d(features, model.get("temporal.depthwise.weight"),
                               model.get("temporal.depthwise.bias"), 1, 1, channels);
  spatial = ops::sigmoid(ops::conv2d(spatial, model.get("temporal.pointwise.weight"),
                                     model.get("temporal.pointwise.bias"), 1, 0));

  const Tensor descriptors = ops::global_avg_pool(features);  // [T,C,1,1]
  const int taps = model.config.temporal_kernel;
  const int radius = taps / 2;
  Tensor mix;
  for (int k = 0; k < taps; ++k) {
    std::vector<int> source(static_cast<std::size_t>(frames));
    for (int t = 0; t < frames; ++t) source[t] = std::clamp(t + k - radius, 0, frames - 1);
    const Tensor shifted = ops::index_batch(descriptors, source);
    const Tensor bias = (k == radius) ? model.get("temporal.mix.bias") : Tensor();
    Tensor term = ops::conv2d(shifted, model.get("temporal.mix.tap" + std::to_string(k) + ".weight"), bias, 1, 0);
    mix = mix.defined() ? ops::add(mix, term) : term;
  }
  const Tensor gate = ops::mul(spatial, ops::tanh(mix));
  return ops::add(features, ops::mul(features, gate));
}

}  // namespace fsvos
