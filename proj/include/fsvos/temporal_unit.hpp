#pragma once

#include "fsvos/model_state.hpp"
#include "fsvos/tensor.hpp"

namespace fsvos {

/// Temporal attention over an ordered window of frame features [T,C,h,w].
///
///   spatial  = sigmoid(pointwise(depthwise(x)))            per frame
///   mix_t    = bias + sum_k W_k · gap(x)[clamp(t + k - r)]  across frames
///   out      = x + x ⊙ spatial ⊙ tanh(mix)
///
/// Frame indices are clamped at the window ends (replicate padding), so a
/// window of identical frames maps to identical outputs and T = 1 is valid.
/// With the mixing weights and bias at zero the unit is the identity.
Tensor temporal_attention(const ModelState& model, const Tensor& features);

}  // namespace fsvos
