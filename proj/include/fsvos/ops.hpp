#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fsvos/tensor.hpp"

// Differentiable array operations. Spatial ops use NCHW layout.
namespace fsvos::ops {

// Elementwise with broadcasting over size-1 axes; operands must share rank (<= 4).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// 2-D convolution. weight is [C_out, C_in / groups, k, k]; bias may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding,
              int groups = 1);

/// Bilinear resize with half-pixel centers (align_corners = false). Output
/// values are convex combinations of inputs.
Tensor upsample_bilinear(const Tensor& x, int out_height, int out_width);

// 2x2 average pooling with stride 2; spatial dims must be even.
Tensor avg_pool2(const Tensor& x);

// Mean over H and W: [B,C,H,W] -> [B,C,1,1].
Tensor global_avg_pool(const Tensor& x);

/// Mean of x over the spatial positions where mask != 0, one mask per batch
/// item at x's resolution. An empty mask yields zeros. Output [B,C,1,1].
Tensor masked_average_pool(const Tensor& x, const std::vector<std::vector<std::uint8_t>>& masks);

Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor concat_batch(const std::vector<Tensor>& parts);

// Gathers batch items (repeats allowed): out[i] = x[indices[i]].
Tensor index_batch(const Tensor& x, const std::vector<int>& indices);

// out[g] = mean of x[i] for i in groups[g].
Tensor group_mean_batch(const Tensor& x, const std::vector<std::vector<int>>& groups);

Tensor select_channel(const Tensor& x, int channel);

Tensor softmax_channels(const Tensor& x);

/// Mean pixel-wise cross-entropy of channel logits [B,K,H,W] against integer
/// labels in [0,K), laid out [B,H,W].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// 1 - soft Dice between foreground probabilities [B,1,H,W] and {0,1} targets.
Tensor soft_dice_loss(const Tensor& fg_probs, std::span<const int> labels);

// Mean of squared differences over all elements; shapes must match.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace fsvos::ops
