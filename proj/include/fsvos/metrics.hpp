#pragma once

#include <cstddef>
#include <span>

#include "fsvos/data.hpp"

namespace fsvos {

struct SegScore {
  double dice = 0.0;
  double fg_iou = 0.0;
  double bg_iou = 0.0;
  double fb_iou = 0.0;  // (fg_iou + bg_iou) / 2
};

struct ScoreSummary {
  SegScore mean;
  std::size_t count = 0;
};

/// 2|P∩G| / (|P|+|G|). Two empty masks score 1.
double dice(const Mask& pred, const Mask& gt);

/// Foreground and background IoU and their average. A class absent from
/// both masks scores IoU 1 for that class.
SegScore fb_iou(const Mask& pred, const Mask& gt);

// Arithmetic mean of every field; throws ValidationError on empty input.
ScoreSummary aggregate(std::span<const SegScore> scores);

}  // namespace fsvos
