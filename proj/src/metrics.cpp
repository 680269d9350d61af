#include "fsvos/metrics.hpp"

#include "fsvos/errors.hpp"

namespace fsvos {

namespace {

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Counts confusion(const Mask& pred, const Mask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("metric inputs differ in shape");
  }
  validate_binary(pred);
  validate_binary(gt);
  Counts c;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool p = pred.values[i] != 0;
    const bool g = gt.values[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double ratio_or_one(std::size_t num, std::size_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double dice(const Mask& pred, const Mask& gt) {
  const Counts c = confusion(pred, gt);
  return ratio_or_one(2 * c.tp, 2 * c.tp + c.fp + c.fn);
}

SegScore fb_iou(const Mask& pred, const Mask& gt) {
  const Counts c = confusion(pred, gt);
  SegScore s;
  s.dice = ratio_or_one(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  s.fg_iou = ratio_or_one(c.tp, c.tp + c.fp + c.fn);
  s.bg_iou = ratio_or_one(c.tn, c.tn + c.fp + c.fn);
  s.fb_iou = 0.5 * (s.fg_iou + s.bg_iou);
  return s;
}

ScoreSummary aggregate(std::span<const SegScore> scores) {
  if (scores.empty()) throw ValidationError("aggregate: no scores");
  ScoreSummary out;
  for (const auto& s : scores) {
    out.mean.dice += s.dice;
    out.mean.fg_iou += s.fg_iou;
    out.mean.bg_iou += s.bg_iou;
    out.mean.fb_iou += s.fb_iou;
  }
  const double n = static_cast<double>(scores.size());
  out.mean.dice /= n;
  out.mean.fg_iou /= n;
  out.mean.bg_iou /= n;
  out.mean.fb_iou /= n;
  out.count = scores.size();
  return out;
}

}  // namespace fsvos
