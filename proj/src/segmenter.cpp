#include "fsvos/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fsvos/errors.hpp"
#include "fsvos/ops.hpp"
#include "fsvos/optim.hpp"
#include "fsvos/temporal_unit.hpp"

namespace fsvos {

Tensor SegPrediction::foreground() const { return ops::select_channel(probs, 1); }

std::vector<Mask> SegPrediction::masks() const {
  const int b = probs.dim(0), h = probs.dim(2), w = probs.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const auto p = probs.data();
  std::vector<Mask> out;
  out.reserve(b);
  for (int i = 0; i < b; ++i) {
    Mask m(h, w);
    const double* bg = p.data() + static_cast<std::size_t>(i) * 2 * plane;
    const double* fg = bg + plane;
    for (std::size_t j = 0; j < plane; ++j) m.values[j] = fg[j] > bg[j] ? 1 : 0;
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<std::uint8_t> mask_to_feature_grid(const Mask& mask, int stride) {
  if (stride < 1 || mask.height % stride || mask.width % stride) {
    throw ShapeError("mask_to_feature_grid: mask not divisible by stride " + std::to_string(stride));
  }
  const int h = mask.height / stride, w = mask.width / stride;
  std::vector<std::uint8_t> grid(static_cast<std::size_t>(h) * w, 0);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) grid[static_cast<std::size_t>(y / stride) * w + x / stride] = 1;
  return grid;
}

namespace {

constexpr double kNormEps = 1e-12;
// Raw ranges below this are treated as a constant map (rounding noise).
constexpr double kDegenerateRange = 1e-10;

// Position-major copy of one item's channel vectors, with inverse norms.
struct UnitVectors {
  int channels = 0;
  std::vector<double> unit;  // [positions][channels], zero rows for zero-norm vectors
  std::vector<double> norm;

  UnitVectors(const double* item, int c, int positions) : channels(c), unit(static_cast<std::size_t>(c) * positions),
                                                           norm(positions) {
    for (int j = 0; j < positions; ++j) {
      double n2 = 0.0;
      for (int k = 0; k < c; ++k) {
        const double v = item[static_cast<std::size_t>(k) * positions + j];
        n2 += v * v;
      }
      norm[j] = std::sqrt(n2);
      const double inv = norm[j] > kNormEps ? 1.0 / norm[j] : 0.0;
      for (int k = 0; k < c; ++k) unit[static_cast<std::size_t>(j) * c + k] = item[static_cast<std::size_t>(k) * positions + j] * inv;
    }
  }
  const double* row(int j) const { return unit.data() + static_cast<std::size_t>(j) * channels; }
};

// Saved forward state for one (query, shot) pair.
struct ShotRecord {
  int support = 0;
  bool degenerate = true;  // constant map or empty support; contributes no gradient
  double range = 0.0;
  int arg_min = 0, arg_max = 0;
  std::vector<double> raw;
  std::vector<double> normalized;
  std::vector<int> best;  // support position attaining the max per query position
};

}  // namespace

Tensor pseudo_mask(const Tensor& query_high, const Tensor& support_high,
                   const std::vector<std::vector<std::uint8_t>>& support_fg,
                   const std::vector<std::vector<int>>& shots, PseudoMaskStats* stats) {
  if (query_high.rank() != 4 || support_high.rank() != 4) throw ShapeError("pseudo_mask: expected rank-4 features");
  const int nq = query_high.dim(0), c = query_high.dim(1), h = query_high.dim(2), w = query_high.dim(3);
  const int ns = support_high.dim(0);
  if (support_high.dim(1) != c) throw ShapeError("pseudo_mask: channel counts differ");
  if (support_high.dim(2) != h || support_high.dim(3) != w) throw ShapeError("pseudo_mask: spatial dims differ");
  if (support_fg.size() != static_cast<std::size_t>(ns)) throw ShapeError("pseudo_mask: one fg grid per support");
  if (shots.size() != static_cast<std::size_t>(nq)) throw ShapeError("pseudo_mask: one shot list per query");
  const int positions = h * w;
  for (const auto& g : support_fg)
    if (g.size() != static_cast<std::size_t>(positions)) throw ShapeError("pseudo_mask: fg grid size mismatch");

  const std::size_t item = static_cast<std::size_t>(c) * positions;
  std::vector<UnitVectors> qv, sv;
  for (int q = 0; q < nq; ++q) qv.emplace_back(query_high.data().data() + q * item, c, positions);
  for (int s = 0; s < ns; ++s) sv.emplace_back(support_high.data().data() + s * item, c, positions);

  PseudoMaskStats local;
  std::vector<std::vector<ShotRecord>> records(nq);
  std::vector<double> out(static_cast<std::size_t>(nq) * positions, 0.0);
  for (int q = 0; q < nq; ++q) {
    if (shots[q].empty()) throw ShapeError("pseudo_mask: query without support");
    const double share = 1.0 / static_cast<double>(shots[q].size());
    for (int s : shots[q]) {
      if (s < 0 || s >= ns) throw ShapeError("pseudo_mask: support index out of range");
      ShotRecord rec;
      rec.support = s;
      std::vector<int> fg;
      for (int i = 0; i < positions; ++i)
        if (support_fg[s][i]) fg.push_back(i);
      if (fg.empty()) {
        ++local.empty_support;
        warn("pseudo mask: support has no foreground at feature resolution; using a neutral 0.5 prior");
        rec.normalized.assign(positions, 0.5);
      } else {
        rec.raw.resize(positions);
        rec.best.resize(positions);
        for (int j = 0; j < positions; ++j) {
          const double* a = qv[q].row(j);
          double best = -std::numeric_limits<double>::infinity();
          int best_i = fg.front();
          for (int i : fg) {
            const double* b = sv[s].row(i);
            double dot = 0.0;
            for (int k = 0; k < c; ++k) dot += a[k] * b[k];
            if (dot > best) {
              best = dot;
              best_i = i;
            }
          }
          rec.raw[j] = best;
          rec.best[j] = best_i;
        }
        rec.arg_min = rec.arg_max = 0;
        for (int j = 1; j < positions; ++j) {
          if (rec.raw[j] < rec.raw[rec.arg_min]) rec.arg_min = j;
          if (rec.raw[j] > rec.raw[rec.arg_max]) rec.arg_max = j;
        }
        rec.range = rec.raw[rec.arg_max] - rec.raw[rec.arg_min];
        if (rec.range > kDegenerateRange) {
          rec.degenerate = false;
          rec.normalized.resize(positions);
          const double lo = rec.raw[rec.arg_min];
          for (int j = 0; j < positions; ++j) rec.normalized[j] = (rec.raw[j] - lo) / rec.range;
        } else {
          ++local.degenerate_range;
          rec.normalized.assign(positions, 0.5);
        }
      }
      for (int j = 0; j < positions; ++j) out[static_cast<std::size_t>(q) * positions + j] += share * rec.normalized[j];
      records[q].push_back(std::move(rec));
    }
  }
  if (stats) {
    stats->degenerate_range += local.degenerate_range;
    stats->empty_support += local.empty_support;
  }

  auto qn = query_high.node();
  auto sn = support_high.node();
  return detail::make_result(
      Shape{nq, 1, h, w}, std::move(out), {query_high, support_high},
      [=, qv = std::move(qv), sv = std::move(sv), records = std::move(records)](const std::vector<double>& g) {
        double* gq = qn->requires_grad ? qn->grad_buffer().data() : nullptr;
        double* gs = sn->requires_grad ? sn->grad_buffer().data() : nullptr;
        std::vector<double> g_raw(positions);
        for (int q = 0; q < nq; ++q) {
          const double share = 1.0 / static_cast<double>(records[q].size());
          const double* gout = g.data() + static_cast<std::size_t>(q) * positions;
          for (const auto& rec : records[q]) {
            if (rec.degenerate) continue;
            // Min-max normalization: out_j = (r_j - r_min) / (r_max - r_min).
            double to_min = 0.0, to_max = 0.0;
            for (int j = 0; j < positions; ++j) {
              const double gj = share * gout[j];
              g_raw[j] = gj / rec.range;
              to_min += gj * (rec.normalized[j] - 1.0) / rec.range;
              to_max -= gj * rec.normalized[j] / rec.range;
            }
            g_raw[rec.arg_min] += to_min;
            g_raw[rec.arg_max] += to_max;
            // Cosine: d cos(a,b)/da = (b̂ - cos â) / |a|.
            const int s = rec.support;
            for (int j = 0; j < positions; ++j) {
              if (g_raw[j] == 0.0) continue;
              const int i = rec.best[j];
              const double na = qv[q].norm[j], nb = sv[s].norm[i];
              if (na <= kNormEps || nb <= kNormEps) continue;
              const double cosv = rec.raw[j];
              const double* ah = qv[q].row(j);
              const double* bh = sv[s].row(i);
              for (int k = 0; k < c; ++k) {
                if (gq) gq[q * item + static_cast<std::size_t>(k) * positions + j] += g_raw[j] * (bh[k] - cosv * ah[k]) / na;
                if (gs) gs[s * item + static_cast<std::size_t>(k) * positions + i] += g_raw[j] * (ah[k] - cosv * bh[k]) / nb;
              }
            }
          }
        }
      });
}

Tensor pseudo_mask(const FeatureMap& query_high, const FeatureMap& support_high_masked, const Mask& support_mask,
                   PseudoMaskStats* stats) {
  if (support_high_masked.data.dim(0) != 1) throw ShapeError("pseudo_mask: expected a single support item");
  std::vector<std::vector<int>> shots(static_cast<std::size_t>(query_high.data.dim(0)), std::vector<int>{0});
  return pseudo_mask(query_high.data, support_high_masked.data,
                     {mask_to_feature_grid(support_mask, support_high_masked.stride)}, shots, stats);
}

FeatureMap fuse(const ModelState& model, const Tensor& pseudo, const FeatureMap& query_mid, const Tensor& support_mid) {
  const int h = query_mid.data.dim(2), w = query_mid.data.dim(3);
  Tensor up = ops::upsample_bilinear(pseudo, h, w);
  Tensor support = support_mid;
  if (support.dim(2) == 1 && support.dim(3) == 1 && (h != 1 || w != 1)) {
    support = ops::add(Tensor(Shape{support.dim(0), support.dim(1), h, w}, 0.0), support);
  }
  if (support.dim(0) != query_mid.data.dim(0) || support.dim(2) != h || support.dim(3) != w ||
      up.dim(0) != query_mid.data.dim(0)) {
    throw ShapeError("fuse: inputs not aligned: pseudo " + shape_str(up.shape()) + ", query " +
                     shape_str(query_mid.data.shape()) + ", support " + shape_str(support.shape()));
  }
  Tensor cat = ops::concat_channels({up, query_mid.data, support});
  return {ops::conv2d(cat, model.get("fusion.weight"), model.get("fusion.bias"), 1, 0), query_mid.stride};
}

FeatureMap neck(const ModelState& model, const FeatureMap& fused) {
  if (model.config.neck == NeckVariant::kIdentity) return fused;
  const Tensor& f = fused.data;
  if (f.dim(2) % 2 || f.dim(3) % 2) throw ShapeError("neck: fused map must have even spatial dims");
  // Fine (stride s) and coarse (stride 2s) paths with exchange in both directions.
  Tensor fine = ops::relu(ops::conv2d(f, model.get("neck.fine.weight"), model.get("neck.fine.bias"), 1, 1));
  Tensor coarse = ops::relu(ops::conv2d(f, model.get("neck.coarse.weight"), model.get("neck.coarse.bias"), 2, 1));
  coarse = ops::add(coarse, ops::avg_pool2(fine));
  fine = ops::add(fine, ops::upsample_bilinear(coarse, f.dim(2), f.dim(3)));
  Tensor merged = ops::conv2d(fine, model.get("neck.merge.weight"), model.get("neck.merge.bias"), 1, 1);
  return {ops::relu(ops::add(f, merged)), fused.stride};
}

SegPrediction head(const ModelState& model, const FeatureMap& features, int out_height, int out_width) {
  Tensor x = ops::relu(
      ops::conv2d(features.data, model.get("head.conv3.weight"), model.get("head.conv3.bias"), 1, 1));
  x = ops::conv2d(x, model.get("head.conv1.weight"), model.get("head.conv1.bias"), 1, 0);
  SegPrediction pred;
  pred.logits = ops::upsample_bilinear(x, out_height, out_width);
  pred.probs = ops::softmax_channels(pred.logits);
  return pred;
}

EpisodeBatch make_batch(std::span<const Episode> episodes) {
  if (episodes.empty()) throw ShapeError("make_batch: no episodes");
  std::vector<Tensor> supports;
  std::vector<Image> queries;
  EpisodeBatch batch;
  for (const auto& ep : episodes) {
    if (ep.support.empty() || ep.query.empty()) throw ValidationError("make_batch: episode needs N, K >= 1");
    std::vector<int> idx;
    for (const auto& s : ep.support) {
      s.validate();
      idx.push_back(static_cast<int>(supports.size()));
      supports.push_back(masked_image_tensor(s.image, s.mask));
      batch.support_masks.push_back(s.mask);
    }
    for (const auto& q : ep.query) {
      queries.push_back(q.image);
      batch.shots.push_back(idx);
    }
  }
  batch.support_images = ops::concat_batch(supports);
  batch.query_images = images_to_tensor(queries);
  return batch;
}

EpisodeBatch make_batch(std::span<const LabeledImage> support, std::span<const Image> queries) {
  if (support.empty() || queries.empty()) throw ValidationError("make_batch: need support and queries");
  EpisodeBatch batch;
  std::vector<Tensor> supports;
  std::vector<int> idx;
  for (const auto& s : support) {
    s.validate();
    idx.push_back(static_cast<int>(supports.size()));
    supports.push_back(masked_image_tensor(s.image, s.mask));
    batch.support_masks.push_back(s.mask);
  }
  batch.support_images = ops::concat_batch(supports);
  batch.query_images = images_to_tensor(queries);
  batch.shots.assign(queries.size(), idx);
  return batch;
}

ForwardOutputs forward_batch(const ModelState& model, const EpisodeBatch& batch, bool use_temporal) {
  const BackboneFeatures sf = extract(model, batch.support_images);
  const BackboneFeatures qf = extract(model, batch.query_images);

  std::vector<std::vector<std::uint8_t>> fg_high;
  for (const auto& m : batch.support_masks) fg_high.push_back(mask_to_feature_grid(m, sf.high.stride));

  ForwardOutputs out;
  Tensor prior = pseudo_mask(qf.high.data, sf.high.data, fg_high, batch.shots, &out.pseudo_stats);

  Tensor support_mid;
  if (model.config.support_mid == SupportMidMode::kSpatial) {
    support_mid = ops::group_mean_batch(sf.mid.data, batch.shots);
  } else {
    std::vector<std::vector<std::uint8_t>> fg_mid;
    for (const auto& m : batch.support_masks) fg_mid.push_back(mask_to_feature_grid(m, sf.mid.stride));
    support_mid = ops::group_mean_batch(ops::masked_average_pool(sf.mid.data, fg_mid), batch.shots);
  }

  out.fused = fuse(model, prior, qf.mid, support_mid);
  out.neck = neck(model, out.fused);
  out.head_input = out.neck;
  if (use_temporal && model.config.temporal_unit) {
    out.head_input = {temporal_attention(model, out.neck.data), out.neck.stride};
  }
  out.prediction = head(model, out.head_input, batch.query_images.dim(2), batch.query_images.dim(3));
  return out;
}

SegPrediction forward_episode(const Episode& episode, const ModelState& model) {
  return forward_batch(model, make_batch(std::span<const Episode>(&episode, 1))).prediction;
}

Phase1Result train_phase1(std::span<const LabeledImage> dataset, const ModelState& init, const Phase1Config& cfg,
                          const IterationCallback& on_iteration) {
  {
    std::vector<int> classes;
    for (const auto& s : dataset)
      if (std::find(classes.begin(), classes.end(), s.class_id) == classes.end()) classes.push_back(s.class_id);
    if (classes.size() < 2) throw ConfigError("phase-1 training needs at least two base classes");
  }
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.adam_iterations < 0 || cfg.sgd_iterations < 0) throw ConfigError("iteration counts must be >= 0");

  Phase1Result result{init, {}};
  ModelState& model = result.model;
  model.metadata["phase"] = "image";
  EpisodeSampler sampler(dataset);
  Adam adam(cfg.adam_lr);
  Sgd sgd(cfg.sgd_lr);
  const int total = cfg.adam_iterations + cfg.sgd_iterations;

  for (int it = 0; it < total; ++it) {
    const int global_it = cfg.start_iteration + it;
    Rng rng(derive_seed(cfg.seed, "sampling/" + std::to_string(global_it)));
    std::vector<Episode> episodes;
    episodes.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) episodes.push_back(sampler.sample(cfg.shots, cfg.queries, rng));

    const EpisodeBatch batch = make_batch(episodes);
    std::vector<int> labels;
    for (const auto& ep : episodes)
      for (const auto& q : ep.query) labels.insert(labels.end(), q.mask.values.begin(), q.mask.values.end());

    model.zero_grad();
    const ForwardOutputs fwd = forward_batch(model, batch);
    Tensor loss = ops::cross_entropy(fwd.prediction.logits, labels);
    if (cfg.dice_loss) {
      loss = ops::add(loss, ops::scale(ops::soft_dice_loss(fwd.prediction.foreground(), labels), cfg.dice_weight));
    }
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("phase-1 loss became non-finite at iteration " + std::to_string(global_it));
    }
    loss.backward();
    if (it < cfg.adam_iterations) adam.step(model);
    else sgd.step(model);
    result.losses.push_back(value);
    if (on_iteration) on_iteration(global_it, value);
  }
  model.zero_grad();
  model.metadata["iterations_completed"] = cfg.start_iteration + total;
  return result;
}

SegPrediction infer_video_naive(const VideoClip& clip, const ModelState& model) {
  NoGradGuard no_grad;
  const Episode ep = clip_to_episode(clip);
  std::vector<Tensor> logits, probs;
  for (const auto& q : ep.query) {
    const EpisodeBatch batch = make_batch(ep.support, std::span<const Image>(&q.image, 1));
    const SegPrediction p = forward_batch(model, batch, false).prediction;
    logits.push_back(p.logits);
    probs.push_back(p.probs);
  }
  return {ops::concat_batch(logits), ops::concat_batch(probs)};
}

}  // namespace fsvos
