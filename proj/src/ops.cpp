#include "fsvos/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>

#include "fsvos/errors.hpp"

namespace fsvos::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

using detail::make_result;

void require_rank(const Tensor& x, int rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

struct Dims4 {
  int b, c, h, w;
  explicit Dims4(const Tensor& x) : b(x.dim(0)), c(x.dim(1)), h(x.dim(2)), w(x.dim(3)) {}
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
};

// Broadcast layout for two same-rank operands padded to rank 4.
struct Broadcast {
  Shape out_shape;
  std::array<int, 4> extent{1, 1, 1, 1};
  std::array<std::size_t, 4> stride_a{0, 0, 0, 0};
  std::array<std::size_t, 4> stride_b{0, 0, 0, 0};

  Broadcast(const Shape& a, const Shape& b) {
    if (a.size() != b.size() || a.size() > 4 || a.empty()) {
      throw ShapeError("broadcast: incompatible ranks " + shape_str(a) + " vs " + shape_str(b));
    }
    const std::size_t offset = 4 - a.size();
    std::array<int, 4> da{1, 1, 1, 1}, db{1, 1, 1, 1};
    for (std::size_t i = 0; i < a.size(); ++i) {
      da[offset + i] = a[i];
      db[offset + i] = b[i];
    }
    std::size_t sa = 1, sb = 1;
    for (int i = 3; i >= 0; --i) {
      if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
        throw ShapeError("broadcast: incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
      }
      extent[i] = std::max(da[i], db[i]);
      stride_a[i] = da[i] == 1 ? 0 : sa;
      stride_b[i] = db[i] == 1 ? 0 : sb;
      sa *= static_cast<std::size_t>(da[i]);
      sb *= static_cast<std::size_t>(db[i]);
    }
    out_shape.assign(extent.begin() + static_cast<std::ptrdiff_t>(offset), extent.end());
  }

  template <typename F>
  void for_each(F&& f) const {
    std::size_t o = 0;
    for (int i0 = 0; i0 < extent[0]; ++i0)
      for (int i1 = 0; i1 < extent[1]; ++i1)
        for (int i2 = 0; i2 < extent[2]; ++i2)
          for (int i3 = 0; i3 < extent[3]; ++i3, ++o) {
            const std::size_t ia = i0 * stride_a[0] + i1 * stride_a[1] + i2 * stride_a[2] + i3 * stride_a[3];
            const std::size_t ib = i0 * stride_b[0] + i1 * stride_b[1] + i2 * stride_b[2] + i3 * stride_b[3];
            f(o, ia, ib);
          }
  }
};

template <typename Fwd, typename Bwd>
Tensor binary(const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  Broadcast bc(a.shape(), b.shape());
  std::vector<double> out(shape_numel(bc.out_shape));
  const auto ad = a.data();
  const auto bd = b.data();
  bc.for_each([&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = fwd(ad[ia], bd[ib]); });
  auto an = a.node();
  auto bn = b.node();
  return make_result(bc.out_shape, std::move(out), {a, b},
                     [an, bn, bc, bwd](const std::vector<double>& g) {
                       double* ga = an->requires_grad ? an->grad_buffer().data() : nullptr;
                       double* gb = bn->requires_grad ? bn->grad_buffer().data() : nullptr;
                       const double* av = an->data.data();
                       const double* bv = bn->data.data();
                       bc.for_each([&](std::size_t o, std::size_t ia, std::size_t ib) {
                         double da = 0.0, db = 0.0;
                         bwd(av[ia], bv[ib], g[o], da, db);
                         if (ga) ga[ia] += da;
                         if (gb) gb[ib] += db;
                       });
                     });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv_from_output) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  auto xn = x.node();
  Tensor result = make_result(x.shape(), std::move(out), {x}, nullptr);
  if (result.requires_grad()) {
    // Capture the output storage weakly through a raw pointer to its data;
    // the closure lives inside the output node, so it cannot outlive it.
    const std::vector<double>* out_values = &result.node()->data;
    result.node()->backward = [xn, out_values, deriv_from_output](const std::vector<double>& g) {
      auto& gx = xn->grad_buffer();
      const auto& y = *out_values;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv_from_output(xn->data[i], y[i]);
    };
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 || std::isnan(v) ? v : 0.0; },  // NaN propagates
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  auto xn = x.node();
  return make_result(Shape{1}, {total}, {x}, [xn](const std::vector<double>& g) {
    auto& gx = xn->grad_buffer();
    for (double& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  return scale(sum(x), 1.0 / n);
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding,
              int groups) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const Dims4 in(x);
  const int c_out = weight.dim(0);
  const int k = weight.dim(2);
  if (weight.dim(3) != k) throw ShapeError("conv2d: non-square kernel " + shape_str(weight.shape()));
  if (groups < 1 || in.c % groups != 0 || c_out % groups != 0) {
    throw ShapeError("conv2d: channels not divisible by groups");
  }
  const int cin_g = in.c / groups;
  const int cout_g = c_out / groups;
  if (weight.dim(1) != cin_g) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));
  }
  const int h_out = (in.h + 2 * padding - k) / stride + 1;
  const int w_out = (in.w + 2 * padding - k) / stride + 1;
  if (h_out <= 0 || w_out <= 0) throw ShapeError("conv2d: empty output for " + shape_str(x.shape()));

  const int rows = cin_g * k * k;
  const int cols = h_out * w_out;
  const bool pointwise = (k == 1 && stride == 1 && padding == 0);

  auto im2col = [=](const double* src, double* dst) {
    // src points at the first channel of the group for one batch item.
    for (int c = 0; c < cin_g; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          double* row = dst + static_cast<std::size_t>((c * k + ky) * k + kx) * cols;
          const double* plane = src + static_cast<std::size_t>(c) * in.h * in.w;
          for (int oy = 0; oy < h_out; ++oy) {
            const int iy = oy * stride - padding + ky;
            double* out_row = row + static_cast<std::size_t>(oy) * w_out;
            if (iy < 0 || iy >= in.h) {
              std::fill(out_row, out_row + w_out, 0.0);
              continue;
            }
            const double* in_row = plane + static_cast<std::size_t>(iy) * in.w;
            for (int ox = 0; ox < w_out; ++ox) {
              const int ix = ox * stride - padding + kx;
              out_row[ox] = (ix >= 0 && ix < in.w) ? in_row[ix] : 0.0;
            }
          }
        }
  };

  auto col2im = [=](const double* col, double* dst) {
    for (int c = 0; c < cin_g; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * cols;
          double* plane = dst + static_cast<std::size_t>(c) * in.h * in.w;
          for (int oy = 0; oy < h_out; ++oy) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= in.h) continue;
            const double* g_row = row + static_cast<std::size_t>(oy) * w_out;
            double* in_row = plane + static_cast<std::size_t>(iy) * in.w;
            for (int ox = 0; ox < w_out; ++ox) {
              const int ix = ox * stride - padding + kx;
              if (ix >= 0 && ix < in.w) in_row[ix] += g_row[ox];
            }
          }
        }
  };

  const std::size_t in_item = static_cast<std::size_t>(in.c) * in.plane();
  const std::size_t out_item = static_cast<std::size_t>(c_out) * cols;
  std::vector<double> out(static_cast<std::size_t>(in.b) * out_item);
  std::vector<double> col_buf(pointwise ? 0 : static_cast<std::size_t>(rows) * cols);
  const double* xd = x.data().data();
  const double* wd = weight.data().data();

  for (int b = 0; b < in.b; ++b) {
    for (int g = 0; g < groups; ++g) {
      const double* src = xd + b * in_item + static_cast<std::size_t>(g) * cin_g * in.plane();
      const double* col_ptr = src;
      if (!pointwise) {
        im2col(src, col_buf.data());
        col_ptr = col_buf.data();
      }
      ConstMapMat w_mat(wd + static_cast<std::size_t>(g) * cout_g * rows, cout_g, rows);
      ConstMapMat c_mat(col_ptr, rows, cols);
      MapMat o_mat(out.data() + b * out_item + static_cast<std::size_t>(g) * cout_g * cols, cout_g, cols);
      o_mat.noalias() = w_mat * c_mat;
    }
    if (bias.defined()) {
      const auto bd = bias.data();
      for (int c = 0; c < c_out; ++c) {
        double* plane = out.data() + b * out_item + static_cast<std::size_t>(c) * cols;
        for (int i = 0; i < cols; ++i) plane[i] += bd[c];
      }
    }
  }

  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.node();
  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result(
      Shape{in.b, c_out, h_out, w_out}, std::move(out), parents,
      [=](const std::vector<double>& gout) {
        std::vector<double> cbuf(pointwise ? 0 : static_cast<std::size_t>(rows) * cols);
        std::vector<double> dcol(static_cast<std::size_t>(rows) * cols);
        double* gx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
        double* gw = wn->requires_grad ? wn->grad_buffer().data() : nullptr;
        for (int b = 0; b < in.b; ++b) {
          for (int g = 0; g < groups; ++g) {
            ConstMapMat go(gout.data() + b * out_item + static_cast<std::size_t>(g) * cout_g * cols,
                           cout_g, cols);
            const double* src =
                xn->data.data() + b * in_item + static_cast<std::size_t>(g) * cin_g * in.plane();
            if (gw) {
              const double* col_ptr = src;
              if (!pointwise) {
                im2col(src, cbuf.data());
                col_ptr = cbuf.data();
              }
              ConstMapMat c_mat(col_ptr, rows, cols);
              MapMat gw_mat(gw + static_cast<std::size_t>(g) * cout_g * rows, cout_g, rows);
              gw_mat.noalias() += go * c_mat.transpose();
            }
            if (gx) {
              ConstMapMat w_mat(wn->data.data() + static_cast<std::size_t>(g) * cout_g * rows, cout_g,
                                rows);
              double* dst = gx + b * in_item + static_cast<std::size_t>(g) * cin_g * in.plane();
              if (pointwise) {
                MapMat gx_mat(dst, rows, cols);
                gx_mat.noalias() += w_mat.transpose() * go;
              } else {
                MapMat dc(dcol.data(), rows, cols);
                dc.noalias() = w_mat.transpose() * go;
                col2im(dcol.data(), dst);
              }
            }
          }
        }
        if (bn && bn->requires_grad) {
          auto& gb = bn->grad_buffer();
          for (int b = 0; b < in.b; ++b)
            for (int c = 0; c < c_out; ++c) {
              const double* plane = gout.data() + b * out_item + static_cast<std::size_t>(c) * cols;
              double acc = 0.0;
              for (int i = 0; i < cols; ++i) acc += plane[i];
              gb[c] += acc;
            }
        }
      });
}

Tensor upsample_bilinear(const Tensor& x, int out_height, int out_width) {
  require_rank(x, 4, "upsample_bilinear");
  const Dims4 in(x);
  if (out_height <= 0 || out_width <= 0) throw ShapeError("upsample_bilinear: empty output size");

  struct Axis {
    std::vector<int> lo, hi;
    std::vector<double> frac;
  };
  auto make_axis = [](int n_in, int n_out) {
    Axis a;
    a.lo.resize(n_out);
    a.hi.resize(n_out);
    a.frac.resize(n_out);
    const double ratio = static_cast<double>(n_in) / n_out;
    for (int o = 0; o < n_out; ++o) {
      double src = (o + 0.5) * ratio - 0.5;
      if (src < 0.0) src = 0.0;
      int lo = static_cast<int>(std::floor(src));
      if (lo > n_in - 1) lo = n_in - 1;
      const int hi = std::min(lo + 1, n_in - 1);
      a.lo[o] = lo;
      a.hi[o] = hi;
      a.frac[o] = hi == lo ? 0.0 : src - lo;
    }
    return a;
  };
  const Axis ay = make_axis(in.h, out_height);
  const Axis ax = make_axis(in.w, out_width);

  const std::size_t planes = static_cast<std::size_t>(in.b) * in.c;
  const std::size_t out_plane = static_cast<std::size_t>(out_height) * out_width;
  std::vector<double> out(planes * out_plane);
  const double* xd = x.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = xd + p * in.plane();
    double* dst = out.data() + p * out_plane;
    for (int oy = 0; oy < out_height; ++oy) {
      const double fy = ay.frac[oy];
      const double* r0 = src + static_cast<std::size_t>(ay.lo[oy]) * in.w;
      const double* r1 = src + static_cast<std::size_t>(ay.hi[oy]) * in.w;
      for (int ox = 0; ox < out_width; ++ox) {
        const double fx = ax.frac[ox];
        const double top = r0[ax.lo[ox]] * (1.0 - fx) + r0[ax.hi[ox]] * fx;
        const double bottom = r1[ax.lo[ox]] * (1.0 - fx) + r1[ax.hi[ox]] * fx;
        dst[static_cast<std::size_t>(oy) * out_width + ox] = top * (1.0 - fy) + bottom * fy;
      }
    }
  }
  auto xn = x.node();
  return make_result(Shape{in.b, in.c, out_height, out_width}, std::move(out), {x},
                     [=](const std::vector<double>& g) {
                       auto& gx = xn->grad_buffer();
                       for (std::size_t p = 0; p < planes; ++p) {
                         double* dst = gx.data() + p * in.plane();
                         const double* gp = g.data() + p * out_plane;
                         for (int oy = 0; oy < out_height; ++oy) {
                           const double fy = ay.frac[oy];
                           double* r0 = dst + static_cast<std::size_t>(ay.lo[oy]) * in.w;
                           double* r1 = dst + static_cast<std::size_t>(ay.hi[oy]) * in.w;
                           for (int ox = 0; ox < out_width; ++ox) {
                             const double fx = ax.frac[ox];
                             const double v = gp[static_cast<std::size_t>(oy) * out_width + ox];
                             r0[ax.lo[ox]] += v * (1.0 - fy) * (1.0 - fx);
                             r0[ax.hi[ox]] += v * (1.0 - fy) * fx;
                             r1[ax.lo[ox]] += v * fy * (1.0 - fx);
                             r1[ax.hi[ox]] += v * fy * fx;
                           }
                         }
                       }
                     });
}

Tensor avg_pool2(const Tensor& x) {
  require_rank(x, 4, "avg_pool2");
  const Dims4 in(x);
  if (in.h % 2 || in.w % 2) throw ShapeError("avg_pool2: odd spatial dims " + shape_str(x.shape()));
  const int oh = in.h / 2, ow = in.w / 2;
  const std::size_t planes = static_cast<std::size_t>(in.b) * in.c;
  std::vector<double> out(planes * oh * ow);
  const double* xd = x.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = xd + p * in.plane();
    double* dst = out.data() + p * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const double* r0 = src + static_cast<std::size_t>(2 * y) * in.w + 2 * xx;
        const double* r1 = r0 + in.w;
        dst[y * ow + xx] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
  auto xn = x.node();
  return make_result(Shape{in.b, in.c, oh, ow}, std::move(out), {x}, [=](const std::vector<double>& g) {
    auto& gx = xn->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      double* dst = gx.data() + p * in.plane();
      const double* gp = g.data() + p * oh * ow;
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          const double v = 0.25 * gp[y * ow + xx];
          double* r0 = dst + static_cast<std::size_t>(2 * y) * in.w + 2 * xx;
          double* r1 = r0 + in.w;
          r0[0] += v;
          r0[1] += v;
          r1[0] += v;
          r1[1] += v;
        }
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const Dims4 in(x);
  const std::size_t planes = static_cast<std::size_t>(in.b) * in.c;
  const std::size_t n = in.plane();
  std::vector<double> out(planes);
  const double* xd = x.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += xd[p * n + i];
    out[p] = acc / static_cast<double>(n);
  }
  auto xn = x.node();
  return make_result(Shape{in.b, in.c, 1, 1}, std::move(out), {x}, [=](const std::vector<double>& g) {
    auto& gx = xn->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      const double v = g[p] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) gx[p * n + i] += v;
    }
  });
}

Tensor masked_average_pool(const Tensor& x, const std::vector<std::vector<std::uint8_t>>& masks) {
  require_rank(x, 4, "masked_average_pool");
  const Dims4 in(x);
  if (masks.size() != static_cast<std::size_t>(in.b)) {
    throw ShapeError("masked_average_pool: need one mask per batch item");
  }
  const std::size_t n = in.plane();
  std::vector<double> counts(in.b, 0.0);
  for (int b = 0; b < in.b; ++b) {
    if (masks[b].size() != n) throw ShapeError("masked_average_pool: mask size mismatch");
    for (auto v : masks[b]) counts[b] += v ? 1.0 : 0.0;
  }
  std::vector<double> out(static_cast<std::size_t>(in.b) * in.c, 0.0);
  const double* xd = x.data().data();
  for (int b = 0; b < in.b; ++b) {
    if (counts[b] == 0.0) continue;
    for (int c = 0; c < in.c; ++c) {
      const double* plane = xd + (static_cast<std::size_t>(b) * in.c + c) * n;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (masks[b][i]) acc += plane[i];
      out[static_cast<std::size_t>(b) * in.c + c] = acc / counts[b];
    }
  }
  auto xn = x.node();
  return make_result(Shape{in.b, in.c, 1, 1}, std::move(out), {x}, [=](const std::vector<double>& g) {
    auto& gx = xn->grad_buffer();
    for (int b = 0; b < in.b; ++b) {
      if (counts[b] == 0.0) continue;
      for (int c = 0; c < in.c; ++c) {
        const double v = g[static_cast<std::size_t>(b) * in.c + c] / counts[b];
        double* plane = gx.data() + (static_cast<std::size_t>(b) * in.c + c) * n;
        for (std::size_t i = 0; i < n; ++i)
          if (masks[b][i]) plane[i] += v;
      }
    }
  });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Dims4 first(parts.front());
  int total_c = 0;
  for (const auto& p : parts) {
    require_rank(p, 4, "concat_channels");
    if (p.dim(0) != first.b || p.dim(2) != first.h || p.dim(3) != first.w) {
      throw ShapeError("concat_channels: mismatched " + shape_str(p.shape()) + " vs " +
                       shape_str(parts.front().shape()));
    }
    total_c += p.dim(1);
  }
  const std::size_t plane = first.plane();
  std::vector<double> out(static_cast<std::size_t>(first.b) * total_c * plane);
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int c = p.dim(1);
    const double* src = p.data().data();
    for (int b = 0; b < first.b; ++b) {
      std::copy(src + static_cast<std::size_t>(b) * c * plane, src + static_cast<std::size_t>(b + 1) * c * plane,
                out.data() + (static_cast<std::size_t>(b) * total_c + off) * plane);
    }
    off += c;
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result(Shape{first.b, total_c, first.h, first.w}, std::move(out), parts,
                     [=](const std::vector<double>& g) {
                       for (std::size_t i = 0; i < nodes.size(); ++i) {
                         if (!nodes[i]->requires_grad) continue;
                         auto& gp = nodes[i]->grad_buffer();
                         const int c = nodes[i]->shape[1];
                         for (int b = 0; b < first.b; ++b) {
                           const double* src = g.data() + (static_cast<std::size_t>(b) * total_c + offsets[i]) * plane;
                           double* dst = gp.data() + static_cast<std::size_t>(b) * c * plane;
                           for (std::size_t j = 0; j < static_cast<std::size_t>(c) * plane; ++j) dst[j] += src[j];
                         }
                       }
                     });
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no inputs");
  Shape shape = parts.front().shape();
  int total_b = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(shape.size()) ||
        !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat_batch: mismatched " + shape_str(p.shape()));
    }
    total_b += p.dim(0);
  }
  shape[0] = total_b;
  std::vector<double> out;
  out.reserve(shape_numel(shape));
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result(shape, std::move(out), parts, [=](const std::vector<double>& g) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i]->requires_grad) continue;
      auto& gp = nodes[i]->grad_buffer();
      for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += g[offsets[i] + j];
    }
  });
}

Tensor index_batch(const Tensor& x, const std::vector<int>& indices) {
  if (x.rank() < 1) throw ShapeError("index_batch: rank 0 input");
  Shape shape = x.shape();
  const std::size_t item = x.numel() / static_cast<std::size_t>(shape[0]);
  for (int i : indices) {
    if (i < 0 || i >= shape[0]) throw ShapeError("index_batch: index out of range");
  }
  shape[0] = static_cast<int>(indices.size());
  std::vector<double> out(indices.size() * item);
  const double* xd = x.data().data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    std::copy(xd + indices[k] * item, xd + (indices[k] + 1) * item, out.data() + k * item);
  }
  auto xn = x.node();
  return make_result(shape, std::move(out), {x}, [=](const std::vector<double>& g) {
    auto& gx = xn->grad_buffer();
    for (std::size_t k = 0; k < indices.size(); ++k) {
      for (std::size_t j = 0; j < item; ++j) gx[indices[k] * item + j] += g[k * item + j];
    }
  });
}

Tensor group_mean_batch(const Tensor& x, const std::vector<std::vector<int>>& groups) {
  if (x.rank() < 1) throw ShapeError("group_mean_batch: rank 0 input");
  Shape shape = x.shape();
  const std::size_t item = x.numel() / static_cast<std::size_t>(shape[0]);
  for (const auto& grp : groups) {
    if (grp.empty()) throw ShapeError("group_mean_batch: empty group");
    for (int i : grp)
      if (i < 0 || i >= shape[0]) throw ShapeError("group_mean_batch: index out of range");
  }
  shape[0] = static_cast<int>(groups.size());
  std::vector<double> out(groups.size() * item, 0.0);
  const double* xd = x.data().data();
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const double inv = 1.0 / static_cast<double>(groups[k].size());
    double* dst = out.data() + k * item;
    for (int i : groups[k])
      for (std::size_t j = 0; j < item; ++j) dst[j] += xd[i * item + j];
    for (std::size_t j = 0; j < item; ++j) dst[j] *= inv;
  }
  auto xn = x.node();
  return make_result(shape, std::move(out), {x}, [=](const std::vector<double>& g) {
    auto& gx = xn->grad_buffer();
    for (std::size_t k = 0; k < groups.size(); ++k) {
      const double inv = 1.0 / static_cast<double>(groups[k].size());
      for (int i : groups[k])
        for (std::size_t j = 0; j < item; ++j) gx[i * item + j] += g[k * item + j] * inv;
    }
  });
}

Tensor select_channel(const Tensor& x, int channel) {
  require_rank(x, 4, "select_channel");
  const Dims4 in(x);
  if (channel < 0 || channel >= in.c) throw ShapeError("select_channel: channel out of range");
  const std::size_t plane = in.plane();
  std::vector<double> out(static_cast<std::size_t>(in.b) * plane);
  const double* xd = x.data().data();
  for (int b = 0; b < in.b; ++b) {
    const double* src = xd + (static_cast<std::size_t>(b) * in.c + channel) * plane;
    std::copy(src, src + plane, out.data() + b * plane);
  }
  auto xn = x.node();
  return make_result(Shape{in.b, 1, in.h, in.w}, std::move(out), {x}, [=](const std::vector<double>& g) {
    auto& gx = xn->grad_buffer();
    for (int b = 0; b < in.b; ++b) {
      double* dst = gx.data() + (static_cast<std::size_t>(b) * in.c + channel) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += g[b * plane + i];
    }
  });
}

Tensor softmax_channels(const Tensor& x) {
  require_rank(x, 4, "softmax_channels");
  const Dims4 in(x);
  const std::size_t plane = in.plane();
  std::vector<double> out(x.numel());
  const double* xd = x.data().data();
  for (int b = 0; b < in.b; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * in.c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      double mx = xd[base + i];
      for (int c = 1; c < in.c; ++c) mx = std::max(mx, xd[base + c * plane + i]);
      double total = 0.0;
      for (int c = 0; c < in.c; ++c) {
        const double e = std::exp(xd[base + c * plane + i] - mx);
        out[base + c * plane + i] = e;
        total += e;
      }
      for (int c = 0; c < in.c; ++c) out[base + c * plane + i] /= total;
    }
  }
  auto xn = x.node();
  Tensor result = make_result(x.shape(), std::move(out), {x}, nullptr);
  if (result.requires_grad()) {
    const std::vector<double>* probs = &result.node()->data;
    result.node()->backward = [=](const std::vector<double>& g) {
      auto& gx = xn->grad_buffer();
      const auto& p = *probs;
      for (int b = 0; b < in.b; ++b) {
        const std::size_t base = static_cast<std::size_t>(b) * in.c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          double dot = 0.0;
          for (int c = 0; c < in.c; ++c) dot += g[base + c * plane + i] * p[base + c * plane + i];
          for (int c = 0; c < in.c; ++c) {
            const std::size_t j = base + c * plane + i;
            gx[j] += p[j] * (g[j] - dot);
          }
        }
      }
    };
  }
  return result;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 4, "cross_entropy");
  const Dims4 in(logits);
  const std::size_t plane = in.plane();
  const std::size_t n = static_cast<std::size_t>(in.b) * plane;
  if (labels.size() != n) throw ShapeError("cross_entropy: label count mismatch");
  std::vector<int> lab(labels.begin(), labels.end());
  for (int l : lab)
    if (l < 0 || l >= in.c) throw ValidationError("cross_entropy: label out of range");

  std::vector<double> probs(logits.numel());
  const double* xd = logits.data().data();
  double loss = 0.0;
  for (int b = 0; b < in.b; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * in.c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      double mx = xd[base + i];
      for (int c = 1; c < in.c; ++c) mx = std::max(mx, xd[base + c * plane + i]);
      double total = 0.0;
      for (int c = 0; c < in.c; ++c) total += std::exp(xd[base + c * plane + i] - mx);
      const double log_z = mx + std::log(total);
      for (int c = 0; c < in.c; ++c) probs[base + c * plane + i] = std::exp(xd[base + c * plane + i] - log_z);
      loss -= xd[base + lab[b * plane + i] * plane + i] - log_z;
    }
  }
  loss /= static_cast<double>(n);
  auto xn = logits.node();
  return make_result(Shape{1}, {loss}, {logits}, [=](const std::vector<double>& g) {
    auto& gx = xn->grad_buffer();
    const double s = g[0] / static_cast<double>(n);
    for (int b = 0; b < in.b; ++b) {
      const std::size_t base = static_cast<std::size_t>(b) * in.c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        for (int c = 0; c < in.c; ++c) {
          const std::size_t j = base + c * plane + i;
          gx[j] += s * (probs[j] - (lab[b * plane + i] == c ? 1.0 : 0.0));
        }
      }
    }
  });
}

Tensor soft_dice_loss(const Tensor& fg_probs, std::span<const int> labels) {
  if (fg_probs.numel() != labels.size()) throw ShapeError("soft_dice_loss: label count mismatch");
  constexpr double kSmooth = 1.0;
  const auto p = fg_probs.data();
  double inter = 0.0, sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * labels[i];
    sp += p[i];
    st += labels[i];
  }
  const double num = 2.0 * inter + kSmooth;
  const double den = sp + st + kSmooth;
  std::vector<int> lab(labels.begin(), labels.end());
  auto pn = fg_probs.node();
  return make_result(Shape{1}, {1.0 - num / den}, {fg_probs}, [=](const std::vector<double>& g) {
    auto& gp = pn->grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) {
      // d(1 - num/den)/dp_i = -(2 t_i den - num) / den^2
      gp[i] += -g[0] * (2.0 * lab[i] * den - num) / (den * den);
    }
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto ad = a.data();
  const auto bd = b.data();
  const double n = static_cast<double>(ad.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const double d = ad[i] - bd[i];
    acc += d * d;
  }
  auto an = a.node();
  auto bn = b.node();
  return make_result(Shape{1}, {acc / n}, {a, b}, [=](const std::vector<double>& g) {
    const double s = 2.0 * g[0] / n;
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * (an->data[i] - bn->data[i]);
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= s * (an->data[i] - bn->data[i]);
    }
  });
}

}  // namespace fsvos::ops
