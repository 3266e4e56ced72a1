#include "gaintune/kernels.hpp"

#include <algorithm>
#include <string>

namespace gt::kernels {
namespace {

// Runs f(i, j) over [0,a) x [0,b). The parallel and serial paths execute the
// same instantiation of f, so per-element results are bitwise identical.
template <class F>
void for_each_2d(bool parallel, std::int64_t a, std::int64_t b, F&& f) {
  if (parallel) {
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t i = 0; i < a; ++i)
      for (std::int64_t j = 0; j < b; ++j) f(i, j);
  } else {
    for (std::int64_t i = 0; i < a; ++i)
      for (std::int64_t j = 0; j < b; ++j) f(i, j);
  }
}

void check_conv_args(const Tensor& in, const Tensor& w, const Tensor* bias,
                     const ConvGeom& g, bool transposed) {
  std::int64_t w_cin = transposed ? w.shape.n : w.shape.c;
  std::int64_t w_cout = transposed ? w.shape.c : w.shape.n;
  if (in.shape.c != w_cin)
    throw ValidationError("conv2d: input channels " + in.shape.str() +
                          " do not match weights " + w.shape.str());
  if (bias && bias->numel() != w_cout)
    throw ValidationError("conv2d: bias length " + std::to_string(bias->numel()) +
                          " does not match output channels " + std::to_string(w_cout));
  if (g.stride < 1 || g.dilation < 1 || g.pad < 0)
    throw ValidationError("conv2d: stride/dilation must be >= 1 and pad >= 0");
}

// 3x3, stride 1, dilation 1: unrolled taps with an interior fast path.
void conv3x3_one(const Tensor& in, const Tensor& w, const Tensor* bias, int pad,
                 Tensor& out, std::int64_t n, std::int64_t co) {
  const std::int64_t CI = in.shape.c, H = in.shape.h, W = in.shape.w;
  const std::int64_t HO = out.shape.h, WO = out.shape.w;
  double* o = &out.data[static_cast<std::size_t>((n * out.shape.c + co) * HO * WO)];
  const double b = bias ? bias->data[static_cast<std::size_t>(co)] : 0.0;
  std::fill(o, o + HO * WO, b);
  const double* wco = &w.data[static_cast<std::size_t>(co * CI * 9)];
  const double* inb = &in.data[static_cast<std::size_t>(n * CI * H * W)];
  for (std::int64_t ci = 0; ci < CI; ++ci) {
    const double* wp = wco + ci * 9;
    const double w00 = wp[0], w01 = wp[1], w02 = wp[2];
    const double w10 = wp[3], w11 = wp[4], w12 = wp[5];
    const double w20 = wp[6], w21 = wp[7], w22 = wp[8];
    const double* ip = inb + ci * H * W;
    for (std::int64_t y = 0; y < HO; ++y) {
      const std::int64_t iy = y - pad;  // top input row of the window
      double* orow = o + y * WO;
      if (iy >= 0 && iy + 2 < H) {
        const double* r0 = ip + iy * W;
        const double* r1 = r0 + W;
        const double* r2 = r1 + W;
        const std::int64_t x0 = std::max<std::int64_t>(0, pad);
        const std::int64_t x1 = std::min(WO, W + pad - 2);
        for (std::int64_t x = x0; x < x1; ++x) {
          const std::int64_t ix = x - pad;
          orow[x] += w00 * r0[ix] + w01 * r0[ix + 1] + w02 * r0[ix + 2] +
                     w10 * r1[ix] + w11 * r1[ix + 1] + w12 * r1[ix + 2] +
                     w20 * r2[ix] + w21 * r2[ix + 1] + w22 * r2[ix + 2];
        }
        for (std::int64_t x = 0; x < WO; ++x) {
          if (x >= x0 && x < x1) continue;
          double acc = 0.0;
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const std::int64_t ix = x - pad + kx;
              if (ix < 0 || ix >= W) continue;
              acc += wp[ky * 3 + kx] * ip[(iy + ky) * W + ix];
            }
          orow[x] += acc;
        }
      } else {
        for (std::int64_t x = 0; x < WO; ++x) {
          double acc = 0.0;
          for (int ky = 0; ky < 3; ++ky) {
            const std::int64_t yy = iy + ky;
            if (yy < 0 || yy >= H) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const std::int64_t ix = x - pad + kx;
              if (ix < 0 || ix >= W) continue;
              acc += wp[ky * 3 + kx] * ip[yy * W + ix];
            }
          }
          orow[x] += acc;
        }
      }
    }
  }
}

// Generic stride/dilation/kernel-size path.
void conv_generic_one(const Tensor& in, const Tensor& w, const Tensor* bias,
                      const ConvGeom& g, Tensor& out, std::int64_t n,
                      std::int64_t co) {
  const std::int64_t CI = in.shape.c, H = in.shape.h, W = in.shape.w;
  const std::int64_t KH = w.shape.h, KW = w.shape.w;
  const std::int64_t HO = out.shape.h, WO = out.shape.w;
  double* o = &out.data[static_cast<std::size_t>((n * out.shape.c + co) * HO * WO)];
  const double b = bias ? bias->data[static_cast<std::size_t>(co)] : 0.0;
  const double* inb = &in.data[static_cast<std::size_t>(n * CI * H * W)];
  const double* wco = &w.data[static_cast<std::size_t>(co * CI * KH * KW)];
  for (std::int64_t y = 0; y < HO; ++y)
    for (std::int64_t x = 0; x < WO; ++x) {
      double acc = b;
      for (std::int64_t ci = 0; ci < CI; ++ci) {
        const double* ip = inb + ci * H * W;
        const double* wp = wco + ci * KH * KW;
        for (std::int64_t ky = 0; ky < KH; ++ky) {
          const std::int64_t iy = y * g.stride - g.pad + ky * g.dilation;
          if (iy < 0 || iy >= H) continue;
          for (std::int64_t kx = 0; kx < KW; ++kx) {
            const std::int64_t ix = x * g.stride - g.pad + kx * g.dilation;
            if (ix < 0 || ix >= W) continue;
            acc += wp[ky * KW + kx] * ip[iy * W + ix];
          }
        }
      }
      o[y * WO + x] = acc;
    }
}

Tensor conv2d_forward_impl(bool parallel, const Tensor& in, const Tensor& w,
                           const Tensor* bias, const ConvGeom& g) {
  check_conv_args(in, w, bias, g, false);
  Tensor out(conv2d_out_shape(in.shape, w.shape, g));
  const bool fast = g.stride == 1 && g.dilation == 1 && w.shape.h == 3 && w.shape.w == 3;
  for_each_2d(parallel, in.shape.n, w.shape.n, [&](std::int64_t n, std::int64_t co) {
    if (fast)
      conv3x3_one(in, w, bias, g.pad, out, n, co);
    else
      conv_generic_one(in, w, bias, g, out, n, co);
  });
  return out;
}

Tensor conv2d_backward_input_impl(bool parallel, const Tensor& gout, const Tensor& w,
                                  Shape in_shape, const ConvGeom& g) {
  // d in[n,ci,iy,ix] = sum over (co,ky,kx) with iy = oy*s - p + ky*d solvable.
  if (g.stride == 1 && g.dilation == 1 && w.shape.h == 3 && w.shape.w == 3 &&
      g.pad <= 2) {
    // Equivalent to a 3x3 correlation of gout with transposed, flipped weights.
    const std::int64_t CO = w.shape.n, CI = w.shape.c;
    Tensor wt(Shape{CI, CO, 3, 3});
    for (std::int64_t co = 0; co < CO; ++co)
      for (std::int64_t ci = 0; ci < CI; ++ci)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx)
            wt.at(ci, co, 2 - ky, 2 - kx) = w.at(co, ci, ky, kx);
    ConvGeom gt_geom{1, 2 - g.pad, 1};
    Tensor din(in_shape);
    for_each_2d(parallel, gout.shape.n, CI, [&](std::int64_t n, std::int64_t ci) {
      conv3x3_one(gout, wt, nullptr, gt_geom.pad, din, n, ci);
    });
    return din;
  }
  Tensor din(in_shape);
  const std::int64_t CO = w.shape.n, KH = w.shape.h, KW = w.shape.w;
  const std::int64_t HO = gout.shape.h, WO = gout.shape.w;
  const std::int64_t H = in_shape.h, W = in_shape.w;
  for_each_2d(parallel, in_shape.n, in_shape.c, [&](std::int64_t n, std::int64_t ci) {
    double* dp = &din.data[static_cast<std::size_t>((n * in_shape.c + ci) * H * W)];
    for (std::int64_t iy = 0; iy < H; ++iy)
      for (std::int64_t ix = 0; ix < W; ++ix) {
        double acc = 0.0;
        for (std::int64_t co = 0; co < CO; ++co) {
          const double* gp =
              &gout.data[static_cast<std::size_t>((n * CO + co) * HO * WO)];
          const double* wp =
              &w.data[static_cast<std::size_t>((co * in_shape.c + ci) * KH * KW)];
          for (std::int64_t ky = 0; ky < KH; ++ky) {
            const std::int64_t num_y = iy + g.pad - ky * g.dilation;
            if (num_y < 0 || num_y % g.stride) continue;
            const std::int64_t oy = num_y / g.stride;
            if (oy >= HO) continue;
            for (std::int64_t kx = 0; kx < KW; ++kx) {
              const std::int64_t num_x = ix + g.pad - kx * g.dilation;
              if (num_x < 0 || num_x % g.stride) continue;
              const std::int64_t ox = num_x / g.stride;
              if (ox >= WO) continue;
              acc += wp[ky * KW + kx] * gp[oy * WO + ox];
            }
          }
        }
        dp[iy * W + ix] = acc;
      }
  });
  return din;
}

Tensor conv2d_backward_weights_impl(bool parallel, const Tensor& gout,
                                    const Tensor& in, Shape w_shape,
                                    const ConvGeom& g) {
  Tensor dw(w_shape);
  const std::int64_t N = in.shape.n, H = in.shape.h, W = in.shape.w;
  const std::int64_t KH = w_shape.h, KW = w_shape.w;
  const std::int64_t HO = gout.shape.h, WO = gout.shape.w;
  for_each_2d(parallel, w_shape.n, w_shape.c, [&](std::int64_t co, std::int64_t ci) {
    double* dwp = &dw.data[static_cast<std::size_t>((co * w_shape.c + ci) * KH * KW)];
    for (std::int64_t ky = 0; ky < KH; ++ky)
      for (std::int64_t kx = 0; kx < KW; ++kx) {
        double acc = 0.0;
        for (std::int64_t n = 0; n < N; ++n) {
          const double* gp =
              &gout.data[static_cast<std::size_t>((n * gout.shape.c + co) * HO * WO)];
          const double* ip =
              &in.data[static_cast<std::size_t>((n * in.shape.c + ci) * H * W)];
          for (std::int64_t oy = 0; oy < HO; ++oy) {
            const std::int64_t iy = oy * g.stride - g.pad + ky * g.dilation;
            if (iy < 0 || iy >= H) continue;
            const double* grow = gp + oy * WO;
            const double* irow = ip + iy * W;
            for (std::int64_t ox = 0; ox < WO; ++ox) {
              const std::int64_t ix = ox * g.stride - g.pad + kx * g.dilation;
              if (ix < 0 || ix >= W) continue;
              acc += grow[ox] * irow[ix];
            }
          }
        }
        dwp[ky * KW + kx] = acc;
      }
  });
  return dw;
}

void tconv_one(const Tensor& in, const Tensor& w, const Tensor* bias, int stride,
               int pad, Tensor& out, std::int64_t n, std::int64_t co) {
  const std::int64_t CI = in.shape.c, H = in.shape.h, W = in.shape.w;
  const std::int64_t KH = w.shape.h, KW = w.shape.w, CO = w.shape.c;
  const std::int64_t HO = out.shape.h, WO = out.shape.w;
  double* o = &out.data[static_cast<std::size_t>((n * CO + co) * HO * WO)];
  const double b = bias ? bias->data[static_cast<std::size_t>(co)] : 0.0;
  for (std::int64_t y = 0; y < HO; ++y)
    for (std::int64_t x = 0; x < WO; ++x) {
      double acc = b;
      for (std::int64_t ci = 0; ci < CI; ++ci) {
        const double* ip = &in.data[static_cast<std::size_t>((n * CI + ci) * H * W)];
        const double* wp = &w.data[static_cast<std::size_t>((ci * CO + co) * KH * KW)];
        for (std::int64_t ky = 0; ky < KH; ++ky) {
          const std::int64_t num_y = y + pad - ky;
          if (num_y < 0 || num_y % stride) continue;
          const std::int64_t iy = num_y / stride;
          if (iy >= H) continue;
          for (std::int64_t kx = 0; kx < KW; ++kx) {
            const std::int64_t num_x = x + pad - kx;
            if (num_x < 0 || num_x % stride) continue;
            const std::int64_t ix = num_x / stride;
            if (ix >= W) continue;
            acc += wp[ky * KW + kx] * ip[iy * W + ix];
          }
        }
      }
      o[y * WO + x] = acc;
    }
}

Tensor tconv2d_forward_impl(bool parallel, const Tensor& in, const Tensor& w,
                            const Tensor* bias, int stride, int pad) {
  ConvGeom geom{stride, pad, 1};
  check_conv_args(in, w, bias, geom, true);
  Tensor out(tconv2d_out_shape(in.shape, w.shape, stride, pad));
  for_each_2d(parallel, in.shape.n, w.shape.c, [&](std::int64_t n, std::int64_t co) {
    tconv_one(in, w, bias, stride, pad, out, n, co);
  });
  return out;
}

Tensor tconv2d_backward_input_impl(bool parallel, const Tensor& gout, const Tensor& w,
                                   Shape in_shape, int stride, int pad) {
  // d in[n,ci,iy,ix] = sum over (co,ky,kx) of w * gout[iy*s - p + ky, ...].
  Tensor din(in_shape);
  const std::int64_t CO = w.shape.c, KH = w.shape.h, KW = w.shape.w;
  const std::int64_t HO = gout.shape.h, WO = gout.shape.w;
  for_each_2d(parallel, in_shape.n, in_shape.c, [&](std::int64_t n, std::int64_t ci) {
    double* dp = &din.data[static_cast<std::size_t>(
        (n * in_shape.c + ci) * in_shape.h * in_shape.w)];
    for (std::int64_t iy = 0; iy < in_shape.h; ++iy)
      for (std::int64_t ix = 0; ix < in_shape.w; ++ix) {
        double acc = 0.0;
        for (std::int64_t co = 0; co < CO; ++co) {
          const double* gp =
              &gout.data[static_cast<std::size_t>((n * CO + co) * HO * WO)];
          const double* wp = &w.data[static_cast<std::size_t>((ci * CO + co) * KH * KW)];
          for (std::int64_t ky = 0; ky < KH; ++ky) {
            const std::int64_t oy = iy * stride - pad + ky;
            if (oy < 0 || oy >= HO) continue;
            for (std::int64_t kx = 0; kx < KW; ++kx) {
              const std::int64_t ox = ix * stride - pad + kx;
              if (ox < 0 || ox >= WO) continue;
              acc += wp[ky * KW + kx] * gp[oy * WO + ox];
            }
          }
        }
        dp[iy * in_shape.w + ix] = acc;
      }
  });
  return din;
}

Tensor tconv2d_backward_weights_impl(bool parallel, const Tensor& gout,
                                     const Tensor& in, Shape w_shape, int stride,
                                     int pad) {
  Tensor dw(w_shape);
  const std::int64_t N = in.shape.n, H = in.shape.h, W = in.shape.w;
  const std::int64_t KH = w_shape.h, KW = w_shape.w, CO = w_shape.c;
  const std::int64_t HO = gout.shape.h, WO = gout.shape.w;
  for_each_2d(parallel, w_shape.n, CO, [&](std::int64_t ci, std::int64_t co) {
    double* dwp = &dw.data[static_cast<std::size_t>((ci * CO + co) * KH * KW)];
    for (std::int64_t ky = 0; ky < KH; ++ky)
      for (std::int64_t kx = 0; kx < KW; ++kx) {
        double acc = 0.0;
        for (std::int64_t n = 0; n < N; ++n) {
          const double* ip = &in.data[static_cast<std::size_t>((n * w_shape.n + ci) * H * W)];
          const double* gp = &gout.data[static_cast<std::size_t>((n * CO + co) * HO * WO)];
          for (std::int64_t iy = 0; iy < H; ++iy) {
            const std::int64_t oy = iy * stride - pad + ky;
            if (oy < 0 || oy >= HO) continue;
            for (std::int64_t ix = 0; ix < W; ++ix) {
              const std::int64_t ox = ix * stride - pad + kx;
              if (ox < 0 || ox >= WO) continue;
              acc += ip[iy * W + ix] * gp[oy * WO + ox];
            }
          }
        }
        dwp[ky * KW + kx] = acc;
      }
  });
  return dw;
}

Tensor relu_forward_impl(const Tensor& in) {
  Tensor out(in.shape);
  const std::int64_t n = in.numel();
#pragma omp parallel for schedule(static) if (n > 1 << 15)
  for (std::int64_t i = 0; i < n; ++i)
    out.data[i] = in.data[i] > 0.0 ? in.data[i] : 0.0;
  return out;
}

Tensor channel_scale_forward_impl(const Tensor& in, const Tensor& gains) {
  if (gains.numel() != in.shape.c)
    throw ValidationError("per_channel_scale: gains length " +
                          std::to_string(gains.numel()) +
                          " does not match channel count " +
                          std::to_string(in.shape.c));
  Tensor out(in.shape);
  const std::int64_t plane = in.shape.h * in.shape.w;
#pragma omp parallel for collapse(2) schedule(static) if (in.numel() > 1 << 15)
  for (std::int64_t n = 0; n < in.shape.n; ++n)
    for (std::int64_t c = 0; c < in.shape.c; ++c) {
      const double gval = gains.data[static_cast<std::size_t>(c)];
      const double* ip = &in.data[static_cast<std::size_t>((n * in.shape.c + c) * plane)];
      double* op = &out.data[static_cast<std::size_t>((n * in.shape.c + c) * plane)];
      for (std::int64_t i = 0; i < plane; ++i) op[i] = gval * ip[i];
    }
  return out;
}

}  // namespace

Shape conv2d_out_shape(const Shape& in, const Shape& w, const ConvGeom& g) {
  const std::int64_t ho = (in.h + 2 * g.pad - g.dilation * (w.h - 1) - 1) / g.stride + 1;
  const std::int64_t wo = (in.w + 2 * g.pad - g.dilation * (w.w - 1) - 1) / g.stride + 1;
  if (ho < 1 || wo < 1)
    throw ValidationError("conv2d: output extent < 1 for input " + in.str() +
                          " with kernel " + w.str());
  return Shape{in.n, w.n, ho, wo};
}

Shape tconv2d_out_shape(const Shape& in, const Shape& w, int stride, int pad) {
  const std::int64_t ho = (in.h - 1) * stride - 2 * pad + w.h;
  const std::int64_t wo = (in.w - 1) * stride - 2 * pad + w.w;
  if (ho < 1 || wo < 1)
    throw ValidationError("transpose_conv2d: output extent < 1 for input " + in.str());
  return Shape{in.n, w.c, ho, wo};
}

Tensor conv2d_forward(const Tensor& in, const Tensor& w, const Tensor* bias,
                      const ConvGeom& g) {
  return conv2d_forward_impl(true, in, w, bias, g);
}
Tensor conv2d_backward_input(const Tensor& gout, const Tensor& w, Shape in_shape,
                             const ConvGeom& g) {
  return conv2d_backward_input_impl(true, gout, w, in_shape, g);
}
Tensor conv2d_backward_weights(const Tensor& gout, const Tensor& in, Shape w_shape,
                               const ConvGeom& g) {
  return conv2d_backward_weights_impl(true, gout, in, w_shape, g);
}
Tensor conv2d_backward_bias(const Tensor& gout) {
  Tensor db(Shape{1, gout.shape.c, 1, 1});
  const std::int64_t plane = gout.shape.h * gout.shape.w;
  for (std::int64_t n = 0; n < gout.shape.n; ++n)
    for (std::int64_t c = 0; c < gout.shape.c; ++c) {
      const double* gp = &gout.data[static_cast<std::size_t>((n * gout.shape.c + c) * plane)];
      double acc = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) acc += gp[i];
      db.data[static_cast<std::size_t>(c)] += acc;
    }
  return db;
}

Tensor tconv2d_forward(const Tensor& in, const Tensor& w, const Tensor* bias,
                       int stride, int pad) {
  return tconv2d_forward_impl(true, in, w, bias, stride, pad);
}
Tensor tconv2d_backward_input(const Tensor& gout, const Tensor& w, Shape in_shape,
                              int stride, int pad) {
  return tconv2d_backward_input_impl(true, gout, w, in_shape, stride, pad);
}
Tensor tconv2d_backward_weights(const Tensor& gout, const Tensor& in, Shape w_shape,
                                int stride, int pad) {
  return tconv2d_backward_weights_impl(true, gout, in, w_shape, stride, pad);
}

Tensor relu_forward(const Tensor& in) { return relu_forward_impl(in); }

Tensor relu_backward(const Tensor& gout, const Tensor& in) {
  require_same_shape(gout, in, "relu_backward");
  Tensor din(in.shape);
  const std::int64_t n = in.numel();
#pragma omp parallel for schedule(static) if (n > 1 << 15)
  for (std::int64_t i = 0; i < n; ++i)
    din.data[i] = in.data[i] > 0.0 ? gout.data[i] : 0.0;
  return din;
}

Tensor channel_scale_forward(const Tensor& in, const Tensor& gains) {
  return channel_scale_forward_impl(in, gains);
}

Tensor channel_scale_backward_input(const Tensor& gout, const Tensor& gains) {
  return channel_scale_forward_impl(gout, gains);
}

Tensor channel_scale_backward_gains(const Tensor& gout, const Tensor& in) {
  require_same_shape(gout, in, "per_channel_scale backward");
  Tensor dg(Shape{1, in.shape.c, 1, 1});
  const std::int64_t plane = in.shape.h * in.shape.w;
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < in.shape.c; ++c) {
    double acc = 0.0;
    for (std::int64_t n = 0; n < in.shape.n; ++n) {
      const std::size_t base = static_cast<std::size_t>((n * in.shape.c + c) * plane);
      for (std::int64_t i = 0; i < plane; ++i)
        acc += gout.data[base + i] * in.data[base + i];
    }
    dg.data[static_cast<std::size_t>(c)] = acc;
  }
  return dg;
}

Tensor maxpool2_forward(const Tensor& in, std::vector<std::int64_t>& argmax) {
  if (in.shape.h % 2 || in.shape.w % 2)
    throw ValidationError("maxpool2: spatial extents must be even, got " +
                          in.shape.str());
  Tensor out(Shape{in.shape.n, in.shape.c, in.shape.h / 2, in.shape.w / 2});
  argmax.assign(static_cast<std::size_t>(out.numel()), 0);
  const std::int64_t H = in.shape.h, W = in.shape.w;
  std::int64_t idx = 0;
  for (std::int64_t n = 0; n < in.shape.n; ++n)
    for (std::int64_t c = 0; c < in.shape.c; ++c)
      for (std::int64_t y = 0; y < H; y += 2)
        for (std::int64_t x = 0; x < W; x += 2) {
          const std::int64_t base = ((n * in.shape.c + c) * H + y) * W + x;
          std::int64_t best = base;
          double bv = in.data[static_cast<std::size_t>(base)];
          const std::int64_t cand[3] = {base + 1, base + W, base + W + 1};
          for (std::int64_t k : cand)
            if (in.data[static_cast<std::size_t>(k)] > bv) {
              bv = in.data[static_cast<std::size_t>(k)];
              best = k;
            }
          out.data[static_cast<std::size_t>(idx)] = bv;
          argmax[static_cast<std::size_t>(idx)] = best;
          ++idx;
        }
  return out;
}

Tensor maxpool2_backward(const Tensor& gout, const std::vector<std::int64_t>& argmax,
                         Shape in_shape) {
  Tensor din(in_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i)
    din.data[static_cast<std::size_t>(argmax[i])] += gout.data[i];
  return din;
}

Tensor upsample2_forward(const Tensor& in) {
  Tensor out(Shape{in.shape.n, in.shape.c, in.shape.h * 2, in.shape.w * 2});
  const std::int64_t H = in.shape.h, W = in.shape.w;
  for (std::int64_t nc = 0; nc < in.shape.n * in.shape.c; ++nc) {
    const double* ip = &in.data[static_cast<std::size_t>(nc * H * W)];
    double* op = &out.data[static_cast<std::size_t>(nc * 4 * H * W)];
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const double v = ip[y * W + x];
        double* o = op + 2 * y * 2 * W + 2 * x;
        o[0] = v;
        o[1] = v;
        o[2 * W] = v;
        o[2 * W + 1] = v;
      }
  }
  return out;
}

Tensor upsample2_backward(const Tensor& gout) {
  if (gout.shape.h % 2 || gout.shape.w % 2)
    throw ValidationError("upsample2 backward: odd gradient extents " +
                          gout.shape.str());
  Tensor din(Shape{gout.shape.n, gout.shape.c, gout.shape.h / 2, gout.shape.w / 2});
  const std::int64_t H = din.shape.h, W = din.shape.w;
  for (std::int64_t nc = 0; nc < din.shape.n * din.shape.c; ++nc) {
    const double* gp = &gout.data[static_cast<std::size_t>(nc * 4 * H * W)];
    double* dp = &din.data[static_cast<std::size_t>(nc * H * W)];
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const double* g = gp + 2 * y * 2 * W + 2 * x;
        dp[y * W + x] = g[0] + g[1] + g[2 * W] + g[2 * W + 1];
      }
  }
  return din;
}

namespace serial {

Tensor conv2d_forward(const Tensor& in, const Tensor& w, const Tensor* bias,
                      const ConvGeom& g) {
  return conv2d_forward_impl(false, in, w, bias, g);
}
Tensor conv2d_backward_input(const Tensor& gout, const Tensor& w, Shape in_shape,
                             const ConvGeom& g) {
  return conv2d_backward_input_impl(false, gout, w, in_shape, g);
}
Tensor conv2d_backward_weights(const Tensor& gout, const Tensor& in, Shape w_shape,
                               const ConvGeom& g) {
  return conv2d_backward_weights_impl(false, gout, in, w_shape, g);
}
Tensor tconv2d_forward(const Tensor& in, const Tensor& w, const Tensor* bias,
                       int stride, int pad) {
  return tconv2d_forward_impl(false, in, w, bias, stride, pad);
}
Tensor tconv2d_backward_input(const Tensor& gout, const Tensor& w, Shape in_shape,
                              int stride, int pad) {
  return tconv2d_backward_input_impl(false, gout, w, in_shape, stride, pad);
}
Tensor tconv2d_backward_weights(const Tensor& gout, const Tensor& in, Shape w_shape,
                                int stride, int pad) {
  return tconv2d_backward_weights_impl(false, gout, in, w_shape, stride, pad);
}
Tensor relu_forward(const Tensor& in) {
  Tensor out(in.shape);
  for (std::int64_t i = 0; i < in.numel(); ++i)
    out.data[i] = in.data[i] > 0.0 ? in.data[i] : 0.0;
  return out;
}
Tensor channel_scale_forward(const Tensor& in, const Tensor& gains) {
  if (gains.numel() != in.shape.c)
    throw ValidationError("per_channel_scale: gains length mismatch");
  Tensor out(in.shape);
  const std::int64_t plane = in.shape.h * in.shape.w;
  for (std::int64_t n = 0; n < in.shape.n; ++n)
    for (std::int64_t c = 0; c < in.shape.c; ++c) {
      const double gval = gains.data[static_cast<std::size_t>(c)];
      const std::size_t base = static_cast<std::size_t>((n * in.shape.c + c) * plane);
      for (std::int64_t i = 0; i < plane; ++i)
        out.data[base + i] = gval * in.data[base + i];
    }
  return out;
}

}  // namespace serial
}  // namespace gt::kernels
