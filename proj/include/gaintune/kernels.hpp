#pragma once

#include <cstdint>
#include <vector>

#include "gaintune/tensor.hpp"

// Low-level dense kernels. Every output element is a gather: an independent,
// fixed-order reduction over its inputs. Parallel variants split work across
// output elements only, so results are bitwise identical to the serial
// reference for any thread count.
namespace gt::kernels {

struct ConvGeom {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

// Cross-correlation (no kernel flip), zero padding. Weights (cout,cin,kh,kw);
// bias, when present, is (1,cout,1,1).
Shape conv2d_out_shape(const Shape& in, const Shape& w, const ConvGeom& g);
Tensor conv2d_forward(const Tensor& in, const Tensor& w, const Tensor* bias,
                      const ConvGeom& g);
Tensor conv2d_backward_input(const Tensor& gout, const Tensor& w, Shape in_shape,
                             const ConvGeom& g);
Tensor conv2d_backward_weights(const Tensor& gout, const Tensor& in, Shape w_shape,
                               const ConvGeom& g);
Tensor conv2d_backward_bias(const Tensor& gout);

// Transposed convolution; weights (cin,cout,kh,kw). Output extent is
// (H-1)*stride - 2*pad + k.
Shape tconv2d_out_shape(const Shape& in, const Shape& w, int stride, int pad);
Tensor tconv2d_forward(const Tensor& in, const Tensor& w, const Tensor* bias,
                       int stride, int pad);
Tensor tconv2d_backward_input(const Tensor& gout, const Tensor& w, Shape in_shape,
                              int stride, int pad);
Tensor tconv2d_backward_weights(const Tensor& gout, const Tensor& in, Shape w_shape,
                                int stride, int pad);

Tensor relu_forward(const Tensor& in);
Tensor relu_backward(const Tensor& gout, const Tensor& in);

// Per-channel multiplier; gains is (1,c,1,1).
Tensor channel_scale_forward(const Tensor& in, const Tensor& gains);
Tensor channel_scale_backward_input(const Tensor& gout, const Tensor& gains);
Tensor channel_scale_backward_gains(const Tensor& gout, const Tensor& in);

// 2x2 max pooling, stride 2. Requires even spatial extents; ties take the
// first maximum in scan order. argmax records flat input indices for backward.
Tensor maxpool2_forward(const Tensor& in, std::vector<std::int64_t>& argmax);
Tensor maxpool2_backward(const Tensor& gout, const std::vector<std::int64_t>& argmax,
                         Shape in_shape);

Tensor upsample2_forward(const Tensor& in);
Tensor upsample2_backward(const Tensor& gout);

// Serial reference implementations, kept for testing the parallel kernels.
namespace serial {
Tensor conv2d_forward(const Tensor& in, const Tensor& w, const Tensor* bias,
                      const ConvGeom& g);
Tensor conv2d_backward_input(const Tensor& gout, const Tensor& w, Shape in_shape,
                             const ConvGeom& g);
Tensor conv2d_backward_weights(const Tensor& gout, const Tensor& in, Shape w_shape,
                               const ConvGeom& g);
Tensor tconv2d_forward(const Tensor& in, const Tensor& w, const Tensor* bias,
                       int stride, int pad);
Tensor tconv2d_backward_input(const Tensor& gout, const Tensor& w, Shape in_shape,
                              int stride, int pad);
Tensor tconv2d_backward_weights(const Tensor& gout, const Tensor& in, Shape w_shape,
                                int stride, int pad);
Tensor relu_forward(const Tensor& in);
Tensor channel_scale_forward(const Tensor& in, const Tensor& gains);
}  // namespace serial

}  // namespace gt::kernels
