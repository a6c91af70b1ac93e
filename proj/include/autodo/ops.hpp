#pragma once

// Differentiable operations. Every op except grid_sample / affine_grid has a
// backward written in terms of other ops in this file, so gradients can be
// differentiated again (Hessian-vector and mixed second derivatives).

#include <cstdint>
#include <span>

#include "autodo/tensor.hpp"

namespace autodo::ops {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor reciprocal(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor relu(const Tensor& x);
/// Gradient is passed only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);
/// Multiplies by a constant (non-differentiated) mask of the same shape.
Tensor mask(const Tensor& x, const Tensor& constant);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
/// Broadcasts x to `shape`; x must have the same rank with every dim equal or 1.
Tensor broadcast_to(const Tensor& x, const Shape& shape);
/// Sums x down to `shape` (same rank, each dim equal or 1). Adjoint of broadcast_to.
Tensor reduce_to(const Tensor& x, const Shape& shape);
/// Contiguous flat segment [offset, offset + numel(shape)) viewed as `shape`.
Tensor segment(const Tensor& x, std::int64_t offset, Shape shape);
/// Adjoint of segment: places x into a zero vector of length `total`.
Tensor embed(const Tensor& x, std::int64_t offset, std::int64_t total);
/// Column `col` of a matrix [rows, cols] as a [rows] vector.
Tensor column(const Tensor& x, std::int64_t col);
/// Adjoint of column.
Tensor embed_column(const Tensor& x, std::int64_t col, std::int64_t cols);

// Row-wise ([rows, cols]).
Tensor row_sum(const Tensor& x);
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
/// Scales each leading-index slice of x by s[i]; s has shape [x.dim(0)].
Tensor scale_rows(const Tensor& x, const Tensor& s);

Tensor transpose(const Tensor& x);
Tensor matmul(const Tensor& a, const Tensor& b);

/// 3x3 same-padding convolution. x [B, Cin, H, W], w [Cout, Cin, 3, 3].
Tensor conv2d(const Tensor& x, const Tensor& w);
/// Gradient of conv2d wrt its input given the output gradient g.
Tensor conv2d_input_grad(const Tensor& g, const Tensor& w);
/// Gradient of conv2d wrt its kernel given input x and output gradient g.
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& g);

/// 2x2 mean pool over [B, C, H, W].
Tensor avg_pool2(const Tensor& x);
Tensor avg_unpool2(const Tensor& g, const Shape& input_shape);

/// Bilinear sampling with zero padding; img [B, C, H, W], grid [B, Ho, Wo, 2].
/// Differentiable once wrt both arguments.
Tensor grid_sample(const Tensor& img, const Tensor& grid);
/// theta [B, 2, 3] -> sampling grid [B, H, W, 2] over normalized pixel centers.
Tensor affine_grid(const Tensor& theta, std::int64_t height, std::int64_t width);

}  // namespace autodo::ops
