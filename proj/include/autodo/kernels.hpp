#pragma once

// Raw numeric kernels behind the differentiable ops. The top-level versions
// are OpenMP-parallel; `reference` holds plain serial loops kept as the
// ground truth for tests and the benchmark. Every parallel kernel assigns each
// output element to exactly one thread with a fixed summation order, so results
// are bitwise independent of the thread count.

#include <cstdint>
#include <span>

namespace autodo::kernels {

struct MatmulDims {
  std::int64_t m, k, n;  // [m,k] x [k,n]
};

/// 3x3 convolution, stride 1, zero padding 1 (output keeps H x W).
struct ConvDims {
  std::int64_t batch, in_ch, out_ch, height, width;
};

/// Bilinear sampling of an [batch, ch, in_h, in_w] image at an
/// [batch, out_h, out_w, 2] grid of normalized (x, y) coordinates in [-1, 1],
/// pixel centers at (2i + 1)/size - 1, zeros outside the frame.
struct SampleDims {
  std::int64_t batch, ch, in_h, in_w, out_h, out_w;
};

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out, MatmulDims d);

void conv3x3(std::span<const double> x, std::span<const double> w, std::span<double> out, ConvDims d);
void conv3x3_input_grad(std::span<const double> grad_out, std::span<const double> w, std::span<double> grad_x,
                        ConvDims d);
void conv3x3_weight_grad(std::span<const double> x, std::span<const double> grad_out, std::span<double> grad_w,
                         ConvDims d);

/// 2x2 mean pooling, stride 2 over [planes, h, w] (h, w even).
void avg_pool2(std::span<const double> x, std::span<double> out, std::int64_t planes, std::int64_t h, std::int64_t w);
/// Adjoint of avg_pool2: every input cell receives a quarter of its window's value.
void avg_unpool2(std::span<const double> g, std::span<double> out, std::int64_t planes, std::int64_t h,
                 std::int64_t w);

void grid_sample(std::span<const double> img, std::span<const double> grid, std::span<double> out, SampleDims d);
/// Either gradient span may be empty to skip it.
void grid_sample_backward(std::span<const double> img, std::span<const double> grid,
                          std::span<const double> grad_out, std::span<double> grad_img,
                          std::span<double> grad_grid, SampleDims d);

namespace reference {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out, MatmulDims d);
void conv3x3(std::span<const double> x, std::span<const double> w, std::span<double> out, ConvDims d);
void conv3x3_input_grad(std::span<const double> grad_out, std::span<const double> w, std::span<double> grad_x,
                        ConvDims d);
void conv3x3_weight_grad(std::span<const double> x, std::span<const double> grad_out, std::span<double> grad_w,
                         ConvDims d);
void grid_sample(std::span<const double> img, std::span<const double> grid, std::span<double> out, SampleDims d);
void grid_sample_backward(std::span<const double> img, std::span<const double> grid,
                          std::span<const double> grad_out, std::span<double> grad_img,
                          std::span<double> grad_grid, SampleDims d);

}  // namespace reference
}  // namespace autodo::kernels
