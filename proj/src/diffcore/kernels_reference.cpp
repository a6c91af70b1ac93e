// Serial textbook loops. Slow on purpose: they are the readable definition
// each parallel kernel is tested and benchmarked against.

#include <cmath>

#include "autodo/kernels.hpp"

namespace autodo::kernels::reference {

namespace {

double pixel(std::span<const double> img, std::int64_t plane, std::int64_t y, std::int64_t x, std::int64_t h,
             std::int64_t w) {
  if (y < 0 || x < 0 || y >= h || x >= w) return 0.0;
  return img[(plane * h + y) * w + x];
}

double source_coord(double g, std::int64_t size) { return ((g + 1.0) * static_cast<double>(size) - 1.0) / 2.0; }

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out, MatmulDims d) {
  for (std::int64_t i = 0; i < d.m; ++i)
    for (std::int64_t j = 0; j < d.n; ++j) {
      double s = 0.0;
      for (std::int64_t k = 0; k < d.k; ++k) s += a[i * d.k + k] * b[k * d.n + j];
      out[i * d.n + j] = s;
    }
}

void conv3x3(std::span<const double> x, std::span<const double> w, std::span<double> out, ConvDims d) {
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t co = 0; co < d.out_ch; ++co)
      for (std::int64_t y = 0; y < d.height; ++y)
        for (std::int64_t xx = 0; xx < d.width; ++xx) {
          double s = 0.0;
          for (std::int64_t ci = 0; ci < d.in_ch; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx)
                s += w[((co * d.in_ch + ci) * 3 + ky) * 3 + kx] *
                     pixel(x, b * d.in_ch + ci, y + ky - 1, xx + kx - 1, d.height, d.width);
          out[((b * d.out_ch + co) * d.height + y) * d.width + xx] = s;
        }
}

void conv3x3_input_grad(std::span<const double> grad_out, std::span<const double> w, std::span<double> grad_x,
                        ConvDims d) {
  // dx[y, x] = sum over outputs that read (y, x): output (y - ky + 1, x - kx + 1).
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t ci = 0; ci < d.in_ch; ++ci)
      for (std::int64_t y = 0; y < d.height; ++y)
        for (std::int64_t xx = 0; xx < d.width; ++xx) {
          double s = 0.0;
          for (std::int64_t co = 0; co < d.out_ch; ++co)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx)
                s += w[((co * d.in_ch + ci) * 3 + ky) * 3 + kx] *
                     pixel(grad_out, b * d.out_ch + co, y - ky + 1, xx - kx + 1, d.height, d.width);
          grad_x[((b * d.in_ch + ci) * d.height + y) * d.width + xx] = s;
        }
}

void conv3x3_weight_grad(std::span<const double> x, std::span<const double> grad_out, std::span<double> grad_w,
                         ConvDims d) {
  for (std::int64_t co = 0; co < d.out_ch; ++co)
    for (std::int64_t ci = 0; ci < d.in_ch; ++ci)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          double s = 0.0;
          for (std::int64_t b = 0; b < d.batch; ++b)
            for (std::int64_t y = 0; y < d.height; ++y)
              for (std::int64_t xx = 0; xx < d.width; ++xx)
                s += grad_out[((b * d.out_ch + co) * d.height + y) * d.width + xx] *
                     pixel(x, b * d.in_ch + ci, y + ky - 1, xx + kx - 1, d.height, d.width);
          grad_w[((co * d.in_ch + ci) * 3 + ky) * 3 + kx] = s;
        }
}

void grid_sample(std::span<const double> img, std::span<const double> grid, std::span<double> out, SampleDims d) {
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t ch = 0; ch < d.ch; ++ch)
      for (std::int64_t oy = 0; oy < d.out_h; ++oy)
        for (std::int64_t ox = 0; ox < d.out_w; ++ox) {
          const std::int64_t q = oy * d.out_w + ox;
          const double ix = source_coord(grid[(b * d.out_h * d.out_w + q) * 2], d.in_w);
          const double iy = source_coord(grid[(b * d.out_h * d.out_w + q) * 2 + 1], d.in_h);
          const auto x0 = static_cast<std::int64_t>(std::floor(ix));
          const auto y0 = static_cast<std::int64_t>(std::floor(iy));
          const double tx = ix - static_cast<double>(x0), ty = iy - static_cast<double>(y0);
          const std::int64_t plane = b * d.ch + ch;
          out[(plane * d.out_h + oy) * d.out_w + ox] =
              (1 - tx) * (1 - ty) * pixel(img, plane, y0, x0, d.in_h, d.in_w) +
              tx * (1 - ty) * pixel(img, plane, y0, x0 + 1, d.in_h, d.in_w) +
              (1 - tx) * ty * pixel(img, plane, y0 + 1, x0, d.in_h, d.in_w) +
              tx * ty * pixel(img, plane, y0 + 1, x0 + 1, d.in_h, d.in_w);
        }
}

void grid_sample_backward(std::span<const double> img, std::span<const double> grid,
                          std::span<const double> grad_out, std::span<double> grad_img,
                          std::span<double> grad_grid, SampleDims d) {
  for (auto& v : grad_img) v = 0.0;
  for (auto& v : grad_grid) v = 0.0;
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t oy = 0; oy < d.out_h; ++oy)
      for (std::int64_t ox = 0; ox < d.out_w; ++ox) {
        const std::int64_t q = b * d.out_h * d.out_w + oy * d.out_w + ox;
        const double ix = source_coord(grid[q * 2], d.in_w);
        const double iy = source_coord(grid[q * 2 + 1], d.in_h);
        const auto x0 = static_cast<std::int64_t>(std::floor(ix));
        const auto y0 = static_cast<std::int64_t>(std::floor(iy));
        const double tx = ix - static_cast<double>(x0), ty = iy - static_cast<double>(y0);
        for (std::int64_t ch = 0; ch < d.ch; ++ch) {
          const std::int64_t plane = b * d.ch + ch;
          const double go = grad_out[(plane * d.out_h + oy) * d.out_w + ox];
          const std::int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
          const std::int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
          const double ws[4] = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
          for (int k = 0; k < 4; ++k) {
            if (!grad_img.empty() && xs[k] >= 0 && ys[k] >= 0 && xs[k] < d.in_w && ys[k] < d.in_h)
              grad_img[(plane * d.in_h + ys[k]) * d.in_w + xs[k]] += ws[k] * go;
          }
          if (!grad_grid.empty()) {
            const double v00 = pixel(img, plane, y0, x0, d.in_h, d.in_w);
            const double v10 = pixel(img, plane, y0, x0 + 1, d.in_h, d.in_w);
            const double v01 = pixel(img, plane, y0 + 1, x0, d.in_h, d.in_w);
            const double v11 = pixel(img, plane, y0 + 1, x0 + 1, d.in_h, d.in_w);
            grad_grid[q * 2] += go * ((v10 - v00) * (1 - ty) + (v11 - v01) * ty) * static_cast<double>(d.in_w) / 2.0;
            grad_grid[q * 2 + 1] +=
                go * ((v01 - v00) * (1 - tx) + (v11 - v10) * tx) * static_cast<double>(d.in_h) / 2.0;
          }
        }
      }
}

}  // namespace autodo::kernels::reference
