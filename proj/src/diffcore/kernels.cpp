#include "autodo/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace autodo::kernels {

namespace {

struct Corner {
  std::int64_t x0, y0;
  double wx1, wy1;
};

inline double unnormalize(double coord, std::int64_t size) { return ((coord + 1.0) * static_cast<double>(size) - 1.0) / 2.0; }

inline Corner locate(double gx, double gy, std::int64_t w, std::int64_t h) {
  double ix = unnormalize(gx, w);
  double iy = unnormalize(gy, h);
  double fx = std::floor(ix);
  double fy = std::floor(iy);
  return {static_cast<std::int64_t>(fx), static_cast<std::int64_t>(fy), ix - fx, iy - fy};
}

inline bool inside(std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h) {
  return x >= 0 && y >= 0 && x < w && y < h;
}

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out, MatmulDims d) {
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < d.m; ++i) {
    double* row = out.data() + i * d.n;
    std::fill(row, row + d.n, 0.0);
    for (std::int64_t k = 0; k < d.k; ++k) {
      const double aik = a[i * d.k + k];
      if (aik == 0.0) continue;
      const double* brow = b.data() + k * d.n;
      for (std::int64_t j = 0; j < d.n; ++j) row[j] += aik * brow[j];
    }
  }
}

void conv3x3(std::span<const double> x, std::span<const double> w, std::span<double> out, ConvDims d) {
  const std::int64_t hw = d.height * d.width;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < d.batch * d.out_ch; ++p) {
    const std::int64_t b = p / d.out_ch;
    const std::int64_t co = p % d.out_ch;
    double* o = out.data() + p * hw;
    std::fill(o, o + hw, 0.0);
    for (std::int64_t ci = 0; ci < d.in_ch; ++ci) {
      const double* in = x.data() + (b * d.in_ch + ci) * hw;
      const double* k = w.data() + (co * d.in_ch + ci) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const std::int64_t dy = ky - 1;
        const std::int64_t y0 = std::max<std::int64_t>(0, -dy), y1 = std::min(d.height, d.height - dy);
        for (int kx = 0; kx < 3; ++kx) {
          const std::int64_t dx = kx - 1;
          const std::int64_t x0 = std::max<std::int64_t>(0, -dx), x1 = std::min(d.width, d.width - dx);
          const double wv = k[ky * 3 + kx];
          for (std::int64_t y = y0; y < y1; ++y) {
            double* orow = o + y * d.width;
            const double* irow = in + (y + dy) * d.width + dx;
            for (std::int64_t xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx];
          }
        }
      }
    }
  }
}

void conv3x3_input_grad(std::span<const double> grad_out, std::span<const double> w, std::span<double> grad_x,
                        ConvDims d) {
  const std::int64_t hw = d.height * d.width;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < d.batch * d.in_ch; ++p) {
    const std::int64_t b = p / d.in_ch;
    const std::int64_t ci = p % d.in_ch;
    double* gx = grad_x.data() + p * hw;
    std::fill(gx, gx + hw, 0.0);
    for (std::int64_t co = 0; co < d.out_ch; ++co) {
      const double* g = grad_out.data() + (b * d.out_ch + co) * hw;
      const double* k = w.data() + (co * d.in_ch + ci) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const std::int64_t dy = ky - 1;
        const std::int64_t y0 = std::max<std::int64_t>(0, -dy), y1 = std::min(d.height, d.height - dy);
        for (int kx = 0; kx < 3; ++kx) {
          const std::int64_t dx = kx - 1;
          const std::int64_t x0 = std::max<std::int64_t>(0, -dx), x1 = std::min(d.width, d.width - dx);
          const double wv = k[ky * 3 + kx];
          for (std::int64_t y = y0; y < y1; ++y) {
            const double* grow = g + y * d.width;
            double* xrow = gx + (y + dy) * d.width + dx;
            for (std::int64_t xx = x0; xx < x1; ++xx) xrow[xx] += wv * grow[xx];
          }
        }
      }
    }
  }
}

void conv3x3_weight_grad(std::span<const double> x, std::span<const double> grad_out, std::span<double> grad_w,
                         ConvDims d) {
  const std::int64_t hw = d.height * d.width;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < d.out_ch * d.in_ch; ++p) {
    const std::int64_t co = p / d.in_ch;
    const std::int64_t ci = p % d.in_ch;
    double acc[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
    for (std::int64_t b = 0; b < d.batch; ++b) {
      const double* in = x.data() + (b * d.in_ch + ci) * hw;
      const double* g = grad_out.data() + (b * d.out_ch + co) * hw;
      for (int ky = 0; ky < 3; ++ky) {
        const std::int64_t dy = ky - 1;
        const std::int64_t y0 = std::max<std::int64_t>(0, -dy), y1 = std::min(d.height, d.height - dy);
        for (int kx = 0; kx < 3; ++kx) {
          const std::int64_t dx = kx - 1;
          const std::int64_t x0 = std::max<std::int64_t>(0, -dx), x1 = std::min(d.width, d.width - dx);
          double s = 0.0;
          for (std::int64_t y = y0; y < y1; ++y) {
            const double* grow = g + y * d.width;
            const double* irow = in + (y + dy) * d.width + dx;
            for (std::int64_t xx = x0; xx < x1; ++xx) s += grow[xx] * irow[xx];
          }
          acc[ky * 3 + kx] += s;
        }
      }
    }
    std::copy(acc, acc + 9, grad_w.data() + p * 9);
  }
}

void avg_pool2(std::span<const double> x, std::span<double> out, std::int64_t planes, std::int64_t h,
               std::int64_t w) {
  const std::int64_t oh = h / 2, ow = w / 2;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* in = x.data() + p * h * w;
    double* o = out.data() + p * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        const double* r0 = in + 2 * y * w + 2 * xx;
        const double* r1 = r0 + w;
        o[y * ow + xx] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
}

void avg_unpool2(std::span<const double> g, std::span<double> out, std::int64_t planes, std::int64_t h,
                 std::int64_t w) {
  const std::int64_t oh = h / 2, ow = w / 2;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* gi = g.data() + p * oh * ow;
    double* o = out.data() + p * h * w;
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t xx = 0; xx < w; ++xx) o[y * w + xx] = 0.25 * gi[(y / 2) * ow + xx / 2];
  }
}

void grid_sample(std::span<const double> img, std::span<const double> grid, std::span<double> out, SampleDims d) {
  const std::int64_t in_hw = d.in_h * d.in_w;
  const std::int64_t out_hw = d.out_h * d.out_w;
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < d.batch; ++b) {
    for (std::int64_t q = 0; q < out_hw; ++q) {
      const double* g = grid.data() + (b * out_hw + q) * 2;
      const Corner c = locate(g[0], g[1], d.in_w, d.in_h);
      const double w00 = (1 - c.wx1) * (1 - c.wy1), w10 = c.wx1 * (1 - c.wy1);
      const double w01 = (1 - c.wx1) * c.wy1, w11 = c.wx1 * c.wy1;
      const bool i00 = inside(c.x0, c.y0, d.in_w, d.in_h), i10 = inside(c.x0 + 1, c.y0, d.in_w, d.in_h);
      const bool i01 = inside(c.x0, c.y0 + 1, d.in_w, d.in_h), i11 = inside(c.x0 + 1, c.y0 + 1, d.in_w, d.in_h);
      for (std::int64_t ch = 0; ch < d.ch; ++ch) {
        const double* plane = img.data() + (b * d.ch + ch) * in_hw;
        const std::int64_t base = c.y0 * d.in_w + c.x0;
        double v = 0.0;
        if (i00) v += w00 * plane[base];
        if (i10) v += w10 * plane[base + 1];
        if (i01) v += w01 * plane[base + d.in_w];
        if (i11) v += w11 * plane[base + d.in_w + 1];
        out[(b * d.ch + ch) * out_hw + q] = v;
      }
    }
  }
}

void grid_sample_backward(std::span<const double> img, std::span<const double> grid,
                          std::span<const double> grad_out, std::span<double> grad_img,
                          std::span<double> grad_grid, SampleDims d) {
  const std::int64_t in_hw = d.in_h * d.in_w;
  const std::int64_t out_hw = d.out_h * d.out_w;
  const bool want_img = !grad_img.empty();
  const bool want_grid = !grad_grid.empty();
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < d.batch; ++b) {
    if (want_img) std::fill_n(grad_img.data() + b * d.ch * in_hw, d.ch * in_hw, 0.0);
    for (std::int64_t q = 0; q < out_hw; ++q) {
      const double* g = grid.data() + (b * out_hw + q) * 2;
      const Corner c = locate(g[0], g[1], d.in_w, d.in_h);
      const double w00 = (1 - c.wx1) * (1 - c.wy1), w10 = c.wx1 * (1 - c.wy1);
      const double w01 = (1 - c.wx1) * c.wy1, w11 = c.wx1 * c.wy1;
      const bool i00 = inside(c.x0, c.y0, d.in_w, d.in_h), i10 = inside(c.x0 + 1, c.y0, d.in_w, d.in_h);
      const bool i01 = inside(c.x0, c.y0 + 1, d.in_w, d.in_h), i11 = inside(c.x0 + 1, c.y0 + 1, d.in_w, d.in_h);
      const std::int64_t base = c.y0 * d.in_w + c.x0;
      double dix = 0.0, diy = 0.0;
      for (std::int64_t ch = 0; ch < d.ch; ++ch) {
        const double go = grad_out[(b * d.ch + ch) * out_hw + q];
        if (want_img) {
          double* gi = grad_img.data() + (b * d.ch + ch) * in_hw;
          if (i00) gi[base] += w00 * go;
          if (i10) gi[base + 1] += w10 * go;
          if (i01) gi[base + d.in_w] += w01 * go;
          if (i11) gi[base + d.in_w + 1] += w11 * go;
        }
        if (want_grid) {
          const double* plane = img.data() + (b * d.ch + ch) * in_hw;
          const double v00 = i00 ? plane[base] : 0.0, v10 = i10 ? plane[base + 1] : 0.0;
          const double v01 = i01 ? plane[base + d.in_w] : 0.0, v11 = i11 ? plane[base + d.in_w + 1] : 0.0;
          dix += go * ((v10 - v00) * (1 - c.wy1) + (v11 - v01) * c.wy1);
          diy += go * ((v01 - v00) * (1 - c.wx1) + (v11 - v10) * c.wx1);
        }
      }
      if (want_grid) {
        grad_grid[(b * out_hw + q) * 2] = dix * static_cast<double>(d.in_w) / 2.0;
        grad_grid[(b * out_hw + q) * 2 + 1] = diy * static_cast<double>(d.in_h) / 2.0;
      }
    }
  }
}

}  // namespace autodo::kernels
