#include "autodo/ops.hpp"

#include <algorithm>
#include <cmath>

#include "autodo/kernels.hpp"

namespace autodo::ops {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw Error(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank)
    throw Error(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(x.shape()));
}

template <class F>
std::vector<double> map1(const Tensor& x, F f) {
  std::vector<double> out(x.vec().size());
  const auto& v = x.vec();
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = f(v[i]);
  return out;
}

template <class F>
std::vector<double> map2(const Tensor& a, const Tensor& b, F f) {
  std::vector<double> out(a.vec().size());
  const auto& va = a.vec();
  const auto& vb = b.vec();
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = f(va[i], vb[i]);
  return out;
}


// Visits every element of `out_shape`, passing the flat output index and the
// flat index of the broadcast source whose dims are 1 where the output's are not.
template <class F>
void for_each_broadcast(const Shape& out_shape, const Shape& src_shape, F f) {
  const std::size_t rank = out_shape.size();
  std::vector<std::int64_t> src_stride(rank, 0);
  std::int64_t s = 1;
  for (std::size_t i = rank; i-- > 0;) {
    src_stride[i] = (src_shape[i] == 1 && out_shape[i] != 1) ? 0 : s;
    s *= src_shape[i];
  }
  const std::int64_t total = numel(out_shape);
  if (total == 0) return;
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t src = 0;
  for (std::int64_t o = 0; o < total; ++o) {
    f(o, src);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
}

void check_broadcastable(const Shape& small, const Shape& big, const char* op) {
  bool ok = small.size() == big.size();
  for (std::size_t i = 0; ok && i < small.size(); ++i) ok = small[i] == big[i] || small[i] == 1;
  if (!ok) throw Error(std::string(op) + ": cannot relate " + to_string(small) + " and " + to_string(big));
}

Tensor rows_to_matrix(const Tensor& v, std::int64_t cols) {
  return broadcast_to(reshape(v, {v.dim(0), 1}), {v.dim(0), cols});
}

kernels::ConvDims conv_dims(const Shape& x, const Shape& w) {
  return {x[0], x[1], w[0], x[2], x[3]};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  return record("add", a.shape(), map2(a, b, [](double x, double y) { return x + y; }), {a, b},
                [](const Tensor& g, const std::vector<Tensor>&, std::span<const bool>) {
                  return std::vector<Tensor>{g, g};
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  return record("sub", a.shape(), map2(a, b, [](double x, double y) { return x - y; }), {a, b},
                [](const Tensor& g, const std::vector<Tensor>&, std::span<const bool> needs) {
                  return std::vector<Tensor>{g, needs[1] ? neg(g) : Tensor()};
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  return record("mul", a.shape(), map2(a, b, [](double x, double y) { return x * y; }), {a, b},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool> needs) {
                  return std::vector<Tensor>{needs[0] ? mul(g, in[1]) : Tensor(),
                                             needs[1] ? mul(g, in[0]) : Tensor()};
                });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same(a, b, "div");
  return record("div", a.shape(), map2(a, b, [](double x, double y) { return x / y; }), {a, b},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool> needs) {
                  Tensor ga, gb;
                  if (needs[0]) ga = div(g, in[1]);
                  if (needs[1]) gb = neg(div(mul(g, in[0]), mul(in[1], in[1])));
                  return std::vector<Tensor>{ga, gb};
                });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
  return record("scale", x.shape(), map1(x, [factor](double v) { return factor * v; }), {x},
                [factor](const Tensor& g, const std::vector<Tensor>&, std::span<const bool>) {
                  return std::vector<Tensor>{scale(g, factor)};
                });
}

Tensor add_scalar(const Tensor& x, double value) {
  return record("add_scalar", x.shape(), map1(x, [value](double v) { return v + value; }), {x},
                [](const Tensor& g, const std::vector<Tensor>&, std::span<const bool>) {
                  return std::vector<Tensor>{g};
                });
}

Tensor exp(const Tensor& x) {
  return record("exp", x.shape(), map1(x, [](double v) { return std::exp(v); }), {x},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool>) {
                  return std::vector<Tensor>{mul(g, exp(in[0]))};
                });
}

Tensor log(const Tensor& x) {
  return record("log", x.shape(), map1(x, [](double v) { return std::log(v); }), {x},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool>) {
                  return std::vector<Tensor>{div(g, in[0])};
                });
}

Tensor sqrt(const Tensor& x) {
  return record("sqrt", x.shape(), map1(x, [](double v) { return std::sqrt(v); }), {x},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool>) {
                  return std::vector<Tensor>{div(g, scale(sqrt(in[0]), 2.0))};
                });
}

Tensor reciprocal(const Tensor& x) {
  return record("reciprocal", x.shape(), map1(x, [](double v) { return 1.0 / v; }), {x},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool>) {
                  Tensor r = reciprocal(in[0]);
                  return std::vector<Tensor>{neg(mul(g, mul(r, r)))};
                });
}

Tensor sigmoid(const Tensor& x) {
  auto f = [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return record("sigmoid", x.shape(), map1(x, f), {x},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool>) {
                  Tensor s = sigmoid(in[0]);
                  return std::vector<Tensor>{mul(g, mul(s, add_scalar(neg(s), 1.0)))};
                });
}

Tensor softplus(const Tensor& x) {
  auto f = [](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); };
  return record("softplus", x.shape(), map1(x, f), {x},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool>) {
                  return std::vector<Tensor>{mul(g, sigmoid(in[0]))};
                });
}

Tensor relu(const Tensor& x) {
  return mask(x, Tensor::from(x.shape(), map1(x, [](double v) { return v > 0 ? 1.0 : 0.0; })));
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  Tensor pass = Tensor::from(x.shape(), map1(x, [lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; }));
  return record("clamp", x.shape(), map1(x, [lo, hi](double v) { return std::clamp(v, lo, hi); }), {x},
                [pass](const Tensor& g, const std::vector<Tensor>&, std::span<const bool>) {
                  return std::vector<Tensor>{mask(g, pass)};
                });
}

Tensor mask(const Tensor& x, const Tensor& constant) {
  require_same(x, constant, "mask");
  Tensor m = constant.detach();
  return record("mask", x.shape(), map2(x, m, [](double a, double b) { return a * b; }), {x},
                [m](const Tensor& g, const std::vector<Tensor>&, std::span<const bool>) {
                  return std::vector<Tensor>{mask(g, m)};
                });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.vec()) s += v;
  return record("sum", {}, {s}, {x}, [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool>) {
    Shape ones(in[0].rank(), 1);
    return std::vector<Tensor>{broadcast_to(reshape(g, ones), in[0].shape())};
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw Error("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw Error("reshape: " + to_string(x.shape()) + " cannot become " + to_string(shape));
  return record("reshape", shape, x.vec(), {x},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool>) {
                  return std::vector<Tensor>{reshape(g, in[0].shape())};
                });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  check_broadcastable(x.shape(), shape, "broadcast_to");
  if (x.shape() == shape) return x;
  std::vector<double> out(static_cast<std::size_t>(numel(shape)));
  const auto& src = x.vec();
  for_each_broadcast(shape, x.shape(), [&](std::int64_t o, std::int64_t s) { out[o] = src[s]; });
  return record("broadcast_to", shape, std::move(out), {x},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool>) {
                  return std::vector<Tensor>{reduce_to(g, in[0].shape())};
                });
}

Tensor reduce_to(const Tensor& x, const Shape& shape) {
  check_broadcastable(shape, x.shape(), "reduce_to");
  if (x.shape() == shape) return x;
  std::vector<double> out(static_cast<std::size_t>(numel(shape)), 0.0);
  const auto& src = x.vec();
  for_each_broadcast(x.shape(), shape, [&](std::int64_t o, std::int64_t s) { out[s] += src[o]; });
  return record("reduce_to", shape, std::move(out), {x},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool>) {
                  return std::vector<Tensor>{broadcast_to(g, in[0].shape())};
                });
}

Tensor segment(const Tensor& x, std::int64_t offset, Shape shape) {
  const std::int64_t n = numel(shape);
  if (offset < 0 || offset + n > x.numel()) throw Error("segment: out of range");
  std::vector<double> out(x.vec().begin() + offset, x.vec().begin() + offset + n);
  const std::int64_t total = x.numel();
  return record("segment", std::move(shape), std::move(out), {x},
                [offset, total](const Tensor& g, const std::vector<Tensor>&, std::span<const bool>) {
                  return std::vector<Tensor>{embed(g, offset, total)};
                });
}

Tensor embed(const Tensor& x, std::int64_t offset, std::int64_t total) {
  if (offset < 0 || offset + x.numel() > total) throw Error("embed: out of range");
  std::vector<double> out(static_cast<std::size_t>(total), 0.0);
  std::copy(x.vec().begin(), x.vec().end(), out.begin() + offset);
  return record("embed", {total}, std::move(out), {x},
                [offset](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool>) {
                  return std::vector<Tensor>{segment(g, offset, in[0].shape())};
                });
}

Tensor column(const Tensor& x, std::int64_t col) {
  require_rank(x, 2, "column");
  const std::int64_t rows = x.dim(0), cols = x.dim(1);
  if (col < 0 || col >= cols) throw Error("column: index out of range");
  std::vector<double> out(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) out[r] = x[r * cols + col];
  return record("column", {rows}, std::move(out), {x},
                [col, cols](const Tensor& g, const std::vector<Tensor>&, std::span<const bool>) {
                  return std::vector<Tensor>{embed_column(g, col, cols)};
                });
}

Tensor embed_column(const Tensor& x, std::int64_t col, std::int64_t cols) {
  require_rank(x, 1, "embed_column");
  const std::int64_t rows = x.dim(0);
  std::vector<double> out(static_cast<std::size_t>(rows * cols), 0.0);
  for (std::int64_t r = 0; r < rows; ++r) out[r * cols + col] = x[r];
  return record("embed_column", {rows, cols}, std::move(out), {x},
                [col](const Tensor& g, const std::vector<Tensor>&, std::span<const bool>) {
                  return std::vector<Tensor>{column(g, col)};
                });
}

Tensor row_sum(const Tensor& x) {
  require_rank(x, 2, "row_sum");
  return reshape(reduce_to(x, {x.dim(0), 1}), {x.dim(0)});
}

Tensor softmax(const Tensor& x) {
  require_rank(x, 2, "softmax");
  const std::int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.vec().size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = x.vec().data() + r * cols;
    double* o = out.data() + r * cols;
    const double m = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - m));
    for (std::int64_t c = 0; c < cols; ++c) o[c] /= z;
  }
  return record("softmax", x.shape(), std::move(out), {x},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool>) {
                  Tensor y = softmax(in[0]);
                  Tensor proj = rows_to_matrix(row_sum(mul(g, y)), y.dim(1));
                  return std::vector<Tensor>{mul(y, sub(g, proj))};
                });
}

Tensor log_softmax(const Tensor& x) {
  require_rank(x, 2, "log_softmax");
  const std::int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.vec().size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = x.vec().data() + r * cols;
    double* o = out.data() + r * cols;
    const double m = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) z += std::exp(in[c] - m);
    const double lse = m + std::log(z);
    for (std::int64_t c = 0; c < cols; ++c) o[c] = in[c] - lse;
  }
  return record("log_softmax", x.shape(), std::move(out), {x},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool>) {
                  Tensor y = softmax(in[0]);
                  return std::vector<Tensor>{sub(g, mul(y, rows_to_matrix(row_sum(g), y.dim(1))))};
                });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  require_rank(s, 1, "scale_rows");
  if (x.rank() == 0 || x.dim(0) != s.dim(0)) throw Error("scale_rows: leading dimension mismatch");
  Shape col(x.rank(), 1);
  col[0] = s.dim(0);
  return mul(x, broadcast_to(reshape(s, col), x.shape()));
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::int64_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(x.vec().size());
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return record("transpose", {c, r}, std::move(out), {x},
                [](const Tensor& g, const std::vector<Tensor>&, std::span<const bool>) {
                  return std::vector<Tensor>{transpose(g)};
                });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) throw Error("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  kernels::MatmulDims d{a.dim(0), a.dim(1), b.dim(1)};
  std::vector<double> out(static_cast<std::size_t>(d.m * d.n));
  kernels::matmul(a.values(), b.values(), out, d);
  return record("matmul", {d.m, d.n}, std::move(out), {a, b},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool> needs) {
                  Tensor ga, gb;
                  if (needs[0]) ga = matmul(g, transpose(in[1]));
                  if (needs[1]) gb = matmul(transpose(in[0]), g);
                  return std::vector<Tensor>{ga, gb};
                });
}

Tensor conv2d(const Tensor& x, const Tensor& w) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (w.dim(1) != x.dim(1) || w.dim(2) != 3 || w.dim(3) != 3)
    throw Error("conv2d: kernel " + to_string(w.shape()) + " does not fit input " + to_string(x.shape()));
  auto d = conv_dims(x.shape(), w.shape());
  std::vector<double> out(static_cast<std::size_t>(d.batch * d.out_ch * d.height * d.width));
  kernels::conv3x3(x.values(), w.values(), out, d);
  return record("conv2d", {d.batch, d.out_ch, d.height, d.width}, std::move(out), {x, w},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool> needs) {
                  Tensor gx, gw;
                  if (needs[0]) gx = conv2d_input_grad(g, in[1]);
                  if (needs[1]) gw = conv2d_weight_grad(in[0], g);
                  return std::vector<Tensor>{gx, gw};
                });
}

Tensor conv2d_input_grad(const Tensor& g, const Tensor& w) {
  require_rank(g, 4, "conv2d_input_grad");
  if (g.dim(1) != w.dim(0)) throw Error("conv2d_input_grad: channel mismatch");
  kernels::ConvDims d{g.dim(0), w.dim(1), w.dim(0), g.dim(2), g.dim(3)};
  std::vector<double> out(static_cast<std::size_t>(d.batch * d.in_ch * d.height * d.width));
  kernels::conv3x3_input_grad(g.values(), w.values(), out, d);
  return record("conv2d_input_grad", {d.batch, d.in_ch, d.height, d.width}, std::move(out), {g, w},
                [](const Tensor& h, const std::vector<Tensor>& in, std::span<const bool> needs) {
                  Tensor gg, gw;
                  if (needs[0]) gg = conv2d(h, in[1]);
                  if (needs[1]) gw = conv2d_weight_grad(h, in[0]);
                  return std::vector<Tensor>{gg, gw};
                });
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& g) {
  require_rank(x, 4, "conv2d_weight_grad");
  require_rank(g, 4, "conv2d_weight_grad");
  kernels::ConvDims d{x.dim(0), x.dim(1), g.dim(1), x.dim(2), x.dim(3)};
  std::vector<double> out(static_cast<std::size_t>(d.out_ch * d.in_ch * 9));
  kernels::conv3x3_weight_grad(x.values(), g.values(), out, d);
  return record("conv2d_weight_grad", {d.out_ch, d.in_ch, 3, 3}, std::move(out), {x, g},
                [](const Tensor& h, const std::vector<Tensor>& in, std::span<const bool> needs) {
                  Tensor gx, gg;
                  if (needs[0]) gx = conv2d_input_grad(in[1], h);
                  if (needs[1]) gg = conv2d(in[0], h);
                  return std::vector<Tensor>{gx, gg};
                });
}

Tensor avg_pool2(const Tensor& x) {
  require_rank(x, 4, "avg_pool2");
  if (x.dim(2) % 2 || x.dim(3) % 2) throw Error("avg_pool2: spatial size must be even");
  Shape out_shape{x.dim(0), x.dim(1), x.dim(2) / 2, x.dim(3) / 2};
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  kernels::avg_pool2(x.values(), out, x.dim(0) * x.dim(1), x.dim(2), x.dim(3));
  return record("avg_pool2", out_shape, std::move(out), {x},
                [](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool>) {
                  return std::vector<Tensor>{avg_unpool2(g, in[0].shape())};
                });
}

Tensor avg_unpool2(const Tensor& g, const Shape& input_shape) {
  std::vector<double> out(static_cast<std::size_t>(numel(input_shape)));
  kernels::avg_unpool2(g.values(), out, input_shape[0] * input_shape[1], input_shape[2], input_shape[3]);
  return record("avg_unpool2", input_shape, std::move(out), {g},
                [](const Tensor& h, const std::vector<Tensor>&, std::span<const bool>) {
                  return std::vector<Tensor>{avg_pool2(h)};
                });
}

Tensor grid_sample(const Tensor& img, const Tensor& grid) {
  require_rank(img, 4, "grid_sample");
  require_rank(grid, 4, "grid_sample");
  if (grid.dim(0) != img.dim(0) || grid.dim(3) != 2) throw Error("grid_sample: grid " + to_string(grid.shape()));
  kernels::SampleDims d{img.dim(0), img.dim(1), img.dim(2), img.dim(3), grid.dim(1), grid.dim(2)};
  std::vector<double> out(static_cast<std::size_t>(d.batch * d.ch * d.out_h * d.out_w));
  kernels::grid_sample(img.values(), grid.values(), out, d);
  return record(
      "grid_sample", {d.batch, d.ch, d.out_h, d.out_w}, std::move(out), {img, grid},
      [d](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool> needs) {
        std::vector<double> gi, gg;
        if (needs[0]) gi.resize(static_cast<std::size_t>(in[0].numel()));
        if (needs[1]) gg.resize(static_cast<std::size_t>(in[1].numel()));
        kernels::grid_sample_backward(in[0].values(), in[1].values(), g.values(), gi, gg, d);
        return std::vector<Tensor>{needs[0] ? Tensor::from(in[0].shape(), std::move(gi)) : Tensor(),
                                   needs[1] ? Tensor::from(in[1].shape(), std::move(gg)) : Tensor()};
      },
      false);
}

Tensor affine_grid(const Tensor& theta, std::int64_t height, std::int64_t width) {
  require_rank(theta, 3, "affine_grid");
  if (theta.dim(1) != 2 || theta.dim(2) != 3) throw Error("affine_grid: theta must be [B,2,3]");
  const std::int64_t batch = theta.dim(0);
  std::vector<double> xs(static_cast<std::size_t>(width)), ys(static_cast<std::size_t>(height));
  for (std::int64_t i = 0; i < width; ++i) xs[i] = (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(width) - 1.0;
  for (std::int64_t i = 0; i < height; ++i) ys[i] = (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(height) - 1.0;
  std::vector<double> out(static_cast<std::size_t>(batch * height * width * 2));
  for (std::int64_t b = 0; b < batch; ++b) {
    const double* t = theta.vec().data() + b * 6;
    for (std::int64_t y = 0; y < height; ++y)
      for (std::int64_t x = 0; x < width; ++x) {
        double* o = out.data() + ((b * height + y) * width + x) * 2;
        o[0] = t[0] * xs[x] + t[1] * ys[y] + t[2];
        o[1] = t[3] * xs[x] + t[4] * ys[y] + t[5];
      }
  }
  return record(
      "affine_grid", {batch, height, width, 2}, std::move(out), {theta},
      [xs, ys](const Tensor& g, const std::vector<Tensor>& in, std::span<const bool>) {
        const std::int64_t b_n = in[0].dim(0);
        const auto h = static_cast<std::int64_t>(ys.size()), w = static_cast<std::int64_t>(xs.size());
        std::vector<double> gt(static_cast<std::size_t>(b_n * 6), 0.0);
        for (std::int64_t b = 0; b < b_n; ++b) {
          double* t = gt.data() + b * 6;
          for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
              const double* gv = g.vec().data() + ((b * h + y) * w + x) * 2;
              t[0] += gv[0] * xs[x];
              t[1] += gv[0] * ys[y];
              t[2] += gv[0];
              t[3] += gv[1] * xs[x];
              t[4] += gv[1] * ys[y];
              t[5] += gv[1];
            }
        }
        return std::vector<Tensor>{Tensor::from(in[0].shape(), std::move(gt))};
      },
      false);
}

}  // namespace autodo::ops
