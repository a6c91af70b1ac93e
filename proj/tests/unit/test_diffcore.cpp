#include <cmath>
#include <random>

#include "autodo/autograd.hpp"
#include "autodo/kernels.hpp"
#include "autodo/ops.hpp"
#include "autodo/oracles.hpp"
#include "doctest.h"

using namespace autodo;
namespace orc = autodo::oracles;

namespace {

using OpFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Contracts the op output with fixed random weights and compares the engine's
// gradient of every input against central differences.
double op_gradient_error(const OpFn& fn, const std::vector<Shape>& shapes, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> values;
  for (const auto& s : shapes) values.push_back(orc::uniform(rng, static_cast<std::size_t>(numel(s)), lo, hi));
  std::vector<double> contract;
  double worst = 0.0;
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    auto scalar = [&](std::span<const double> probe) {
      NoGradGuard off;
      std::vector<Tensor> in;
      for (std::size_t j = 0; j < shapes.size(); ++j)
        in.push_back(Tensor::from(shapes[j], j == k ? std::vector<double>(probe.begin(), probe.end()) : values[j]));
      Tensor out = fn(in);
      if (contract.empty()) contract = orc::uniform(rng, static_cast<std::size_t>(out.numel()), -1.0, 1.0);
      double s = 0.0;
      for (std::int64_t i = 0; i < out.numel(); ++i) s += out[i] * contract[i];
      return s;
    };
    scalar(values[k]);  // fixes the contraction weights
    std::vector<Tensor> leaves;
    for (std::size_t j = 0; j < shapes.size(); ++j) leaves.push_back(Tensor::leaf(shapes[j], values[j]));
    Tensor out = fn(leaves);
    Tensor loss = ops::dot(out, Tensor::from(out.shape(), contract));
    Tensor g = grad(loss, leaves[k]);
    auto fd = orc::fd_gradient(scalar, values[k], 1e-5);
    worst = std::max(worst, orc::max_rel_error(g.vec(), fd));
  }
  return worst;
}

}  // namespace

TEST_CASE("first derivatives of simple expressions") {
  Tensor x = Tensor::leaf({3}, {1, 2, 3});
  Tensor g = grad(ops::sum(ops::mul(x, x)), x);
  CHECK(g.vec() == std::vector<double>{2, 4, 6});

  Tensor z = Tensor::leaf({1}, {0.0});
  CHECK(grad(ops::sum(ops::sigmoid(z)), z)[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("every primitive matches central differences") {
  const double tol = 1e-4;
  struct Case {
    const char* name;
    OpFn fn;
    std::vector<Shape> shapes;
    double lo = -2, hi = 2;
  };
  std::vector<Case> cases = {
      {"add", [](auto& in) { return ops::add(in[0], in[1]); }, {{3, 4}, {3, 4}}},
      {"sub", [](auto& in) { return ops::sub(in[0], in[1]); }, {{3, 4}, {3, 4}}},
      {"mul", [](auto& in) { return ops::mul(in[0], in[1]); }, {{3, 4}, {3, 4}}},
      {"div", [](auto& in) { return ops::div(in[0], in[1]); }, {{5}, {5}}, 0.5, 2},
      {"scale", [](auto& in) { return ops::scale(in[0], -1.7); }, {{6}}},
      {"exp", [](auto& in) { return ops::exp(in[0]); }, {{6}}},
      {"log", [](auto& in) { return ops::log(in[0]); }, {{6}}, 0.5, 2},
      {"sqrt", [](auto& in) { return ops::sqrt(in[0]); }, {{6}}, 0.5, 2},
      {"reciprocal", [](auto& in) { return ops::reciprocal(in[0]); }, {{6}}, 0.5, 2},
      {"sigmoid", [](auto& in) { return ops::sigmoid(in[0]); }, {{6}}},
      {"softplus", [](auto& in) { return ops::softplus(in[0]); }, {{6}}},
      {"relu", [](auto& in) { return ops::relu(in[0]); }, {{8}}},
      {"clamp", [](auto& in) { return ops::clamp(in[0], -1.0, 1.0); }, {{8}}},
      {"sum", [](auto& in) { return ops::sum(in[0]); }, {{2, 3}}},
      {"mean", [](auto& in) { return ops::mean(in[0]); }, {{2, 3}}},
      {"broadcast", [](auto& in) { return ops::broadcast_to(in[0], {3, 4, 2}); }, {{3, 1, 2}}},
      {"reduce", [](auto& in) { return ops::reduce_to(in[0], {1, 4, 1}); }, {{3, 4, 2}}},
      {"segment", [](auto& in) { return ops::segment(in[0], 2, {2, 2}); }, {{7}}},
      {"column", [](auto& in) { return ops::column(in[0], 1); }, {{4, 3}}},
      {"row_sum", [](auto& in) { return ops::row_sum(in[0]); }, {{4, 3}}},
      {"softmax", [](auto& in) { return ops::softmax(in[0]); }, {{3, 5}}},
      {"log_softmax", [](auto& in) { return ops::log_softmax(in[0]); }, {{3, 5}}},
      {"scale_rows", [](auto& in) { return ops::scale_rows(in[0], in[1]); }, {{3, 2, 2}, {3}}},
      {"transpose", [](auto& in) { return ops::transpose(in[0]); }, {{3, 5}}},
      {"matmul", [](auto& in) { return ops::matmul(in[0], in[1]); }, {{3, 4}, {4, 2}}},
      {"conv2d", [](auto& in) { return ops::conv2d(in[0], in[1]); }, {{2, 2, 5, 4}, {3, 2, 3, 3}}},
      {"conv2d_input_grad", [](auto& in) { return ops::conv2d_input_grad(in[0], in[1]); },
       {{2, 3, 4, 5}, {3, 2, 3, 3}}},
      {"conv2d_weight_grad", [](auto& in) { return ops::conv2d_weight_grad(in[0], in[1]); },
       {{2, 2, 4, 4}, {2, 3, 4, 4}}},
      {"avg_pool2", [](auto& in) { return ops::avg_pool2(in[0]); }, {{2, 2, 4, 6}}},
      {"avg_unpool2", [](auto& in) { return ops::avg_unpool2(in[0], {2, 2, 4, 6}); }, {{2, 2, 2, 3}}},
      {"grid_sample", [](auto& in) { return ops::grid_sample(in[0], in[1]); }, {{2, 2, 5, 5}, {2, 3, 3, 2}}, -0.9,
       0.9},
      {"affine_grid", [](auto& in) { return ops::affine_grid(in[0], 3, 4); }, {{2, 2, 3}}},
  };
  std::uint64_t seed = 11;
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CHECK(op_gradient_error(c.fn, c.shapes, c.lo, c.hi, seed++) < tol);
  }
}

TEST_CASE("three-layer MLP gradient matches finite differences") {
  std::mt19937_64 rng(3);
  const std::int64_t batch = 5, in = 4, hidden = 6, out = 3;
  auto x = Tensor::from({batch, in}, orc::uniform(rng, batch * in, -2, 2));
  const std::int64_t total = in * hidden + hidden * hidden + hidden * out;
  auto loss_of = [&](const Tensor& theta) {
    Tensor w1 = ops::segment(theta, 0, {in, hidden});
    Tensor w2 = ops::segment(theta, in * hidden, {hidden, hidden});
    Tensor w3 = ops::segment(theta, in * hidden + hidden * hidden, {hidden, out});
    Tensor h = ops::sigmoid(ops::matmul(x, w1));
    h = ops::softplus(ops::matmul(h, w2));
    return ops::mean(ops::log_softmax(ops::matmul(h, w3)));
  };
  auto theta0 = orc::uniform(rng, total, -1, 1);
  Tensor theta = Tensor::leaf({total}, theta0);
  Tensor g = grad(loss_of(theta), theta);
  auto fd = orc::fd_gradient(
      [&](std::span<const double> p) {
        NoGradGuard off;
        return loss_of(Tensor::from({total}, {p.begin(), p.end()})).item();
      },
      theta0, 1e-5);
  CHECK(orc::max_rel_error(g.vec(), fd) < 1e-4);
}

TEST_CASE("hvp on a quadratic and zero direction") {
  Tensor theta = Tensor::leaf({2}, {0.3, -1.2});
  Tensor a = Tensor::from({2, 2}, {2, 0, 0, 4});
  auto loss = [&] { return ops::scale(ops::sum(ops::mul(theta, ops::reshape(ops::matmul(a, ops::reshape(theta, {2, 1})), {2}))), 0.5); };
  Tensor hv = hvp(loss(), theta, Tensor::from({2}, {1, 1}));
  CHECK(hv[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(hv[1] == doctest::Approx(4.0).epsilon(1e-14));
  Tensor zero = hvp(loss(), theta, Tensor::zeros({2}));
  CHECK(zero[0] == 0.0);
  CHECK(zero[1] == 0.0);
  CHECK_THROWS_AS(hvp(loss(), theta, Tensor::zeros({3})), Error);
}

TEST_CASE("hvp matches the explicit logistic Hessian") {
  std::mt19937_64 rng(17);
  auto problem = orc::make_logistic(rng, 8, 2);
  auto theta0 = orc::uniform(rng, 3, -1, 1);
  Tensor x = Tensor::from({8, 3}, problem.x);
  Tensor y = Tensor::from({8, 1}, problem.y);
  Tensor theta = Tensor::leaf({3}, theta0);
  // NLL = mean softplus(z) - y z
  Tensor z = ops::matmul(x, ops::reshape(theta, {3, 1}));
  Tensor loss = ops::mean(ops::sub(ops::softplus(z), ops::mul(y, z)));
  auto h = orc::logistic_hessian(problem, theta0);
  Tensor g = grad(loss, theta, {.create_graph = true});
  for (int trial = 0; trial < 3; ++trial) {
    auto v = orc::uniform(rng, 3, -1, 1);
    Tensor hv = hvp_from_grad(g, theta, Tensor::from({3}, v));
    CHECK(orc::max_abs_error(hv.vec(), orc::mat_vec(h, v, 3, 3)) < 1e-10);
  }
}

TEST_CASE("hvp over basis vectors reproduces a finite-difference Hessian; hvp is linear") {
  std::mt19937_64 rng(5);
  const std::int64_t batch = 6, in = 3, hidden = 3, out = 2;
  const std::int64_t total = in * hidden + hidden * out;  // 15 parameters
  auto x = Tensor::from({batch, in}, orc::uniform(rng, batch * in, -1, 1));
  auto loss_of = [&](const Tensor& theta) {
    Tensor h = ops::sigmoid(ops::matmul(x, ops::segment(theta, 0, {in, hidden})));
    Tensor logits = ops::matmul(h, ops::segment(theta, in * hidden, {hidden, out}));
    return ops::neg(ops::mean(ops::mul(ops::log_softmax(logits), ops::softmax(ops::scale(logits, 0.5)))));
  };
  auto theta0 = orc::uniform(rng, total, -1, 1);
  Tensor theta = Tensor::leaf({total}, theta0);
  Tensor g = grad(loss_of(theta), theta, {.create_graph = true});
  auto explicit_h = orc::fd_jacobian(
      [&](std::span<const double> p) {
        Tensor t = Tensor::leaf({total}, {p.begin(), p.end()});
        return grad(loss_of(t), t).vec();
      },
      theta0, 1e-3);
  for (std::int64_t j = 0; j < total; ++j) {
    std::vector<double> e(total, 0.0);
    e[j] = 1.0;
    Tensor col = hvp_from_grad(g, theta, Tensor::from({total}, e));
    for (std::int64_t i = 0; i < total; ++i) CHECK(std::abs(col[i] - explicit_h[i * total + j]) < 1e-8);
  }

  auto v = orc::uniform(rng, total, -1, 1), w = orc::uniform(rng, total, -1, 1);
  std::vector<double> combo(total);
  for (std::int64_t i = 0; i < total; ++i) combo[i] = 2.5 * v[i] - 0.75 * w[i];
  Tensor hv = hvp_from_grad(g, theta, Tensor::from({total}, v));
  Tensor hw = hvp_from_grad(g, theta, Tensor::from({total}, w));
  Tensor hc = hvp_from_grad(g, theta, Tensor::from({total}, combo));
  for (std::int64_t i = 0; i < total; ++i) CHECK(std::abs(hc[i] - (2.5 * hv[i] - 0.75 * hw[i])) < 1e-13);
}

TEST_CASE("mixed second derivatives") {
  Tensor theta = Tensor::leaf({1}, {3.0});
  Tensor lambda = Tensor::leaf({1}, {0.7});
  Tensor loss = ops::sum(ops::mul(lambda, ops::mul(theta, theta)));
  CHECK(mixed_grad(loss, theta, lambda, Tensor::from({1}, {1.0}))[0] == doctest::Approx(6.0).epsilon(1e-15));

  Tensor unrelated = Tensor::leaf({2}, {1, 1});
  Tensor r = mixed_grad(loss, theta, unrelated, Tensor::from({1}, {1.0}));
  CHECK(r.vec() == std::vector<double>{0, 0});
  {
    StrictGuard strict;
    CHECK_THROWS_AS(mixed_grad(loss, theta, unrelated, Tensor::from({1}, {1.0})), Error);
  }
}

TEST_CASE("mixed_grad on weighted least squares matches differenced gradients") {
  std::mt19937_64 rng(23);
  const std::int64_t n = 7, d = 3;
  auto xs = orc::uniform(rng, n * d, -1, 1), ys = orc::uniform(rng, n, -1, 1);
  auto theta0 = orc::uniform(rng, d, -1, 1), lam0 = orc::uniform(rng, n, 0.5, 1.5);
  auto v = orc::uniform(rng, d, -1, 1);
  Tensor x = Tensor::from({n, d}, xs), y = Tensor::from({n}, ys);
  auto loss_of = [&](const Tensor& theta, const Tensor& lam) {
    Tensor r = ops::sub(ops::reshape(ops::matmul(x, ops::reshape(theta, {d, 1})), {n}), y);
    return ops::scale(ops::sum(ops::mul(lam, ops::mul(r, r))), 0.5);
  };
  Tensor theta = Tensor::leaf({d}, theta0), lam = Tensor::leaf({n}, lam0);
  Tensor m = mixed_grad(loss_of(theta, lam), theta, lam, Tensor::from({d}, v));
  auto fd = orc::fd_gradient(
      [&](std::span<const double> l) {
        Tensor t = Tensor::leaf({d}, theta0);
        Tensor g = grad(loss_of(t, Tensor::from({n}, {l.begin(), l.end()})), t);
        double s = 0.0;
        for (std::int64_t i = 0; i < d; ++i) s += g[i] * v[i];
        return s;
      },
      lam0, 1e-5);
  CHECK(orc::max_abs_error(m.vec(), fd) < 1e-6);
}

TEST_CASE("grid_sample gradient wrt affine parameters") {
  std::mt19937_64 rng(31);
  const std::int64_t b = 2, h = 6, w = 6;
  // smooth image so finite differences see no kinks off the lattice
  std::vector<double> img(static_cast<std::size_t>(b * h * w));
  for (std::int64_t k = 0; k < b; ++k)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        img[(k * h + y) * w + x] = std::exp(-((x - 2.7) * (x - 2.7) + (y - 3.1) * (y - 3.1)) / (4.0 + k));
  Tensor image = Tensor::from({b, 1, h, w}, img);
  std::vector<double> theta0 = {0.93, 0.11, 0.037, -0.09, 1.04, -0.051, 1.1, -0.2, 0.013, 0.17, 0.85, 0.029};
  auto weights = orc::uniform(rng, b * h * w, -1, 1);
  auto value = [&](const Tensor& t) {
    return ops::dot(ops::grid_sample(image, ops::affine_grid(t, h, w)), Tensor::from({b, 1, h, w}, weights));
  };
  Tensor theta = Tensor::leaf({b, 2, 3}, theta0);
  Tensor g = grad(value(theta), theta);
  auto fd = orc::fd_gradient(
      [&](std::span<const double> p) {
        NoGradGuard off;
        return value(Tensor::from({b, 2, 3}, {p.begin(), p.end()})).item();
      },
      theta0, 1e-5);
  CHECK(orc::max_rel_error(g.vec(), fd) < 1e-3);
}

TEST_CASE("error paths") {
  Tensor x = Tensor::leaf({2}, {1, 2});
  CHECK_THROWS_AS(grad(ops::mul(x, x), x), Error);  // non-scalar loss

  Tensor off_graph = Tensor::leaf({2}, {0, 0});
  Tensor loss = ops::sum(ops::mul(x, x));
  CHECK(grad(loss, off_graph).vec() == std::vector<double>{0, 0});
  {
    StrictGuard strict;
    CHECK_THROWS_AS(grad(loss, off_graph), Error);
  }

  // Second derivatives through grid sampling are refused, not silently wrong.
  Tensor img = Tensor::leaf({1, 1, 3, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8});
  Tensor grid = Tensor::leaf({1, 1, 1, 2}, {0.1, -0.2});
  Tensor out = ops::sum(ops::grid_sample(img, grid));
  Tensor sq = ops::mul(out, out);
  CHECK_THROWS_AS(hvp(ops::sum(sq), grid, Tensor::from({1, 1, 1, 2}, {1, 0})), Error);
}

TEST_CASE("parallel kernels agree with the serial reference") {
  std::mt19937_64 rng(41);
  kernels::ConvDims d{3, 2, 4, 5, 6};
  auto x = orc::uniform(rng, 3 * 2 * 30, -1, 1), w = orc::uniform(rng, 4 * 2 * 9, -1, 1);
  auto g = orc::uniform(rng, 3 * 4 * 30, -1, 1);
  std::vector<double> a(3 * 4 * 30), b(3 * 4 * 30);
  kernels::conv3x3(x, w, a, d);
  kernels::reference::conv3x3(x, w, b, d);
  CHECK(orc::max_abs_error(a, b) < 1e-13);
  std::vector<double> gx1(x.size()), gx2(x.size());
  kernels::conv3x3_input_grad(g, w, gx1, d);
  kernels::reference::conv3x3_input_grad(g, w, gx2, d);
  CHECK(orc::max_abs_error(gx1, gx2) < 1e-13);
  std::vector<double> gw1(w.size()), gw2(w.size());
  kernels::conv3x3_weight_grad(x, g, gw1, d);
  kernels::reference::conv3x3_weight_grad(x, g, gw2, d);
  CHECK(orc::max_abs_error(gw1, gw2) < 1e-12);

  kernels::MatmulDims md{4, 5, 3};
  auto ma = orc::uniform(rng, 20, -1, 1), mb = orc::uniform(rng, 15, -1, 1);
  std::vector<double> mo1(12), mo2(12);
  kernels::matmul(ma, mb, mo1, md);
  kernels::reference::matmul(ma, mb, mo2, md);
  CHECK(orc::max_abs_error(mo1, mo2) < 1e-13);

  kernels::SampleDims sd{2, 3, 5, 4, 3, 6};
  auto img = orc::uniform(rng, 2 * 3 * 20, 0, 1), grid = orc::uniform(rng, 2 * 18 * 2, -1.3, 1.3);
  std::vector<double> s1(2 * 3 * 18), s2(2 * 3 * 18);
  kernels::grid_sample(img, grid, s1, sd);
  kernels::reference::grid_sample(img, grid, s2, sd);
  CHECK(orc::max_abs_error(s1, s2) < 1e-14);
  auto go = orc::uniform(rng, s1.size(), -1, 1);
  std::vector<double> gi1(img.size()), gi2(img.size()), gg1(grid.size()), gg2(grid.size());
  kernels::grid_sample_backward(img, grid, go, gi1, gg1, sd);
  kernels::reference::grid_sample_backward(img, grid, go, gi2, gg2, sd);
  CHECK(orc::max_abs_error(gi1, gi2) < 1e-13);
  CHECK(orc::max_abs_error(gg1, gg2) < 1e-12);
}
