#include "autodo/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "autodo/augment.hpp"
#include "autodo/autograd.hpp"
#include "autodo/dataforge.hpp"
#include "autodo/hypergrad.hpp"
#include "autodo/hypermodel.hpp"
#include "autodo/ops.hpp"
#include "autodo/oracles.hpp"
#include "autodo/runner.hpp"
#include "autodo/seeding.hpp"
#include "autodo/taskmodel.hpp"

namespace autodo::checks {

namespace orc = autodo::oracles;

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

template <typename F>
CheckResult timed(int id, std::string name, F&& body) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r{id, std::move(name)};
  try {
    body(r);
  } catch (const std::exception& err) {
    r.passed = false;
    r.detail = std::string("threw: ") + err.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// max |a - b| / max |b|
double scaled_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / std::max(scale, 1e-300);
}

// Images built from a few Gaussian blobs; bilinear sampling of a smooth image
// has derivative jumps too small to disturb central differences.
Tensor smooth_images(std::int64_t batch, std::int64_t side, std::uint64_t seed) {
  auto rng = make_rng({seed});
  std::uniform_real_distribution<double> pos(1.0, side - 2.0), width(1.5, 3.0);
  std::vector<double> img(static_cast<std::size_t>(batch * side * side), 0.0);
  for (std::int64_t b = 0; b < batch; ++b)
    for (int blob = 0; blob < 3; ++blob) {
      const double cx = pos(rng), cy = pos(rng), s = width(rng);
      for (std::int64_t y = 0; y < side; ++y)
        for (std::int64_t x = 0; x < side; ++x)
          img[(b * side + y) * side + x] += std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * s * s)) / 3;
    }
  return Tensor::from({batch, 1, side, side}, std::move(img));
}

}  // namespace

double max_gradient_error(const TensorFn& fn, const std::vector<Tensor>& inputs, std::uint64_t seed, double step) {
  auto rng = make_rng({seed});
  std::vector<double> contract;
  auto contracted = [&](const Tensor& out) {
    if (contract.empty()) contract = orc::uniform(rng, static_cast<std::size_t>(out.numel()), -1.0, 1.0);
    return ops::dot(out, Tensor::from(out.shape(), contract));
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<Tensor> leaves;
    for (std::size_t j = 0; j < inputs.size(); ++j)
      leaves.push_back(j == k ? Tensor::leaf(inputs[j].shape(), inputs[j].vec()) : inputs[j].detach());
    Tensor g = grad(contracted(fn(leaves)), leaves[k]);
    auto fd = orc::fd_gradient(
        [&](std::span<const double> probe) {
          NoGradGuard off;
          auto in = leaves;
          in[k] = Tensor::from(inputs[k].shape(), {probe.begin(), probe.end()});
          return contracted(fn(in)).item();
        },
        inputs[k].vec(), step);
    worst = std::max(worst, orc::max_rel_error(g.vec(), fd));
  }
  return worst;
}

CheckResult gradient_correctness() {
  return timed(1, "gradient correctness", [](CheckResult& r) {
    auto rng = make_rng({1});
    auto rand = [&](Shape s, double lo, double hi) {
      return Tensor::from(s, orc::uniform(rng, static_cast<std::size_t>(numel(s)), lo, hi));
    };
    struct Case {
      std::string name;
      TensorFn fn;
      std::vector<Tensor> inputs;
    };
    std::vector<Case> cases = {
        {"add", [](auto& in) { return ops::add(in[0], in[1]); }, {rand({3, 4}, -2, 2), rand({3, 4}, -2, 2)}},
        {"sub", [](auto& in) { return ops::sub(in[0], in[1]); }, {rand({3, 4}, -2, 2), rand({3, 4}, -2, 2)}},
        {"mul", [](auto& in) { return ops::mul(in[0], in[1]); }, {rand({3, 4}, -2, 2), rand({3, 4}, -2, 2)}},
        {"div", [](auto& in) { return ops::div(in[0], in[1]); }, {rand({5}, 0.5, 2), rand({5}, 0.5, 2)}},
        {"neg", [](auto& in) { return ops::neg(in[0]); }, {rand({4}, -2, 2)}},
        {"scale", [](auto& in) { return ops::scale(in[0], -1.7); }, {rand({6}, -2, 2)}},
        {"add_scalar", [](auto& in) { return ops::add_scalar(in[0], 0.3); }, {rand({6}, -2, 2)}},
        {"exp", [](auto& in) { return ops::exp(in[0]); }, {rand({6}, -2, 2)}},
        {"log", [](auto& in) { return ops::log(in[0]); }, {rand({6}, 0.5, 2)}},
        {"sqrt", [](auto& in) { return ops::sqrt(in[0]); }, {rand({6}, 0.5, 2)}},
        {"reciprocal", [](auto& in) { return ops::reciprocal(in[0]); }, {rand({6}, 0.5, 2)}},
        {"sigmoid", [](auto& in) { return ops::sigmoid(in[0]); }, {rand({6}, -2, 2)}},
        {"softplus", [](auto& in) { return ops::softplus(in[0]); }, {rand({6}, -2, 2)}},
        {"relu", [](auto& in) { return ops::relu(in[0]); }, {rand({8}, -2, 2)}},
        {"clamp", [](auto& in) { return ops::clamp(in[0], -1.0, 1.0); }, {rand({8}, -2, 2)}},
        {"mask", [](auto& in) { return ops::mask(in[0], Tensor::from({4}, {1, 0, 2, -1})); }, {rand({4}, -2, 2)}},
        {"sum", [](auto& in) { return ops::sum(in[0]); }, {rand({2, 3}, -2, 2)}},
        {"mean", [](auto& in) { return ops::mean(in[0]); }, {rand({2, 3}, -2, 2)}},
        {"dot", [](auto& in) { return ops::dot(in[0], in[1]); }, {rand({5}, -2, 2), rand({5}, -2, 2)}},
        {"reshape", [](auto& in) { return ops::reshape(in[0], {3, 2}); }, {rand({2, 3}, -2, 2)}},
        {"broadcast_to", [](auto& in) { return ops::broadcast_to(in[0], {3, 4, 2}); }, {rand({3, 1, 2}, -2, 2)}},
        {"reduce_to", [](auto& in) { return ops::reduce_to(in[0], {1, 4, 1}); }, {rand({3, 4, 2}, -2, 2)}},
        {"segment", [](auto& in) { return ops::segment(in[0], 2, {2, 2}); }, {rand({7}, -2, 2)}},
        {"embed", [](auto& in) { return ops::embed(in[0], 2, 7); }, {rand({3}, -2, 2)}},
        {"column", [](auto& in) { return ops::column(in[0], 1); }, {rand({4, 3}, -2, 2)}},
        {"embed_column", [](auto& in) { return ops::embed_column(in[0], 1, 3); }, {rand({4}, -2, 2)}},
        {"row_sum", [](auto& in) { return ops::row_sum(in[0]); }, {rand({4, 3}, -2, 2)}},
        {"softmax", [](auto& in) { return ops::softmax(in[0]); }, {rand({3, 5}, -2, 2)}},
        {"log_softmax", [](auto& in) { return ops::log_softmax(in[0]); }, {rand({3, 5}, -2, 2)}},
        {"scale_rows", [](auto& in) { return ops::scale_rows(in[0], in[1]); }, {rand({3, 2, 2}, -2, 2), rand({3}, -2, 2)}},
        {"transpose", [](auto& in) { return ops::transpose(in[0]); }, {rand({3, 5}, -2, 2)}},
        {"matmul", [](auto& in) { return ops::matmul(in[0], in[1]); }, {rand({3, 4}, -2, 2), rand({4, 2}, -2, 2)}},
        {"conv2d", [](auto& in) { return ops::conv2d(in[0], in[1]); }, {rand({2, 2, 5, 4}, -2, 2), rand({3, 2, 3, 3}, -2, 2)}},
        {"conv2d_input_grad", [](auto& in) { return ops::conv2d_input_grad(in[0], in[1]); },
         {rand({2, 3, 4, 5}, -2, 2), rand({3, 2, 3, 3}, -2, 2)}},
        {"conv2d_weight_grad", [](auto& in) { return ops::conv2d_weight_grad(in[0], in[1]); },
         {rand({2, 2, 4, 4}, -2, 2), rand({2, 3, 4, 4}, -2, 2)}},
        {"avg_pool2", [](auto& in) { return ops::avg_pool2(in[0]); }, {rand({2, 2, 4, 6}, -2, 2)}},
        {"avg_unpool2", [](auto& in) { return ops::avg_unpool2(in[0], {2, 2, 4, 6}); }, {rand({2, 2, 2, 3}, -2, 2)}},
        {"grid_sample", [](auto& in) { return ops::grid_sample(in[0], in[1]); },
         {rand({2, 2, 5, 5}, -1, 1), rand({2, 3, 3, 2}, -0.9, 0.9)}},
        {"affine_grid", [](auto& in) { return ops::affine_grid(in[0], 3, 4); }, {rand({2, 2, 3}, -1, 1)}},
    };

    // Sub-models at fixed noise.
    const std::int64_t batch = 3, side = 8;
    aug::AugConfig relaxed;  // straight-through is not differentiable by construction
    const auto ops_count = static_cast<std::int64_t>(relaxed.ops.size());
    auto noise_rng = make_rng({2});
    auto noise = aug::draw_noise(batch, ops_count, noise_rng);
    for (auto& z : noise.z) z *= 0.5;  // keep magnitudes off the clamp boundary
    Tensor images = smooth_images(batch, side, 3);
    Tensor lam_m = rand({batch, ops_count}, -1, 1);
    Tensor lam_b = rand({batch, ops_count}, -0.5, 1.5);
    cases.push_back({"magnitudes", [&](auto& in) { return aug::sample_magnitudes(in[0], noise, relaxed); }, {lam_m}});
    cases.push_back({"shared magnitudes", [&](auto& in) { return aug::sample_magnitudes(in[0], noise, relaxed); },
                     {rand({1, ops_count}, -1, 1)}});
    cases.push_back({"gates", [&](auto& in) { return aug::sample_gates(in[0], noise, relaxed); }, {lam_b}});
    for (const auto& spec : relaxed.ops) {
      Tensor mags = Tensor::from({batch}, orc::uniform(rng, batch, spec.mu - 0.6 * spec.rng, spec.mu + 0.6 * spec.rng));
      cases.push_back({"affine " + std::string(aug::op_name(spec.kind)),
                       [kind = spec.kind](auto& in) { return aug::op_affine(in[0], kind); }, {mags}});
    }
    cases.push_back({"augmented images",
                     [&](auto& in) {
                       return aug::apply_chain(images, aug::sample_gates(in[1], noise, relaxed),
                                               aug::sample_magnitudes(in[0], noise, relaxed), relaxed);
                     },
                     {lam_m, lam_b}});
    cases.push_back({"weights", [](auto& in) { return hyper::weights(in[0]); }, {rand({5}, -3, 3)}});
    cases.push_back({"soft labels", [](auto& in) { return hyper::soft_labels(in[0]); }, {rand({3, 4}, -3, 3)}});
    cases.push_back({"train loss",
                     [](auto& in) { return task::train_loss(in[0], hyper::soft_labels(in[1]), in[2]); },
                     {rand({4, 5}, -2, 2), rand({4, 5}, -2, 2), rand({4}, 0.2, 2)}});
    const std::vector<int> labels = {0, 3, 1, 4};
    cases.push_back({"valid loss", [&](auto& in) { return task::valid_loss(in[0], labels); }, {rand({4, 5}, -2, 2)}});

    // The whole train objective wrt every hyperparameter block of a batch.
    task::ModelSpec spec{task::Kind::linear, 1, side, side, 5};
    task::TaskModel model(spec, 4);
    for (auto& p : model.params()) p = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    std::vector<std::int64_t> ids = {0, 1, 2};
    auto table = hyper::HyperTable::create(ids, 5, ops_count, {});
    hg::TrainBatch train{images, {0, 3, 1}, ids, noise};
    auto base = hyper::gather(table, ids, false);
    cases.push_back({"objective wrt hypers",
                     [&](auto& in) {
                       hyper::BatchHypers h = base;
                       h.lambda_m = in[0];
                       h.lambda_b = in[1];
                       h.lambda_w = in[2];
                       h.lambda_s = in[3];
                       return hg::batch_train_loss(model, model.param_leaf().detach(), train, table, h, relaxed);
                     },
                     {lam_m, lam_b, rand({batch}, -1, 1), rand({batch, 5}, -2, 2)}});
    cases.push_back({"objective wrt parameters",
                     [&](auto& in) { return hg::batch_train_loss(model, in[0], train, table, base, relaxed); },
                     {Tensor::from({model.param_count()}, model.params())}});

    double worst = 0.0;
    std::string worst_name;
    std::uint64_t seed = 100;
    for (const auto& c : cases) {
      const double e = max_gradient_error(c.fn, c.inputs, seed++);
      if (e > worst) worst = e, worst_name = c.name;
    }
    r.passed = worst < 1e-4;
    r.detail = std::to_string(cases.size()) + " functions, max rel error " + fmt(worst) + " (" + worst_name +
               ") vs 1e-4";
  });
}

CheckResult second_order_correctness() {
  return timed(2, "second-order correctness", [](CheckResult& r) {
    auto rng = make_rng({2, 1});
    double worst = 0.0;

    // Logistic regression: the Hessian is X^T diag(s(1-s)) X / n.
    {
      auto p = orc::make_logistic(rng, 60, 10);
      auto theta0 = orc::uniform(rng, p.dim, -0.5, 0.5);
      Tensor x = Tensor::from({p.n, p.dim}, p.x), y = Tensor::from({p.n, 1}, p.y);
      Tensor theta = Tensor::leaf({p.dim}, theta0);
      Tensor z = ops::matmul(x, ops::reshape(theta, {p.dim, 1}));
      Tensor g = grad(ops::mean(ops::sub(ops::softplus(z), ops::mul(y, z))), theta, {.create_graph = true});
      auto h = orc::logistic_hessian(p, theta0);
      for (std::int64_t j = 0; j < p.dim; ++j) {
        std::vector<double> e(p.dim, 0.0);
        e[j] = 1.0;
        Tensor col = hvp_from_grad(g, theta, Tensor::from({p.dim}, e));
        for (std::int64_t i = 0; i < p.dim; ++i) worst = std::max(worst, std::abs(col[i] - h[i * p.dim + j]));
      }
    }

    // Weighted logistic loss mean_i w_i nll_i: d2/dw_i dtheta = (s_i - y_i) x_i / n.
    {
      auto p = orc::make_logistic(rng, 40, 6);
      auto theta0 = orc::uniform(rng, p.dim, -0.5, 0.5), w0 = orc::uniform(rng, p.n, 0.5, 1.5);
      auto v = orc::uniform(rng, p.dim, -1, 1);
      Tensor x = Tensor::from({p.n, p.dim}, p.x), y = Tensor::from({p.n, 1}, p.y);
      Tensor theta = Tensor::leaf({p.dim}, theta0), w = Tensor::leaf({p.n}, w0);
      Tensor z = ops::matmul(x, ops::reshape(theta, {p.dim, 1}));
      Tensor nll = ops::reshape(ops::sub(ops::softplus(z), ops::mul(y, z)), {p.n});
      Tensor m = mixed_grad(ops::mean(ops::mul(w, nll)), theta, w, Tensor::from({p.dim}, v));
      for (std::int64_t i = 0; i < p.n; ++i) {
        double zi = 0.0, xv = 0.0;
        for (std::int64_t k = 0; k < p.dim; ++k) {
          zi += p.x[i * p.dim + k] * theta0[k];
          xv += p.x[i * p.dim + k] * v[k];
        }
        const double expected = (1.0 / (1.0 + std::exp(-zi)) - p.y[i]) * xv / static_cast<double>(p.n);
        worst = std::max(worst, std::abs(m[i] - expected));
      }
    }

    // Weighted ridge: d2/dw_i dtheta = r_i x_i / n, and the Hessian is X^T W X / n + gamma I.
    {
      auto p = orc::make_ridge(rng, 30, 10, 8, 0.5);
      auto theta0 = orc::uniform(rng, p.dim, -1, 1);
      auto v = orc::uniform(rng, p.dim, -1, 1);
      Tensor x = Tensor::from({p.n, p.dim}, p.x), y = Tensor::from({p.n}, p.y);
      Tensor theta = Tensor::leaf({p.dim}, theta0), w = Tensor::leaf({p.n}, p.w);
      Tensor res = ops::sub(ops::reshape(ops::matmul(x, ops::reshape(theta, {p.dim, 1})), {p.n}), y);
      Tensor loss = ops::add(ops::scale(ops::sum(ops::mul(w, ops::mul(res, res))), 0.5 / static_cast<double>(p.n)),
                             ops::scale(ops::dot(theta, theta), 0.5 * p.gamma));
      Tensor g = grad(loss, theta, {.create_graph = true});
      Tensor hv = hvp_from_grad(g, theta, Tensor::from({p.dim}, v));
      Tensor m = mixed_grad_from_grad(g, std::vector<Tensor>{w}, Tensor::from({p.dim}, v))[0];
      for (std::int64_t a = 0; a < p.dim; ++a) {
        double expected = p.gamma * v[a];
        for (std::int64_t i = 0; i < p.n; ++i) {
          double xv = 0.0;
          for (std::int64_t k = 0; k < p.dim; ++k) xv += p.x[i * p.dim + k] * v[k];
          expected += p.w[i] * p.x[i * p.dim + a] * xv / static_cast<double>(p.n);
        }
        worst = std::max(worst, std::abs(hv[a] - expected));
      }
      for (std::int64_t i = 0; i < p.n; ++i) {
        double xv = 0.0;
        for (std::int64_t k = 0; k < p.dim; ++k) xv += p.x[i * p.dim + k] * v[k];
        worst = std::max(worst, std::abs(m[i] - res[i] * xv / static_cast<double>(p.n)));
      }
    }

    // Small softmax MLP: Hessian columns against a Hessian assembled by
    // differencing first derivatives.
    {
      const std::int64_t batch = 6, in = 3, hidden = 4, out = 3, total = in * hidden + hidden * out;
      Tensor x = Tensor::from({batch, in}, orc::uniform(rng, batch * in, -1, 1));
      const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
      auto loss_of = [&](const Tensor& theta) {
        Tensor h = ops::softplus(ops::matmul(x, ops::segment(theta, 0, {in, hidden})));
        return task::valid_loss(ops::matmul(h, ops::segment(theta, in * hidden, {hidden, out})), labels);
      };
      auto theta0 = orc::uniform(rng, total, -1, 1);
      Tensor theta = Tensor::leaf({total}, theta0);
      Tensor g = grad(loss_of(theta), theta, {.create_graph = true});
      auto h = orc::fd_jacobian(
          [&](std::span<const double> p) {
            Tensor t = Tensor::leaf({total}, {p.begin(), p.end()});
            return grad(loss_of(t), t).vec();
          },
          theta0, 1e-3);
      for (std::int64_t j = 0; j < total; ++j) {
        std::vector<double> e(total, 0.0);
        e[j] = 1.0;
        Tensor col = hvp_from_grad(g, theta, Tensor::from({total}, e));
        for (std::int64_t i = 0; i < total; ++i) worst = std::max(worst, std::abs(col[i] - h[i * total + j]));
      }
    }
    r.passed = worst < 1e-8;
    r.detail = "max abs error " + fmt(worst) + " vs 1e-8 over Hessian columns and mixed partials";
  });
}

CheckResult neumann_convergence() {
  return timed(3, "Neumann convergence", [](CheckResult& r) {
    // Scalar worked example.
    hg::LinearOp twice = [](const Tensor& v) { return ops::scale(v, 2.0); };
    const double scalar = hg::neumann_ihvp(twice, Tensor::from({1}, {1.0}), 0.25, 5).p[0];
    bool ok = scalar == 0.4921875;

    auto rng = make_rng({3});
    double worst_ratio = 0.0, worst_oracle = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      const std::int64_t n = 12;
      auto h = orc::random_spd(rng, n, 0.2, 3.0);
      auto v = orc::uniform(rng, n, -1, 1);
      const double lmax = orc::max_eigenvalue_sym(h, n), lmin = orc::min_eigenvalue_sym(h, n);
      const double alpha = 1.0 / lmax, rho = 1.0 - lmin / lmax;
      auto exact = orc::solve_spd(h, v, n);
      hg::LinearOp op = [&](const Tensor& x) { return Tensor::from({n}, orc::mat_vec(h, x.vec(), n, n)); };
      double first = 0.0;
      for (int terms = 0; terms <= 40; ++terms) {
        auto p = hg::neumann_ihvp(op, Tensor::from({n}, v), alpha, terms).p;
        double err = 0.0;
        for (std::int64_t i = 0; i < n; ++i) err += (p[i] - exact[i]) * (p[i] - exact[i]);
        err = std::sqrt(err);
        // The residual is (I - alpha H)^{T+1} H^{-1} v, so err_T <= rho^T err_0.
        if (terms == 0) first = err;
        else worst_ratio = std::max(worst_ratio, err / (first * std::pow(rho, terms)));
        worst_oracle = std::max(worst_oracle, orc::max_abs_error(p.vec(), orc::dense_neumann(h, v, n, alpha, terms)));
      }
    }
    // 10x10 system: under 1e-6 by T = 200.
    const std::int64_t n = 10;
    auto h = orc::random_spd(rng, n, 0.3, 3.0);
    auto v = orc::uniform(rng, n, -1, 1);
    auto exact = orc::solve_spd(h, v, n);
    hg::LinearOp op = [&](const Tensor& x) { return Tensor::from({n}, orc::mat_vec(h, x.vec(), n, n)); };
    auto p200 = hg::neumann_ihvp(op, Tensor::from({n}, v), 1.0 / orc::max_eigenvalue_sym(h, n), 200).p;
    const double err200 = orc::max_abs_error(p200.vec(), exact);
    ok = ok && worst_ratio <= 1.0 + 1e-9 && worst_oracle < 1e-12 && err200 < 1e-6;
    r.passed = ok;
    std::ostringstream exact_text;
    exact_text.precision(17);
    exact_text << scalar;
    r.detail = "scalar example " + exact_text.str() + " (0.4921875 expected), max err_T / (rho^T err_0) " +
               fmt(worst_ratio) + ", max deviation from dense series " + fmt(worst_oracle) + ", 10x10 error at T=200 " +
               fmt(err200);
  });
}

CheckResult bilevel_oracle() {
  return timed(4, "bilevel oracle", [](CheckResult& r) {
    auto rng = make_rng({4});
    auto p = orc::make_ridge(rng, 24, 16, 5, 0.5);
    auto theta_star = orc::ridge_solution(p, p.w);
    Tensor x = Tensor::from({p.n, p.dim}, p.x), y = Tensor::from({p.n}, p.y);
    Tensor xv = Tensor::from({p.m, p.dim}, p.xv), yv = Tensor::from({p.m}, p.yv);
    Tensor theta = Tensor::leaf({p.dim}, theta_star), w = Tensor::leaf({p.n}, p.w);
    auto residual = [&](const Tensor& a, const Tensor& b, std::int64_t rows) {
      return ops::sub(ops::reshape(ops::matmul(a, ops::reshape(theta, {p.dim, 1})), {rows}), b);
    };
    hg::ImplicitProblem problem;
    problem.theta = theta;
    problem.hypers = {w};
    problem.valid_loss = [&] {
      Tensor rv = residual(xv, yv, p.m);
      return ops::scale(ops::dot(rv, rv), 0.5 / static_cast<double>(p.m));
    };
    problem.train_loss = [&] {
      Tensor rt = residual(x, y, p.n);
      return ops::add(ops::scale(ops::sum(ops::mul(w, ops::mul(rt, rt))), 0.5 / static_cast<double>(p.n)),
                      ops::scale(ops::dot(theta, theta), 0.5 * p.gamma));
    };
    const auto analytic = orc::ridge_analytic_hypergradient(p);

    hg::NeumannConfig exact{.estimator = hg::Estimator::exact_inverse};
    const double exact_err = scaled_error(hg::implicit_hypergradient(problem, exact).grads[0].vec(), analytic);

    // alpha = 1 / lambda_max of the inner Hessian
    std::vector<double> h(static_cast<std::size_t>(p.dim * p.dim), 0.0);
    for (std::int64_t i = 0; i < p.n; ++i)
      for (std::int64_t a = 0; a < p.dim; ++a)
        for (std::int64_t b = 0; b < p.dim; ++b)
          h[a * p.dim + b] += p.w[i] * p.x[i * p.dim + a] * p.x[i * p.dim + b] / static_cast<double>(p.n);
    for (std::int64_t a = 0; a < p.dim; ++a) h[a * p.dim + a] += p.gamma;
    hg::NeumannConfig neumann{.terms = 50, .alpha = 1.0 / orc::max_eigenvalue_sym(h, p.dim)};
    const double neumann_err = scaled_error(hg::implicit_hypergradient(problem, neumann).grads[0].vec(), analytic);

    const double retrain_err = scaled_error(orc::ridge_retrain_hypergradient(p), analytic);
    r.passed = exact_err < 1e-8 && neumann_err < 1e-4 && retrain_err < 1e-4;
    r.detail = "relative error vs closed form: exact " + fmt(exact_err) + " (< 1e-8), Neumann T=50 " +
               fmt(neumann_err) + " (< 1e-4), retraining differences " + fmt(retrain_err) + " (< 1e-4)";
  });
}

CheckResult estimator_relationship() {
  return timed(5, "estimator relationship", [](CheckResult& r) {
    const std::int64_t side = 8, classes = 4, batch = 6;
    auto pool = data::make_synthetic(4, classes, side, 5);
    task::TaskModel model({task::Kind::tinycnn, 1, side, side, classes, {}, {2, 3}}, 6);
    aug::AugConfig aug_cfg;
    auto table = hyper::HyperTable::create(pool.global_index, classes, static_cast<std::int64_t>(aug_cfg.ops.size()), {});
    hyper::init_soft_labels(table, pool.labels, 0.1);
    std::vector<std::int64_t> rows(batch), vrows;
    for (std::int64_t i = 0; i < batch; ++i) rows[i] = i;
    for (std::int64_t i = batch; i < pool.size(); ++i) vrows.push_back(i);
    auto noise_rng = make_rng({5});
    hg::TrainBatch train{pool.batch_images(rows), pool.batch_labels(rows), rows,
                         aug::draw_noise(batch, static_cast<std::int64_t>(aug_cfg.ops.size()), noise_rng)};
    hg::ValidBatch valid{pool.batch_images(vrows), pool.batch_labels(vrows)};

    auto estimate = [&](const hg::NeumannConfig& cfg, const hg::IhvpOverride& override_ihvp) {
      Tensor theta = model.param_leaf();
      auto hypers = hyper::gather(table, rows, true);
      hg::ImplicitProblem problem;
      problem.theta = theta;
      problem.hypers = hypers.learned();
      problem.valid_loss = [&] { return task::valid_loss(model.forward(theta, valid.images), valid.labels); };
      problem.train_loss = [&] { return hg::batch_train_loss(model, theta, train, table, hypers, aug_cfg); };
      return hg::implicit_hypergradient(problem, cfg, override_ihvp);
    };
    auto darts = estimate({.estimator = hg::Estimator::darts_identity}, {});
    auto substituted = estimate({.estimator = hg::Estimator::ift_neumann},
                                [](const hg::LinearOp&, const Tensor& v0) { return v0; });
    auto via_step = hg::hypergrad_step(model, table, train, valid, aug_cfg, {.estimator = hg::Estimator::darts_identity});
    bool equal = darts.grads.size() == substituted.grads.size() && darts.grads.size() == 4;
    std::int64_t compared = 0;
    for (std::size_t k = 0; equal && k < darts.grads.size(); ++k) {
      equal = darts.grads[k].vec() == substituted.grads[k].vec() &&
              darts.grads[k].vec() == via_step.estimate.grads[k].vec();
      compared += darts.grads[k].numel();
    }
    r.passed = equal && darts.passes == 5 && substituted.passes == 5;
    r.detail = std::string(equal ? "bitwise equal" : "differ") + " over " + std::to_string(compared) +
               " hypergradient entries; passes " + std::to_string(darts.passes) + " and " +
               std::to_string(substituted.passes);
  });
}

CheckResult fisher_diagnostic(std::int64_t samples) {
  return timed(6, "Fisher diagnostic", [samples](CheckResult& r) {
    auto report = hg::fisher_check(samples, 4, 6);
    r.passed = report.frobenius_rel < 0.05;
    r.detail = std::to_string(samples) + " samples, |F - H|_F / |H|_F = " + fmt(report.frobenius_rel) +
               " (< 0.05); Fisher-kernel form vs implicit with the same metric " + fmt(report.kernel_vs_implicit) +
               ", vs implicit with the Hessian " + fmt(report.kernel_vs_hessian);
  });
}

CheckResult soft_label_init() {
  return timed(7, "soft-label init", [](CheckResult& r) {
    double worst = 0.0;
    for (std::int64_t classes : {2, 10, 100})
      for (double alpha : {0.05, 0.1, 0.2})
        for (int label : {0, static_cast<int>(classes / 2), static_cast<int>(classes - 1)}) {
          auto row = hyper::soft_label_init_row(label, classes, alpha);
          auto probs = hyper::soft_labels(Tensor::from({1, classes}, row));
          for (std::int64_t c = 0; c < classes; ++c) {
            const double target = (c == label ? 1.0 - alpha : 0.0) + alpha / static_cast<double>(classes);
            worst = std::max(worst, std::abs(probs[c] - target));
          }
        }
    r.passed = worst < 1e-9;
    r.detail = "max deviation from the smoothed target " + fmt(worst) + " (< 1e-9)";
  });
}

CheckResult complexity_accounting() {
  return timed(8, "complexity accounting", [](CheckResult& r) {
    auto train = data::make_synthetic(6, 4, 8, 11);
    auto valid = data::make_synthetic(3, 4, 8, 12);
    run::RunConfig cfg;
    cfg.epochs = 4;
    cfg.ho_start = 2;
    cfg.batch = 8;
    cfg.neumann.terms = 5;
    cfg.model = {task::Kind::tinycnn, 1, 8, 8, 4, {}, {2, 2}};
    cfg.record_wall_time = false;
    cfg.arm = run::Arm::aws;
    const double ift = run::run(cfg, train, valid, valid).pass_ratio();
    cfg.arm = run::Arm::darts;
    const double darts = run::run(cfg, train, valid, valid).pass_ratio();
    r.passed = ift == 3.5 && darts == 2.25;
    r.detail = "pass ratio " + fmt(ift) + " with T=5 (3.5 expected), " + fmt(darts) + " with the identity (2.25)";
  });
}

CheckResult distortion_exactness() {
  return timed(9, "distortion exactness", [](CheckResult& r) {
    std::vector<std::string> failures;
    auto expect = [&](bool ok, const std::string& what) {
      if (!ok) failures.push_back(what);
    };

    auto two = data::make_synthetic(500, 2, 8, 21);
    auto imb = data::apply_imbalance(two, {10, 0.0, 1});
    auto counts = imb.class_counts();
    expect(counts[0] == 500 && counts[1] == 50, "ir=10 keeps 500 / 50");
    auto same = data::apply_imbalance(two, {1, 0.0, 1});
    expect(same.labels == two.labels && same.images == two.images && same.global_index == two.global_index,
           "ir=1 is the identity");

    auto ten = data::make_synthetic(55, 10, 8, 22);
    auto noisy = data::apply_label_noise(ten, {1, 0.1, 3});
    std::int64_t changed = 0;
    for (std::int64_t i = 0; i < ten.size(); ++i) changed += noisy.labels[i] != ten.labels[i];
    expect(changed == 55, "nr=0.1 on 550 flips exactly 55");
    expect(data::apply_label_noise(ten, {1, 0.0, 3}).labels == ten.labels, "nr=0 is the identity");
    auto flipped = data::apply_label_noise(two, {1, 0.1, 4});
    std::int64_t binary_changed = 0;
    bool complement = true;
    for (std::int64_t i = 0; i < two.size(); ++i)
      if (flipped.labels[i] != two.labels[i]) {
        ++binary_changed;
        complement = complement && flipped.labels[i] == 1 - two.labels[i];
      }
    expect(binary_changed == 100 && complement, "two-class noise flips to the other class");

    auto [tr, va] = data::stratified_split(two, 0.2, 5);
    auto vc = va.class_counts();
    expect(vc[0] == 100 && vc[1] == 100 && tr.size() == 800, "0.2 split of 1000 gives 100 per class");
    auto uneven = data::apply_imbalance(data::make_synthetic(137, 10, 8, 23), {3, 0.0, 2});
    auto [tr2, va2] = data::stratified_split(uneven, 0.32, 6);
    auto uc = uneven.class_counts(), vc2 = va2.class_counts();
    bool rounded = true;
    for (std::size_t c = 0; c < uc.size(); ++c)
      rounded = rounded && vc2[c] == std::llround(0.32 * static_cast<double>(uc[c]));
    expect(rounded && tr2.size() + va2.size() == uneven.size(), "0.32 split rounds per class");

    auto [tr3, va3] = data::stratified_split(two, 0.2, 5);
    expect(tr3.global_index == tr.global_index && va3.global_index == va.global_index, "split is seeded");
    auto d1 = data::distort(ten, {10, 0.1, 9}), d2 = data::distort(ten, {10, 0.1, 9});
    expect(d1.global_index == d2.global_index && d1.labels == d2.labels, "distortion is seeded");
    expect(data::make_synthetic(5, 10, 8, 3).images == data::make_synthetic(5, 10, 8, 3).images,
           "synthetic data is seeded");

    auto small = data::make_synthetic(6, 4, 8, 31);
    run::RunConfig cfg;
    cfg.epochs = 3;
    cfg.ho_start = 1;
    cfg.batch = 8;
    cfg.model = {task::Kind::tinycnn, 1, 8, 8, 4, {}, {2, 2}};
    cfg.record_wall_time = false;
    auto a = run::run(cfg, small, small, small), b = run::run(cfg, small, small, small);
    bool same_history = a.history.size() == b.history.size();
    for (std::size_t e = 0; same_history && e < a.history.size(); ++e)
      same_history = run::to_json(a.history[e]) == run::to_json(b.history[e]);
    expect(same_history && a.model.params() == b.model.params() && a.table.lambda_w == b.table.lambda_w &&
               a.table.lambda_m == b.table.lambda_m,
           "bilevel run is seeded");

    r.passed = failures.empty();
    if (failures.empty()) {
      r.detail = "IR, NR, split counts exact; split, distortion, data and training reproducible per seed";
    } else {
      for (const auto& f : failures) r.detail += (r.detail.empty() ? "failed: " : "; ") + f;
    }
  });
}

std::vector<CheckResult> run_all(bool full) {
  return {gradient_correctness(),  second_order_correctness(), neumann_convergence(),
          bilevel_oracle(),        estimator_relationship(),   fisher_diagnostic(full ? 50000 : 5000),
          soft_label_init(),       complexity_accounting(),    distortion_exactness()};
}

nlohmann::json to_json(const std::vector<CheckResult>& results) {
  auto out = nlohmann::json::array();
  for (const auto& r : results)
    out.push_back({{"id", r.id}, {"name", r.name}, {"passed", r.passed}, {"detail", r.detail}, {"seconds", r.seconds}});
  return out;
}

}  // namespace autodo::checks
