#include "autodo/hypergrad.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "autodo/autograd.hpp"
#include "autodo/ops.hpp"
#include "autodo/seeding.hpp"

namespace autodo::hg {

namespace {

double norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

Eigen::MatrixXd assemble(const LinearOp& op, std::int64_t n, const Shape& shape) {
  Eigen::MatrixXd m(n, n);
  std::vector<double> e(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    Tensor col = op(Tensor::from(shape, e));
    e[j] = 0.0;
    for (std::int64_t i = 0; i < n; ++i) m(i, j) = col[i];
  }
  return 0.5 * (m + m.transpose());
}

Tensor solve(const Eigen::MatrixXd& a, const Tensor& b, double jitter) {
  const auto n = a.rows();
  Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(b.values().data(), n);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  Eigen::VectorXd x;
  if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-14) {
    x = ldlt.solve(rhs);
  } else {
    Eigen::MatrixXd reg = a + jitter * Eigen::MatrixXd::Identity(n, n);
    x = reg.ldlt().solve(rhs);
  }
  return Tensor::from(b.shape(), std::vector<double>(x.data(), x.data() + n));
}

}  // namespace

std::string estimator_name(Estimator e) {
  switch (e) {
    case Estimator::ift_neumann: return "ift_neumann";
    case Estimator::darts_identity: return "darts_identity";
    case Estimator::exact_inverse: return "exact_inverse";
  }
  return "?";
}

Estimator parse_estimator(const std::string& name) {
  if (name == "ift" || name == "ift_neumann") return Estimator::ift_neumann;
  if (name == "darts" || name == "darts_identity") return Estimator::darts_identity;
  if (name == "exact" || name == "exact_inverse") return Estimator::exact_inverse;
  throw Error("unknown estimator '" + name + "' (expected ift, darts or exact)");
}

IhvpResult neumann_ihvp(const LinearOp& hvp, const Tensor& v0, double alpha, int terms) {
  if (terms < 0) throw Error("Neumann series needs T >= 0");
  if (!(alpha > 0.0)) throw Error("Neumann step size must be positive");
  IhvpResult r;
  Tensor term = v0.detach();
  std::vector<double> acc(term.vec());
  for (int j = 1; j <= terms; ++j) {
    Tensor hv = hvp(term);
    ++r.hvp_calls;
    std::vector<double> next(term.vec());
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] -= alpha * hv[i];
      acc[i] += next[i];
    }
    term = Tensor::from(v0.shape(), std::move(next));
    if (!all_finite(term))
      throw Error("Neumann iterate became non-finite at term " + std::to_string(j) + " with alpha " +
                  std::to_string(alpha));
  }
  for (double& v : acc) v *= alpha;
  r.p = Tensor::from(v0.shape(), std::move(acc));
  r.last_term_norm = alpha * norm(term);
  return r;
}

IhvpResult exact_ihvp(const LinearOp& hvp, const Tensor& v0, double jitter, std::int64_t limit) {
  const auto n = v0.numel();
  if (n > limit) throw Error("exact inverse limited to " + std::to_string(limit) + " parameters, model has " +
                             std::to_string(n));
  IhvpResult r;
  r.p = solve(assemble(hvp, n, v0.shape()), v0, jitter);
  r.hvp_calls = n;
  return r;
}

IhvpResult inverse_hvp(const LinearOp& hvp, const Tensor& v0, const NeumannConfig& cfg) {
  switch (cfg.estimator) {
    case Estimator::ift_neumann: return neumann_ihvp(hvp, v0, cfg.alpha, cfg.terms);
    case Estimator::exact_inverse: return exact_ihvp(hvp, v0, cfg.jitter, cfg.exact_limit);
    case Estimator::darts_identity: return {v0.detach(), 0, 0.0};
  }
  throw Error("unknown estimator");
}

IhvpResult inverse_hvp(const std::function<Tensor(const Tensor&)>& loss_fn, const Tensor& theta, const Tensor& v0,
                       const NeumannConfig& cfg) {
  Tensor g = grad(loss_fn(theta), theta, {.create_graph = true});
  return inverse_hvp([&](const Tensor& v) { return hvp_from_grad(g, theta, v); }, v0, cfg);
}

HypergradEstimate implicit_hypergradient(const ImplicitProblem& problem, const NeumannConfig& cfg,
                                         const IhvpOverride& override_ihvp) {
  HypergradEstimate est;
  est.estimator = cfg.estimator;
  const Tensor& theta = problem.theta;

  Tensor v0 = grad(problem.valid_loss(), theta);
  est.passes += 2;
  est.v0_norm = norm(v0);

  Tensor g = grad(problem.train_loss(), theta, {.create_graph = true});
  est.passes += 2;
  LinearOp hvp = [&](const Tensor& v) { return hvp_from_grad(g, theta, v); };

  Tensor p;
  if (override_ihvp) {
    std::int64_t calls = 0;
    p = override_ihvp([&](const Tensor& v) { ++calls; return hvp(v); }, v0);
    est.passes += calls;
  } else {
    auto r = inverse_hvp(hvp, v0, cfg);
    p = r.p;
    est.passes += r.hvp_calls;
    est.last_term_norm = r.last_term_norm;
  }
  est.p_norm = norm(p);

  auto mixed = mixed_grad_from_grad(g, problem.hypers, p);
  est.passes += 1;
  for (auto& m : mixed) {
    if (!all_finite(m)) throw Error("non-finite hypergradient");
    est.grads.push_back(ops::neg(m));
  }
  return est;
}

Tensor batch_train_loss(const task::TaskModel& model, const Tensor& theta, const TrainBatch& batch,
                        const hyper::HyperTable& table, const hyper::BatchHypers& hypers,
                        const aug::AugConfig& aug_cfg) {
  Tensor x = batch.images;
  if (table.enabled.augment) {
    Tensor mags = aug::sample_magnitudes(hypers.lambda_m, batch.noise, aug_cfg);
    Tensor gates = aug::sample_gates(hypers.lambda_b, batch.noise, aug_cfg);
    x = aug::apply_chain(x, gates, mags, aug_cfg);
  }
  Tensor logits = model.forward(theta, x);
  return task::train_loss(logits, hyper::batch_targets(table, hypers, batch.labels),
                          hyper::batch_weights(table, hypers));
}

BlockGrads hypergrad_step(const task::TaskModel& model, const hyper::HyperTable& table, const TrainBatch& train,
                          const ValidBatch& valid, const aug::AugConfig& aug_cfg, const NeumannConfig& cfg) {
  if (train.rows.empty() || valid.labels.empty()) throw Error("hypergradient step needs non-empty batches");
  Tensor theta = model.param_leaf();
  auto hypers = hyper::gather(table, train.rows, /*as_leaves=*/true);
  ImplicitProblem problem;
  problem.theta = theta;
  problem.hypers = hypers.learned();
  problem.valid_loss = [&] { return task::valid_loss(model.forward(theta, valid.images), valid.labels); };
  problem.train_loss = [&] { return batch_train_loss(model, theta, train, table, hypers, aug_cfg); };

  BlockGrads out;
  out.estimate = implicit_hypergradient(problem, cfg);
  out.estimate.rows = train.rows;
  for (std::size_t k = 0; k < problem.hypers.size(); ++k) {
    const auto* id = problem.hypers[k].id();
    const Tensor& gk = out.estimate.grads[k];
    if (id == hypers.lambda_m.id()) out.lambda_m = gk;
    else if (id == hypers.lambda_b.id()) out.lambda_b = gk;
    else if (id == hypers.lambda_w.id()) out.lambda_w = gk;
    else if (id == hypers.lambda_s.id()) out.lambda_s = gk;
  }
  return out;
}

nlohmann::json diagnostics_json(const HypergradEstimate& e, const NeumannConfig& cfg) {
  return {{"estimator", estimator_name(e.estimator)},
          {"T", cfg.terms},
          {"alpha_n", cfg.alpha},
          {"v0_norm", e.v0_norm},
          {"ihvp_norm", e.p_norm},
          {"last_term_norm", e.last_term_norm},
          {"passes", e.passes},
          {"rows", e.rows.size()}};
}

FisherReport fisher_check(std::int64_t samples, std::int64_t features, std::uint64_t seed,
                          std::int64_t valid_samples) {
  const std::int64_t dim = features + 1;
  if (dim > 200) throw Error("fisher_check builds explicit matrices; at most 200 parameters");
  auto rng = make_rng({seed, 0x46495348ULL});
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> truth(static_cast<std::size_t>(dim));
  for (auto& t : truth) t = 2.0 * unit(rng) - 1.0;

  struct Sample {
    Tensor x, y;
  };
  auto draw = [&](std::int64_t n) {
    std::vector<double> x, y;
    for (std::int64_t i = 0; i < n; ++i) {
      double z = truth[features];
      for (std::int64_t k = 0; k < features; ++k) {
        const double v = gauss(rng);
        x.push_back(v);
        z += v * truth[k];
      }
      x.push_back(1.0);
      y.push_back(unit(rng) < 1.0 / (1.0 + std::exp(-z)) ? 1.0 : 0.0);
    }
    return Sample{Tensor::from({n, dim}, std::move(x)), Tensor::from({n, 1}, std::move(y))};
  };
  const Sample train = draw(samples), valid = draw(valid_samples);

  // per-point negative log-likelihood softplus(z) - y z as an [n, 1] column
  auto point_nll = [&](const Sample& s, const Tensor& theta) {
    Tensor z = ops::matmul(s.x, ops::reshape(theta, {dim, 1}));
    return std::pair{z, ops::sub(ops::softplus(z), ops::mul(s.y, z))};
  };
  auto mean_nll = [&](const Sample& s, const Tensor& theta) { return ops::mean(point_nll(s, theta).second); };

  // Newton's method to the maximum-likelihood point.
  std::vector<double> theta_hat(static_cast<std::size_t>(dim), 0.0);
  for (int it = 0; it < 50; ++it) {
    Tensor theta = Tensor::leaf({dim}, theta_hat);
    Tensor g = grad(mean_nll(train, theta), theta, {.create_graph = true});
    if (norm(g) < 1e-13) break;
    Tensor step = exact_ihvp([&](const Tensor& v) { return hvp_from_grad(g, theta, v); }, g.detach(), 1e-12, 200).p;
    for (std::int64_t k = 0; k < dim; ++k) theta_hat[k] -= step[k];
  }

  Tensor theta = Tensor::leaf({dim}, theta_hat);
  Tensor g = grad(mean_nll(train, theta), theta, {.create_graph = true});
  const Eigen::MatrixXd hessian = assemble([&](const Tensor& v) { return hvp_from_grad(g, theta, v); }, dim, {dim});

  // Scores u_i = -dNLL_i/dtheta = -(dNLL_i/dz_i) x_i.
  auto scores = [&](const Sample& s) {
    auto [z, nll] = point_nll(s, theta);
    Tensor gz = grad(ops::sum(nll), z);
    const auto n = s.x.dim(0);
    Eigen::MatrixXd u(n, dim);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t k = 0; k < dim; ++k) u(i, k) = -gz[i] * s.x[i * dim + k];
    return u;
  };
  const Eigen::MatrixXd u = scores(train), uv = scores(valid);
  const Eigen::MatrixXd fisher = u.transpose() * u / static_cast<double>(samples);

  FisherReport r;
  r.samples = samples;
  r.params = dim;
  r.frobenius_rel = (fisher - hessian).norm() / hessian.norm();

  // Fisher-kernel form: dLv/dw_i = -mean(u^v)^T I^{-1} u_i / N.
  const Eigen::VectorXd uv_mean = uv.colwise().mean().transpose();
  const Eigen::VectorXd solved = fisher.ldlt().solve(uv_mean);
  const Eigen::VectorXd kernel = -(u * solved) / static_cast<double>(samples);

  Tensor w = Tensor::leaf({samples}, std::vector<double>(static_cast<std::size_t>(samples), 1.0));
  ImplicitProblem problem;
  problem.theta = theta;
  problem.hypers = {w};
  problem.valid_loss = [&] { return mean_nll(valid, theta); };
  problem.train_loss = [&] {
    return ops::mean(ops::mul(w, ops::reshape(point_nll(train, theta).second, {samples})));
  };
  NeumannConfig exact{.estimator = Estimator::exact_inverse};
  auto with_fisher = implicit_hypergradient(problem, exact, [&](const LinearOp&, const Tensor& v0) {
    Eigen::MatrixXd f = fisher;
    return solve(f, v0, 0.0);
  });
  auto with_hessian = implicit_hypergradient(problem, exact);

  auto compare = [&](const Tensor& implicit) {
    double diff = 0.0, scale = 0.0;
    for (std::int64_t i = 0; i < samples; ++i) {
      diff = std::max(diff, std::abs(kernel(i) - implicit[i]));
      scale = std::max(scale, std::abs(implicit[i]));
    }
    return diff / std::max(scale, 1e-300);
  };
  r.kernel_vs_implicit = compare(with_fisher.grads[0]);
  r.kernel_vs_hessian = compare(with_hessian.grads[0]);
  return r;
}

nlohmann::json fisher_json(const FisherReport& r) {
  return {{"samples", r.samples},
          {"params", r.params},
          {"fisher_vs_hessian_frobenius_rel", r.frobenius_rel},
          {"kernel_vs_implicit_fisher", r.kernel_vs_implicit},
          {"kernel_vs_implicit_hessian", r.kernel_vs_hessian}};
}

}  // namespace autodo::hg
