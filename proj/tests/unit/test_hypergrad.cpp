#include <cmath>
#include <random>

#include "autodo/autograd.hpp"
#include "autodo/checks.hpp"
#include "autodo/dataforge.hpp"
#include "autodo/hypergrad.hpp"
#include "autodo/ops.hpp"
#include "autodo/oracles.hpp"
#include "autodo/seeding.hpp"
#include "doctest.h"

using namespace autodo;
using namespace autodo::hg;
namespace orc = autodo::oracles;

namespace {

LinearOp dense(const std::vector<double>& h, std::int64_t n) {
  return [h, n](const Tensor& v) { return Tensor::from({n}, orc::mat_vec(h, v.vec(), n, n)); };
}

// A small image problem shared by the batch-level tests.
struct Fixture {
  data::DatasetView pool = data::make_synthetic(4, 4, 8, 3);
  task::TaskModel model{{task::Kind::tinycnn, 1, 8, 8, 4, {}, {2, 3}}, 4};
  aug::AugConfig aug_cfg;
  hyper::HyperTable table = hyper::HyperTable::create(pool.global_index, 4, 6, {});

  Fixture() { hyper::init_soft_labels(table, pool.labels, 0.1); }

  TrainBatch train(std::vector<std::int64_t> rows, std::uint64_t seed = 1) const {
    auto rng = make_rng({seed});
    return {pool.batch_images(rows), pool.batch_labels(rows), rows,
            aug::draw_noise(static_cast<std::int64_t>(rows.size()), 6, rng)};
  }
  ValidBatch valid() const {
    std::vector<std::int64_t> rows = {8, 9, 10, 11, 12, 13, 14, 15};
    return {pool.batch_images(rows), pool.batch_labels(rows)};
  }
};

}  // namespace

TEST_CASE("Neumann series basics") {
  LinearOp twice = [](const Tensor& v) { return ops::scale(v, 2.0); };
  auto r = neumann_ihvp(twice, Tensor::from({1}, {1.0}), 0.25, 5);
  CHECK(r.p[0] == 0.4921875);
  CHECK(r.hvp_calls == 5);
  CHECK(neumann_ihvp(twice, Tensor::from({2}, {1.0, -3.0}), 0.25, 0).p.vec() == std::vector<double>{0.25, -0.75});
  CHECK(neumann_ihvp(twice, Tensor::from({1}, {1.0}), 0.25, 0).hvp_calls == 0);
  CHECK_THROWS_AS(neumann_ihvp(twice, Tensor::from({1}, {1.0}), 0.25, -1), Error);
  CHECK_THROWS_AS(neumann_ihvp(twice, Tensor::from({1}, {1.0}), 0.0, 3), Error);
  // spectral radius above one: the iterate blows up and is reported
  CHECK_THROWS_AS(neumann_ihvp(twice, Tensor::from({1}, {1.0}), 5.0, 2000), Error);
}

TEST_CASE("Neumann series on SPD systems") {
  auto rng = make_rng({7});
  const std::int64_t n = 10;
  auto h = orc::random_spd(rng, n, 0.3, 3.0);
  auto v = orc::uniform(rng, n, -1, 1), w = orc::uniform(rng, n, -1, 1);
  const double alpha = 1.0 / orc::max_eigenvalue_sym(h, n);
  auto exact = orc::solve_spd(h, v, n);
  double prev = 1e300;
  for (int terms : {0, 10, 20, 50, 100, 200}) {
    auto p = neumann_ihvp(dense(h, n), Tensor::from({n}, v), alpha, terms).p;
    CHECK(orc::max_abs_error(p.vec(), orc::dense_neumann(h, v, n, alpha, terms)) < 1e-12);
    const double err = orc::max_abs_error(p.vec(), exact);
    CHECK(err < prev);
    prev = err;
  }
  CHECK(prev < 1e-6);

  // linear in the right-hand side
  std::vector<double> combo(n);
  for (std::int64_t i = 0; i < n; ++i) combo[i] = 2.0 * v[i] - 0.5 * w[i];
  auto pv = neumann_ihvp(dense(h, n), Tensor::from({n}, v), alpha, 7).p;
  auto pw = neumann_ihvp(dense(h, n), Tensor::from({n}, w), alpha, 7).p;
  auto pc = neumann_ihvp(dense(h, n), Tensor::from({n}, combo), alpha, 7).p;
  for (std::int64_t i = 0; i < n; ++i) CHECK(pc[i] == doctest::Approx(2.0 * pv[i] - 0.5 * pw[i]).epsilon(1e-12));
}

TEST_CASE("exact and identity inverses") {
  auto rng = make_rng({8});
  const std::int64_t n = 6;
  auto h = orc::random_spd(rng, n, 0.5, 2.0);
  auto v = orc::uniform(rng, n, -1, 1);
  NeumannConfig cfg{.estimator = Estimator::exact_inverse};
  auto r = inverse_hvp(dense(h, n), Tensor::from({n}, v), cfg);
  CHECK(orc::max_abs_error(r.p.vec(), orc::solve_spd(h, v, n)) < 1e-12);
  CHECK(r.hvp_calls == n);
  cfg.exact_limit = 5;
  CHECK_THROWS_AS(inverse_hvp(dense(h, n), Tensor::from({n}, v), cfg), Error);

  cfg.estimator = Estimator::darts_identity;
  auto id = inverse_hvp(dense(h, n), Tensor::from({n}, v), cfg);
  CHECK(id.p.vec() == v);
  CHECK(id.hvp_calls == 0);

  // singular Hessian falls back to the jittered solve
  std::vector<double> singular(n * n, 0.0);
  singular[0] = 1.0;
  cfg.estimator = Estimator::exact_inverse;
  cfg.exact_limit = 200;
  auto s = inverse_hvp(dense(singular, n), Tensor::from({n}, v), cfg);
  for (double x : s.p.values()) CHECK(std::isfinite(x));
}

TEST_CASE("estimator names") {
  CHECK(parse_estimator("ift") == Estimator::ift_neumann);
  CHECK(parse_estimator("darts") == Estimator::darts_identity);
  CHECK(parse_estimator("exact") == Estimator::exact_inverse);
  for (auto e : {Estimator::ift_neumann, Estimator::darts_identity, Estimator::exact_inverse})
    CHECK(parse_estimator(estimator_name(e)) == e);
  CHECK_THROWS_AS(parse_estimator("cg"), Error);
}

TEST_CASE("ridge bilevel problem against closed form and retraining") {
  auto r = checks::bilevel_oracle();
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("identity estimator is the Neumann step replaced by v0") {
  auto r = checks::estimator_relationship();
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("hypergradient structure on an image batch") {
  Fixture f;
  auto valid = f.valid();
  NeumannConfig cfg;
  auto step = hypergrad_step(f.model, f.table, f.train({0, 1, 2, 3}), valid, f.aug_cfg, cfg);
  CHECK(step.lambda_m.shape() == Shape{4, 6});
  CHECK(step.lambda_b.shape() == Shape{4, 6});
  CHECK(step.lambda_w.shape() == Shape{4});
  CHECK(step.lambda_s.shape() == Shape{4, 4});
  CHECK(step.estimate.passes == 5 + cfg.terms);
  CHECK(step.estimate.rows == std::vector<std::int64_t>{0, 1, 2, 3});
  auto diag = diagnostics_json(step.estimate, cfg);
  CHECK(diag["T"] == 5);
  CHECK(diag["passes"] == 10);

  // reversing the batch reverses the rows of every block
  auto fwd = f.train({0, 1, 2, 3});
  TrainBatch rev{f.pool.batch_images(std::vector<std::int64_t>{3, 2, 1, 0}),
                 f.pool.batch_labels(std::vector<std::int64_t>{3, 2, 1, 0}), {3, 2, 1, 0}, fwd.noise};
  for (std::int64_t i = 0; i < 4; ++i)
    for (std::int64_t k = 0; k < 6; ++k) {
      rev.noise.z[i * 6 + k] = fwd.noise.z[(3 - i) * 6 + k];
      rev.noise.gumbel_on[i * 6 + k] = fwd.noise.gumbel_on[(3 - i) * 6 + k];
      rev.noise.gumbel_off[i * 6 + k] = fwd.noise.gumbel_off[(3 - i) * 6 + k];
    }
  auto a = hypergrad_step(f.model, f.table, fwd, valid, f.aug_cfg, cfg);
  auto b = hypergrad_step(f.model, f.table, rev, valid, f.aug_cfg, cfg);
  for (std::int64_t i = 0; i < 4; ++i) {
    CHECK(a.lambda_w[i] == doctest::Approx(b.lambda_w[3 - i]).epsilon(1e-9));
    for (std::int64_t k = 0; k < 6; ++k)
      CHECK(a.lambda_m[i * 6 + k] == doctest::Approx(b.lambda_m[(3 - i) * 6 + k]).epsilon(1e-9));
  }

  CHECK_THROWS_AS(hypergrad_step(f.model, f.table, f.train({}), valid, f.aug_cfg, cfg), Error);
}

TEST_CASE("zero validation gradient gives a zero hypergradient") {
  Tensor theta = Tensor::leaf({2}, {1.0, -2.0});
  Tensor lam = Tensor::leaf({2}, {0.5, 0.5});
  ImplicitProblem p;
  p.theta = theta;
  p.hypers = {lam};
  // minimised at the current theta
  p.valid_loss = [&] {
    Tensor d = ops::sub(theta, Tensor::from({2}, {1.0, -2.0}));
    return ops::dot(d, d);
  };
  p.train_loss = [&] { return ops::sum(ops::mul(lam, ops::mul(theta, theta))); };
  for (auto e : {Estimator::ift_neumann, Estimator::darts_identity, Estimator::exact_inverse}) {
    auto est = implicit_hypergradient(p, {.estimator = e});
    CHECK(est.grads[0].vec() == std::vector<double>{0.0, 0.0});
  }
}

TEST_CASE("Fisher diagnostic") {
  auto big = fisher_check(50000, 5, 1);
  CHECK(big.params == 6);
  CHECK(big.frobenius_rel < 0.05);
  CHECK(big.kernel_vs_implicit < 1e-6);
  auto doc = fisher_json(big);
  CHECK(doc["samples"] == 50000);
  auto tiny = fisher_check(10, 5, 1);
  MESSAGE("Fisher discrepancy with 10 samples: " << tiny.frobenius_rel);
  CHECK(std::isfinite(tiny.frobenius_rel));
  CHECK_THROWS_AS(fisher_check(100, 250, 1), Error);
}
