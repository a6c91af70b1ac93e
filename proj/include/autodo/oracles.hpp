#pragma once

// Independent ground truth for the differentiation engine and the
// hypergradient estimators: finite differences, closed-form bilevel problems,
// explicit matrices. Nothing here calls the reverse sweep except where an
// oracle is explicitly built on already-verified first derivatives.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace autodo::oracles {

using ScalarFn = std::function<double(std::span<const double>)>;
using VectorFn = std::function<std::vector<double>(std::span<const double>)>;

/// Central difference gradient, step h.
std::vector<double> fd_gradient(const ScalarFn& f, std::span<const double> x, double h = 1e-5);

/// Jacobian of a vector function by fourth-order central differences;
/// returns row-major [out, in]. Used to assemble Hessians from gradients.
std::vector<double> fd_jacobian(const VectorFn& f, std::span<const double> x, double h = 1e-3);

/// |a - b| / max(|a|, |b|, floor); entries below `floor` compare absolutely.
double rel_error(double a, double b, double floor = 1e-3);
double max_rel_error(std::span<const double> a, std::span<const double> b, double floor = 1e-3);
double max_abs_error(std::span<const double> a, std::span<const double> b);

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi);

/// Dense column-major-free helpers over row-major square matrices.
std::vector<double> solve_spd(std::span<const double> a, std::span<const double> b, std::int64_t n);
std::vector<double> mat_vec(std::span<const double> a, std::span<const double> x, std::int64_t rows,
                            std::int64_t cols);
double max_eigenvalue_sym(std::span<const double> a, std::int64_t n);
double min_eigenvalue_sym(std::span<const double> a, std::int64_t n);
/// Random symmetric positive definite matrix with eigenvalues in [lo, hi].
std::vector<double> random_spd(std::mt19937_64& rng, std::int64_t n, double lo, double hi);

/// alpha * sum_{j=0..terms} (I - alpha H)^j v written out by repeated dense
/// matrix-vector products.
std::vector<double> dense_neumann(std::span<const double> h, std::span<const double> v, std::int64_t n,
                                  double alpha, int terms);

/// Binary logistic regression NLL (mean) and its analytic Hessian.
struct LogisticProblem {
  std::int64_t n = 0, dim = 0;  // dim includes the bias column
  std::vector<double> x;        // [n, dim], last column is 1
  std::vector<double> y;        // {0, 1}
};
LogisticProblem make_logistic(std::mt19937_64& rng, std::int64_t n, std::int64_t features,
                              std::span<const double> true_theta = {});
double logistic_nll(const LogisticProblem& p, std::span<const double> theta);
std::vector<double> logistic_gradient(const LogisticProblem& p, std::span<const double> theta);
std::vector<double> logistic_hessian(const LogisticProblem& p, std::span<const double> theta);
/// Newton iterations to the maximum-likelihood point.
std::vector<double> logistic_mle(const LogisticProblem& p, int iterations = 50);

/// Per-point weighted ridge regression as a bilevel problem:
/// inner  L(theta; w) = 1/(2n) sum_i w_i (x_i.theta - y_i)^2 + gamma/2 |theta|^2
/// outer  Lv(theta)   = 1/(2m) sum_j (xv_j.theta - yv_j)^2
struct RidgeBilevel {
  std::int64_t n = 0, m = 0, dim = 0;
  double gamma = 1.0;
  std::vector<double> x, y, xv, yv, w;
};
RidgeBilevel make_ridge(std::mt19937_64& rng, std::int64_t n, std::int64_t m, std::int64_t dim, double gamma);
/// theta*(w) = (X^T W X / n + gamma I)^{-1} X^T W y / n.
std::vector<double> ridge_solution(const RidgeBilevel& p, std::span<const double> w);
/// dLv/dw_i from differentiating the closed form by hand.
std::vector<double> ridge_analytic_hypergradient(const RidgeBilevel& p);
double ridge_valid_loss(const RidgeBilevel& p, std::span<const double> theta);
/// Retrains by plain gradient descent until the gradient norm is below tol.
std::vector<double> ridge_retrain(const RidgeBilevel& p, std::span<const double> w, double tol = 1e-13);
/// Central differences of the outer loss through retraining, step h per weight.
std::vector<double> ridge_retrain_hypergradient(const RidgeBilevel& p, double h = 1e-4);

}  // namespace autodo::oracles
