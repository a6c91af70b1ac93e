#include "autodo/oracles.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace autodo::oracles {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

Eigen::Map<const Mat> as_mat(std::span<const double> a, std::int64_t rows, std::int64_t cols) {
  return Eigen::Map<const Mat>(a.data(), rows, cols);
}
Eigen::Map<const Vec> as_vec(std::span<const double> a) {
  return Eigen::Map<const Vec>(a.data(), static_cast<Eigen::Index>(a.size()));
}
std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

Mat ridge_system(const RidgeBilevel& p, std::span<const double> w) {
  auto x = as_mat(p.x, p.n, p.dim);
  Mat a = Mat::Identity(p.dim, p.dim) * p.gamma;
  for (std::int64_t i = 0; i < p.n; ++i) a += w[i] * x.row(i).transpose() * x.row(i) / static_cast<double>(p.n);
  return a;
}

Vec ridge_rhs(const RidgeBilevel& p, std::span<const double> w) {
  auto x = as_mat(p.x, p.n, p.dim);
  Vec b = Vec::Zero(p.dim);
  for (std::int64_t i = 0; i < p.n; ++i) b += w[i] * p.y[i] * x.row(i).transpose() / static_cast<double>(p.n);
  return b;
}

Vec ridge_valid_gradient(const RidgeBilevel& p, const Vec& theta) {
  auto xv = as_mat(p.xv, p.m, p.dim);
  Vec r = xv * theta - as_vec(p.yv);
  return xv.transpose() * r / static_cast<double>(p.m);
}

}  // namespace

std::vector<double> fd_gradient(const ScalarFn& f, std::span<const double> x, double h) {
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

std::vector<double> fd_jacobian(const VectorFn& f, std::span<const double> x, double h) {
  std::vector<double> probe(x.begin(), x.end());
  const std::size_t in = x.size();
  std::size_t out = 0;
  std::vector<double> jac;
  for (std::size_t j = 0; j < in; ++j) {
    auto eval = [&](double step) {
      probe[j] = x[j] + step;
      auto v = f(probe);
      probe[j] = x[j];
      return v;
    };
    auto p2 = eval(2 * h), p1 = eval(h), m1 = eval(-h), m2 = eval(-2 * h);
    if (j == 0) {
      out = p1.size();
      jac.assign(out * in, 0.0);
    }
    for (std::size_t r = 0; r < out; ++r)
      jac[r * in + j] = (-p2[r] + 8.0 * p1[r] - 8.0 * m1[r] + m2[r]) / (12.0 * h);
  }
  return jac;
}

double rel_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

double max_rel_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw std::invalid_argument("max_rel_error: size mismatch");
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, rel_error(a[i], b[i], floor));
  return e;
}

double max_abs_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_error: size mismatch");
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - b[i]));
  return e;
}

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

std::vector<double> solve_spd(std::span<const double> a, std::span<const double> b, std::int64_t n) {
  Mat m = as_mat(a, n, n);
  Vec x = m.ldlt().solve(as_vec(b));
  return to_std(x);
}

std::vector<double> mat_vec(std::span<const double> a, std::span<const double> x, std::int64_t rows,
                            std::int64_t cols) {
  Vec r = as_mat(a, rows, cols) * as_vec(x);
  return to_std(r);
}

double max_eigenvalue_sym(std::span<const double> a, std::int64_t n) {
  Eigen::SelfAdjointEigenSolver<Mat> es(Mat(as_mat(a, n, n)));
  return es.eigenvalues().maxCoeff();
}

double min_eigenvalue_sym(std::span<const double> a, std::int64_t n) {
  Eigen::SelfAdjointEigenSolver<Mat> es(Mat(as_mat(a, n, n)));
  return es.eigenvalues().minCoeff();
}

std::vector<double> random_spd(std::mt19937_64& rng, std::int64_t n, double lo, double hi) {
  std::normal_distribution<double> normal;
  Mat g(n, n);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ();
  Vec eig(n);
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::int64_t i = 0; i < n; ++i) eig[i] = u(rng);
  eig[0] = lo;
  eig[n - 1] = hi;
  Mat a = q * eig.asDiagonal() * q.transpose();
  Mat sym = (a + a.transpose()) / 2.0;
  return {sym.data(), sym.data() + sym.size()};
}

std::vector<double> dense_neumann(std::span<const double> h, std::span<const double> v, std::int64_t n,
                                  double alpha, int terms) {
  auto hm = as_mat(h, n, n);
  Vec term = as_vec(v);
  Vec acc = term;
  for (int j = 1; j <= terms; ++j) {
    term = term - alpha * (hm * term);
    acc += term;
  }
  return to_std(alpha * acc);
}

LogisticProblem make_logistic(std::mt19937_64& rng, std::int64_t n, std::int64_t features,
                              std::span<const double> true_theta) {
  LogisticProblem p;
  p.n = n;
  p.dim = features + 1;
  p.x.resize(static_cast<std::size_t>(n * p.dim));
  p.y.resize(static_cast<std::size_t>(n));
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> theta(true_theta.begin(), true_theta.end());
  if (theta.empty()) {
    theta.resize(static_cast<std::size_t>(p.dim));
    for (auto& t : theta) t = normal(rng);
  }
  for (std::int64_t i = 0; i < n; ++i) {
    double z = 0.0;
    for (std::int64_t j = 0; j < p.dim; ++j) {
      const double v = (j == p.dim - 1) ? 1.0 : normal(rng);
      p.x[i * p.dim + j] = v;
      z += v * theta[j];
    }
    p.y[i] = u(rng) < sigmoid(z) ? 1.0 : 0.0;
  }
  return p;
}

double logistic_nll(const LogisticProblem& p, std::span<const double> theta) {
  double s = 0.0;
  for (std::int64_t i = 0; i < p.n; ++i) {
    double z = 0.0;
    for (std::int64_t j = 0; j < p.dim; ++j) z += p.x[i * p.dim + j] * theta[j];
    // log(1 + e^z) - y z, computed stably.
    const double lse = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    s += lse - p.y[i] * z;
  }
  return s / static_cast<double>(p.n);
}

std::vector<double> logistic_gradient(const LogisticProblem& p, std::span<const double> theta) {
  std::vector<double> g(static_cast<std::size_t>(p.dim), 0.0);
  for (std::int64_t i = 0; i < p.n; ++i) {
    double z = 0.0;
    for (std::int64_t j = 0; j < p.dim; ++j) z += p.x[i * p.dim + j] * theta[j];
    const double r = sigmoid(z) - p.y[i];
    for (std::int64_t j = 0; j < p.dim; ++j) g[j] += r * p.x[i * p.dim + j] / static_cast<double>(p.n);
  }
  return g;
}

std::vector<double> logistic_hessian(const LogisticProblem& p, std::span<const double> theta) {
  std::vector<double> h(static_cast<std::size_t>(p.dim * p.dim), 0.0);
  for (std::int64_t i = 0; i < p.n; ++i) {
    double z = 0.0;
    for (std::int64_t j = 0; j < p.dim; ++j) z += p.x[i * p.dim + j] * theta[j];
    const double s = sigmoid(z);
    const double c = s * (1 - s) / static_cast<double>(p.n);
    for (std::int64_t a = 0; a < p.dim; ++a)
      for (std::int64_t b = 0; b < p.dim; ++b) h[a * p.dim + b] += c * p.x[i * p.dim + a] * p.x[i * p.dim + b];
  }
  return h;
}

std::vector<double> logistic_mle(const LogisticProblem& p, int iterations) {
  std::vector<double> theta(static_cast<std::size_t>(p.dim), 0.0);
  for (int it = 0; it < iterations; ++it) {
    auto g = logistic_gradient(p, theta);
    auto h = logistic_hessian(p, theta);
    auto step = solve_spd(h, g, p.dim);
    double norm = 0.0;
    for (std::int64_t j = 0; j < p.dim; ++j) {
      theta[j] -= step[j];
      norm += step[j] * step[j];
    }
    if (std::sqrt(norm) < 1e-14) break;
  }
  return theta;
}

RidgeBilevel make_ridge(std::mt19937_64& rng, std::int64_t n, std::int64_t m, std::int64_t dim, double gamma) {
  RidgeBilevel p;
  p.n = n;
  p.m = m;
  p.dim = dim;
  p.gamma = gamma;
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::vector<double> truth(static_cast<std::size_t>(dim));
  for (auto& t : truth) t = normal(rng);
  auto fill = [&](std::vector<double>& x, std::vector<double>& y, std::int64_t rows, double noise) {
    x.resize(static_cast<std::size_t>(rows * dim));
    y.resize(static_cast<std::size_t>(rows));
    for (std::int64_t i = 0; i < rows; ++i) {
      double z = 0.0;
      for (std::int64_t j = 0; j < dim; ++j) {
        x[i * dim + j] = normal(rng);
        z += x[i * dim + j] * truth[j];
      }
      y[i] = z + noise * normal(rng);
    }
  };
  fill(p.x, p.y, n, 0.5);
  fill(p.xv, p.yv, m, 0.1);
  p.w.resize(static_cast<std::size_t>(n));
  for (auto& w : p.w) w = u(rng);
  return p;
}

std::vector<double> ridge_solution(const RidgeBilevel& p, std::span<const double> w) {
  Mat a = ridge_system(p, w);
  Vec theta = a.ldlt().solve(ridge_rhs(p, w));
  return to_std(theta);
}

std::vector<double> ridge_analytic_hypergradient(const RidgeBilevel& p) {
  Mat a = ridge_system(p, p.w);
  auto solver = a.ldlt();
  Vec theta = solver.solve(ridge_rhs(p, p.w));
  Vec q = solver.solve(ridge_valid_gradient(p, theta));  // A^{-1} gv (A symmetric)
  auto x = as_mat(p.x, p.n, p.dim);
  std::vector<double> out(static_cast<std::size_t>(p.n));
  for (std::int64_t i = 0; i < p.n; ++i) {
    const double r = x.row(i).dot(theta) - p.y[i];
    out[i] = -q.dot(x.row(i).transpose()) * r / static_cast<double>(p.n);
  }
  return out;
}

double ridge_valid_loss(const RidgeBilevel& p, std::span<const double> theta) {
  auto xv = as_mat(p.xv, p.m, p.dim);
  Vec r = xv * as_vec(theta) - as_vec(p.yv);
  return r.squaredNorm() / (2.0 * static_cast<double>(p.m));
}

std::vector<double> ridge_retrain(const RidgeBilevel& p, std::span<const double> w, double tol) {
  Mat a = ridge_system(p, w);
  Vec b = ridge_rhs(p, w);
  Eigen::SelfAdjointEigenSolver<Mat> es(a);
  const double step = 1.0 / es.eigenvalues().maxCoeff();
  Vec theta = Vec::Zero(p.dim);
  for (int it = 0; it < 1000000; ++it) {
    Vec g = a * theta - b;
    if (g.norm() < tol) break;
    theta -= step * g;
  }
  return to_std(theta);
}

std::vector<double> ridge_retrain_hypergradient(const RidgeBilevel& p, double h) {
  std::vector<double> w = p.w;
  std::vector<double> out(static_cast<std::size_t>(p.n));
  for (std::int64_t i = 0; i < p.n; ++i) {
    w[i] = p.w[i] + h;
    const double up = ridge_valid_loss(p, ridge_retrain(p, w));
    w[i] = p.w[i] - h;
    const double down = ridge_valid_loss(p, ridge_retrain(p, w));
    w[i] = p.w[i];
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

}  // namespace autodo::oracles
