#pragma once

// Hypergradients by implicit differentiation: dLv/dlambda =
// -(d2L/dlambda dtheta^T) H^{-1} dLv/dtheta, with H^{-1} v approximated by a
// truncated Neumann series, replaced by the identity (DARTS-style), or solved
// exactly for small models.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "autodo/augment.hpp"
#include "autodo/hypermodel.hpp"
#include "autodo/taskmodel.hpp"
#include "autodo/tensor.hpp"
#include "json.hpp"

namespace autodo::hg {

enum class Estimator { ift_neumann, darts_identity, exact_inverse };

std::string estimator_name(Estimator e);
/// Accepts ift / darts / exact as well as the full names.
Estimator parse_estimator(const std::string& name);

struct NeumannConfig {
  int terms = 5;         // T
  double alpha = 0.05;   // series step size
  Estimator estimator = Estimator::ift_neumann;
  double jitter = 1e-8;  // added to the diagonal by the exact solver
  std::int64_t exact_limit = 200;
};

using LinearOp = std::function<Tensor(const Tensor&)>;

struct IhvpResult {
  Tensor p;
  std::int64_t hvp_calls = 0;
  double last_term_norm = 0.0;  // size of the final series term, a truncation proxy
};

/// alpha * sum_{j=0..T} (I - alpha H)^j v0 using T products with H.
IhvpResult neumann_ihvp(const LinearOp& hvp, const Tensor& v0, double alpha, int terms);
/// Assembles H column by column and solves (H + jitter I) p = v0.
IhvpResult exact_ihvp(const LinearOp& hvp, const Tensor& v0, double jitter, std::int64_t limit);
/// Dispatches on cfg.estimator; darts returns v0 unchanged.
IhvpResult inverse_hvp(const LinearOp& hvp, const Tensor& v0, const NeumannConfig& cfg);
/// Same, recording the gradient of loss_fn(theta) once and reusing it for every product.
IhvpResult inverse_hvp(const std::function<Tensor(const Tensor&)>& loss_fn, const Tensor& theta, const Tensor& v0,
                       const NeumannConfig& cfg);

/// A bilevel problem at its current point. Both closures rebuild their graph
/// from `theta` (and `hypers` for the train loss) on each call.
struct ImplicitProblem {
  Tensor theta;
  std::vector<Tensor> hypers;
  std::function<Tensor()> valid_loss;
  std::function<Tensor()> train_loss;
};

struct HypergradEstimate {
  std::vector<Tensor> grads;  // aligned with ImplicitProblem::hypers
  Estimator estimator = Estimator::ift_neumann;
  std::vector<std::int64_t> rows;  // table rows touched, when known
  double v0_norm = 0.0, p_norm = 0.0, last_term_norm = 0.0;
  std::int64_t passes = 0;  // forward + backward passes spent
};

/// Replaces the inverse-Hessian step; receives the Hessian product and v0.
using IhvpOverride = std::function<Tensor(const LinearOp& hvp, const Tensor& v0)>;

HypergradEstimate implicit_hypergradient(const ImplicitProblem& problem, const NeumannConfig& cfg,
                                         const IhvpOverride& override_ihvp = {});

/// One train batch as seen by the objective.
struct TrainBatch {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::int64_t> rows;  // hypertable rows
  aug::AugNoise noise;
};

struct ValidBatch {
  Tensor images;
  std::vector<int> labels;
};

/// Weighted symmetric-KL loss of the (optionally augmented) batch.
Tensor batch_train_loss(const task::TaskModel& model, const Tensor& theta, const TrainBatch& batch,
                        const hyper::HyperTable& table, const hyper::BatchHypers& hypers,
                        const aug::AugConfig& aug_cfg);

/// Per-block hypergradients for one (train batch, validation batch) pair.
struct BlockGrads {
  Tensor lambda_m, lambda_b, lambda_w, lambda_s;  // undefined for frozen blocks
  HypergradEstimate estimate;
};
BlockGrads hypergrad_step(const task::TaskModel& model, const hyper::HyperTable& table, const TrainBatch& train,
                          const ValidBatch& valid, const aug::AugConfig& aug_cfg, const NeumannConfig& cfg);

nlohmann::json diagnostics_json(const HypergradEstimate& e, const NeumannConfig& cfg);

/// Empirical Fisher information against the negative mean log-likelihood
/// Hessian on logistic regression fitted to labels drawn from a logistic
/// model, plus the Fisher-kernel form of the reweighting hypergradient
/// against the implicit-gradient computation with the same metric.
struct FisherReport {
  std::int64_t samples = 0, params = 0;
  double frobenius_rel = 0.0;      // |I - H|_F / |H|_F
  double kernel_vs_implicit = 0.0; // max |kernel - implicit| / max |implicit|
  double kernel_vs_hessian = 0.0;  // same, implicit form using the true Hessian
};
FisherReport fisher_check(std::int64_t samples, std::int64_t features, std::uint64_t seed,
                          std::int64_t valid_samples = 1000);
nlohmann::json fisher_json(const FisherReport& r);

}  // namespace autodo::hg
