#pragma once

#include <optional>
#include <span>
#include <vector>

#include "autodo/tensor.hpp"

namespace autodo {

struct GradOptions {
  /// Record the backward sweep so the returned gradients can be differentiated.
  bool create_graph = false;
  /// Overrides the thread's StrictMode when set.
  std::optional<bool> strict;
};

/// Reverse sweep from a scalar `loss`. Only nodes lying on a path from `loss`
/// to some tensor in `wrt` are visited, each exactly once in reverse recording
/// order. Unreached targets get zeros (or an Error in strict mode).
std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> wrt, GradOptions options = {});
Tensor grad(const Tensor& loss, const Tensor& wrt, GradOptions options = {});

/// Alias matching the classic name; identical to grad().
inline std::vector<Tensor> backward(const Tensor& loss, std::span<const Tensor> wrt, GradOptions options = {}) {
  return grad(loss, wrt, options);
}

/// Hessian-vector product H v with H the Hessian of `loss` wrt `params`,
/// computed as the gradient of <grad, v> without forming H.
Tensor hvp(const Tensor& loss, const Tensor& params, const Tensor& v);

/// H v given an already recorded gradient `param_grad` (from grad(...,
/// create_graph=true)). Lets several products share one first-order sweep.
Tensor hvp_from_grad(const Tensor& param_grad, const Tensor& params, const Tensor& v);

/// (d^2 loss / d hypers d params^T) v, i.e. the gradient wrt `hypers` of
/// <d loss / d params, v>.
Tensor mixed_grad(const Tensor& loss, const Tensor& params, const Tensor& hypers, const Tensor& v);

/// Same for several hyper tensors at once, sharing one sweep.
std::vector<Tensor> mixed_grad_from_grad(const Tensor& param_grad, std::span<const Tensor> hypers,
                                         const Tensor& v);

}  // namespace autodo
