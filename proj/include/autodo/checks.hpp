#pragma once

// Oracle checks shared by the `check` subcommand and the acceptance binary.
// Each check compares the library against an independent reference and
// reports a measured value next to its threshold.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "autodo/tensor.hpp"
#include "json.hpp"

namespace autodo::checks {

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Contracts fn's output with fixed random weights and returns the worst
/// relative error of the reverse-mode gradient of each input against central
/// differences.
double max_gradient_error(const TensorFn& fn, const std::vector<Tensor>& inputs, std::uint64_t seed,
                          double step = 1e-5);

CheckResult gradient_correctness();
CheckResult second_order_correctness();
CheckResult neumann_convergence();
CheckResult bilevel_oracle();
CheckResult estimator_relationship();
/// `samples` defaults to the acceptance size.
CheckResult fisher_diagnostic(std::int64_t samples = 50000);
CheckResult soft_label_init();
CheckResult complexity_accounting();
CheckResult distortion_exactness();

/// Checks 1-9. Without `full` the Fisher check uses 5k samples.
std::vector<CheckResult> run_all(bool full);
nlohmann::json to_json(const std::vector<CheckResult>& results);

}  // namespace autodo::checks
