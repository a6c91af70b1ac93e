#pragma once

// The bilevel training loop: an inner SGD sweep per epoch and, past the
// hyper-optimisation start epoch, an outer sweep that updates the per-point
// hyperparameters from hypergradients. Also evaluation, ablation suites and
// the metrics files they write.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "autodo/augment.hpp"
#include "autodo/dataforge.hpp"
#include "autodo/hypergrad.hpp"
#include "autodo/hypermodel.hpp"
#include "autodo/taskmodel.hpp"
#include "json.hpp"

namespace autodo::run {

/// baseline: plain cross-entropy, no augmentation, no hyperparameters.
/// shared_a / a / aw / aws: learned blocks as named. darts: aws with the
/// identity in place of the inverse Hessian.
enum class Arm { baseline, shared_a, a, aw, aws, darts };

std::string arm_name(Arm arm);
Arm parse_arm(const std::string& name);
hyper::Enabled arm_blocks(Arm arm);

struct SgdConfig {
  double lr = 0.05;
  double momentum = 0.9;
};

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct RunConfig {
  int epochs = 60;
  int ho_start = 30;  // E; the outer sweep runs in epochs E+1 .. epochs
  std::int64_t batch = 64;
  SgdConfig sgd;
  AdamConfig adam;
  hg::NeumannConfig neumann;
  data::DistortionSpec distortion;
  Arm arm = Arm::aws;
  double soft_label_alpha = 0.1;
  aug::AugConfig aug;
  task::ModelSpec model;
  std::uint64_t model_seed = 1, noise_seed = 1;
  /// Upper bound on outer batches per epoch; 0 sweeps every batch.
  std::int64_t outer_batch_limit = 0;
  bool record_wall_time = true;
  std::filesystem::path output_dir;  // empty: write nothing

  void validate() const;
};

struct PassCounters {
  std::int64_t inner = 0, outer = 0;
};

struct Evaluation {
  double error = 0.0;
  std::int64_t classes = 0;
  std::vector<std::int64_t> confusion;  // [true, predicted]
  std::vector<double> per_class_accuracy;
  double class_accuracy_std = 0.0;
};

struct MetricsRecord {
  int epoch = 0;
  double train_loss = 0.0, valid_loss = 0.0, test_error = 0.0;
  std::vector<double> per_class_accuracy;
  double class_accuracy_std = 0.0;
  PassCounters passes;  // cumulative
  std::optional<double> wall_seconds;
};

nlohmann::json to_json(const MetricsRecord& m);

/// Top-1 evaluation; confusion rows are true classes.
Evaluation evaluate(const task::TaskModel& model, const data::DatasetView& test, std::int64_t batch = 256);
Evaluation evaluate_predictions(std::span<const int> truth, std::span<const int> predicted, std::int64_t classes);

struct RunResult {
  std::vector<MetricsRecord> history;
  task::TaskModel model;
  hyper::HyperTable table;
  Evaluation final_eval;
  /// (inner + outer) / inner from the pass counters.
  double pass_ratio() const;
};

/// `hyper_valid` supervises the outer sweep; `test` is only evaluated.
RunResult run(const RunConfig& config, const data::DatasetView& train, const data::DatasetView& hyper_valid,
              const data::DatasetView& test);

struct ArmSummary {
  Arm arm;
  std::vector<double> errors;            // per fold
  std::vector<double> class_stds;        // per fold
  double mean_error = 0.0, std_error = 0.0, mean_class_std = 0.0;
};

struct SuiteConfig {
  RunConfig base;
  std::vector<Arm> arms;
  int folds = 4;
  double valid_fraction = 0.2;
  /// Supervise the outer sweep with the test set instead of the held-out split.
  bool valid_from_test = false;
  /// Train on the distorted train split plus the (clean) validation split.
  bool train_on_all = false;
  int workers = 1;
};

/// Every arm sees the same split, distortion and initial model in a fold.
std::vector<ArmSummary> run_ablation_suite(const SuiteConfig& suite, const data::DatasetView& pool,
                                           const data::DatasetView& test);

/// Runs the suite twice, with the held-out split and with the test set as the
/// outer-loop supervision, and reports the per-arm mean error gap.
nlohmann::json swap_valid_for_test(const SuiteConfig& suite, const data::DatasetView& pool,
                                   const data::DatasetView& test);

nlohmann::json summary_json(const std::vector<ArmSummary>& arms);
/// Mean / std table over every summary.json under `root`.
std::string report(const std::filesystem::path& root);

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double stddev(std::span<const double> v);

}  // namespace autodo::run
