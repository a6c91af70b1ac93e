#pragma once

// The per-point hyperparameter table and the reweighting / soft-label
// sub-models built on it.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "autodo/tensor.hpp"

namespace autodo::hyper {

/// Which blocks are learned. A disabled block is frozen at its initial value.
struct Enabled {
  bool augment = true;
  bool weights = true;
  bool soft_labels = true;
  bool shared_augment = false;  // one augmentation row for every point
};

inline constexpr double kWeightScale = 1.44;
/// Initial gate logit: a 25% chance of applying each op.
double initial_gate_logit();

struct HyperTable {
  std::int64_t rows = 0, classes = 0, aug_ops = 0;
  Enabled enabled;
  std::vector<std::int64_t> global_index;  // row -> dataset identity
  std::vector<double> lambda_m, lambda_b;  // [aug_rows, aug_ops]
  std::vector<double> lambda_w;            // [rows]
  std::vector<double> lambda_s;            // [rows, classes]

  static HyperTable create(std::span<const std::int64_t> global_index, std::int64_t classes, std::int64_t aug_ops,
                           Enabled enabled);

  std::int64_t aug_rows() const { return enabled.shared_augment ? 1 : rows; }
  /// Hyperparameters per point: 2A + 1 + C.
  std::int64_t per_point_size() const { return 2 * aug_ops + 1 + classes; }
};

/// Softmax of this row equals (1 - alpha) onehot(label) + alpha / C.
std::vector<double> soft_label_init_row(int label, std::int64_t classes, double alpha);

/// Fills lambda_s from the hard labels with the smoothing target above.
void init_soft_labels(HyperTable& table, std::span<const int> labels, double alpha);

/// Rows of the table for one batch. Blocks that are learned come back as
/// fresh graph leaves (so their gradients can be requested); frozen blocks
/// are constants.
struct BatchHypers {
  std::vector<std::int64_t> rows;
  Tensor lambda_m, lambda_b;  // [B, A] or [1, A] when shared
  Tensor lambda_w;            // [B]
  Tensor lambda_s;            // [B, C]
  std::vector<Tensor> learned() const;
};
BatchHypers gather(const HyperTable& table, std::span<const std::int64_t> rows, bool as_leaves);

/// 1.44 * softplus(lambda_w).
Tensor weights(const Tensor& lambda_w);
/// Row-wise softmax of lambda_s.
Tensor soft_labels(const Tensor& lambda_s);

/// Per-point loss weights of a batch, honouring the enabled flags.
Tensor batch_weights(const HyperTable& table, const BatchHypers& batch);
/// Per-point targets of a batch: learned soft labels or one-hot hard labels.
Tensor batch_targets(const HyperTable& table, const BatchHypers& batch, std::span<const int> labels);

void save_table(const HyperTable& table, const std::filesystem::path& path);
HyperTable load_table(const std::filesystem::path& path);
/// Per-point weight, soft-label entropy and gate probabilities as JSON.
void write_table_summary(const HyperTable& table, const std::filesystem::path& path);

}  // namespace autodo::hyper
