#pragma once

// Small classifiers over a flat parameter vector, and the train / validation
// losses.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "autodo/tensor.hpp"

namespace autodo::task {

enum class Kind { linear, mlp, tinycnn };

std::string kind_name(Kind kind);
Kind parse_kind(const std::string& name);

struct ModelSpec {
  Kind kind = Kind::tinycnn;
  std::int64_t channels = 1, height = 16, width = 16, classes = 10;
  std::vector<std::int64_t> hidden = {32};       // mlp layer widths
  std::vector<std::int64_t> conv_channels = {8, 16};  // tinycnn: two conv + pool stages
};

class TaskModel {
 public:
  /// He-style initialisation from `seed`; the linear model starts at zero.
  TaskModel(ModelSpec spec, std::uint64_t seed);
  TaskModel(ModelSpec spec, std::vector<double> params);

  const ModelSpec& spec() const { return spec_; }
  std::int64_t param_count() const { return static_cast<std::int64_t>(params_.size()); }
  const std::vector<double>& params() const { return params_; }
  std::vector<double>& params() { return params_; }

  /// A fresh graph leaf holding the current parameters.
  Tensor param_leaf() const { return Tensor::leaf({param_count()}, params_); }

  /// logits [B, C] for x [B, channels, height, width] with parameters theta.
  Tensor forward(const Tensor& theta, const Tensor& x) const;
  /// Forward with the stored parameters and no recording.
  Tensor predict(const Tensor& x) const;

  void save(const std::filesystem::path& path) const;
  static TaskModel load(const std::filesystem::path& path);

 private:
  ModelSpec spec_;
  std::vector<double> params_;
};

std::int64_t parameter_count(const ModelSpec& spec);

inline constexpr double kProbFloor = 1e-8;

/// mean_i w_i * [KL(y_i || p_i) + KL(p_i || y_i)], p = softmax(logits), with
/// probabilities floored at 1e-8 inside the logarithms.
Tensor train_loss(const Tensor& logits, const Tensor& targets, const Tensor& weights);

/// Mean cross-entropy against hard labels.
Tensor valid_loss(const Tensor& logits, std::span<const int> labels);

}  // namespace autodo::task
