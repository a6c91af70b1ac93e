#pragma once

// Per-point differentiable geometric augmentation: Gaussian magnitudes,
// relaxed Bernoulli gates, and a fixed sequence of gated affine warps.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "autodo/tensor.hpp"

namespace autodo::aug {

enum class OpKind { rotate, scale, translate_x, translate_y, shear_x, shear_y };

std::string_view op_name(OpKind kind);
OpKind parse_op_kind(std::string_view name);

struct AugOpSpec {
  OpKind kind;
  double mu;   // prior mean
  double rng;  // half-width of the allowed magnitude range
};

/// rotate [0, 30] degrees, scale [1.0, 0.5], translate [0, 0.45] of the frame,
/// shear [0, 0.3], in this order.
std::vector<AugOpSpec> default_ops();

/// One op per non-empty line: `kind mu rng`. '#' starts a comment.
std::vector<AugOpSpec> parse_op_table(std::string_view text);

struct AugConfig {
  std::vector<AugOpSpec> ops = default_ops();
  double temperature = 1.0;
  bool straight_through = false;
  double magnitude_norm = 10.0;  // M; magnitudes scale by M / 10
};

/// Standard normal draws for magnitudes and the two Gumbel draws per gate,
/// each [B * A] row-major.
struct AugNoise {
  std::int64_t batch = 0, ops = 0;
  std::vector<double> z, gumbel_on, gumbel_off;
};
AugNoise draw_noise(std::int64_t batch, std::int64_t ops, std::mt19937_64& rng);

/// m = clamp(mu + rng * (M/10) * sqrt(sigmoid(lambda_m)) * z, mu - rng, mu + rng).
/// lambda_m is [B, A] or [1, A] (shared); output [B, A].
Tensor sample_magnitudes(const Tensor& lambda_m, const AugNoise& noise, const AugConfig& cfg);

/// sigmoid((lambda_b + g_on - g_off) / tau); straight-through rounds the
/// forward value and keeps the relaxed gradient.
Tensor sample_gates(const Tensor& lambda_b, const AugNoise& noise, const AugConfig& cfg);

/// Hard Bernoulli decisions with the same noise: lambda_b + g_on - g_off > 0.
std::vector<double> hard_gates(std::span<const double> lambda_b, const AugNoise& noise);

/// Affine sampling matrices [B, 2, 3] for one op given its magnitudes [B].
/// Differentiable once.
Tensor op_affine(const Tensor& magnitudes, OpKind kind);

/// x <- x + gate_a * (warp_a(x) - x) for each op in order.
Tensor apply_chain(const Tensor& x, const Tensor& gates, const Tensor& magnitudes, const AugConfig& cfg);

}  // namespace autodo::aug
