#include "autodo/augment.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "autodo/ops.hpp"

namespace autodo::aug {

namespace {

constexpr double kDegree = std::numbers::pi / 180.0;

struct OpName {
  OpKind kind;
  std::string_view name;
};
constexpr OpName kNames[] = {{OpKind::rotate, "rotate"},         {OpKind::scale, "scale"},
                             {OpKind::translate_x, "translateX"}, {OpKind::translate_y, "translateY"},
                             {OpKind::shear_x, "shearX"},         {OpKind::shear_y, "shearY"}};

// Expands a [1, A] shared row to [B, A]; per-point rows pass through.
Tensor rows_for_batch(const Tensor& lambda, std::int64_t batch) {
  if (lambda.dim(0) == batch) return lambda;
  if (lambda.dim(0) != 1) throw Error("hyperparameter rows " + to_string(lambda.shape()) + " do not fit batch " +
                                      std::to_string(batch));
  return ops::broadcast_to(lambda, {batch, lambda.dim(1)});
}

}  // namespace

std::string_view op_name(OpKind kind) {
  for (const auto& n : kNames)
    if (n.kind == kind) return n.name;
  return "?";
}

OpKind parse_op_kind(std::string_view name) {
  for (const auto& n : kNames)
    if (n.name == name) return n.kind;
  throw Error("unknown augmentation op '" + std::string(name) + "'");
}

std::vector<AugOpSpec> default_ops() {
  return {{OpKind::rotate, 0.0, 30.0},     {OpKind::scale, 1.0, 0.5},  {OpKind::translate_x, 0.0, 0.45},
          {OpKind::translate_y, 0.0, 0.45}, {OpKind::shear_x, 0.0, 0.3}, {OpKind::shear_y, 0.0, 0.3}};
}

std::vector<AugOpSpec> parse_op_table(std::string_view text) {
  std::vector<AugOpSpec> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    std::string kind;
    if (!(fields >> kind)) continue;
    AugOpSpec spec{parse_op_kind(kind), 0.0, 0.0};
    if (!(fields >> spec.mu >> spec.rng)) throw Error("augmentation op line needs `kind mu rng`: " + line);
    if (!(spec.rng > 0.0)) throw Error("augmentation range must be positive: " + line);
    out.push_back(spec);
  }
  if (out.empty()) throw Error("augmentation op table is empty");
  return out;
}

AugNoise draw_noise(std::int64_t batch, std::int64_t ops, std::mt19937_64& rng) {
  AugNoise n{batch, ops, {}, {}, {}};
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto gumbel = [&] {
    double u = unit(rng);
    while (u <= 0.0) u = unit(rng);
    return -std::log(-std::log(u));
  };
  const auto count = static_cast<std::size_t>(batch * ops);
  n.z.reserve(count);
  n.gumbel_on.reserve(count);
  n.gumbel_off.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    n.z.push_back(gauss(rng));
    n.gumbel_on.push_back(gumbel());
    n.gumbel_off.push_back(gumbel());
  }
  return n;
}

Tensor sample_magnitudes(const Tensor& lambda_m, const AugNoise& noise, const AugConfig& cfg) {
  const auto b = noise.batch, a = noise.ops;
  if (lambda_m.dim(1) != a || static_cast<std::int64_t>(cfg.ops.size()) != a)
    throw Error("magnitude hyperparameters do not match the op table");
  std::vector<double> z(noise.z), range(static_cast<std::size_t>(b * a)), mean(range.size());
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t k = 0; k < a; ++k) {
      z[i * a + k] *= cfg.magnitude_norm / 10.0;
      range[i * a + k] = cfg.ops[k].rng;
      mean[i * a + k] = cfg.ops[k].mu;
    }
  Tensor spread = ops::sqrt(ops::sigmoid(rows_for_batch(lambda_m, b)));
  // offset in units of the op range, clamped to one range either side
  Tensor unit = ops::clamp(ops::mul(spread, Tensor::from({b, a}, std::move(z))), -1.0, 1.0);
  return ops::add(ops::mul(unit, Tensor::from({b, a}, std::move(range))), Tensor::from({b, a}, std::move(mean)));
}

Tensor sample_gates(const Tensor& lambda_b, const AugNoise& noise, const AugConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw Error("gate temperature must be positive");
  const auto b = noise.batch, a = noise.ops;
  std::vector<double> diff(static_cast<std::size_t>(b * a));
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = noise.gumbel_on[i] - noise.gumbel_off[i];
  Tensor logits = ops::add(rows_for_batch(lambda_b, b), Tensor::from({b, a}, std::move(diff)));
  Tensor relaxed = ops::sigmoid(ops::scale(logits, 1.0 / cfg.temperature));
  if (!cfg.straight_through) return relaxed;
  std::vector<double> shift(relaxed.vec());
  for (std::size_t i = 0; i < shift.size(); ++i) shift[i] = (logits[i] > 0.0 ? 1.0 : 0.0) - shift[i];
  return ops::add(relaxed, Tensor::from({b, a}, std::move(shift)));
}

std::vector<double> hard_gates(std::span<const double> lambda_b, const AugNoise& noise) {
  std::vector<double> out(static_cast<std::size_t>(noise.batch * noise.ops));
  const bool shared = static_cast<std::int64_t>(lambda_b.size()) == noise.ops;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double lam = shared ? lambda_b[i % noise.ops] : lambda_b[i];
    out[i] = lam + noise.gumbel_on[i] - noise.gumbel_off[i] > 0.0 ? 1.0 : 0.0;
  }
  return out;
}

Tensor op_affine(const Tensor& magnitudes, OpKind kind) {
  if (magnitudes.rank() != 1) throw Error("op_affine expects a [B] magnitude vector");
  const auto b = magnitudes.dim(0);
  std::vector<double> theta(static_cast<std::size_t>(b * 6)), slope(theta.size(), 0.0);
  for (std::int64_t i = 0; i < b; ++i) {
    const double m = magnitudes[i];
    if (!std::isfinite(m)) throw Error("non-finite augmentation magnitude for op " + std::string(op_name(kind)));
    double* t = &theta[i * 6];
    double* d = &slope[i * 6];
    t[0] = t[4] = 1.0;
    switch (kind) {
      case OpKind::rotate: {
        const double c = std::cos(m * kDegree), s = std::sin(m * kDegree);
        t[0] = c, t[1] = -s, t[3] = s, t[4] = c;
        d[0] = -s * kDegree, d[1] = -c * kDegree, d[3] = c * kDegree, d[4] = -s * kDegree;
        break;
      }
      case OpKind::scale:
        if (std::abs(m) < 1e-6) throw Error("scale magnitude too close to zero");
        t[0] = t[4] = 1.0 / m;
        d[0] = d[4] = -1.0 / (m * m);
        break;
      case OpKind::translate_x:
        t[2] = -2.0 * m, d[2] = -2.0;
        break;
      case OpKind::translate_y:
        t[5] = -2.0 * m, d[5] = -2.0;
        break;
      case OpKind::shear_x:
        t[1] = m, d[1] = 1.0;
        break;
      case OpKind::shear_y:
        t[3] = m, d[3] = 1.0;
        break;
    }
  }
  return record(
      "op_affine", {b, 2, 3}, std::move(theta), {magnitudes},
      [slope = std::move(slope), b](const Tensor& g, const std::vector<Tensor>&, std::span<const bool>) {
        std::vector<double> gm(static_cast<std::size_t>(b), 0.0);
        for (std::int64_t i = 0; i < b; ++i)
          for (int k = 0; k < 6; ++k) gm[i] += g[i * 6 + k] * slope[i * 6 + k];
        return std::vector<Tensor>{Tensor::from({b}, std::move(gm))};
      },
      /*twice_differentiable=*/false);
}

Tensor apply_chain(const Tensor& x, const Tensor& gates, const Tensor& magnitudes, const AugConfig& cfg) {
  if (x.rank() != 4) throw Error("apply_chain expects [B, C, H, W] images");
  const auto b = x.dim(0), h = x.dim(2), w = x.dim(3);
  const auto a = static_cast<std::int64_t>(cfg.ops.size());
  if (gates.shape() != Shape{b, a} || magnitudes.shape() != Shape{b, a})
    throw Error("gates and magnitudes must be [" + std::to_string(b) + ", " + std::to_string(a) + "]");
  Tensor out = x;
  for (std::int64_t k = 0; k < a; ++k) {
    Tensor theta = op_affine(ops::column(magnitudes, k), cfg.ops[k].kind);
    Tensor warped = ops::grid_sample(out, ops::affine_grid(theta, h, w));
    Tensor gate = ops::broadcast_to(ops::reshape(ops::column(gates, k), {b, 1, 1, 1}), out.shape());
    out = ops::add(out, ops::mul(gate, ops::sub(warped, out)));
  }
  return out;
}

}  // namespace autodo::aug
