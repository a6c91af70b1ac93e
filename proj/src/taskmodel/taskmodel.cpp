#include "autodo/taskmodel.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "autodo/ops.hpp"
#include "autodo/seeding.hpp"
#include "json.hpp"

namespace autodo::task {

namespace {

// One affine or conv layer inside the flat parameter vector.
struct Layer {
  Shape weight;
  std::int64_t fan_in;
  bool head;
};

std::vector<Layer> layout(const ModelSpec& s) {
  const auto pixels = s.channels * s.height * s.width;
  std::vector<Layer> layers;
  switch (s.kind) {
    case Kind::linear:
      layers.push_back({{pixels, s.classes}, pixels, true});
      break;
    case Kind::mlp: {
      auto in = pixels;
      for (auto h : s.hidden) {
        layers.push_back({{in, h}, in, false});
        in = h;
      }
      layers.push_back({{in, s.classes}, in, true});
      break;
    }
    case Kind::tinycnn: {
      if (s.conv_channels.size() != 2) throw Error("tinycnn needs exactly two conv widths");
      if (s.height % 4 != 0 || s.width % 4 != 0) throw Error("tinycnn needs image sides divisible by 4");
      const auto c1 = s.conv_channels[0], c2 = s.conv_channels[1];
      layers.push_back({{c1, s.channels, 3, 3}, s.channels * 9, false});
      layers.push_back({{c2, c1, 3, 3}, c1 * 9, false});
      const auto flat = c2 * (s.height / 4) * (s.width / 4);
      layers.push_back({{flat, s.classes}, flat, true});
      break;
    }
  }
  return layers;
}

std::int64_t bias_size(const Layer& l) { return l.weight.size() == 4 ? l.weight[0] : l.weight[1]; }

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  Shape b_shape(x.rank(), 1);
  b_shape[1] = bias.dim(0);
  return ops::add(x, ops::broadcast_to(ops::reshape(bias, b_shape), x.shape()));
}

}  // namespace

std::string kind_name(Kind kind) {
  switch (kind) {
    case Kind::linear: return "linear";
    case Kind::mlp: return "mlp";
    case Kind::tinycnn: return "tinycnn";
  }
  return "?";
}

Kind parse_kind(const std::string& name) {
  if (name == "linear") return Kind::linear;
  if (name == "mlp") return Kind::mlp;
  if (name == "tinycnn") return Kind::tinycnn;
  throw Error("unknown model kind '" + name + "'");
}

std::int64_t parameter_count(const ModelSpec& spec) {
  std::int64_t total = 0;
  for (const auto& l : layout(spec)) total += numel(l.weight) + bias_size(l);
  return total;
}

TaskModel::TaskModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  auto rng = make_rng({seed, 0x4d4f44454cULL});
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (const auto& l : layout(spec_)) {
    const double sd = spec_.kind == Kind::linear ? 0.0 : std::sqrt((l.head ? 1.0 : 2.0) / static_cast<double>(l.fan_in));
    for (std::int64_t i = 0; i < numel(l.weight); ++i) params_.push_back(sd * gauss(rng));
    params_.insert(params_.end(), static_cast<std::size_t>(bias_size(l)), 0.0);
  }
}

TaskModel::TaskModel(ModelSpec spec, std::vector<double> params) : spec_(std::move(spec)), params_(std::move(params)) {
  if (static_cast<std::int64_t>(params_.size()) != parameter_count(spec_))
    throw Error("parameter block has " + std::to_string(params_.size()) + " values, model needs " +
                std::to_string(parameter_count(spec_)));
}

Tensor TaskModel::forward(const Tensor& theta, const Tensor& x) const {
  if (theta.shape() != Shape{param_count()}) throw Error("parameter vector has the wrong shape " + to_string(theta.shape()));
  if (x.rank() != 4 || x.dim(1) != spec_.channels || x.dim(2) != spec_.height || x.dim(3) != spec_.width)
    throw Error("model expects [B, " + std::to_string(spec_.channels) + ", " + std::to_string(spec_.height) + ", " +
                std::to_string(spec_.width) + "] input, got " + to_string(x.shape()));
  const auto b = x.dim(0);
  const auto layers = layout(spec_);
  std::int64_t offset = 0;
  auto next = [&](const Layer& l) {
    Tensor w = ops::segment(theta, offset, l.weight);
    offset += numel(l.weight);
    Tensor bias = ops::segment(theta, offset, {bias_size(l)});
    offset += bias_size(l);
    return std::pair{w, bias};
  };

  Tensor h = x;
  std::size_t k = 0;
  if (spec_.kind == Kind::tinycnn) {
    for (; k < 2; ++k) {
      auto [w, bias] = next(layers[k]);
      h = ops::avg_pool2(ops::relu(add_bias(ops::conv2d(h, w), bias)));
    }
  }
  h = ops::reshape(h, {b, numel(h.shape()) / b});
  for (; k < layers.size(); ++k) {
    auto [w, bias] = next(layers[k]);
    h = add_bias(ops::matmul(h, w), bias);
    if (!layers[k].head) h = ops::relu(h);
  }
  return h;
}

Tensor TaskModel::predict(const Tensor& x) const {
  NoGradGuard off;
  return forward(Tensor::from({param_count()}, params_), x);
}

void TaskModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(params_.data()), static_cast<std::streamsize>(params_.size() * sizeof(double)));
  nlohmann::json desc = {{"kind", kind_name(spec_.kind)},
                         {"channels", spec_.channels},
                         {"height", spec_.height},
                         {"width", spec_.width},
                         {"classes", spec_.classes},
                         {"hidden", spec_.hidden},
                         {"conv_channels", spec_.conv_channels},
                         {"param_count", param_count()}};
  std::ofstream(path.string() + ".json") << desc.dump(1) << '\n';
}

TaskModel TaskModel::load(const std::filesystem::path& path) {
  std::ifstream desc_in(path.string() + ".json");
  if (!desc_in) throw Error("missing model descriptor " + path.string() + ".json");
  auto desc = nlohmann::json::parse(desc_in);
  ModelSpec spec;
  spec.kind = parse_kind(desc.at("kind").get<std::string>());
  spec.channels = desc.at("channels");
  spec.height = desc.at("height");
  spec.width = desc.at("width");
  spec.classes = desc.at("classes");
  spec.hidden = desc.at("hidden").get<std::vector<std::int64_t>>();
  spec.conv_channels = desc.at("conv_channels").get<std::vector<std::int64_t>>();
  std::vector<double> params(static_cast<std::size_t>(parameter_count(spec)));
  std::ifstream in(path, std::ios::binary);
  if (!in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(params.size() * sizeof(double))))
    throw Error("truncated parameter block " + path.string());
  return TaskModel(spec, std::move(params));
}

Tensor train_loss(const Tensor& logits, const Tensor& targets, const Tensor& weights) {
  if (logits.shape() != targets.shape()) throw Error("targets must match logits " + to_string(logits.shape()));
  if (weights.shape() != Shape{logits.dim(0)}) throw Error("one weight per row expected");
  const double floor = std::log(kProbFloor), inf = std::numeric_limits<double>::infinity();
  Tensor log_p = ops::clamp(ops::log_softmax(logits), floor, inf);
  Tensor log_y = ops::log(ops::clamp(targets, kProbFloor, inf));
  // KL(y||p) + KL(p||y) = sum_c (y - p)(log y - log p)
  Tensor per_point = ops::row_sum(ops::mul(ops::sub(targets, ops::softmax(logits)), ops::sub(log_y, log_p)));
  return ops::mean(ops::mul(weights, per_point));
}

Tensor valid_loss(const Tensor& logits, std::span<const int> labels) {
  const auto b = logits.dim(0), c = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != b) throw Error("one label per logit row expected");
  std::vector<double> onehot(static_cast<std::size_t>(b * c), 0.0);
  for (std::int64_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || labels[i] >= c) throw Error("label out of range");
    onehot[i * c + labels[i]] = 1.0;
  }
  return ops::neg(ops::mean(ops::row_sum(ops::mask(ops::log_softmax(logits), Tensor::from({b, c}, std::move(onehot))))));
}

}  // namespace autodo::task
