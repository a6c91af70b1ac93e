#include "autodo/tensor.hpp"

#include <sstream>

namespace autodo {

namespace {
thread_local bool t_grad_enabled = true;
thread_local bool t_strict = false;
thread_local std::uint64_t t_sequence = 0;
}  // namespace

bool GradMode::enabled() { return t_grad_enabled; }
void GradMode::set_enabled(bool on) { t_grad_enabled = on; }
bool StrictMode::enabled() { return t_strict; }
void StrictMode::set_enabled(bool on) { t_strict = on; }

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw Error("negative dimension in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::make(Shape shape, std::vector<double> data, std::shared_ptr<Node> grad_fn) {
  if (autodo::numel(shape) != static_cast<std::int64_t>(data.size()))
    throw Error("shape " + to_string(shape) + " does not match " + std::to_string(data.size()) + " values");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->grad_fn = std::move(grad_fn);
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) { return make(std::move(shape), std::move(data), nullptr); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto n = static_cast<std::size_t>(autodo::numel(shape));
  return make(std::move(shape), std::vector<double>(n, value), nullptr);
}

Tensor Tensor::scalar(double value) { return make({}, {value}, nullptr); }

Tensor Tensor::leaf(Shape shape, std::vector<double> data) {
  Tensor t = make(std::move(shape), std::move(data), nullptr);
  t.impl_->requires_grad = true;
  return t;
}

Tensor Tensor::leaf_like(const Tensor& other) { return leaf(other.shape(), other.vec()); }

double Tensor::item() const {
  if (impl_->data.size() != 1) throw Error("item() on tensor of shape " + to_string(impl_->shape));
  return impl_->data[0];
}

Tensor Tensor::detach() const { return make(impl_->shape, impl_->data, nullptr); }

Node::Node(std::vector<Tensor> inputs) : inputs_(std::move(inputs)), sequence_(++t_sequence) {}

FunctionNode::FunctionNode(std::string_view name, std::vector<Tensor> inputs, BackwardFn fn,
                           bool twice_differentiable)
    : Node(std::move(inputs)), name_(name), fn_(std::move(fn)), twice_(twice_differentiable) {}

std::vector<Tensor> FunctionNode::backward(const Tensor& grad_out, std::span<const bool> needs) {
  return fn_(grad_out, inputs(), needs);
}

Tensor record(std::string_view name, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
              BackwardFn fn, bool twice_differentiable) {
  bool track = false;
  if (GradMode::enabled()) {
    for (const auto& in : inputs) track = track || (in.defined() && in.requires_grad());
  }
  std::shared_ptr<Node> node;
  if (track) node = std::make_shared<FunctionNode>(name, std::move(inputs), std::move(fn), twice_differentiable);
  return Tensor::make(std::move(shape), std::move(data), std::move(node));
}

}  // namespace autodo
