#pragma once

// Dense f64 tensors that record the operations applied to them so gradients
// (and gradients of gradients) can be computed by a reverse sweep.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace autodo {

/// Base error type for the whole library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Node;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::shared_ptr<Node> grad_fn;
  bool requires_grad = false;
};

/// Reference-semantics handle. Copies share storage and graph position, the
/// same way a framework tensor handle does. Values are never mutated once a
/// tensor participates in a recorded graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// A differentiation target: a graph leaf that records every op using it.
  static Tensor leaf(Shape shape, std::vector<double> data);
  static Tensor leaf_like(const Tensor& other);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<const double> values() const { return impl_->data; }
  const std::vector<double>& vec() const { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad || impl_->grad_fn != nullptr; }
  bool is_leaf() const { return impl_->grad_fn == nullptr; }
  const std::shared_ptr<Node>& grad_fn() const { return impl_->grad_fn; }
  const TensorImpl* id() const { return impl_.get(); }

  /// Same values, cut from the graph.
  Tensor detach() const;

  /// Internal: used by op implementations to attach a freshly built node.
  static Tensor make(Shape shape, std::vector<double> data, std::shared_ptr<Node> grad_fn);

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

/// One recorded operation. Holds its inputs (which keeps the upstream graph
/// alive) but never its output, so graphs are acyclic in memory as well.
class Node {
 public:
  explicit Node(std::vector<Tensor> inputs);
  virtual ~Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  virtual std::string_view name() const = 0;

  /// Gradients of the inputs given the gradient of the output. `needs[i]` is
  /// false when input i does not lead to any requested target; the returned
  /// entry may then be left undefined. When grad mode is on during this call
  /// the returned tensors are themselves recorded.
  virtual std::vector<Tensor> backward(const Tensor& grad_out, std::span<const bool> needs) = 0;

  /// False for ops whose backward is computed by a raw kernel; the engine
  /// refuses to differentiate through their gradients a second time.
  virtual bool twice_differentiable() const { return true; }

  const std::vector<Tensor>& inputs() const { return inputs_; }
  std::uint64_t sequence() const { return sequence_; }

 private:
  std::vector<Tensor> inputs_;
  std::uint64_t sequence_;
};

using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<Tensor>& inputs,
                                      std::span<const bool> needs)>;

/// Node whose backward is a closure over captured constants (never over the
/// op's own output).
class FunctionNode final : public Node {
 public:
  FunctionNode(std::string_view name, std::vector<Tensor> inputs, BackwardFn fn,
               bool twice_differentiable = true);
  std::string_view name() const override { return name_; }
  std::vector<Tensor> backward(const Tensor& grad_out, std::span<const bool> needs) override;
  bool twice_differentiable() const override { return twice_; }

 private:
  std::string_view name_;
  BackwardFn fn_;
  bool twice_;
};

/// Builds an op result, attaching a FunctionNode only when grad mode is on
/// and some input requires grad.
Tensor record(std::string_view name, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
              BackwardFn fn, bool twice_differentiable = true);

// Per-thread recording state. Graphs never cross threads.
struct GradMode {
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class GradModeGuard {
 public:
  explicit GradModeGuard(bool on) : prev_(GradMode::enabled()) { GradMode::set_enabled(on); }
  ~GradModeGuard() { GradMode::set_enabled(prev_); }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool prev_;
};

/// Strict mode: asking for the gradient of a tensor the loss does not reach
/// is an error instead of a zero result.
struct StrictMode {
  static bool enabled();
  static void set_enabled(bool on);
};

class StrictGuard {
 public:
  explicit StrictGuard(bool on = true) : prev_(StrictMode::enabled()) { StrictMode::set_enabled(on); }
  ~StrictGuard() { StrictMode::set_enabled(prev_); }
  StrictGuard(const StrictGuard&) = delete;
  StrictGuard& operator=(const StrictGuard&) = delete;

 private:
  bool prev_;
};

}  // namespace autodo
