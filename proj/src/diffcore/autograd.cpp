#include "autodo/autograd.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "autodo/ops.hpp"

namespace autodo {

namespace {

const void* key_of(const Tensor& t) {
  return t.grad_fn() ? static_cast<const void*>(t.grad_fn().get()) : static_cast<const void*>(t.id());
}

// Stand-in for the gradient of an op whose backward is a raw kernel. Keeps the
// upstream connections so reachability stays correct, and refuses to be
// differentiated.
class BlockedNode final : public Node {
 public:
  BlockedNode(std::string_view op, std::vector<Tensor> inputs) : Node(std::move(inputs)), op_(op) {}
  std::string_view name() const override { return "blocked"; }
  std::vector<Tensor> backward(const Tensor&, std::span<const bool>) override {
    throw Error("op '" + std::string(op_) + "' is not twice differentiable; its gradient lies on this path");
  }

 private:
  std::string_view op_;
};

class Sweep {
 public:
  explicit Sweep(std::span<const Tensor> wrt) {
    for (const auto& t : wrt) targets_.insert(key_of(t));
  }

  // Iterative post-order marking of every node that leads to a target.
  bool reaches(const Tensor& root) {
    if (!root.defined() || !root.requires_grad()) return false;
    const void* rk = key_of(root);
    if (auto it = memo_.find(rk); it != memo_.end()) return it->second;
    struct Frame {
      Tensor t;
      std::size_t next;
      bool hit;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0, targets_.count(rk) > 0});
    while (!stack.empty()) {
      Frame& f = stack.back();
      const auto& node = f.t.grad_fn();
      if (!node || f.next >= node->inputs().size()) {
        memo_[key_of(f.t)] = f.hit;
        if (node && f.hit) order_.push_back(node.get());
        const bool hit = f.hit;
        stack.pop_back();
        if (!stack.empty()) stack.back().hit = stack.back().hit || hit;
        continue;
      }
      const Tensor& in = node->inputs()[f.next++];
      if (!in.defined() || !in.requires_grad()) continue;
      const void* k = key_of(in);
      if (auto it = memo_.find(k); it != memo_.end()) {
        f.hit = f.hit || it->second;
        continue;
      }
      if (!in.grad_fn()) {
        const bool hit = targets_.count(k) > 0;
        memo_[k] = hit;
        f.hit = f.hit || hit;
        continue;
      }
      stack.push_back({in, 0, targets_.count(k) > 0});
    }
    return memo_[rk];
  }

  bool known_reach(const Tensor& t) const {
    if (!t.defined() || !t.requires_grad()) return false;
    auto it = memo_.find(key_of(t));
    return it != memo_.end() && it->second;
  }

  std::vector<Node*>& order() { return order_; }

 private:
  std::unordered_set<const void*> targets_;
  std::unordered_map<const void*, bool> memo_;
  std::vector<Node*> order_;
};

Tensor accumulate(const Tensor& current, const Tensor& extra) {
  if (!current.defined()) return extra;
  return ops::add(current, extra);
}

}  // namespace

std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> wrt, GradOptions options) {
  if (!loss.defined() || loss.numel() != 1)
    throw Error("backward needs a scalar loss, got shape " + (loss.defined() ? to_string(loss.shape()) : "<undefined>"));
  const bool strict = options.strict.value_or(StrictMode::enabled());

  Sweep sweep(wrt);
  const bool any = sweep.reaches(loss);

  std::unordered_map<const void*, Tensor> grads;
  if (any) {
    auto& order = sweep.order();
    std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->sequence() > b->sequence(); });
    grads[key_of(loss)] = Tensor::full(loss.shape(), 1.0);

    GradModeGuard mode(options.create_graph);
    for (Node* node : order) {
      auto it = grads.find(node);
      if (it == grads.end()) continue;
      const Tensor g_out = it->second;
      const auto& inputs = node->inputs();
      auto needs = std::make_unique<bool[]>(inputs.size());
      for (std::size_t i = 0; i < inputs.size(); ++i) needs[i] = sweep.known_reach(inputs[i]);
      std::span<const bool> need_span(needs.get(), inputs.size());

      std::vector<Tensor> in_grads;
      if (options.create_graph && !node->twice_differentiable()) {
        {
          NoGradGuard off;
          in_grads = node->backward(g_out, need_span);
        }
        std::vector<Tensor> upstream(inputs.begin(), inputs.end());
        upstream.push_back(g_out);
        for (auto& gi : in_grads) {
          if (!gi.defined()) continue;
          gi = Tensor::make(gi.shape(), gi.vec(), std::make_shared<BlockedNode>(node->name(), upstream));
        }
      } else {
        in_grads = node->backward(g_out, need_span);
      }
      if (in_grads.size() != inputs.size()) throw Error("internal: backward arity mismatch in " + std::string(node->name()));
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!needs[i] || !in_grads[i].defined()) continue;
        if (in_grads[i].shape() != inputs[i].shape())
          throw Error("internal: gradient shape mismatch in " + std::string(node->name()));
        auto& slot = grads[key_of(inputs[i])];
        slot = accumulate(slot, in_grads[i]);
      }
    }
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const auto& t : wrt) {
    auto it = grads.find(key_of(t));
    if (it != grads.end() && it->second.defined()) {
      result.push_back(it->second);
    } else {
      if (strict) throw Error("tensor of shape " + to_string(t.shape()) + " is not on the recorded graph of the loss");
      result.push_back(Tensor::zeros(t.shape()));
    }
  }
  return result;
}

Tensor grad(const Tensor& loss, const Tensor& wrt, GradOptions options) {
  return grad(loss, std::span<const Tensor>(&wrt, 1), options)[0];
}

Tensor hvp_from_grad(const Tensor& param_grad, const Tensor& params, const Tensor& v) {
  if (v.shape() != params.shape())
    throw Error("hvp: direction " + to_string(v.shape()) + " does not match parameters " + to_string(params.shape()));
  if (!param_grad.requires_grad()) return Tensor::zeros(params.shape());
  GradModeGuard on(true);
  Tensor s = ops::dot(param_grad, v.detach());
  return grad(s, params, {.create_graph = false, .strict = false});
}

Tensor hvp(const Tensor& loss, const Tensor& params, const Tensor& v) {
  if (v.shape() != params.shape())
    throw Error("hvp: direction " + to_string(v.shape()) + " does not match parameters " + to_string(params.shape()));
  Tensor g = grad(loss, params, {.create_graph = true});
  return hvp_from_grad(g, params, v);
}

std::vector<Tensor> mixed_grad_from_grad(const Tensor& param_grad, std::span<const Tensor> hypers, const Tensor& v) {
  if (v.shape() != param_grad.shape())
    throw Error("mixed_grad: direction " + to_string(v.shape()) + " does not match parameters " +
                to_string(param_grad.shape()));
  if (!param_grad.requires_grad()) {
    if (StrictMode::enabled()) throw Error("mixed_grad: hyperparameters are not on the recorded graph");
    std::vector<Tensor> zeros;
    for (const auto& h : hypers) zeros.push_back(Tensor::zeros(h.shape()));
    return zeros;
  }
  GradModeGuard on(true);
  Tensor s = ops::dot(param_grad, v.detach());
  return grad(s, hypers, {.create_graph = false});
}

Tensor mixed_grad(const Tensor& loss, const Tensor& params, const Tensor& hypers, const Tensor& v) {
  Tensor g = grad(loss, params, {.create_graph = true});
  return mixed_grad_from_grad(g, std::span<const Tensor>(&hypers, 1), v)[0];
}

}  // namespace autodo
