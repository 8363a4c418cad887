#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "perseg/rng.hpp"
#include "perseg/tensor.hpp"

namespace perseg {

// Trainable weight. Lives outside any tape; gradients are flushed into it
// after backward() and consumed by the optimizer.
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;      // lazily sized
  Tensor<T> momentum;  // lazily sized

  void accumulate(const Tensor<T>& g) {
    if (grad.empty()) grad = Tensor<T>::zeros(value.shape);
    for (std::int64_t i = 0; i < g.numel(); ++i) grad.at(i) += g.at(i);
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.v.begin(), grad.v.end(), T(0));
  }
};

template <class T>
class ParamStore {
 public:
  Param<T>& create(std::string name, Tensor<T> init) {
    check(find(name) == nullptr, "duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Param<T>>());
    Param<T>& p = *params_.back();
    p.name = std::move(name);
    p.value = std::move(init);
    return p;
  }

  Param<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  const Param<T>* find(const std::string& name) const {
    return const_cast<ParamStore*>(this)->find(name);
  }
  Param<T>& at(const std::string& name) {
    Param<T>* p = find(name);
    check(p != nullptr, "unknown parameter: " + name);
    return *p;
  }

  std::size_t size() const { return params_.size(); }
  Param<T>& operator[](std::size_t i) { return *params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::int64_t total_values() const {
    std::int64_t n = 0;
    for (auto& p : params_) n += p->value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Param<T>>> params_;
};

struct Value {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Node order is a topological order by construction, so
// backward() is a single reverse sweep. A tape lives for one step and is
// then discarded.
template <class T>
class Tape {
 public:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;  // allocated on first touch
    std::function<void(Tape&, Value)> back;
    Param<T>* bound = nullptr;
    bool needs_grad = false;
  };

  bool grad_enabled = true;

  Value constant(Tensor<T> t) { return add_node(std::move(t), false, nullptr, nullptr); }

  // Leaf that participates in backward; used for finite-difference probes of
  // non-parameter inputs.
  Value input(Tensor<T> t) { return add_node(std::move(t), grad_enabled, nullptr, nullptr); }

  Value param(Param<T>& p) { return add_node(p.value, grad_enabled, nullptr, &p); }

  Value make(Tensor<T> val, bool needs, std::function<void(Tape&, Value)> back) {
    return add_node(std::move(val), grad_enabled && needs, std::move(back), nullptr);
  }

  Tensor<T>& val(Value v) { return node(v).val; }
  const Tensor<T>& val(Value v) const { return nodes_[static_cast<std::size_t>(v.id)].val; }
  bool needs_grad(Value v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  Tensor<T>& grad(Value v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.val.shape);
    return n.grad;
  }
  bool has_grad(Value v) const { return !nodes_[static_cast<std::size_t>(v.id)].grad.empty(); }

  void accumulate(Value v, const Tensor<T>& g) {
    if (!needs_grad(v)) return;
    Tensor<T>& dst = grad(v);
    check(dst.shape == g.shape, "gradient shape mismatch");
    for (std::int64_t i = 0; i < g.numel(); ++i) dst.at(i) += g.at(i);
  }

  void backward(Value loss) {
    Node& top = node(loss);
    check(top.val.numel() == 1, "backward: loss must be scalar");
    check(top.needs_grad, "backward: loss does not require gradients");
    grad(loss).at(0) = T(1);
    for (std::int32_t id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.back) n.back(*this, Value{id});
      if (n.bound) n.bound->accumulate(n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  Node& node(Value v) {
    check(v.valid() && static_cast<std::size_t>(v.id) < nodes_.size(), "invalid tape value");
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  Value add_node(Tensor<T> val, bool needs, std::function<void(Tape&, Value)> back,
                 Param<T>* bound) {
    Node n;
    n.val = std::move(val);
    n.bound = bound;
    n.needs_grad = needs || (bound != nullptr && grad_enabled);
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Value{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  // Deque keeps references from val()/grad() stable while new nodes are
  // appended mid-expression.
  std::deque<Node> nodes_;
};

// He-style fan-in init for conv and affine weights.
template <class T>
Tensor<T> he_init(std::vector<std::int64_t> shape, std::int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  double sd = std::sqrt(2.0 / static_cast<double>(fan_in > 0 ? fan_in : 1));
  for (auto& x : t.v) x = static_cast<T>(rng.normal() * sd);
  return t;
}

}  // namespace perseg
