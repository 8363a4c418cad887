#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "perseg/ops.hpp"

namespace perseg {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

namespace detail {

inline void fold_err(GradCheckResult& r, double analytic, double fd) {
  double abs_err = std::abs(analytic - fd);
  double denom = std::max({std::abs(analytic), std::abs(fd), 1e-3});
  r.max_abs_err = std::max(r.max_abs_err, abs_err);
  r.max_rel_err = std::max(r.max_rel_err, abs_err / denom);
}

}  // namespace detail

// Central finite differences against the tape gradients, double precision.
// fn builds the scalar loss from leaf Values created over `inputs`; it is
// re-invoked on perturbed copies, so it must be a pure function of them.
template <class Fn>
GradCheckResult grad_check_inputs(std::vector<Tensor<double>> inputs, Fn&& fn, double h = 1e-5) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tp;
    std::vector<Value> leaves;
    leaves.reserve(inputs.size());
    for (auto& t : inputs) leaves.push_back(tp.input(t));
    Value loss = fn(tp, leaves);
    tp.backward(loss);
    for (Value v : leaves) analytic.push_back(tp.grad(v));
  }
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tp;
    tp.grad_enabled = false;
    std::vector<Value> leaves;
    leaves.reserve(xs.size());
    for (const auto& t : xs) leaves.push_back(tp.constant(t));
    Value loss = fn(tp, leaves);
    return static_cast<double>(tp.val(loss).at(0));
  };
  GradCheckResult r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::int64_t i = 0; i < inputs[k].numel(); ++i) {
      double orig = inputs[k].at(i);
      inputs[k].at(i) = orig + h;
      double fp = eval(inputs);
      inputs[k].at(i) = orig - h;
      double fm = eval(inputs);
      inputs[k].at(i) = orig;
      detail::fold_err(r, analytic[k].at(i), (fp - fm) / (2.0 * h));
    }
  }
  return r;
}

// Same check over every value in a parameter store; fn reads params via
// tape.param(...) so perturbing Param::value reaches the rebuilt graph.
template <class Fn>
GradCheckResult grad_check_params(ParamStore<double>& store, Fn&& fn, double h = 1e-5) {
  std::vector<Tensor<double>> analytic;
  {
    store.zero_grads();
    Tape<double> tp;
    Value loss = fn(tp);
    tp.backward(loss);
    for (std::size_t p = 0; p < store.size(); ++p) {
      if (store[p].grad.empty()) store[p].grad = Tensor<double>::zeros(store[p].value.shape);
      analytic.push_back(store[p].grad);
    }
  }
  auto eval = [&]() {
    Tape<double> tp;
    tp.grad_enabled = false;
    Value loss = fn(tp);
    return static_cast<double>(tp.val(loss).at(0));
  };
  GradCheckResult r;
  for (std::size_t p = 0; p < store.size(); ++p) {
    Tensor<double>& v = store[p].value;
    for (std::int64_t i = 0; i < v.numel(); ++i) {
      double orig = v.at(i);
      v.at(i) = orig + h;
      double fp = eval();
      v.at(i) = orig - h;
      double fm = eval();
      v.at(i) = orig;
      detail::fold_err(r, analytic[p].at(i), (fp - fm) / (2.0 * h));
    }
  }
  return r;
}

}  // namespace perseg
