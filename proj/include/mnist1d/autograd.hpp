#pragma once
// Reverse-mode backward pass.
//
// Backward rules are written with the same tensor ops as the forward pass, so
// running `gradients(..., differentiable = true)` keeps grad mode on and the
// returned gradients are themselves graph nodes that can be differentiated
// again. Ops whose backward rule uses raw kernels are marked first-order only
// and refuse a differentiable pass.

#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mnist1d/ops.hpp"
#include "mnist1d/tensor.hpp"

namespace mnist1d {

/// Reverse-mode gradients of the scalar `loss` with respect to `params`.
///
/// Parameters that `loss` does not depend on get a zero-filled gradient.
/// Must be called with grad mode on.
/// Traversal stops at the requested parameters, so asking for the gradient
/// with respect to an intermediate tensor does not walk the graph behind it.
/// With `differentiable` set, backward rules run with grad mode on and the
/// results carry graph nodes of their own.
inline std::vector<Tensor> gradients(const Tensor& loss, std::span<const Tensor> params,
                                     bool differentiable = false) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("gradients: loss must be a defined scalar");
  if (!GradMode::enabled()) throw std::logic_error("gradients: called with grad mode off, no graph was recorded");

  std::unordered_set<const TensorImpl*> param_ids;
  for (const auto& p : params) param_ids.insert(p.id());

  // Post-order DFS, recording whether each tensor leads to a parameter.
  std::vector<Tensor> order;
  std::unordered_map<const TensorImpl*, bool> needed;
  {
    struct Frame {
      Tensor t;
      std::size_t next;
    };
    std::vector<Frame> stack;
    std::unordered_set<const TensorImpl*> visited;
    stack.push_back({loss, 0});
    visited.insert(loss.id());
    while (!stack.empty()) {
      auto& f = stack.back();
      const bool is_param = param_ids.count(f.t.id()) > 0;
      const auto& fn = f.t.grad_fn();
      if (!is_param && fn && f.next < fn->inputs.size()) {
        const Tensor child = fn->inputs[f.next++];
        if (child.requires_grad() && visited.insert(child.id()).second) stack.push_back({child, 0});
        continue;
      }
      bool need = is_param;
      if (!is_param && fn)
        for (const auto& in : fn->inputs)
          if (auto it = needed.find(in.id()); it != needed.end() && it->second) need = true;
      needed[f.t.id()] = need;
      order.push_back(std::move(f.t));
      stack.pop_back();
    }
  }

  GradModeGuard mode(differentiable);
  std::unordered_map<const TensorImpl*, Tensor> grads;
  grads.emplace(loss.id(), Tensor::full(loss.shape(), 1.0));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Tensor& t = *it;
    if (param_ids.count(t.id()) || !needed[t.id()]) continue;
    const auto& node = t.grad_fn();
    if (!node) continue;
    auto g = grads.find(t.id());
    if (g == grads.end()) continue;
    if (differentiable && !node->higher_order)
      throw std::logic_error(std::string("op '") + node->name +
                             "' does not support differentiable gradients");
    const Tensor gout = std::move(g->second);
    grads.erase(g);
    auto in_grads = node->backward(t, gout);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Tensor& in = node->inputs[i];
      if (!in.requires_grad() || !in_grads[i].defined() || !needed[in.id()]) continue;
      if (in_grads[i].shape() != in.shape())
        throw std::logic_error(std::string("op '") + node->name + "' produced gradient of shape " +
                               shape_str(in_grads[i].shape()) + " for input " + shape_str(in.shape()));
      auto [slot, inserted] = grads.try_emplace(in.id(), in_grads[i]);
      if (!inserted) slot->second = add(slot->second, in_grads[i]);
    }
  }

  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    auto g = grads.find(p.id());
    out.push_back(g != grads.end() ? g->second : Tensor::zeros(p.shape()));
  }
  return out;
}

}  // namespace mnist1d
