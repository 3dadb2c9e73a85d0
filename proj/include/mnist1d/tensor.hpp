#pragma once
// Dense double-precision tensors and the reverse-mode graph.
//
// Every op (see ops.hpp) produces a Tensor. When grad mode is on and any input
// requires a gradient, the output gets a Node holding its inputs and a backward
// rule. The backward pass itself lives in autograd.hpp.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mnist1d {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

enum class Mode { kTrain, kEval };

class Tensor;
struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

/// Receives the op's output and the gradient flowing into it; returns one
/// gradient per input (an undefined Tensor where no gradient is needed).
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& out, const Tensor& grad)>;

struct Node {
  const char* name;
  std::vector<Tensor> inputs;
  BackwardFn backward;
  bool higher_order;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<TensorImpl>()) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(data.size()) + " values");
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double v) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

  bool defined() const noexcept { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  /// Writable view. Only meant for leaf tensors (optimizer updates, init).
  std::span<double> mutable_data() { return impl_->data; }
  const std::vector<double>& vec() const { return impl_->data; }

  double item() const {
    if (numel() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }
  double at(std::size_t i) const { return impl_->data.at(i); }

  bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }
  const std::shared_ptr<Node>& grad_fn() const { return impl_->grad_fn; }
  void attach_grad_fn(std::shared_ptr<Node> node) {
    impl_->grad_fn = std::move(node);
    impl_->requires_grad = true;
  }

  /// Copy of the values with no graph attached.
  Tensor detach() const { return Tensor(impl_->shape, impl_->data); }

  const TensorImpl* id() const noexcept { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Thread-local switch controlling whether ops record graph nodes.
class GradMode {
 public:
  static bool enabled() noexcept { return flag(); }
  static void set(bool on) noexcept { flag() = on; }

 private:
  static bool& flag() noexcept {
    thread_local bool on = true;
    return on;
  }
};

class GradModeGuard {
 public:
  explicit GradModeGuard(bool on) : prev_(GradMode::enabled()) { GradMode::set(on); }
  ~GradModeGuard() { GradMode::set(prev_); }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool prev_;
};

struct NoGradGuard : GradModeGuard {
  NoGradGuard() : GradModeGuard(false) {}
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> data, const char* name,
                          std::vector<Tensor> inputs, BackwardFn backward,
                          bool higher_order = true) {
  Tensor out(std::move(shape), std::move(data));
  if (!GradMode::enabled()) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.attach_grad_fn(
      std::make_shared<Node>(Node{name, std::move(inputs), std::move(backward), higher_order}));
  return out;
}

}  // namespace detail

}  // namespace mnist1d
