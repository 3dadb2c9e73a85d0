#pragma once
// Shared oracles for the test suites: central finite differences and
// random tensors from a fixed stream.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "mnist1d/autograd.hpp"
#include "mnist1d/ops.hpp"
#include "mnist1d/prng.hpp"
#include "mnist1d/tensor.hpp"

namespace testutil {

using mnist1d::Shape;
using mnist1d::Tensor;

inline Tensor random_tensor(mnist1d::RngStream& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = lo + (hi - lo) * rng.next_uniform();
  return t;
}

/// ||a - b|| / max(||a||, ||b||, floor), Euclidean over all entries.
inline double rel_error(std::span<const double> a, std::span<const double> b, double floor = 1e-10) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Scalarizes f by a fixed random projection so every output entry matters.
inline double projected(const Fn& f, const std::vector<Tensor>& xs, const Tensor& proj) {
  mnist1d::NoGradGuard ng;
  const Tensor y = f(xs);
  double s = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += y.data()[i] * proj.data()[i];
  return s;
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of <f(xs), proj> over all inputs.
inline double grad_check(const Fn& f, std::vector<Tensor> xs, double h = 1e-6, std::uint64_t seed = 99) {
  mnist1d::RngStream rng = mnist1d::derive(seed, 0);
  for (auto& x : xs) x.set_requires_grad(true);
  Tensor y = f(xs);
  const Tensor proj = random_tensor(rng, y.shape());
  const Tensor loss = mnist1d::sum(mnist1d::mul(y, proj));
  const auto grads = mnist1d::gradients(loss, xs);
  double worst = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    std::vector<double> num(xs[k].numel());
    for (std::size_t i = 0; i < num.size(); ++i) {
      std::vector<Tensor> p = xs, m = xs;
      p[k] = xs[k].detach();
      m[k] = xs[k].detach();
      p[k].mutable_data()[i] += h;
      m[k].mutable_data()[i] -= h;
      num[i] = (projected(f, p, proj) - projected(f, m, proj)) / (2 * h);
    }
    worst = std::max(worst, rel_error(grads[k].data(), num));
  }
  return worst;
}

/// Second-order check: reverse-over-reverse Hessian-vector product of
/// L = <f(xs), proj> against central differences of the first-order gradient.
inline double hvp_check(const Fn& f, std::vector<Tensor> xs, double h = 1e-5, std::uint64_t seed = 7) {
  mnist1d::RngStream rng = mnist1d::derive(seed, 0);
  for (auto& x : xs) x.set_requires_grad(true);
  const Tensor proj = random_tensor(rng, f(xs).shape());
  std::vector<Tensor> vs;
  for (const auto& x : xs) vs.push_back(random_tensor(rng, x.shape()));

  auto grad_dot_v = [&](const std::vector<Tensor>& at, bool differentiable) {
    const Tensor loss = mnist1d::sum(mnist1d::mul(f(at), proj));
    const auto g = mnist1d::gradients(loss, at, differentiable);
    Tensor s = Tensor::scalar(0.0);
    for (std::size_t k = 0; k < at.size(); ++k) s = mnist1d::add(s, mnist1d::sum(mnist1d::mul(g[k], vs[k])));
    return s;
  };
  const Tensor gv = grad_dot_v(xs, true);
  const auto hv = mnist1d::gradients(gv, xs);

  double worst = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    std::vector<double> num(xs[k].numel());
    for (std::size_t i = 0; i < num.size(); ++i) {
      std::vector<Tensor> p, m;
      for (const auto& x : xs) {
        p.push_back(x.detach().set_requires_grad(true));
        m.push_back(x.detach().set_requires_grad(true));
      }
      p[k].mutable_data()[i] += h;
      m[k].mutable_data()[i] -= h;
      num[i] = (grad_dot_v(p, false).item() - grad_dot_v(m, false).item()) / (2 * h);
    }
    worst = std::max(worst, rel_error(hv[k].data(), num));
  }
  return worst;
}

}  // namespace testutil
