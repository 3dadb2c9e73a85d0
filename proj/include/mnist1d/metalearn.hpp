#pragma once
// Meta-learning by differentiating through unrolled inner training.
//
// The inner problem is frozen: initial MLP weights, the sequence of
// mini-batches and the validation slice are fixed for a given seed, so the
// meta-loss is a deterministic function of the meta-parameters (learning rate
// or activation parameters). Inner updates are plain SGD run with
// differentiable gradients; the outer loop is Adam.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnist1d/autograd.hpp"
#include "mnist1d/dataset.hpp"
#include "mnist1d/models.hpp"
#include "mnist1d/ops.hpp"
#include "mnist1d/prng.hpp"
#include "mnist1d/train.hpp"

namespace mnist1d {

struct MetaConfig {
  std::size_t inner_steps = 100;
  std::size_t outer_steps = 50;
  std::vector<std::size_t> hidden{100, 100};  // inner MLP
  double meta_lr = 1e-2;
  double init_lr = 0.1;  // starting lr (meta-lr) or fixed inner lr (activation)
  std::size_t batch_size = 128;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  std::size_t max_unrolled_steps = 100000;  // bound on inner_steps * outer_steps
  /// When > 0, meta-gradient entries are clipped to [-grad_clip, grad_clip]
  /// before the Adam update (unrolled losses are chaotic at large step sizes).
  double grad_clip = 0.0;

  void validate(std::size_t n_train) const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("MetaConfig: " + m); };
    if (inner_steps == 0 || outer_steps == 0) fail("inner_steps and outer_steps must be positive");
    if (inner_steps * outer_steps > max_unrolled_steps) fail("inner_steps * outer_steps exceeds max_unrolled_steps");
    if (!(meta_lr > 0.0) || !(init_lr > 0.0)) fail("meta_lr and init_lr must be positive");
    if (!(grad_clip >= 0.0)) fail("grad_clip must be non-negative");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) fail("val_fraction must be in (0,1)");
    const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n_train)));
    if (n_val == 0) fail("validation slice is empty");
    if (batch_size == 0 || batch_size > n_train - n_val) fail("batch_size must be in [1, training slice size]");
  }

  bool operator==(const MetaConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const MetaConfig& c) {
  j = nlohmann::json{{"inner_steps", c.inner_steps}, {"outer_steps", c.outer_steps},
                     {"hidden", c.hidden},           {"meta_lr", c.meta_lr},
                     {"init_lr", c.init_lr},         {"batch_size", c.batch_size},
                     {"val_fraction", c.val_fraction}, {"seed", c.seed},
                     {"max_unrolled_steps", c.max_unrolled_steps}, {"grad_clip", c.grad_clip}};
}

inline void from_json(const nlohmann::json& j, MetaConfig& c) {
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("inner_steps", c.inner_steps);
  get("outer_steps", c.outer_steps);
  get("hidden", c.hidden);
  get("meta_lr", c.meta_lr);
  get("init_lr", c.init_lr);
  get("batch_size", c.batch_size);
  get("val_fraction", c.val_fraction);
  get("seed", c.seed);
  get("max_unrolled_steps", c.max_unrolled_steps);
  get("grad_clip", c.grad_clip);
}

inline double clip_meta_grad(double g, double clip) { return clip > 0.0 ? std::clamp(g, -clip, clip) : g; }

/// Non-finite meta-loss or meta-gradient; carries the trajectory so far.
template <class Entry>
class MetaDiverged : public std::runtime_error {
 public:
  MetaDiverged(std::size_t outer_step, std::vector<Entry> so_far)
      : std::runtime_error("non-finite meta-gradient at outer step " + std::to_string(outer_step)),
        trajectory(std::move(so_far)) {}
  std::vector<Entry> trajectory;
};

/// Everything the inner loop sees, fixed up front.
struct InnerProblem {
  std::vector<Tensor> init;  // MLP parameters {w0, b0, ..., w_out, b_out}
  std::vector<Tensor> batch_x;
  std::vector<std::vector<int>> batch_y;
  Tensor val_x;
  std::vector<int> val_y;
};

/// Sub-streams of derive(seed, meta): split(1) initial weights, split(2)
/// batch order, split(3) activation parameters. The validation slice is the
/// last val_fraction of the training split.
inline InnerProblem make_inner_problem(const Dataset& d, const MetaConfig& cfg) {
  cfg.validate(d.n_train());
  const RngStream base = derive(cfg.seed, stream_id::kMeta);
  const std::size_t len = d.out_len;
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(d.n_train())));
  const std::size_t n_fit = d.n_train() - n_val;

  InnerProblem p;
  RngStream init_rng = base.split(1);
  Model m = build_mlp(init_rng, cfg.hidden, Activation::kRelu, len);
  p.init = m.params;

  RngStream batch_rng = base.split(2);
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  const std::span<const double> xs(d.x_train);
  for (std::size_t t = 0; t < cfg.inner_steps; ++t) {
    if (cursor + cfg.batch_size > order.size()) {
      order = batch_rng.permutation(n_fit);
      cursor = 0;
    }
    const std::span<const std::size_t> idx(order.data() + cursor, cfg.batch_size);
    cursor += cfg.batch_size;
    p.batch_x.push_back(detail::gather_rows(xs, len, idx));
    std::vector<int> y(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) y[i] = d.y_train[idx[i]];
    p.batch_y.push_back(std::move(y));
  }
  p.val_x = Tensor({n_val, len}, std::vector<double>(d.x_train.begin() + static_cast<std::ptrdiff_t>(n_fit * len),
                                                     d.x_train.end()));
  p.val_y.assign(d.y_train.begin() + static_cast<std::ptrdiff_t>(n_fit), d.y_train.end());
  return p;
}

/// Runs the inner SGD loop from p.init with learning rate `lr` (a scalar
/// tensor) and activation `act`, returning the validation cross-entropy.
/// With `differentiable` set the result is differentiable with respect to
/// anything `lr` or `act` depends on. Final weights go to `final_params` if given.
inline Tensor unrolled_loss(const InnerProblem& p, const Tensor& lr, const ActivationFn& act, bool differentiable,
                            std::vector<Tensor>* final_params = nullptr) {
  std::vector<Tensor> w;
  w.reserve(p.init.size());
  for (const auto& t : p.init) w.push_back(t.detach().set_requires_grad(true));
  for (std::size_t t = 0; t < p.batch_x.size(); ++t) {
    const auto ce = softmax_cross_entropy(mlp_forward(w, p.batch_x[t], act), p.batch_y[t]);
    const auto g = gradients(ce.loss, w, differentiable);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = w[i] - mul_scalar(g[i], lr);
  }
  Tensor loss = softmax_cross_entropy(mlp_forward(w, p.val_x, act), p.val_y).loss;
  if (final_params) *final_params = std::move(w);
  return loss;
}

// ---------------------------------------------------------------------------
// Learning rate

struct LrStep {
  std::size_t outer_step;
  double lr;
  double meta_loss;
  double meta_grad;  // d(meta_loss) / d(log lr)
};

struct MetaLrResult {
  double learned_lr;
  std::vector<LrStep> trajectory;
};

/// Meta-loss and its derivative with respect to log(lr).
inline std::pair<double, double> meta_loss_and_grad_log_lr(const InnerProblem& p, double log_lr,
                                                          const ActivationFn& act) {
  Tensor log_lr_t = Tensor::scalar(log_lr).set_requires_grad(true);
  const Tensor loss = unrolled_loss(p, exp(log_lr_t), act, /*differentiable=*/true);
  const auto g = gradients(loss, std::span<const Tensor>(&log_lr_t, 1));
  return {loss.item(), g[0].item()};
}

/// Adam on log(lr); one trajectory row per outer step, recording the lr the
/// step was evaluated at.
inline MetaLrResult meta_learn_lr(const Dataset& d, const MetaConfig& cfg) {
  const InnerProblem p = make_inner_problem(d, cfg);
  const ActivationFn act = standard_activation(Activation::kRelu);
  std::vector<Tensor> log_lr{Tensor::scalar(std::log(cfg.init_lr))};
  AdamState adam;
  MetaLrResult res;
  for (std::size_t s = 0; s < cfg.outer_steps; ++s) {
    const double cur = log_lr[0].item();
    const auto [loss, grad] = meta_loss_and_grad_log_lr(p, cur, act);
    if (!std::isfinite(loss) || !std::isfinite(grad)) throw MetaDiverged<LrStep>(s, res.trajectory);
    res.trajectory.push_back({s, std::exp(cur), loss, grad});
    adam_step(log_lr, std::vector<Tensor>{Tensor::scalar(clip_meta_grad(grad, cfg.grad_clip))}, adam, cfg.meta_lr);
  }
  res.learned_lr = std::exp(log_lr[0].item());
  return res;
}

// ---------------------------------------------------------------------------
// Activation

struct ActStep {
  std::size_t outer_step;
  double meta_loss;
};

struct ActivationReport {
  double elu_test_acc = 0, learned_test_acc = 0;
  double elu_val_loss = 0, learned_val_loss = 0;
  double diff() const { return learned_test_acc - elu_test_acc; }
};

struct MetaActResult {
  LearnedActivation theta;
  std::vector<ActStep> trajectory;
  ActivationReport report;
};

inline ActivationFn learned_activation_fn(std::span<const Tensor> theta) {
  std::vector<Tensor> th(theta.begin(), theta.end());
  return [th](const Tensor& x) { return apply_learned_activation(th, x); };
}

/// Trains the frozen inner problem with `act` and returns (val loss, test accuracy).
inline std::pair<double, double> inner_run_report(const InnerProblem& p, const Dataset& d, double lr,
                                                  const ActivationFn& act) {
  std::vector<Tensor> w;
  const double val = unrolled_loss(p, Tensor::scalar(lr), act, false, &w).item();
  NoGradGuard ng;
  const Tensor xt({d.n_test(), d.out_len}, d.x_test);
  return {val, accuracy(mlp_forward(w, xt, act), d.y_test)};
}

/// Adam on the activation parameters; the inner loop uses SGD at cfg.init_lr.
/// The report trains the same inner problem with ELU and with the learned
/// activation and compares test accuracy.
inline MetaActResult meta_learn_activation(const Dataset& d, const MetaConfig& cfg) {
  const InnerProblem p = make_inner_problem(d, cfg);
  RngStream theta_rng = derive(cfg.seed, stream_id::kMeta).split(3);
  MetaActResult res;
  res.theta = LearnedActivation::init(theta_rng);
  for (auto& t : res.theta.theta) t.set_requires_grad(true);
  const Tensor lr = Tensor::scalar(cfg.init_lr);
  AdamState adam;
  for (std::size_t s = 0; s < cfg.outer_steps; ++s) {
    const Tensor loss = unrolled_loss(p, lr, learned_activation_fn(res.theta.theta), true);
    auto g = gradients(loss, res.theta.theta);
    bool finite = std::isfinite(loss.item());
    for (const auto& gi : g)
      for (double v : gi.data()) finite = finite && std::isfinite(v);
    if (!finite) throw MetaDiverged<ActStep>(s, res.trajectory);
    res.trajectory.push_back({s, loss.item()});
    if (cfg.grad_clip > 0.0)
      for (auto& gi : g)
        for (auto& v : gi.mutable_data()) v = clip_meta_grad(v, cfg.grad_clip);
    adam_step(res.theta.theta, g, adam, cfg.meta_lr);
  }
  for (auto& t : res.theta.theta) t = t.detach();
  const auto elu = inner_run_report(p, d, cfg.init_lr, standard_activation(Activation::kElu));
  const auto learned = inner_run_report(p, d, cfg.init_lr, learned_activation_fn(res.theta.theta));
  res.report = {elu.second, learned.second, elu.first, learned.first};
  return res;
}

}  // namespace mnist1d
