#pragma once
// Optimizers, evaluation and the supervised training loop.
//
// Streams: batches come from derive(seed, batch), dropout masks from
// derive(seed, dropout). The model arrives already initialized, so a run is a
// pure function of (model, dataset, TrainConfig).

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnist1d/autograd.hpp"
#include "mnist1d/dataset.hpp"
#include "mnist1d/models.hpp"
#include "mnist1d/ops.hpp"
#include "mnist1d/prng.hpp"

namespace mnist1d {

/// Non-finite loss or gradient. `step` is the optimizer step being taken (0-based).
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, const std::string& what)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// ---------------------------------------------------------------------------
// Optimizers

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

namespace detail {
inline void check_aligned(std::span<const Tensor> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("optimizer: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].shape() != grads[i].shape())
      throw std::invalid_argument("optimizer: shape mismatch " + shape_str(params[i].shape()) + " vs " +
                                  shape_str(grads[i].shape()));
}
}  // namespace detail

/// Bias-corrected Adam, in place. Throws std::domain_error on a non-finite gradient
/// before touching any parameter.
inline void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& s, double lr) {
  detail::check_aligned(params, grads);
  for (const auto& g : grads)
    for (double x : g.data())
      if (!std::isfinite(x)) throw std::domain_error("non-finite gradient");
  if (s.m.empty()) {
    for (const auto& p : params) {
      s.m.emplace_back(p.numel(), 0.0);
      s.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (s.m.size() != params.size()) throw std::invalid_argument("adam_step: state does not match parameters");
  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto g = grads[i].data();
    auto& m = s.m[i];
    auto& v = s.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * g[j];
      v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + s.eps);
    }
  }
}

/// p <- p - lr * g, in place.
inline void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double lr) {
  detail::check_aligned(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto g = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
  }
}

// ---------------------------------------------------------------------------
// Evaluation

/// Row-wise argmax; ties resolve to the lowest index.
inline std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  auto d = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (d[i * k + j] > d[i * k + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

inline double accuracy(const Tensor& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  if (pred.size() != labels.size()) throw std::invalid_argument("accuracy: label count mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Eval-mode accuracy and mean cross-entropy over (xs, ys), in chunks.
inline EvalResult evaluate(Model& model, std::span<const double> xs, std::span<const int> ys, std::size_t len,
                           std::size_t chunk = 1000) {
  if (ys.empty()) throw std::invalid_argument("evaluate: empty set");
  NoGradGuard ng;
  RngStream unused(0, 0);
  std::size_t hit = 0;
  double loss = 0.0;
  for (std::size_t lo = 0; lo < ys.size(); lo += chunk) {
    const std::size_t n = std::min(chunk, ys.size() - lo);
    Tensor x({n, len}, std::vector<double>(xs.begin() + static_cast<std::ptrdiff_t>(lo * len),
                                           xs.begin() + static_cast<std::ptrdiff_t>((lo + n) * len)));
    const Tensor logits = model.forward(x, Mode::kEval, unused);
    const auto labels = ys.subspan(lo, n);
    hit += static_cast<std::size_t>(std::llround(accuracy(logits, labels) * static_cast<double>(n)));
    loss += softmax_cross_entropy(logits, labels).loss.item() * static_cast<double>(n);
  }
  return {static_cast<double>(hit) / static_cast<double>(ys.size()), loss / static_cast<double>(ys.size())};
}

// ---------------------------------------------------------------------------
// Config and records

struct TrainConfig {
  std::size_t steps = 10000;
  std::size_t batch_size = 128;
  double lr = 1e-2;
  std::size_t eval_every = 50;
  bool early_stop = true;  // keep the best-by-selection-accuracy checkpoint
  std::uint64_t seed = 0;
  /// When > 0, the last fraction of the training split becomes a validation
  /// set used for checkpoint selection instead of the test set.
  double validation_fraction = 0.0;

  void validate(std::size_t n_train) const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
    if (steps == 0) fail("steps must be positive");
    if (eval_every == 0) fail("eval_every must be positive");
    if (batch_size == 0) fail("batch_size must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) fail("validation_fraction must be in [0,1)");
    const auto fit = n_train - validation_size(n_train);
    if (batch_size > fit) fail("batch_size exceeds the number of training examples");
  }

  std::size_t validation_size(std::size_t n_train) const {
    return static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(n_train)));
  }

  bool operator==(const TrainConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"steps", c.steps},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"eval_every", c.eval_every},
                     {"early_stop", c.early_stop},
                     {"seed", c.seed},
                     {"validation_fraction", c.validation_fraction}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("steps", c.steps);
  get("batch_size", c.batch_size);
  get("lr", c.lr);
  get("eval_every", c.eval_every);
  get("early_stop", c.early_stop);
  get("seed", c.seed);
  get("validation_fraction", c.validation_fraction);
}

struct CurvePoint {
  std::size_t step = 0;
  double train_acc = 0, test_acc = 0, train_loss = 0, test_loss = 0;
  std::optional<double> val_acc;

  bool operator==(const CurvePoint&) const = default;
};

struct RunRecord {
  std::string arch;
  nlohmann::json config;  // {"train": TrainConfig, "hyper": Hyper, "dataset": GenConfig}
  std::vector<CurvePoint> curve;
  std::size_t best_step = 0;
  double best_test_acc = 0;
  double final_test_acc = 0;
  /// Step and test accuracy of the retained checkpoint (equal to best_* unless
  /// selecting on a validation split or early_stop is off).
  std::size_t selected_step = 0;
  double selected_test_acc = 0;
  double wall_time = 0;  // seconds; only serialized on request

  /// Summary fields recomputed from `curve`.
  void finalize(bool early_stop) {
    best_step = curve.front().step;
    best_test_acc = curve.front().test_acc;
    for (const auto& p : curve)
      if (p.test_acc > best_test_acc) best_test_acc = p.test_acc, best_step = p.step;
    final_test_acc = curve.back().test_acc;
    if (!early_stop) {
      selected_step = curve.back().step;
      selected_test_acc = final_test_acc;
      return;
    }
    const bool by_val = curve.front().val_acc.has_value();
    const CurvePoint* sel = &curve.front();
    for (const auto& p : curve) {
      const double a = by_val ? *p.val_acc : p.test_acc;
      const double b = by_val ? *sel->val_acc : sel->test_acc;
      if (a > b) sel = &p;
    }
    selected_step = sel->step;
    selected_test_acc = sel->test_acc;
  }

  /// The record a run with `steps = budget` would have produced.
  RunRecord truncated(std::size_t budget) const {
    RunRecord r = *this;
    r.curve.clear();
    for (const auto& p : curve)
      if (p.step <= budget) r.curve.push_back(p);
    if (r.curve.empty() || r.curve.back().step != budget)
      throw std::invalid_argument("truncated: budget " + std::to_string(budget) + " is not an evaluated step");
    r.config["train"]["steps"] = budget;
    r.finalize(r.config["train"].value("early_stop", true));
    r.wall_time = 0;
    return r;
  }

  nlohmann::json to_json(bool with_wall_time = false) const {
    nlohmann::json c = nlohmann::json::array();
    for (const auto& p : curve) {
      nlohmann::json e = {{"step", p.step},
                          {"train_acc", p.train_acc},
                          {"test_acc", p.test_acc},
                          {"train_loss", p.train_loss},
                          {"test_loss", p.test_loss}};
      if (p.val_acc) e["val_acc"] = *p.val_acc;
      c.push_back(std::move(e));
    }
    nlohmann::json j = {{"arch", arch},
                        {"config", config},
                        {"curve", std::move(c)},
                        {"best_step", best_step},
                        {"best_test_acc", best_test_acc},
                        {"final_test_acc", final_test_acc},
                        {"selected_step", selected_step},
                        {"selected_test_acc", selected_test_acc},
                        {"version", std::string(kGeneratorVersion)}};
    if (with_wall_time) j["wall_time"] = wall_time;
    return j;
  }

  static RunRecord from_json(const nlohmann::json& j) {
    RunRecord r;
    r.arch = j.at("arch").get<std::string>();
    r.config = j.at("config");
    for (const auto& e : j.at("curve")) {
      CurvePoint p;
      p.step = e.at("step").get<std::size_t>();
      p.train_acc = e.at("train_acc").get<double>();
      p.test_acc = e.at("test_acc").get<double>();
      p.train_loss = e.at("train_loss").get<double>();
      p.test_loss = e.at("test_loss").get<double>();
      if (e.contains("val_acc")) p.val_acc = e.at("val_acc").get<double>();
      r.curve.push_back(p);
    }
    r.best_step = j.at("best_step").get<std::size_t>();
    r.best_test_acc = j.at("best_test_acc").get<double>();
    r.final_test_acc = j.at("final_test_acc").get<double>();
    r.selected_step = j.at("selected_step").get<std::size_t>();
    r.selected_test_acc = j.at("selected_test_acc").get<double>();
    r.wall_time = j.value("wall_time", 0.0);
    return r;
  }

  /// step,train_acc,test_acc,train_loss with 17 significant digits.
  std::string curve_csv() const {
    std::string s = "step,train_acc,test_acc,train_loss\n";
    char buf[128];
    for (const auto& p : curve) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", p.step, p.train_acc, p.test_acc, p.train_loss);
      s += buf;
    }
    return s;
  }
};

struct TrainResult {
  RunRecord record;
  Model checkpoint;  // retained model (best by selection when early_stop, else final)
  /// For each requested budget b < steps: the checkpoint a run with steps = b would retain.
  std::map<std::size_t, Model> budget_checkpoints;
};

namespace detail {
inline Tensor gather_rows(std::span<const double> xs, std::size_t len, std::span<const std::size_t> idx) {
  std::vector<double> out(idx.size() * len);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(idx[r] * len), len,
                out.begin() + static_cast<std::ptrdiff_t>(r * len));
  return Tensor({idx.size(), len}, std::move(out));
}
}  // namespace detail

/// Adam on softmax cross-entropy with epoch-shuffled mini-batches (the final
/// partial batch of each epoch is dropped). Evaluates at step 0, every
/// eval_every steps and at the last step. `budgets` lists shorter run lengths
/// (multiples of eval_every) whose retained checkpoints are also kept; since
/// nothing in the loop depends on the total step count, a run of b steps is an
/// exact prefix of this one.
inline TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg,
                         std::span<const std::size_t> budgets = {}) {
  cfg.validate(data.n_train());
  for (auto b : budgets)
    if (b == 0 || b > cfg.steps || b % cfg.eval_every != 0)
      throw std::invalid_argument("train: budget " + std::to_string(b) +
                                  " must be a positive multiple of eval_every not above steps");
  const std::size_t len = data.out_len;
  const std::size_t n_val = cfg.validation_size(data.n_train());
  const std::size_t n_fit = data.n_train() - n_val;
  const std::span<const double> xtr(data.x_train);
  const std::span<const int> ytr(data.y_train);
  const auto x_fit = xtr.first(n_fit * len);
  const auto y_fit = ytr.first(n_fit);

  RngStream batch_rng = derive(cfg.seed, stream_id::kBatch);
  RngStream drop_rng = derive(cfg.seed, stream_id::kDropout);
  AdamState adam;

  TrainResult res;
  RunRecord& rec = res.record;
  rec.arch = std::string(arch_name(model.arch));
  rec.config = {{"train", cfg}, {"hyper", model.hyper}, {"dataset", data.config}};

  double best_sel = -1.0;
  std::map<std::size_t, double> budget_best;
  auto record_point = [&](std::size_t step) {
    CurvePoint p;
    p.step = step;
    const auto tr = evaluate(model, x_fit, y_fit, len);
    const auto te = evaluate(model, data.x_test, data.y_test, len);
    p.train_acc = tr.accuracy;
    p.train_loss = tr.loss;
    p.test_acc = te.accuracy;
    p.test_loss = te.loss;
    if (n_val > 0) p.val_acc = evaluate(model, xtr.subspan(n_fit * len), ytr.subspan(n_fit), len).accuracy;
    rec.curve.push_back(p);
    const double sel = p.val_acc.value_or(p.test_acc);
    if (cfg.early_stop && sel > best_sel) {
      best_sel = sel;
      res.checkpoint = model.clone();
    }
    for (auto b : budgets) {
      if (b == cfg.steps || step > b) continue;
      if (!cfg.early_stop) {
        if (step == b) res.budget_checkpoints.insert_or_assign(b, model.clone());
        continue;
      }
      auto [it, fresh] = budget_best.try_emplace(b, -1.0);
      if (sel > it->second) {
        it->second = sel;
        res.budget_checkpoints.insert_or_assign(b, model.clone());
      }
    }
  };

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  const std::vector<Tensor>& params = model.params;
  record_point(0);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor + cfg.batch_size > order.size()) {
      order = batch_rng.permutation(n_fit);
      cursor = 0;
    }
    const std::span<const std::size_t> idx(order.data() + cursor, cfg.batch_size);
    cursor += cfg.batch_size;
    const Tensor x = detail::gather_rows(x_fit, len, idx);
    std::vector<int> y(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) y[i] = y_fit[idx[i]];

    const auto ce = softmax_cross_entropy(model.forward(x, Mode::kTrain, drop_rng), y);
    if (!std::isfinite(ce.loss.item())) throw TrainingDiverged(step, "non-finite loss");
    const auto grads = gradients(ce.loss, params);
    try {
      adam_step(model.params, grads, adam, cfg.lr);
    } catch (const std::domain_error& e) {
      throw TrainingDiverged(step, e.what());
    }
    const std::size_t done = step + 1;
    if (done % cfg.eval_every == 0 || done == cfg.steps) record_point(done);
  }
  rec.finalize(cfg.early_stop);
  if (!cfg.early_stop) res.checkpoint = model.clone();
  return res;
}

}  // namespace mnist1d
