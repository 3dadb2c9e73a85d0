#include <gtest/gtest.h>

#include <cmath>

#include "mnist1d/metalearn.hpp"
#include "test_util.hpp"

using namespace mnist1d;

namespace {

const Dataset& data() {
  static const Dataset d = [] {
    GenConfig c;
    c.n_train = 300;
    c.n_test = 200;
    c.seed = 8;
    return generate(c);
  }();
  return d;
}

MetaConfig small(std::size_t inner_steps) {
  MetaConfig c;
  c.inner_steps = inner_steps;
  c.outer_steps = 5;
  c.hidden = {12};
  c.batch_size = 16;
  c.init_lr = 0.2;
  c.meta_lr = 0.1;
  c.seed = 4;
  return c;
}

double frozen_loss(const InnerProblem& p, double lr, const ActivationFn& act) {
  return unrolled_loss(p, Tensor::scalar(lr), act, false).item();
}

}  // namespace

TEST(InnerProblem, FrozenAndShaped) {
  const MetaConfig c = small(7);
  const InnerProblem a = make_inner_problem(data(), c), b = make_inner_problem(data(), c);
  ASSERT_EQ(a.batch_x.size(), 7u);
  EXPECT_EQ(a.batch_x[0].shape(), (Shape{16, 40}));
  EXPECT_EQ(a.val_x.dim(0), 30u);
  EXPECT_EQ(a.init.size(), 4u);
  for (std::size_t i = 0; i < a.init.size(); ++i) EXPECT_EQ(a.init[i].vec(), b.init[i].vec());
  for (std::size_t t = 0; t < 7; ++t) {
    EXPECT_EQ(a.batch_x[t].vec(), b.batch_x[t].vec());
    EXPECT_EQ(a.batch_y[t], b.batch_y[t]);
  }
  MetaConfig other = c;
  other.seed = 5;
  EXPECT_NE(make_inner_problem(data(), other).init[0].vec(), a.init[0].vec());
}

class MetaGradLogLr : public ::testing::TestWithParam<std::size_t> {};

TEST_P(MetaGradLogLr, MatchesFiniteDifferences) {
  const InnerProblem p = make_inner_problem(data(), small(GetParam()));
  const ActivationFn act = standard_activation(Activation::kRelu);
  for (double lr : {0.05, 0.3}) {
    const double x = std::log(lr), h = 1e-5;
    const auto [loss, grad] = meta_loss_and_grad_log_lr(p, x, act);
    EXPECT_DOUBLE_EQ(loss, frozen_loss(p, lr, act));
    const double num = (frozen_loss(p, std::exp(x + h), act) - frozen_loss(p, std::exp(x - h), act)) / (2 * h);
    EXPECT_LT(std::abs(grad - num), 1e-3 * std::max(1.0, std::abs(num))) << "lr " << lr << " grad " << grad
                                                                         << " fd " << num;
  }
}

INSTANTIATE_TEST_SUITE_P(InnerSteps, MetaGradLogLr, ::testing::Values(1u, 3u, 10u));

class MetaGradTheta : public ::testing::TestWithParam<std::size_t> {};

TEST_P(MetaGradTheta, MatchesFiniteDifferences) {
  const InnerProblem p = make_inner_problem(data(), small(GetParam()));
  RngStream r = derive(21, stream_id::kMeta);
  LearnedActivation a = LearnedActivation::init(r, 8);
  a.theta[4] = testutil::random_tensor(r, {8, 1}, -0.3, 0.3);
  for (auto& t : a.theta) t.set_requires_grad(true);
  const Tensor lr = Tensor::scalar(0.2);
  const Tensor loss = unrolled_loss(p, lr, learned_activation_fn(a.theta), true);
  const auto g = gradients(loss, a.theta);

  const std::pair<std::size_t, std::size_t> coords[] = {{0, 3}, {2, 17}, {4, 5}, {5, 0}};
  for (const auto& [ti, ci] : coords) {
    auto eval_at = [&](double delta) {
      std::vector<Tensor> th;
      for (const auto& t : a.theta) th.push_back(t.detach());
      th[ti].mutable_data()[ci] += delta;
      return frozen_loss(p, 0.2, learned_activation_fn(th));
    };
    const double h = 1e-5;
    const double num = (eval_at(h) - eval_at(-h)) / (2 * h);
    EXPECT_LT(std::abs(g[ti].at(ci) - num), 1e-3 * std::max(1.0, std::abs(num)))
        << "theta[" << ti << "][" << ci << "] grad " << g[ti].at(ci) << " fd " << num;
  }
}

INSTANTIATE_TEST_SUITE_P(InnerSteps, MetaGradTheta, ::testing::Values(1u, 3u, 10u));

TEST(MetaActivation, ZeroOutputLayerTrainsExactlyLikeElu) {
  const InnerProblem p = make_inner_problem(data(), small(5));
  RngStream r = derive(2, stream_id::kMeta);
  const LearnedActivation a = LearnedActivation::init(r, 10);
  std::vector<Tensor> w1, w2;
  const double l1 = unrolled_loss(p, Tensor::scalar(0.2), learned_activation_fn(a.theta), false, &w1).item();
  const double l2 = unrolled_loss(p, Tensor::scalar(0.2), standard_activation(Activation::kElu), false, &w2).item();
  EXPECT_EQ(l1, l2);
  for (std::size_t i = 0; i < w1.size(); ++i) EXPECT_EQ(w1[i].vec(), w2[i].vec());
}

TEST(MetaLr, DeterministicPositiveAndImproving) {
  MetaConfig c = small(10);
  c.init_lr = 0.01;
  c.outer_steps = 12;
  const auto a = meta_learn_lr(data(), c), b = meta_learn_lr(data(), c);
  ASSERT_EQ(a.trajectory.size(), 12u);
  EXPECT_EQ(a.learned_lr, b.learned_lr);
  for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
    EXPECT_EQ(a.trajectory[i].lr, b.trajectory[i].lr);
    EXPECT_EQ(a.trajectory[i].meta_loss, b.trajectory[i].meta_loss);
    EXPECT_GT(a.trajectory[i].lr, 0.0);
    EXPECT_EQ(a.trajectory[i].outer_step, i);
  }
  EXPECT_DOUBLE_EQ(a.trajectory[0].lr, 0.01);
  // Too small a start: the meta-gradient is negative and the lr grows.
  EXPECT_LT(a.trajectory[0].meta_grad, 0.0);
  EXPECT_GT(a.learned_lr, 0.01);
  EXPECT_LT(a.trajectory.back().meta_loss, a.trajectory.front().meta_loss);
}

TEST(MetaLr, FirstUpdateMovesLogLrByMetaLr) {
  // Adam's first step is meta_lr * g / (|g| + eps) whatever the gradient scale.
  MetaConfig c = small(3);
  c.outer_steps = 1;
  const auto r = meta_learn_lr(data(), c);
  const double g = r.trajectory[0].meta_grad;
  EXPECT_NEAR(std::log(r.learned_lr) - std::log(c.init_lr), -c.meta_lr * g / (std::abs(g) + 1e-8), 1e-12);
  c.grad_clip = std::abs(g) / 4;
  const auto clipped = meta_learn_lr(data(), c);
  EXPECT_EQ(clipped.trajectory[0].meta_grad, g);  // trajectory records the raw gradient
  EXPECT_NEAR(std::log(clipped.learned_lr) - std::log(c.init_lr),
              -c.meta_lr * std::copysign(c.grad_clip, g) / (c.grad_clip + 1e-8), 1e-12);
}

TEST(MetaLr, ClipHelper) {
  EXPECT_EQ(clip_meta_grad(5.0, 1.0), 1.0);
  EXPECT_EQ(clip_meta_grad(-5.0, 1.0), -1.0);
  EXPECT_EQ(clip_meta_grad(0.5, 1.0), 0.5);
  EXPECT_EQ(clip_meta_grad(-5.0, 0.0), -5.0);
}

TEST(MetaLr, DivergenceCarriesTrajectory) {
  MetaConfig c = small(3);
  c.init_lr = 1e300;
  try {
    meta_learn_lr(data(), c);
    FAIL() << "expected divergence";
  } catch (const MetaDiverged<LrStep>& e) {
    EXPECT_TRUE(e.trajectory.empty());
  }
}

TEST(MetaActivation, ShortRunReportsBothActivations) {
  MetaConfig c = small(5);
  c.outer_steps = 3;
  const auto r = meta_learn_activation(data(), c);
  ASSERT_EQ(r.trajectory.size(), 3u);
  EXPECT_EQ(r.theta.theta.size(), 6u);
  EXPECT_GT(r.report.elu_test_acc, 0.0);
  EXPECT_LE(r.report.learned_test_acc, 1.0);
  EXPECT_DOUBLE_EQ(r.report.diff(), r.report.learned_test_acc - r.report.elu_test_acc);
  // Step 0 evaluates the untouched (ELU-equivalent) activation.
  const InnerProblem p = make_inner_problem(data(), c);
  EXPECT_DOUBLE_EQ(r.trajectory[0].meta_loss, frozen_loss(p, c.init_lr, standard_activation(Activation::kElu)));
}

TEST(MetaConfig, InvalidRejected) {
  auto bad = [](auto mutate) {
    MetaConfig c = small(3);
    mutate(c);
    EXPECT_THROW(make_inner_problem(data(), c), std::invalid_argument);
  };
  bad([](MetaConfig& c) { c.inner_steps = 0; });
  bad([](MetaConfig& c) { c.init_lr = 0; });
  bad([](MetaConfig& c) { c.val_fraction = 0; });
  bad([](MetaConfig& c) { c.batch_size = 1000; });
  bad([](MetaConfig& c) { c.grad_clip = -1; });
  bad([](MetaConfig& c) {
    c.inner_steps = 1000;
    c.outer_steps = 1000;
  });
}
